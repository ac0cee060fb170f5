use super::resample::decimate;
use super::{MODEL_RATE, WINDOW_SAMPLES, WINDOW_SECONDS};
use crate::error::{Error, Result};
use parking_lot::Mutex;
use std::sync::Arc;

/// A chunk of mono PCM in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcmChunk {
    pub rate: u32,
    pub samples: Vec<f32>,
}

impl PcmChunk {
    pub fn new(rate: u32, samples: Vec<f32>) -> Self {
        PcmChunk { rate, samples }
    }
}

/// Fixed 15 s FIFO of source-rate samples.
#[derive(Clone, Debug)]
pub struct AudioRing {
    source_rate: u32,
    samples: Vec<f32>,
    write_head: usize,
    written: u64,
}

impl AudioRing {
    /// The source rate must be a positive multiple of the 4 kHz model rate.
    pub fn new(source_rate: u32) -> Result<Self> {
        if source_rate == 0 || source_rate % MODEL_RATE != 0 {
            return Err(Error::Config(format!(
                "source rate {source_rate} Hz is not a multiple of {MODEL_RATE} Hz"
            )));
        }
        Ok(AudioRing {
            source_rate,
            samples: vec![0.0; WINDOW_SECONDS * source_rate as usize],
            write_head: 0,
            written: 0,
        })
    }

    pub fn source_rate(&self) -> u32 {
        self.source_rate
    }

    pub fn capacity(&self) -> usize {
        self.samples.len()
    }

    /// Total samples pushed since creation.
    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn push_frame(&mut self, frame: &PcmChunk) -> Result<()> {
        if frame.rate != self.source_rate {
            return Err(Error::Validation(format!(
                "chunk rate {} Hz does not match ring rate {} Hz",
                frame.rate, self.source_rate
            )));
        }
        if let Some(i) = frame.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite sample at offset {i}")));
        }
        let cap = self.samples.len();
        // Only the newest `cap` samples of an oversized chunk can survive.
        let tail = &frame.samples[frame.samples.len().saturating_sub(cap)..];
        let skipped = frame.samples.len() - tail.len();
        self.write_head = (self.write_head + skipped) % cap;
        for &s in tail {
            self.samples[self.write_head] = s;
            self.write_head = (self.write_head + 1) % cap;
        }
        self.written += frame.samples.len() as u64;
        Ok(())
    }

    /// The last 15 s in chronological order at the source rate; never-written
    /// positions read as zero.
    pub fn snapshot(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.samples.len());
        out.extend_from_slice(&self.samples[self.write_head..]);
        out.extend_from_slice(&self.samples[..self.write_head]);
        out
    }

    /// The last 15 s decimated to 4 kHz.
    pub fn read_window(&self) -> AudioWindow {
        let raw = self.snapshot();
        let factor = (self.source_rate / MODEL_RATE) as usize;
        AudioWindow::from_samples(decimate(&raw, factor)).expect("decimated ring has window length")
    }
}

/// Exactly 15 s of mono audio at 4 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWindow {
    samples: Vec<f32>,
}

impl AudioWindow {
    pub fn from_samples(samples: Vec<f32>) -> Result<Self> {
        if samples.len() != WINDOW_SAMPLES {
            return Err(Error::Input(format!(
                "window must hold {WINDOW_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        Ok(AudioWindow { samples })
    }

    pub fn silent() -> Self {
        AudioWindow {
            samples: vec![0.0; WINDOW_SAMPLES],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn duration(&self) -> f64 {
        WINDOW_SECONDS as f64
    }

    pub fn scaled(&self, k: f32) -> Self {
        AudioWindow {
            samples: self.samples.iter().map(|v| v * k).collect(),
        }
    }
}

/// Ring shared between one audio producer and the tick loop. A read holds
/// the lock for the whole copy, so it always sees a consistent snapshot.
#[derive(Clone, Debug)]
pub struct SharedRing {
    inner: Arc<Mutex<AudioRing>>,
}

impl SharedRing {
    pub fn new(ring: AudioRing) -> Self {
        SharedRing {
            inner: Arc::new(Mutex::new(ring)),
        }
    }

    pub fn push_frame(&self, frame: &PcmChunk) -> Result<()> {
        self.inner.lock().push_frame(frame)
    }

    pub fn snapshot(&self) -> AudioRing {
        self.inner.lock().clone()
    }

    pub fn read_window(&self) -> AudioWindow {
        let ring = self.snapshot();
        ring.read_window()
    }
}
