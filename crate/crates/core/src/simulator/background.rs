//! Continuous background track: a sound segment, then silence of the same
//! length, then the next randomly chosen segment.

use super::BackgroundTag;
use super::FOREGROUND_RMS;
use crate::audio::pcm::read_wav;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;

pub const BACKGROUND_CATEGORIES: usize = 22;

const SEGMENT_SECONDS: (f64, f64) = (1.0, 4.0);

#[derive(Clone, Copy, Debug, PartialEq)]
enum Signature {
    /// Band-limited noise around a centre frequency.
    Band { centre: f64, q: f64 },
    /// Harmonic drone.
    Drone { f0: f64, partials: usize },
    /// Noise band gated at a fixed rate.
    Pulsed { centre: f64, rate: f64 },
}

fn signature(category: usize) -> Signature {
    let c = category as f64;
    match category % 3 {
        0 => Signature::Band { centre: 90.0 * 1.22f64.powf(c), q: 1.5 + c / 8.0 },
        1 => Signature::Drone { f0: 55.0 + 23.0 * c, partials: 3 + category % 5 },
        _ => Signature::Pulsed { centre: 250.0 + 70.0 * c, rate: 2.0 + c / 3.0 },
    }
}

pub fn category_names() -> Vec<String> {
    (0..BACKGROUND_CATEGORIES)
        .map(|c| match signature(c) {
            Signature::Band { .. } => format!("band-{c:02}"),
            Signature::Drone { .. } => format!("drone-{c:02}"),
            Signature::Pulsed { .. } => format!("pulsed-{c:02}"),
        })
        .collect()
}

/// RBJ band-pass biquad with unit peak gain.
struct BandPass {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl BandPass {
    fn new(centre: f64, q: f64, rate: f64) -> Self {
        let w = TAU * centre.min(0.45 * rate) / rate;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn run(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

fn render_signature(sig: Signature, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    match sig {
        Signature::Band { centre, q } => {
            let mut f = BandPass::new(centre, q, rate);
            for v in &mut out {
                *v = f.run(rng.gen_range(-1.0..1.0));
            }
        }
        Signature::Drone { f0, partials } => {
            let phases: Vec<f64> = (0..partials).map(|_| rng.gen_range(0.0..TAU)).collect();
            for (i, v) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                *v = phases
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| (*k + 1) as f64 * f0 < 0.45 * rate)
                    .map(|(k, p)| ((k + 1) as f64 * TAU * f0 * t + p).sin() / (k + 1) as f64)
                    .sum();
            }
        }
        Signature::Pulsed { centre, rate: gate } => {
            let mut f = BandPass::new(centre, 4.0, rate);
            for (i, v) in out.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let on = (TAU * gate * t).sin() > 0.3;
                let x = f.run(rng.gen_range(-1.0..1.0));
                *v = if on { x } else { 0.0 };
            }
        }
    }
    out
}

fn normalize(mut v: Vec<f64>) -> Vec<f32> {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
    v.into_iter().map(|x| x as f32).collect()
}

/// Linear-interpolation resampling for background clips.
fn resample_linear(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let n = ((x.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let step = from as f64 / to as f64;
    (0..n)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            let frac = (pos - j as f64) as f32;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum BackgroundSource {
    Synthetic,
    /// One unit-RMS clip per category, already at the scheduler rate.
    Corpus { names: Vec<String>, clips: Vec<Arc<Vec<f32>>> },
}

impl BackgroundSource {
    pub fn synthetic() -> Self {
        BackgroundSource::Synthetic
    }

    /// Reads `dir/<category>/*.wav`, keeping the longest clip per category.
    pub fn from_corpus(dir: &Path, rate: u32) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::Config(format!("corpus dir {}: {e}", dir.display())))?;
        let mut cats: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        cats.sort();
        let mut names = Vec::new();
        let mut clips = Vec::new();
        for cat in cats {
            let mut wavs: Vec<_> = std::fs::read_dir(&cat)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            wavs.sort();
            let mut best: Option<(u32, Vec<f32>)> = None;
            for w in wavs {
                let (sr, samples) = read_wav(&w)?;
                let secs = samples.len() as f64 / sr as f64;
                if best.as_ref().map_or(true, |(bsr, b)| secs > b.len() as f64 / *bsr as f64) {
                    best = Some((sr, samples));
                }
            }
            if let Some((sr, samples)) = best.filter(|(_, s)| !s.is_empty()) {
                let clip = resample_linear(&samples, sr, rate);
                names.push(cat.file_name().unwrap_or_default().to_string_lossy().into_owned());
                clips.push(Arc::new(normalize(clip.into_iter().map(f64::from).collect())));
            }
        }
        if clips.is_empty() {
            return Err(Error::Config(format!("corpus dir {} has no category folders with WAV clips", dir.display())));
        }
        Ok(BackgroundSource::Corpus { names, clips })
    }

    pub fn categories(&self) -> usize {
        match self {
            BackgroundSource::Synthetic => BACKGROUND_CATEGORIES,
            BackgroundSource::Corpus { clips, .. } => clips.len(),
        }
    }
}

/// One scheduled sound segment; an equal-length silence follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub category: usize,
    pub volume: f64,
    pub samples: Arc<Vec<f32>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub struct BackgroundScheduler {
    source: BackgroundSource,
    rate: u32,
    volume_range: [f64; 2],
    rng: ChaCha8Rng,
    current: Option<Segment>,
    /// Position within sound followed by silence, `0..2 * len`.
    pos: usize,
}

impl BackgroundScheduler {
    pub fn new(source: BackgroundSource, rate: u32, volume_range: [f64; 2], rng: ChaCha8Rng) -> Self {
        BackgroundScheduler {
            source,
            rate,
            volume_range,
            rng,
            current: None,
            pos: 0,
        }
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn source(&self) -> &BackgroundSource {
        &self.source
    }

    /// Draws the next sound segment.
    pub fn next_segment(&mut self) -> Segment {
        let category = self.rng.gen_range(0..self.source.categories());
        let [lo, hi] = self.volume_range;
        let volume = if hi > lo { self.rng.gen_range(lo..=hi) } else { lo };
        let samples = match &self.source {
            BackgroundSource::Synthetic => {
                let secs = self.rng.gen_range(SEGMENT_SECONDS.0..=SEGMENT_SECONDS.1);
                let n = (secs * self.rate as f64).round() as usize;
                Arc::new(normalize(render_signature(signature(category), n, self.rate as f64, &mut self.rng)))
            }
            BackgroundSource::Corpus { clips, .. } => clips[category].clone(),
        };
        Segment { category, volume, samples }
    }

    /// The next `n` samples of the track and the segment that was active
    /// when they started.
    pub fn render(&mut self, n: usize) -> (Vec<f32>, BackgroundTag) {
        let mut out = Vec::with_capacity(n);
        let mut tag = None;
        while out.len() < n {
            let seg = match &self.current {
                Some(s) if self.pos < 2 * s.len() => s,
                _ => {
                    self.current = Some(self.next_segment());
                    self.pos = 0;
                    self.current.as_ref().expect("just set")
                }
            };
            tag.get_or_insert(BackgroundTag { category: seg.category, volume: seg.volume });
            let gain = (seg.volume * FOREGROUND_RMS) as f32;
            let take = (2 * seg.len() - self.pos).min(n - out.len());
            for i in self.pos..self.pos + take {
                out.push(if i < seg.len() { seg.samples[i] * gain } else { 0.0 });
            }
            self.pos += take;
        }
        (out, tag.expect("n > 0"))
    }
}
