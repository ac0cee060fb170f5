//! Streaming audio front end: a 15 s ring buffer, 4 kHz decimation and
//! normalized Log-Mel features.

mod features;
pub mod pcm;
mod resample;
mod ring;

pub use features::{log_mel, zscore, FeatureMatrix, MelConfig, MelFilterbank};
pub use resample::{decimate, lowpass_taps};
pub use ring::{AudioRing, AudioWindow, PcmChunk, SharedRing};

/// Duration of the audio context presented to the model.
pub const WINDOW_SECONDS: usize = 15;
/// Rate after decimation.
pub const MODEL_RATE: u32 = 4_000;
/// Samples in one model window (15 s at 4 kHz).
pub const WINDOW_SAMPLES: usize = WINDOW_SECONDS * MODEL_RATE as usize;
/// Default capture rate.
pub const SOURCE_RATE: u32 = 16_000;

use crate::error::Result;

/// Ring window -> normalized features, the per-tick front end.
#[derive(Clone, Debug)]
pub struct FrontEnd {
    bank: MelFilterbank,
}

impl FrontEnd {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        Ok(FrontEnd {
            bank: MelFilterbank::new(cfg)?,
        })
    }

    pub fn config(&self) -> &MelConfig {
        self.bank.config()
    }

    pub fn features(&self, window: &AudioWindow) -> Result<FeatureMatrix> {
        Ok(zscore(&self.bank.compute(window)?))
    }
}
