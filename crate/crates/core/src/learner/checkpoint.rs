//! Learner checkpoint: the model checkpoint plus the replay buffer, so a
//! reloaded learner continues exactly where the saved one stopped.

use super::{Learner, LearnerConfig, OnlineSample, Origin, ReplayBuffer};
use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{decode_le, encode_le, ModelCheckpoint, Real};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

pub const LEARNER_FORMAT: &str = "tapadapt-learner";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BufferedRecord {
    pub t: u64,
    pub y: u8,
    pub origin: Origin,
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_rate: f64,
    pub x: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnerCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: LearnerConfig,
    pub last_t: Option<u64>,
    pub model: ModelCheckpoint,
    pub buffer: Vec<BufferedRecord>,
}

impl LearnerCheckpoint {
    pub fn from_learner<R: Real>(learner: &Learner<R>) -> Self {
        LearnerCheckpoint {
            format: LEARNER_FORMAT.into(),
            version: 1,
            config: learner.cfg.clone(),
            last_t: learner.last_t,
            model: ModelCheckpoint::from_model(&learner.model),
            buffer: learner
                .buffer
                .entries()
                .iter()
                .map(|s| BufferedRecord {
                    t: s.t,
                    y: s.y,
                    origin: s.origin,
                    n_mels: s.x.n_mels(),
                    n_frames: s.x.n_frames(),
                    frame_rate: s.x.frame_rate(),
                    x: encode_le(s.x.values()),
                })
                .collect(),
        }
    }

    pub fn into_learner<R: Real>(self) -> Result<Learner<R>> {
        if self.format != LEARNER_FORMAT || self.version != 1 {
            return Err(Error::parse("learner checkpoint", format!("unsupported {} v{}", self.format, self.version)));
        }
        let mut learner = Learner::from_model(self.model.into_model()?, self.config)?;
        let mut buffer = ReplayBuffer::new(learner.cfg.capacity);
        for (i, rec) in self.buffer.into_iter().enumerate() {
            let what = format!("buffer entry {i}");
            let values = decode_le::<f32>(&rec.x, rec.n_mels * rec.n_frames, &what)?;
            let x = FeatureMatrix::new(rec.n_mels, rec.n_frames, values, rec.frame_rate)?;
            let sample = OnlineSample::new(Arc::new(x), rec.y, rec.t, rec.origin).map_err(|e| Error::parse(&what, e.to_string()))?;
            buffer.push(sample).map_err(|e| Error::parse(&what, e.to_string()))?;
        }
        learner.restore(buffer, self.last_t);
        Ok(learner)
    }
}

pub fn save_learner<R: Real>(learner: &Learner<R>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(&LearnerCheckpoint::from_learner(learner))?)?;
    Ok(())
}

pub fn load_learner<R: Real>(path: impl AsRef<Path>) -> Result<Learner<R>> {
    let ck: LearnerCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
    ck.into_learner()
}
