//! Sequential replay online learning.
//!
//! Every incoming sample is scored by the current model before anything is
//! learned from it. It is then appended to a bounded replay buffer and the
//! model takes `replay_steps` optimizer steps on a recency-weighted batch
//! drawn from that buffer.

mod buffer;
mod checkpoint;

pub use buffer::{decay_weight, draw_replay_batch, ReplayBuffer, ReplayDraw};
pub use checkpoint::{load_learner, save_learner, LearnerCheckpoint};

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Real, TrainExample};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Where an online sample's label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    TapActivate,
    TapInterrupt,
    AutoConfirmed,
    MinedNegative,
    Simulated,
}

impl Origin {
    /// The label this origin forces, if any.
    pub fn implied_label(self) -> Option<u8> {
        match self {
            Origin::TapActivate => Some(1),
            Origin::TapInterrupt | Origin::MinedNegative => Some(0),
            Origin::AutoConfirmed | Origin::Simulated => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineSample {
    pub x: Arc<FeatureMatrix>,
    pub y: u8,
    pub t: u64,
    pub origin: Origin,
}

impl OnlineSample {
    pub fn new(x: Arc<FeatureMatrix>, y: u8, t: u64, origin: Origin) -> Result<Self> {
        if y > 1 {
            return Err(Error::Validation(format!("label must be 0 or 1, got {y}")));
        }
        if let Some(want) = origin.implied_label() {
            if want != y {
                return Err(Error::Validation(format!("{origin:?} sample must have y={want}, got {y}")));
            }
        }
        Ok(OnlineSample { x, y, t, origin })
    }

    /// Same sample with the label replaced, bypassing origin checks.
    pub fn with_label(&self, y: u8) -> Self {
        OnlineSample { y, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub w0: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Optimizer steps per observed sample; 0 freezes the model.
    pub replay_steps: usize,
    pub capacity: usize,
    pub label_balance: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            w0: 1.0,
            gamma: 0.98,
            batch_size: 8,
            replay_steps: 2,
            capacity: 512,
            label_balance: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::Config(format!("w0 must be positive, got {}", self.w0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the learner event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub t: u64,
    pub p: f64,
    pub y: u8,
    #[serde(default = "default_origin")]
    pub origin: Origin,
    /// Batch loss of the first replay step, before it was applied.
    #[serde(default)]
    pub loss: Option<f64>,
    #[serde(default)]
    pub batch_ts: Vec<u64>,
    #[serde(default)]
    pub batch_weights: Vec<f64>,
}

fn default_origin() -> Origin {
    Origin::Simulated
}

impl PredictionRecord {
    pub fn scored(t: u64, p: f64, y: u8) -> Self {
        PredictionRecord {
            t,
            p,
            y,
            origin: Origin::Simulated,
            loss: None,
            batch_ts: Vec::new(),
            batch_weights: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Learner<R: Real = f32> {
    model: Model<R>,
    cfg: LearnerConfig,
    buffer: ReplayBuffer,
    last_t: Option<u64>,
}

impl<R: Real> Learner<R> {
    pub fn new(model_cfg: ModelConfig, cfg: LearnerConfig) -> Result<Self> {
        Self::from_model(Model::new(model_cfg)?, cfg)
    }

    pub fn from_model(model: Model<R>, cfg: LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        let buffer = ReplayBuffer::new(cfg.capacity);
        Ok(Learner {
            model,
            cfg,
            buffer,
            last_t: None,
        })
    }

    pub fn model(&self) -> &Model<R> {
        &self.model
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn last_t(&self) -> Option<u64> {
        self.last_t
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<f64> {
        self.model.predict(x)
    }

    /// Predict, then learn from `sample`.
    pub fn observe(&mut self, sample: OnlineSample) -> Result<PredictionRecord> {
        if let Some(last) = self.last_t {
            if sample.t <= last {
                return Err(Error::Contract(format!(
                    "sample t={} is not after the last observed t={last}",
                    sample.t
                )));
            }
        }
        let (p, cache) = self.model.forward(&sample.x)?;
        let (t, y, origin) = (sample.t, sample.y, sample.origin);
        self.last_t = Some(t);
        self.buffer.push(sample)?;

        let mut record = PredictionRecord {
            t,
            p,
            y,
            origin,
            loss: None,
            batch_ts: Vec::new(),
            batch_weights: Vec::new(),
        };
        if self.cfg.replay_steps == 0 {
            return Ok(record);
        }
        let mut draws = draw_replay_batch(&self.buffer, t, &self.cfg)?;
        if !draws.iter().any(|d| d.t == t) {
            // Only reachable with a balanced batch of one whose class
            // differs from the incoming label.
            let newest = self.buffer.entries().len() - 1;
            draws[0] = ReplayDraw {
                index: newest,
                t,
                y,
                weight: decay_weight(self.cfg.w0, self.cfg.gamma, 0)?,
            };
        }
        record.batch_ts = draws.iter().map(|d| d.t).collect();
        record.batch_weights = draws.iter().map(|d| d.weight).collect();
        let entries = self.buffer.entries();
        let batch: Vec<TrainExample> = draws
            .iter()
            .map(|d| TrainExample {
                x: &entries[d.index].x,
                y: d.y,
                weight: d.weight,
            })
            .collect();
        let incoming = draws.iter().position(|d| d.t == t);
        let mut reuse = incoming.map(|i| (i, cache));
        for step in 0..self.cfg.replay_steps {
            let outcome = self.model.train_step_reusing(&batch, reuse.take())?;
            if step == 0 {
                record.loss = Some(outcome.loss());
            }
        }
        Ok(record)
    }

    pub(crate) fn restore(&mut self, buffer: ReplayBuffer, last_t: Option<u64>) {
        self.buffer = buffer;
        self.last_t = last_t;
    }
}

pub fn write_records<W: Write>(mut out: W, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<B: BufRead>(input: B) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        if r.y > 1 || !(0.0..=1.0).contains(&r.p) {
            return Err(Error::parse(format!("line {}", i + 1), "p must lie in [0, 1] and y in {0, 1}"));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
