use super::{LearnerConfig, OnlineSample};
use crate::error::{Error, Result};
use std::collections::VecDeque;

/// `w0 * gamma^age`.
pub fn decay_weight(w0: f64, gamma: f64, age: i64) -> Result<f64> {
    if age < 0 {
        return Err(Error::Contract(format!("sample age must be >= 0, got {age}")));
    }
    Ok(match i32::try_from(age) {
        Ok(a) => w0 * gamma.powi(a),
        Err(_) => w0 * gamma.powf(age as f64),
    })
}

/// Bounded FIFO of past samples ordered by step index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayBuffer {
    entries: VecDeque<OnlineSample>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            entries: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &VecDeque<OnlineSample> {
        &self.entries
    }

    /// Appends `sample`, evicting the oldest entry when full.
    pub fn push(&mut self, sample: OnlineSample) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if sample.t <= last.t {
                return Err(Error::Contract(format!(
                    "buffer entries must be strictly ordered: t={} after t={}",
                    sample.t, last.t
                )));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(sample);
        Ok(())
    }
}

/// A buffered sample chosen for a replay batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayDraw {
    /// Position in [`ReplayBuffer::entries`].
    pub index: usize,
    pub t: u64,
    pub y: u8,
    pub weight: f64,
}

/// Recency-weighted replay batch, newest first.
///
/// Balanced batches take the `ceil(b/2)` newest positives and `floor(b/2)`
/// newest negatives, topping up from the other class when one runs short.
pub fn draw_replay_batch(buffer: &ReplayBuffer, now: u64, cfg: &LearnerConfig) -> Result<Vec<ReplayDraw>> {
    let b = cfg.batch_size;
    let entries = buffer.entries();
    let newest_first = (0..entries.len()).rev();
    let mut chosen: Vec<usize> = if cfg.label_balance {
        let pos: Vec<usize> = newest_first.clone().filter(|&i| entries[i].y == 1).collect();
        let neg: Vec<usize> = newest_first.filter(|&i| entries[i].y == 0).collect();
        let mut want_pos = b.div_ceil(2).min(pos.len());
        let want_neg = (b - want_pos).min(neg.len());
        want_pos = (b - want_neg).min(pos.len());
        pos[..want_pos].iter().chain(&neg[..want_neg]).copied().collect()
    } else {
        newest_first.take(b).collect()
    };
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    chosen
        .into_iter()
        .map(|i| {
            let e = &entries[i];
            let age = now as i64 - e.t as i64;
            Ok(ReplayDraw {
                index: i,
                t: e.t,
                y: e.y,
                weight: decay_weight(cfg.w0, cfg.gamma, age)?,
            })
        })
        .collect()
}
