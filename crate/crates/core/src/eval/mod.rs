//! Evaluation metrics: thresholded F1, Brier score, per-window series, the
//! semantic learning index and the order-preserving stream interleave.

mod sli;

pub use sli::{mean_pairwise_cos, ols_slope, sli, EmbeddingWindowSet, SliResult};

use crate::error::{Error, Result};
use crate::learner::PredictionRecord;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const DEFAULT_WINDOW: usize = 100;

/// F1 of `p > threshold` against the labels; 0 when there are no true
/// positives.
pub fn f1(records: &[PredictionRecord], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for r in records {
        match (r.p > threshold, r.y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Mean squared error between probabilities and labels.
pub fn brier(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().map(|r| (r.p - r.y as f64).powi(2)).sum::<f64>() / records.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    /// 1-based window number.
    pub window: usize,
    pub count: usize,
    pub f1: f64,
    pub brier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub window_size: usize,
    pub points: Vec<MetricPoint>,
    /// Records after the last full window.
    pub partial: Option<MetricPoint>,
}

impl MetricsSeries {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "window,count,f1,brier")?;
        for p in self.points.iter().chain(&self.partial) {
            writeln!(out, "{},{},{},{}", p.window, p.count, p.f1, p.brier)?;
        }
        Ok(())
    }
}

pub fn windowed_metrics(records: &[PredictionRecord], window: usize) -> Result<MetricsSeries> {
    if window == 0 {
        return Err(Error::Config("metric window must be >= 1".into()));
    }
    let point = |i: usize, chunk: &[PredictionRecord]| MetricPoint {
        window: i + 1,
        count: chunk.len(),
        f1: f1(chunk, 0.5),
        brier: brier(chunk),
    };
    let mut chunks = records.chunks(window).enumerate().peekable();
    let mut points = Vec::new();
    let mut partial = None;
    while let Some((i, chunk)) = chunks.next() {
        if chunk.len() == window {
            points.push(point(i, chunk));
        } else {
            partial = Some(point(i, chunk));
        }
    }
    Ok(MetricsSeries {
        window_size: window,
        points,
        partial,
    })
}

/// One item of a merged multi-user stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interleaved<T> {
    pub user: usize,
    /// Position within that user's stream.
    pub index: usize,
    pub item: T,
}

/// Uniformly random order-preserving merge of several streams.
pub fn interleave_shared<T: Clone>(streams: &[Vec<T>], seed: u64) -> Vec<Interleaved<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = vec![0usize; streams.len()];
    let mut remaining: usize = streams.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(remaining);
    while remaining > 0 {
        // Picking a stream with probability proportional to what it has left
        // makes every merge equally likely.
        let mut k = rng.gen_range(0..remaining);
        let user = (0..streams.len())
            .find(|&u| {
                let left = streams[u].len() - next[u];
                if k < left {
                    true
                } else {
                    k -= left;
                    false
                }
            })
            .expect("k < remaining");
        out.push(Interleaved {
            user,
            index: next[user],
            item: streams[user][next[user]].clone(),
        });
        next[user] += 1;
        remaining -= 1;
    }
    out
}

#[cfg(test)]
mod tests;
