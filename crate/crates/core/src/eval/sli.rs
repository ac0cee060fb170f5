//! Semantic learning index: the trend of how fast the predicted-positive
//! embedding cluster tightens relative to the ideal-positive cluster.
//!
//! Per window `t`, `C(t)` is the mean pairwise cosine similarity of a set of
//! embeddings. With `D(t) = ΔC_pred(t) - ΔC_true(t)`, the index is the OLS
//! slope of the cumulative sum of `D` against `1..=n`. The confidence
//! interval comes from a percentile bootstrap over the `D` values.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWindowSet {
    #[serde(default)]
    pub window: usize,
    #[serde(rename = "pred")]
    pub pred_embeddings: Vec<Vec<f64>>,
    #[serde(rename = "true")]
    pub true_embeddings: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliResult {
    pub sli: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub boot_median: f64,
    pub n_windows: usize,
    /// Window ids left out because a set had fewer than two embeddings.
    pub skipped: Vec<usize>,
    pub d_series: Vec<f64>,
}

/// Mean cosine similarity over all unordered pairs.
pub fn mean_pairwise_cos(set: &[Vec<f64>]) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::Input(format!("pairwise similarity needs two vectors, got {}", set.len())));
    }
    let norms: Vec<f64> = set.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            let dot: f64 = set[i].iter().zip(&set[j]).map(|(a, b)| a * b).sum();
            total += dot / (norms[i] * norms[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Least-squares slope of `y` against `1..=y.len()`.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean_x = (n + 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = (i + 1) as f64 - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn cumulative_slope(d: &[f64]) -> f64 {
    let mut acc = 0.0;
    let cum: Vec<f64> = d
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    ols_slope(&cum)
}

fn check_set(w: &EmbeddingWindowSet, dim: &mut Option<usize>) -> Result<()> {
    for v in w.pred_embeddings.iter().chain(&w.true_embeddings) {
        let d = *dim.get_or_insert(v.len());
        if v.len() != d || d == 0 {
            return Err(Error::Validation(format!("window {}: embedding has dimension {} instead of {d}", w.window, v.len())));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::Validation(format!("window {}: embedding norm {norm} is not 1", w.window)));
        }
    }
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn sli(windows: &[EmbeddingWindowSet], bootstrap_n: usize, seed: u64) -> Result<SliResult> {
    let mut dim = None;
    let mut c_pred = Vec::new();
    let mut c_true = Vec::new();
    let mut skipped = Vec::new();
    for w in windows {
        check_set(w, &mut dim)?;
        if w.pred_embeddings.len() < 2 || w.true_embeddings.len() < 2 {
            skipped.push(w.window);
            continue;
        }
        c_pred.push(mean_pairwise_cos(&w.pred_embeddings)?);
        c_true.push(mean_pairwise_cos(&w.true_embeddings)?);
    }
    let n = c_pred.len();
    if n < 3 {
        return Err(Error::Input(format!("SLI needs at least 3 usable windows, got {n}")));
    }
    let d: Vec<f64> = (1..n).map(|t| (c_pred[t] - c_pred[t - 1]) - (c_true[t] - c_true[t - 1])).collect();
    let estimate = cumulative_slope(&d);
    if d[1..].iter().all(|v| *v == 0.0) {
        // the cumulative sum is flat
        return Ok(SliResult {
            sli: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            boot_median: 0.0,
            n_windows: n,
            skipped,
            d_series: d,
        });
    }
    if bootstrap_n == 0 {
        return Err(Error::Config("bootstrap_n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resample = vec![0.0; d.len()];
    let mut slopes: Vec<f64> = (0..bootstrap_n)
        .map(|_| {
            for r in resample.iter_mut() {
                *r = d[rng.gen_range(0..d.len())];
            }
            cumulative_slope(&resample)
        })
        .collect();
    slopes.sort_by(|a, b| a.total_cmp(b));
    Ok(SliResult {
        sli: estimate,
        ci_low: percentile(&slopes, 0.025),
        ci_high: percentile(&slopes, 0.975),
        boot_median: percentile(&slopes, 0.5),
        n_windows: n,
        skipped,
        d_series: d,
    })
}
