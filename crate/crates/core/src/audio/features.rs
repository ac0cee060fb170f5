use super::{AudioWindow, MODEL_RATE, WINDOW_SAMPLES};
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mels: 64,
            fft_size: 128,
            win_length: 100,
            hop_length: 40,
            fmin: 20.0,
            fmax: 2_000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = MODEL_RATE as f64 / 2.0;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_mels == 0 {
            return bad("n_mels must be positive".into());
        }
        if !(self.hop_length >= 1 && self.hop_length <= self.win_length && self.win_length <= self.fft_size) {
            return bad(format!(
                "need 1 <= hop ({}) <= win ({}) <= fft ({})",
                self.hop_length, self.win_length, self.fft_size
            ));
        }
        if self.win_length > WINDOW_SAMPLES {
            return bad("win_length exceeds the window".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        1 + (WINDOW_SAMPLES - self.win_length) / self.hop_length
    }

    pub fn frame_rate(&self) -> f64 {
        MODEL_RATE as f64 / self.hop_length as f64
    }
}

/// Mel bins x frames, stored mel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n_mels: usize,
    n_frames: usize,
    values: Vec<f32>,
    frame_rate: f64,
}

impl FeatureMatrix {
    pub fn new(n_mels: usize, n_frames: usize, values: Vec<f32>, frame_rate: f64) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::Input(format!(
                "{} values cannot form a {n_mels}x{n_frames} matrix",
                values.len()
            )));
        }
        Ok(FeatureMatrix {
            n_mels,
            n_frames,
            values,
            frame_rate,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], frame_rate: f64) -> Result<Self> {
        let n_frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_frames) {
            return Err(Error::Input("ragged feature rows".into()));
        }
        Self::new(rows.len(), n_frames, rows.concat(), frame_rate)
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

/// Z-score over all entries jointly; a constant matrix maps to zeros.
pub fn zscore(m: &FeatureMatrix) -> FeatureMatrix {
    let mut out = m.clone();
    if m.values.is_empty() {
        return out;
    }
    let (mean, std) = m.mean_std();
    if std <= 1e-12 * mean.abs().max(1.0) {
        out.values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        for v in &mut out.values {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
    out
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Clone, Debug)]
struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Precomputed analysis window, triangular mel filters and FFT plan.
#[derive(Clone)]
pub struct MelFilterbank {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Filter>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelFilterbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFilterbank").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl MelFilterbank {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let window: Vec<f64> = (0..cfg.win_length)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / cfg.win_length as f64).cos())
            .collect();
        let n_bins = cfg.fft_size / 2 + 1;
        let bin_hz = MODEL_RATE as f64 / cfg.fft_size as f64;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            let Some(first_bin) = first else {
                return Err(Error::Config(format!(
                    "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; use fewer mels or a larger fft_size"
                )));
            };
            filters.push(Filter { first_bin, weights });
        }
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(MelFilterbank {
            cfg,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Filter weights over the one-sided FFT bins, one row per mel bin.
    pub fn dense_filters(&self) -> Vec<Vec<f64>> {
        let n_bins = self.cfg.fft_size / 2 + 1;
        self.filters
            .iter()
            .map(|f| {
                let mut row = vec![0.0; n_bins];
                row[f.first_bin..f.first_bin + f.weights.len()].copy_from_slice(&f.weights);
                row
            })
            .collect()
    }

    /// Linear mel energies, `n_mels x n_frames`, before the log.
    pub fn mel_energies(&self, window: &AudioWindow) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let x = window.samples();
        let n_frames = cfg.n_frames();
        let mut out = vec![vec![0.0; n_frames]; cfg.n_mels];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; cfg.fft_size / 2 + 1];
        for f in 0..n_frames {
            let seg = &x[f * cfg.hop_length..f * cfg.hop_length + cfg.win_length];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < cfg.win_length {
                    Complex::new(seg[i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, filt) in self.filters.iter().enumerate() {
                out[m][f] = filt
                    .weights
                    .iter()
                    .zip(&power[filt.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
            }
        }
        out
    }

    /// Log-Mel spectrogram, `log(max(energy, log_floor))`.
    pub fn compute(&self, window: &AudioWindow) -> Result<FeatureMatrix> {
        let energies = self.mel_energies(window);
        let floor = self.cfg.log_floor;
        let n_frames = self.cfg.n_frames();
        let mut values = Vec::with_capacity(self.cfg.n_mels * n_frames);
        for row in &energies {
            values.extend(row.iter().map(|&e| e.max(floor).ln() as f32));
        }
        FeatureMatrix::new(self.cfg.n_mels, n_frames, values, self.cfg.frame_rate())
    }
}

/// Log-Mel spectrogram of a 15 s window.
pub fn log_mel(window: &AudioWindow, cfg: &MelConfig) -> Result<FeatureMatrix> {
    MelFilterbank::new(cfg.clone())?.compute(window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_window(seed: u64) -> AudioWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioWindow::from_samples((0..WINDOW_SAMPLES).map(|_| rng.gen_range(-0.3f32..0.3)).collect()).unwrap()
    }

    #[test]
    fn default_shape_is_64_by_1498() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.n_frames(), 1 + (60_000 - 100) / 40);
        let m = log_mel(&AudioWindow::silent(), &cfg).unwrap();
        assert_eq!((m.n_mels(), m.n_frames()), (64, 1498));
        assert_eq!(m.frame_rate(), 100.0);
    }

    #[test]
    fn silence_hits_the_floor_and_normalizes_to_zero() {
        let cfg = MelConfig::default();
        let m = log_mel(&AudioWindow::silent(), &cfg).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(m.values().iter().all(|&v| v == floor));
        assert!(zscore(&m).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_default_filter_covers_a_bin() {
        let bank = MelFilterbank::new(MelConfig::default()).unwrap();
        for (m, row) in bank.dense_filters().iter().enumerate() {
            assert!(row.iter().sum::<f64>() > 0.0, "filter {m} empty");
        }
    }

    #[test]
    fn too_many_mels_is_a_config_error() {
        let cfg = MelConfig {
            n_mels: 200,
            ..MelConfig::default()
        };
        assert!(matches!(MelFilterbank::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = MelConfig::default();
        for cfg in [
            MelConfig { fmax: 2_500.0, ..base.clone() },
            MelConfig { hop_length: 120, ..base.clone() },
            MelConfig { win_length: 200, ..base.clone() },
            MelConfig { log_floor: 0.0, ..base.clone() },
            MelConfig { fmin: 2_000.0, ..base.clone() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn white_noise_spreads_energy_over_bins() {
        let bank = MelFilterbank::new(MelConfig::default()).unwrap();
        let energies = bank.mel_energies(&noise_window(5));
        let per_bin: Vec<f64> = energies.iter().map(|r| r.iter().sum()).collect();
        let total: f64 = per_bin.iter().sum();
        let max = per_bin.iter().cloned().fold(0.0, f64::max);
        assert!(per_bin.iter().all(|&e| e > 0.0));
        assert!(max / total < 0.5, "largest bin holds {}", max / total);

        // Oracle: direct DFT of each frame and a dense matrix product.
        let cfg = bank.config().clone();
        let filters = bank.dense_filters();
        let x = noise_window(5);
        for frame in [0usize, 700, 1497] {
            let seg = &x.samples()[frame * cfg.hop_length..frame * cfg.hop_length + cfg.win_length];
            let n = cfg.fft_size;
            let power: Vec<f64> = (0..=n / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, &s) in seg.iter().enumerate() {
                        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.win_length as f64).cos();
                        let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                        re += s as f64 * w * a.cos();
                        im += s as f64 * w * a.sin();
                    }
                    re * re + im * im
                })
                .collect();
            for (m, row) in filters.iter().enumerate() {
                let e: f64 = row.iter().zip(&power).map(|(a, b)| a * b).sum();
                assert!((e - energies[m][frame]).abs() <= 1e-9 * e.max(1e-12), "mel {m} frame {frame}");
            }
        }
    }

    #[test]
    fn zscore_examples() {
        let ones = FeatureMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]], 1.0).unwrap();
        assert_eq!(zscore(&ones).values(), &[0.0, 0.0, 0.0, 0.0]);
        let pair = FeatureMatrix::from_rows(&[vec![0.0, 2.0]], 1.0).unwrap();
        assert_eq!(zscore(&pair).values(), &[-1.0, 1.0]);
    }

    #[test]
    fn zscore_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f32> = (0..400).map(|_| rng.gen_range(-3.0f32..5.0)).collect();
        let a = FeatureMatrix::new(20, 20, vals.clone(), 1.0).unwrap();
        let b = FeatureMatrix::new(20, 20, vals.iter().map(|v| v * 10.0).collect(), 1.0).unwrap();
        let (za, zb) = (zscore(&a), zscore(&b));
        for (x, y) in za.values().iter().zip(zb.values()) {
            assert!((x - y).abs() < 1e-6);
        }
        let (mean, std) = za.mean_std();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalized_features_ignore_loudness() {
        let bank = MelFilterbank::new(MelConfig::default()).unwrap();
        let w = noise_window(9);
        for k in [0.1f32, 3.0] {
            let a = zscore(&bank.compute(&w).unwrap());
            let b = zscore(&bank.compute(&w.scaled(k)).unwrap());
            let worst = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(worst < 1e-4, "k={k}: {worst}");
        }
    }
}
