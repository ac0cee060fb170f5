//! Anti-aliased integer decimation to the model rate.

use super::MODEL_RATE;

pub const LOWPASS_TAPS: usize = 63;
pub const LOWPASS_CUTOFF_HZ: f64 = 1_900.0;

/// Hamming-windowed sinc low-pass at the given source rate, unit DC gain.
pub fn lowpass_taps(source_rate: u32) -> Vec<f64> {
    let fc = LOWPASS_CUTOFF_HZ / source_rate as f64;
    let mid = (LOWPASS_TAPS - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (LOWPASS_TAPS - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Zero-phase low-pass then keep every `factor`-th sample. Edges are zero
/// padded. `factor == 1` returns the input unchanged.
pub fn decimate(input: &[f32], factor: usize) -> Vec<f32> {
    assert!(factor >= 1);
    if factor == 1 {
        return input.to_vec();
    }
    let taps = lowpass_taps(MODEL_RATE * factor as u32);
    let half = (LOWPASS_TAPS / 2) as isize;
    let n_out = input.len() / factor;
    let len = input.len() as isize;
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let centre = (i * factor) as isize;
        let start = centre - half;
        let mut acc = 0.0f64;
        if start >= 0 && start + LOWPASS_TAPS as isize <= len {
            let seg = &input[start as usize..start as usize + LOWPASS_TAPS];
            for (h, x) in taps.iter().zip(seg) {
                acc += h * *x as f64;
            }
        } else {
            for (j, h) in taps.iter().enumerate() {
                let idx = start + j as isize;
                if (0..len).contains(&idx) {
                    acc += h * input[idx as usize] as f64;
                }
            }
        }
        out.push(acc as f32);
    }
    out
}
