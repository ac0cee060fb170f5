//! Turns an interaction log into labeled samples with four rules:
//!
//! * R1: a tap that activates the agent labels its window positive.
//! * R2: a tap that interrupts the agent labels the window at the start of
//!   that activation negative.
//! * R3: an automatic activation that runs to completion untouched labels
//!   its window positive.
//! * R4: extra negatives drawn at random from low-probability ticks, away
//!   from the ticks just before each tap activation.

use crate::agent::{EventKind, LogEvent};
use crate::audio::{decimate, AudioWindow, MODEL_RATE, WINDOW_SECONDS};
use crate::error::{Error, Result};
use crate::learner::Origin;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
}

impl Rule {
    pub fn label(self) -> u8 {
        match self {
            Rule::R1 | Rule::R3 => 1,
            Rule::R2 | Rule::R4 => 0,
        }
    }

    pub fn origin(self) -> Origin {
        match self {
            Rule::R1 => Origin::TapActivate,
            Rule::R2 => Origin::TapInterrupt,
            Rule::R3 => Origin::AutoConfirmed,
            Rule::R4 => Origin::MinedNegative,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerConfig {
    /// R4 negatives per mined positive.
    pub ratio: f64,
    /// Ticks before a tap activation that R4 never samples.
    pub exclusion: u64,
    /// R4 candidates need `p < threshold`.
    pub threshold: f64,
    /// Mine only the last tap activation under R1.
    pub latest_only: bool,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            ratio: 1.0,
            exclusion: 20,
            threshold: 0.5,
            latest_only: false,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 0.0 && self.ratio.is_finite()) {
            return Err(Error::Config(format!("ratio must be a non-negative number, got {}", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// A mined sample, identified by the tick whose window it labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedSample {
    pub window_tick: u64,
    pub y: u8,
    pub rule: Rule,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MinedSet {
    /// Ordered by window tick.
    pub samples: Vec<MinedSample>,
}

impl MinedSet {
    pub fn count(&self, rule: Rule) -> usize {
        self.samples.iter().filter(|s| s.rule == rule).count()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.y == 1).count()
    }

    /// Entries for the learner's sample manifest, numbered from `first_t`.
    pub fn manifest(&self, first_t: u64) -> Vec<ManifestSample> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| ManifestSample {
                t: first_t + i as u64,
                y: s.y,
                origin: s.rule.origin(),
                rule: Some(s.rule),
                window_tick: s.window_tick,
                wav: None,
            })
            .collect()
    }
}

/// One line of a JSON-lines sample manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    #[serde(default)]
    pub t: u64,
    #[serde(alias = "label")]
    pub y: u8,
    #[serde(default = "simulated_origin")]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
    #[serde(default)]
    pub window_tick: u64,
    /// Path of the 4 kHz window, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<String>,
}

fn simulated_origin() -> Origin {
    Origin::Simulated
}

struct Activation {
    tick: u64,
    by_tap: bool,
    tapped: bool,
}

/// Facts gathered by replaying the log through the agent's state machine.
#[derive(Default)]
struct Trace {
    /// Ticks of Waiting-state predictions with their probabilities.
    predictions: Vec<(u64, f64)>,
    tap_activations: Vec<u64>,
    /// (activation tick, by tap) of activations ended by a tap.
    interrupted: Vec<(u64, bool)>,
    /// Activation ticks of automatic activations that finished untouched.
    confirmed: Vec<u64>,
}

fn replay(log: &[LogEvent], threshold: f64) -> Result<Trace> {
    let mut trace = Trace::default();
    let mut active: Option<Activation> = None;
    let mut last_tick: Option<u64> = None;
    let mut predicted_at: Option<u64> = None;
    for (i, e) in log.iter().enumerate() {
        let bad = |m: String| Err(Error::parse(format!("tick {} (event {})", e.tick, i + 1), m));
        if let Some(last) = last_tick {
            if e.tick < last {
                return bad(format!("tick goes backwards from {last}"));
            }
        }
        last_tick = Some(e.tick);
        match e.kind {
            EventKind::Prediction => {
                if active.is_some() {
                    return bad("prediction while activated".into());
                }
                if predicted_at == Some(e.tick) {
                    return bad("second prediction in one tick".into());
                }
                let Some(p) = e.prob.filter(|p| (0.0..=1.0).contains(p)) else {
                    return bad("prediction without a probability in [0, 1]".into());
                };
                predicted_at = Some(e.tick);
                trace.predictions.push((e.tick, p));
            }
            EventKind::ActivationAuto => {
                if active.is_some() {
                    return bad("automatic activation while activated".into());
                }
                match trace.predictions.last() {
                    Some(&(t, p)) if t == e.tick && p > threshold => {}
                    _ => return bad("automatic activation without a matching prediction above threshold".into()),
                }
                active = Some(Activation {
                    tick: e.tick,
                    by_tap: false,
                    tapped: false,
                });
            }
            EventKind::ActivationTap => {
                if active.is_some() {
                    return bad("activation tap while activated".into());
                }
                trace.tap_activations.push(e.tick);
                active = Some(Activation {
                    tick: e.tick,
                    by_tap: true,
                    tapped: false,
                });
            }
            EventKind::InterruptionTap => match active.take() {
                Some(mut a) => {
                    a.tapped = true;
                    trace.interrupted.push((a.tick, a.by_tap));
                }
                None => return bad("interruption tap while waiting".into()),
            },
            EventKind::Frame => {
                if active.is_none() {
                    return bad("response frame while waiting".into());
                }
            }
            EventKind::ResponseDone => match active.take() {
                Some(a) => {
                    if !a.by_tap && !a.tapped {
                        trace.confirmed.push(a.tick);
                    }
                }
                None => return bad("response end while waiting".into()),
            },
        }
    }
    Ok(trace)
}

/// Applies the four rules to an interaction log.
pub fn mine(log: &[LogEvent], cfg: &MinerConfig) -> Result<MinedSet> {
    cfg.validate()?;
    let trace = replay(log, cfg.threshold)?;
    let mut samples: Vec<MinedSample> = Vec::new();
    let interrupted_taps: BTreeSet<u64> = trace.interrupted.iter().filter(|(_, tap)| *tap).map(|(t, _)| *t).collect();

    let r1: Vec<u64> = trace.tap_activations.iter().copied().filter(|t| !interrupted_taps.contains(t)).collect();
    let r1 = if cfg.latest_only {
        // the last tap activation of the log, if it was not withdrawn
        match trace.tap_activations.last() {
            Some(t) if !interrupted_taps.contains(t) => vec![*t],
            _ => Vec::new(),
        }
    } else {
        r1
    };
    let mk = |window_tick, rule: Rule| MinedSample {
        window_tick,
        y: rule.label(),
        rule,
    };
    samples.extend(r1.iter().map(|&t| mk(t, Rule::R1)));
    samples.extend(trace.interrupted.iter().map(|&(t, _)| mk(t, Rule::R2)));
    samples.extend(trace.confirmed.iter().map(|&t| mk(t, Rule::R3)));

    let mut used: BTreeSet<u64> = samples.iter().map(|s| s.window_tick).collect();
    used.extend(&trace.tap_activations);
    let excluded = |t: u64| {
        trace
            .tap_activations
            .iter()
            .any(|&a| t < a && a - t <= cfg.exclusion)
    };
    let pool: Vec<u64> = trace
        .predictions
        .iter()
        .filter(|&&(t, p)| p < cfg.threshold && !used.contains(&t) && !excluded(t))
        .map(|&(t, _)| t)
        .collect();
    let positives = samples.iter().filter(|s| s.y == 1).count();
    let want = ((cfg.ratio * positives as f64).floor() as usize).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), want).into_vec();
    picked.sort_unstable();
    samples.extend(picked.into_iter().map(|i| mk(pool[i], Rule::R4)));

    samples.sort_by_key(|s| (s.window_tick, s.rule));
    Ok(MinedSet { samples })
}

/// The 4 kHz window the agent saw at `tick` in a recording that started
/// with the session, `chunk` source samples per tick.
pub fn window_at_tick(pcm: &[f32], rate: u32, chunk: usize, tick: u64) -> Result<AudioWindow> {
    if rate == 0 || rate % MODEL_RATE != 0 {
        return Err(Error::Config(format!("recording rate {rate} Hz is not a multiple of {MODEL_RATE} Hz")));
    }
    let len = WINDOW_SECONDS * rate as usize;
    let end = (tick as usize + 1) * chunk;
    if end > pcm.len() {
        return Err(Error::Input(format!(
            "tick {tick} needs {end} samples but the recording has {}",
            pcm.len()
        )));
    }
    let mut raw = vec![0.0; len];
    let start = end.saturating_sub(len);
    raw[len - (end - start)..].copy_from_slice(&pcm[start..end]);
    AudioWindow::from_samples(decimate(&raw, (rate / MODEL_RATE) as usize))
}
