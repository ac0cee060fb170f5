//! Harmonic "voice" rendering of a scenario's foreground.
//!
//! Sample types map to contours: expecting a reply is a falling-pitch phrase
//! followed by terminal silence, not expecting one is the same phrase at a
//! flat pitch, pausing has a 0.4 s gap mid-window and speaks through the end,
//! not pausing speaks continuously through the end, not speaking is silent.
//! Speech aimed at another person gets a fixed high-frequency roll-off.

use super::{SampleType, ScenarioConfig, Target, TOPICS};
use crate::audio::WINDOW_SECONDS;
use rand::Rng;
use std::f64::consts::TAU;

/// RMS of the active foreground at 30 cm.
pub const FOREGROUND_RMS: f64 = 0.1;

const HARMONIC_CEILING_HZ: f64 = 1900.0;
const FORMANT_WIDTH_HZ: f64 = 130.0;
const PITCH_FALL: f64 = 0.5;
/// Harmonic amplitude roll-off of the glottal source, k^-slope.
const SOURCE_SLOPE: f64 = 0.6;
/// Gain at the very end of a falling phrase.
const FINAL_GAIN: f64 = 0.5;
const FALL_SECONDS: f64 = 1.2;
const PAUSE: (f64, f64) = (7.3, 7.7);

/// (F1, F2) pairs shaping the harmonic amplitudes of each syllable.
const VOWELS: [(f64, f64); 6] = [
    (730.0, 1090.0),
    (270.0, 1800.0),
    (530.0, 1840.0),
    (570.0, 840.0),
    (440.0, 1020.0),
    (660.0, 1720.0),
];

/// Where speech landed inside the window, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VoiceLayout {
    pub utterance: Option<(f64, f64)>,
    pub context: Option<(f64, f64)>,
    pub gap: Option<(f64, f64)>,
}

impl VoiceLayout {
    /// Silence after the main utterance, or `None` when speech runs to the end.
    pub fn terminal_silence(&self) -> Option<f64> {
        let end = self.utterance?.1;
        let t = WINDOW_SECONDS as f64 - end;
        (t > 1e-9).then_some(t)
    }
}

#[derive(Clone, Copy)]
enum Contour {
    Flat,
    Falling,
}

struct Speaker {
    f0: f64,
    drift_phase: f64,
    tilt: bool,
    topic: usize,
}

fn render_phrase(out: &mut [f64], rate: f64, spk: &Speaker, span: (f64, f64), gap: Option<(f64, f64)>, contour: Contour, rng: &mut impl Rng) {
    let (start, end) = span;
    let mut t = start;
    let favorite = spk.topic % VOWELS.len();
    while t < end - 0.08 {
        let dur = rng.gen_range(0.12..0.26f64).min(end - t);
        let pause_after = rng.gen_range(0.03..0.07);
        let (s0, s1) = (t, t + dur);
        t = s1 + pause_after;
        if let Some((g0, g1)) = gap {
            if s1 > g0 && s0 < g1 {
                t = t.max(g1);
                continue;
            }
        }
        let vowel = if rng.gen_bool(0.5) {
            VOWELS[(favorite + rng.gen_range(0..2)) % VOWELS.len()]
        } else {
            VOWELS[rng.gen_range(0..VOWELS.len())]
        };
        let gain = rng.gen_range(0.7..1.0);
        let fall_frac = |time: f64| {
            let from = end - FALL_SECONDS.min(end - start);
            ((time - from) / (end - from)).clamp(0.0, 1.0)
        };
        let pitch = |time: f64| {
            let drift = 1.0 + 0.03 * (TAU * 0.7 * time + spk.drift_phase).sin();
            let fall = match contour {
                Contour::Flat => 1.0,
                Contour::Falling => 1.0 - (1.0 - PITCH_FALL) * fall_frac(time),
            };
            spk.f0 * drift * fall
        };
        let mid_f0 = pitch(0.5 * (s0 + s1));
        let harmonics = (HARMONIC_CEILING_HZ / (0.9 * mid_f0)).floor().max(1.0) as usize;
        let amps: Vec<f64> = (1..=harmonics)
            .map(|k| {
                let f = k as f64 * mid_f0;
                let formant = [vowel.0, vowel.1]
                    .iter()
                    .map(|&fc| (-0.5 * ((f - fc) / FORMANT_WIDTH_HZ).powi(2)).exp())
                    .sum::<f64>()
                    + 0.25;
                let source = (k as f64).powf(-SOURCE_SLOPE);
                let tilt = if spk.tilt { 1.0 / (k as f64).powf(1.2) } else { 1.0 };
                formant * source * tilt
            })
            .collect();
        let i0 = (s0 * rate).round() as usize;
        let i1 = ((s1 * rate).round() as usize).min(out.len());
        let ramp = (0.02 * rate) as usize;
        let mut phase = 0.0f64;
        for i in i0..i1 {
            let time = i as f64 / rate;
            let f0 = pitch(time);
            phase = (phase + TAU * f0 / rate) % TAU;
            let mut v = 0.0;
            for (k, a) in amps.iter().enumerate() {
                if (k + 1) as f64 * f0 < HARMONIC_CEILING_HZ {
                    v += a * ((k + 1) as f64 * phase).sin();
                }
            }
            let decay = match contour {
                Contour::Flat => 1.0,
                Contour::Falling => 1.0 - (1.0 - FINAL_GAIN) * fall_frac(time),
            };
            let edge = (i - i0).min(i1 - 1 - i);
            let env = if edge < ramp { 0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos() } else { 1.0 };
            out[i] += gain * decay * env * v;
        }
    }
}

/// Renders the foreground of `scenario` at `rate`, scaled for distance.
pub fn synthesize_foreground(scenario: &ScenarioConfig, rng: &mut impl Rng, rate: u32) -> (Vec<f32>, VoiceLayout) {
    let n = WINDOW_SECONDS * rate as usize;
    let r = rate as f64;
    let total = WINDOW_SECONDS as f64;
    let mut out = vec![0.0f64; n];
    let spk = Speaker {
        f0: rng.gen_range(120.0..240.0),
        drift_phase: rng.gen_range(0.0..TAU),
        tilt: scenario.target == Target::OtherPerson,
        topic: scenario.topic % TOPICS.len(),
    };
    let earliest = if scenario.has_context { 5.5 } else { 1.5 };
    let mut layout = VoiceLayout::default();
    match scenario.sample_type {
        SampleType::FinishedExpectingReply | SampleType::FinishedNotExpectingReply => {
            let tail = rng.gen_range(0.9..1.4);
            let dur = rng.gen_range(2.5..5.0);
            let end = total - tail;
            layout.utterance = Some((end - dur, end));
        }
        SampleType::SpeakingPausing => {
            layout.utterance = Some((rng.gen_range(earliest..6.5), total));
            layout.gap = Some(PAUSE);
        }
        SampleType::SpeakingNotPausing => {
            layout.utterance = Some((rng.gen_range(earliest..9.0), total));
        }
        SampleType::NotSpeaking => {}
    }
    if layout.utterance.is_some() && scenario.has_context {
        layout.context = Some((rng.gen_range(0.3..1.0), rng.gen_range(3.5..4.8)));
    }
    if let Some(ctx) = layout.context {
        render_phrase(&mut out, r, &spk, ctx, None, Contour::Flat, rng);
    }
    if let Some(span) = layout.utterance {
        let contour = match scenario.sample_type {
            SampleType::FinishedExpectingReply => Contour::Falling,
            _ => Contour::Flat,
        };
        render_phrase(&mut out, r, &spk, span, layout.gap, contour, rng);
    }
    let active: Vec<f64> = out.iter().copied().filter(|v| *v != 0.0).collect();
    let scale = if active.is_empty() {
        0.0
    } else {
        let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt();
        FOREGROUND_RMS * scenario.distance_gain() / rms
    };
    (out.iter().map(|v| (v * scale) as f32).collect(), layout)
}
