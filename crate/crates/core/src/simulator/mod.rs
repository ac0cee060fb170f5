//! Scenario-driven synthetic interaction data.
//!
//! A Markov chain over scenario factors (topic, distance, context, speaking
//! target, sample type) decides what each 15 s window contains. Each window
//! is then rendered as synthetic audio: a harmonic "voice" whose contour
//! encodes the sample type, mixed over a continuously scheduled background
//! track.

mod background;
mod live;
mod voice;

pub use background::{
    category_names, BackgroundScheduler, BackgroundSource, Segment, BACKGROUND_CATEGORIES,
};
pub use live::{Episode, LiveConfig, SimAudioSource};
pub use voice::{synthesize_foreground, VoiceLayout, FOREGROUND_RMS};

use crate::audio::{AudioWindow, MODEL_RATE, WINDOW_SECONDS};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const TOPICS: [&str; 10] = [
    "Ordinary Life",
    "School Life",
    "Culture & Education",
    "Attitude & Emotion",
    "Relationship",
    "Tourism",
    "Health",
    "Work",
    "Politics",
    "Finance",
];

pub const DISTANCES_CM: [u32; 3] = [30, 60, 90];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Agent,
    OtherPerson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    FinishedExpectingReply,
    FinishedNotExpectingReply,
    SpeakingPausing,
    SpeakingNotPausing,
    NotSpeaking,
}

impl SampleType {
    pub const ALL: [SampleType; 5] = [
        SampleType::FinishedExpectingReply,
        SampleType::FinishedNotExpectingReply,
        SampleType::SpeakingPausing,
        SampleType::SpeakingNotPausing,
        SampleType::NotSpeaking,
    ];
}

/// Background active at the start of a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundTag {
    pub category: usize,
    pub volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Index into [`TOPICS`].
    pub topic: usize,
    pub distance_cm: u32,
    pub has_context: bool,
    pub target: Target,
    pub sample_type: SampleType,
    /// Filled in when the window is rendered.
    pub background: Option<BackgroundTag>,
}

impl ScenarioConfig {
    pub fn label(&self) -> u8 {
        (self.target == Target::Agent && self.sample_type == SampleType::FinishedExpectingReply) as u8
    }

    pub fn topic_name(&self) -> &'static str {
        TOPICS[self.topic]
    }

    /// Foreground amplitude relative to the 30 cm reference.
    pub fn distance_gain(&self) -> f64 {
        match self.distance_cm {
            30 => 1.0,
            60 => 0.5,
            _ => 0.33,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Probability that topic, distance and target repeat the previous value.
    pub repeat_prob: f64,
    /// Relative weight of "finished speaking, expecting reply"; the other
    /// four types have weight 1.
    pub expecting_weight: f64,
    /// Background volume range, as a fraction of the foreground reference RMS.
    pub volume_range: [f64; 2],
    /// Directory of per-category subdirectories of mono WAV clips.
    pub corpus_dir: Option<PathBuf>,
    /// RMS of the microphone noise under every window.
    pub noise_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            repeat_prob: 0.5,
            expecting_weight: 4.0,
            volume_range: [0.1, 0.5],
            corpus_dir: None,
            noise_floor: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.repeat_prob) {
            return Err(Error::Config(format!("repeat_prob {} outside [0, 1]", self.repeat_prob)));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::Config(format!("noise_floor {} must be a non-negative number", self.noise_floor)));
        }
        if !(self.expecting_weight > 0.0) {
            return Err(Error::Config("expecting_weight must be positive".into()));
        }
        let [lo, hi] = self.volume_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("volume_range [{lo}, {hi}] is not an ordered non-negative range")));
        }
        Ok(())
    }
}

fn repeat_or_other<T: Copy + PartialEq>(rng: &mut impl Rng, prev: Option<T>, options: &[T], repeat_prob: f64) -> T {
    match prev {
        None => options[rng.gen_range(0..options.len())],
        Some(p) => {
            if rng.gen_bool(repeat_prob) {
                p
            } else {
                let others: Vec<T> = options.iter().copied().filter(|o| *o != p).collect();
                others[rng.gen_range(0..others.len())]
            }
        }
    }
}

/// Draws the next scenario of the factor chain.
pub fn next_scenario(rng: &mut impl Rng, prev: Option<&ScenarioConfig>, cfg: &SimConfig) -> ScenarioConfig {
    let topics: Vec<usize> = (0..TOPICS.len()).collect();
    let topic = repeat_or_other(rng, prev.map(|p| p.topic), &topics, cfg.repeat_prob);
    let distance_cm = repeat_or_other(rng, prev.map(|p| p.distance_cm), &DISTANCES_CM, cfg.repeat_prob);
    let has_context = rng.gen_bool(0.5);
    let target = repeat_or_other(rng, prev.map(|p| p.target), &[Target::Agent, Target::OtherPerson], cfg.repeat_prob);
    let total = cfg.expecting_weight + 4.0;
    let u = rng.gen::<f64>() * total;
    let sample_type = if u < cfg.expecting_weight {
        SampleType::FinishedExpectingReply
    } else {
        SampleType::ALL[1 + (((u - cfg.expecting_weight) as usize).min(3))]
    };
    ScenarioConfig {
        topic,
        distance_cm,
        has_context,
        target,
        sample_type,
        background: None,
    }
}

/// One generated window.
#[derive(Clone, Debug)]
pub struct SimSample {
    pub index: usize,
    pub window: AudioWindow,
    pub label: u8,
    pub scenario: ScenarioConfig,
}

/// Sequential generator of scenario windows at the model rate.
pub struct Simulator {
    cfg: SimConfig,
    scenario_rng: ChaCha8Rng,
    voice_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    background: BackgroundScheduler,
    prev: Option<ScenarioConfig>,
    index: usize,
}

impl Simulator {
    pub fn new(seed: u64, cfg: SimConfig) -> Result<Self> {
        Self::with_rate(seed, cfg, MODEL_RATE)
    }

    pub fn with_rate(seed: u64, cfg: SimConfig, rate: u32) -> Result<Self> {
        cfg.validate()?;
        let source = match &cfg.corpus_dir {
            Some(dir) => BackgroundSource::from_corpus(dir, rate)?,
            None => BackgroundSource::synthetic(),
        };
        let background = BackgroundScheduler::new(source, rate, cfg.volume_range, ChaCha8Rng::seed_from_u64(seed ^ 0xb4c6_0d_77));
        Ok(Simulator {
            cfg,
            scenario_rng: ChaCha8Rng::seed_from_u64(seed),
            voice_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f0e1),
            noise_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0015_e000),
            background,
            prev: None,
            index: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn rate(&self) -> u32 {
        self.background.rate()
    }

    /// Next scenario and its rendered audio at the simulator's rate.
    pub fn next_raw(&mut self, force_target: Option<Target>) -> (ScenarioConfig, Vec<f32>, VoiceLayout) {
        let mut scenario = next_scenario(&mut self.scenario_rng, self.prev.as_ref(), &self.cfg);
        if let Some(t) = force_target {
            scenario.target = t;
        }
        let rate = self.rate();
        let n = WINDOW_SECONDS * rate as usize;
        let (mut audio, layout) = synthesize_foreground(&scenario, &mut self.voice_rng, rate);
        debug_assert_eq!(audio.len(), n);
        let (bg, tag) = self.background.render(n);
        for (a, b) in audio.iter_mut().zip(&bg) {
            *a += *b;
        }
        add_noise_floor(&mut audio, self.cfg.noise_floor, &mut self.noise_rng);
        scenario.background = Some(tag);
        self.prev = Some(scenario.clone());
        (scenario, audio, layout)
    }

    pub fn next_sample(&mut self) -> SimSample {
        debug_assert_eq!(self.rate(), MODEL_RATE);
        let (scenario, audio, _) = self.next_raw(None);
        let index = self.index;
        self.index += 1;
        SimSample {
            index,
            window: AudioWindow::from_samples(audio).expect("window length is fixed"),
            label: scenario.label(),
            scenario,
        }
    }
}

impl Iterator for Simulator {
    type Item = SimSample;

    fn next(&mut self) -> Option<SimSample> {
        Some(self.next_sample())
    }
}

/// `n` sequential samples from `seed`.
pub fn run_simulation(n: usize, seed: u64, cfg: &SimConfig) -> Result<Vec<SimSample>> {
    if n == 0 {
        return Err(Error::Contract("run_simulation needs n >= 1".into()));
    }
    Ok(Simulator::new(seed, cfg.clone())?.take(n).collect())
}

/// Uniform noise with RMS `rms`.
fn add_noise_floor(audio: &mut [f32], rms: f64, rng: &mut impl Rng) {
    if rms == 0.0 {
        return;
    }
    let a = (rms * 3f64.sqrt()) as f32;
    for v in audio.iter_mut() {
        *v += rng.gen_range(-a..a);
    }
}

/// Renders `scenario` at the model rate over the next stretch of `background`,
/// with a noise floor of `noise_floor` RMS.
pub fn synthesize_window(
    scenario: &ScenarioConfig,
    rng: &mut impl Rng,
    background: &mut BackgroundScheduler,
    noise_floor: f64,
) -> (AudioWindow, BackgroundTag) {
    let (mut audio, _) = synthesize_foreground(scenario, rng, background.rate());
    let (bg, tag) = background.render(audio.len());
    for (a, b) in audio.iter_mut().zip(&bg) {
        *a += *b;
    }
    add_noise_floor(&mut audio, noise_floor, rng);
    let window = AudioWindow::from_samples(audio).expect("the scheduler runs at the model rate");
    (window, tag)
}

/// JSON-lines manifest entry written next to simulated WAV windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub label: u8,
    pub wav: String,
    pub scenario: ScenarioConfig,
}
