//! Experiment configuration, the serialized predict-then-learn protocol,
//! live sessions and the console gateway.

pub mod gateway;
mod manifest;
mod serialized;
mod session;

pub use manifest::{manifest_features, read_manifest, write_jsonl, write_simulation, MANIFEST_NAME};
pub use serialized::{
    ablation_grid, featurize, run_experiment, run_experiment_with_runs, run_serialized, user_settings, AblationReport, AggregatePoint,
    LabeledFeatures, RunReport, SeedReport, SerializedRun, UserSettingsReport, VariantReport,
};
pub use session::{
    frames_for, run_session, spawn_ingestion, AudioInput, ScriptedUser, Session, SessionReport, SessionRun, TapPlan,
    TickOutcome,
};

use crate::agent::AgentConfig;
use crate::audio::MelConfig;
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::model::{MainModelKind, ModelConfig};
use crate::simulator::SimConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    #[default]
    Learn,
    Mine,
    Eval,
    Serve,
    Replay,
}

/// Components that can be switched off for the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub dilation: bool,
    pub replay: bool,
    pub attention_main: bool,
    pub label_balance: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            dilation: true,
            replay: true,
            attention_main: true,
            label_balance: true,
        }
    }
}

impl Ablations {
    /// The full configuration followed by the four single-component removals.
    pub fn grid() -> Vec<(&'static str, Ablations)> {
        let full = Ablations::default();
        vec![
            ("full", full),
            ("no_dilation", Ablations { dilation: false, ..full }),
            ("no_replay", Ablations { replay: false, ..full }),
            ("no_attention", Ablations { attention_main: false, ..full }),
            ("no_label_balance", Ablations { label_balance: false, ..full }),
        ]
    }

    pub fn apply(&self, model: &mut ModelConfig, learner: &mut LearnerConfig) {
        if !self.dilation {
            model.dilations = vec![1; model.tcn_blocks];
        }
        if !self.attention_main {
            model.main_model = MainModelKind::Mlp;
        }
        if !self.replay {
            // a single update on the incoming sample only
            learner.capacity = 1;
            learner.replay_steps = learner.replay_steps.min(1);
        }
        if !self.label_balance {
            learner.label_balance = false;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Ticks of missed reply the scripted user tolerates before tapping.
    pub patience: u64,
    /// Ticks after a false activation at which the scripted user interrupts.
    pub interrupt_after: u64,
    /// Session length in ticks.
    pub ticks: u64,
    /// Wall-clock speed-up; 0 runs as fast as possible.
    pub speed: f64,
    /// Gateway listen address; none runs headless.
    pub gateway: Option<String>,
    /// Agent-talk / side-conversation phases in seconds.
    pub duty_cycle: Option<[f64; 2]>,
    /// Drive taps from the scripted user.
    pub scripted: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            patience: 3,
            interrupt_after: 2,
            ticks: 1_500,
            speed: 1.0,
            gateway: None,
            duty_cycle: None,
            scripted: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoPaths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    /// Samples per serialized run.
    pub samples: usize,
    /// Records per metric window.
    pub metric_window: usize,
    /// Worker threads for independent runs; 0 uses the available cores.
    pub threads: usize,
    pub ablations: Ablations,
    pub features: MelConfig,
    pub model: ModelConfig,
    pub learner: LearnerConfig,
    pub agent: AgentConfig,
    pub simulator: SimConfig,
    pub session: SessionConfig,
    pub io: IoPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Learn,
            seeds: vec![0, 1, 2],
            samples: 1_000,
            metric_window: 100,
            threads: 0,
            ablations: Ablations::default(),
            features: MelConfig::default(),
            model: ModelConfig::default(),
            learner: LearnerConfig::default(),
            agent: AgentConfig::default(),
            simulator: SimConfig::default(),
            session: SessionConfig::default(),
            io: IoPaths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.learner.validate()?;
        self.agent.validate()?;
        self.simulator.validate()?;
        if self.model.n_mels != self.features.n_mels {
            return Err(Error::Config(format!(
                "model.n_mels {} differs from features.n_mels {}",
                self.model.n_mels, self.features.n_mels
            )));
        }
        if self.metric_window == 0 {
            return Err(Error::Config("metric_window must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.session.speed >= 0.0 && self.session.speed.is_finite()) {
            return Err(Error::Config("session.speed must be a non-negative number".into()));
        }
        Ok(())
    }

    /// Model and learner settings with the ablation flags applied.
    pub fn effective(&self, ablations: Ablations, seed: u64) -> (ModelConfig, LearnerConfig) {
        let mut model = self.model.clone();
        let mut learner = self.learner.clone();
        ablations.apply(&mut model, &mut learner);
        model.seed = seed;
        (model, learner)
    }

    pub fn worker_threads(&self) -> usize {
        match self.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}

#[cfg(test)]
mod tests;
