//! Endless simulated audio for live sessions: back-to-back 15 s scenario
//! episodes at the capture rate, with the moments where a reply is due.

use super::{SimConfig, Simulator, ScenarioConfig, Target};
use crate::audio::{PcmChunk, SOURCE_RATE, WINDOW_SECONDS};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub rate: u32,
    /// Alternating (talking to the agent, talking to someone else) phase
    /// lengths in seconds; the second phase forces `target = other_person`.
    pub duty_cycle: Option<[f64; 2]>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            rate: SOURCE_RATE,
            duty_cycle: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub start: u64,
    pub len: u64,
    pub scenario: ScenarioConfig,
    /// Absolute sample range in which the agent is expected to answer.
    pub reply_zone: Option<(u64, u64)>,
}

pub struct SimAudioSource {
    sim: Simulator,
    cfg: LiveConfig,
    episodes: VecDeque<Episode>,
    pending: VecDeque<f32>,
    produced: u64,
    generated: u64,
}

impl SimAudioSource {
    pub fn new(seed: u64, sim: SimConfig, cfg: LiveConfig) -> Result<Self> {
        if let Some([a, b]) = cfg.duty_cycle {
            if !(a > 0.0 && b >= 0.0) {
                return Err(Error::Config(format!("duty cycle [{a}, {b}] must have a positive agent phase")));
            }
        }
        Ok(SimAudioSource {
            sim: Simulator::with_rate(seed, sim, cfg.rate)?,
            cfg,
            episodes: VecDeque::new(),
            pending: VecDeque::new(),
            produced: 0,
            generated: 0,
        })
    }

    pub fn rate(&self) -> u32 {
        self.cfg.rate
    }

    /// Samples handed out so far.
    pub fn position(&self) -> u64 {
        self.produced
    }

    fn forced_target(&self, at: u64) -> Option<Target> {
        let [agent, other] = self.cfg.duty_cycle?;
        let t = at as f64 / self.cfg.rate as f64;
        (t % (agent + other) >= agent).then_some(Target::OtherPerson)
    }

    fn generate(&mut self) {
        let start = self.generated;
        let (scenario, audio, layout) = self.sim.next_raw(self.forced_target(start));
        let len = audio.len() as u64;
        let rate = self.cfg.rate as f64;
        let reply_zone = (scenario.label() == 1)
            .then(|| layout.utterance.map(|(_, end)| (start + (end * rate).round() as u64, start + len)))
            .flatten();
        debug_assert_eq!(len, (WINDOW_SECONDS as u64) * self.cfg.rate as u64);
        self.episodes.push_back(Episode {
            start,
            len,
            scenario,
            reply_zone,
        });
        while self.episodes.len() > 4 {
            self.episodes.pop_front();
        }
        self.pending.extend(audio);
        self.generated += len;
    }

    /// The next `n` samples.
    pub fn next_chunk(&mut self, n: usize) -> PcmChunk {
        while self.pending.len() < n {
            self.generate();
        }
        let samples: Vec<f32> = self.pending.drain(..n).collect();
        self.produced += n as u64;
        PcmChunk::new(self.cfg.rate, samples)
    }

    /// Episode playing at absolute sample `at`, if still remembered.
    pub fn episode_at(&self, at: u64) -> Option<&Episode> {
        self.episodes.iter().find(|e| at >= e.start && at < e.start + e.len)
    }

    /// Whether the most recently produced sample lies in a reply zone.
    pub fn reply_due(&self) -> bool {
        let at = self.produced.saturating_sub(1);
        self.episode_at(at)
            .and_then(|e| e.reply_zone)
            .is_some_and(|(a, b)| at >= a && at < b)
    }
}
