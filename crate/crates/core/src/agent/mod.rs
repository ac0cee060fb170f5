//! Interaction state machine driven by 0.2 s ticks and user taps.
//!
//! While Waiting the agent scores every tick and activates when the model
//! probability exceeds the threshold. A tap always flips the state: from
//! Waiting it activates the agent and yields a positive sample built from
//! the tap-time window, from Activated it interrupts and yields a negative
//! sample built from the window that started the activation.

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::learner::{OnlineSample, Origin};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;

pub const TICK_SECONDS: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentState {
    Waiting,
    Activated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Activation requires `p > threshold`.
    pub threshold: f64,
    /// Length of the agent's response in ticks.
    pub response_ticks: u32,
    /// Emit an `auto_confirmed` positive when an automatic activation runs
    /// to completion without a tap.
    pub confirm_uninterrupted: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            threshold: 0.5,
            response_ticks: 15,
            confirm_uninterrupted: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1), got {}", self.threshold)));
        }
        if self.response_ticks == 0 {
            return Err(Error::Config("response_ticks must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSnapshot {
    pub state: AgentState,
    pub tick: Option<u64>,
    pub last_prob: Option<f64>,
    pub activation_tick: Option<u64>,
    pub activation_window: Option<Arc<FeatureMatrix>>,
    pub response_remaining: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Prediction,
    ActivationAuto,
    ActivationTap,
    InterruptionTap,
    ResponseDone,
    /// A tick that produced no prediction because the agent was responding.
    Frame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub prob: Option<f64>,
    pub sample: Option<OnlineSample>,
    /// Tick whose window the sample was built from.
    pub window_tick: Option<u64>,
}

impl AgentEvent {
    fn bare(tick: u64, kind: EventKind) -> Self {
        AgentEvent {
            tick,
            kind,
            prob: None,
            sample: None,
            window_tick: None,
        }
    }

    pub fn to_log(&self) -> LogEvent {
        LogEvent {
            tick: self.tick,
            kind: self.kind,
            prob: self.prob,
            sample: self.sample.as_ref().map(|s| SampleRef {
                t: s.t,
                y: s.y,
                origin: s.origin,
                window_tick: self.window_tick.unwrap_or(self.tick),
            }),
        }
    }
}

/// Serialized form of a sample inside the interaction log; the window is
/// referenced by tick rather than embedded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub t: u64,
    pub y: u8,
    pub origin: Origin,
    pub window_tick: u64,
}

/// One line of the JSON-lines interaction log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub tick: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleRef>,
}

pub fn write_log<W: Write>(mut out: W, events: &[LogEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSON-lines interaction log. Structural checks happen in the miner.
pub fn read_log<B: BufRead>(input: B) -> Result<Vec<LogEvent>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        out.push(e);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Agent {
    cfg: AgentConfig,
    state: AgentState,
    tick: Option<u64>,
    last_prob: Option<f64>,
    activation_tick: Option<u64>,
    activation_window: Option<Arc<FeatureMatrix>>,
    activated_by_tap: bool,
    response_remaining: u32,
    next_sample: u64,
}

impl Agent {
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Agent {
            cfg,
            state: AgentState::Waiting,
            tick: None,
            last_prob: None,
            activation_tick: None,
            activation_window: None,
            activated_by_tap: false,
            response_remaining: 0,
            next_sample: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn state(&self) -> AgentState {
        self.state
    }

    /// Step index the next emitted sample will carry.
    pub fn next_sample_index(&self) -> u64 {
        self.next_sample
    }

    /// Makes emitted sample indices continue after `t`, for sessions whose
    /// learner has already seen samples.
    pub fn continue_samples_after(&mut self, t: Option<u64>) {
        self.next_sample = t.map_or(0, |t| t + 1).max(self.next_sample);
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            state: self.state,
            tick: self.tick,
            last_prob: self.last_prob,
            activation_tick: self.activation_tick,
            activation_window: self.activation_window.clone(),
            response_remaining: self.response_remaining,
        }
    }

    fn sample(&mut self, x: Arc<FeatureMatrix>, y: u8, origin: Origin) -> OnlineSample {
        let t = self.next_sample;
        self.next_sample += 1;
        OnlineSample { x, y, t, origin }
    }

    fn activate(&mut self, tick: u64, window: Arc<FeatureMatrix>, by_tap: bool) {
        self.state = AgentState::Activated;
        self.activation_tick = Some(tick);
        self.activation_window = Some(window);
        self.activated_by_tap = by_tap;
        self.response_remaining = self.cfg.response_ticks;
    }

    fn deactivate(&mut self) -> (u64, Arc<FeatureMatrix>, bool) {
        self.state = AgentState::Waiting;
        self.response_remaining = 0;
        let tick = self.activation_tick.take().expect("activated agent has an activation tick");
        let window = self.activation_window.take().expect("activated agent has an activation window");
        (tick, window, std::mem::take(&mut self.activated_by_tap))
    }

    /// Advances to `tick`. `score` is only called while Waiting.
    pub fn tick<F>(&mut self, tick: u64, window: Arc<FeatureMatrix>, score: F) -> Result<Vec<AgentEvent>>
    where
        F: FnOnce(&FeatureMatrix) -> Result<f64>,
    {
        if let Some(last) = self.tick {
            if tick <= last {
                return Err(Error::Contract(format!("tick {tick} does not follow tick {last}")));
            }
        }
        self.tick = Some(tick);
        let mut events = Vec::with_capacity(2);
        match self.state {
            AgentState::Waiting => {
                let p = score(&window)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Validation(format!("probability {p} at tick {tick} is outside [0, 1]")));
                }
                self.last_prob = Some(p);
                events.push(AgentEvent {
                    prob: Some(p),
                    ..AgentEvent::bare(tick, EventKind::Prediction)
                });
                if p > self.cfg.threshold {
                    self.activate(tick, window, false);
                    events.push(AgentEvent {
                        prob: Some(p),
                        window_tick: Some(tick),
                        ..AgentEvent::bare(tick, EventKind::ActivationAuto)
                    });
                }
            }
            AgentState::Activated => {
                self.response_remaining -= 1;
                events.push(AgentEvent::bare(tick, EventKind::Frame));
                if self.response_remaining == 0 {
                    let (started, window, by_tap) = self.deactivate();
                    let mut done = AgentEvent::bare(tick, EventKind::ResponseDone);
                    if !by_tap && self.cfg.confirm_uninterrupted {
                        done.sample = Some(self.sample(window, 1, Origin::AutoConfirmed));
                        done.window_tick = Some(started);
                    }
                    events.push(done);
                }
            }
        }
        Ok(events)
    }

    /// Handles a user tap. `window` is the window of the most recent tick.
    pub fn tap(&mut self, window: Arc<FeatureMatrix>) -> AgentEvent {
        let tick = self.tick.unwrap_or(0);
        match self.state {
            AgentState::Waiting => {
                self.activate(tick, window.clone(), true);
                let sample = self.sample(window, 1, Origin::TapActivate);
                AgentEvent {
                    sample: Some(sample),
                    window_tick: Some(tick),
                    ..AgentEvent::bare(tick, EventKind::ActivationTap)
                }
            }
            AgentState::Activated => {
                let (started, window, _) = self.deactivate();
                let sample = self.sample(window, 0, Origin::TapInterrupt);
                AgentEvent {
                    sample: Some(sample),
                    window_tick: Some(started),
                    ..AgentEvent::bare(tick, EventKind::InterruptionTap)
                }
            }
        }
    }
}
