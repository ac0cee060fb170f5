//! Live sessions: audio in, one agent tick every 0.2 s, taps from a
//! scripted user, a fixed schedule or the gateway, and every tap-derived
//! sample handed to the learner at once.

use super::gateway::{ClientFrame, Gateway, ServerFrame};
use super::ExperimentConfig;
use crate::agent::{Agent, AgentEvent, AgentState, EventKind, LogEvent, TICK_SECONDS};
use crate::audio::pcm::decode_s16le;
use crate::audio::{AudioRing, FeatureMatrix, FrontEnd, PcmChunk, SharedRing, SOURCE_RATE};
use crate::error::{Error, Result};
use crate::learner::{Learner, PredictionRecord};
use crate::simulator::{LiveConfig, SimAudioSource};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Where session audio comes from.
pub enum AudioInput {
    Simulated(SimAudioSource),
    /// A finished recording; the session ends when it runs out.
    Recording { samples: Vec<f32>, rate: u32, pos: usize },
    /// A ring fed by another thread; `closed` is set when the feed ends.
    Stream { ring: SharedRing, closed: Arc<AtomicBool> },
}

impl AudioInput {
    fn rate(&self) -> u32 {
        match self {
            AudioInput::Simulated(s) => s.rate(),
            AudioInput::Recording { rate, .. } => *rate,
            AudioInput::Stream { ring, .. } => ring.snapshot().source_rate(),
        }
    }
}

/// Feeds raw s16le PCM from `reader` into `ring` until end of input.
pub fn spawn_ingestion<R: Read + Send + 'static>(mut reader: R, ring: SharedRing, rate: u32) -> Arc<AtomicBool> {
    let closed = Arc::new(AtomicBool::new(false));
    let flag = closed.clone();
    std::thread::spawn(move || {
        let mut buf = vec![0u8; (rate as f64 * TICK_SECONDS) as usize * 2];
        loop {
            if reader.read_exact(&mut buf).is_err() {
                break;
            }
            let samples = decode_s16le(&buf).expect("even byte count");
            if ring.push_frame(&PcmChunk::new(rate, samples)).is_err() {
                break;
            }
        }
        flag.store(true, Ordering::Relaxed);
    });
    closed
}

/// Surrogate user: taps to activate after `patience` ticks of a missed
/// reply, and interrupts false activations `interrupt_after` ticks in.
#[derive(Clone, Debug)]
pub struct ScriptedUser {
    patience: u64,
    interrupt_after: u64,
    missed: u64,
    interrupt_at: Option<u64>,
}

impl ScriptedUser {
    pub fn new(patience: u64, interrupt_after: u64) -> Self {
        ScriptedUser {
            patience: patience.max(1),
            interrupt_after,
            missed: 0,
            interrupt_at: None,
        }
    }

    /// Whether to tap after `tick`, given this tick's events and whether a
    /// reply is due right now.
    pub fn decide(&mut self, tick: u64, state: AgentState, events: &[AgentEvent], reply_due: bool) -> bool {
        if events.iter().any(|e| e.kind == EventKind::ActivationAuto) && !reply_due {
            self.interrupt_at = Some(tick + self.interrupt_after);
        }
        match state {
            AgentState::Activated => {
                self.missed = 0;
                if self.interrupt_at.is_some_and(|t| tick >= t) {
                    self.interrupt_at = None;
                    return true;
                }
                false
            }
            AgentState::Waiting => {
                self.interrupt_at = None;
                if reply_due {
                    self.missed += 1;
                    if self.missed >= self.patience {
                        self.missed = 0;
                        return true;
                    }
                } else {
                    self.missed = 0;
                }
                false
            }
        }
    }
}

pub enum TapPlan {
    None,
    Scripted(ScriptedUser),
    /// Ticks after which to tap, ascending; repeats tap more than once.
    Schedule(Vec<u64>),
}

impl TapPlan {
    /// The tap ticks of a recorded interaction log.
    pub fn from_log(log: &[LogEvent]) -> Self {
        TapPlan::Schedule(
            log.iter()
                .filter(|e| matches!(e.kind, EventKind::ActivationTap | EventKind::InterruptionTap))
                .map(|e| e.tick)
                .collect(),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub ticks: u64,
    pub predictions: u64,
    pub auto_activations: u64,
    pub tap_activations: u64,
    pub interruptions: u64,
    pub responses_done: u64,
    pub samples_learned: u64,
    pub positives_learned: u64,
    pub last_t: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TickOutcome {
    pub tick: u64,
    pub events: Vec<AgentEvent>,
    pub records: Vec<PredictionRecord>,
    /// Feature extraction, scoring and learning time of this tick.
    pub compute: Duration,
}

pub struct Session {
    agent: Agent,
    learner: Learner,
    front: FrontEnd,
    input: AudioInput,
    taps: TapPlan,
    next_tap: usize,
    ring: AudioRing,
    chunk: usize,
    tick: u64,
    window: Option<Arc<FeatureMatrix>>,
    recording: Option<Vec<f32>>,
    report: SessionReport,
}

impl Session {
    pub fn new(cfg: &ExperimentConfig, learner: Learner, input: AudioInput, taps: TapPlan) -> Result<Self> {
        cfg.validate()?;
        let mut agent = Agent::new(cfg.agent.clone())?;
        agent.continue_samples_after(learner.last_t());
        let rate = input.rate();
        let chunk = (rate as f64 * TICK_SECONDS).round() as usize;
        Ok(Session {
            agent,
            learner,
            front: FrontEnd::new(cfg.features.clone())?,
            ring: AudioRing::new(rate)?,
            input,
            taps,
            next_tap: 0,
            chunk,
            tick: 0,
            window: None,
            recording: None,
            report: SessionReport::default(),
        })
    }

    /// Simulated audio with the scripted user from `cfg.session`.
    pub fn simulated(cfg: &ExperimentConfig, learner: Learner, seed: u64) -> Result<Self> {
        let live = LiveConfig {
            rate: SOURCE_RATE,
            duty_cycle: cfg.session.duty_cycle,
        };
        let source = SimAudioSource::new(seed, cfg.simulator.clone(), live)?;
        let taps = if cfg.session.scripted {
            TapPlan::Scripted(ScriptedUser::new(cfg.session.patience, cfg.session.interrupt_after))
        } else {
            TapPlan::None
        };
        Self::new(cfg, learner, AudioInput::Simulated(source), taps)
    }

    /// Keep every ingested sample for `take_recording`.
    pub fn record_audio(&mut self) {
        self.recording.get_or_insert_with(Vec::new);
    }

    pub fn take_recording(&mut self) -> Option<(u32, Vec<f32>)> {
        let rate = self.ring.source_rate();
        self.recording.take().map(|r| (rate, r))
    }

    pub fn samples_per_tick(&self) -> usize {
        self.chunk
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn into_learner(self) -> Learner {
        self.learner
    }

    pub fn report(&self) -> &SessionReport {
        &self.report
    }

    pub fn next_tick(&self) -> u64 {
        self.tick
    }

    /// Pulls one tick of audio; false once a recording is exhausted.
    fn ingest(&mut self) -> Result<bool> {
        let chunk = match &mut self.input {
            AudioInput::Simulated(src) => src.next_chunk(self.chunk),
            AudioInput::Recording { samples, rate, pos } => {
                if *pos >= samples.len() {
                    return Ok(false);
                }
                let end = (*pos + self.chunk).min(samples.len());
                let c = PcmChunk::new(*rate, samples[*pos..end].to_vec());
                *pos = end;
                c
            }
            AudioInput::Stream { ring, closed } => {
                if closed.load(Ordering::Relaxed) && ring.snapshot().written() == self.ring.written() {
                    return Ok(false);
                }
                self.ring = ring.snapshot();
                return Ok(true);
            }
        };
        if let Some(r) = &mut self.recording {
            r.extend_from_slice(&chunk.samples);
        }
        self.ring.push_frame(&chunk)?;
        Ok(true)
    }

    fn reply_due(&self) -> bool {
        match &self.input {
            AudioInput::Simulated(src) => src.reply_due(),
            _ => false,
        }
    }

    fn learn(&mut self, events: &[AgentEvent], records: &mut Vec<PredictionRecord>) -> Result<()> {
        for e in events {
            if let Some(s) = &e.sample {
                let r = self.learner.observe(s.clone())?;
                self.report.samples_learned += 1;
                self.report.positives_learned += r.y as u64;
                self.report.last_t = Some(r.t);
                records.push(r);
            }
        }
        Ok(())
    }

    fn count(&mut self, events: &[AgentEvent]) {
        for e in events {
            match e.kind {
                EventKind::Prediction => self.report.predictions += 1,
                EventKind::ActivationAuto => self.report.auto_activations += 1,
                EventKind::ActivationTap => self.report.tap_activations += 1,
                EventKind::InterruptionTap => self.report.interruptions += 1,
                EventKind::ResponseDone => self.report.responses_done += 1,
                EventKind::Frame => {}
            }
        }
    }

    /// Applies a tap that arrives between ticks, as from a console.
    pub fn tap(&mut self) -> Result<TickOutcome> {
        let window = self
            .window
            .clone()
            .ok_or_else(|| Error::Contract("tap before the first tick".into()))?;
        let started = Instant::now();
        let events = vec![self.agent.tap(window)];
        let mut records = Vec::new();
        self.learn(&events, &mut records)?;
        self.count(&events);
        Ok(TickOutcome {
            tick: self.tick.saturating_sub(1),
            events,
            records,
            compute: started.elapsed(),
        })
    }

    /// Runs one tick, including the planned taps after it. `None` when the
    /// input has ended.
    pub fn step(&mut self) -> Result<Option<TickOutcome>> {
        if !self.ingest()? {
            return Ok(None);
        }
        let tick = self.tick;
        let step = |e| Error::at_step(tick as usize, e);
        let started = Instant::now();
        let window = Arc::new(self.front.features(&self.ring.read_window()).map_err(step)?);
        self.window = Some(window.clone());
        let learner = &self.learner;
        let mut events = self.agent.tick(tick, window.clone(), |x| learner.predict(x)).map_err(step)?;
        let due = self.reply_due();
        let n_taps = match &mut self.taps {
            TapPlan::None => 0,
            TapPlan::Scripted(user) => user.decide(tick, self.agent.state(), &events, due) as usize,
            TapPlan::Schedule(ticks) => {
                let mut n = 0;
                while self.next_tap < ticks.len() && ticks[self.next_tap] <= tick {
                    n += (ticks[self.next_tap] == tick) as usize;
                    self.next_tap += 1;
                }
                n
            }
        };
        for _ in 0..n_taps {
            events.push(self.agent.tap(window.clone()));
        }
        let mut records = Vec::new();
        self.learn(&events, &mut records).map_err(step)?;
        let compute = started.elapsed();
        self.count(&events);
        self.report.ticks += 1;
        self.tick += 1;
        Ok(Some(TickOutcome {
            tick,
            events,
            records,
            compute,
        }))
    }
}

/// Gateway frames describing one tick.
pub fn frames_for(outcome: &TickOutcome, state_before: AgentState) -> Vec<ServerFrame> {
    let mut frames = Vec::new();
    let mut state = state_before;
    for e in &outcome.events {
        if let (EventKind::Prediction, Some(p)) = (e.kind, e.prob) {
            frames.push(ServerFrame::prob(e.tick, p));
        }
        let next = match e.kind {
            EventKind::ActivationAuto | EventKind::ActivationTap => AgentState::Activated,
            EventKind::InterruptionTap | EventKind::ResponseDone => AgentState::Waiting,
            _ => state,
        };
        if next != state {
            frames.push(ServerFrame::state(next, e.tick));
            state = next;
        }
        if let Some(s) = &e.sample {
            frames.push(ServerFrame::sample(e.tick, s.t, s.y, s.origin));
        }
    }
    frames
}

/// Everything a finished session produced.
pub struct SessionRun {
    pub events: Vec<LogEvent>,
    pub records: Vec<PredictionRecord>,
    pub report: SessionReport,
    /// Per-tick compute times.
    pub compute: Vec<Duration>,
}

/// Drives `session` for up to `ticks` ticks. `speed` > 0 paces ticks at
/// 0.2 s / speed of wall-clock; 0 runs unpaced. Console taps are applied
/// at the next tick boundary.
pub fn run_session(session: &mut Session, ticks: u64, speed: f64, gateway: Option<&Gateway>) -> Result<SessionRun> {
    let mut events = Vec::new();
    let mut records = Vec::new();
    let mut compute = Vec::new();
    let period = (speed > 0.0).then(|| Duration::from_secs_f64(TICK_SECONDS / speed));
    let start = Instant::now();
    let publish = |session: &Session, out: &TickOutcome, before: AgentState| {
        if let Some(g) = gateway {
            g.broadcast(&frames_for(out, before));
            g.set_greeting(ServerFrame::state(session.agent().state(), out.tick));
        }
    };
    for k in 0..ticks {
        if let Some(p) = period {
            let due = start + p * k as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        if let Some(g) = gateway {
            for ClientFrame::Tap in g.drain_taps() {
                if session.window.is_none() {
                    g.broadcast(&[ServerFrame::error("tap before the first tick")]);
                    continue;
                }
                let before = session.agent().state();
                let out = session.tap()?;
                publish(session, &out, before);
                events.extend(out.events.iter().map(AgentEvent::to_log));
                records.extend(out.records);
            }
        }
        let before = session.agent().state();
        let Some(out) = session.step()? else { break };
        publish(session, &out, before);
        compute.push(out.compute);
        events.extend(out.events.iter().map(AgentEvent::to_log));
        records.extend(out.records);
    }
    Ok(SessionRun {
        events,
        records,
        report: session.report().clone(),
        compute,
    })
}
