use super::{Ablations, ExperimentConfig};
use crate::audio::{FeatureMatrix, FrontEnd, MelConfig};
use crate::error::{Error, Result};
use crate::eval::{interleave_shared, windowed_metrics, MetricsSeries};
use crate::learner::{Learner, LearnerConfig, OnlineSample, Origin, PredictionRecord};
use crate::model::{Model, ModelConfig};
use crate::simulator::{SimConfig, SimSample, Simulator};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// A normalized feature matrix and its label.
#[derive(Clone, Debug)]
pub struct LabeledFeatures {
    pub x: Arc<FeatureMatrix>,
    pub y: u8,
}

pub fn featurize(samples: &[SimSample], mel: &MelConfig) -> Result<Vec<LabeledFeatures>> {
    let front = FrontEnd::new(mel.clone())?;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let x = front.features(&s.window).map_err(|e| Error::at_step(i, e))?;
            Ok(LabeledFeatures { x: Arc::new(x), y: s.label })
        })
        .collect()
}

fn simulate_features(n: usize, seed: u64, sim: &SimConfig, mel: &MelConfig) -> Result<Vec<LabeledFeatures>> {
    if n == 0 {
        return Err(Error::Config("samples must be >= 1".into()));
    }
    let front = FrontEnd::new(mel.clone())?;
    Simulator::new(seed, sim.clone())?
        .take(n)
        .enumerate()
        .map(|(i, s)| {
            let x = front.features(&s.window).map_err(|e| Error::at_step(i, e))?;
            Ok(LabeledFeatures { x: Arc::new(x), y: s.label })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SerializedRun {
    pub records: Vec<PredictionRecord>,
    pub series: MetricsSeries,
    pub learner: Learner,
}

/// Scores every sample with the current model, then learns from it.
pub fn run_serialized(
    stream: &[LabeledFeatures],
    learner: Learner,
    metric_window: usize,
) -> Result<SerializedRun> {
    let mut learner = learner;
    let start = learner.last_t().unwrap_or(0);
    let mut records = Vec::with_capacity(stream.len());
    for (i, s) in stream.iter().enumerate() {
        let record = OnlineSample::new(s.x.clone(), s.y, start + i as u64 + 1, Origin::Simulated)
            .and_then(|sample| learner.observe(sample))
            .map_err(|e| Error::at_step(i, e))?;
        records.push(record);
    }
    let series = windowed_metrics(&records, metric_window)?;
    Ok(SerializedRun { records, series, learner })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub series: MetricsSeries,
    pub tail_f1: f64,
    pub tail_brier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub window: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_brier: f64,
    pub std_brier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Vec<AggregatePoint>,
    /// Seed mean of the window metrics covering the final `tail_samples`.
    pub tail_samples: usize,
    pub tail_f1: f64,
    pub tail_brier: f64,
}

/// Records per tail for the summary statistics.
const TAIL_SAMPLES: usize = 200;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn seed_report(seed: u64, series: MetricsSeries) -> SeedReport {
    let k = (TAIL_SAMPLES / series.window_size).max(1);
    let tail = &series.points[series.points.len().saturating_sub(k)..];
    let (tail_f1, tail_brier) = if tail.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            tail.iter().map(|p| p.f1).sum::<f64>() / tail.len() as f64,
            tail.iter().map(|p| p.brier).sum::<f64>() / tail.len() as f64,
        )
    };
    SeedReport {
        seed,
        series,
        tail_f1,
        tail_brier,
    }
}

fn aggregate(config: ExperimentConfig, seeds: Vec<SeedReport>) -> RunReport {
    let n_windows = seeds.iter().map(|s| s.series.points.len()).min().unwrap_or(0);
    let aggregate = (0..n_windows)
        .map(|w| {
            let f1: Vec<f64> = seeds.iter().map(|s| s.series.points[w].f1).collect();
            let brier: Vec<f64> = seeds.iter().map(|s| s.series.points[w].brier).collect();
            let (mean_f1, std_f1) = mean_std(&f1);
            let (mean_brier, std_brier) = mean_std(&brier);
            AggregatePoint {
                window: w + 1,
                mean_f1,
                std_f1,
                mean_brier,
                std_brier,
            }
        })
        .collect();
    let tail_f1 = mean_std(&seeds.iter().map(|s| s.tail_f1).collect::<Vec<_>>()).0;
    let tail_brier = mean_std(&seeds.iter().map(|s| s.tail_brier).collect::<Vec<_>>()).0;
    RunReport {
        config,
        seeds,
        aggregate,
        tail_samples: TAIL_SAMPLES,
        tail_f1,
        tail_brier,
    }
}

/// Runs `jobs` on up to `threads` workers and returns results in job order.
fn parallel_map<T: Sync, U: Send>(jobs: &[T], threads: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, jobs.len().max(1));
    let mut out: Vec<(usize, U)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= jobs.len() {
                            break done;
                        }
                        done.push((i, f(&jobs[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, u)| u).collect()
}

fn fresh_learner(model: ModelConfig, learner: LearnerConfig, init: Option<&Model>) -> Result<Learner> {
    match init {
        Some(m) => {
            if m.config().n_mels != model.n_mels {
                return Err(Error::Config("checkpoint model does not match the feature size".into()));
            }
            Learner::from_model(m.clone(), learner)
        }
        None => Learner::new(model, learner),
    }
}

/// Serialized runs of `cfg.ablations` over every seed; `init` replaces the
/// cold-start model.
pub fn run_experiment(cfg: &ExperimentConfig, init: Option<&Model>) -> Result<RunReport> {
    run_experiment_with_runs(cfg, init).map(|(report, _)| report)
}

/// `run_experiment`, also returning each seed's records and final learner.
pub fn run_experiment_with_runs(cfg: &ExperimentConfig, init: Option<&Model>) -> Result<(RunReport, Vec<SerializedRun>)> {
    cfg.validate()?;
    let streams = parallel_map(&cfg.seeds, cfg.worker_threads(), |&seed| {
        simulate_features(cfg.samples, seed, &cfg.simulator, &cfg.features)
    });
    let streams: Vec<_> = streams.into_iter().collect::<Result<_>>()?;
    let jobs: Vec<usize> = (0..cfg.seeds.len()).collect();
    let runs = parallel_map(&jobs, cfg.worker_threads(), |&i| {
        let (model, learner) = cfg.effective(cfg.ablations, cfg.seeds[i]);
        run_serialized(&streams[i], fresh_learner(model, learner, init)?, cfg.metric_window)
    });
    let runs: Vec<SerializedRun> = runs.into_iter().collect::<Result<_>>()?;
    let seeds = runs
        .iter()
        .zip(&cfg.seeds)
        .map(|(run, &seed)| seed_report(seed, run.series.clone()))
        .collect();
    Ok((aggregate(cfg.clone(), seeds), runs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub ablations: Ablations,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<VariantReport>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&RunReport> {
        self.variants.iter().find(|v| v.name == name).map(|v| &v.report)
    }
}

/// Every named variant over every seed; each seed's stream is generated
/// once and shared by all variants.
pub fn ablation_grid(cfg: &ExperimentConfig, variants: &[(&str, Ablations)]) -> Result<AblationReport> {
    cfg.validate()?;
    let threads = cfg.worker_threads();
    let streams = parallel_map(&cfg.seeds, threads, |&seed| {
        simulate_features(cfg.samples, seed, &cfg.simulator, &cfg.features)
    });
    let streams: Vec<_> = streams.into_iter().collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..cfg.seeds.len()).map(move |s| (v, s)))
        .collect();
    let runs = parallel_map(&jobs, threads, |&(v, s)| {
        let (model, learner) = cfg.effective(variants[v].1, cfg.seeds[s]);
        run_serialized(&streams[s], Learner::new(model, learner)?, cfg.metric_window).map(|r| r.series)
    });
    let mut runs = runs.into_iter();
    let mut out = Vec::new();
    for (name, ablations) in variants {
        let mut seeds = Vec::new();
        for &seed in &cfg.seeds {
            seeds.push(seed_report(seed, runs.next().expect("one run per job")?));
        }
        let config = ExperimentConfig {
            ablations: *ablations,
            ..cfg.clone()
        };
        out.push(VariantReport {
            name: name.to_string(),
            ablations: *ablations,
            report: aggregate(config, seeds),
        });
    }
    Ok(AblationReport { variants: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSettingsReport {
    pub users: Vec<u64>,
    /// Setting 1: one model per user, trained on that user's stream.
    pub specific: Vec<MetricsSeries>,
    /// Setting 2: one shared model over the interleaved streams, evaluated
    /// per user on that user's records in order.
    pub shared: Vec<MetricsSeries>,
    pub shared_overall: MetricsSeries,
    /// User id of every step of the shared run.
    pub shared_order: Vec<usize>,
}

/// Per-user simulator settings: distinct seeds and background loudness.
fn user_sim(base: &SimConfig, user: usize) -> SimConfig {
    let scale = 0.6 + 0.2 * user as f64;
    SimConfig {
        volume_range: [base.volume_range[0] * scale, base.volume_range[1] * scale],
        ..base.clone()
    }
}

/// The user-specific and user-shared protocols over synthetic users whose
/// streams come from `users` seeds.
pub fn user_settings(cfg: &ExperimentConfig, users: &[u64], interleave_seed: u64) -> Result<UserSettingsReport> {
    cfg.validate()?;
    if users.is_empty() {
        return Err(Error::Config("at least one user is required".into()));
    }
    let threads = cfg.worker_threads();
    let idx: Vec<usize> = (0..users.len()).collect();
    let streams = parallel_map(&idx, threads, |&u| {
        simulate_features(cfg.samples, users[u], &user_sim(&cfg.simulator, u), &cfg.features)
    });
    let streams: Vec<Vec<LabeledFeatures>> = streams.into_iter().collect::<Result<_>>()?;
    let model_seed = cfg.seeds[0];

    let specific = parallel_map(&idx, threads, |&u| {
        let (model, learner) = cfg.effective(cfg.ablations, model_seed);
        run_serialized(&streams[u], Learner::new(model, learner)?, cfg.metric_window).map(|r| r.series)
    });
    let specific = specific.into_iter().collect::<Result<Vec<_>>>()?;

    let merged = interleave_shared(&streams, interleave_seed);
    let order: Vec<usize> = merged.iter().map(|m| m.user).collect();
    let stream: Vec<LabeledFeatures> = merged.into_iter().map(|m| m.item).collect();
    let (model, learner) = cfg.effective(cfg.ablations, model_seed);
    let run = run_serialized(&stream, Learner::new(model, learner)?, cfg.metric_window)?;
    let mut per_user: Vec<Vec<PredictionRecord>> = vec![Vec::new(); users.len()];
    for (r, &u) in run.records.iter().zip(&order) {
        per_user[u].push(r.clone());
    }
    let shared = per_user
        .iter()
        .map(|r| windowed_metrics(r, cfg.metric_window))
        .collect::<Result<Vec<_>>>()?;
    Ok(UserSettingsReport {
        users: users.to_vec(),
        specific,
        shared,
        shared_overall: run.series,
        shared_order: order,
    })
}
