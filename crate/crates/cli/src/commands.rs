use clap::Args;
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tapadapt::agent::{read_log, write_log, LogEvent};
use tapadapt::audio::pcm::{read_wav, write_wav};
use tapadapt::audio::{AudioRing, SharedRing, MODEL_RATE, SOURCE_RATE};
use tapadapt::eval::{sli as sli_index, EmbeddingWindowSet};
use tapadapt::eval::{brier, f1, windowed_metrics, MetricsSeries};
use tapadapt::learner::{load_learner, read_records, save_learner, write_records, Learner};
use tapadapt::miner::{mine as mine_log, window_at_tick, MinerConfig};
use tapadapt::model::{load_checkpoint, save_checkpoint, Model};
use tapadapt::runner::gateway::Gateway;
use tapadapt::runner::{
    ablation_grid, manifest_features, run_experiment_with_runs, run_serialized, run_session, spawn_ingestion,
    write_jsonl, write_simulation, Ablations, AudioInput, ExperimentConfig, ScriptedUser, Session, SessionRun,
    TapPlan, MANIFEST_NAME,
};
use tapadapt::simulator::{LiveConfig, SimAudioSource};
use tapadapt::{Error, Result};

fn output_dir(arg: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = arg
        .or_else(|| cfg.io.output.clone())
        .ok_or_else(|| Error::Config("an output directory is required (--out or io.output)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: impl AsRef<Path>, value: &impl serde::Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_series(path: impl AsRef<Path>, series: &MetricsSeries) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    series.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of windows; defaults to `samples`.
    #[arg(long)]
    n: Option<usize>,
    /// Defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `io.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of background recordings, one subdirectory per category.
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
}

pub fn simulate(mut cfg: ExperimentConfig, a: SimulateArgs) -> Result<()> {
    if a.corpus_dir.is_some() {
        cfg.simulator.corpus_dir = a.corpus_dir;
    }
    let dir = output_dir(a.out, &cfg)?;
    let entries = write_simulation(&dir, a.n.unwrap_or(cfg.samples), a.seed.unwrap_or(cfg.seeds[0]), &cfg.simulator)?;
    let positives = entries.iter().filter(|e| e.label == 1).count();
    eprintln!(
        "wrote {} windows ({positives} positive) and {}",
        entries.len(),
        dir.join(MANIFEST_NAME).display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    /// Learn from a sample manifest instead of freshly simulated streams.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Start from a pretrained model checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue a saved learner (model, optimizer and replay buffer).
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// Save the learner after the run; with several seeds, the first seed's.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Also save the bare model checkpoint.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Run every ablation variant over every seed.
    #[arg(long, conflicts_with_all = ["manifest", "init", "resume"])]
    grid: bool,
    /// Output directory; defaults to `io.output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_init(path: Option<&PathBuf>) -> Result<Option<Model>> {
    path.map(load_checkpoint).transpose()
}

fn save_outputs(learner: &Learner, a: &LearnArgs) -> Result<()> {
    if let Some(p) = &a.save {
        save_learner(learner, p)?;
    }
    if let Some(p) = &a.save_model {
        save_checkpoint(learner.model(), p)?;
    }
    Ok(())
}

pub fn learn(cfg: ExperimentConfig, a: LearnArgs) -> Result<()> {
    let dir = output_dir(a.out.clone(), &cfg)?;
    let started = Instant::now();
    if a.grid {
        let grid = Ablations::grid();
        let report = ablation_grid(&cfg, &grid)?;
        for v in &report.variants {
            write_json(dir.join(format!("{}.json", v.name)), &v.report)?;
            eprintln!("{:<18} tail F1 {:.3}  tail Brier {:.3}", v.name, v.report.tail_f1, v.report.tail_brier);
        }
        write_json(dir.join("ablation.json"), &report)?;
    } else if let Some(manifest) = &a.manifest {
        let stream = manifest_features(manifest, &cfg.features)?;
        let learner = match (&a.resume, load_init(a.init.as_ref())?) {
            (Some(p), _) => load_learner(p)?,
            (None, Some(m)) => Learner::from_model(m, cfg.learner.clone())?,
            (None, None) => {
                let (m, l) = cfg.effective(cfg.ablations, cfg.seeds[0]);
                Learner::new(m, l)?
            }
        };
        let run = run_serialized(&stream, learner, cfg.metric_window)?;
        write_records(BufWriter::new(File::create(dir.join("records.jsonl"))?), &run.records)?;
        write_series(dir.join("series.csv"), &run.series)?;
        write_json(
            dir.join("report.json"),
            &json!({
                "samples": run.records.len(),
                "f1": f1(&run.records, 0.5),
                "brier": brier(&run.records),
                "series": run.series,
            }),
        )?;
        save_outputs(&run.learner, &a)?;
        eprintln!("learned {} samples", run.records.len());
    } else {
        if a.resume.is_some() {
            return Err(Error::Config("--resume needs --manifest".into()));
        }
        let init = load_init(a.init.as_ref())?;
        let (report, runs) = run_experiment_with_runs(&cfg, init.as_ref())?;
        for (run, seed) in runs.iter().zip(&cfg.seeds) {
            write_records(BufWriter::new(File::create(dir.join(format!("records_seed{seed}.jsonl")))?), &run.records)?;
            write_series(dir.join(format!("series_seed{seed}.csv")), &run.series)?;
        }
        write_json(dir.join("report.json"), &report)?;
        save_outputs(&runs[0].learner, &a)?;
        eprintln!("tail F1 {:.3}  tail Brier {:.3}", report.tail_f1, report.tail_brier);
    }
    eprintln!("wall-clock {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long)]
    log: PathBuf,
    /// R4 negatives per mined positive.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest.
    #[arg(long)]
    out: PathBuf,
    /// Mine only the last tap activation under R1.
    #[arg(long)]
    latest_only: bool,
    #[arg(long, default_value_t = 20)]
    exclusion: u64,
    /// Session recording; the mined windows are written next to the manifest.
    #[arg(long)]
    audio: Option<PathBuf>,
}

pub fn mine(cfg: ExperimentConfig, a: MineArgs) -> Result<()> {
    let log = read_log(open(&a.log)?)?;
    let mcfg = MinerConfig {
        ratio: a.ratio,
        exclusion: a.exclusion,
        threshold: cfg.agent.threshold,
        latest_only: a.latest_only,
        seed: a.seed,
    };
    let set = mine_log(&log, &mcfg)?;
    let mut manifest = set.manifest(1);
    if let Some(audio) = &a.audio {
        let (rate, pcm) = read_wav(audio)?;
        let chunk = (rate as f64 * tapadapt::agent::TICK_SECONDS).round() as usize;
        let dir = a.out.parent().unwrap_or(Path::new(".")).to_path_buf();
        for m in &mut manifest {
            let window = window_at_tick(&pcm, rate, chunk, m.window_tick)?;
            let name = format!("mined_{:05}.wav", m.t);
            write_wav(dir.join(&name), MODEL_RATE, window.samples())?;
            m.wav = Some(name);
        }
    }
    write_jsonl(&a.out, &manifest)?;
    let rules = [
        tapadapt::miner::Rule::R1,
        tapadapt::miner::Rule::R2,
        tapadapt::miner::Rule::R3,
        tapadapt::miner::Rule::R4,
    ];
    let counts: Vec<String> = rules.iter().map(|&r| format!("{r:?} {}", set.count(r))).collect();
    eprintln!("mined {} samples: {}", set.samples.len(), counts.join(", "));
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction record log (JSON lines) from `learn` or `serve`.
    #[arg(long)]
    records: PathBuf,
    /// Records per window; defaults to `metric_window`.
    #[arg(long)]
    window: Option<usize>,
    /// Directory for eval.json and series.csv; without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(cfg: ExperimentConfig, a: EvalArgs) -> Result<()> {
    let records = read_records(open(&a.records)?)?;
    let series = windowed_metrics(&records, a.window.unwrap_or(cfg.metric_window))?;
    let report = json!({
        "records": records.len(),
        "f1": f1(&records, 0.5),
        "brier": brier(&records),
        "series": series,
    });
    match a.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            write_json(dir.join("eval.json"), &report)?;
            write_series(dir.join("series.csv"), &series)?;
        }
        None => {
            let stdout = std::io::stdout();
            series.write_csv(stdout.lock())?;
        }
    }
    eprintln!(
        "{} records  F1 {:.3}  Brier {:.3}",
        records.len(),
        f1(&records, 0.5),
        brier(&records)
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SliArgs {
    /// JSON array of windows, each `{"pred": [[..]], "true": [[..]]}`.
    #[arg(long)]
    input: PathBuf,
    /// Bootstrap resamples for the confidence interval.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sli(a: SliArgs) -> Result<()> {
    let windows: Vec<EmbeddingWindowSet> = serde_json::from_reader(open(&a.input)?)
        .map_err(|e| Error::parse(a.input.display().to_string(), e.to_string()))?;
    let result = sli_index(&windows, a.bootstrap, a.seed)?;
    match &a.out {
        Some(p) => write_json(p, &result)?,
        None => println!("{}", serde_json::to_string_pretty(&result)?),
    }
    eprintln!(
        "SLI {:.6}  95% CI [{:.6}, {:.6}]  over {} windows",
        result.sli, result.ci_low, result.ci_high, result.n_windows
    );
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct SessionArgs {
    /// Ticks to run; defaults to `session.ticks`.
    #[arg(long)]
    ticks: Option<u64>,
    /// Pace multiplier; 0 runs as fast as possible.
    #[arg(long)]
    speed: Option<f64>,
    /// Seed of the simulated audio and the cold-start model.
    #[arg(long)]
    seed: Option<u64>,
    /// A 16 kHz WAV recording, or `-` for raw s16le mono PCM on stdin.
    #[arg(long)]
    audio: Option<String>,
    /// Sample rate of stdin PCM.
    #[arg(long, default_value_t = SOURCE_RATE)]
    pcm_rate: u32,
    /// Start from a pretrained model checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue a saved learner.
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// Save the learner when the session ends.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Interaction log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Prediction records of every learned sample.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Save the session audio as WAV, for `mine --audio`.
    #[arg(long)]
    record_audio: Option<PathBuf>,
}

impl SessionArgs {
    fn learner(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Learner> {
        if let Some(p) = &self.resume {
            return load_learner(p);
        }
        match load_init(self.init.as_ref())? {
            Some(m) => Learner::from_model(m, cfg.learner.clone()),
            None => {
                let (m, l) = cfg.effective(cfg.ablations, seed);
                Learner::new(m, l)
            }
        }
    }

    fn session(&self, cfg: &ExperimentConfig, taps: TapPlan) -> Result<Session> {
        let seed = self.seed.unwrap_or(cfg.seeds[0]);
        let learner = self.learner(cfg, seed)?;
        let input = match self.audio.as_deref() {
            None => AudioInput::Simulated(SimAudioSource::new(
                seed,
                cfg.simulator.clone(),
                LiveConfig {
                    rate: SOURCE_RATE,
                    duty_cycle: cfg.session.duty_cycle,
                },
            )?),
            Some("-") => {
                let ring = SharedRing::new(AudioRing::new(self.pcm_rate)?);
                let closed = spawn_ingestion(std::io::stdin(), ring.clone(), self.pcm_rate);
                AudioInput::Stream { ring, closed }
            }
            Some(path) => {
                let (rate, samples) = read_wav(path)?;
                AudioInput::Recording { samples, rate, pos: 0 }
            }
        };
        let mut session = Session::new(cfg, learner, input, taps)?;
        if self.record_audio.is_some() {
            session.record_audio();
        }
        Ok(session)
    }

    fn finish(&self, mut session: Session, run: &SessionRun) -> Result<()> {
        if let Some(p) = &self.log {
            write_log(BufWriter::new(File::create(p)?), &run.events)?;
        }
        if let Some(p) = &self.records {
            write_records(BufWriter::new(File::create(p)?), &run.records)?;
        }
        if let (Some(p), Some((rate, pcm))) = (&self.record_audio, session.take_recording()) {
            write_wav(p, rate, &pcm)?;
        }
        if let Some(p) = &self.save {
            save_learner(session.learner(), p)?;
        }
        let mut times: Vec<f64> = run.compute.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        times.sort_by(f64::total_cmp);
        let p99 = times.get((times.len() * 99).div_ceil(100).saturating_sub(1)).copied().unwrap_or(0.0);
        eprintln!("{}", serde_json::to_string(&run.report)?);
        eprintln!("tick compute p99 {p99:.1} ms");
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Gateway listen address, e.g. 127.0.0.1:7878; none runs headless.
    #[arg(long)]
    gateway: Option<String>,
    /// Take taps only from the gateway.
    #[arg(long)]
    no_script: bool,
}

pub fn serve(cfg: ExperimentConfig, a: ServeArgs) -> Result<()> {
    let scripted = cfg.session.scripted && !a.no_script && a.session.audio.is_none();
    let taps = if scripted {
        TapPlan::Scripted(ScriptedUser::new(cfg.session.patience, cfg.session.interrupt_after))
    } else {
        TapPlan::None
    };
    let mut session = a.session.session(&cfg, taps)?;
    let gateway = a
        .gateway
        .or_else(|| cfg.session.gateway.clone())
        .map(|addr| Gateway::bind(&addr))
        .transpose()?;
    if let Some(g) = &gateway {
        eprintln!("gateway listening on {}", g.local_addr());
    }
    let ticks = a.session.ticks.unwrap_or(cfg.session.ticks);
    let speed = a.session.speed.unwrap_or(cfg.session.speed);
    let run = run_session(&mut session, ticks, speed, gateway.as_ref())?;
    a.session.finish(session, &run)
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Recorded interaction log whose taps are replayed.
    #[arg(long = "from")]
    from: PathBuf,
    /// Exit with a data error when the replay diverges from the recording.
    #[arg(long)]
    check: bool,
}

pub fn replay(cfg: ExperimentConfig, a: ReplayArgs) -> Result<()> {
    let recorded: Vec<LogEvent> = read_log(open(&a.from)?)?;
    let mut session = a.session.session(&cfg, TapPlan::from_log(&recorded))?;
    let ticks = a
        .session
        .ticks
        .unwrap_or_else(|| recorded.last().map_or(cfg.session.ticks, |e| e.tick + 1));
    let speed = a.session.speed.unwrap_or(0.0);
    let run = run_session(&mut session, ticks, speed, None)?;
    let divergence = run.events.iter().zip(&recorded).position(|(x, y)| x != y).or_else(|| {
        (run.events.len() != recorded.len()).then(|| run.events.len().min(recorded.len()))
    });
    a.session.finish(session, &run)?;
    match divergence {
        None => {
            eprintln!("replay matches the recorded log ({} events)", recorded.len());
            Ok(())
        }
        Some(i) => {
            let msg = format!("replay diverges from the recorded log at event {i}");
            eprintln!("{msg}");
            if a.check {
                Err(Error::Validation(msg))
            } else {
                Ok(())
            }
        }
    }
}
