use super::*;
use crate::agent::EventKind;
use crate::audio::FeatureMatrix;
use crate::learner::{load_learner, save_learner, Learner};
use crate::model::save_checkpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Small enough for many live ticks in a unit test.
pub(crate) fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.features.n_mels = 8;
    cfg.model = ModelConfig {
        n_mels: 8,
        tcn_blocks: 2,
        dilations: vec![1, 2],
        channels: 4,
        d_model: 8,
        n_heads: 2,
        ff_hidden: 8,
        encoder_layers: 1,
        ..ModelConfig::default()
    };
    cfg.learner.batch_size = 4;
    cfg.seeds = vec![0];
    cfg.session.speed = 0.0;
    cfg
}

fn toy_stream(n: usize, seed: u64) -> Vec<LabeledFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = rng.gen_range(0..2u8);
            let v = (0..4 * 40)
                .map(|i| rng.gen_range(-1.0f32..1.0) + if y == 1 && i % 40 > 30 { 1.0 } else { 0.0 })
                .collect();
            LabeledFeatures {
                x: Arc::new(FeatureMatrix::new(4, 40, v, 100.0).unwrap()),
                y,
            }
        })
        .collect()
}

fn toy_model(seed: u64) -> ModelConfig {
    ModelConfig {
        n_mels: 4,
        channels: 4,
        d_model: 8,
        n_heads: 2,
        ff_hidden: 8,
        encoder_layers: 1,
        seed,
        ..ModelConfig::default()
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = tiny_config();
    let text = cfg.to_toml();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    let partial = ExperimentConfig::from_toml("samples = 50\n[learner]\ngamma = 0.9\n").unwrap();
    assert_eq!(partial.samples, 50);
    assert_eq!(partial.learner.gamma, 0.9);
    assert_eq!(partial.learner.batch_size, 8);
}

#[test]
fn bad_configs_are_config_errors() {
    for text in [
        "[learner]\ngamma = 1.5\n",
        "[model]\nn_mels = 32\n",
        "seeds = []\n",
        "metric_window = 0\n",
        "samples = \"many\"\n",
        "[agent]\nresponse_ticks = 0\n",
    ] {
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.is_config(), "{text}: {err}");
    }
}

#[test]
fn each_ablation_flag_changes_only_its_component() {
    let base = ExperimentConfig::default();
    let (m0, l0) = base.effective(Ablations::default(), 0);
    for (name, a) in Ablations::grid().into_iter().skip(1) {
        let (m, l) = base.effective(a, 0);
        let changed = [
            m.dilations != m0.dilations,
            l.capacity != l0.capacity || l.replay_steps != l0.replay_steps,
            m.main_model != m0.main_model,
            l.label_balance != l0.label_balance,
        ];
        assert_eq!(changed.iter().filter(|c| **c).count(), 1, "{name}");
    }
    let (m, _) = base.effective(Ablations { dilation: false, ..Default::default() }, 0);
    assert_eq!(m.dilations, vec![1, 1, 1, 1]);
}

#[test]
fn serialized_run_yields_one_point_per_hundred() {
    let stream = toy_stream(1000, 1);
    let run = run_serialized(&stream, Learner::new(toy_model(0), LearnerConfig::default()).unwrap(), 100).unwrap();
    assert_eq!(run.series.points.len(), 10);
    assert_eq!(run.records.len(), 1000);
    assert!(run.records.iter().enumerate().all(|(i, r)| r.t == i as u64 + 1 && r.y == stream[i].y));
}

#[test]
fn replay_off_matches_capacity_one() {
    let stream = toy_stream(60, 2);
    let cfg = ExperimentConfig::default();
    let (_, l) = cfg.effective(Ablations { replay: false, ..Default::default() }, 0);
    let a = run_serialized(&stream, Learner::new(toy_model(0), l).unwrap(), 20).unwrap();
    let manual = LearnerConfig {
        capacity: 1,
        replay_steps: 1,
        ..LearnerConfig::default()
    };
    let b = run_serialized(&stream, Learner::new(toy_model(0), manual).unwrap(), 20).unwrap();
    assert_eq!(a.records, b.records);
    assert!(a.records.iter().all(|r| r.batch_ts == vec![r.t]));
}

#[test]
fn checkpoint_start_only_changes_initial_parameters() {
    let stream = toy_stream(40, 3);
    let warm = run_serialized(&stream[..20], Learner::new(toy_model(0), LearnerConfig::default()).unwrap(), 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(warm.learner.model(), &path).unwrap();
    let pretrained: crate::model::Model = crate::model::load_checkpoint(&path).unwrap();

    let from_ckpt = run_serialized(&stream[20..], Learner::from_model(pretrained.clone(), LearnerConfig::default()).unwrap(), 10).unwrap();
    let same = run_serialized(&stream[20..], Learner::from_model(warm.learner.model().clone(), LearnerConfig::default()).unwrap(), 10).unwrap();
    let cold = run_serialized(&stream[20..], Learner::new(toy_model(0), LearnerConfig::default()).unwrap(), 10).unwrap();
    assert_eq!(from_ckpt.records, same.records);
    assert_ne!(from_ckpt.records[0].p, cold.records[0].p);
    assert_eq!(from_ckpt.records[0].p, pretrained.predict(&stream[20].x).unwrap());
}

#[test]
fn learner_checkpoint_continues_like_an_uninterrupted_run() {
    let stream = toy_stream(50, 4);
    let whole = run_serialized(&stream, Learner::new(toy_model(1), LearnerConfig::default()).unwrap(), 10).unwrap();
    let first = run_serialized(&stream[..25], Learner::new(toy_model(1), LearnerConfig::default()).unwrap(), 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("learner.json");
    save_learner(&first.learner, &path).unwrap();
    let second = run_serialized(&stream[25..], load_learner(&path).unwrap(), 10).unwrap();
    let joined: Vec<_> = first.records.iter().chain(&second.records).cloned().collect();
    assert_eq!(joined, whole.records);
}

#[test]
fn failures_name_the_step() {
    let mut stream = toy_stream(10, 5);
    stream[6].x = Arc::new(FeatureMatrix::new(3, 40, vec![0.0; 120], 100.0).unwrap());
    let err = run_serialized(&stream, Learner::new(toy_model(0), LearnerConfig::default()).unwrap(), 5).unwrap_err();
    assert!(matches!(err, Error::AtStep { step: 6, .. }), "{err}");
}

#[test]
fn experiment_reports_are_reproducible() {
    let mut cfg = tiny_config();
    cfg.samples = 30;
    cfg.metric_window = 10;
    cfg.seeds = vec![3, 4];
    let a = run_experiment(&cfg, None).unwrap();
    let b = run_experiment(&cfg, None).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.seeds.len(), 2);
    assert_eq!(a.aggregate.len(), 3);
    let single = ExperimentConfig {
        seeds: vec![4],
        threads: 1,
        ..cfg.clone()
    };
    assert_eq!(run_experiment(&single, None).unwrap().seeds[0], a.seeds[1]);
}

#[test]
fn ablation_grid_shares_streams() {
    let mut cfg = tiny_config();
    cfg.samples = 20;
    cfg.metric_window = 10;
    let grid = Ablations::grid();
    let r = ablation_grid(&cfg, &grid[..2]).unwrap();
    assert_eq!(r.variants.len(), 2);
    let full_alone = run_experiment(&cfg, None).unwrap();
    assert_eq!(r.variant("full").unwrap().seeds, full_alone.seeds);
    assert_eq!(r.variant("no_dilation").unwrap().config.ablations.dilation, false);
}

#[test]
fn user_settings_cover_every_user() {
    let mut cfg = tiny_config();
    cfg.samples = 20;
    cfg.metric_window = 10;
    let r = user_settings(&cfg, &[10, 11, 12], 5).unwrap();
    assert_eq!(r.specific.len(), 3);
    assert_eq!(r.shared.len(), 3);
    assert_eq!(r.shared_order.len(), 60);
    assert!(r.shared.iter().all(|s| s.points.len() == 2));
    for u in 0..3 {
        assert_eq!(r.shared_order.iter().filter(|&&x| x == u).count(), 20);
    }
}

fn session_log(cfg: &ExperimentConfig, ticks: u64, seed: u64) -> SessionRun {
    let (m, l) = cfg.effective(cfg.ablations, seed);
    let mut s = Session::simulated(cfg, Learner::new(m, l).unwrap(), seed).unwrap();
    run_session(&mut s, ticks, cfg.session.speed, None).unwrap()
}

#[test]
fn sessions_are_deterministic_and_replayable() {
    let cfg = tiny_config();
    let a = session_log(&cfg, 400, 7);
    let b = session_log(&cfg, 400, 7);
    assert_eq!(a.events, b.events);
    assert_eq!(a.records, b.records);
    assert_eq!(a.report, b.report);
    assert!(a.report.tap_activations + a.report.interruptions > 0, "{:?}", a.report);

    // replay the recorded taps without the scripted user
    let (m, l) = cfg.effective(cfg.ablations, 7);
    let input = AudioInput::Simulated(
        crate::simulator::SimAudioSource::new(7, cfg.simulator.clone(), crate::simulator::LiveConfig::default()).unwrap(),
    );
    let mut s = Session::new(&cfg, Learner::new(m, l).unwrap(), input, TapPlan::from_log(&a.events)).unwrap();
    let c = run_session(&mut s, 400, 0.0, None).unwrap();
    assert_eq!(c.events, a.events);
}

#[test]
fn accelerated_and_unpaced_sessions_agree() {
    let mut cfg = tiny_config();
    let fast = session_log(&cfg, 30, 2);
    cfg.session.speed = 10.0;
    let started = std::time::Instant::now();
    let paced = session_log(&cfg, 30, 2);
    assert!(started.elapsed().as_secs_f64() >= 29.0 * 0.02);
    assert_eq!(fast.events, paced.events);
}

#[test]
fn session_log_alternates_states() {
    let cfg = tiny_config();
    let run = session_log(&cfg, 300, 9);
    let mut active = false;
    let mut ticks = std::collections::BTreeSet::new();
    for e in &run.events {
        match e.kind {
            EventKind::Prediction => {
                assert!(!active);
                ticks.insert(e.tick);
            }
            EventKind::ActivationAuto | EventKind::ActivationTap => {
                assert!(!active);
                active = true;
            }
            EventKind::InterruptionTap | EventKind::ResponseDone => {
                assert!(active);
                active = false;
            }
            EventKind::Frame => assert!(active),
        }
    }
    assert_eq!(run.report.ticks, 300);
    assert_eq!(run.report.samples_learned as usize, run.records.len());
    assert_eq!(run.compute.len(), 300);
}

#[test]
fn scripted_user_waits_out_its_patience() {
    let mut user = ScriptedUser::new(3, 2);
    let waiting = crate::agent::AgentState::Waiting;
    assert!(!user.decide(0, waiting, &[], true));
    assert!(!user.decide(1, waiting, &[], true));
    assert!(user.decide(2, waiting, &[], true));
    assert!(!user.decide(3, waiting, &[], false));
}

#[test]
fn scripted_user_interrupts_false_activations() {
    use crate::agent::{AgentEvent, AgentState};
    let mut user = ScriptedUser::new(3, 2);
    let act = AgentEvent {
        tick: 10,
        kind: EventKind::ActivationAuto,
        prob: Some(0.9),
        sample: None,
        window_tick: Some(10),
    };
    assert!(!user.decide(10, AgentState::Activated, &[act.clone()], false));
    assert!(!user.decide(11, AgentState::Activated, &[], false));
    assert!(user.decide(12, AgentState::Activated, &[], false));
    // a justified activation is left alone
    let mut user = ScriptedUser::new(3, 2);
    assert!(!user.decide(10, AgentState::Activated, &[act], true));
    for k in 11..25 {
        assert!(!user.decide(k, AgentState::Activated, &[], false));
    }
}

#[test]
fn recording_sessions_end_with_the_audio() {
    let cfg = tiny_config();
    let (m, l) = cfg.effective(cfg.ablations, 0);
    let samples = vec![0.0f32; 3200 * 12 + 100];
    let input = AudioInput::Recording {
        samples,
        rate: crate::audio::SOURCE_RATE,
        pos: 0,
    };
    let mut s = Session::new(&cfg, Learner::new(m, l).unwrap(), input, TapPlan::None).unwrap();
    let run = run_session(&mut s, 100, 0.0, None).unwrap();
    assert_eq!(run.report.ticks, 13);
}

#[test]
fn simulated_manifests_load_back_as_the_same_features() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let entries = write_simulation(dir.path(), 3, 11, &cfg.simulator).unwrap();
    assert_eq!(entries.len(), 3);
    let loaded = manifest_features(dir.path().join(MANIFEST_NAME), &cfg.features).unwrap();
    let direct = featurize(&crate::simulator::run_simulation(3, 11, &cfg.simulator).unwrap(), &cfg.features).unwrap();
    for (a, b) in loaded.iter().zip(&direct) {
        assert_eq!(a.y, b.y);
        let max_err = a.x.values().iter().zip(b.x.values()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        // 16-bit WAV quantization
        assert!(max_err < 0.05, "{max_err}");
    }
}

#[test]
fn manifests_report_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, "{\"t\":1,\"y\":1,\"origin\":\"tap_activate\",\"window_tick\":3}\n{\"y\":7}\n").unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(err.to_string().contains("m.jsonl:2"), "{err}");
    std::fs::write(&path, "{\"t\":1,\"y\":1,\"origin\":\"tap_activate\",\"window_tick\":3}\n").unwrap();
    let err = manifest_features(&path, &tiny_config().features).unwrap_err();
    assert!(matches!(err, Error::AtStep { step: 0, .. }), "{err}");
}

#[test]
fn session_logs_survive_a_file_round_trip() {
    let run = session_log(&tiny_config(), 200, 4);
    let mut buf = Vec::new();
    crate::agent::write_log(&mut buf, &run.events).unwrap();
    assert_eq!(crate::agent::read_log(&buf[..]).unwrap(), run.events);
    let mut buf = Vec::new();
    crate::learner::write_records(&mut buf, &run.records).unwrap();
    assert_eq!(crate::learner::read_records(&buf[..]).unwrap(), run.records);
}
