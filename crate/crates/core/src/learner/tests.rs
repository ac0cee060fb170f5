use super::*;
use crate::model::MainModelKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_mels: 4,
        channels: 4,
        d_model: 8,
        n_heads: 2,
        ff_hidden: 8,
        encoder_layers: 1,
        main_model: MainModelKind::AttentionEncoder,
        seed: 7,
        ..ModelConfig::default()
    }
}

pub(crate) fn features(rng: &mut impl Rng) -> Arc<FeatureMatrix> {
    let v = (0..4 * 40).map(|_| rng.gen_range(-1.5f32..1.5)).collect();
    Arc::new(FeatureMatrix::new(4, 40, v, 100.0).unwrap())
}

fn sample(rng: &mut impl Rng, t: u64, y: u8) -> OnlineSample {
    OnlineSample::new(features(rng), y, t, Origin::Simulated).unwrap()
}

fn stub(t: u64, y: u8) -> OnlineSample {
    let x = Arc::new(FeatureMatrix::new(1, 1, vec![0.0], 1.0).unwrap());
    OnlineSample::new(x, y, t, Origin::Simulated).unwrap()
}

fn buffer_of(items: &[(u64, u8)], capacity: usize) -> ReplayBuffer {
    let mut b = ReplayBuffer::new(capacity);
    for &(t, y) in items {
        b.push(stub(t, y)).unwrap();
    }
    b
}

#[test]
fn decay_weight_examples() {
    assert_eq!(decay_weight(1.0, 0.9, 0).unwrap(), 1.0);
    assert_eq!(decay_weight(1.0, 0.5, 2).unwrap(), 0.25);
    assert!((decay_weight(2.0, 0.9, 1).unwrap() - 1.8).abs() < 1e-15);
    assert!(matches!(decay_weight(1.0, 0.9, -1), Err(Error::Contract(_))));
}

#[test]
fn decay_weight_matches_repeated_multiplication() {
    for &w0 in &[0.1, 1.0, 2.5] {
        for &gamma in &[0.5, 0.9, 0.98, 0.999] {
            let mut expected = w0;
            for age in 0..400 {
                let got = decay_weight(w0, gamma, age).unwrap();
                assert!((got - expected).abs() <= 1e-12 * expected.max(1e-300), "{w0} {gamma} {age}");
                expected *= gamma;
            }
        }
    }
}

#[test]
fn origin_labels_are_enforced() {
    let x = stub(0, 0).x;
    assert!(OnlineSample::new(x.clone(), 0, 1, Origin::TapActivate).is_err());
    assert!(OnlineSample::new(x.clone(), 1, 1, Origin::TapInterrupt).is_err());
    assert!(OnlineSample::new(x.clone(), 1, 1, Origin::MinedNegative).is_err());
    assert!(OnlineSample::new(x.clone(), 2, 1, Origin::Simulated).is_err());
    assert!(OnlineSample::new(x, 1, 1, Origin::AutoConfirmed).is_ok());
}

#[test]
fn config_validation() {
    for cfg in [
        LearnerConfig { gamma: 1.0, ..LearnerConfig::default() },
        LearnerConfig { gamma: 0.0, ..LearnerConfig::default() },
        LearnerConfig { batch_size: 0, ..LearnerConfig::default() },
        LearnerConfig { capacity: 0, ..LearnerConfig::default() },
    ] {
        assert!(cfg.validate().unwrap_err().is_config());
    }
}

#[test]
fn balanced_batch_example() {
    let buf = buffer_of(&[(1, 1), (2, 0), (3, 1)], 8);
    let cfg = LearnerConfig { batch_size: 2, ..LearnerConfig::default() };
    let got = draw_replay_batch(&buf, 3, &cfg).unwrap();
    let ts: Vec<_> = got.iter().map(|d| (d.t, d.y)).collect();
    assert_eq!(ts, vec![(3, 1), (2, 0)]);
    assert_eq!(got[0].weight, 1.0);
    assert_eq!(got[1].weight, 0.98);
}

#[test]
fn single_class_buffer_backfills() {
    let buf = buffer_of(&[(1, 1), (2, 1), (3, 1), (4, 1), (5, 1)], 8);
    let cfg = LearnerConfig { batch_size: 4, ..LearnerConfig::default() };
    let got = draw_replay_batch(&buf, 5, &cfg).unwrap();
    assert_eq!(got.iter().map(|d| d.t).collect::<Vec<_>>(), vec![5, 4, 3, 2]);
}

#[test]
fn unbalanced_batch_takes_newest() {
    let buf = buffer_of(&[(1, 1), (2, 1), (3, 1), (4, 0), (5, 1)], 8);
    let cfg = LearnerConfig { batch_size: 3, label_balance: false, ..LearnerConfig::default() };
    let got = draw_replay_batch(&buf, 5, &cfg).unwrap();
    assert_eq!(got.iter().map(|d| d.t).collect::<Vec<_>>(), vec![5, 4, 3]);
}

#[test]
fn buffer_rejects_out_of_order() {
    let mut buf = buffer_of(&[(3, 1)], 4);
    assert!(buf.push(stub(3, 0)).is_err());
    assert!(buf.push(stub(2, 0)).is_err());
}

proptest! {
    #[test]
    fn weight_strictly_decreases_with_age(w0 in 0.01f64..10.0, gamma in 0.01f64..0.999, age in 0i64..500) {
        let a = decay_weight(w0, gamma, age).unwrap();
        let b = decay_weight(w0, gamma, age + 1).unwrap();
        prop_assume!(b.is_normal());
        prop_assert!(b < a);
    }

    #[test]
    fn buffer_stays_ordered_and_bounded(gaps in prop::collection::vec(1u64..5, 0..200), capacity in 1usize..40) {
        let mut buf = ReplayBuffer::new(capacity);
        let mut t = 0;
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            buf.push(stub(t, (i % 3 == 0) as u8)).unwrap();
            prop_assert!(buf.len() <= capacity);
            prop_assert!(buf.entries().iter().zip(buf.entries().iter().skip(1)).all(|(a, b)| a.t < b.t));
            prop_assert_eq!(buf.entries().back().unwrap().t, t);
        }
        prop_assert_eq!(buf.len(), gaps.len().min(capacity));
    }

    #[test]
    fn balanced_batches_mix_labels(labels in prop::collection::vec(0u8..2, 1..60), batch in 2usize..12) {
        let items: Vec<(u64, u8)> = labels.iter().enumerate().map(|(i, &y)| (i as u64 + 1, y)).collect();
        let buf = buffer_of(&items, 64);
        let cfg = LearnerConfig { batch_size: batch, ..LearnerConfig::default() };
        let got = draw_replay_batch(&buf, items.len() as u64, &cfg).unwrap();
        prop_assert_eq!(got.len(), batch.min(items.len()));
        let both = labels.contains(&0) && labels.contains(&1);
        if both {
            prop_assert!(got.iter().any(|d| d.y == 0) && got.iter().any(|d| d.y == 1));
        }
        let mut ts: Vec<u64> = got.iter().map(|d| d.t).collect();
        ts.dedup();
        prop_assert_eq!(ts.len(), got.len());
        for d in &got {
            prop_assert_eq!(d.weight, decay_weight(1.0, 0.98, items.len() as i64 - d.t as i64).unwrap());
        }
    }
}

#[test]
fn observe_rejects_out_of_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut l = Learner::<f32>::new(tiny_model(), LearnerConfig::default()).unwrap();
    l.observe(sample(&mut rng, 5, 1)).unwrap();
    assert!(matches!(l.observe(sample(&mut rng, 5, 0)), Err(Error::Contract(_))));
    assert!(matches!(l.observe(sample(&mut rng, 4, 0)), Err(Error::Contract(_))));
}

#[test]
fn zero_replay_steps_freeze_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = LearnerConfig { replay_steps: 0, ..LearnerConfig::default() };
    let mut l = Learner::<f32>::new(tiny_model(), cfg).unwrap();
    let before = l.model().params().clone();
    for t in 0..10 {
        let r = l.observe(sample(&mut rng, t, (t % 2) as u8)).unwrap();
        assert!(r.loss.is_none() && r.batch_ts.is_empty());
    }
    assert_eq!(l.model().params(), &before);
    assert_eq!(l.buffer().len(), 10);
}

#[test]
fn prediction_ignores_current_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut l = Learner::<f32>::new(tiny_model(), LearnerConfig::default()).unwrap();
    for t in 0..25 {
        let y = rng.gen_range(0..2);
        let s = sample(&mut rng, t, y);
        let mut flipped = l.clone();
        let a = l.observe(s.clone()).unwrap();
        let b = flipped.observe(s.with_label(1 - s.y)).unwrap();
        assert_eq!(a.p.to_bits(), b.p.to_bits());
    }
}

#[test]
fn incoming_sample_leads_the_first_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for batch_size in [1, 2, 8] {
        let cfg = LearnerConfig { batch_size, ..LearnerConfig::default() };
        let mut l = Learner::<f32>::new(tiny_model(), cfg).unwrap();
        for t in 0..12 {
            let y = (t % 3 == 0) as u8;
            let r = l.observe(sample(&mut rng, t, y)).unwrap();
            assert_eq!(r.batch_ts[0], t);
            assert_eq!(r.batch_weights[0], 1.0);
            assert_eq!(r.batch_ts.len(), batch_size.min(t as usize + 1));
        }
    }
}

#[test]
fn capacity_one_trains_on_current_sample_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LearnerConfig { capacity: 1, replay_steps: 1, ..LearnerConfig::default() };
    let mut l = Learner::<f32>::new(tiny_model(), cfg).unwrap();
    let mut reference = Model::<f32>::new(tiny_model()).unwrap();
    for t in 0..8 {
        let s = sample(&mut rng, t, (t % 2) as u8);
        let r = l.observe(s.clone()).unwrap();
        assert_eq!(r.batch_ts, vec![t]);
        assert_eq!(r.p, reference.predict(&s.x).unwrap());
        reference.train_step(&[TrainExample { x: &s.x, y: s.y, weight: 1.0 }]).unwrap();
    }
    assert_eq!(l.model().params(), reference.params());
}

#[test]
fn observe_matches_plain_train_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = LearnerConfig { batch_size: 4, ..LearnerConfig::default() };
    let mut l = Learner::<f32>::new(tiny_model(), cfg.clone()).unwrap();
    let mut reference = Model::<f32>::new(tiny_model()).unwrap();
    let mut seen: Vec<OnlineSample> = Vec::new();
    for t in 0..10 {
        let s = sample(&mut rng, t, (t % 3 == 1) as u8);
        let r = l.observe(s.clone()).unwrap();
        seen.push(s);
        let batch: Vec<TrainExample> = r
            .batch_ts
            .iter()
            .zip(&r.batch_weights)
            .map(|(bt, w)| {
                let e = &seen[*bt as usize];
                TrainExample { x: &e.x, y: e.y, weight: *w }
            })
            .collect();
        for _ in 0..cfg.replay_steps {
            reference.train_step(&batch).unwrap();
        }
    }
    assert_eq!(l.model().params(), reference.params());
}

#[test]
fn repeated_positive_stream_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = features(&mut rng);
    let mut l = Learner::<f32>::new(tiny_model(), LearnerConfig::default()).unwrap();
    let ps: Vec<f64> = (0..50)
        .map(|t| l.observe(OnlineSample::new(x.clone(), 1, t, Origin::Simulated).unwrap()).unwrap().p)
        .collect();
    let drops = ps[10..].windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops * 20 <= ps.len() - 10, "{drops} decreases in {:?}", &ps[10..]);
    assert!(ps[49] > ps[0]);
}

#[test]
fn checkpoint_resume_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let stream: Vec<_> = (0..16).map(|t| sample(&mut rng, t * 2, (t % 3 == 0) as u8)).collect();
    let cfg = LearnerConfig { batch_size: 4, capacity: 6, ..LearnerConfig::default() };
    let mut full = Learner::<f32>::new(tiny_model(), cfg.clone()).unwrap();
    let mut first = Learner::<f32>::new(tiny_model(), cfg).unwrap();
    let expected: Vec<_> = stream.iter().map(|s| full.observe(s.clone()).unwrap()).collect();
    for s in &stream[..9] {
        first.observe(s.clone()).unwrap();
    }
    let path = dir.path().join("learner.json");
    save_learner(&first, &path).unwrap();
    let mut resumed: Learner<f32> = load_learner(&path).unwrap();
    assert_eq!(resumed.buffer(), first.buffer());
    assert!(resumed.observe(stream[8].clone()).is_err());
    for (s, want) in stream[9..].iter().zip(&expected[9..]) {
        assert_eq!(&resumed.observe(s.clone()).unwrap(), want);
    }
}

#[test]
fn record_log_round_trip() {
    let rec = PredictionRecord {
        t: 3,
        p: 0.25,
        y: 1,
        origin: Origin::TapActivate,
        loss: Some(0.7),
        batch_ts: vec![3, 1],
        batch_weights: vec![1.0, 0.9604],
    };
    let mut out = Vec::new();
    write_records(&mut out, &[rec.clone(), PredictionRecord::scored(4, 0.9, 0)]).unwrap();
    let back = read_records(&out[..]).unwrap();
    assert_eq!(back[0], rec);
    assert_eq!(back[1].t, 4);
    let minimal = read_records(&b"{\"t\":1,\"p\":0.5,\"y\":0}\n"[..]).unwrap();
    assert_eq!(minimal[0].origin, Origin::Simulated);
}

#[test]
fn record_log_errors_name_the_line() {
    let text = b"{\"t\":1,\"p\":0.5,\"y\":0}\n{\"t\":2,\"p\":1.5,\"y\":0}\n";
    let err = read_records(&text[..]).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let err = read_records(&b"{\"t\":1}\n"[..]).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}
