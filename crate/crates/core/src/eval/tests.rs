use super::*;
use proptest::prelude::*;
use rand::Rng;

fn records(rng: &mut ChaCha8Rng, n: usize) -> Vec<PredictionRecord> {
    (0..n)
        .map(|i| PredictionRecord::scored(i as u64 + 1, rng.gen::<f64>(), rng.gen_range(0..2)))
        .collect()
}

fn binarized(preds: &[u8], labels: &[u8]) -> Vec<PredictionRecord> {
    preds
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&p, &y))| PredictionRecord::scored(i as u64 + 1, if p == 1 { 0.9 } else { 0.1 }, y))
        .collect()
}

// Precision/recall route, independent of the 2tp form used by `f1`.
fn f1_oracle(r: &[PredictionRecord], threshold: f64) -> f64 {
    let pred_pos = r.iter().filter(|r| r.p > threshold).count() as f64;
    let actual_pos = r.iter().filter(|r| r.y == 1).count() as f64;
    let tp = r.iter().filter(|r| r.p > threshold && r.y == 1).count() as f64;
    if pred_pos == 0.0 || actual_pos == 0.0 {
        return 0.0;
    }
    let precision = tp / pred_pos;
    let recall = tp / actual_pos;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn brier_oracle(r: &[PredictionRecord]) -> f64 {
    let mut s = 0.0;
    for x in r {
        let e = x.p - if x.y == 1 { 1.0 } else { 0.0 };
        s += e * e;
    }
    s / r.len() as f64
}

#[test]
fn f1_examples() {
    assert_eq!(f1(&binarized(&[1, 1, 0, 0], &[1, 0, 1, 0]), 0.5), 0.5);
    assert_eq!(f1(&binarized(&[1, 0, 1], &[1, 0, 1]), 0.5), 1.0);
    assert_eq!(f1(&binarized(&[0, 1, 0], &[1, 0, 1]), 0.5), 0.0);
    assert_eq!(f1(&binarized(&[0, 0], &[0, 0]), 0.5), 0.0);
}

#[test]
fn threshold_is_strict() {
    let r = vec![PredictionRecord::scored(1, 0.5, 1)];
    assert_eq!(f1(&r, 0.5), 0.0);
}

#[test]
fn brier_examples() {
    assert_eq!(brier(&[PredictionRecord::scored(1, 1.0, 1)]), 0.0);
    let r = vec![PredictionRecord::scored(1, 0.5, 1), PredictionRecord::scored(2, 0.5, 0)];
    assert_eq!(brier(&r), 0.25);
}

#[test]
fn metrics_match_oracles_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.gen_range(1..200);
        let r = records(&mut rng, n);
        assert!((f1(&r, 0.5) - f1_oracle(&r, 0.5)).abs() <= 1e-12);
        assert!((brier(&r) - brier_oracle(&r)).abs() <= 1e-12);
    }
}

#[test]
fn windows_cover_full_chunks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = windowed_metrics(&records(&mut rng, 1000), 100).unwrap();
    assert_eq!(s.points.len(), 10);
    assert!(s.partial.is_none());
    assert!(s.points.iter().all(|p| p.count == 100));
    assert_eq!(s.points.iter().map(|p| p.window).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());

    let r = records(&mut rng, 150);
    let s = windowed_metrics(&r, 100).unwrap();
    assert_eq!(s.points.len(), 1);
    assert_eq!(s.points[0].brier, brier(&r[..100]));
    let tail = s.partial.unwrap();
    assert_eq!((tail.window, tail.count), (2, 50));
    assert_eq!(tail.brier, brier(&r[100..]));

    let s = windowed_metrics(&[], 100).unwrap();
    assert!(s.points.is_empty() && s.partial.is_none());
    assert!(windowed_metrics(&r, 0).unwrap_err().is_config());
}

#[test]
fn csv_lists_every_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = windowed_metrics(&records(&mut rng, 250), 100).unwrap();
    let mut out = Vec::new();
    s.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "window,count,f1,brier");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,50,"));
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_order_free(seed in any::<u64>(), n in 1usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = records(&mut rng, n);
        let (a, b) = (f1(&r, 0.5), brier(&r));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&b));
        r.reverse();
        r.rotate_left(n / 3);
        prop_assert_eq!(f1(&r, 0.5), a);
        prop_assert!((brier(&r) - b).abs() <= 1e-12);
    }

    #[test]
    fn interleave_is_an_order_preserving_permutation(
        lens in proptest::collection::vec(0usize..30, 1..8),
        seed in any::<u64>(),
    ) {
        let streams: Vec<Vec<(usize, usize)>> =
            lens.iter().enumerate().map(|(u, &n)| (0..n).map(|i| (u, i)).collect()).collect();
        let merged = interleave_shared(&streams, seed);
        prop_assert_eq!(merged.len(), lens.iter().sum::<usize>());
        let mut seen = vec![0usize; lens.len()];
        for m in &merged {
            prop_assert_eq!(m.item, (m.user, m.index));
            prop_assert_eq!(m.index, seen[m.user]);
            seen[m.user] += 1;
        }
        prop_assert_eq!(seen, lens);
    }
}

#[test]
fn single_stream_is_unchanged() {
    let merged = interleave_shared(&[vec!['a', 'b', 'c']], 9);
    assert_eq!(merged.iter().map(|m| m.item).collect::<String>(), "abc");
}

#[test]
fn two_by_two_reaches_all_six_merges() {
    let streams = vec![vec!["a1", "a2"], vec!["b1", "b2"]];
    let mut counts = std::collections::BTreeMap::new();
    for seed in 0..6000 {
        let m: Vec<_> = interleave_shared(&streams, seed).iter().map(|m| m.item).collect();
        let pos = |x| m.iter().position(|y| *y == x).unwrap();
        assert!(pos("a1") < pos("a2") && pos("b1") < pos("b2"));
        *counts.entry(m.join(",")).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 6);
    for c in counts.values() {
        assert!((*c as f64 - 1000.0).abs() < 120.0, "{counts:?}");
    }
}

#[test]
fn twenty_streams_of_one_hundred() {
    let streams: Vec<Vec<usize>> = (0..20).map(|u| (0..100).map(|i| u * 100 + i).collect()).collect();
    let merged = interleave_shared(&streams, 42);
    assert_eq!(merged.len(), 2000);
    let mut last = vec![None; 20];
    for m in &merged {
        assert_eq!(m.item, m.user * 100 + m.index);
        assert!(last[m.user].map_or(true, |l| l < m.index));
        last[m.user] = Some(m.index);
    }
    let mut items: Vec<_> = merged.iter().map(|m| m.item).collect();
    items.sort();
    assert_eq!(items, (0..2000).collect::<Vec<_>>());
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn pairwise_cos_examples() {
    let e1 = vec![1.0, 0.0, 0.0];
    let e2 = vec![0.0, 1.0, 0.0];
    assert_eq!(mean_pairwise_cos(&[e1.clone(), e1.clone()]).unwrap(), 1.0);
    assert_eq!(mean_pairwise_cos(&[e1.clone(), e2]).unwrap(), 0.0);
    assert!(mean_pairwise_cos(&[e1]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set: Vec<_> = (0..5).map(|_| unit(&mut rng, 16)).collect();
    let mut total = 0.0;
    let mut n = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            if i < j {
                let dot: f64 = (0..16).map(|k| set[i][k] * set[j][k]).sum();
                total += dot;
                n += 1.0;
            }
        }
    }
    assert!((mean_pairwise_cos(&set).unwrap() - total / n).abs() <= 1e-12);
}

/// Two unit vectors in the plane with cosine `c`.
fn pair(c: f64) -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![c, (1.0 - c * c).sqrt()]]
}

fn tracks(pred: &[f64], truth: &[f64]) -> Vec<EmbeddingWindowSet> {
    pred.iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (&p, &t))| EmbeddingWindowSet {
            window: i + 1,
            pred_embeddings: pair(p),
            true_embeddings: pair(t),
        })
        .collect()
}

#[test]
fn ols_slope_of_a_line() {
    let y: Vec<f64> = (1..=12).map(|x| 3.0 - 0.25 * x as f64).collect();
    assert!((ols_slope(&y) + 0.25).abs() < 1e-12);
    assert_eq!(ols_slope(&[4.0]), 0.0);
}

#[test]
fn constant_growth_recovers_delta() {
    for delta in [0.005, 0.01] {
        let pred: Vec<f64> = (0..30).map(|t| 0.2 + delta * t as f64).collect();
        let r = sli(&tracks(&pred, &[0.4; 30]), 1000, 1).unwrap();
        assert!((r.sli - delta).abs() < 1e-9, "{}", r.sli);
        assert!(r.d_series.iter().all(|d| (d - delta).abs() < 1e-9));
        assert_eq!(r.n_windows, 30);
        assert!(r.ci_low <= r.sli + 1e-12 && r.sli - 1e-12 <= r.ci_high);
    }
}

#[test]
fn identical_windows_give_zero() {
    let r = sli(&tracks(&[0.3; 8], &[0.3; 8]), 1000, 1).unwrap();
    assert_eq!((r.sli, r.ci_low, r.ci_high), (0.0, 0.0, 0.0));
    assert!(r.d_series.iter().all(|d| *d == 0.0));
}

#[test]
fn mirrored_track_has_no_trend() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // windows 2.. form a palindrome, so the cumulative sum mirrors itself
    let half: Vec<f64> = (0..15).map(|_| rng.gen_range(0.1..0.9)).collect();
    let mut pred = vec![0.5];
    pred.extend(&half);
    pred.extend(half.iter().rev());
    let r = sli(&tracks(&pred, &vec![0.5; pred.len()]), 200, 2).unwrap();
    assert!(r.sli.abs() < 1e-6, "{}", r.sli);
}

#[test]
fn monotone_tracks_keep_estimate_inside_ci() {
    for k in [0.0005, 0.002] {
        let pred: Vec<f64> = (0..20).map(|t| 0.1 + k * (t * t) as f64 / 4.0).collect();
        let r = sli(&tracks(&pred, &[0.5; 20]), 1000, 4).unwrap();
        assert!(r.ci_low <= r.sli && r.sli <= r.ci_high, "{r:?}");
        assert!(r.ci_low <= r.boot_median && r.boot_median <= r.ci_high);
    }
}

#[test]
fn sparse_windows_are_skipped() {
    let mut w = tracks(&[0.1, 0.2, 0.3, 0.4], &[0.5; 4]);
    w[1].pred_embeddings.truncate(1);
    let r = sli(&w, 100, 0).unwrap();
    assert_eq!(r.skipped, vec![2]);
    assert_eq!(r.n_windows, 3);
    w[2].true_embeddings.clear();
    assert!(matches!(sli(&w, 100, 0), Err(Error::Input(_))));
}

#[test]
fn malformed_embeddings_are_rejected() {
    let mut w = tracks(&[0.1, 0.2, 0.3], &[0.5; 3]);
    w[0].pred_embeddings[0] = vec![2.0, 0.0];
    assert!(matches!(sli(&w, 10, 0), Err(Error::Validation(_))));
    let mut w = tracks(&[0.1, 0.2, 0.3], &[0.5; 3]);
    w[2].true_embeddings[1] = vec![1.0, 0.0, 0.0];
    assert!(matches!(sli(&w, 10, 0), Err(Error::Validation(_))));
}

#[test]
fn json_window_format() {
    let text = r#"[{"window": 1, "pred": [[1.0, 0.0], [0.0, 1.0]], "true": [[1.0, 0.0], [1.0, 0.0]]}]"#;
    let w: Vec<EmbeddingWindowSet> = serde_json::from_str(text).unwrap();
    assert_eq!(w[0].true_embeddings.len(), 2);
    assert_eq!(mean_pairwise_cos(&w[0].true_embeddings).unwrap(), 1.0);
}

#[test]
fn bootstrap_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pred: Vec<f64> = (0..12).map(|_| rng.gen_range(0.1..0.9)).collect();
    let w = tracks(&pred, &[0.5; 12]);
    assert_eq!(sli(&w, 500, 7).unwrap(), sli(&w, 500, 7).unwrap());
    assert_ne!(sli(&w, 500, 7).unwrap().ci_low, sli(&w, 500, 8).unwrap().ci_low);
}
