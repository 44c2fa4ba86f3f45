use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smokesal_core::eval::*;
use smokesal_core::image::{Gray8, Mask, Plane};

#[test]
fn f_measure_fixtures() {
    assert_eq!(f_measure(1.0, 1.0, BETA2), 1.0);
    let expect = 1.3 * 0.9 * 0.6 / (0.3 * 0.9 + 0.6);
    assert!((f_measure(0.9, 0.6, BETA2) - 0.806_896_551_7).abs() < 1e-6);
    assert!((f_measure(0.9, 0.6, BETA2) - expect).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let v: f64 = rng.gen_range(0.001..1.0);
        assert!((f_measure(v, v, BETA2) - v).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn f_measure_between_precision_and_recall(p in 1e-6f64..=1.0, r in 1e-6f64..=1.0) {
        let f = f_measure(p, r, BETA2);
        prop_assert!(f >= p.min(r) * (1.0 - 1e-12) && f <= p.max(r) * (1.0 + 1e-12));
    }

    #[test]
    fn overlap_is_symmetric(a in prop::collection::vec(any::<bool>(), 16), b in prop::collection::vec(any::<bool>(), 16)) {
        let ma = Plane::from_vec(4, 4, a).unwrap();
        let mb = Plane::from_vec(4, 4, b).unwrap();
        let o = overlap(&ma, &mb).unwrap();
        prop_assert_eq!(o, overlap(&mb, &ma).unwrap());
        prop_assert_eq!(o == 1.0, ma == mb);
    }
}

fn brute_force_point(map: &Gray8, gt: &Mask, t: u8) -> (f64, f64) {
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for i in 0..map.data.len() {
        let pred = map.data[i] > t;
        match (pred, gt.data[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    (p, tp as f64 / (tp + fnn) as f64)
}

#[test]
fn pr_curve_matches_exhaustive_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let map = Plane::from_fn(4, 4, |_, _| rng.gen::<u8>());
        let mut gt = Plane::from_fn(4, 4, |_, _| rng.gen_bool(0.4));
        gt.set(0, 0, true);
        let curve = pr_curve(&[map.clone()], &[gt.clone()], Averaging::Micro).unwrap();
        for p in &curve.points {
            let (bp, br) = brute_force_point(&map, &gt, p.threshold);
            assert_eq!((p.precision, p.recall), (bp, br), "threshold {}", p.threshold);
        }
        let mut last = f64::INFINITY;
        for p in &curve.points {
            assert!(p.recall <= last);
            assert!((0.0..=1.0).contains(&p.precision));
            last = p.recall;
        }
    }
}

#[test]
fn zero_map_has_zero_recall() {
    let gt = Plane::from_fn(4, 4, |x, _| x < 2);
    let curve = pr_curve(&[Plane::filled(4, 4, 0u8)], &[gt], Averaging::Micro).unwrap();
    assert!(curve.points.iter().all(|p| p.recall == 0.0));
}

#[test]
fn macro_averaging_skips_images_without_smoke() {
    let gt1 = Plane::from_fn(2, 2, |x, _| x == 0);
    let gt2 = Plane::filled(2, 2, false);
    let m1 = gt1.to_gray8();
    let m2 = Plane::filled(2, 2, 255u8);
    let c = pr_curve(&[m1, m2], &[gt1, gt2], Averaging::Macro).unwrap();
    assert_eq!(c.points[0].precision, 1.0);
    assert_eq!(c.points[0].recall, 1.0);
}

#[test]
fn adaptive_threshold_is_twice_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(1..200);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let t = adaptive_threshold(&values, 1.0);
        let expect = 2.0 * mean;
        assert!((t - expect).abs() <= f64::EPSILON * expect, "{t} vs {expect}");
    }
    assert_eq!(adaptive_threshold(&[0.7; 4], 1.0), 1.0);
}

#[test]
fn segmentation_invariant_under_positive_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let values: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..0.25)).collect();
        let base = binarize(&values, 8, 8, adaptive_threshold(&values, 1.0));
        for k in [0.25, 0.5, 2.0] {
            let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
            let seg = binarize(&scaled, 8, 8, adaptive_threshold(&scaled, 1.0));
            assert_eq!(seg, base);
        }
    }
}

#[test]
fn perfect_predictions_score_one() {
    let gts: Vec<Mask> = (0..4).map(|i| Plane::from_fn(8, 8, |x, y| x + y < 3 + 2 * i)).collect();
    let maps: Vec<Gray8> = gts.iter().map(|g| g.to_gray8()).collect();
    let items: Vec<EvalItem> = gts
        .iter()
        .zip(&maps)
        .map(|(g, m)| EvalItem { id: "x", map: m, gt: g, existence: Some((0.9, 1)) })
        .collect();
    let r = evaluate(&items).unwrap();
    assert_eq!(r.aggregate.f_measure, 1.0);
    assert_eq!(r.aggregate.overlap, 1.0);
    assert_eq!(r.aggregate.existence_accuracy, Some(1.0));
}

#[test]
fn pr_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let gt = Plane::from_fn(4, 4, |x, _| x < 2);
    let curve = pr_curve(&[gt.to_gray8()], &[gt], Averaging::Micro).unwrap();
    let path = dir.path().join("pr.csv");
    write_pr_csv(&path, &curve, Some("{\"seed\":1}")).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# provenance:"));
    assert_eq!(lines[1], "threshold,precision,recall");
    assert_eq!(lines.len(), 2 + 256);
}
