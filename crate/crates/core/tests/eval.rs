mod common;

use ivftq::data::make_synthetic_clusters;
use ivftq::eval::{exact_topk, per_query_recall, recall_at_k, verify_amplification, verify_theorem1, IncrementalTruth, SeedStats, StateTag};
use ivftq::linalg::normalize_rows;
use ivftq::{design, generate_rotation, IndexConfig, IvfTqIndex};
use proptest::prelude::*;

use common::gaussian_rows;

/// Independent brute force: full sort of exact scores, lower id first on ties.
fn naive_topk(db: &[f32], queries: &[f32], d: usize, k: usize) -> Vec<Vec<u64>> {
    let db = normalize_rows(db, d).unwrap();
    let queries = normalize_rows(queries, d).unwrap();
    queries
        .chunks_exact(d)
        .map(|q| {
            let mut s: Vec<(f32, u64)> = db.chunks_exact(d).enumerate().map(|(i, x)| (ivftq::linalg::dot(q, x), i as u64)).collect();
            s.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            s.into_iter().take(k).map(|(_, i)| i).collect()
        })
        .collect()
}

#[test]
fn exact_topk_matches_full_sort() {
    for seed in 0..5 {
        let db = gaussian_rows(1000, 24, seed);
        let q = gaussian_rows(100, 24, seed + 100);
        assert_eq!(exact_topk(&db, &q, 24, 10).unwrap().ids, naive_topk(&db, &q, 24, 10));
    }
    // Heavy ties: duplicated rows must come back in id order.
    let row = gaussian_rows(1, 8, 1);
    let db: Vec<f32> = row.iter().cycle().take(8 * 20).copied().collect();
    assert_eq!(exact_topk(&db, &row, 8, 5).unwrap().ids[0], vec![0, 1, 2, 3, 4]);
}

#[test]
fn trivial_truths() {
    let db = gaussian_rows(1, 8, 3);
    let q = gaussian_rows(7, 8, 4);
    assert!(exact_topk(&db, &q, 8, 1).unwrap().ids.iter().all(|v| v == &vec![0]));
    let db = gaussian_rows(50, 8, 5);
    let t = exact_topk(&db, &db, 8, 1).unwrap();
    let own: Vec<Vec<u64>> = (0..50).map(|i| vec![i]).collect();
    assert_eq!(recall_at_k(&t.ids, &own, 1).unwrap(), 1.0);
    assert!(exact_topk(&[], &q, 8, 1).is_err());
}

#[test]
fn recall_cases() {
    let truth = vec![vec![1, 2, 3, 4]];
    assert_eq!(recall_at_k(&truth, &truth, 4).unwrap(), 1.0);
    assert_eq!(recall_at_k(&[vec![5, 6, 7, 8]], &truth, 4).unwrap(), 0.0);
    assert_eq!(recall_at_k(&[vec![1, 2, 9, 8]], &truth, 4).unwrap(), 0.5);
    assert!(recall_at_k(&[], &truth, 4).is_err());
}

#[test]
fn truth_is_tied_to_database_state() {
    let d = 16;
    let db = gaussian_rows(300, d, 1);
    let q = gaussian_rows(10, d, 2);
    let t = exact_topk(&db[..200 * d], &q, d, 5).unwrap();
    let unit = normalize_rows(&db, d).unwrap();
    t.check_state(StateTag::of(&unit[..200 * d], d)).unwrap();
    assert!(t.check_state(StateTag::of(&unit, d)).is_err());

    let mut inc = IncrementalTruth::new(&q, d, 5).unwrap();
    inc.extend(&db[..100 * d]).unwrap();
    inc.extend(&db[100 * d..]).unwrap();
    let full = exact_topk(&db, &q, d, 5).unwrap();
    assert_eq!(inc.snapshot(), full);
    assert_eq!(inc.state(), StateTag::of(&unit, d));
}

#[test]
fn seed_stats_conventions() {
    let s = SeedStats::from_values(&[1.0, 2.0, 3.0]);
    assert!((s.ci95 - 4.303 * 1.0 / 3f64.sqrt()).abs() < 1e-3);
    let p = SeedStats::paired(&[0.8, 0.7, 0.9], &[0.6, 0.65, 0.7]).unwrap();
    assert!((p.mean - (0.2 + 0.05 + 0.2) / 3.0).abs() < 1e-12);
    assert!(SeedStats::paired(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn theorem1_envelope_holds() {
    let rot = generate_rotation(128, 42).unwrap();
    let q4 = design(4, 128).unwrap();
    let r4 = verify_theorem1(&q4, &rot, 2000, 0.01, false, 1).unwrap();
    assert!(r4.holds);
    // RMS error sits at sqrt(D_4) ~ 0.10; the 99th percentile a little above.
    assert!((r4.mean_squared_error.sqrt() / r4.sqrt_distortion - 1.0).abs() < 0.05);
    assert!(r4.empirical_quantile < 1.5 * r4.sqrt_distortion && r4.bound - r4.empirical_quantile > 0.5);
    assert!((r4.concentration_term - 0.58).abs() < 0.01);

    let q8 = design(8, 128).unwrap();
    let r8 = verify_theorem1(&q8, &rot, 2000, 0.01, false, 1).unwrap();
    let predicted = q4.distortion() / q8.distortion();
    let measured = r4.mean_squared_error / r8.mean_squared_error;
    assert!((measured / predicted - 1.0).abs() < 0.15, "MSE ratio {measured} vs {predicted}");

    let loose = verify_theorem1(&q4, &rot, 2000, 0.5, false, 1).unwrap();
    assert!(loose.bound < r4.bound && loose.holds);
    assert_eq!(verify_theorem1(&q4, &rot, 2000, 0.01, false, 1).unwrap(), r4);
    assert!(verify_theorem1(&q4, &rot, 10, 1.5, false, 1).is_err());
}

#[test]
fn amplification_ratio_on_clusters() {
    let d = 128;
    let (rows, _) = make_synthetic_clusters(20_000, d, 8, 0.9, 42).unwrap();
    let unit = normalize_rows(&rows, d).unwrap();
    let (queries, _) = make_synthetic_clusters(50, d, 8, 0.9, 4242).unwrap();
    let ivf = IvfTqIndex::build(IndexConfig::new(d, 4, 8).with_seeds(42, 42), &unit).unwrap();
    let flat = IvfTqIndex::build(IndexConfig::flat(d, 4).with_seeds(42, 42), &unit).unwrap();
    let r = verify_amplification(&ivf, &flat, &unit, &queries).unwrap();
    assert!(r.max_identity_error < 1e-6);
    assert!((r.mean_residual_sq - r.predicted_ratio).abs() < 1e-6);
    assert!((r.measured_ratio - r.predicted_ratio).abs() <= 0.25 * r.predicted_ratio, "{} vs {}", r.measured_ratio, r.predicted_ratio);
    assert!((2.0f64 * (1.0 - 0.85) - 0.30).abs() < 1e-12);
}

#[test]
fn amplification_vanishes_when_data_are_centroids() {
    let d = 64;
    let (centres, _) = make_synthetic_clusters(8, d, 8, 0.0, 3).unwrap();
    let rows: Vec<f32> = centres.iter().cycle().take(8 * 40 * d).copied().collect();
    let ivf = IvfTqIndex::build(IndexConfig::new(d, 4, 8), &rows).unwrap();
    let flat = IvfTqIndex::build(IndexConfig::flat(d, 4), &rows).unwrap();
    let r = verify_amplification(&ivf, &flat, &rows, &gaussian_rows(10, d, 1)).unwrap();
    assert!(r.predicted_ratio.abs() < 1e-5);
    assert!(r.measured_ratio < 1e-3);
}

proptest! {
    #[test]
    fn paired_delta_is_antisymmetric(a in prop::collection::vec(0.0f64..1.0, 3), b in prop::collection::vec(0.0f64..1.0, 3)) {
        let ab = SeedStats::paired(&a, &b).unwrap();
        let ba = SeedStats::paired(&b, &a).unwrap();
        prop_assert!((ab.mean + ba.mean).abs() < 1e-12);
        prop_assert!(ab.ci95 >= 0.0 && (ab.ci95 - ba.ci95).abs() < 1e-12);
        let mean_diff = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / 3.0;
        prop_assert!((ab.mean - mean_diff).abs() < 1e-12);
    }

    #[test]
    fn recall_in_unit_interval(res in prop::collection::vec(prop::collection::vec(0u64..30, 5), 1..8), seed in any::<u64>()) {
        let truth: Vec<Vec<u64>> = res.iter().enumerate().map(|(i, _)| (0..5).map(|j| (seed.wrapping_add(i as u64 * 7 + j)) % 30).collect()).collect();
        let r = recall_at_k(&res, &truth, 5).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let per = per_query_recall(&res, &truth, 5).unwrap();
        prop_assert!((per.iter().sum::<f64>() / per.len() as f64 - r).abs() < 1e-12);
    }
}
