mod common;

use std::sync::OnceLock;

use half::f16;
use ivftq::data::make_sift_like;
use ivftq::eval::{exact_topk, recall_at_k};
use ivftq::index::BitPosition;
use ivftq::partition::DEFAULT_KMEANS_ITERS;
use ivftq::{train_partition, Error, IndexConfig, IvfTqIndex};
use proptest::prelude::*;

use common::{dot64, gaussian_rows, ids_of, sift10k, sift10k_unit, unit_gaussian_rows, D};

fn sift_index() -> &'static IvfTqIndex {
    static IDX: OnceLock<IvfTqIndex> = OnceLock::new();
    IDX.get_or_init(|| IvfTqIndex::build(IndexConfig::new(D, 4, 64).with_raw(true).with_seeds(42, 42), &sift10k().base).unwrap())
}

#[test]
fn self_retrieval_at_full_probe() {
    let idx = sift_index();
    let unit = sift10k_unit();
    let n = idx.len();
    let hits = (0..n).filter(|&i| idx.search(&unit[i * D..(i + 1) * D], 1, 64, 0).unwrap().ids[0] == i as u64).count();
    assert!(hits as f64 >= 0.99 * n as f64, "{hits}/{n}");
}

#[test]
fn rerank_returns_self_with_unit_score() {
    let idx = sift_index();
    let unit = sift10k_unit();
    for i in (0..idx.len()).step_by(97) {
        let r = idx.search(&unit[i * D..(i + 1) * D], 1, 64, 10).unwrap();
        assert_eq!(r.ids[0], i as u64);
        assert!((r.scores[0] - 1.0).abs() < 1e-4);
    }
}

#[test]
fn residual_reconstruction_envelope() {
    let idx = sift_index();
    let unit = sift10k_unit();
    let sqrt_d = idx.quantizer().distortion().sqrt();
    let n = idx.len();
    let (mut inside, mut err_sum, mut r_sum) = (0usize, 0.0, 0.0);
    for i in 0..n {
        let x = &unit[i * D..(i + 1) * D];
        let xh = idx.reconstruct_vector(i).unwrap();
        let r = idx.code(i).unwrap().residual_norm.to_f64();
        let err = xh.iter().zip(x).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt();
        if err <= r * (sqrt_d + 0.15) {
            inside += 1;
        }
        err_sum += err;
        r_sum += r;
        let cos = dot64(&xh, x) / dot64(&xh, &xh).sqrt();
        assert!(cos >= 0.98, "row {i}: cosine {cos}");
    }
    assert!(inside as f64 >= 0.99 * n as f64, "{inside}/{n} inside the envelope");
    assert!(err_sum <= r_sum * sqrt_d * 1.2, "mean error {} vs {}", err_sum / n as f64, r_sum / n as f64 * sqrt_d * 1.2);
}

#[test]
fn estimates_equal_inner_product_with_reconstruction() {
    let idx = sift_index();
    let q = &sift10k().queries[..D];
    let qn = dot64(q, q).sqrt();
    let est = idx.estimate_all(q).unwrap();
    for i in (0..idx.len()).step_by(13) {
        let xh = idx.reconstruct_vector(i).unwrap();
        let want = dot64(q, &xh) / qn;
        assert!((est[i] as f64 - want).abs() < 1e-4, "row {i}: {} vs {want}", est[i]);
    }
}

#[test]
fn unquantized_residual_gives_exact_score() {
    // Coarse term plus the stored binary16 norm times the exact rotated
    // residual direction: the only error left is norm rounding.
    let idx = sift_index();
    let unit = sift10k_unit();
    let rot = idx.rotation();
    let q = &common::normalize(&sift10k().queries[D..2 * D]);
    let pq = rot.rotate(q).unwrap();
    for i in (0..idx.len()).step_by(7) {
        let x = &unit[i * D..(i + 1) * D];
        let code = idx.code(i).unwrap();
        let c = idx.partition().centroid(code.list_id as usize);
        let r: Vec<f32> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        let rn = dot64(&r, &r).sqrt();
        let pr = rot.rotate(&r).unwrap();
        let dir = dot64(&pq, &pr) / rn;
        let score = dot64(q, c) + code.residual_norm.to_f64() * dir;
        let exact = dot64(q, x);
        assert!((score - exact).abs() <= rn * dir.abs() * 2f64.powi(-11) + 1e-6, "row {i}");
    }
}

#[test]
fn centroid_input_has_zero_residual() {
    let idx = sift_index();
    let c = idx.partition().centroid(5).to_vec();
    let code = idx.encode(&c).unwrap();
    assert_eq!(code.list_id, 5);
    assert_eq!(code.residual_norm, f16::ZERO);
    assert!(code.codes.iter().all(|&b| b == 0));
    let mut grown = idx.clone();
    let id = grown.add(&c, 99_999).unwrap();
    assert_eq!(grown.reconstruct_vector(id).unwrap(), c);
    assert!(grown.candidates(&c, 64).unwrap().contains(&(id as u32)));
    assert_eq!(grown.search(&c, 1, 1, 0).unwrap().ids[0], 99_999);
}

#[test]
fn adds_never_touch_compression_layer() {
    let mut idx = IvfTqIndex::build(IndexConfig::new(D, 4, 16).with_seeds(1, 1), &sift10k().base[..2000 * D]).unwrap();
    let digest = idx.compression_digest();
    let q = idx.quantizer().to_bytes();
    let r = idx.rotation().to_bytes();
    for chunk in sift10k().base[2000 * D..].chunks(1000 * D) {
        idx.add_batch(chunk, idx.len() as u64).unwrap();
        assert_eq!(idx.compression_digest(), digest);
    }
    assert_eq!(idx.quantizer().to_bytes(), q);
    assert_eq!(idx.rotation().to_bytes(), r);
    assert_eq!(idx.len(), 10_000);
    assert_eq!(idx.partition().lists.iter().map(Vec::len).sum::<usize>(), idx.len());
}

#[test]
fn interleaved_adds_match_batch_build() {
    let unit = sift10k_unit();
    let partition = train_partition(&unit[..2000 * D], D, 32, 3, DEFAULT_KMEANS_ITERS).unwrap();
    let cfg = IndexConfig::new(D, 4, 32).with_seeds(3, 3);
    let mut batch = IvfTqIndex::with_partition(cfg.clone(), partition.clone()).unwrap();
    batch.add_batch(unit, 0).unwrap();
    let mut one_by_one = IvfTqIndex::with_partition(cfg.clone(), partition.clone()).unwrap();
    let queries = &sift10k().queries;
    for (i, x) in unit.chunks_exact(D).enumerate() {
        one_by_one.add(x, i as u64).unwrap();
        if i % 997 == 0 {
            one_by_one.search(&queries[..D], 10, 4, 0).unwrap();
        }
    }
    let a = batch.search_batch(queries, 10, 8, 0).unwrap();
    assert_eq!(a, one_by_one.search_batch(queries, 10, 8, 0).unwrap());

    // Reversed insertion: same scores for every external id.
    let mut reversed = IvfTqIndex::with_partition(cfg, partition).unwrap();
    for i in (0..unit.len() / D).rev() {
        reversed.add(&unit[i * D..(i + 1) * D], i as u64).unwrap();
    }
    let b = reversed.search_batch(queries, 10, 8, 0).unwrap();
    let truth = exact_topk(unit, queries, D, 10).unwrap();
    assert_eq!(recall_at_k(&ids_of(a.clone()), &truth.ids, 10).unwrap(), recall_at_k(&ids_of(b.clone()), &truth.ids, 10).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.scores, y.scores);
    }
}

#[test]
fn bit_accounting_formulas() {
    let at = |d: usize, l: usize| {
        let rows = gaussian_rows(l.max(64), d, 5);
        IvfTqIndex::build(IndexConfig::new(d, 4, l), &rows).unwrap().bit_accounting()
    };
    let a = at(128, 1000);
    assert_eq!(a.bits_per_vec, 666);
    assert_eq!(a.bits_per_vec_rounded, 672);
    assert_eq!(a.breakdown.list_id, 10);
    assert_eq!(at(96, 64).bits_per_vec_rounded, 512);
    assert_eq!(at(200, 64).bits_per_vec_rounded, 1032);
    let off = IvfTqIndex::build(IndexConfig::new(128, 3, 16).with_sign_bit(false), &gaussian_rows(64, 128, 1)).unwrap();
    assert_eq!(off.bit_accounting().bits_per_vec, 3 * 128 + 4 + 16);
    let flat = IvfTqIndex::build(IndexConfig::flat(128, 4), &gaussian_rows(64, 128, 1)).unwrap();
    assert_eq!(flat.bit_accounting().bits_per_vec, 640);
}

#[test]
fn save_load_round_trip() {
    let idx = IvfTqIndex::build(IndexConfig::new(D, 5, 16).with_raw(true).with_seeds(8, 8), &sift10k().base[..3000 * D]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.ivtq");
    idx.save(&path).unwrap();
    let back = IvfTqIndex::load(&path).unwrap();
    assert_eq!(back.to_bytes(), idx.to_bytes());
    let q = &sift10k().queries;
    assert_eq!(back.search_batch(q, 10, 4, 20).unwrap(), idx.search_batch(q, 10, 4, 20).unwrap());
    assert_eq!(back.compression_digest(), idx.compression_digest());

    let bytes = idx.to_bytes();
    for cut in [0, 3, 4, 9, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(IvfTqIndex::from_bytes(&bytes[..cut]).is_err(), "prefix of {cut} bytes loaded");
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(IvfTqIndex::from_bytes(&bad).is_err());
    assert!(matches!(back.search(&[1.0; 64], 1, 1, 0), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn argument_and_configuration_errors() {
    let rows = gaussian_rows(100, 16, 2);
    let mut idx = IvfTqIndex::build(IndexConfig::new(16, 4, 4), &rows).unwrap();
    assert!(matches!(idx.search(&rows[..16], 5, 2, 10), Err(Error::Config(_))));
    assert!(idx.add(&[0.0; 16], 7).is_err());
    assert!(idx.search(&rows[..16], 0, 2, 0).is_err());
    assert!(idx.search(&rows[..16], 3, 0, 0).is_err());
    assert_eq!(idx.search(&rows[..16], 3, 99, 0).unwrap().ids.len(), 3);
    let mut with_zero = rows.clone();
    with_zero[16 * 17..16 * 18].fill(0.0);
    assert!(matches!(IvfTqIndex::build(IndexConfig::new(16, 4, 4), &with_zero), Err(Error::ZeroNorm { row: 17 })));
    assert!(IvfTqIndex::build(IndexConfig::new(16, 4, 200), &rows).is_err());
    assert!(IvfTqIndex::build(IndexConfig::new(16, 9, 4), &rows).is_err());
    assert!(IvfTqIndex::build(IndexConfig::new(1, 4, 1), &rows).is_err());
}

#[test]
fn single_list_still_searches() {
    let rows = gaussian_rows(500, 32, 4);
    let idx = IvfTqIndex::build(IndexConfig::new(32, 4, 1), &rows).unwrap();
    let r = idx.search(&rows[..32], 10, 1, 0).unwrap();
    assert_eq!(r.ids.len(), 10);
}

#[test]
fn eight_bit_flat_is_near_exact() {
    // Reference: the same 8-bit scalar quantizer applied to each normalized
    // row directly. Gaussian rows are rotation invariant, so the index should
    // land at the same recall without knowing anything about its rotation.
    let q8 = ivftq::design(8, D).unwrap();
    let (mut got, mut ideal) = (0.0, 0.0);
    for s in 0..3u64 {
        let base = gaussian_rows(10_000, D, 100 + s);
        let queries = gaussian_rows(300, D, 200 + s);
        let idx = IvfTqIndex::build(IndexConfig::flat(D, 8).with_sign_bit(false), &base).unwrap();
        let truth = exact_topk(&base, &queries, D, 10).unwrap();
        let res: Vec<Vec<u64>> = queries.chunks_exact(D).map(|q| idx.search_flat(q, 10).unwrap().ids).collect();
        got += recall_at_k(&res, &truth.ids, 10).unwrap() / 3.0;

        let recon: Vec<f32> = unit_gaussian_rows_from(&base)
            .iter()
            .map(|&t| {
                let (bin, sign) = q8.quantize_coord(t as f64);
                q8.reconstruct_coord(bin, sign, false).unwrap() as f32
            })
            .collect();
        let approx = exact_topk(&recon, &queries, D, 10).unwrap();
        ideal += recall_at_k(&approx.ids, &truth.ids, 10).unwrap() / 3.0;
    }
    assert!(got >= 0.98, "recall {got}");
    assert!((got - ideal).abs() < 0.005, "index {got} vs scalar reference {ideal}");
    assert!(sift_index().search_flat(&gaussian_rows(1, D, 1), 1).is_err());
}

#[test]
fn bit_flip_asymmetry() {
    let ds = make_sift_like(10_000, 200, Default::default(), 42).unwrap();
    let mut idx = IvfTqIndex::build(IndexConfig::new(D, 5, 64).with_seeds(42, 42), &ds.base).unwrap();
    let truth = exact_topk(&ds.base, &ds.queries, D, 10).unwrap();
    let before = idx.to_bytes();
    let mut drop = |pos, frac| idx.bit_flip_ablation(pos, frac, &ds.queries, &truth.ids, 10, 16, 5).unwrap();
    let none = drop(BitPosition::MsbPrimary, 0.0);
    assert_eq!(none.flipped, 0);
    assert_eq!(none.drop_pp, 0.0);
    let msb = drop(BitPosition::MsbPrimary, 0.05);
    let lsb = drop(BitPosition::LsbPrimary, 0.05);
    let sign = drop(BitPosition::Sign, 0.05);
    assert!(msb.drop_pp > 3.0 * lsb.drop_pp.max(0.1), "msb {} lsb {}", msb.drop_pp, lsb.drop_pp);
    assert!(sign.drop_pp <= lsb.drop_pp, "sign {} lsb {}", sign.drop_pp, lsb.drop_pp);
    assert_eq!(idx.to_bytes(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probing_more_lists_is_a_superset(seed in any::<u64>(), a in 1usize..64, b in 1usize..64) {
        let idx = sift_index();
        let q = gaussian_rows(1, D, seed);
        let (lo, hi) = (a.min(b), a.max(b));
        let small = idx.candidates(&q, lo).unwrap();
        let big: std::collections::HashSet<u32> = idx.candidates(&q, hi).unwrap().into_iter().collect();
        prop_assert!(small.iter().all(|i| big.contains(i)));
    }

    #[test]
    fn results_sorted_and_distinct(seed in any::<u64>(), k in 1usize..50, np in 1usize..64, rr in 0usize..80) {
        let idx = sift_index();
        let q = unit_gaussian_rows(1, D, seed);
        let r = idx.search(&q, k, np, rr).unwrap();
        prop_assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
        let mut ids = r.ids.clone();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), r.ids.len());
        prop_assert!(r.ids.len() <= k);
    }

    #[test]
    fn encoding_is_deterministic(seed in any::<u64>()) {
        let idx = sift_index();
        let x = gaussian_rows(1, D, seed);
        prop_assert_eq!(idx.encode(&x).unwrap(), idx.encode(&x).unwrap());
    }
}

fn unit_gaussian_rows_from(rows: &[f32]) -> Vec<f32> {
    rows.chunks_exact(D).flat_map(common::normalize).collect()
}
