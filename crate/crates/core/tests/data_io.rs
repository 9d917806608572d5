mod common;

use ivftq::data::{
    inspect_vecs, make_deep_like, make_sift_like, make_stream, make_synthetic_clusters, parse_fvecs, read_bvecs, read_fvecs, read_ivecs,
    read_vectors, write_bvecs, write_fvecs, write_ivecs, SiftLikeParams, StreamOrder, StreamPlan, VecsKind,
};
use proptest::prelude::*;

use common::{dot64, gaussian_rows};

fn plan(order: StreamOrder, seed: u64) -> StreamPlan {
    StreamPlan { train_count: 200, batch_size: 100, n_batches: 5, order, seed }
}

#[test]
fn vecs_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f = gaussian_rows(100, 16, 1);
    let p = dir.path().join("a.fvecs");
    write_fvecs(&p, &f, 16).unwrap();
    let m = read_fvecs(&p).unwrap();
    assert_eq!((m.dim, m.count()), (16, 100));
    assert_eq!(m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), f.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 100 * (4 + 16 * 4));
    let info = inspect_vecs(&p).unwrap();
    assert_eq!((info.kind, info.dim, info.count), (VecsKind::F32, 16, 100));
    assert_eq!(read_vectors(&p, Some(7)).unwrap().count(), 7);

    let b: Vec<u8> = (0..=255).cycle().take(50 * 8).collect();
    let pb = dir.path().join("b.bvecs");
    write_bvecs(&pb, &b, 8).unwrap();
    assert_eq!(read_bvecs(&pb).unwrap().data, b.iter().map(|&v| v as f32).collect::<Vec<_>>());

    let i: Vec<i32> = (0..30).map(|v| v * 1000 - 7).collect();
    let pi = dir.path().join("c.ivecs");
    write_ivecs(&pi, &i, 10).unwrap();
    assert_eq!(read_ivecs(&pi).unwrap().data, i);
}

#[test]
fn empty_and_malformed_files() {
    let m = parse_fvecs(&[], None).unwrap();
    assert_eq!(m.count(), 0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.fvecs");
    write_fvecs(&p, &gaussian_rows(3, 4, 1), 4).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    // Second record claims dim 5.
    bytes[20] = 5;
    let err = parse_fvecs(&bytes, None).unwrap_err().to_string();
    assert!(err.contains("record 1"), "{err}");
    let good = std::fs::read(&p).unwrap();
    assert!(parse_fvecs(&good[..good.len() - 2], None).is_err());
    assert!(read_vectors(dir.path().join("x.txt"), None).is_err());
}

#[test]
fn synthetic_generators() {
    let (pts, labels) = make_synthetic_clusters(40, 8, 4, 0.0, 1).unwrap();
    for (i, row) in pts.chunks_exact(8).enumerate() {
        assert_eq!(row, &pts[(labels[i] as usize) * 8..(labels[i] as usize + 1) * 8]);
    }
    let (one, _) = make_synthetic_clusters(200, 16, 1, 0.3, 2).unwrap();
    let c = &one[..16];
    assert!(one.chunks_exact(16).all(|x| dot64(x, c) > 0.5));
    assert_eq!(make_synthetic_clusters(10, 8, 2, 0.5, 3).unwrap(), make_synthetic_clusters(10, 8, 2, 0.5, 3).unwrap());

    let s = make_sift_like(500, 20, SiftLikeParams::default(), 4).unwrap();
    assert_eq!((s.n_base(), s.n_queries(), s.dim), (500, 20, 128));
    assert!(s.base.iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
    assert!(s.base.chunks_exact(128).all(|r| r.iter().any(|&v| v > 0.0)));
    let deep = make_deep_like(300, 10, 5).unwrap();
    assert_eq!(deep.dim, 96);
    assert!(deep.base.chunks_exact(96).all(|r| (dot64(r, r) - 1.0).abs() < 1e-5));
}

#[test]
fn stream_orders() {
    let base = gaussian_rows(1000, 64, 3);
    let orig = make_stream(&base, 64, &plan(StreamOrder::Original, 1)).unwrap();
    assert_eq!(orig.source_rows, (0..700).collect::<Vec<_>>());
    let still = make_stream(&base, 64, &plan(StreamOrder::MeanShift { rate: 0.0 }, 1)).unwrap();
    for (a, b) in orig.batches.iter().flatten().zip(still.batches.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
    let shifted = make_stream(&base, 64, &plan(StreamOrder::RotationShift, 1)).unwrap();
    let mut cos = 0.0;
    let mut n = 0;
    for (a, b) in orig.batches.iter().zip(&shifted.batches) {
        for (x, y) in a.chunks_exact(64).zip(b.chunks_exact(64)) {
            cos += dot64(x, y);
            n += 1;
        }
    }
    assert!((cos / n as f64).abs() < 0.05, "mean cosine {}", cos / n as f64);
    assert_eq!(shifted.train, orig.train);
    let q = gaussian_rows(3, 64, 9);
    assert_ne!(shifted.transform_queries(&q).unwrap(), q);
    assert_eq!(orig.transform_queries(&q).unwrap(), q);

    let drift = make_stream(&base, 64, &plan(StreamOrder::MeanShift { rate: 0.05 }, 1)).unwrap();
    assert!(drift.batches.iter().flatten().zip(orig.batches.iter().flatten()).any(|(a, b)| (a - b).abs() > 1e-3));
    assert!(make_stream(&base, 64, &StreamPlan { train_count: 900, ..plan(StreamOrder::Original, 1) }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batches_are_disjoint_and_exhaustive(seed in any::<u64>(), shuffled in any::<bool>()) {
        let base = gaussian_rows(800, 8, 7);
        let order = if shuffled { StreamOrder::Shuffled } else { StreamOrder::Original };
        let s = make_stream(&base, 8, &plan(order, seed)).unwrap();
        let mut rows = s.source_rows.clone();
        rows.sort_unstable();
        rows.dedup();
        prop_assert_eq!(rows.len(), 700);
        prop_assert!(rows.iter().all(|&r| r < 800));
        prop_assert_eq!(s.batches.len(), 5);
        prop_assert!(s.batches.iter().all(|b| b.len() == 100 * 8));
        for x in s.train.chunks_exact(8).chain(s.batches.iter().flat_map(|b| b.chunks_exact(8))) {
            prop_assert!((dot64(x, x) - 1.0).abs() < 1e-5);
        }
        let again = make_stream(&base, 8, &plan(order, seed)).unwrap();
        prop_assert_eq!(again.batches, s.batches);
    }

    #[test]
    fn fvecs_bytes_round_trip(rows in 1usize..20, dim in 1usize..12, seed in any::<u64>()) {
        let data = gaussian_rows(rows, dim, seed);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fvecs");
        write_fvecs(&p, &data, dim).unwrap();
        prop_assert_eq!(read_fvecs(&p).unwrap().data, data);
    }
}
