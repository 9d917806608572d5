mod common;

use ivftq::eval::verify_marginal;
use ivftq::generate_rotation;
use proptest::prelude::*;

use common::{gaussian_rows, ks_normal};

#[test]
fn rotated_coordinates_are_near_gaussian() {
    let rot = generate_rotation(128, 42).unwrap();
    // Pool the coordinates of 100 rotated random unit vectors.
    let rows = common::unit_gaussian_rows(100, 128, 3);
    let mut samples = Vec::new();
    for v in rows.chunks_exact(128) {
        samples.extend(rot.rotate(v).unwrap().iter().map(|&x| x as f64 * (128f64).sqrt()));
    }
    let ks = ks_normal(&samples);
    assert!(ks < 0.05, "pooled KS {ks}");
    let report = verify_marginal(&rot, 10_000, 42);
    assert!(report.ks_statistic < 0.05, "marginal KS {}", report.ks_statistic);
    assert_eq!(verify_marginal(&rot, 10_000, 42), report);
}

#[test]
fn orthogonal_and_deterministic() {
    let a = generate_rotation(96, 7).unwrap();
    assert!(a.orthogonality_residual() < 1e-5);
    assert_eq!(a.to_bytes(), generate_rotation(96, 7).unwrap().to_bytes());
    assert_ne!(a.to_bytes(), generate_rotation(96, 8).unwrap().to_bytes());
    assert_eq!(a.rotate(&[0.0; 96]).unwrap(), vec![0.0; 96]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preserves_geometry(seed in any::<u64>(), d in 2usize..160) {
        let rot = generate_rotation(d, seed).unwrap();
        let v = gaussian_rows(2, d, seed ^ 1);
        let (a, b) = v.split_at(d);
        let (ra, rb) = (rot.rotate(a).unwrap(), rot.rotate(b).unwrap());
        let n = |x: &[f32]| common::dot64(x, x).sqrt();
        prop_assert!((n(&ra) / n(a) - 1.0).abs() < 1e-6);
        let scale = n(a) * n(b);
        prop_assert!((common::dot64(&ra, &rb) - common::dot64(a, b)).abs() / scale < 1e-6);
        let back = rot.rotate_inverse(&ra).unwrap();
        for (x, y) in back.iter().zip(a) {
            prop_assert!((x - y).abs() < 1e-5 * n(a) as f32);
        }
    }
}
