//! Data-independent Lloyd–Max scalar quantizer for the Gaussian source
//! `N(0, 1/d)`.
//!
//! The codebook is designed once on the standard normal and scaled by
//! `1/sqrt(d)`. Every quantity is computed in closed form from the Gaussian
//! density and tail function; no samples are drawn. Besides the `2^b`
//! reconstruction levels the quantizer carries, for each bin, the
//! conditional means of the lower and upper half of the bin (split at the
//! centroid) used by the one-bit sign refinement.

use serde::Serialize;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const MAX_BITS: u32 = 8;

#[inline]
fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

/// `P(Z <= x)`.
#[inline]
fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(Z > x)`.
#[inline]
fn tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `P(a <= Z <= b)` evaluated on whichever side avoids cancellation.
fn mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        tail(a) - tail(b)
    } else if b <= 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - cdf(a) - tail(b)
    }
}

/// `x * pdf(x)`, zero at the infinite ends.
#[inline]
fn xpdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * pdf(x)
    }
}

/// `E[Z | a <= Z <= b]` for standard normal `Z`.
fn conditional_mean(a: f64, b: f64) -> f64 {
    let p = mass(a, b);
    if p <= 0.0 {
        // Interval far out in a tail; its midpoint is as good as anything.
        return 0.5 * (a.max(-40.0) + b.min(40.0));
    }
    (pdf(a) - pdf(b)) / p
}

/// `∫_a^b (z - c)^2 φ(z) dz`.
fn interval_sq_error(a: f64, b: f64, c: f64) -> f64 {
    let p = mass(a, b);
    let m1 = pdf(a) - pdf(b);
    let m2 = p + xpdf(a) - xpdf(b);
    (m2 - 2.0 * c * m1 + c * c * p).max(0.0)
}

/// Inverse standard normal CDF by bisection. Only used to seed the Lloyd
/// iteration, so a few ulps of error are irrelevant.
fn inverse_cdf(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn midpoints(centroids: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(centroids.len() + 1);
    t.push(f64::NEG_INFINITY);
    t.extend(centroids.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    t.push(f64::INFINITY);
    t
}

/// One Lloyd step: boundaries at centroid midpoints, centroids at the
/// conditional means of their bins.
fn lloyd_step(centroids: &[f64]) -> Vec<f64> {
    let t = midpoints(centroids);
    t.windows(2).map(|w| conditional_mean(w[0], w[1])).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn symmetrize(c: &mut [f64]) {
    let n = c.len();
    for i in 0..n / 2 {
        let v = 0.5 * (c[n - 1 - i] - c[i]);
        c[i] = -v;
        c[n - 1 - i] = v;
    }
    if n % 2 == 1 {
        c[n / 2] = 0.0;
    }
}

fn strictly_increasing(c: &[f64]) -> bool {
    c.windows(2).all(|w| w[0] < w[1]) && c.iter().all(|x| x.is_finite())
}

/// Newton step on the Lloyd fixed point `T(c) = c`. The Jacobian of the
/// Lloyd map is tridiagonal: centroid `i` depends on its two boundaries,
/// which are midpoints of neighbouring centroids.
fn newton_step(c: &[f64], lloyd: &[f64]) -> Option<Vec<f64>> {
    let n = c.len();
    let t = midpoints(c);
    // d cm / d a = φ(a)(cm - a)/P,  d cm / d b = φ(b)(b - cm)/P
    let mut da = vec![0.0; n];
    let mut db = vec![0.0; n];
    for i in 0..n {
        let (a, b) = (t[i], t[i + 1]);
        let p = mass(a, b);
        if p <= 0.0 {
            return None;
        }
        let m = lloyd[i];
        if a.is_finite() {
            da[i] = pdf(a) * (m - a) / p;
        }
        if b.is_finite() {
            db[i] = pdf(b) * (b - m) / p;
        }
    }
    // (I - J) delta = T(c) - c
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        diag[i] = 1.0 - 0.5 * (da[i] + db[i]);
        if i > 0 {
            sub[i] = -0.5 * da[i];
        }
        if i + 1 < n {
            sup[i] = -0.5 * db[i];
        }
        rhs[i] = lloyd[i] - c[i];
    }
    // Thomas algorithm.
    for i in 1..n {
        if diag[i - 1] == 0.0 {
            return None;
        }
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut delta = vec![0.0; n];
    if diag[n - 1] == 0.0 {
        return None;
    }
    delta[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        delta[i] = (rhs[i] - sup[i] * delta[i + 1]) / diag[i];
    }
    Some(c.iter().zip(&delta).map(|(x, d)| x + d).collect())
}

/// A converged `b`-bit Lloyd–Max quantizer for `N(0, 1/d)`.
///
/// `boundaries`, `centroids`, and `half_bin_means` are in the scaled
/// (`1/sqrt(d)`) units. `distortion` is `D_b = d * E[(C_b(T) - T)^2]`, which
/// does not depend on `d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarQuantizer {
    bits: u32,
    dim: usize,
    #[serde(serialize_with = "serialize_boundaries")]
    boundaries: Vec<f64>,
    centroids: Vec<f64>,
    half_bin_means: Vec<[f64; 2]>,
    distortion: f64,
    distortion_sign: f64,
    iterations: usize,
}

fn serialize_boundaries<S: serde::Serializer>(b: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    // JSON has no infinities; the two unbounded ends are implicit.
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(b.len().saturating_sub(2)))?;
    for v in &b[1..b.len() - 1] {
        seq.serialize_element(v)?;
    }
    seq.end()
}

/// Designs the quantizer with the default tolerance and iteration cap.
pub fn design(bits: u32, dim: usize) -> Result<ScalarQuantizer> {
    design_quantizer(bits, dim, DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

/// Designs a `bits`-bit quantizer for `N(0, 1/dim)`.
///
/// Iteration starts from the Gaussian quantiles `(i + 0.5)/2^b` and
/// alternates Lloyd steps with Newton steps on the same fixed point; a
/// Newton step is only taken when it keeps the centroids ordered and shrinks
/// the fixed-point residual. Converged means one Lloyd step moves no
/// centroid (in standard-normal units) by `tol` or more.
pub fn design_quantizer(bits: u32, dim: usize, tol: f64, max_iters: usize) -> Result<ScalarQuantizer> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::arg(format!("bits must be in 1..={MAX_BITS}, got {bits}")));
    }
    // d = 1 is the unit-variance design itself; the index needs d >= 2.
    if dim == 0 {
        return Err(Error::arg("dim must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::arg(format!("tol must be positive, got {tol}")));
    }
    let levels = 1usize << bits;
    let mut c: Vec<f64> = (0..levels)
        .map(|i| inverse_cdf((i as f64 + 0.5) / levels as f64))
        .collect();
    symmetrize(&mut c);

    let mut iterations = 0;
    loop {
        let next = lloyd_step(&c);
        let delta = max_abs_diff(&next, &c);
        if delta < tol {
            break;
        }
        if iterations >= max_iters {
            return Err(Error::NotConverged { iterations, last_delta: delta });
        }
        iterations += 1;
        let mut candidate = newton_step(&c, &next).filter(|nc| strictly_increasing(nc));
        if let Some(nc) = candidate.as_mut() {
            symmetrize(nc);
            let residual = max_abs_diff(&lloyd_step(nc), nc);
            if residual >= delta {
                candidate = None;
            }
        }
        c = match candidate {
            Some(nc) => nc,
            None => {
                let mut n = next;
                symmetrize(&mut n);
                n
            }
        };
    }
    Ok(ScalarQuantizer::from_standard_centroids(bits, dim, c, iterations))
}

impl ScalarQuantizer {
    fn from_standard_centroids(bits: u32, dim: usize, c: Vec<f64>, iterations: usize) -> Self {
        let t = midpoints(&c);
        let mut half = Vec::with_capacity(c.len());
        let mut distortion = 0.0;
        let mut distortion_sign = 0.0;
        for (i, &ci) in c.iter().enumerate() {
            let (a, b) = (t[i], t[i + 1]);
            let lo = conditional_mean(a, ci);
            let hi = conditional_mean(ci, b);
            half.push([lo, hi]);
            distortion += interval_sq_error(a, b, ci);
            distortion_sign += interval_sq_error(a, ci, lo) + interval_sq_error(ci, b, hi);
        }
        let scale = 1.0 / (dim as f64).sqrt();
        ScalarQuantizer {
            bits,
            dim,
            boundaries: t.iter().map(|x| x * scale).collect(),
            centroids: c.iter().map(|x| x * scale).collect(),
            half_bin_means: half.iter().map(|[lo, hi]| [lo * scale, hi * scale]).collect(),
            distortion,
            distortion_sign,
            iterations,
        }
    }

    /// Rebuilds a quantizer from persisted parts without re-running the design.
    pub(crate) fn from_parts(
        bits: u32,
        dim: usize,
        interior_boundaries: Vec<f64>,
        centroids: Vec<f64>,
        half_bin_means: Vec<[f64; 2]>,
        distortion: f64,
        distortion_sign: f64,
        iterations: usize,
    ) -> Result<Self> {
        let levels = 1usize << bits;
        if centroids.len() != levels || interior_boundaries.len() + 1 != levels || half_bin_means.len() != levels {
            return Err(Error::format("quantizer block has inconsistent lengths"));
        }
        let mut boundaries = Vec::with_capacity(levels + 1);
        boundaries.push(f64::NEG_INFINITY);
        boundaries.extend(interior_boundaries);
        boundaries.push(f64::INFINITY);
        Ok(ScalarQuantizer {
            bits,
            dim,
            boundaries,
            centroids,
            half_bin_means,
            distortion,
            distortion_sign,
            iterations,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.centroids.len()
    }

    /// All `2^b + 1` boundaries, with `-inf`/`+inf` at the ends.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn half_bin_means(&self) -> &[[f64; 2]] {
        &self.half_bin_means
    }

    /// `D_b`, dimension-invariant.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    /// `D_b` with half-bin-mean reconstruction.
    pub fn distortion_sign(&self) -> f64 {
        self.distortion_sign
    }

    /// Expected squared error of a single `N(0, 1/d)` coordinate, `D_b / d`.
    pub fn per_coord_distortion(&self, use_sign: bool) -> f64 {
        let d = if use_sign { self.distortion_sign } else { self.distortion };
        d / self.dim as f64
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Bin index and half-bin indicator for `t`. A value on a boundary goes
    /// to the upper bin; a value equal to the centroid gets sign 1.
    #[inline]
    pub fn quantize_coord(&self, t: f64) -> (usize, bool) {
        // Number of interior boundaries <= t.
        let interior = &self.boundaries[1..self.boundaries.len() - 1];
        let bin = interior.partition_point(|&b| b <= t);
        (bin, t >= self.centroids[bin])
    }

    pub fn reconstruct_coord(&self, bin: usize, sign: bool, use_sign: bool) -> Result<f64> {
        if bin >= self.levels() {
            return Err(Error::arg(format!("bin {bin} out of range for {} levels", self.levels())));
        }
        Ok(self.value(bin, sign, use_sign))
    }

    #[inline]
    pub(crate) fn value(&self, bin: usize, sign: bool, use_sign: bool) -> f64 {
        if use_sign {
            self.half_bin_means[bin][sign as usize]
        } else {
            self.centroids[bin]
        }
    }

    /// Reconstruction table indexed by `(bin << 1) | sign`.
    pub fn reconstruction_table(&self, use_sign: bool) -> Vec<f32> {
        let mut table = Vec::with_capacity(2 * self.levels());
        for bin in 0..self.levels() {
            table.push(self.value(bin, false, use_sign) as f32);
            table.push(self.value(bin, true, use_sign) as f32);
        }
        table
    }

    /// Width of bin `i`; infinite for the two outer bins.
    pub fn bin_width(&self, bin: usize) -> f64 {
        self.boundaries[bin + 1] - self.boundaries[bin]
    }

    /// Largest change of any centroid under one more Lloyd step, in
    /// standard-normal units.
    pub fn fixed_point_residual(&self) -> f64 {
        let s = (self.dim as f64).sqrt();
        let c: Vec<f64> = self.centroids.iter().map(|x| x * s).collect();
        max_abs_diff(&lloyd_step(&c), &c)
    }

    /// Canonical little-endian byte image of the codebook, used for identity
    /// hashing and persistence checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.bits.to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in self.boundaries[1..self.boundaries.len() - 1].iter().chain(&self.centroids) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for [lo, hi] in &self.half_bin_means {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        out.extend_from_slice(&self.distortion.to_le_bytes());
        out.extend_from_slice(&self.distortion_sign.to_le_bytes());
        out
    }
}

/// Independent check of `D_b`: trapezoid integration of the squared
/// reconstruction error against the standard normal density over `[-8, 8]`
/// with step `1e-4`, using only `quantize_coord`/`reconstruct_coord`.
pub fn eval_distortion_oracle(q: &ScalarQuantizer, use_sign: bool) -> f64 {
    const LO: f64 = -8.0;
    const STEP: f64 = 1e-4;
    const N: usize = 160_000;
    let s = (q.dim() as f64).sqrt();
    let f = |z: f64| {
        let (bin, sign) = q.quantize_coord(z / s);
        let r = q.value(bin, sign, use_sign) * s;
        (z - r) * (z - r) * pdf(z)
    };
    let mut acc = 0.5 * (f(LO) + f(LO + STEP * N as f64));
    for i in 1..N {
        acc += f(LO + STEP * i as f64);
    }
    acc * STEP
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bit_is_half_line_means() {
        let q = design_quantizer(1, 2, 1e-12, 100).unwrap();
        let s = 2f64.sqrt();
        let expect = (2.0 / std::f64::consts::PI).sqrt();
        assert!((q.centroids()[1] * s - expect).abs() < 1e-12);
        assert!((q.centroids()[0] * s + expect).abs() < 1e-12);
        assert!((q.distortion() - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn all_bit_widths_converge_within_default_cap() {
        for bits in 1..=MAX_BITS {
            let q = design(bits, 128).unwrap();
            assert!(q.fixed_point_residual() < 1e-9, "bits={bits}");
            assert!(q.iterations() <= DEFAULT_MAX_ITERS);
        }
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(matches!(design(0, 8), Err(Error::InvalidArgument(_))));
        assert!(matches!(design(9, 8), Err(Error::InvalidArgument(_))));
        assert!(matches!(design(4, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(design_quantizer(4, 8, 0.0, 10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_convergence_reports_last_delta() {
        match design_quantizer(6, 16, 1e-14, 1) {
            Err(Error::NotConverged { iterations, last_delta }) => {
                assert_eq!(iterations, 1);
                assert!(last_delta > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn boundaries_are_centroid_midpoints() {
        for bits in [2, 4, 6] {
            let q = design(bits, 96).unwrap();
            let s = 96f64.sqrt();
            for i in 1..q.levels() {
                let mid = 0.5 * (q.centroids()[i - 1] + q.centroids()[i]);
                assert!(((q.boundaries()[i] - mid) * s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_codebook() {
        let q = design(5, 64).unwrap();
        let n = q.levels();
        for i in 0..n {
            assert_eq!(q.centroids()[i], -q.centroids()[n - 1 - i]);
        }
    }

    #[test]
    fn half_bin_means_straddle_centroid() {
        for bits in 1..=6 {
            let q = design(bits, 32).unwrap();
            for (i, [lo, hi]) in q.half_bin_means().iter().enumerate() {
                assert!(*lo < q.centroids()[i] && q.centroids()[i] < *hi, "bits={bits} bin={i}");
                assert!(q.boundaries()[i] < *lo && *hi < q.boundaries()[i + 1]);
            }
        }
    }

    #[test]
    fn distortion_monotone_and_sign_helps() {
        let mut prev = f64::INFINITY;
        for bits in 1..=MAX_BITS {
            let q = design(bits, 128).unwrap();
            assert!(q.distortion() < prev, "bits={bits}");
            assert!(q.distortion_sign() < q.distortion(), "bits={bits}");
            prev = q.distortion();
        }
    }

    #[test]
    fn dimension_scaling() {
        let q2 = design(4, 2).unwrap();
        let q128 = design(4, 128).unwrap();
        assert_eq!(q2.distortion(), q128.distortion());
        let r = (128f64 / 2.0).sqrt();
        for (a, b) in q2.boundaries()[1..16].iter().zip(&q128.boundaries()[1..16]) {
            assert!((a - b * r).abs() < 1e-12);
        }
        let pc2 = q2.per_coord_distortion(false);
        let pc128 = q128.per_coord_distortion(false);
        assert!((pc2 * 2.0 - pc128 * 128.0).abs() < 1e-15);
    }

    #[test]
    fn quantize_ties_and_extremes() {
        let q = design(4, 128).unwrap();
        assert_eq!(q.quantize_coord(0.0), (8, false));
        assert_eq!(q.quantize_coord(10.0).0, 15);
        assert_eq!(q.quantize_coord(-10.0).0, 0);
        for k in 0..16 {
            assert_eq!(q.quantize_coord(q.centroids()[k]), (k, true));
        }
        // A value exactly on an interior boundary belongs to the upper bin.
        assert_eq!(q.quantize_coord(q.boundaries()[5]).0, 5);
    }

    #[test]
    fn reconstruct_rejects_out_of_range_bin() {
        let q = design(3, 16).unwrap();
        assert!(q.reconstruct_coord(8, false, false).is_err());
        assert_eq!(q.reconstruct_coord(2, true, false).unwrap(), q.centroids()[2]);
        assert_eq!(q.reconstruct_coord(2, true, true).unwrap(), q.half_bin_means()[2][1]);
    }

    #[test]
    fn oracle_agrees_with_closed_form() {
        let q1 = design(1, 2).unwrap();
        let oracle1 = eval_distortion_oracle(&q1, false);
        assert!((oracle1 - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-4);
        let q4 = design(4, 2).unwrap();
        let off = eval_distortion_oracle(&q4, false);
        let on = eval_distortion_oracle(&q4, true);
        assert!(((off - q4.distortion()) / q4.distortion()).abs() < 1e-3);
        assert!(((on - q4.distortion_sign()) / q4.distortion_sign()).abs() < 1e-3);
        assert!(on < off);
    }
}
