//! Small dense-vector helpers shared by the index, k-means, and evaluation code.

use crate::error::{Error, Result};

/// Inner product with eight independent accumulators so the compiler can
/// vectorize the loop.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let x = &a[c * 8..c * 8 + 8];
        let y = &b[c * 8..c * 8 + 8];
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[inline]
pub fn norm(a: &[f32]) -> f32 {
    a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32
}

#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Returns `v / ||v||`, or `None` for a zero (or non-finite) norm.
pub fn normalized(v: &[f32]) -> Option<Vec<f32>> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Some(v.iter().map(|&x| x / n).collect())
    } else {
        None
    }
}

/// Normalizes every row of a row-major matrix, reporting the first
/// zero-norm row.
pub fn normalize_rows(data: &[f32], dim: usize) -> Result<Vec<f32>> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::arg(format!(
            "matrix of {} values is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len());
    for (row, v) in data.chunks_exact(dim).enumerate() {
        match normalized(v) {
            Some(u) => out.extend_from_slice(&u),
            None => return Err(Error::ZeroNorm { row }),
        }
    }
    Ok(out)
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}
