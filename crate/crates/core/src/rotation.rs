//! Fixed Haar-random orthogonal rotation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::check_dim;

/// Dense `d x d` orthogonal matrix, row-major. Applying it maps `v` to
/// `Πv`; the transpose is the inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    dim: usize,
    seed: u64,
    matrix: Vec<f64>,
}

/// Draws a Haar-distributed orthogonal matrix.
///
/// A Gaussian matrix is orthonormalized column by column with two passes of
/// modified Gram–Schmidt. Gram–Schmidt produces a triangular factor with a
/// positive diagonal, which is exactly the sign convention that makes the
/// orthogonal factor Haar distributed.
pub fn generate_rotation(dim: usize, seed: u64) -> Result<RotationMatrix> {
    if dim < 2 {
        return Err(Error::arg(format!("rotation dim must be at least 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Column-major working copy: cols[j] is column j.
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for col in cols.iter_mut() {
            col[i] = StandardNormal.sample(&mut rng);
        }
    }
    for j in 0..dim {
        let (done, rest) = cols.split_at_mut(j);
        let v = &mut rest[0];
        for _pass in 0..2 {
            for q in done.iter() {
                let proj: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                for (x, qa) in v.iter_mut().zip(q) {
                    *x -= proj * qa;
                }
            }
        }
        let r_jj: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(r_jj > 0.0) {
            return Err(Error::arg("degenerate Gaussian draw during orthonormalization"));
        }
        for x in v.iter_mut() {
            *x /= r_jj;
        }
    }
    let mut matrix = vec![0.0; dim * dim];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            matrix[i * dim + j] = x;
        }
    }
    Ok(RotationMatrix { dim, seed, matrix })
}

impl RotationMatrix {
    pub(crate) fn from_parts(dim: usize, seed: u64, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::format("rotation block length does not match dim"));
        }
        Ok(RotationMatrix { dim, seed, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.matrix[i * self.dim + j]).collect()
    }

    /// `Πv`.
    pub fn rotate(&self, v: &[f32]) -> Result<Vec<f32>> {
        check_dim(self.dim, v.len())?;
        let mut out = vec![0.0; self.dim];
        self.rotate_into(v, &mut out);
        Ok(out)
    }

    /// `Πᵀv`.
    pub fn rotate_inverse(&self, v: &[f32]) -> Result<Vec<f32>> {
        check_dim(self.dim, v.len())?;
        let mut out = vec![0.0; self.dim];
        self.rotate_inverse_into(v, &mut out);
        Ok(out)
    }

    pub(crate) fn rotate_into(&self, v: &[f32], out: &mut [f32]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0f64;
            for (m, &x) in row.iter().zip(v) {
                acc += m * x as f64;
            }
            *o = acc as f32;
        }
    }

    pub(crate) fn rotate_inverse_into(&self, v: &[f32], out: &mut [f32]) {
        let mut acc = vec![0.0f64; self.dim];
        for (i, &x) in v.iter().enumerate() {
            let x = x as f64;
            for (a, m) in acc.iter_mut().zip(self.row(i)) {
                *a += m * x;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a as f32;
        }
    }

    /// `Πᵀv` for a vector already in `f64`.
    pub fn rotate_inverse_f64(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, v.len())?;
        let mut acc = vec![0.0f64; self.dim];
        for (i, &x) in v.iter().enumerate() {
            for (a, m) in acc.iter_mut().zip(self.row(i)) {
                *a += m * x;
            }
        }
        Ok(acc)
    }

    /// `Πv` for a vector already in `f64`.
    pub fn rotate_f64(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, v.len())?;
        Ok((0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(m, x)| m * x).sum())
            .collect())
    }

    /// Largest absolute entry of `ΠᵀΠ - I`.
    pub fn orthogonality_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in a..d {
                let mut s = 0.0;
                for i in 0..d {
                    s += self.matrix[i * d + a] * self.matrix[i * d + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.matrix.len() * 8);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}
