use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::IvfTqIndex;
use crate::codes;
use crate::error::{Error, Result};
use crate::eval::recall_at_k;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BitPosition {
    MsbPrimary,
    LsbPrimary,
    Sign,
}

impl std::str::FromStr for BitPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msb" | "msb_primary" => Ok(BitPosition::MsbPrimary),
            "lsb" | "lsb_primary" => Ok(BitPosition::LsbPrimary),
            "sign" => Ok(BitPosition::Sign),
            _ => Err(Error::arg(format!("unknown bit position {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub position: BitPosition,
    pub fraction: f64,
    pub flipped: u64,
    pub recall_before: f64,
    pub recall_after: f64,
    /// `recall_before - recall_after` in percentage points.
    pub drop_pp: f64,
}

impl IvfTqIndex {
    /// Flips the chosen bit in each stored per-coordinate field with
    /// probability `fraction`, measures Recall@k against `truth`, then
    /// restores the original codes.
    #[allow(clippy::too_many_arguments)]
    pub fn bit_flip_ablation(
        &mut self,
        position: BitPosition,
        fraction: f64,
        queries: &[f32],
        truth: &[Vec<u64>],
        k: usize,
        n_probe: usize,
        seed: u64,
    ) -> Result<AblationReport> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::arg(format!("fraction must be in [0, 1], got {fraction}")));
        }
        if position == BitPosition::Sign && !self.config.use_sign_bit {
            return Err(Error::Config("index stores no sign bits".into()));
        }
        let run = |idx: &IvfTqIndex| -> Result<f64> {
            let res = idx.search_batch(queries, k, n_probe, 0)?;
            let ids: Vec<Vec<u64>> = res.into_iter().map(|r| r.ids).collect();
            recall_at_k(&ids, truth, k)
        };
        let before = run(self)?;
        let saved = self.store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bits, d) = (self.config.bits as u8, self.config.dim);
        let (cb, sb) = (self.config.code_bytes(), self.config.sign_bytes());
        let mut flipped = 0u64;
        for list in self.store.iter_mut() {
            for p in 0..list.norms.len() {
                for j in 0..d {
                    if rng.random::<f64>() >= fraction {
                        continue;
                    }
                    flipped += 1;
                    match position {
                        BitPosition::MsbPrimary => codes::flip(&mut list.codes[p * cb..(p + 1) * cb], bits, j, bits - 1),
                        BitPosition::LsbPrimary => codes::flip(&mut list.codes[p * cb..(p + 1) * cb], bits, j, 0),
                        BitPosition::Sign => codes::flip(&mut list.signs[p * sb..(p + 1) * sb], 1, j, 0),
                    }
                }
            }
        }
        let after = run(self);
        self.store = saved;
        let after = after?;
        Ok(AblationReport {
            position,
            fraction,
            flipped,
            recall_before: before,
            recall_after: after,
            drop_pp: 100.0 * (before - after),
        })
    }
}
