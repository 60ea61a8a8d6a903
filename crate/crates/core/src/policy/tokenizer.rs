use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::HORIZON;
use crate::NormalizedTrajectory;

/// Token sequence: `x̃` then `ỹ` for each step.
pub type TokenSeq = Vec<usize>;

/// Sequence length: two tokens per waypoint.
pub const SEQ_LEN: usize = 2 * HORIZON;

/// Uniform bin tokenizer over clipped z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tokenizer {
    pub bins: usize,
    pub z_max: f64,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self { bins: 64, z_max: 4.0 }
    }
}

impl Tokenizer {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || !(self.z_max.is_finite() && self.z_max > 0.0) {
            return Err(Error::invalid("tokenizer needs bins >= 2 and z_max > 0"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.z_max / self.bins as f64
    }

    pub fn token(&self, z: f64) -> usize {
        let z = z.clamp(-self.z_max, self.z_max);
        let b = ((z + self.z_max) / (2.0 * self.z_max) * self.bins as f64).floor() as usize;
        b.min(self.bins - 1)
    }

    /// Center of bin `b`.
    pub fn value(&self, b: usize) -> f64 {
        -self.z_max + (b as f64 + 0.5) * self.bin_width()
    }

    pub fn tokenize(&self, ntraj: &NormalizedTrajectory) -> TokenSeq {
        ntraj
            .steps
            .iter()
            .flat_map(|z| [self.token(z[0]), self.token(z[1])])
            .collect()
    }

    pub fn detokenize(&self, tokens: &[usize]) -> Result<NormalizedTrajectory> {
        self.check(tokens)?;
        Ok(NormalizedTrajectory {
            steps: tokens
                .chunks(2)
                .map(|c| [self.value(c[0]), self.value(c[1])])
                .collect(),
        })
    }

    pub fn check(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != SEQ_LEN {
            return Err(Error::LengthMismatch {
                expected: SEQ_LEN,
                got: tokens.len(),
            });
        }
        if let Some(t) = tokens.iter().find(|t| **t >= self.bins) {
            return Err(Error::invalid(format!("token {t} out of range 0..{}", self.bins)));
        }
        Ok(())
    }
}
