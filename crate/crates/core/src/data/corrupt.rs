use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::estimation::Mask;
use crate::tensor::Matrix;

/// Value written into missing entries of a corrupted matrix. It never
/// reaches any loss.
pub const PLACEHOLDER: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorruptionPattern {
    /// Exactly `round(rate · entries)` entries, chosen without replacement.
    RandomEntries { rate: f64 },
    /// Whole feature columns lost.
    DetectorOutage { columns: Vec<usize> },
    /// Every row from `start_row` (0-based) on is missing.
    FutureBlock { start_row: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    pub pattern: CorruptionPattern,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    /// 30% of entries hidden at random, mask seed 0.
    fn default() -> Self {
        CorruptionSpec::random_entries(0.3, 0)
    }
}

impl CorruptionSpec {
    pub fn random_entries(rate: f64, seed: u64) -> Self {
        CorruptionSpec {
            pattern: CorruptionPattern::RandomEntries { rate },
            seed,
        }
    }

    pub fn future_block(start_row: usize) -> Self {
        CorruptionSpec {
            pattern: CorruptionPattern::FutureBlock { start_row },
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        CorruptionSpec {
            pattern: self.pattern.clone(),
            seed,
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        match &self.pattern {
            CorruptionPattern::RandomEntries { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::config(format!("corruption rate must be in [0, 1), got {rate}")));
                }
            }
            CorruptionPattern::DetectorOutage { columns } => {
                if let Some(c) = columns.iter().find(|&&c| c >= cols) {
                    return Err(Error::config(format!("outage column {c} out of range (width {cols})")));
                }
            }
            CorruptionPattern::FutureBlock { start_row } => {
                if *start_row > rows {
                    return Err(Error::config(format!("future block starts at row {start_row} of {rows}")));
                }
            }
        }
        Ok(())
    }

    pub fn mask(&self, rows: usize, cols: usize) -> Result<Mask> {
        self.validate(rows, cols)?;
        let mut m = Matrix::filled(rows, cols, 1.0);
        match &self.pattern {
            CorruptionPattern::RandomEntries { rate } => {
                let total = rows * cols;
                let missing = (rate * total as f64).round() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for idx in index::sample(&mut rng, total, missing) {
                    m.as_mut_slice()[idx] = 0.0;
                }
            }
            CorruptionPattern::DetectorOutage { columns } => {
                for &c in columns {
                    for r in 0..rows {
                        m[(r, c)] = 0.0;
                    }
                }
            }
            CorruptionPattern::FutureBlock { start_row } => {
                for r in *start_row..rows {
                    m.row_mut(r).fill(0.0);
                }
            }
        }
        Mask::new(m)
    }
}

/// Applies `spec` to `fs`: returns the corrupted matrix (missing entries set
/// to [`PLACEHOLDER`]) and the observation mask.
pub fn corrupt(fs: &FeatureSequence, spec: &CorruptionSpec) -> Result<(Matrix, Mask)> {
    let (rows, cols) = fs.features.shape();
    let mask = spec.mask(rows, cols)?;
    let y = fs
        .features
        .zip_with(mask.matrix(), |v, keep| if keep == 1.0 { v } else { PLACEHOLDER })?;
    Ok((y, mask))
}
