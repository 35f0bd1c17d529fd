use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::Mask;
use crate::tensor::Matrix;

/// Truth magnitudes at or below this are left out of the percentage error.
pub const ZERO_TRUTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub mape_pct: f64,
    pub mse: f64,
    /// Missing entries scored.
    pub evaluated: usize,
    /// Missing entries left out of the MAPE because the truth is ~0.
    pub excluded: usize,
}

/// Running sums of absolute-percentage and squared errors over the missing
/// entries of one or more matrices.
#[derive(Clone, Debug, Default)]
pub struct ErrorAccumulator {
    pct_sum: f64,
    pct_count: usize,
    sq_sum: f64,
    sq_count: usize,
    excluded: usize,
}

impl ErrorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the missing entries of `columns`.
    pub fn add(&mut self, estimated: &Matrix, truth: &Matrix, mask: &Mask, columns: Range<usize>) -> Result<()> {
        if estimated.shape() != truth.shape() || truth.shape() != mask.shape() {
            return Err(Error::shape(format!(
                "estimate {:?}, truth {:?}, mask {:?}",
                estimated.shape(),
                truth.shape(),
                mask.shape()
            )));
        }
        if columns.end > truth.cols() {
            return Err(Error::shape(format!("column range {columns:?} exceeds {}", truth.cols())));
        }
        for r in 0..truth.rows() {
            for c in columns.clone() {
                if mask.is_observed(r, c) {
                    continue;
                }
                let (e, t) = (estimated[(r, c)], truth[(r, c)]);
                self.sq_sum += (e - t) * (e - t);
                self.sq_count += 1;
                if t.abs() > ZERO_TRUTH {
                    self.pct_sum += ((e - t) / t).abs();
                    self.pct_count += 1;
                } else {
                    self.excluded += 1;
                }
            }
        }
        Ok(())
    }

    pub fn add_all(&mut self, estimated: &Matrix, truth: &Matrix, mask: &Mask) -> Result<()> {
        self.add(estimated, truth, mask, 0..truth.cols())
    }

    pub fn finish(&self) -> Result<ErrorSummary> {
        if self.pct_count == 0 {
            return Err(Error::EmptyEvaluation(format!(
                "no missing entries with |truth| > {ZERO_TRUTH} ({} excluded)",
                self.excluded
            )));
        }
        Ok(ErrorSummary {
            mape_pct: 100.0 * self.pct_sum / self.pct_count as f64,
            mse: self.sq_sum / self.sq_count as f64,
            evaluated: self.sq_count,
            excluded: self.excluded,
        })
    }
}

/// Mean absolute percentage error over the missing entries, in percent.
pub fn mape(estimated: &Matrix, truth: &Matrix, mask: &Mask) -> Result<f64> {
    let mut acc = ErrorAccumulator::new();
    acc.add_all(estimated, truth, mask)?;
    Ok(acc.finish()?.mape_pct)
}

/// Mean squared error over the missing entries.
pub fn mse(estimated: &Matrix, truth: &Matrix, mask: &Mask) -> Result<f64> {
    let mut acc = ErrorAccumulator::new();
    acc.add_all(estimated, truth, mask)?;
    if acc.sq_count == 0 {
        return Err(Error::EmptyEvaluation("no missing entries".into()));
    }
    Ok(acc.sq_sum / acc.sq_count as f64)
}
