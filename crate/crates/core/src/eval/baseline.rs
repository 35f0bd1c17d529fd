use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Mask;
use crate::tensor::Matrix;

/// Per-column fill rules that only look at observed entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    ColumnMean,
    LinearInterp,
    /// Last observation carried forward; leading gaps take the first
    /// observation instead.
    Locf,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 3] = [BaselineMethod::ColumnMean, BaselineMethod::LinearInterp, BaselineMethod::Locf];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::ColumnMean => "column_mean",
            BaselineMethod::LinearInterp => "linear_interp",
            BaselineMethod::Locf => "locf",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown baseline {s:?}")))
    }
}

/// Fills the missing entries of `y`. A column with no observations takes the
/// mean of all observed entries.
pub fn baseline_fill(y: &Matrix, mask: &Mask, method: BaselineMethod) -> Result<Matrix> {
    if y.shape() != mask.shape() {
        return Err(Error::shape(format!("values {:?} vs mask {:?}", y.shape(), mask.shape())));
    }
    if mask.observed() == 0 {
        return Err(Error::config("cannot fill a matrix with no observed entries"));
    }
    let global = y
        .as_slice()
        .iter()
        .zip(mask.matrix().as_slice())
        .filter(|(_, &m)| m == 1.0)
        .map(|(v, _)| v)
        .sum::<f64>()
        / mask.observed() as f64;

    let mut out = y.clone();
    for c in 0..y.cols() {
        let seen: Vec<(usize, f64)> = (0..y.rows())
            .filter(|&r| mask.is_observed(r, c))
            .map(|r| (r, y[(r, c)]))
            .collect();
        for r in (0..y.rows()).filter(|&r| !mask.is_observed(r, c)) {
            out[(r, c)] = if seen.is_empty() {
                global
            } else {
                fill_one(&seen, r, method)
            };
        }
    }
    Ok(out)
}

fn fill_one(seen: &[(usize, f64)], r: usize, method: BaselineMethod) -> f64 {
    let after = seen.partition_point(|&(t, _)| t < r);
    let prev = after.checked_sub(1).map(|i| seen[i]);
    let next = seen.get(after).copied();
    match method {
        BaselineMethod::ColumnMean => seen.iter().map(|(_, v)| v).sum::<f64>() / seen.len() as f64,
        BaselineMethod::Locf => prev.or(next).expect("non-empty").1,
        BaselineMethod::LinearInterp => match (prev, next) {
            (Some((t0, v0)), Some((t1, v1))) => v0 + (v1 - v0) * (r - t0) as f64 / (t1 - t0) as f64,
            (Some((_, v)), None) | (None, Some((_, v))) => v,
            (None, None) => unreachable!("non-empty"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn full_mask_is_identity() {
        let y = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64);
        for m in BaselineMethod::ALL {
            assert_eq!(baseline_fill(&y, &Mask::ones(4, 3), m).unwrap(), y);
        }
    }

    #[test]
    fn interp_takes_midpoint() {
        let mask = Mask::new(col(&[1.0, 0.0, 1.0])).unwrap();
        let out = baseline_fill(&col(&[1.0, 99.0, 3.0]), &mask, BaselineMethod::LinearInterp).unwrap();
        assert_eq!(out, col(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn locf_carries_forward() {
        let mask = Mask::new(col(&[1.0, 1.0, 0.0])).unwrap();
        let out = baseline_fill(&col(&[4.0, 6.0, -1.0]), &mask, BaselineMethod::Locf).unwrap();
        assert_eq!(out, col(&[4.0, 6.0, 6.0]));
        let lead = Mask::new(col(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(baseline_fill(&col(&[0.0, 5.0, 7.0]), &lead, BaselineMethod::Locf).unwrap(), col(&[5.0, 5.0, 7.0]));
    }

    #[test]
    fn column_mean_and_global_fallback() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let mask = Mask::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()).unwrap();
        let out = baseline_fill(&y, &mask, BaselineMethod::ColumnMean).unwrap();
        assert_eq!(out.column(0), vec![1.0, 3.0, 2.0]);
        assert_eq!(out.column(1), vec![2.0, 2.0, 2.0]);
        assert!(baseline_fill(&y, &Mask::zeros(3, 2), BaselineMethod::Locf).is_err());
    }

    #[test]
    fn interp_is_exact_on_affine_columns() {
        let y = Matrix::from_fn(12, 3, |r, c| 2.0 + 0.5 * r as f64 * (c + 1) as f64);
        let mask = crate::data::CorruptionSpec::random_entries(0.3, 9).mask(12, 3).unwrap();
        // Keep the endpoints observed so no extrapolation is needed.
        let mut m = mask.matrix().clone();
        for c in 0..3 {
            m[(0, c)] = 1.0;
            m[(11, c)] = 1.0;
        }
        let mask = Mask::new(m).unwrap();
        let out = baseline_fill(&y, &mask, BaselineMethod::LinearInterp).unwrap();
        assert!(crate::eval::mape(&out, &y, &mask).unwrap() < 1e-12);
    }

    #[test]
    fn names_parse_back() {
        for m in BaselineMethod::ALL {
            assert_eq!(m.name().parse::<BaselineMethod>().unwrap(), m);
        }
        assert!("mean".parse::<BaselineMethod>().is_err());
    }
}
