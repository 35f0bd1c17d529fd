//! Per-time-step feature rows `[q(t,1..m+1), k(t,1..m)]` with per-column
//! min-max normalization onto `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::{Geometry, TrafficStateMatrix};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Ranges narrower than this are treated as constant columns.
pub const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    fn is_degenerate(&self) -> bool {
        self.max - self.min < DEGENERATE_RANGE
    }

    /// Physical units per normalized unit; zero for constant columns.
    pub fn span(&self) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            self.max - self.min
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + u * (self.max - self.min)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ColumnRange>,
}

impl Scaler {
    /// Fits column ranges over every matrix in `records` (all of one width).
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a TrafficStateMatrix>) -> Result<Scaler> {
        let mut columns: Vec<ColumnRange> = Vec::new();
        for ts in records {
            let raw = raw_features(ts);
            if columns.is_empty() {
                columns = vec![
                    ColumnRange {
                        min: f64::INFINITY,
                        max: f64::NEG_INFINITY
                    };
                    raw.cols()
                ];
            } else if columns.len() != raw.cols() {
                return Err(Error::shape("records of different widths cannot share a scaler"));
            }
            for r in 0..raw.rows() {
                for (c, range) in columns.iter_mut().enumerate() {
                    range.min = range.min.min(raw[(r, c)]);
                    range.max = range.max.max(raw[(r, c)]);
                }
            }
        }
        if columns.is_empty() {
            return Err(Error::NoTrainingData);
        }
        Ok(Scaler { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn normalize(&self, raw: &Matrix) -> Result<Matrix> {
        self.check_width(raw.cols())?;
        Ok(Matrix::from_fn(raw.rows(), raw.cols(), |r, c| {
            self.columns[c].normalize(raw[(r, c)]).clamp(0.0, 1.0)
        }))
    }

    /// Linear de-normalization without clamping.
    pub fn denormalize(&self, features: &Matrix) -> Result<Matrix> {
        self.check_width(features.cols())?;
        Ok(Matrix::from_fn(features.rows(), features.cols(), |r, c| {
            self.columns[c].denormalize(features[(r, c)])
        }))
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.columns.len() {
            return Err(Error::shape(format!(
                "scaler has {} columns, matrix has {cols}",
                self.columns.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub features: Matrix,
    pub scaler: Scaler,
}

/// Unnormalized `[flows, densities]` rows.
pub fn raw_features(ts: &TrafficStateMatrix) -> Matrix {
    let m = ts.cells();
    Matrix::from_fn(ts.steps(), 2 * m + 1, |r, c| {
        if c <= m {
            ts.flow[(r, c)]
        } else {
            ts.density[(r, c - m - 1)]
        }
    })
}

/// Encodes and normalizes `ts`. Without a scaler one is fitted on `ts`
/// itself; with one, out-of-range values are clamped into `[0, 1]`.
pub fn to_features(ts: &TrafficStateMatrix, scaler: Option<&Scaler>) -> Result<FeatureSequence> {
    let scaler = match scaler {
        Some(s) => {
            if s.width() != ts.geometry.feature_dim() {
                return Err(Error::shape(format!(
                    "scaler has {} columns but the matrix needs {}",
                    s.width(),
                    ts.geometry.feature_dim()
                )));
            }
            s.clone()
        }
        None => Scaler::fit([ts])?,
    };
    let features = scaler.normalize(&raw_features(ts))?;
    Ok(FeatureSequence { features, scaler })
}

/// Inverse of [`to_features`]. Negative physical values are clamped to zero;
/// the second return value counts how many were.
pub fn from_features(fs: &FeatureSequence, geometry: &Geometry) -> Result<(TrafficStateMatrix, usize)> {
    fs.features
        .ensure_shape(fs.features.rows(), geometry.feature_dim(), "feature matrix")?;
    from_raw_features(&fs.scaler.denormalize(&fs.features)?, geometry)
}

/// Inverse of [`raw_features`], with the same negative clamping as
/// [`from_features`].
pub fn from_raw_features(raw: &Matrix, geometry: &Geometry) -> Result<(TrafficStateMatrix, usize)> {
    let m = geometry.cells();
    raw.ensure_shape(raw.rows(), geometry.feature_dim(), "feature matrix")?;
    let mut clamped = 0;
    let mut take = |v: f64| {
        if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        }
    };
    let n = raw.rows();
    let mut flow = Matrix::zeros(n, m + 1);
    let mut density = Matrix::zeros(n, m);
    for r in 0..n {
        for c in 0..=m {
            flow[(r, c)] = take(raw[(r, c)]);
        }
        for s in 0..m {
            density[(r, s)] = take(raw[(r, m + 1 + s)]);
        }
    }
    let ts = TrafficStateMatrix::new(flow, density, geometry.clone())?;
    Ok((ts, clamped))
}
