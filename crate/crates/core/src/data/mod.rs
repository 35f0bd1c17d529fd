//! Traffic state matrices and everything that produces or consumes them:
//! the cell transmission simulator, feature encoding, corruption and files.

pub mod corpus;
pub mod corrupt;
pub mod csv;
pub mod ctm;
pub mod features;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use corrupt::{corrupt, CorruptionPattern, CorruptionSpec, PLACEHOLDER};
pub use csv::{load_matrix_csv, save_matrix_csv};
pub use ctm::{conservation_residuals, ctm_simulate, CtmConfig};
pub use features::{from_features, from_raw_features, raw_features, to_features, ColumnRange, FeatureSequence, Scaler};

/// Time step and cell lengths of a corridor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Hours per time step.
    pub dt: f64,
    /// Cell lengths in km, upstream to downstream.
    pub cell_lengths: Vec<f64>,
}

impl Geometry {
    pub fn uniform(dt: f64, cells: usize, length_km: f64) -> Self {
        Geometry {
            dt,
            cell_lengths: vec![length_km; cells],
        }
    }

    pub fn cells(&self) -> usize {
        self.cell_lengths.len()
    }

    /// Width of the feature rows: `m + 1` flows followed by `m` densities.
    pub fn feature_dim(&self) -> usize {
        2 * self.cells() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.cell_lengths.is_empty() {
            return Err(Error::config("at least one cell is required"));
        }
        if let Some(bad) = self.cell_lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::config(format!("cell lengths must be positive, got {bad}")));
        }
        Ok(())
    }
}

/// Flow matrix `F` (`n × (m+1)`, veh/h, one column per detector) paired with
/// density matrix `K` (`n × m`, veh/km, one column per cell).
///
/// Row `t` of `F` holds the mean flow over interval `t`; row `t` of `K` holds
/// the densities at the start of that interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficStateMatrix {
    pub flow: Matrix,
    pub density: Matrix,
    pub geometry: Geometry,
}

impl TrafficStateMatrix {
    pub fn new(flow: Matrix, density: Matrix, geometry: Geometry) -> Result<Self> {
        let ts = TrafficStateMatrix {
            flow,
            density,
            geometry,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn steps(&self) -> usize {
        self.density.rows()
    }

    pub fn cells(&self) -> usize {
        self.density.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let (n, m) = self.density.shape();
        if m != self.geometry.cells() {
            return Err(Error::shape(format!(
                "density has {m} cells but geometry has {}",
                self.geometry.cells()
            )));
        }
        self.flow.ensure_shape(n, m + 1, "flow matrix")?;
        if n < 2 {
            return Err(Error::shape("a traffic state matrix needs at least two time steps"));
        }
        for (what, mat) in [("flow", &self.flow), ("density", &self.density)] {
            if let Some(v) = mat.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::config(format!("{what} entries must be finite and nonnegative, found {v}")));
            }
        }
        Ok(())
    }

    /// The last `rows` time steps.
    pub fn tail(&self, rows: usize) -> TrafficStateMatrix {
        let n = self.steps();
        let start = n - rows.min(n);
        let take = |m: &Matrix| Matrix::from_fn(n - start, m.cols(), |r, c| m[(start + r, c)]);
        TrafficStateMatrix {
            flow: take(&self.flow),
            density: take(&self.density),
            geometry: self.geometry.clone(),
        }
    }

    /// Vehicles stored on the corridor at step `t`, `Σ_s k(t,s)·Δx_s`.
    pub fn vehicles(&self, t: usize) -> f64 {
        self.density
            .row(t)
            .iter()
            .zip(&self.geometry.cell_lengths)
            .map(|(k, dx)| k * dx)
            .sum()
    }
}
