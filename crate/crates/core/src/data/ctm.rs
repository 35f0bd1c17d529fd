//! Cell transmission model on a single corridor with a triangular
//! fundamental diagram.
//!
//! The recorded time step is usually far longer than a vehicle needs to
//! cross a cell, so each step is integrated with `substeps` internal steps
//! that satisfy the CFL condition. Recorded flows are the substep means and
//! recorded densities are the start-of-step snapshots, which keeps the
//! recorded matrices in exact agreement with the conservation update
//! `k(t+1,s) = k(t,s) + Δt/Δx_s · (q(t,s) − q(t,s+1))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Geometry, TrafficStateMatrix};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtmConfig {
    /// Recorded time steps.
    pub n: usize,
    /// Hours per recorded step.
    pub dt: f64,
    /// Cell lengths in km; the number of cells is their count.
    pub cell_lengths: Vec<f64>,
    /// Internal integration steps per recorded step.
    pub substeps: usize,
    /// Free-flow speed, km/h.
    pub free_flow_speed: f64,
    /// Congested wave speed, km/h.
    pub backward_wave_speed: f64,
    /// veh/km.
    pub jam_density: f64,
    /// veh/h.
    pub capacity: f64,
    /// Upstream demand per recorded step, veh/h.
    pub demand_profile: Vec<f64>,
    /// Downstream supply per recorded step, veh/h.
    pub downstream_supply_profile: Vec<f64>,
    /// Initial density per cell, veh/km.
    pub initial_density: Vec<f64>,
    pub seed: u64,
    /// Standard deviation of the flow noise, veh/h. Zero disables noise.
    pub noise_std: f64,
}

impl CtmConfig {
    /// Empty corridor of `m` equal cells fed with a constant demand and
    /// unrestricted downstream supply. Defaults: 5-minute steps, 0.5 km cells,
    /// 100 km/h free flow, 20 km/h backward wave, 150 veh/km jam density,
    /// 2000 veh/h capacity.
    pub fn constant(n: usize, m: usize, demand: f64) -> Self {
        let capacity = 2000.0;
        CtmConfig {
            n,
            dt: 1.0 / 12.0,
            cell_lengths: vec![0.5; m],
            substeps: 20,
            free_flow_speed: 100.0,
            backward_wave_speed: 20.0,
            jam_density: 150.0,
            capacity,
            demand_profile: vec![demand; n],
            downstream_supply_profile: vec![capacity; n],
            initial_density: vec![0.0; m],
            seed: 0,
            noise_std: 0.0,
        }
    }

    pub fn cells(&self) -> usize {
        self.cell_lengths.len()
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            dt: self.dt,
            cell_lengths: self.cell_lengths.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        let m = self.cells();
        if self.n < 2 {
            return Err(Error::config("n must be at least 2"));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps must be at least 1"));
        }
        for (name, v) in [
            ("free_flow_speed", self.free_flow_speed),
            ("backward_wave_speed", self.backward_wave_speed),
            ("jam_density", self.jam_density),
            ("capacity", self.capacity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std must be nonnegative"));
        }
        if self.backward_wave_speed > self.free_flow_speed {
            return Err(Error::config(
                "backward_wave_speed must not exceed free_flow_speed",
            ));
        }
        let step = self.dt / self.substeps as f64;
        let min_len = self.cell_lengths.iter().copied().fold(f64::INFINITY, f64::min);
        if self.free_flow_speed * step > min_len {
            return Err(Error::config(format!(
                "CFL condition violated: free_flow_speed * dt / substeps = {} km exceeds the shortest cell ({} km)",
                self.free_flow_speed * step,
                min_len
            )));
        }
        if self.demand_profile.len() != self.n || self.downstream_supply_profile.len() != self.n {
            return Err(Error::config(format!(
                "demand and supply profiles need {} entries",
                self.n
            )));
        }
        if self.initial_density.len() != m {
            return Err(Error::config(format!("initial_density needs {m} entries")));
        }
        for (name, vals) in [
            ("demand_profile", &self.demand_profile),
            ("downstream_supply_profile", &self.downstream_supply_profile),
        ] {
            if vals.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::config(format!("{name} entries must be nonnegative")));
            }
        }
        if self
            .initial_density
            .iter()
            .any(|k| !(*k >= 0.0 && *k <= self.jam_density))
        {
            return Err(Error::config("initial_density must lie in [0, jam_density]"));
        }
        Ok(())
    }

    fn sending(&self, k: f64) -> f64 {
        (self.free_flow_speed * k).min(self.capacity)
    }

    fn receiving(&self, k: f64) -> f64 {
        (self.backward_wave_speed * (self.jam_density - k)).clamp(0.0, self.capacity)
    }
}

pub fn ctm_simulate(config: &CtmConfig) -> Result<TrafficStateMatrix> {
    config.validate()?;
    let (n, m) = (config.n, config.cells());
    let substeps = config.substeps;
    let sub_dt = config.dt / substeps as f64;
    let lengths = &config.cell_lengths;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).map_err(|e| Error::config(e.to_string()))?)
    } else {
        None
    };

    let mut flow = Matrix::zeros(n, m + 1);
    let mut density = Matrix::zeros(n, m);
    density.row_mut(0).copy_from_slice(&config.initial_density);

    let mut k = config.initial_density.clone();
    let mut q = vec![0.0; m + 1];
    let mut offsets = vec![0.0; m + 1];

    for t in 0..n {
        if let Some(dist) = &noise {
            // One truncated draw per detector per recorded step.
            for o in offsets.iter_mut() {
                *o = loop {
                    let v: f64 = dist.sample(&mut rng);
                    if v.abs() <= 3.0 * config.noise_std {
                        break v;
                    }
                };
            }
        }
        let mut sums = vec![0.0; m + 1];
        for _ in 0..substeps {
            for l in 0..=m {
                let upstream = if l == 0 {
                    f64::INFINITY
                } else {
                    config.sending(k[l - 1])
                };
                let downstream = if l == m {
                    f64::INFINITY
                } else {
                    config.receiving(k[l])
                };
                let feasible = upstream.min(downstream).min(config.capacity);
                let nominal = match l {
                    0 => config.demand_profile[t].min(feasible),
                    _ if l == m => feasible.min(config.downstream_supply_profile[t]),
                    _ => feasible,
                };
                q[l] = (nominal + offsets[l]).clamp(0.0, feasible);
            }
            for s in 0..m {
                k[s] += sub_dt / lengths[s] * (q[s] - q[s + 1]);
            }
            for (acc, v) in sums.iter_mut().zip(&q) {
                *acc += v;
            }
        }
        for (l, acc) in sums.iter().enumerate() {
            flow[(t, l)] = acc / substeps as f64;
        }
        if t + 1 < n {
            // Re-derive the recorded density from the recorded flows so the
            // conservation update holds to rounding.
            for s in 0..m {
                let next = density[(t, s)]
                    + config.dt / lengths[s] * (flow[(t, s)] - flow[(t, s + 1)]);
                density[(t + 1, s)] = next.max(0.0);
                k[s] = density[(t + 1, s)];
            }
        }
    }

    TrafficStateMatrix::new(flow, density, config.geometry())
}

/// Residual `k(t+1,s) − k(t,s) − Δt/Δx_s·(q(t,s) − q(t,s+1))` for every
/// `t = 0..n-1`, `s = 0..m`, as an `(n-1) × m` matrix.
pub fn conservation_residuals(ts: &TrafficStateMatrix) -> Matrix {
    let (n, m) = (ts.steps(), ts.cells());
    Matrix::from_fn(n - 1, m, |t, s| {
        let ratio = ts.geometry.dt / ts.geometry.cell_lengths[s];
        ts.density[(t + 1, s)]
            - ts.density[(t, s)]
            - ratio * (ts.flow[(t, s)] - ts.flow[(t, s + 1)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_relative_residual(ts: &TrafficStateMatrix) -> f64 {
        let r = conservation_residuals(ts);
        let mut worst: f64 = 0.0;
        for t in 0..r.rows() {
            for s in 0..r.cols() {
                let ratio = ts.geometry.dt / ts.geometry.cell_lengths[s];
                let scale = ts.density[(t + 1, s)]
                    .abs()
                    .max(ts.density[(t, s)].abs())
                    .max(ratio * ts.flow[(t, s)].abs())
                    .max(ratio * ts.flow[(t, s + 1)].abs())
                    .max(1.0);
                worst = worst.max(r[(t, s)].abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn constant_demand_reaches_free_flow_steady_state() {
        let d = 1200.0;
        let ts = ctm_simulate(&CtmConfig::constant(60, 5, d)).unwrap();
        let last = ts.steps() - 1;
        for l in 0..=5 {
            assert!((ts.flow[(last, l)] - d).abs() < 1e-9, "flow {}", ts.flow[(last, l)]);
        }
        for s in 0..5 {
            assert!((ts.density[(last, s)] - d / 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn blocked_exit_fills_the_last_cell() {
        let mut cfg = CtmConfig::constant(40, 3, 1500.0);
        cfg.downstream_supply_profile = vec![0.0; 40];
        let ts = ctm_simulate(&cfg).unwrap();
        let last_cell: Vec<f64> = ts.density.column(2);
        assert!(last_cell.windows(2).all(|w| w[1] >= w[0]));
        assert!(last_cell[39] > 0.95 * cfg.jam_density);
        assert!(last_cell.iter().all(|&k| k <= cfg.jam_density + 1e-9));
        assert_eq!(ts.flow.column(3), vec![0.0; 40]);
    }

    #[test]
    fn conservation_holds_with_noise_and_congestion() {
        let mut cfg = CtmConfig::constant(24, 5, 1900.0);
        cfg.noise_std = 80.0;
        cfg.seed = 17;
        for t in 8..16 {
            cfg.downstream_supply_profile[t] = 700.0;
        }
        let ts = ctm_simulate(&cfg).unwrap();
        assert!(max_relative_residual(&ts) < 1e-12);
    }

    #[test]
    fn cumulative_vehicle_balance() {
        let mut cfg = CtmConfig::constant(30, 4, 1700.0);
        cfg.noise_std = 50.0;
        cfg.seed = 3;
        let ts = ctm_simulate(&cfg).unwrap();
        let n = ts.steps();
        let inflow: f64 = (0..n - 1).map(|t| ts.flow[(t, 0)] * cfg.dt).sum();
        let outflow: f64 = (0..n - 1).map(|t| ts.flow[(t, 4)] * cfg.dt).sum();
        let stored = ts.vehicles(n - 1) - ts.vehicles(0);
        assert!(((inflow - outflow) - stored).abs() <= 1e-9 * inflow.abs().max(1.0));
    }

    #[test]
    fn noise_is_seeded() {
        let mut cfg = CtmConfig::constant(12, 5, 1000.0);
        cfg.noise_std = 40.0;
        cfg.seed = 8;
        assert_eq!(ctm_simulate(&cfg).unwrap(), ctm_simulate(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 9;
        assert_ne!(ctm_simulate(&cfg).unwrap(), ctm_simulate(&other).unwrap());
    }

    #[test]
    fn cfl_violation_is_rejected_before_simulating() {
        let mut cfg = CtmConfig::constant(12, 5, 1000.0);
        cfg.substeps = 1;
        let err = ctm_simulate(&cfg).unwrap_err();
        assert!(err.to_string().contains("CFL"), "{err}");
    }

    #[test]
    fn invalid_physics_rejected() {
        let mut cfg = CtmConfig::constant(12, 2, 1000.0);
        cfg.backward_wave_speed = 120.0;
        assert!(cfg.validate().is_err());
        let mut cfg = CtmConfig::constant(12, 2, 1000.0);
        cfg.capacity = 0.0;
        assert!(cfg.validate().is_err());
    }
}
