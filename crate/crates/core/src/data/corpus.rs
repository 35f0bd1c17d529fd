//! Synthetic training corpora: one simulated hour per record, driven by a
//! seeded family of demand profiles (a sinusoid with random level, amplitude,
//! period and phase) and occasional downstream incidents.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::csv::{format_matrix_csv, load_matrix_csv};
use super::ctm::{ctm_simulate, CtmConfig};
use super::TrafficStateMatrix;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub records: usize,
    /// Recorded steps per record.
    pub steps: usize,
    pub dt: f64,
    pub cells: usize,
    pub cell_length: f64,
    pub substeps: usize,
    /// Simulated steps discarded before recording starts.
    pub warmup_steps: usize,
    pub free_flow_speed: f64,
    pub backward_wave_speed: f64,
    pub jam_density: f64,
    pub capacity: f64,
    pub noise_std: f64,
    pub incident_probability: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig::i5()
    }
}

impl CorpusConfig {
    /// Six detectors bracketing five 0.5 km cells; 12 × 11 feature matrices.
    pub fn i5() -> Self {
        CorpusConfig {
            records: 2000,
            steps: 12,
            dt: 1.0 / 12.0,
            cells: 5,
            cell_length: 0.5,
            substeps: 20,
            warmup_steps: 12,
            free_flow_speed: 100.0,
            backward_wave_speed: 20.0,
            jam_density: 150.0,
            capacity: 2000.0,
            noise_std: 30.0,
            incident_probability: 0.2,
            train_fraction: 2.0 / 3.0,
            seed: 2017,
        }
    }

    /// Four detectors bracketing three cells; 12 × 7 feature matrices.
    pub fn ca52() -> Self {
        CorpusConfig {
            cells: 3,
            ..CorpusConfig::i5()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.records == 0 {
            return Err(Error::config("corpus needs at least one record"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::config("train_fraction must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.incident_probability) {
            return Err(Error::config("incident_probability must lie in [0, 1]"));
        }
        self.record_config(0).validate()
    }

    /// Simulator configuration for record `index`, including the warm-up.
    pub fn record_config(&self, index: usize) -> CtmConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let total = self.warmup_steps + self.steps;

        let level = rng.random_range(700.0..1500.0);
        let amplitude = rng.random_range(150.0..600.0);
        let period = rng.random_range(1.0..2.5);
        let phase = rng.random_range(0.0..2.0 * PI);
        let demand_profile: Vec<f64> = (0..total)
            .map(|t| {
                let hours = t as f64 * self.dt;
                (level + amplitude * (2.0 * PI * hours / period + phase).sin()).clamp(100.0, 2300.0)
            })
            .collect();

        let mut downstream_supply_profile = vec![self.capacity; total];
        if rng.random_bool(self.incident_probability) {
            let first = self.warmup_steps.saturating_sub(4);
            let start = rng.random_range(first..total.saturating_sub(2).max(first + 1));
            let duration = rng.random_range(3..=8);
            let factor = rng.random_range(0.3..0.7);
            for s in downstream_supply_profile.iter_mut().skip(start).take(duration) {
                *s = factor * self.capacity;
            }
        }

        let initial = (demand_profile[0] / self.free_flow_speed).min(self.jam_density);
        CtmConfig {
            n: total,
            dt: self.dt,
            cell_lengths: vec![self.cell_length; self.cells],
            substeps: self.substeps,
            free_flow_speed: self.free_flow_speed,
            backward_wave_speed: self.backward_wave_speed,
            jam_density: self.jam_density,
            capacity: self.capacity,
            demand_profile,
            downstream_supply_profile,
            initial_density: vec![initial; self.cells],
            seed: rng.random(),
            noise_std: self.noise_std,
        }
    }

    pub fn simulate_record(&self, index: usize) -> Result<TrafficStateMatrix> {
        Ok(ctm_simulate(&self.record_config(index))?.tail(self.steps))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub corpus_seed: u64,
    pub config: CorpusConfig,
    pub records: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub matrix: TrafficStateMatrix,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn generate(config: &CorpusConfig) -> Result<Corpus> {
        config.validate()?;
        let mut order: Vec<usize> = (0..config.records).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::MAX);
        order.shuffle(&mut rng);
        let n_train = (config.train_fraction * config.records as f64).round() as usize;
        let mut split = vec![Split::Validation; config.records];
        for &i in &order[..n_train] {
            split[i] = Split::Train;
        }

        let records = (0..config.records)
            .map(|i| {
                Ok(Record {
                    id: format!("rec_{i:05}"),
                    split: split[i],
                    matrix: config.simulate_record(i)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus {
            config: config.clone(),
            records,
        })
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == which)
    }

    pub fn train_matrices(&self) -> Vec<&TrafficStateMatrix> {
        self.split(Split::Train).map(|r| &r.matrix).collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            corpus_seed: self.config.seed,
            config: self.config.clone(),
            records: self
                .records
                .iter()
                .map(|r| ManifestEntry {
                    id: r.id.clone(),
                    split: r.split,
                })
                .collect(),
        }
    }

    /// Short identifier derived from the corpus seed and size.
    pub fn id(&self) -> String {
        format!("ctm-s{}-n{}-m{}", self.config.seed, self.records.len(), self.config.cells)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &self.records {
            let path = dir.join(format!("{}.csv", r.id));
            fs::write(&path, format_matrix_csv(&r.matrix)).map_err(|e| Error::io(&path, e))?;
        }
        let manifest = toml::to_string(&self.manifest())
            .map_err(|e| Error::config(format!("cannot encode manifest: {e}")))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        let records = manifest
            .records
            .into_iter()
            .map(|entry| {
                let matrix = load_matrix_csv(dir.join(format!("{}.csv", entry.id)))?;
                Ok(Record {
                    id: entry.id,
                    split: entry.split,
                    matrix,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus {
            config: manifest.config,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ctm::conservation_residuals;

    fn small() -> CorpusConfig {
        CorpusConfig {
            records: 30,
            ..CorpusConfig::i5()
        }
    }

    #[test]
    fn split_is_two_thirds() {
        let c = Corpus::generate(&small()).unwrap();
        assert_eq!(c.split(Split::Train).count(), 20);
        assert_eq!(c.split(Split::Validation).count(), 10);
    }

    #[test]
    fn records_are_conservative_and_bounded() {
        let c = Corpus::generate(&small()).unwrap();
        for r in &c.records {
            assert_eq!(r.matrix.flow.shape(), (12, 6));
            let res = conservation_residuals(&r.matrix);
            assert!(res.as_slice().iter().all(|v| v.abs() < 1e-10));
            assert!(r.matrix.density.as_slice().iter().all(|&k| k <= 150.0));
        }
    }

    #[test]
    fn generation_is_deterministic_and_round_trips_through_disk() {
        let cfg = small();
        let a = Corpus::generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = Corpus::load(dir.path()).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.matrix, y.matrix);
        }
    }

    #[test]
    fn three_cell_preset() {
        let cfg = CorpusConfig {
            records: 3,
            ..CorpusConfig::ca52()
        };
        let c = Corpus::generate(&cfg).unwrap();
        assert_eq!(c.records[0].matrix.geometry.feature_dim(), 7);
    }
}
