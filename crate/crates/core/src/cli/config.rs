use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::corpus::CorpusConfig;
use crate::data::CorruptionSpec;
use crate::error::{Error, Result};
use crate::estimation::EstimateConfig;
use crate::eval::{AblationConfig, BaselineMethod, Variant};
use crate::gan::GanConfig;

/// The whole run in one document. Every section is optional and falls back
/// to its defaults; unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub gan: GanConfig,
    pub estimate: EstimateConfig,
    pub corruption: CorruptionSpec,
    pub ablation: AblationSettings,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig::default(),
            gan: GanConfig::default(),
            estimate: EstimateConfig::default(),
            corruption: CorruptionSpec::default(),
            ablation: AblationSettings::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    /// Estimation seeds; reported figures are medians over these.
    pub seeds: Vec<u64>,
    pub max_records: Option<usize>,
    pub baselines: Vec<BaselineMethod>,
    pub plot_records: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        let d = AblationConfig::default();
        AblationSettings {
            seeds: d.seeds,
            max_records: d.max_records,
            baselines: d.baselines,
            plot_records: 0,
        }
    }
}

/// Defaults for the `--corpus` and `--checkpoint` flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// Checks every section and their mutual consistency.
    pub fn validate(&self) -> Result<()> {
        section("corpus", self.corpus.validate())?;
        section("gan", self.gan.validate())?;
        section("estimate", self.estimate.validate())?;
        let features = 2 * self.corpus.cells + 1;
        if self.gan.n_steps != self.corpus.steps {
            return Err(Error::config(format!(
                "[gan] n_steps = {} but [corpus] steps = {}",
                self.gan.n_steps, self.corpus.steps
            )));
        }
        if self.gan.feature_dim != features {
            return Err(Error::config(format!(
                "[gan] feature_dim = {} but {} cells give {features} features",
                self.gan.feature_dim, self.corpus.cells
            )));
        }
        section("corruption", self.corruption.validate(self.gan.n_steps, features))?;
        section("ablation", self.ablation_config(Variant::ALL.to_vec()).validate())
    }

    /// Checks only the sections a command reads.
    pub fn validate_sections(&self, names: &[&str]) -> Result<()> {
        for &name in names {
            let r = match name {
                "corpus" => self.corpus.validate(),
                "gan" => self.gan.validate(),
                "estimate" => self.estimate.validate(),
                "ablation" => self.ablation_config(Variant::ALL.to_vec()).validate(),
                other => unreachable!("no section {other}"),
            };
            section(name, r)?;
        }
        Ok(())
    }

    pub fn ablation_config(&self, variants: Vec<Variant>) -> AblationConfig {
        AblationConfig {
            corruption: self.corruption.clone(),
            estimation: self.estimate.clone(),
            seeds: self.ablation.seeds.clone(),
            variants,
            max_records: self.ablation.max_records,
            baselines: self.ablation.baselines.clone(),
            plot_records: self.ablation.plot_records,
        }
    }
}

fn section(name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("[{name}] {m}")),
        other => other,
    })
}
