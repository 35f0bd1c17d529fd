use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{baseline_fill, BaselineMethod, ErrorAccumulator, ErrorSummary};
use crate::data::corpus::{Corpus, Split};
use crate::data::features::raw_features;
use crate::data::{to_features, CorruptionSpec, PLACEHOLDER};
use crate::error::{Error, Result};
use crate::estimation::{estimate, reconstruct, EstimateConfig, FrozenGan, LossWeights, Mask};
use crate::gan::Checkpoint;
use crate::tensor::Matrix;

pub const ABLATION_CSV_HEADER: &str = "variant,target,mape_pct,mse,seeds,corpus_id";

/// Which of the two auxiliary losses are switched on during estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoPNoC,
    NoP,
    NoC,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NoPNoC, Variant::NoP, Variant::NoC, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoPNoC => "no_p_no_c",
            Variant::NoP => "no_p",
            Variant::NoC => "no_c",
            Variant::Full => "full",
        }
    }

    /// `base` with the disabled terms zeroed.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        let (p, c) = match self {
            Variant::NoPNoC => (false, false),
            Variant::NoP => (false, true),
            Variant::NoC => (true, false),
            Variant::Full => (true, true),
        };
        LossWeights {
            lambda_p: if p { base.lambda_p } else { 0.0 },
            lambda_c: if c { base.lambda_c } else { 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Density,
    Flow,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Density, Target::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Target::Density => "density",
            Target::Flow => "flow",
        }
    }

    /// Feature columns of this quantity for `cells` road cells.
    pub fn columns(self, cells: usize) -> Range<usize> {
        match self {
            Target::Flow => 0..cells + 1,
            Target::Density => cells + 1..2 * cells + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub corruption: CorruptionSpec,
    /// Shared by every variant; each variant only zeroes some weights.
    pub estimation: EstimateConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Score only the first `max_records` validation records.
    pub max_records: Option<usize>,
    pub baselines: Vec<BaselineMethod>,
    /// Keep physical matrices for this many records (full variant, first
    /// seed) for plotting.
    pub plot_records: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            corruption: CorruptionSpec::random_entries(0.3, 0),
            estimation: EstimateConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::ALL.to_vec(),
            max_records: None,
            baselines: BaselineMethod::ALL.to_vec(),
            plot_records: 0,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimation.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("ablation needs at least one seed"));
        }
        if self.max_records == Some(0) {
            return Err(Error::config("max_records must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// A loss variant name, or `baseline_<method>`.
    pub variant: String,
    pub target: Target,
    /// Median over seeds.
    pub mape_pct: f64,
    /// Median over seeds, in the target's physical units squared.
    pub mse: f64,
    pub seeds: Vec<u64>,
    pub corpus_id: String,
    /// Missing entries with zero truth left out of the MAPE, per seed.
    pub excluded: usize,
}

/// Physical feature matrices of one scored record.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordOutcome {
    pub record_id: String,
    pub cells: usize,
    pub truth: Matrix,
    pub estimate: Matrix,
    pub baseline: Matrix,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub corpus_id: String,
    pub records: usize,
    pub rows: Vec<AblationRow>,
    pub plots: Vec<RecordOutcome>,
}

impl AblationTable {
    pub fn row(&self, variant: &str, target: Target) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.target == target)
    }

    /// Empty when the full variant has the lowest and the bare variant the
    /// highest median MSE for both targets; otherwise one line per breach.
    pub fn ordering_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for target in Target::ALL {
            let mse = |v: Variant| self.row(v.name(), target).map(|r| r.mse);
            let Some(values) = Variant::ALL.iter().map(|&v| mse(v)).collect::<Option<Vec<f64>>>() else {
                out.push(format!("{}: not every variant was run", target.name()));
                continue;
            };
            let (bare, full) = (values[0], values[3]);
            for (v, &x) in Variant::ALL.iter().zip(&values) {
                if *v != Variant::Full && x <= full {
                    out.push(format!("{}: {} mse {x} is not above full {full}", target.name(), v.name()));
                }
                if *v != Variant::NoPNoC && x >= bare {
                    out.push(format!("{}: {} mse {x} is not below no_p_no_c {bare}", target.name(), v.name()));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATION_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.variant,
                r.target.name(),
                r.mape_pct,
                r.mse,
                seeds.join(";"),
                r.corpus_id
            )
            .expect("writing to a String");
        }
        out
    }
}

fn record_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Prepared {
    id: String,
    truth: Matrix,
    observed: Matrix,
    mask: Mask,
}

fn summarize(accs: &[ErrorAccumulator; 2]) -> Result<[ErrorSummary; 2]> {
    Ok([accs[0].finish()?, accs[1].finish()?])
}

/// Scores the four loss variants and the requested baselines on the
/// validation records of `corpus`, all against the same trained model and
/// the same masks.
pub fn run_ablation(corpus: &Corpus, checkpoint: &Checkpoint, config: &AblationConfig) -> Result<AblationTable> {
    config.validate()?;
    let geometry = &checkpoint.geometry;
    let cells = geometry.cells();
    let model = FrozenGan::from_checkpoint(checkpoint);

    let mut prepared = Vec::new();
    for (idx, rec) in corpus.split(Split::Validation).enumerate() {
        if config.max_records.is_some_and(|cap| idx >= cap) {
            break;
        }
        if rec.matrix.geometry.cells() != cells || rec.matrix.steps() != checkpoint.config.n_steps {
            return Err(Error::shape(format!(
                "record {} is {}×{} cells, model expects {}×{}",
                rec.id,
                rec.matrix.steps(),
                rec.matrix.cells(),
                checkpoint.config.n_steps,
                cells
            )));
        }
        let fs = to_features(&rec.matrix, Some(&checkpoint.scaler))?;
        let (rows, cols) = fs.features.shape();
        let mask = config
            .corruption
            .with_seed(record_seed(config.corruption.seed, idx))
            .mask(rows, cols)?;
        let observed = fs
            .features
            .zip_with(mask.matrix(), |v, keep| if keep == 1.0 { v } else { PLACEHOLDER })?;
        prepared.push(Prepared {
            id: rec.id.clone(),
            truth: raw_features(&rec.matrix),
            observed,
            mask,
        });
    }
    if prepared.is_empty() {
        return Err(Error::EmptyEvaluation("corpus has no validation records".into()));
    }

    let corpus_id = corpus.id();
    let mut rows = Vec::new();
    let mut plots = Vec::new();

    for &variant in &config.variants {
        let weights = variant.weights(config.estimation.weights);
        let mut per_seed = Vec::with_capacity(config.seeds.len());
        for (seed_pos, &seed) in config.seeds.iter().enumerate() {
            let mut accs = [ErrorAccumulator::new(), ErrorAccumulator::new()];
            for (idx, p) in prepared.iter().enumerate() {
                let est_cfg = EstimateConfig {
                    seed: record_seed(seed, idx),
                    weights,
                    ..config.estimation.clone()
                };
                let fit = estimate(&model, &p.observed, &p.mask, &est_cfg)?;
                let blended = reconstruct(&p.observed, &p.mask, &fit.gz_hat)?;
                let physical = checkpoint.scaler.denormalize(&blended)?;
                for (acc, target) in accs.iter_mut().zip(Target::ALL) {
                    acc.add(&physical, &p.truth, &p.mask, target.columns(cells))?;
                }
                if variant == Variant::Full && seed_pos == 0 && idx < config.plot_records {
                    plots.push(RecordOutcome {
                        record_id: p.id.clone(),
                        cells,
                        truth: p.truth.clone(),
                        estimate: physical,
                        baseline: baseline_fill(&p.truth, &p.mask, BaselineMethod::LinearInterp)?,
                        mask: p.mask.clone(),
                    });
                }
            }
            per_seed.push(summarize(&accs)?);
        }
        for (t, target) in Target::ALL.into_iter().enumerate() {
            rows.push(AblationRow {
                variant: variant.name().to_string(),
                target,
                mape_pct: median(per_seed.iter().map(|s| s[t].mape_pct).collect()),
                mse: median(per_seed.iter().map(|s| s[t].mse).collect()),
                seeds: config.seeds.clone(),
                corpus_id: corpus_id.clone(),
                excluded: per_seed[0][t].excluded,
            });
        }
    }

    for &method in &config.baselines {
        let mut accs = [ErrorAccumulator::new(), ErrorAccumulator::new()];
        for p in &prepared {
            let filled = baseline_fill(&p.truth, &p.mask, method)?;
            for (acc, target) in accs.iter_mut().zip(Target::ALL) {
                acc.add(&filled, &p.truth, &p.mask, target.columns(cells))?;
            }
        }
        let s = summarize(&accs)?;
        for (t, target) in Target::ALL.into_iter().enumerate() {
            rows.push(AblationRow {
                variant: format!("baseline_{}", method.name()),
                target,
                mape_pct: s[t].mape_pct,
                mse: s[t].mse,
                seeds: config.seeds.clone(),
                corpus_id: corpus_id.clone(),
                excluded: s[t].excluded,
            });
        }
    }

    Ok(AblationTable {
        corpus_id,
        records: prepared.len(),
        rows,
        plots,
    })
}

/// Long-format plot data: one line per (time step, location) with the true,
/// estimated and baseline values. Flow locations are `flow_<detector>`,
/// density locations `density_<cell>` (both 0-based).
pub fn plot_data_csv(outcome: &RecordOutcome) -> String {
    let m = outcome.cells;
    let mut out = String::from("t,location,truth,estimate,baseline,observed\n");
    for t in 0..outcome.truth.rows() {
        for c in 0..outcome.truth.cols() {
            let location = if c <= m {
                format!("flow_{c}")
            } else {
                format!("density_{}", c - m - 1)
            };
            writeln!(
                out,
                "{t},{location},{},{},{},{}",
                outcome.truth[(t, c)],
                outcome.estimate[(t, c)],
                outcome.baseline[(t, c)],
                u8::from(outcome.mask.is_observed(t, c))
            )
            .expect("writing to a String");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_weights() {
        let base = LossWeights { lambda_p: 0.1, lambda_c: 0.01 };
        assert_eq!(Variant::NoPNoC.weights(base), LossWeights { lambda_p: 0.0, lambda_c: 0.0 });
        assert_eq!(Variant::NoP.weights(base), LossWeights { lambda_p: 0.0, lambda_c: 0.01 });
        assert_eq!(Variant::NoC.weights(base), LossWeights { lambda_p: 0.1, lambda_c: 0.0 });
        assert_eq!(Variant::Full.weights(base), base);
    }

    #[test]
    fn target_columns_partition_the_row() {
        assert_eq!(Target::Flow.columns(5), 0..6);
        assert_eq!(Target::Density.columns(5), 6..11);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
