//! Error metrics over missing entries, naive fill-in baselines and the
//! loss-ablation experiment.

mod ablation;
mod baseline;
mod metrics;

pub use ablation::{
    plot_data_csv, run_ablation, AblationConfig, AblationRow, AblationTable, RecordOutcome, Target, Variant,
    ABLATION_CSV_HEADER,
};
pub use baseline::{baseline_fill, BaselineMethod};
pub use metrics::{mape, mse, ErrorAccumulator, ErrorSummary, ZERO_TRUTH};
