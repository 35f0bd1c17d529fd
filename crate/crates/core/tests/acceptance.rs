//! One PASS/FAIL line per acceptance criterion.
//!
//! Criteria 1-4 always run. Criteria 5-8 train a full-size model and run
//! the ablation and prediction protocols through the command-line tool,
//! which takes roughly half an hour on one core; they run only when
//! `TRAFFICGAN_ACCEPTANCE=full`. Artifacts land in `target/acceptance/`.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafficgan::data::corpus::{Corpus, CorpusConfig};
use trafficgan::data::conservation_residuals;
use trafficgan::estimation::{conservative_loss_physical, reconstruct, Mask};
use trafficgan::gradcheck::{run_gradcheck, GradCheckConfig};
use trafficgan::tensor::Matrix;

struct Outcome {
    passed: bool,
    detail: String,
}

struct Ledger {
    failures: usize,
}

impl Ledger {
    fn record(&mut self, id: u32, title: &str, started: Instant, outcome: Outcome) {
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        if !outcome.passed {
            self.failures += 1;
        }
        println!(
            "[{verdict}] {id}. {title}: {} ({:.1}s)",
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }

    fn skip(&self, id: u32, title: &str) {
        println!("[SKIP] {id}. {title}: set TRAFFICGAN_ACCEPTANCE=full to run");
    }
}

fn check(passed: bool, detail: impl Display) -> Outcome {
    Outcome { passed, detail: detail.to_string() }
}

fn lstm_gradients() -> Outcome {
    let cfg = GradCheckConfig { composed_instances: 0, ..GradCheckConfig::default() };
    let report = run_gradcheck(&cfg).expect("gradcheck runs");
    let lstm: Vec<_> = report.components.iter().filter(|c| c.component.starts_with("lstm.")).collect();
    let instances = lstm.iter().map(|c| c.instances).min().unwrap_or(0);
    let worst = lstm.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    check(
        instances >= 100 && lstm.len() == 13 && worst < 1e-4,
        format!("{instances} instances, {} gradient families, max relative error {worst:.2e} (< 1e-4)", lstm.len()),
    )
}

fn composed_gradients() -> Outcome {
    let cfg = GradCheckConfig {
        hidden_sizes: vec![],
        composed_instances: 20,
        ..GradCheckConfig::default()
    };
    let report = run_gradcheck(&cfg).expect("gradcheck runs");
    let worst = report.worst();
    let listing: Vec<String> = report
        .components
        .iter()
        .map(|c| format!("{} {:.2e} x{}", c.component, c.max_relative_error, c.instances))
        .collect();
    check(
        report.components.len() == 3 && report.components.iter().all(|c| c.instances == 20) && worst < 1e-4,
        listing.join(", "),
    )
}

fn conservation_certificate() -> Outcome {
    let corpus = Corpus::generate(&CorpusConfig::default()).expect("default corpus");
    let (mut worst_rel, mut worst_loss) = (0.0f64, 0.0f64);
    for record in &corpus.records {
        let ts = &record.matrix;
        let r = conservation_residuals(ts);
        for t in 0..r.rows() {
            for s in 0..r.cols() {
                let ratio = ts.geometry.dt / ts.geometry.cell_lengths[s];
                let scale = ts.density[(t + 1, s)].abs()
                    + ts.density[(t, s)].abs()
                    + ratio * (ts.flow[(t, s)].abs() + ts.flow[(t, s + 1)].abs());
                worst_rel = worst_rel.max(r[(t, s)].abs() / scale.max(f64::MIN_POSITIVE));
            }
        }
        worst_loss = worst_loss.max(conservative_loss_physical(ts).expect("valid geometry"));
    }
    check(
        worst_rel < 1e-12 && worst_loss < 1e-18,
        format!(
            "{} records, max relative residual {worst_rel:.2e} (< 1e-12), max conservative loss {worst_loss:.2e} (< 1e-18)",
            corpus.records.len()
        ),
    )
}

fn reconstruction_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for _ in 0..1000 {
        let (rows, cols) = (rng.random_range(1..=12), rng.random_range(1..=11));
        let mut draw = |scale: f64| Matrix::from_fn(rows, cols, |_, _| scale * (rng.random::<f64>() - 0.5));
        let y = draw(4000.0);
        let gz = draw(1.0);
        let bits = Matrix::from_fn(rows, cols, |_, _| if rng.random_bool(0.6) { 1.0 } else { 0.0 });
        let mask = Mask::new(bits).expect("binary");
        let out = reconstruct(&y, &mask, &gz).expect("same shapes");
        for r in 0..rows {
            for c in 0..cols {
                let expected = if mask.is_observed(r, c) { y[(r, c)] } else { gz[(r, c)] };
                checked += 1;
                mismatches += usize::from(out[(r, c)].to_bits() != expected.to_bits());
            }
        }
    }
    check(mismatches == 0, format!("1000 triples, {checked} entries, {mismatches} not bit-identical"))
}

/// Settings shared by the estimation-based criteria. The GAN and corpus
/// sections stay at their defaults; only the training seed is pinned.
const RUN_CONFIG: &str = r#"
[gan]
seed = 1

[ablation]
seeds = [0, 1, 2, 3, 4]
max_records = 40
"#;

const PREDICTION: &str = r#"
[corruption.pattern]
kind = "future_block"
start_row = 6
"#;

fn trafficgan(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_trafficgan"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("binary runs");
    assert!(status.success(), "trafficgan {args:?} exited with {status}");
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every file one full pipeline pass produces, under `dir`.
struct Pass {
    dir: PathBuf,
}

impl Pass {
    fn run(dir: PathBuf) -> Self {
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).expect("artifact dir");
        let config = dir.join("run.toml");
        let prediction = dir.join("prediction.toml");
        fs::write(&config, RUN_CONFIG).unwrap();
        fs::write(&prediction, format!("{RUN_CONFIG}{PREDICTION}")).unwrap();
        let pass = Pass { dir };
        let (corpus, ck) = (pass.path("corpus"), pass.path("checkpoint.json"));
        trafficgan(&["simulate", "--config", s(&config), "--out", s(&corpus)]);
        trafficgan(&["train", "--config", s(&config), "--corpus", s(&corpus), "--out", s(&ck)]);
        let common = ["--checkpoint", s(&ck), "--corpus", s(&corpus)];
        let ablation = pass.path("ablation.csv");
        trafficgan(&[&["ablate", "--config", s(&config), "--out", s(&ablation)][..], &common].concat());
        let predicted = pass.path("prediction.csv");
        trafficgan(&[&["ablate", "--config", s(&prediction), "--out", s(&predicted)][..], &common].concat());
        pass
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn mse(&self, table: &str, variant: &str, target: &str) -> f64 {
        self.column(table, variant, target, 3)
    }

    fn mape(&self, table: &str, variant: &str, target: &str) -> f64 {
        self.column(table, variant, target, 2)
    }

    fn column(&self, table: &str, variant: &str, target: &str, index: usize) -> f64 {
        let prefix = format!("{variant},{target},");
        let text = self.read(table);
        let row = text.lines().find(|l| l.starts_with(&prefix)).unwrap_or_else(|| panic!("{table}: no {prefix}"));
        row.split(',').nth(index).unwrap().parse().unwrap()
    }
}

const VARIANTS: [&str; 4] = ["full", "no_p", "no_c", "no_p_no_c"];

fn equilibrium(pass: &Pass) -> Outcome {
    let history = pass.read("checkpoint.json.history.csv");
    let last = history.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    let accuracy: f64 = fields[3].parse().unwrap();
    check(
        (0.4..=0.7).contains(&accuracy),
        format!("epoch {} held-out discriminator accuracy {accuracy:.3} (in [0.4, 0.7])", fields[0]),
    )
}

fn ablation_ordering(pass: &Pass) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for target in ["density", "flow"] {
        let mse: Vec<f64> = VARIANTS.iter().map(|v| pass.mse("ablation.csv", v, target)).collect();
        let full_lowest = mse[1..].iter().all(|&m| mse[0] < m);
        let bare_highest = mse[..3].iter().all(|&m| m < mse[3]);
        ok &= full_lowest && bare_highest;
        parts.push(format!(
            "{target} MSE full {:.4} no_p {:.4} no_c {:.4} no_p_no_c {:.4} (full lowest: {full_lowest}, bare highest: {bare_highest})",
            mse[0], mse[1], mse[2], mse[3]
        ));
        let full = pass.mape("ablation.csv", "full", target);
        let mean = pass.mape("ablation.csv", "baseline_column_mean", target);
        ok &= full < mean;
        parts.push(format!("{target} MAPE full {full:.2}% vs column_mean {mean:.2}%"));
    }
    check(ok, parts.join("; "))
}

fn prediction(pass: &Pass) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for target in ["density", "flow"] {
        let full = pass.mse("prediction.csv", "full", target);
        let locf = pass.mse("prediction.csv", "baseline_locf", target);
        ok &= full < locf;
        parts.push(format!("{target} MSE full {full:.4} vs locf {locf:.4}"));
    }
    check(ok, parts.join("; "))
}

fn reproducible(a: &Pass, b: &Pass) -> Outcome {
    let files = ["checkpoint.json", "checkpoint.json.history.csv", "ablation.csv", "prediction.csv"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| a.read(f) != b.read(f)).collect();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} outputs byte-identical across two runs", files.len())
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let mut ledger = Ledger { failures: 0 };

    let t = Instant::now();
    ledger.record(1, "LSTM gradient fidelity", t, lstm_gradients());
    let t = Instant::now();
    ledger.record(2, "composed gradient fidelity", t, composed_gradients());
    let t = Instant::now();
    ledger.record(3, "conservation certificate", t, conservation_certificate());
    let t = Instant::now();
    ledger.record(4, "reconstruction identity", t, reconstruction_identity());

    let titles = [
        (5, "GAN equilibrium diagnostic"),
        (6, "ablation ordering and column-mean baseline"),
        (7, "prediction beats locf"),
        (8, "reproducibility"),
    ];
    if std::env::var("TRAFFICGAN_ACCEPTANCE").as_deref() == Ok("full") {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let t = Instant::now();
        let first = Pass::run(root.join("run1"));
        println!("       pipeline pass 1 finished in {:.0}s", t.elapsed().as_secs_f64());
        ledger.record(5, titles[0].1, t, equilibrium(&first));
        let t = Instant::now();
        ledger.record(6, titles[1].1, t, ablation_ordering(&first));
        let t = Instant::now();
        ledger.record(7, titles[2].1, t, prediction(&first));
        let t = Instant::now();
        let second = Pass::run(root.join("run2"));
        ledger.record(8, titles[3].1, t, reproducible(&first, &second));
    } else {
        for (id, title) in titles {
            ledger.skip(id, title);
        }
    }

    if ledger.failures > 0 {
        println!("{} criteria failed", ledger.failures);
        std::process::exit(1);
    }
}
