use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::provenance::{sidecar, Provenance};
use super::{check_writable, write_output, AblateArgs, Common, EstimateArgs, EvaluateArgs, GradcheckArgs, RunConfig, SimulateArgs, TrainArgs};
use crate::data::corpus::{Corpus, Split, MANIFEST_FILE};
use crate::data::csv::format_matrix_csv;
use crate::data::{conservation_residuals, from_raw_features, load_matrix_csv, raw_features, to_features, CorruptionSpec};
use crate::error::{Error, Result};
use crate::estimation::{estimate as fit_latent, reconstruct, FrozenGan, Mask};
use crate::eval::{plot_data_csv, run_ablation, AblationTable, Variant};
use crate::gan::{Checkpoint, Encoding};
use crate::gradcheck::{run_gradcheck, GradCheckConfig};
use crate::pipeline::train_on_corpus;
use crate::tensor::Matrix;

const PROVENANCE: &str = ".provenance.toml";

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::config("--out is required for this command"))
}

fn pick_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::config(format!("no {what}: pass --{what} or set paths.{what}")))
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(seed) = a.common.seed {
        cfg.corpus.seed = seed;
    }
    if let Some(n) = a.records {
        cfg.corpus.records = n;
    }
    cfg.validate_sections(&["corpus"])?;
    let out = require_out(&a.common)?;
    let prov = out.join("provenance.toml");
    check_writable(&out.join(MANIFEST_FILE), a.common.force)?;
    check_writable(&prov, a.common.force)?;

    let corpus = Corpus::generate(&cfg.corpus)?;
    corpus.save(out)?;
    let worst = corpus
        .records
        .iter()
        .flat_map(|r| conservation_residuals(&r.matrix).into_vec())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let shape = corpus.records[0].matrix.geometry.feature_dim();
    println!(
        "records: {} (train {}, validation {}), {}×{shape} features each",
        corpus.records.len(),
        corpus.split(Split::Train).count(),
        corpus.split(Split::Validation).count(),
        cfg.corpus.steps
    );
    println!("max conservation residual: {worst:e} veh/km");
    Provenance::new("simulate", &cfg)
        .seed("corpus", cfg.corpus.seed)
        .output(out)
        .write(&prov, a.common.force)
}

fn parse_encoding(s: &str) -> Result<Encoding> {
    match s {
        "decimal" => Ok(Encoding::Decimal),
        "f64le" => Ok(Encoding::F64le),
        other => Err(Error::config(format!("unknown encoding {other:?} (decimal or f64le)"))),
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(seed) = a.common.seed {
        cfg.gan.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.gan.epochs = e;
    }
    cfg.validate_sections(&["gan"])?;
    let encoding = parse_encoding(&a.encoding)?;
    let corpus_dir = pick_path(a.corpus, &cfg.paths.corpus, "corpus")?;
    let out = require_out(&a.common)?;
    let history_path = a.history.unwrap_or_else(|| sidecar(out, ".history.csv"));
    let prov = sidecar(out, PROVENANCE);
    for p in [out, history_path.as_path(), prov.as_path()] {
        check_writable(p, a.common.force)?;
    }

    let corpus = Corpus::load(&corpus_dir)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut provenance = Provenance::new("train", &cfg).seed("gan", cfg.gan.seed).input(&corpus_dir)?;
    if let Some(r) = &a.resume {
        provenance = provenance.input(r)?;
    }
    let (checkpoint, history) = train_on_corpus(&corpus, &cfg.gan, resume)?;

    let mut csv = String::from("epoch,d_loss,g_loss,d_accuracy\n");
    for h in &history {
        writeln!(csv, "{},{},{},{}", h.epoch, h.d_loss, h.g_loss, h.d_accuracy).expect("writing to a String");
    }
    write_output(out, checkpoint.to_json(encoding)?.as_bytes(), a.common.force)?;
    write_output(&history_path, csv.as_bytes(), a.common.force)?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: d_loss {:.4} g_loss {:.4} d_accuracy {:.3}",
            last.epoch, last.d_loss, last.g_loss, last.d_accuracy
        );
    }
    provenance.output(out).output(&history_path).write(&prov, a.common.force)
}

fn parse_mask_csv(text: &str, path: &Path) -> Result<Mask> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| match v.trim() {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                other => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("mask entries must be 0 or 1, found {other:?}"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Mask::new(Matrix::from_rows(&rows).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?)
}

fn format_mask_csv(mask: &Mask) -> String {
    let mut out = String::new();
    for r in 0..mask.shape().0 {
        let row: Vec<&str> = mask
            .matrix()
            .row(r)
            .iter()
            .map(|&v| if v == 1.0 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(seed) = a.common.seed {
        cfg.estimate.seed = seed;
    }
    if let Some(v) = a.lambda_p {
        cfg.estimate.weights.lambda_p = v;
    }
    if let Some(v) = a.lambda_c {
        cfg.estimate.weights.lambda_c = v;
    }
    if let Some(v) = a.iterations {
        cfg.estimate.iterations = v;
    }
    if let Some(v) = a.restarts {
        cfg.estimate.restarts = v;
    }
    if let Some(rate) = a.mask_rate {
        cfg.corruption = CorruptionSpec::random_entries(rate, cfg.corruption.seed);
    }
    if let Some(row) = a.future_block {
        cfg.corruption = CorruptionSpec::future_block(row);
    }
    cfg.validate_sections(&["estimate"])?;

    let ck_path = pick_path(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let out = require_out(&a.common)?;
    let trace_path = sidecar(out, ".trace.csv");
    let mask_path = sidecar(out, ".mask.csv");
    let prov = sidecar(out, PROVENANCE);
    for p in [out, trace_path.as_path(), mask_path.as_path(), prov.as_path()] {
        check_writable(p, a.common.force)?;
    }

    let ck = Checkpoint::load(&ck_path)?;
    let input = load_matrix_csv(&a.input)?;
    if input.steps() != ck.config.n_steps || input.geometry != ck.geometry {
        return Err(Error::shape(format!(
            "input is {} steps × {} cells (dt {}), checkpoint expects {} × {} (dt {}) with matching cell lengths",
            input.steps(),
            input.cells(),
            input.geometry.dt,
            ck.config.n_steps,
            ck.geometry.cells(),
            ck.geometry.dt
        )));
    }
    let (rows, cols) = (input.steps(), input.geometry.feature_dim());
    let mut provenance = Provenance::new("estimate", &cfg)
        .seed("estimate", cfg.estimate.seed)
        .input(&ck_path)?
        .input(&a.input)?;
    let mask = match &a.mask {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let m = parse_mask_csv(&text, p)?;
            if m.shape() != (rows, cols) {
                return Err(Error::shape(format!("mask is {:?}, input needs ({rows}, {cols})", m.shape())));
            }
            provenance = provenance.input(p)?;
            m
        }
        None => {
            cfg.corruption.validate(rows, cols)?;
            provenance = provenance.seed("corruption", cfg.corruption.seed);
            cfg.corruption.mask(rows, cols)?
        }
    };

    let features = to_features(&input, Some(&ck.scaler))?;
    let observed = features
        .features
        .zip_with(mask.matrix(), |v, keep| if keep == 1.0 { v } else { crate::data::PLACEHOLDER })?;
    let fit = fit_latent(&FrozenGan::from_checkpoint(&ck), &observed, &mask, &cfg.estimate)?;
    let generated = ck.scaler.denormalize(&fit.gz_hat)?;
    let blended = reconstruct(&raw_features(&input), &mask, &generated)?;
    let (result, _) = from_raw_features(&blended, &ck.geometry)?;

    let mut trace = String::from("iteration,best_total_loss\n");
    for (i, v) in fit.loss_trace.iter().enumerate() {
        writeln!(trace, "{i},{v}").expect("writing to a String");
    }
    write_output(out, format_matrix_csv(&result).as_bytes(), a.common.force)?;
    write_output(&trace_path, trace.as_bytes(), a.common.force)?;
    write_output(&mask_path, format_mask_csv(&mask).as_bytes(), a.common.force)?;
    println!(
        "filled {} of {} entries; loss {:.6} (contextual {:.6}, perceptual {:.6}, conservative {:.6}), restart {}",
        mask.missing(),
        rows * cols,
        fit.loss.total,
        fit.loss.contextual,
        fit.loss.perceptual,
        fit.loss.conservative,
        fit.restart
    );
    provenance
        .output(out)
        .output(&trace_path)
        .output(&mask_path)
        .write(&prov, a.common.force)
}

fn print_table(table: &AblationTable) {
    println!("{} validation records, corpus {}", table.records, table.corpus_id);
    println!("{:<26} {:<8} {:>10} {:>14}", "variant", "target", "mape_pct", "mse");
    for r in &table.rows {
        println!("{:<26} {:<8} {:>10.3} {:>14.4}", r.variant, r.target.name(), r.mape_pct, r.mse);
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(seed) = a.common.seed {
        cfg.estimate.seed = seed;
    }
    if let Some(n) = a.max_records {
        cfg.ablation.max_records = Some(n);
    }
    cfg.ablation.seeds = vec![cfg.estimate.seed];
    cfg.ablation.plot_records = match (&a.plots, a.plot_records) {
        (None, _) => 0,
        (Some(_), n) => n.unwrap_or(3),
    };
    cfg.validate_sections(&["estimate", "ablation"])?;
    let ck_path = pick_path(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let corpus_dir = pick_path(a.corpus, &cfg.paths.corpus, "corpus")?;
    let out = require_out(&a.common)?;
    let prov = sidecar(out, PROVENANCE);
    check_writable(out, a.common.force)?;
    check_writable(&prov, a.common.force)?;

    let ck = Checkpoint::load(&ck_path)?;
    let corpus = Corpus::load(&corpus_dir)?;
    let table = run_ablation(&corpus, &ck, &cfg.ablation_config(vec![Variant::Full]))?;
    write_output(out, table.to_csv().as_bytes(), a.common.force)?;
    let mut provenance = Provenance::new("evaluate", &cfg)
        .seed("estimate", cfg.estimate.seed)
        .seed("corruption", cfg.corruption.seed)
        .input(&ck_path)?
        .input(&corpus_dir)?
        .output(out);
    if let Some(dir) = &a.plots {
        for p in &table.plots {
            let path = dir.join(format!("{}.csv", p.record_id));
            write_output(&path, plot_data_csv(p).as_bytes(), a.common.force)?;
            provenance = provenance.output(&path);
        }
    }
    print_table(&table);
    provenance.write(&prov, a.common.force)
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(seed) = a.common.seed {
        cfg.corruption.seed = seed;
    }
    if let Some(seeds) = a.seeds {
        cfg.ablation.seeds = seeds;
    }
    if let Some(n) = a.max_records {
        cfg.ablation.max_records = Some(n);
    }
    cfg.validate_sections(&["estimate", "ablation"])?;
    let ck_path = pick_path(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let corpus_dir = pick_path(a.corpus, &cfg.paths.corpus, "corpus")?;
    let out = require_out(&a.common)?;
    let prov = sidecar(out, PROVENANCE);
    check_writable(out, a.common.force)?;
    check_writable(&prov, a.common.force)?;

    let ck = Checkpoint::load(&ck_path)?;
    let corpus = Corpus::load(&corpus_dir)?;
    let table = run_ablation(&corpus, &ck, &cfg.ablation_config(Variant::ALL.to_vec()))?;
    write_output(out, table.to_csv().as_bytes(), a.common.force)?;
    print_table(&table);
    let mut provenance = Provenance::new("ablate", &cfg).seed("corruption", cfg.corruption.seed);
    for (i, s) in cfg.ablation.seeds.iter().enumerate() {
        provenance = provenance.seed(&format!("estimate_{i}"), *s);
    }
    provenance
        .input(&ck_path)?
        .input(&corpus_dir)?
        .output(out)
        .write(&prov, a.common.force)?;

    if a.assert_ordering {
        let violations = table.ordering_violations();
        if !violations.is_empty() {
            return Err(Error::Check(format!("variant ordering: {}", violations.join("; "))));
        }
        println!("ordering holds: full lowest, no_p_no_c highest median mse for flow and density");
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if let Some(path) = &a.common.config {
        RunConfig::load(path)?;
    }
    let cfg = GradCheckConfig {
        hidden_sizes: a.hidden,
        input_sizes: a.input,
        steps: a.steps,
        repeats: a.repeats,
        composed_instances: a.composed,
        seed: a.common.seed.unwrap_or(0),
        corrupt_gradient: a.corrupt_gradient,
        ..GradCheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    print!("{report}");
    if let Some(out) = &a.common.out {
        write_output(out, report.to_string().as_bytes(), a.common.force)?;
    }
    if !report.passed() {
        return Err(Error::Check(format!(
            "max relative gradient error {:e} exceeds {:e}",
            report.worst(),
            report.tolerance
        )));
    }
    println!("all gradients within {:e}", report.tolerance);
    Ok(())
}
