//! Subcommand implementations. Each writes its report files and prints a
//! summary to `out`; warnings go to `err`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use eraps_core::eval::{check_edges, default_edges, fmt_f64, regularizer_sweep, reports_to_csv};
use eraps_core::synth::{
    coverage_gap_experiment, dkw_experiment, set_convergence_experiment, GapArm, PlugIn,
};
use eraps_core::{
    EnsembleConfig, EvalReport, LabeledSeries, Method, MethodConfig, PreparedMethod, SweepGrid,
    TheoryReport,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::ingest::{ingest_csv, Ingested, TrainSplit};

/// Verify thresholds.
pub const GAP_MAX: f64 = 0.03;
pub const ORACLE_GAP_MAX: f64 = 0.02;
pub const CONVERGENCE_MIN: f64 = 0.95;
pub const ORACLE_CONVERGENCE_MIN: f64 = 0.99;

/// Train/test data for a run.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: LabeledSeries,
    pub test: LabeledSeries,
    /// Raw label names, when read from a file.
    pub labels: Option<Vec<String>>,
}

impl Dataset {
    /// Classes the models are fit over.
    pub fn n_classes(&self) -> usize {
        self.train.n_classes()
    }

    /// Classes the metrics range over (includes unseen test labels).
    pub fn n_eval_classes(&self) -> usize {
        self.test.n_classes().max(self.train.n_classes())
    }
}

pub fn train_split(cfg: &RunConfig) -> TrainSplit {
    match cfg.train_count {
        Some(n) => TrainSplit::Count(n),
        None => TrainSplit::Fraction(cfg.train_fraction),
    }
}

pub fn ingest(cfg: &RunConfig, path: &Path) -> Result<Ingested> {
    ingest_csv(path, &cfg.label_column, train_split(cfg), cfg.classes.as_deref())
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => {
            let d = ingest(cfg, path)?;
            Ok(Dataset {
                train: d.train,
                test: d.test,
                labels: Some(d.dictionary),
            })
        }
        None => {
            let s = &cfg.synthetic;
            let sample = s
                .dgp
                .build()
                .context("synthetic")?
                .generate(s.n_train + s.n_test)?;
            let (train, test) = sample.series.split_at(s.n_train);
            Ok(Dataset {
                train,
                test,
                labels: None,
            })
        }
    }
}

fn method_config(cfg: &RunConfig) -> MethodConfig {
    MethodConfig {
        ensemble: EnsembleConfig {
            n_models: cfg.n_models,
            phi: cfg.phi,
        },
        batch_size: cfg.batch_size,
        split: cfg.split,
        classifier: cfg.classifier,
        seed: cfg.seed,
        mode: cfg.threshold_mode(),
    }
}

fn edges(cfg: &RunConfig, n_classes: usize) -> Result<Vec<f64>> {
    let e = cfg.strata.clone().unwrap_or_else(|| default_edges(n_classes));
    check_edges(&e, n_classes).context("strata")?;
    Ok(e)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Serialize)]
struct RunFile<'a> {
    timestamp: u64,
    config: &'a RunConfig,
    labels: &'a Option<Vec<String>>,
    reports: &'a [EvalReport],
}

fn prepare_all(
    cfg: &RunConfig,
    data: &Dataset,
    err: &mut dyn Write,
) -> Result<Vec<PreparedMethod>> {
    let mc = method_config(cfg);
    cfg.methods
        .iter()
        .map(|&method| {
            let prepared = PreparedMethod::prepare(method, &data.train, &data.test, &mc)
                .with_context(|| format!("fitting {method}"))?;
            if prepared.fallback_count() > 0 {
                writeln!(
                    err,
                    "warning: {} training indices appeared in every bootstrap sample; used all models for them",
                    prepared.fallback_count()
                )?;
            }
            Ok(prepared)
        })
        .collect()
}

fn warn_saps(cfg: &RunConfig, lambda_in_use: bool, err: &mut dyn Write) -> Result<()> {
    if cfg.methods.contains(&Method::Saps) && lambda_in_use {
        writeln!(err, "warning: saps forces lambda to 0; the configured lambda is ignored for it")?;
    }
    Ok(())
}

/// Reports for every `(method, alpha)` pair; writes `<output>.json` and
/// `<output>.csv`.
pub fn run(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<Vec<EvalReport>> {
    let data = load_data(cfg)?;
    let reg = cfg.reg()?;
    reg.check_classes(data.n_classes()).context("k_reg")?;
    warn_saps(cfg, cfg.lambda != 0.0, err)?;
    let n_eval = data.n_eval_classes();
    let edges = edges(cfg, n_eval)?;
    let mut reports = Vec::new();
    for prepared in prepare_all(cfg, &data, err)? {
        for &alpha in &cfg.alphas {
            let sets = prepared.predict(alpha, reg)?;
            reports.push(EvalReport::from_sets(
                prepared.method().name(),
                alpha,
                prepared.effective_reg(reg),
                cfg.seed,
                &sets,
                data.test.labels(),
                n_eval,
                &edges,
            )?);
        }
    }
    let json = serde_json::to_string_pretty(&RunFile {
        timestamp: timestamp(),
        config: cfg,
        labels: &data.labels,
        reports: &reports,
    })?;
    write_file(&with_suffix(&cfg.output, ".json"), &json)?;
    write_file(&with_suffix(&cfg.output, ".csv"), &reports_to_csv(&reports)?)?;
    print_table(&reports, out)?;
    Ok(reports)
}

fn print_table(reports: &[EvalReport], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{:<8} {:>7} {:>7} {:>6} {:>9} {:>8}", "method", "alpha", "lambda", "k_reg", "coverage", "size")?;
    for r in reports {
        writeln!(
            out,
            "{:<8} {:>7} {:>7} {:>6} {:>9.4} {:>8.3}",
            r.method,
            fmt_f64(r.alpha),
            fmt_f64(r.lambda),
            r.k_reg,
            r.coverage,
            r.mean_size
        )?;
    }
    Ok(())
}

/// Regularizer sweep per `(method, alpha)`; writes `<output>_sweep.csv`
/// (one row per grid pair) and `<output>_sweep.json` (full reports).
pub fn sweep(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<Vec<EvalReport>> {
    let data = load_data(cfg)?;
    let grid = match &cfg.sweep {
        Some(g) => g.clone(),
        None => SweepGrid::default_for(data.n_classes())?,
    };
    if grid.lambdas.is_empty() || grid.k_regs.is_empty() {
        bail!("sweep: grid must have at least one lambda and one k_reg");
    }
    for pair in grid.pairs().context("sweep")? {
        pair.check_classes(data.n_classes()).context("sweep.k_regs")?;
    }
    warn_saps(cfg, grid.lambdas.iter().any(|&l| l != 0.0), err)?;
    let n_eval = data.n_eval_classes();
    let edges = edges(cfg, n_eval)?;
    let mut reports = Vec::new();
    for prepared in prepare_all(cfg, &data, err)? {
        for &alpha in &cfg.alphas {
            reports.extend(regularizer_sweep(
                &prepared,
                data.test.labels(),
                n_eval,
                alpha,
                &grid,
                cfg.seed,
                &edges,
            )?);
        }
    }
    let mut csv = String::from("method,alpha,lambda,k_reg,coverage,set_size\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            fmt_f64(r.alpha),
            fmt_f64(r.lambda),
            r.k_reg,
            fmt_f64(r.coverage),
            fmt_f64(r.mean_size)
        ));
    }
    write_file(&with_suffix(&cfg.output, "_sweep.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&RunFile {
        timestamp: timestamp(),
        config: cfg,
        labels: &data.labels,
        reports: &reports,
    })?;
    write_file(&with_suffix(&cfg.output, "_sweep.json"), &json)?;
    writeln!(out, "{} grid rows written to {}", reports.len(), with_suffix(&cfg.output, "_sweep.csv").display())?;
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub gap: Vec<TheoryReport>,
    pub convergence: Vec<TheoryReport>,
    pub dkw: TheoryReport,
    pub checks: Vec<Check>,
}

fn combined_csv(reports: &[TheoryReport]) -> String {
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = r.to_csv();
        let body = if i == 0 { csv.as_str() } else { csv.split_once('\n').map_or("", |(_, b)| b) };
        out.push_str(body);
    }
    out
}

fn check(name: impl Into<String>, value: f64, limit: f64, pass: bool) -> Check {
    Check {
        name: name.into(),
        value,
        limit,
        pass,
    }
}

/// Runs the gap, convergence and DKW experiments; writes
/// `<output>_gap`, `<output>_convergence` and `<output>_dkw` as JSON and CSV.
pub fn verify(cfg: &RunConfig, out: &mut dyn Write) -> Result<VerifyOutcome> {
    let v = &cfg.verify;
    let dgp = v.dgp.build().context("verify.dgp")?;
    let exp = v.experiment;
    let gap = vec![
        coverage_gap_experiment(&dgp, GapArm::Method { method: Method::Eraps }, &[v.alpha], &v.gap_t, v.gap_reps, &exp)?,
        coverage_gap_experiment(&dgp, GapArm::OracleScores, &[v.alpha], &v.gap_t, v.gap_reps, &exp)?,
    ];
    let convergence = vec![
        set_convergence_experiment(&dgp, v.alpha, &v.convergence_t, v.convergence_reps, PlugIn::Estimated, &exp)?,
        set_convergence_experiment(&dgp, v.alpha, &v.convergence_t, v.convergence_reps, PlugIn::Oracle, &exp)?,
    ];
    let dkw = dkw_experiment(&v.dkw_t, v.dkw_reps, exp.seed)?;

    let mut checks = Vec::new();
    for (report, limit) in gap.iter().zip([GAP_MAX, ORACLE_GAP_MAX]) {
        if let TheoryReport::CoverageGap { arm, rows, .. } = report {
            let (first, last) = (rows[0], rows[rows.len() - 1]);
            checks.push(check(format!("{arm} gap at T={}", last.t), last.mean_gap, limit, last.mean_gap <= limit));
            let bound = first.mean_gap + first.gap_se;
            checks.push(check(
                format!("{arm} gap at T={} vs T={} plus one SE", last.t, first.t),
                last.mean_gap,
                bound,
                last.mean_gap <= bound,
            ));
        }
    }
    for (report, limit) in convergence.iter().zip([CONVERGENCE_MIN, ORACLE_CONVERGENCE_MIN]) {
        if let TheoryReport::SetConvergence { plug_in, rows, .. } = report {
            let last = rows[rows.len() - 1];
            checks.push(check(
                format!("{} |C delta C*| <= 1 at T={}", plug_in.name(), last.t),
                last.frac_within_one,
                limit,
                last.frac_within_one >= limit,
            ));
        }
    }
    if let TheoryReport::Dkw { rows, .. } = &dkw {
        for r in rows {
            checks.push(check(format!("dkw exceedance at T={}", r.t), r.exceed_freq, r.bound, r.exceed_freq <= r.bound));
        }
    }

    let files: [(&str, Vec<TheoryReport>); 3] = [
        ("_gap", gap.clone()),
        ("_convergence", convergence.clone()),
        ("_dkw", vec![dkw.clone()]),
    ];
    for (suffix, reports) in &files {
        write_file(&with_suffix(&cfg.output, &format!("{suffix}.json")), &serde_json::to_string_pretty(reports)?)?;
        write_file(&with_suffix(&cfg.output, &format!("{suffix}.csv")), &combined_csv(reports))?;
    }
    for c in &checks {
        writeln!(
            out,
            "{} {}: {} (limit {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            fmt_f64(c.value),
            fmt_f64(c.limit)
        )?;
    }
    Ok(VerifyOutcome {
        gap,
        convergence,
        dkw,
        checks,
    })
}

/// Parses a dataset and prints what a run would see.
pub fn ingest_check(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let Some(path) = &cfg.data else {
        bail!("data: a CSV path is required");
    };
    let summary = ingest(cfg, path)?.summary();
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
