//! The four subcommands. Each writes its outputs and returns what it computed
//! so callers (and tests) can inspect it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cleaneval_core::experiment::extract_ideal_with_limits;
use cleaneval_core::{
    apply_transform, load_dataset, run_experiment, save_dataset, statistical_distortion,
    summarize, Dataset, Detector, DistortionParams, ExperimentOutput, GlitchScan, GlitchType, ReplicationResult,
    Schema, SummaryRow, Transform,
};

use crate::config::{RunConfig, Source};

pub const DATASET_FILE: &str = "dataset.csv";
pub const AUDIT_SUMMARY_FILE: &str = "audit_summary.csv";
pub const AUDIT_BY_TIME_FILE: &str = "glitch_counts_by_time.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const SCATTER_STRATEGIES_FILE: &str = "scatter_strategies.csv";
pub const SCATTER_COST_FILE: &str = "scatter_cost.csv";

const TYPE_COLUMNS: [&str; 3] = ["missing", "inconsistent", "outlier"];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

/// Shortest representation that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x}")
}

/// Generates the configured synthetic dataset into `out/dataset.csv`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let Source::Synth(spec) = cfg.source() else {
        bail!("`generate` needs a [synth] section in the configuration");
    };
    let ds = cleaneval_core::generate(&spec)?;
    create_dir(out)?;
    let path = out.join(DATASET_FILE);
    save_dataset(&ds, &path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn working_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = cfg.dataset()?;
    let tf = if cfg.experiment.transform.is_empty() {
        return Ok(ds);
    } else {
        cfg.experiment.transform.clone()
    };
    Ok(apply_transform(&ds, &tf)?.0)
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub scan: GlitchScan,
    pub ideal_series: usize,
    /// `(t, counts per type)` in increasing `t`.
    pub by_time: Vec<(u32, [u64; 3])>,
}

/// Detects glitches on the whole dataset, with 3-σ limits fitted on its ideal
/// part, and writes per-type percentages plus per-time counts.
pub fn cmd_audit(cfg: &RunConfig, out: &Path) -> Result<AuditReport> {
    let ds = working_dataset(cfg)?;
    cfg.experiment.validate(ds.v())?;
    let (ideal, limits) =
        extract_ideal_with_limits(&ds, &cfg.experiment.rules, cfg.experiment.ideal_threshold)?;
    let scan = Detector::new(cfg.experiment.rules.clone(), limits).scan(&ds);

    let mut by_time: BTreeMap<u32, [u64; 3]> = BTreeMap::new();
    for (s, series) in ds.series.iter().enumerate() {
        for (o, obs) in series.observations.iter().enumerate() {
            let counts = scan.series[s][o].counts();
            let slot = by_time.entry(obs.t).or_default();
            for k in 0..3 {
                slot[k] += u64::from(counts[k]);
            }
        }
    }
    let report = AuditReport {
        ideal_series: ideal.series.len(),
        by_time: by_time.into_iter().collect(),
        scan,
    };

    create_dir(out)?;
    let mut w = writer(&out.join(AUDIT_SUMMARY_FILE))?;
    w.write_record(["glitch", "cells", "percent"])?;
    let totals = report.scan.totals();
    let pct = report.scan.percentages();
    for ty in GlitchType::ALL {
        w.write_record([ty.name().to_string(), totals[ty as usize].to_string(), num(pct.get(ty))])?;
    }
    w.flush()?;

    let mut w = writer(&out.join(AUDIT_BY_TIME_FILE))?;
    w.write_record(["t", TYPE_COLUMNS[0], TYPE_COLUMNS[1], TYPE_COLUMNS[2]])?;
    for (t, c) in &report.by_time {
        w.write_record([t.to_string(), c[0].to_string(), c[1].to_string(), c[2].to_string()])?;
    }
    w.flush()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: ExperimentOutput,
    pub summary: Vec<SummaryRow>,
}

fn pct_headers(prefix: &str) -> Vec<String> {
    TYPE_COLUMNS.iter().map(|t| format!("{prefix}_{t}")).collect()
}

/// Runs the configured experiment and writes results, summary, failures and
/// the scatter data. Fails only when no evaluation succeeded.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let ds = cfg.dataset()?;
    let output = run_experiment(&ds, &cfg.experiment)?;
    create_dir(out)?;

    let mut w = writer(&out.join(RESULTS_FILE))?;
    let mut header: Vec<String> = [
        "replication",
        "strategy",
        "fraction",
        "glitch_improvement",
        "index_improvement",
        "emd",
    ]
    .map(String::from)
    .to_vec();
    header.extend(pct_headers("dirty"));
    header.extend(pct_headers("treated"));
    w.write_record(&header)?;
    for r in &output.results {
        let mut row = vec![
            r.replication.to_string(),
            r.strategy.to_string(),
            num(r.fraction),
            num(r.glitch_improvement),
            num(r.index_improvement),
            num(r.emd),
        ];
        row.extend(r.dirty_pct.iter().map(|&p| num(p)));
        row.extend(r.treated_pct.iter().map(|&p| num(p)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = writer(&out.join(FAILURES_FILE))?;
    w.write_record(["replication", "strategy", "fraction", "reason"])?;
    for f in &output.failures {
        w.write_record([
            f.replication.to_string(),
            f.strategy.map(|s| s.to_string()).unwrap_or_default(),
            f.fraction.map(num).unwrap_or_default(),
            f.reason.clone(),
        ])?;
    }
    w.flush()?;

    let summary = if output.results.is_empty() {
        Vec::new()
    } else {
        summarize(&output.results)?
    };
    let mut w = writer(&out.join(SUMMARY_FILE))?;
    let mut header: Vec<String> = [
        "strategy",
        "fraction",
        "runs",
        "improvement_mean",
        "improvement_std",
        "emd_mean",
        "emd_std",
    ]
    .map(String::from)
    .to_vec();
    header.extend(pct_headers("dirty"));
    header.extend(pct_headers("treated"));
    w.write_record(&header)?;
    for s in &summary {
        let mut row = vec![
            s.strategy.to_string(),
            num(s.fraction),
            s.runs.to_string(),
            num(s.improvement.mean),
            num(s.improvement.std),
            num(s.emd.mean),
            num(s.emd.std),
        ];
        row.extend(s.dirty_pct.iter().map(|&p| num(p)));
        row.extend(s.treated_pct.iter().map(|&p| num(p)));
        w.write_record(&row)?;
    }
    w.flush()?;

    // Strategy comparison at full cost, and the cost sweep of the
    // impute-and-winsorize strategy (or the first configured one).
    let full = cfg.experiment.cost_fractions.iter().cloned().fold(f64::NAN, f64::max);
    let sweep = cfg
        .experiment
        .strategies
        .iter()
        .find(|s| s.id == 1)
        .or(cfg.experiment.strategies.first())
        .map(|s| s.id);
    write_scatter(&out.join(SCATTER_STRATEGIES_FILE), output.results.iter().filter(|r| r.fraction == full))?;
    write_scatter(&out.join(SCATTER_COST_FILE), output.results.iter().filter(|r| Some(r.strategy) == sweep))?;

    if output.planned > 0 && output.results.is_empty() {
        let reason = output.failures.first().map(|f| f.reason.as_str()).unwrap_or("unknown");
        bail!("all {} evaluations failed; first failure: {reason}", output.planned);
    }
    Ok(RunReport { output, summary })
}

fn write_scatter<'a>(path: &Path, rows: impl Iterator<Item = &'a ReplicationResult>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["replication", "strategy", "fraction", "improvement", "emd"])?;
    for r in rows {
        w.write_record([
            r.replication.to_string(),
            r.strategy.to_string(),
            num(r.fraction),
            num(r.glitch_improvement),
            num(r.emd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Statistical distortion between two dataset files.
pub fn cmd_emd(a: &Path, b: &Path, schema: &Schema, params: &DistortionParams, transform: &Transform) -> Result<f64> {
    let load = |p: &Path| -> Result<Dataset> {
        let ds = load_dataset(p, schema).with_context(|| format!("cannot load {}", p.display()))?;
        if transform.is_empty() {
            Ok(ds)
        } else {
            Ok(apply_transform(&ds, transform)?.0)
        }
    };
    let (da, db) = (load(a)?, load(b)?);
    if da.v() != db.v() {
        bail!(
            "attribute count differs: {} has {}, {} has {}",
            a.display(),
            da.v(),
            b.display(),
            db.v()
        );
    }
    Ok(statistical_distortion(&da, &db, params)?)
}

/// Formats an EMD value with 17 significant digits, enough to round-trip.
pub fn format_emd(x: f64) -> String {
    format!("{x:.16e}")
}
