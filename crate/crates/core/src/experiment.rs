//! Bootstrap replications of cleaning strategies over cost fractions.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cleaning::{apply_strategy, FittedModels, Strategy, Treatment};
use crate::dataset::{apply_transform, Dataset, Role, TimeSeries, Transform};
use crate::distortion::{statistical_distortion, DistortionParams};
use crate::error::{Error, Result};
use crate::glitch::{
    detect_inconsistent, detect_missing, fit_outlier_limits, reference_rules, validate_rules,
    ConstraintRule, Detector, GlitchScan, GlitchWeights, OutlierLimits, GLITCH_TYPES,
};
use crate::seed::{derive_seed, rng, substream};

/// Where the 3-σ limits used for detection and winsorization come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitsMode {
    /// Refit on each replication's ideal sample.
    #[default]
    PerReplication,
    /// Fit once on the whole ideal set.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of replications (R).
    pub replications: usize,
    /// Series drawn into each dataset of a pair (B).
    pub series_per_sample: usize,
    pub strategies: Vec<Strategy>,
    /// Percent of series treated, each in `[0, 100]`.
    pub cost_fractions: Vec<f64>,
    /// A series is ideal when every glitch type stays strictly below this percentage.
    pub ideal_threshold: f64,
    pub weights: GlitchWeights,
    /// Per-attribute transform; empty means identity.
    pub transform: Transform,
    pub rules: Vec<ConstraintRule>,
    pub limits: LimitsMode,
    pub distortion: DistortionParams,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replications: 50,
            series_per_sample: 100,
            strategies: Strategy::all(),
            cost_fractions: vec![0.0, 20.0, 50.0, 100.0],
            ideal_threshold: 5.0,
            weights: GlitchWeights::default(),
            transform: Transform(Vec::new()),
            rules: reference_rules(),
            limits: LimitsMode::PerReplication,
            distortion: DistortionParams::default(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, v: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.series_per_sample == 0 {
            return bad("series_per_sample must be at least 1".into());
        }
        if let Some(x) = self.cost_fractions.iter().find(|x| !(0.0..=100.0).contains(*x)) {
            return bad(format!("cost fraction {x} is outside [0, 100]"));
        }
        if !(self.ideal_threshold > 0.0 && self.ideal_threshold <= 100.0) {
            return bad(format!("ideal_threshold {} is outside (0, 100]", self.ideal_threshold));
        }
        if !self.transform.is_empty() && self.transform.len() != v {
            return Err(Error::DimensionMismatch {
                expected: v,
                got: self.transform.len(),
            });
        }
        if self.distortion.bins < 2 {
            return bad("distortion bins must be at least 2".into());
        }
        validate_rules(&self.rules, v)
    }

    fn transform_for(&self, v: usize) -> Transform {
        if self.transform.is_empty() {
            Transform::identity(v)
        } else {
            self.transform.clone()
        }
    }
}

fn series_type_percentages(obs: impl Iterator<Item = [u32; 2]>, cells: usize) -> [f64; 2] {
    let mut c = [0u64; 2];
    for [m, i] in obs {
        c[0] += u64::from(m);
        c[1] += u64::from(i);
    }
    c.map(|n| 100.0 * n as f64 / cells as f64)
}

/// Two-pass ideal extraction. Returns the ideal series and the limits fitted
/// on them.
///
/// Pass one keeps series whose missing and inconsistent percentages are both
/// below `threshold`. Provisional 3-σ limits fitted on those survivors then
/// drive the full three-type screen.
pub fn extract_ideal_with_limits(
    ds: &Dataset,
    rules: &[ConstraintRule],
    threshold: f64,
) -> Result<(Dataset, OutlierLimits)> {
    if ds.series.is_empty() {
        return Err(Error::NoDataRows);
    }
    let v = ds.v();
    let empty = || Error::EmptyIdealSet { threshold };

    let pass1: Vec<TimeSeries> = ds
        .series
        .iter()
        .filter(|s| {
            let mut orig = vec![None; v];
            let pct = series_type_percentages(
                s.observations.iter().map(|o| {
                    for (a, slot) in orig.iter_mut().enumerate() {
                        *slot = ds.original_value(o, a);
                    }
                    [detect_missing(o).count(), detect_inconsistent(&orig, rules).count()]
                }),
                s.len() * v,
            );
            !s.is_empty() && pct.iter().all(|&p| p < threshold)
        })
        .cloned()
        .collect();
    if pass1.is_empty() {
        return Err(empty());
    }
    let provisional = fit_outlier_limits(&ds.with_series(pass1)).map_err(|_| empty())?;

    let scan = Detector::new(rules.to_vec(), provisional).scan(ds);
    let keep: Vec<TimeSeries> = (0..ds.series.len())
        .filter(|&i| !ds.series[i].is_empty())
        .filter(|&i| scan.series_percentages(i).0.iter().all(|&p| p < threshold))
        .map(|i| ds.series[i].clone())
        .collect();
    if keep.is_empty() {
        return Err(empty());
    }
    let ideal = ds.with_series(keep).with_role(Role::Ideal);
    let limits = fit_outlier_limits(&ideal)?;
    Ok((ideal, limits))
}

pub fn extract_ideal(ds: &Dataset, rules: &[ConstraintRule], threshold: f64) -> Result<Dataset> {
    extract_ideal_with_limits(ds, rules, threshold).map(|(d, _)| d)
}

fn draw(src: &Dataset, b: usize, r: &mut impl Rng, role: Role) -> Dataset {
    let mut copies = vec![0u32; src.series.len()];
    let series = (0..b)
        .map(|_| {
            let i = r.random_range(0..src.series.len());
            let mut s = src.series[i].clone();
            s.instance = copies[i];
            copies[i] += 1;
            s
        })
        .collect();
    src.with_series(series).with_role(role)
}

/// Draws `b` whole series with replacement from each source. Repeated draws
/// of one series get increasing instance numbers so every series id stays
/// unique within a sample.
pub fn sample_pair(dirty: &Dataset, ideal: &Dataset, b: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if dirty.series.is_empty() || ideal.series.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from an empty dataset".into()));
    }
    let d = draw(dirty, b, &mut rng(substream(seed, "dirty")), Role::SampledDirty);
    let i = draw(ideal, b, &mut rng(substream(seed, "ideal")), Role::SampledIdeal);
    Ok((d, i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub strategy: u8,
    pub fraction: f64,
    /// Drop in normalized glitch score.
    pub glitch_improvement: f64,
    /// Drop in the raw cell glitch index.
    pub index_improvement: f64,
    pub emd: f64,
    pub dirty_pct: [f64; GLITCH_TYPES],
    pub treated_pct: [f64; GLITCH_TYPES],
}

/// One sampled pair with everything fitted on it, shared by every strategy
/// and cost fraction of the replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub dirty: Dataset,
    pub ideal: Dataset,
    pub models: FittedModels,
    pub scan: GlitchScan,
}

impl Replication {
    /// `dirty_src` and `ideal_src` are already in working space.
    pub fn prepare(
        dirty_src: &Dataset,
        ideal_src: &Dataset,
        config: &ExperimentConfig,
        index: usize,
        global_limits: Option<&OutlierLimits>,
    ) -> Result<Self> {
        let seed = derive_seed(config.master_seed, index as u64);
        let (dirty, ideal) = sample_pair(dirty_src, ideal_src, config.series_per_sample, seed)?;
        let limits = match global_limits {
            Some(l) => l.clone(),
            None => fit_outlier_limits(&ideal)?,
        };
        let detector = Detector::new(config.rules.clone(), limits);
        let scan = detector.scan(&dirty);
        let models = FittedModels::new(detector, &ideal);
        Ok(Self {
            index,
            seed,
            dirty,
            ideal,
            models,
            scan,
        })
    }

    /// Imputation draws come from one stream per replication, so strategies
    /// that share a repair method also share its random draws.
    pub fn treat(&self, config: &ExperimentConfig, strategy: Strategy, fraction: f64) -> Result<Treatment> {
        apply_strategy(
            &self.dirty,
            &self.scan,
            &self.models,
            &config.weights,
            strategy,
            fraction,
            substream(self.seed, "impute"),
        )
    }

    pub fn evaluate(&self, config: &ExperimentConfig, strategy: Strategy, fraction: f64) -> Result<ReplicationResult> {
        let treated = self.treat(config, strategy, fraction)?.data;
        let after = self.models.detector.scan(&treated);
        let w = &config.weights;
        Ok(ReplicationResult {
            replication: self.index,
            strategy: strategy.id,
            fraction,
            glitch_improvement: self.scan.normalized_score(w) - after.normalized_score(w),
            index_improvement: self.scan.cell_index(w) - after.cell_index(w),
            emd: statistical_distortion(&self.dirty, &treated, &config.distortion)?,
            dirty_pct: self.scan.percentages().0,
            treated_pct: after.percentages().0,
        })
    }
}

/// A replication or single evaluation that did not produce a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub strategy: Option<u8>,
    pub fraction: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: Vec<ReplicationResult>,
    pub failures: Vec<ReplicationFailure>,
    pub ideal_series: usize,
    /// Planned evaluations: replications × strategies × fractions.
    pub planned: usize,
}

/// Runs one evaluation without the surrounding experiment; prepares the
/// replication from scratch.
pub fn run_replication(
    dirty: &Dataset,
    ideal: &Dataset,
    config: &ExperimentConfig,
    strategy: Strategy,
    fraction: f64,
    index: usize,
) -> Result<ReplicationResult> {
    Replication::prepare(dirty, ideal, config, index, None)?.evaluate(config, strategy, fraction)
}

/// Full experiment on `dirty` (original units). Replications run in parallel;
/// output order is (replication, strategy, fraction) as configured, so the
/// result does not depend on scheduling.
pub fn run_experiment(dirty: &Dataset, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate(dirty.v())?;
    let tf = config.transform_for(dirty.v());
    let working = if tf.is_identity() {
        dirty.clone()
    } else {
        apply_transform(dirty, &tf)?.0
    };
    let (ideal, global) = extract_ideal_with_limits(&working, &config.rules, config.ideal_threshold)?;
    let global = (config.limits == LimitsMode::Global).then_some(global);

    let per_rep: Vec<(Vec<ReplicationResult>, Vec<ReplicationFailure>)> = (0..config.replications)
        .into_par_iter()
        .map(|i| {
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            match Replication::prepare(&working, &ideal, config, i, global.as_ref()) {
                Err(e) => failed.push(ReplicationFailure {
                    replication: i,
                    strategy: None,
                    fraction: None,
                    reason: e.to_string(),
                }),
                Ok(rep) => {
                    for &s in &config.strategies {
                        for &x in &config.cost_fractions {
                            match rep.evaluate(config, s, x) {
                                Ok(r) => ok.push(r),
                                Err(e) => failed.push(ReplicationFailure {
                                    replication: i,
                                    strategy: Some(s.id),
                                    fraction: Some(x),
                                    reason: e.to_string(),
                                }),
                            }
                        }
                    }
                }
            }
            (ok, failed)
        })
        .collect();

    let mut out = ExperimentOutput {
        results: Vec::new(),
        failures: Vec::new(),
        ideal_series: ideal.series.len(),
        planned: config.replications * config.strategies.len() * config.cost_fractions.len(),
    };
    for (ok, failed) in per_rep {
        out.results.extend(ok);
        out.failures.extend(failed);
    }
    Ok(out)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: u8,
    pub fraction: f64,
    pub runs: usize,
    pub improvement: Stat,
    pub emd: Stat,
    pub dirty_pct: [f64; GLITCH_TYPES],
    pub treated_pct: [f64; GLITCH_TYPES],
}

/// Aggregates per (strategy, fraction), in order of first appearance.
pub fn summarize(results: &[ReplicationResult]) -> Result<Vec<SummaryRow>> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results to summarize".into()));
    }
    let mut keys: Vec<(u8, f64)> = Vec::new();
    for r in results {
        if !keys.iter().any(|&(s, x)| s == r.strategy && x == r.fraction) {
            keys.push((r.strategy, r.fraction));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(s, x)| {
            let group: Vec<&ReplicationResult> = results
                .iter()
                .filter(|r| r.strategy == s && r.fraction == x)
                .collect();
            let col = |f: &dyn Fn(&ReplicationResult) -> f64| -> Vec<f64> { group.iter().map(|r| f(r)).collect() };
            let mean_pct = |f: &dyn Fn(&ReplicationResult) -> [f64; GLITCH_TYPES]| {
                let mut m = [0.0; GLITCH_TYPES];
                for r in &group {
                    for (acc, p) in m.iter_mut().zip(f(r)) {
                        *acc += p;
                    }
                }
                m.map(|t| t / group.len() as f64)
            };
            SummaryRow {
                strategy: s,
                fraction: x,
                runs: group.len(),
                improvement: Stat::of(&col(&|r| r.glitch_improvement)),
                emd: Stat::of(&col(&|r| r.emd)),
                dirty_pct: mean_pct(&|r| r.dirty_pct),
                treated_pct: mean_pct(&|r| r.treated_pct),
            }
        })
        .collect())
}
