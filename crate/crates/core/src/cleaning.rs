//! Cleaning methods and the five strategies built from them.
//!
//! Missing and inconsistent cells are repaired together (Gaussian imputation or
//! replacement by the ideal mean); outliers are winsorized to the 3-σ limits.
//! Repairs run in that order within one strategy application.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Role};
use crate::error::{Error, Result};
use crate::glitch::{detect_outliers, Detector, GlitchScan, GlitchType, GlitchWeights, OutlierLimits};

/// Ridge engages when the smallest covariance eigenvalue falls below this
/// fraction of the largest.
pub const RIDGE_THRESHOLD: f64 = 1e-10;

/// Position of one cell: series index, observation index within the series, attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellRef {
    pub series: usize,
    pub obs: usize,
    pub attr: usize,
}

impl CellRef {
    pub fn new(series: usize, obs: usize, attr: usize) -> Self {
        Self { series, obs, attr }
    }
}

fn check_target(ds: &Dataset, c: &CellRef) -> Result<()> {
    let ok = ds
        .series
        .get(c.series)
        .and_then(|s| s.observations.get(c.obs))
        .is_some_and(|_| c.attr < ds.v());
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("target cell {c:?} is out of range")))
    }
}

/// Clamps every targeted value into its attribute's `[lo, hi]`.
pub fn winsorize(ds: &Dataset, limits: &OutlierLimits, targets: &[CellRef]) -> Result<Dataset> {
    let mut out = ds.clone();
    for c in targets {
        check_target(ds, c)?;
        let obs = &mut out.series[c.series].observations[c.obs];
        let x = obs.value(c.attr).ok_or(Error::WinsorizeMissing {
            series: c.series,
            t: obs.t,
            attribute: c.attr,
        })?;
        let clamped = limits.attr(c.attr).clamp(x);
        if clamped != x {
            obs.set(c.attr, clamped);
        }
    }
    Ok(out)
}

/// Sets every targeted cell to its attribute's ideal mean.
pub fn mean_replace(ds: &Dataset, ideal_means: &[f64], targets: &[CellRef]) -> Result<Dataset> {
    if ideal_means.len() != ds.v() {
        return Err(Error::DimensionMismatch {
            expected: ds.v(),
            got: ideal_means.len(),
        });
    }
    let mut out = ds.clone();
    for c in targets {
        check_target(ds, c)?;
        out.series[c.series].observations[c.obs].set(c.attr, ideal_means[c.attr]);
    }
    Ok(out)
}

/// Multivariate normal fitted on complete ideal observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mean: DVector<f64>,
    /// Sample covariance (n − 1) with `ridge` already added to the diagonal.
    pub covariance: DMatrix<f64>,
    pub ridge: f64,
}

impl GaussianModel {
    pub fn v(&self) -> usize {
        self.mean.len()
    }
}

/// Complete-case mean and covariance pooled across series. Cells left in
/// original units by a log transform do not count as complete.
pub fn fit_gaussian(ideal: &Dataset) -> Result<GaussianModel> {
    let v = ideal.v();
    let rows: Vec<Vec<f64>> = ideal
        .observations()
        .filter(|o| o.passthrough == 0 && o.is_complete())
        .map(|o| o.values.iter().map(|x| x.unwrap()).collect())
        .collect();
    if rows.len() < v + 1 {
        return Err(Error::TooFewCompleteCases {
            required: v + 1,
            found: rows.len(),
        });
    }
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(v);
    for r in &rows {
        for d in 0..v {
            mean[d] += r[d];
        }
    }
    mean /= n;
    let mut cov = DMatrix::zeros(v, v);
    for r in &rows {
        for a in 0..v {
            let da = r[a] - mean[a];
            for b in a..v {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..v {
        for b in a..v {
            let c = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }

    let eig = cov.clone().symmetric_eigen();
    let lmax: f64 = eig.eigenvalues.max();
    let lmin: f64 = eig.eigenvalues.min();
    let ridge = if lmax <= 0.0 {
        RIDGE_THRESHOLD
    } else if lmin < RIDGE_THRESHOLD * lmax {
        RIDGE_THRESHOLD * lmax - lmin.min(0.0)
    } else {
        0.0
    };
    for d in 0..v {
        cov[(d, d)] += ridge;
    }
    Ok(GaussianModel {
        mean,
        covariance: cov,
        ridge,
    })
}

/// Regression of targeted attributes on observed ones, for one missingness pattern.
struct Conditional {
    targets: Vec<usize>,
    given: Vec<usize>,
    /// `Σ_TO Σ_OO⁻¹`.
    gain: DMatrix<f64>,
    /// Lower Cholesky factor of `Σ_TT − Σ_TO Σ_OO⁻¹ Σ_OT`.
    chol: DMatrix<f64>,
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Cholesky with escalating diagonal jitter; conditional covariances of a
/// positive-definite matrix are positive-definite, so this only absorbs rounding.
fn robust_cholesky(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let scale = m.diagonal().max().abs().max(1e-300);
    let mut jitter = 0.0;
    loop {
        if let Some(c) = m.clone().cholesky() {
            return c.l();
        }
        let add = if jitter == 0.0 { 1e-14 * scale } else { jitter * 10.0 };
        for d in 0..m.nrows() {
            m[(d, d)] += add - jitter;
        }
        jitter = add;
    }
}

impl Conditional {
    fn new(model: &GaussianModel, targets: Vec<usize>, given: Vec<usize>) -> Self {
        let s = &model.covariance;
        let s_tt = submatrix(s, &targets, &targets);
        if given.is_empty() {
            return Self {
                gain: DMatrix::zeros(targets.len(), 0),
                chol: robust_cholesky(s_tt),
                targets,
                given,
            };
        }
        let s_to = submatrix(s, &targets, &given);
        let s_oo = submatrix(s, &given, &given);
        let l_oo = robust_cholesky(s_oo);
        // gain = Σ_TO Σ_OO⁻¹  ⇔  L Lᵀ gainᵀ = Σ_OT
        let y = l_oo
            .solve_lower_triangular(&s_to.transpose())
            .expect("Cholesky factor has a positive diagonal");
        let gain = l_oo
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
            .transpose();
        let mut cond = s_tt - &gain * s_to.transpose();
        cond = (&cond + cond.transpose()) * 0.5;
        Self {
            chol: robust_cholesky(cond),
            gain,
            targets,
            given,
        }
    }
}

/// Blanks the targeted cells, then redraws them jointly per observation from
/// the model conditioned on that observation's remaining observed values (the
/// unconditional model when nothing else is observed). Deterministic in `seed`.
pub fn gaussian_impute(
    ds: &Dataset,
    model: &GaussianModel,
    targets: &[CellRef],
    seed: u64,
) -> Result<Dataset> {
    if model.v() != ds.v() {
        return Err(Error::DimensionMismatch {
            expected: ds.v(),
            got: model.v(),
        });
    }
    let mut grouped: Vec<(usize, usize, u32)> = Vec::new();
    {
        let mut masks: HashMap<(usize, usize), u32> = HashMap::new();
        for c in targets {
            check_target(ds, c)?;
            *masks.entry((c.series, c.obs)).or_default() |= 1 << c.attr;
        }
        grouped.extend(masks.into_iter().map(|((s, o), m)| (s, o, m)));
        grouped.sort_unstable();
    }

    let v = ds.v();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<(u32, u32), Conditional> = HashMap::new();
    let mut out = ds.clone();
    let mut z: Vec<f64> = Vec::with_capacity(v);
    for (s, o, tmask) in grouped {
        let obs = &mut out.series[s].observations[o];
        let mut gmask = 0u32;
        for a in 0..v {
            if tmask & (1 << a) == 0 && obs.value(a).is_some() && !obs.is_passthrough(a) {
                gmask |= 1 << a;
            }
        }
        let cond = cache.entry((tmask, gmask)).or_insert_with(|| {
            let t = (0..v).filter(|a| tmask & (1 << a) != 0).collect();
            let g = (0..v).filter(|a| gmask & (1 << a) != 0).collect();
            Conditional::new(model, t, g)
        });
        let resid = DVector::from_iterator(
            cond.given.len(),
            cond.given.iter().map(|&a| obs.value(a).unwrap() - model.mean[a]),
        );
        let shift = &cond.gain * resid;
        z.clear();
        z.extend((0..cond.targets.len()).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        for (i, &a) in cond.targets.iter().enumerate() {
            let noise: f64 = (0..=i).map(|j| cond.chol[(i, j)] * z[j]).sum();
            obs.set(a, model.mean[a] + shift[i] + noise);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairMethod {
    GaussianImpute,
    MeanReplace,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierMethod {
    Winsorize,
    None,
}

/// A cleaning procedure: one method for missing/inconsistent cells, one for outliers.
///
/// | id | missing & inconsistent | outliers  |
/// |----|------------------------|-----------|
/// | 1  | Gaussian imputation    | winsorize |
/// | 2  | Gaussian imputation    | none      |
/// | 3  | none                   | winsorize |
/// | 4  | ideal mean             | none      |
/// | 5  | ideal mean             | winsorize |
///
/// Id 0 is the do-nothing pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "StrategySpec", into = "StrategySpec")]
pub struct Strategy {
    pub id: u8,
    pub repair: RepairMethod,
    pub outliers: OutlierMethod,
}

const CANONICAL: [(RepairMethod, OutlierMethod); 6] = [
    (RepairMethod::None, OutlierMethod::None),
    (RepairMethod::GaussianImpute, OutlierMethod::Winsorize),
    (RepairMethod::GaussianImpute, OutlierMethod::None),
    (RepairMethod::None, OutlierMethod::Winsorize),
    (RepairMethod::MeanReplace, OutlierMethod::None),
    (RepairMethod::MeanReplace, OutlierMethod::Winsorize),
];

impl Strategy {
    pub fn by_id(id: u8) -> Result<Self> {
        CANONICAL
            .get(usize::from(id))
            .map(|&(repair, outliers)| Self {
                id,
                repair,
                outliers,
            })
            .ok_or_else(|| Error::InvalidArgument(format!("strategy id must be 0..=5, got {id}")))
    }

    pub fn from_methods(repair: RepairMethod, outliers: OutlierMethod) -> Self {
        let id = CANONICAL
            .iter()
            .position(|&p| p == (repair, outliers))
            .expect("every method pair is canonical") as u8;
        Self {
            id,
            repair,
            outliers,
        }
    }

    /// Strategies 1 through 5.
    pub fn all() -> Vec<Self> {
        (1..=5).map(|id| Self::by_id(id).unwrap()).collect()
    }

    pub fn needs_gaussian(&self) -> bool {
        self.repair == RepairMethod::GaussianImpute
    }
}

/// Config form of a strategy: an id or an explicit method pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    Id(u8),
    Methods {
        repair: RepairMethod,
        outliers: OutlierMethod,
    },
}

impl TryFrom<StrategySpec> for Strategy {
    type Error = Error;
    fn try_from(s: StrategySpec) -> Result<Self> {
        match s {
            StrategySpec::Id(id) => Strategy::by_id(id),
            StrategySpec::Methods { repair, outliers } => Ok(Strategy::from_methods(repair, outliers)),
        }
    }
}

impl From<Strategy> for StrategySpec {
    fn from(s: Strategy) -> Self {
        StrategySpec::Id(s.id)
    }
}

/// Everything fitted on an ideal sample that cleaning needs.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub detector: Detector,
    pub means: Vec<f64>,
    pub gaussian: std::result::Result<GaussianModel, String>,
}

impl FittedModels {
    pub fn new(detector: Detector, ideal: &Dataset) -> Self {
        Self {
            means: detector.limits.means(),
            gaussian: fit_gaussian(ideal).map_err(|e| e.to_string()),
            detector,
        }
    }
}

/// A treated dataset plus what was done to it.
#[derive(Debug, Clone)]
pub struct Treatment {
    pub data: Dataset,
    /// Indices of the series the strategy was applied to.
    pub selected: Vec<usize>,
    pub repaired: Vec<CellRef>,
    pub winsorized: Vec<CellRef>,
}

/// Number of series treated at cost fraction `percent`, rounded up.
pub fn selection_size(series: usize, percent: f64) -> usize {
    let n = (percent * series as f64 / 100.0).ceil();
    (n.max(0.0) as usize).min(series)
}

/// Applies `strategy` to the top `percent` of series of `dirty` by normalized
/// glitch score.
///
/// Within selected series, cells flagged missing or inconsistent in `scan` are
/// repaired first. Outlier treatment then winsorizes every observed cell of
/// the selected series that lies outside the limits, which is exactly the
/// originally flagged outliers unless the repair step drew new ones.
pub fn apply_strategy(
    dirty: &Dataset,
    scan: &GlitchScan,
    models: &FittedModels,
    weights: &GlitchWeights,
    strategy: Strategy,
    percent: f64,
    seed: u64,
) -> Result<Treatment> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::InvalidArgument(format!(
            "cost fraction must be within [0, 100], got {percent}"
        )));
    }
    let mut selected: Vec<usize> = scan
        .rank(weights)
        .into_iter()
        .take(selection_size(dirty.series.len(), percent))
        .map(|r| r.index)
        .collect();
    selected.sort_unstable();

    let mut repaired = Vec::new();
    for &s in &selected {
        for (o, m) in scan.series[s].iter().enumerate() {
            let bad = m.column(GlitchType::Missing).0 | m.column(GlitchType::Inconsistent).0;
            for a in 0..dirty.v() {
                if bad & (1 << a) != 0 {
                    repaired.push(CellRef::new(s, o, a));
                }
            }
        }
    }

    let mut data = match strategy.repair {
        RepairMethod::None => {
            repaired.clear();
            dirty.clone()
        }
        RepairMethod::MeanReplace => mean_replace(dirty, &models.means, &repaired)?,
        RepairMethod::GaussianImpute => {
            let model = models.gaussian.as_ref().map_err(|e| {
                Error::InvalidArgument(format!("Gaussian imputation unavailable: {e}"))
            })?;
            gaussian_impute(dirty, model, &repaired, seed)?
        }
    };

    let mut winsorized = Vec::new();
    if strategy.outliers == OutlierMethod::Winsorize {
        for &s in &selected {
            for (o, obs) in data.series[s].observations.iter().enumerate() {
                let m = detect_outliers(obs, &models.detector.limits);
                for a in 0..dirty.v() {
                    if m.get(a) {
                        winsorized.push(CellRef::new(s, o, a));
                    }
                }
            }
        }
        data = winsorize(&data, &models.detector.limits, &winsorized)?;
    }

    Ok(Treatment {
        data: data.with_role(Role::Treated),
        selected,
        repaired,
        winsorized,
    })
}
