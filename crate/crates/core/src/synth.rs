//! Seeded synthetic hierarchical time series with injected glitches.
//!
//! Three attributes mirror the constraint structure of the reference rules:
//! a right-skewed non-negative attribute, a symmetric one, and a proportion in
//! `(0, 1)`. The three share correlated latent normals. Each series is either mostly clean or dirty, so an ideal subset
//! always exists.

use rand::seq::SliceRandom;
use rand::Rng;
use nalgebra::{Matrix3, Vector3};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NodeId, Observation, Role, TimeSeries};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng, substream};

/// Seed of [`reference_spec`].
pub const REFERENCE_SEED: u64 = 20_120_827;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Node counts per layer `(n_i, n_j, n_k)`; one series per node.
    pub layers: [u32; 3],
    /// Observations per series.
    pub length: u32,
    /// Parameters of the underlying normal for attribute 1 (lognormal).
    pub attr1_lognormal: [f64; 2],
    /// Mean and standard deviation of attribute 2.
    pub attr2_normal: [f64; 2],
    /// Location and scale of the latent normal behind attribute 3, which is
    /// its logistic transform and so lies strictly inside `(0, 1)`.
    pub attr3_logit_normal: [f64; 2],
    /// Latent correlations `(ρ12, ρ13, ρ23)`.
    pub correlation: [f64; 3],
    /// Average per-cell deletion rate.
    pub p_missing: f64,
    /// Relative share of deletions per attribute.
    pub missing_shares: [f64; 3],
    /// Average per-cell rate of rule-violating corruption.
    pub p_inconsistent_extra: f64,
    /// Relative share of corruption per attribute. Only attributes 1 (made
    /// negative) and 3 (pushed above one) can be corrupted, so the share of
    /// attribute 2 must be zero.
    pub inconsistent_shares: [f64; 3],
    /// `(min, max)` amount by which a corrupted attribute 3 exceeds one.
    pub attr3_excess: [f64; 2],
    /// Per-cell rate of multiplicative outlier injection.
    pub p_outlier: f64,
    /// `(min, max)` multiplier applied to an outlying value, per attribute.
    /// Factors below one push values into the lower tail.
    pub outlier_factors: [[f64; 2]; 3],
    /// Share of series generated as mostly clean.
    pub clean_fraction: f64,
    /// Rate multiplier for mostly clean series. Dirty series are scaled so the
    /// dataset-wide average rate equals the configured rate.
    pub clean_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            layers: [2, 10, 10],
            length: 170,
            attr1_lognormal: [0.0, 0.8],
            attr2_normal: [20.0, 4.0],
            attr3_logit_normal: [1.4, 0.5],
            correlation: [0.7, 0.5, 0.5],
            p_missing: 0.15,
            missing_shares: [0.1, 0.2, 0.7],
            p_inconsistent_extra: 0.10,
            inconsistent_shares: [0.5, 0.0, 0.5],
            attr3_excess: [0.001, 0.03],
            p_outlier: 0.075,
            outlier_factors: [[4.0, 10.0], [2.0, 3.0], [0.3, 0.6]],
            clean_fraction: 0.25,
            clean_scale: 0.1,
            seed: REFERENCE_SEED,
        }
    }
}

fn check_rate(name: &str, p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {p}")))
    }
}

impl SynthSpec {
    pub fn series_count(&self) -> usize {
        self.layers.iter().map(|&n| n as usize).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.series_count() == 0 || self.length == 0 {
            return Err(Error::InvalidArgument("empty synthetic layout".into()));
        }
        check_rate("p_missing", self.p_missing)?;
        check_rate("p_inconsistent_extra", self.p_inconsistent_extra)?;
        check_rate("p_outlier", self.p_outlier)?;
        check_rate("clean_fraction", self.clean_fraction)?;
        if !(0.0..=1.0).contains(&self.clean_scale) {
            return Err(Error::InvalidArgument("clean_scale must lie in [0, 1]".into()));
        }
        for (name, shares) in [("missing_shares", self.missing_shares), ("inconsistent_shares", self.inconsistent_shares)] {
            if shares.iter().any(|&s| s < 0.0) || shares.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative with a positive sum")));
            }
        }
        if self.inconsistent_shares[1] != 0.0 {
            return Err(Error::InvalidArgument("attribute 2 has no rule and cannot be made inconsistent".into()));
        }
        let scales = [self.attr1_lognormal[1], self.attr2_normal[1], self.attr3_logit_normal[1]];
        if scales.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::InvalidArgument("distribution parameters must be positive".into()));
        }
        if !(self.attr3_excess[0] > 0.0 && self.attr3_excess[1] >= self.attr3_excess[0]) {
            return Err(Error::InvalidArgument("attr3_excess needs 0 < min <= max".into()));
        }
        for [lo, hi] in self.outlier_factors {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::InvalidArgument("outlier factors need 0 < min <= max".into()));
            }
        }
        // Dirty-series rates must stay below one after rescaling.
        let dirty = self.dirty_scale();
        let peak = |p: f64, shares: [f64; 3]| p * 3.0 * shares.iter().cloned().fold(0.0, f64::max) / shares.iter().sum::<f64>();
        for p in [
            peak(self.p_missing, self.missing_shares),
            peak(self.p_inconsistent_extra, self.inconsistent_shares),
            self.p_outlier,
        ] {
            if p * dirty >= 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "rate {p} exceeds 1 on dirty series after rescaling by {dirty}"
                )));
            }
        }
        Ok(())
    }

    fn clean_count(&self) -> usize {
        (self.clean_fraction * self.series_count() as f64).round() as usize
    }

    fn dirty_scale(&self) -> f64 {
        let n = self.series_count() as f64;
        let c = self.clean_count() as f64;
        if c >= n {
            return 1.0;
        }
        (n - c * self.clean_scale) / (n - c)
    }
}

/// The fixed specification used throughout the acceptance suite.
pub fn reference_spec() -> SynthSpec {
    SynthSpec::default()
}

pub fn reference_dataset() -> Dataset {
    generate(&reference_spec()).expect("reference spec is valid")
}

fn latent_factor(rho: [f64; 3]) -> Result<Matrix3<f64>> {
    let [r12, r13, r23] = rho;
    let c = Matrix3::new(1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0);
    c.cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::InvalidArgument(format!("correlation {rho:?} is not positive-definite")))
}

struct Samplers {
    spec_loc: [f64; 3],
    spec_scale: [f64; 3],
    factor: Matrix3<f64>,
    missing: [f64; 3],
    inconsistent: [f64; 3],
}

impl Samplers {
    fn new(spec: &SynthSpec) -> Result<Self> {
        let total: f64 = spec.missing_shares.iter().sum();
        let inc_total: f64 = spec.inconsistent_shares.iter().sum();
        Ok(Self {
            spec_loc: [spec.attr1_lognormal[0], spec.attr2_normal[0], spec.attr3_logit_normal[0]],
            spec_scale: [spec.attr1_lognormal[1], spec.attr2_normal[1], spec.attr3_logit_normal[1]],
            factor: latent_factor(spec.correlation)?,
            missing: spec.missing_shares.map(|s| spec.p_missing * 3.0 * s / total),
            inconsistent: spec.inconsistent_shares.map(|s| spec.p_inconsistent_extra * 3.0 * s / inc_total),
        })
    }

    fn clean_row<R: Rng>(&self, r: &mut R) -> [f64; 3] {
        let e = Vector3::from_fn(|_, _| r.sample::<f64, _>(StandardNormal));
        let z = self.factor * e;
        let x = |a: usize| self.spec_loc[a] + self.spec_scale[a] * z[a];
        [x(0).exp(), x(1), 1.0 / (1.0 + (-x(2)).exp())]
    }
}

fn generate_series(spec: &SynthSpec, s: &Samplers, node: NodeId, seed: u64, scale: f64) -> TimeSeries {
    let mut r = rng(seed);
    let factors = spec.outlier_factors;
    let excess = spec.attr3_excess;
    let p_out = spec.p_outlier * scale;
    let observations = (0..spec.length)
        .map(|t| {
            let row = s.clean_row(&mut r);
            let mut values: Vec<Option<f64>> = row.iter().map(|&x| Some(x)).collect();
            for a in 0..3 {
                let x = row[a];
                if r.random::<f64>() < s.inconsistent[a] * scale {
                    values[a] = Some(if a == 0 {
                        -x * r.random_range(0.05..0.5)
                    } else {
                        1.0 + r.random_range(excess[0]..=excess[1])
                    });
                } else if r.random::<f64>() < p_out {
                    let [lo, hi] = factors[a];
                    let f = if hi > lo { r.random_range(lo..hi) } else { lo };
                    values[a] = Some(x * f);
                }
                if r.random::<f64>() < s.missing[a] * scale {
                    values[a] = None;
                }
            }
            Observation::new(t, values)
        })
        .collect();
    TimeSeries::new(node, observations)
}

/// Generates `spec` deterministically; series are independent given their
/// derived seeds, so generation runs in parallel.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let samplers = Samplers::new(spec)?;
    let [ni, nj, nk] = spec.layers;
    let nodes: Vec<NodeId> = (0..ni)
        .flat_map(|i| (0..nj).flat_map(move |j| (0..nk).map(move |k| NodeId::new(i, j, k))))
        .collect();

    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.shuffle(&mut rng(substream(spec.seed, "clean-series")));
    let mut clean = vec![false; nodes.len()];
    for &i in &order[..spec.clean_count()] {
        clean[i] = true;
    }
    let dirty_scale = spec.dirty_scale();

    let series = nodes
        .par_iter()
        .enumerate()
        .map(|(idx, &node)| {
            let scale = if clean[idx] { spec.clean_scale } else { dirty_scale };
            generate_series(spec, &samplers, node, derive_seed(spec.seed, idx as u64), scale)
        })
        .collect();
    Dataset::new(
        vec!["attr1".into(), "attr2".into(), "attr3".into()],
        series,
        Role::Dirty,
    )
}
