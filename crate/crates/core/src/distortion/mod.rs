//! Statistical distortion: the Earth Mover's Distance between the empirical
//! distributions of a dataset before and after cleaning.
//!
//! Complete observations are binned on an equal-width grid whose support is
//! shared by both datasets. The EMD is the optimal transportation cost between
//! the two normalized histograms; [`simplex`] solves that problem exactly.

pub mod simplex;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub use simplex::{solve_transport, Flow, FlowSolution};

pub const DEFAULT_BINS: usize = 8;

/// How bin-center differences are turned into a ground distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    /// Euclidean after rescaling each dimension's support to unit width.
    #[default]
    Normalized,
    /// Euclidean in data units.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinDim {
    pub min: f64,
    pub max: f64,
    /// Requested bin count; a degenerate dimension (`max == min`) uses one bin.
    pub bins: usize,
}

impl BinDim {
    #[inline]
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    #[inline]
    pub fn effective_bins(&self) -> usize {
        if self.is_degenerate() {
            1
        } else {
            self.bins
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.effective_bins() as f64
    }

    /// Half-open bins, last bin closed.
    fn index_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.min && x <= self.max) {
            return None;
        }
        if self.is_degenerate() {
            return Some(0);
        }
        let n = self.bins;
        let idx = ((x - self.min) / (self.max - self.min) * n as f64).floor() as usize;
        Some(idx.min(n - 1))
    }

    fn center(&self, idx: usize) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + (idx as f64 + 0.5) * self.width()
        }
    }
}

/// Equal-width grid over a box, plus the ground metric used between its bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningSpec {
    pub dims: Vec<BinDim>,
    pub metric: GroundMetric,
}

impl BinningSpec {
    pub fn new(dims: Vec<BinDim>, metric: GroundMetric) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("binning needs at least one dimension".into()));
        }
        for (d, dim) in dims.iter().enumerate() {
            if dim.bins < 2 {
                return Err(Error::InvalidArgument(format!(
                    "dimension {d}: bin count must be at least 2, got {}",
                    dim.bins
                )));
            }
            if !dim.min.is_finite() || !dim.max.is_finite() || dim.max < dim.min {
                return Err(Error::InvalidArgument(format!(
                    "dimension {d}: invalid support [{}, {}]",
                    dim.min, dim.max
                )));
            }
        }
        let cells = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(d.effective_bins()));
        if cells.is_none() {
            return Err(Error::InvalidArgument("binning grid is too large".into()));
        }
        Ok(Self { dims, metric })
    }

    /// Support is the min/max of every coordinate across all pools.
    pub fn covering(pools: &[&[Vec<f64>]], bins: usize, metric: GroundMetric) -> Result<Self> {
        let v = pools
            .iter()
            .flat_map(|p| p.iter())
            .map(Vec::len)
            .next()
            .ok_or(Error::NoCompleteObservations)?;
        let mut lo = vec![f64::INFINITY; v];
        let mut hi = vec![f64::NEG_INFINITY; v];
        for p in pools.iter().flat_map(|p| p.iter()) {
            if p.len() != v {
                return Err(Error::DimensionMismatch {
                    expected: v,
                    got: p.len(),
                });
            }
            for d in 0..v {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let dims = (0..v)
            .map(|d| BinDim {
                min: lo[d],
                max: hi[d],
                bins,
            })
            .collect();
        Self::new(dims, metric)
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().map(BinDim::effective_bins).product()
    }

    /// Row-major flat index of the bin holding `point`.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.ndim() {
            return None;
        }
        let mut flat = 0;
        for (dim, &x) in self.dims.iter().zip(point) {
            flat = flat * dim.effective_bins() + dim.index_of(x)?;
        }
        Some(flat)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.ndim()];
        for (d, dim) in self.dims.iter().enumerate().rev() {
            let n = dim.effective_bins();
            idx[d] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .into_iter()
            .zip(&self.dims)
            .map(|(i, dim)| dim.center(i))
            .collect()
    }
}

/// Distance between two bin centers of `spec`.
pub fn ground_distance(a: &[f64], b: &[f64], spec: &BinningSpec) -> f64 {
    let mut ss = 0.0;
    for ((x, y), dim) in a.iter().zip(b).zip(&spec.dims) {
        let diff = match spec.metric {
            GroundMetric::Raw => x - y,
            GroundMetric::Normalized if dim.is_degenerate() => 0.0,
            GroundMetric::Normalized => (x - y) / (dim.max - dim.min),
        };
        ss += diff * diff;
    }
    ss.sqrt()
}

/// Normalized histogram over a [`BinningSpec`]; empty bins are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    spec: BinningSpec,
    /// `(flat bin index, mass)`, ascending by index.
    bins: Vec<(usize, f64)>,
}

impl Histogram {
    pub fn spec(&self) -> &BinningSpec {
        &self.spec
    }

    pub fn bins(&self) -> &[(usize, f64)] {
        &self.bins
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    /// `(center, mass)` for every nonempty bin.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        self.bins.iter().map(|&(i, m)| (self.spec.center(i), m))
    }

    /// Histogram from non-negative weights, one per flat bin of `spec`.
    pub fn from_weights(spec: BinningSpec, weights: &[f64]) -> Result<Self> {
        if weights.len() != spec.cell_count() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a grid of {} bins",
                weights.len(),
                spec.cell_count()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        let bins = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (i, w / total))
            .collect();
        Ok(Self { spec, bins })
    }

    /// Dense mass vector over every bin of the grid.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.cell_count()];
        for &(i, m) in &self.bins {
            out[i] = m;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.spec.ndim()).map(|d| format!("center{d}")).collect();
        header.push("mass".into());
        wtr.write_record(&header)?;
        for (center, mass) in self.entries() {
            let mut row: Vec<String> = center.iter().map(|c| format!("{c:?}")).collect();
            row.push(format!("{mass:?}"));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Bins complete points; masses are counts over the total.
pub fn build_histogram(points: &[Vec<f64>], spec: &BinningSpec) -> Result<Histogram> {
    if points.is_empty() {
        return Err(Error::NoCompleteObservations);
    }
    let mut counts = std::collections::BTreeMap::<usize, u64>::new();
    for p in points {
        let flat = spec.locate(p).ok_or_else(|| {
            Error::InvalidArgument(format!("point {p:?} lies outside the binning support"))
        })?;
        *counts.entry(flat).or_default() += 1;
    }
    let total = points.len() as f64;
    Ok(Histogram {
        spec: spec.clone(),
        bins: counts.into_iter().map(|(i, c)| (i, c as f64 / total)).collect(),
    })
}

/// Optimal transportation plan between two histograms on the same grid.
pub fn emd_plan(p: &Histogram, q: &Histogram) -> Result<FlowSolution> {
    if p.spec != q.spec {
        return Err(Error::SpecMismatch);
    }
    let spec = &p.spec;
    let pc: Vec<Vec<f64>> = p.bins.iter().map(|b| spec.center(b.0)).collect();
    let qc: Vec<Vec<f64>> = q.bins.iter().map(|b| spec.center(b.0)).collect();
    let mut cost = Vec::with_capacity(pc.len() * qc.len());
    for a in &pc {
        for b in &qc {
            cost.push(ground_distance(a, b, spec));
        }
    }
    let supply: Vec<f64> = p.bins.iter().map(|b| b.1).collect();
    let demand: Vec<f64> = q.bins.iter().map(|b| b.1).collect();
    solve_transport(&supply, &demand, &cost)
}

/// Earth Mover's Distance: optimal cost divided by total flow (which is 1 for
/// normalized histograms).
pub fn emd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.spec != q.spec {
        return Err(Error::SpecMismatch);
    }
    if p.bins == q.bins {
        return Ok(0.0);
    }
    let plan = emd_plan(p, q)?;
    Ok(plan.objective / plan.total_flow())
}

/// Closed-form 1-D EMD: `Σ |CDF_P − CDF_Q| × center spacing`.
pub fn emd_1d_oracle(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.spec != q.spec {
        return Err(Error::SpecMismatch);
    }
    if p.spec.ndim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "1-D oracle needs one dimension, got {}",
            p.spec.ndim()
        )));
    }
    let spec = &p.spec;
    let n = spec.cell_count();
    if n < 2 {
        return Ok(0.0);
    }
    let spacing = ground_distance(&spec.center(0), &spec.center(1), spec);
    let (dp, dq) = (p.dense(), q.dense());
    let (mut cp, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for i in 0..n - 1 {
        cp += dp[i];
        cq += dq[i];
        acc += (cp - cq).abs();
    }
    Ok(acc * spacing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionMode {
    /// One EMD over the joint v-dimensional histogram.
    #[default]
    Joint,
    /// Sum of per-attribute 1-D EMDs.
    PerAttributeSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionParams {
    pub bins: usize,
    pub metric: GroundMetric,
    pub mode: DistortionMode,
}

impl Default for DistortionParams {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            metric: GroundMetric::Normalized,
            mode: DistortionMode::Joint,
        }
    }
}

/// EMD between the complete observations of `dirty` and `treated`, measured in
/// working (post-transform) space on a grid covering both.
pub fn statistical_distortion(
    dirty: &Dataset,
    treated: &Dataset,
    params: &DistortionParams,
) -> Result<f64> {
    if dirty.v() != treated.v() {
        return Err(Error::DimensionMismatch {
            expected: dirty.v(),
            got: treated.v(),
        });
    }
    let a = dirty.complete_tuples();
    let b = treated.complete_tuples();
    if a.is_empty() || b.is_empty() {
        return Err(Error::NoCompleteObservations);
    }
    match params.mode {
        DistortionMode::Joint => {
            let spec = BinningSpec::covering(&[&a, &b], params.bins, params.metric)?;
            emd(&build_histogram(&a, &spec)?, &build_histogram(&b, &spec)?)
        }
        DistortionMode::PerAttributeSum => {
            let mut total = 0.0;
            for d in 0..dirty.v() {
                let ca: Vec<Vec<f64>> = a.iter().map(|p| vec![p[d]]).collect();
                let cb: Vec<Vec<f64>> = b.iter().map(|p| vec![p[d]]).collect();
                let spec = BinningSpec::covering(&[&ca, &cb], params.bins, params.metric)?;
                total += emd(&build_histogram(&ca, &spec)?, &build_histogram(&cb, &spec)?)?;
            }
            Ok(total)
        }
    }
}
