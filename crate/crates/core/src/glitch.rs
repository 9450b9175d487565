//! Glitch detection and scoring.
//!
//! Three glitch types are tracked per cell, in a fixed order: missing,
//! inconsistent (violates a constraint rule), and outlier (outside 3-σ limits
//! fitted on ideal data). Each observation yields a `v × 3` bit matrix; the
//! dataset-level scores are weighted sums over those bits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Observation, SeriesId};
use crate::error::{Error, Result};

pub const GLITCH_TYPES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlitchType {
    Missing = 0,
    Inconsistent = 1,
    Outlier = 2,
}

impl GlitchType {
    pub const ALL: [GlitchType; GLITCH_TYPES] =
        [GlitchType::Missing, GlitchType::Inconsistent, GlitchType::Outlier];

    pub fn name(self) -> &'static str {
        match self {
            GlitchType::Missing => "missing",
            GlitchType::Inconsistent => "inconsistent",
            GlitchType::Outlier => "outlier",
        }
    }
}

/// Bit `a` is set when attribute `a` is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct AttrMask(pub u32);

impl AttrMask {
    #[inline]
    pub fn get(self, attr: usize) -> bool {
        self.0 & (1 << attr) != 0
    }

    #[inline]
    pub fn set(&mut self, attr: usize) {
        self.0 |= 1 << attr;
    }

    #[inline]
    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Expands to `v` booleans, attribute order.
    pub fn to_bits(self, v: usize) -> Vec<bool> {
        (0..v).map(|a| self.get(a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleKind {
    /// `attr >= min`.
    LowerBound { attr: usize, min: f64 },
    /// `lo <= attr <= hi`.
    Range { attr: usize, lo: f64, hi: f64 },
    /// `populated` must not be observed while `required` is missing.
    ConditionalPopulated { populated: usize, required: usize },
}

/// A constraint whose violation sets the inconsistency bit on `flagged()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRule {
    #[serde(flatten)]
    pub kind: RuleKind,
    /// Overrides the attribute that receives the bit; defaults to the rule's own
    /// attribute (`populated` for conditional rules).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<usize>,
}

impl From<RuleKind> for ConstraintRule {
    fn from(kind: RuleKind) -> Self {
        Self { kind, flag: None }
    }
}

impl ConstraintRule {
    pub fn lower_bound(attr: usize, min: f64) -> Self {
        RuleKind::LowerBound { attr, min }.into()
    }

    pub fn range(attr: usize, lo: f64, hi: f64) -> Self {
        RuleKind::Range { attr, lo, hi }.into()
    }

    pub fn conditional_populated(populated: usize, required: usize) -> Self {
        RuleKind::ConditionalPopulated {
            populated,
            required,
        }
        .into()
    }

    pub fn with_flag(mut self, attr: usize) -> Self {
        self.flag = Some(attr);
        self
    }

    pub fn flagged(&self) -> usize {
        self.flag.unwrap_or(match self.kind {
            RuleKind::LowerBound { attr, .. } | RuleKind::Range { attr, .. } => attr,
            RuleKind::ConditionalPopulated { populated, .. } => populated,
        })
    }

    pub fn validate(&self, v: usize) -> Result<()> {
        let check = |a: usize| {
            if a < v {
                Ok(())
            } else {
                Err(Error::InvalidRule(format!(
                    "attribute index {a} out of range for {v} attributes"
                )))
            }
        };
        check(self.flagged())?;
        match self.kind {
            RuleKind::LowerBound { attr, min } => {
                check(attr)?;
                if !min.is_finite() {
                    return Err(Error::InvalidRule("lower bound must be finite".into()));
                }
            }
            RuleKind::Range { attr, lo, hi } => {
                check(attr)?;
                if lo.is_nan() || hi.is_nan() || lo >= hi {
                    return Err(Error::InvalidRule(format!(
                        "range needs lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            RuleKind::ConditionalPopulated {
                populated,
                required,
            } => {
                check(populated)?;
                check(required)?;
            }
        }
        Ok(())
    }

    /// Bound and range rules ignore missing operands.
    pub fn is_violated(&self, values: &[Option<f64>]) -> bool {
        match self.kind {
            RuleKind::LowerBound { attr, min } => values[attr].is_some_and(|x| x < min),
            RuleKind::Range { attr, lo, hi } => values[attr].is_some_and(|x| x < lo || x > hi),
            RuleKind::ConditionalPopulated {
                populated,
                required,
            } => values[populated].is_some() && values[required].is_none(),
        }
    }
}

/// The three constraints of the mobility-network case study, 0-based:
/// attribute 0 ≥ 0; attribute 2 ∈ [0, 1]; attribute 0 unpopulated when attribute 2 is missing.
pub fn reference_rules() -> Vec<ConstraintRule> {
    vec![
        ConstraintRule::lower_bound(0, 0.0),
        ConstraintRule::range(2, 0.0, 1.0),
        ConstraintRule::conditional_populated(0, 2),
    ]
}

pub fn validate_rules(rules: &[ConstraintRule], v: usize) -> Result<()> {
    rules.iter().try_for_each(|r| r.validate(v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttrLimits {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl AttrLimits {
    pub fn three_sigma(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            lo: mean - 3.0 * std,
            hi: mean + 3.0 * std,
        }
    }

    /// Closed interval: the limits themselves are acceptable.
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierLimits(pub Vec<AttrLimits>);

impl OutlierLimits {
    /// Limits given directly as `(lo, hi)` pairs; mean is the midpoint.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        Self(
            bounds
                .iter()
                .map(|&(lo, hi)| AttrLimits {
                    mean: 0.5 * (lo + hi),
                    std: (hi - lo) / 6.0,
                    lo,
                    hi,
                })
                .collect(),
        )
    }

    pub fn attr(&self, a: usize) -> &AttrLimits {
        &self.0[a]
    }

    pub fn means(&self) -> Vec<f64> {
        self.0.iter().map(|l| l.mean).collect()
    }
}

/// Per-attribute mean and sample standard deviation (n − 1) over observed
/// working-space values pooled across series; limits at μ ± 3σ.
pub fn fit_outlier_limits(ideal: &Dataset) -> Result<OutlierLimits> {
    (0..ideal.v())
        .map(|a| {
            let xs = ideal.fit_values(a);
            if xs.len() < 2 {
                return Err(Error::TooFewObservations {
                    attribute: ideal.attribute_names[a].clone(),
                    count: xs.len(),
                    required: 2,
                });
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            Ok(AttrLimits::three_sigma(mean, (ss / (n - 1.0)).sqrt()))
        })
        .collect::<Result<Vec<_>>>()
        .map(OutlierLimits)
}

pub fn detect_missing(obs: &Observation) -> AttrMask {
    let mut m = AttrMask::default();
    for (a, x) in obs.values.iter().enumerate() {
        if x.is_none() {
            m.set(a);
        }
    }
    m
}

/// `values` are in original units.
pub fn detect_inconsistent(values: &[Option<f64>], rules: &[ConstraintRule]) -> AttrMask {
    let mut m = AttrMask::default();
    for rule in rules {
        if rule.is_violated(values) {
            m.set(rule.flagged());
        }
    }
    m
}

/// Working-space comparison. Passthrough cells are not in working units and
/// are never flagged.
pub fn detect_outliers(obs: &Observation, limits: &OutlierLimits) -> AttrMask {
    let mut m = AttrMask::default();
    for (a, x) in obs.values.iter().enumerate() {
        if let Some(x) = *x {
            if !obs.is_passthrough(a) && !limits.attr(a).contains(x) {
                m.set(a);
            }
        }
    }
    m
}

/// The `v × 3` glitch bit matrix of one observation, stored column-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct GlitchMatrix(pub [AttrMask; GLITCH_TYPES]);

impl GlitchMatrix {
    #[inline]
    pub fn column(&self, ty: GlitchType) -> AttrMask {
        self.0[ty as usize]
    }

    #[inline]
    pub fn get(&self, attr: usize, ty: GlitchType) -> bool {
        self.column(ty).get(attr)
    }

    pub fn counts(&self) -> [u32; GLITCH_TYPES] {
        [self.0[0].count(), self.0[1].count(), self.0[2].count()]
    }

    pub fn is_clean(&self) -> bool {
        self.0.iter().all(|m| m.is_empty())
    }
}

/// Non-negative per-type weights, at least one positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; GLITCH_TYPES]", into = "[f64; GLITCH_TYPES]")]
pub struct GlitchWeights([f64; GLITCH_TYPES]);

impl GlitchWeights {
    pub fn new(w: [f64; GLITCH_TYPES]) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "glitch weights must be non-negative with at least one positive, got {w:?}"
            )));
        }
        Ok(Self(w))
    }

    pub fn as_array(&self) -> [f64; GLITCH_TYPES] {
        self.0
    }

    fn weigh(&self, counts: [u64; GLITCH_TYPES], scale: f64) -> f64 {
        (0..GLITCH_TYPES)
            .map(|k| counts[k] as f64 / scale * self.0[k])
            .sum()
    }
}

impl Default for GlitchWeights {
    /// 0.25 missing, 0.25 inconsistent, 0.5 outlier.
    fn default() -> Self {
        Self([0.25, 0.25, 0.5])
    }
}

impl TryFrom<[f64; GLITCH_TYPES]> for GlitchWeights {
    type Error = Error;
    fn try_from(w: [f64; GLITCH_TYPES]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<GlitchWeights> for [f64; GLITCH_TYPES] {
    fn from(w: GlitchWeights) -> Self {
        w.0
    }
}

/// Rules plus limits: everything needed to build glitch matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub rules: Vec<ConstraintRule>,
    pub limits: OutlierLimits,
}

impl Detector {
    pub fn new(rules: Vec<ConstraintRule>, limits: OutlierLimits) -> Self {
        Self { rules, limits }
    }

    /// Glitch matrix of `obs`, which must belong to `ds` (its transform decides
    /// how rule operands are mapped back to original units).
    pub fn matrix(&self, ds: &Dataset, obs: &Observation) -> GlitchMatrix {
        let inconsistent = if ds.transform.is_identity() {
            detect_inconsistent(&obs.values, &self.rules)
        } else {
            let original: Vec<Option<f64>> =
                (0..obs.values.len()).map(|a| ds.original_value(obs, a)).collect();
            detect_inconsistent(&original, &self.rules)
        };
        let missing = detect_missing(obs);
        let mut outlier = detect_outliers(obs, &self.limits);
        outlier.0 &= !missing.0;
        GlitchMatrix([missing, inconsistent, outlier])
    }

    pub fn scan(&self, ds: &Dataset) -> GlitchScan {
        let series = ds
            .series
            .par_iter()
            .map(|s| s.observations.iter().map(|o| self.matrix(ds, o)).collect())
            .collect();
        GlitchScan {
            ids: ds.series.iter().map(|s| s.id()).collect(),
            series,
            v: ds.v(),
        }
    }
}

/// Glitch matrices for every observation of a dataset, series by series.
#[derive(Debug, Clone, PartialEq)]
pub struct GlitchScan {
    pub ids: Vec<SeriesId>,
    pub series: Vec<Vec<GlitchMatrix>>,
    pub v: usize,
}

/// Per-series normalized score with its position in the dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedSeries {
    pub index: usize,
    pub id: SeriesId,
    pub score: f64,
}

/// Percentage of cells carrying each glitch type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlitchPercentages(pub [f64; GLITCH_TYPES]);

impl GlitchPercentages {
    pub fn get(&self, ty: GlitchType) -> f64 {
        self.0[ty as usize]
    }
}

impl GlitchScan {
    pub fn series_counts(&self, index: usize) -> [u64; GLITCH_TYPES] {
        let mut c = [0u64; GLITCH_TYPES];
        for m in &self.series[index] {
            for (k, n) in m.counts().into_iter().enumerate() {
                c[k] += u64::from(n);
            }
        }
        c
    }

    pub fn totals(&self) -> [u64; GLITCH_TYPES] {
        let mut c = [0u64; GLITCH_TYPES];
        for i in 0..self.series.len() {
            for (k, n) in self.series_counts(i).into_iter().enumerate() {
                c[k] += n;
            }
        }
        c
    }

    pub fn cell_count(&self) -> usize {
        self.series.iter().map(Vec::len).sum::<usize>() * self.v
    }

    /// Weighted count of glitch bits over all cells.
    pub fn cell_index(&self, w: &GlitchWeights) -> f64 {
        w.weigh(self.totals(), 1.0)
    }

    /// Glitch bits of one series divided by its length, weighted.
    pub fn series_score(&self, index: usize, w: &GlitchWeights) -> f64 {
        let t = self.series[index].len();
        if t == 0 {
            return 0.0;
        }
        w.weigh(self.series_counts(index), t as f64)
    }

    /// Sum of per-series normalized scores.
    pub fn normalized_score(&self, w: &GlitchWeights) -> f64 {
        (0..self.series.len()).map(|i| self.series_score(i, w)).sum()
    }

    /// Descending by score; ties broken by ascending series id.
    pub fn rank(&self, w: &GlitchWeights) -> Vec<RankedSeries> {
        let mut ranked: Vec<RankedSeries> = (0..self.series.len())
            .map(|i| RankedSeries {
                index: i,
                id: self.ids[i],
                score: self.series_score(i, w),
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        ranked
    }

    pub fn percentages(&self) -> GlitchPercentages {
        let cells = self.cell_count();
        if cells == 0 {
            return GlitchPercentages::default();
        }
        let t = self.totals();
        GlitchPercentages(t.map(|c| 100.0 * c as f64 / cells as f64))
    }

    /// Per-series percentage of cells flagged, by type.
    pub fn series_percentages(&self, index: usize) -> GlitchPercentages {
        let cells = self.series[index].len() * self.v;
        if cells == 0 {
            return GlitchPercentages::default();
        }
        GlitchPercentages(
            self.series_counts(index)
                .map(|c| 100.0 * c as f64 / cells as f64),
        )
    }
}

pub fn build_glitch_matrix(
    obs: &Observation,
    rules: &[ConstraintRule],
    limits: &OutlierLimits,
) -> GlitchMatrix {
    let missing = detect_missing(obs);
    let mut outlier = detect_outliers(obs, limits);
    outlier.0 &= !missing.0;
    GlitchMatrix([missing, detect_inconsistent(&obs.values, rules), outlier])
}

fn scan(ds: &Dataset, rules: &[ConstraintRule], limits: &OutlierLimits) -> GlitchScan {
    Detector::new(rules.to_vec(), limits.clone()).scan(ds)
}

pub fn cell_glitch_index(
    ds: &Dataset,
    rules: &[ConstraintRule],
    limits: &OutlierLimits,
    w: &GlitchWeights,
) -> f64 {
    scan(ds, rules, limits).cell_index(w)
}

pub fn normalized_glitch_score(
    ds: &Dataset,
    rules: &[ConstraintRule],
    limits: &OutlierLimits,
    w: &GlitchWeights,
) -> f64 {
    scan(ds, rules, limits).normalized_score(w)
}

pub fn series_glitch_rank(
    ds: &Dataset,
    rules: &[ConstraintRule],
    limits: &OutlierLimits,
    w: &GlitchWeights,
) -> Vec<RankedSeries> {
    scan(ds, rules, limits).rank(w)
}

pub fn glitch_percentages(
    ds: &Dataset,
    rules: &[ConstraintRule],
    limits: &OutlierLimits,
) -> GlitchPercentages {
    scan(ds, rules, limits).percentages()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::{dataset, series};
    use crate::dataset::{apply_transform, Transform};
    use proptest::prelude::*;

    fn wide() -> OutlierLimits {
        OutlierLimits::from_bounds(&[(-1e9, 1e9); 3])
    }

    fn obs(values: &[Option<f64>]) -> Observation {
        Observation::new(0, values.to_vec())
    }

    #[test]
    fn missing_detector() {
        assert_eq!(
            detect_missing(&obs(&[Some(5.0), None, Some(0.7)])).to_bits(3),
            vec![false, true, false]
        );
        assert!(detect_missing(&obs(&[Some(1.0); 3])).is_empty());
        assert_eq!(detect_missing(&obs(&[None; 3])).count(), 3);
    }

    #[test]
    fn inconsistency_rules() {
        let rules = reference_rules();
        let bits = |v: &[Option<f64>]| detect_inconsistent(v, &rules).to_bits(3);
        assert_eq!(bits(&[Some(-2.0), Some(1.0), Some(0.5)]), [true, false, false]);
        assert_eq!(bits(&[Some(1.0), Some(1.0), Some(1.5)]), [false, false, true]);
        assert_eq!(bits(&[Some(4.0), Some(1.0), None]), [true, false, false]);
        assert_eq!(bits(&[Some(1.0), Some(2.0), Some(0.5)]), [false, false, false]);
        // Range boundaries are inside.
        assert_eq!(bits(&[Some(0.0), None, Some(1.0)]), [false, false, false]);
    }

    #[test]
    fn rule_validation() {
        assert!(ConstraintRule::range(0, 1.0, 1.0).validate(3).is_err());
        assert!(ConstraintRule::lower_bound(3, 0.0).validate(3).is_err());
        assert!(ConstraintRule::conditional_populated(0, 5).validate(3).is_err());
        assert!(validate_rules(&reference_rules(), 3).is_ok());
        let custom = ConstraintRule {
            kind: RuleKind::ConditionalPopulated {
                populated: 0,
                required: 2,
            },
            flag: Some(2),
        };
        assert_eq!(custom.flagged(), 2);
    }

    #[test]
    fn fit_limits_two_points() {
        let ds = dataset(vec![series((0, 0, 0), &[&[Some(-1.0)], &[Some(1.0)]])]);
        let l = fit_outlier_limits(&ds).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        assert_eq!(l.attr(0).mean, 0.0);
        assert!((l.attr(0).std - s2).abs() < 1e-15);
        assert!((l.attr(0).hi - 4.242640687119285).abs() < 1e-12);
        assert!((l.attr(0).lo + 4.242640687119285).abs() < 1e-12);
    }

    #[test]
    fn fit_limits_constant_and_too_few() {
        let ds = dataset(vec![series((0, 0, 0), &[&[Some(5.0)], &[Some(5.0)], &[Some(5.0)]])]);
        let l = fit_outlier_limits(&ds).unwrap();
        assert_eq!((l.attr(0).lo, l.attr(0).hi), (5.0, 5.0));

        let ds = dataset(vec![series((0, 0, 0), &[&[Some(5.0)], &[None]])]);
        match fit_outlier_limits(&ds) {
            Err(Error::TooFewObservations { attribute, count, .. }) => {
                assert_eq!(attribute, "attr1");
                assert_eq!(count, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn outlier_detector_is_closed_interval() {
        let l = OutlierLimits::from_bounds(&[(-3.0, 3.0)]);
        assert!(detect_outliers(&obs(&[Some(5.0)]), &l).get(0));
        assert!(!detect_outliers(&obs(&[Some(3.0)]), &l).get(0));
        assert!(!detect_outliers(&obs(&[Some(-3.0)]), &l).get(0));
        assert!(!detect_outliers(&obs(&[None]), &l).get(0));
    }

    #[test]
    fn glitch_matrix_examples() {
        let rules = reference_rules();
        assert!(build_glitch_matrix(&obs(&[Some(1.0), Some(1.0), Some(0.5)]), &rules, &wide())
            .is_clean());

        let m = build_glitch_matrix(&obs(&[None, Some(1.0), None]), &rules, &wide());
        assert_eq!(m.column(GlitchType::Missing).to_bits(3), [true, false, true]);
        assert!(m.column(GlitchType::Inconsistent).is_empty());
        assert!(m.column(GlitchType::Outlier).is_empty());

        let m = build_glitch_matrix(&obs(&[Some(-2.0), Some(1.0), Some(0.5)]), &rules, &wide());
        assert_eq!(m.counts(), [0, 1, 0]);
        assert!(m.get(0, GlitchType::Inconsistent));
    }

    #[test]
    fn cell_index_examples() {
        let rules = reference_rules();
        let w = GlitchWeights::default();
        let clean = dataset(vec![series((0, 0, 0), &[&[Some(1.0), Some(1.0), Some(0.5)]])]);
        assert_eq!(cell_glitch_index(&clean, &rules, &wide(), &w), 0.0);

        let one_missing = dataset(vec![series((0, 0, 0), &[&[Some(1.0), None, Some(0.5)]])]);
        assert_eq!(cell_glitch_index(&one_missing, &rules, &wide(), &w), 0.25);

        // attr1: missing + inconsistent is impossible under the reference rules
        // with a missing attr1, so use a custom rule on attr2.
        let rules2 = vec![ConstraintRule::conditional_populated(0, 1).with_flag(1)];
        let limits = OutlierLimits::from_bounds(&[(-10.0, 10.0); 3]);
        let ds = dataset(vec![series((0, 0, 0), &[&[Some(1.0), None, Some(50.0)]])]);
        assert_eq!(cell_glitch_index(&ds, &rules2, &limits, &w), 1.0);
    }

    #[test]
    fn normalized_score_examples() {
        let rules = reference_rules();
        let w = GlitchWeights::default();
        let mut rows: Vec<Vec<Option<f64>>> = vec![vec![Some(1.0), Some(1.0), Some(0.5)]; 10];
        rows[3][1] = None;
        rows[7][1] = None;
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let one = dataset(vec![series((0, 0, 0), &refs)]);
        assert_eq!(normalized_glitch_score(&one, &rules, &wide(), &w), 0.05);
        let two = dataset(vec![series((0, 0, 0), &refs), series((0, 0, 1), &refs)]);
        assert_eq!(normalized_glitch_score(&two, &rules, &wide(), &w), 0.10);
    }

    #[test]
    fn ranking_orders_by_score_then_node() {
        let rules = reference_rules();
        let w = GlitchWeights::default();
        let clean: &[Option<f64>] = &[Some(1.0), Some(1.0), Some(0.5)];
        let dirty: &[Option<f64>] = &[None, None, None];
        let ds = dataset(vec![
            series((0, 0, 2), &[clean]),
            series((0, 0, 1), &[clean]),
            series((0, 0, 3), &[dirty]),
        ]);
        let ranked = series_glitch_rank(&ds, &rules, &wide(), &w);
        let ks: Vec<u32> = ranked.iter().map(|r| r.id.node.k).collect();
        assert_eq!(ks, vec![3, 1, 2]);
    }

    #[test]
    fn percentages_examples() {
        let rules = reference_rules();
        let mut rows: Vec<Vec<Option<f64>>> = vec![vec![Some(1.0); 4]; 25];
        rows[0][1] = None;
        let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
        let ds = dataset(vec![series((0, 0, 0), &refs)]);
        let limits = OutlierLimits::from_bounds(&[(-9.0, 9.0); 4]);
        assert_eq!(glitch_percentages(&ds, &[], &limits).0, [1.0, 0.0, 0.0]);

        let all_missing = dataset(vec![series((0, 0, 0), &[&[None, None, None]])]);
        let tight = OutlierLimits::from_bounds(&[(0.0, 0.0); 3]);
        assert_eq!(glitch_percentages(&all_missing, &rules, &tight).0, [100.0, 0.0, 0.0]);
    }

    #[test]
    fn rules_see_original_units_under_log_transform() {
        // ln(0.5) < 0 must not trip the attr1 >= 0 rule; a raw -2 must.
        let ds = dataset(vec![series(
            (0, 0, 0),
            &[&[Some(0.5), Some(1.0), Some(0.5)], &[Some(-2.0), Some(1.0), Some(0.5)]],
        )]);
        let (logged, _) = apply_transform(&ds, &Transform::log_on(3, 0)).unwrap();
        let det = Detector::new(reference_rules(), wide());
        let scan = det.scan(&logged);
        assert_eq!(scan.series[0][0].counts(), [0, 0, 0]);
        assert_eq!(scan.series[0][1].counts(), [0, 1, 0]);
    }

    #[test]
    fn weights_must_be_non_negative_and_not_all_zero() {
        assert!(GlitchWeights::new([0.0, 0.0, 0.0]).is_err());
        assert!(GlitchWeights::new([-1.0, 1.0, 0.0]).is_err());
        assert!(GlitchWeights::new([0.0, 0.0, 1.0]).is_ok());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let cell = prop_oneof![1 => Just(None), 4 => (-3.0f64..3.0).prop_map(Some)];
        let obs = proptest::collection::vec(cell, 3);
        proptest::collection::vec(proptest::collection::vec(obs, 1..12), 1..6).prop_map(|ss| {
            let series = ss
                .into_iter()
                .enumerate()
                .map(|(n, rows)| {
                    let refs: Vec<&[Option<f64>]> = rows.iter().map(|r| r.as_slice()).collect();
                    series((0, 0, n as u32), &refs)
                })
                .collect();
            dataset(series)
        })
    }

    fn limits() -> OutlierLimits {
        OutlierLimits::from_bounds(&[(-2.0, 2.0), (-1.5, 2.5), (0.0, 1.0)])
    }

    proptest! {
        #[test]
        fn cell_index_is_linear_in_weights(ds in arb_dataset()) {
            let rules = reference_rules();
            let w = GlitchWeights::new([0.3, 0.7, 1.1]).unwrap();
            let w2 = GlitchWeights::new([0.6, 1.4, 2.2]).unwrap();
            let a = cell_glitch_index(&ds, &rules, &limits(), &w);
            let b = cell_glitch_index(&ds, &rules, &limits(), &w2);
            prop_assert_eq!(2.0 * a, b);
            let a = normalized_glitch_score(&ds, &rules, &limits(), &w);
            let b = normalized_glitch_score(&ds, &rules, &limits(), &w2);
            prop_assert_eq!(2.0 * a, b);
        }

        #[test]
        fn cell_index_is_additive_over_concatenation(a in arb_dataset(), b in arb_dataset()) {
            let rules = reference_rules();
            let w = GlitchWeights::default();
            let joined = a.concat(&b).unwrap();
            let lhs = cell_glitch_index(&joined, &rules, &limits(), &w);
            let rhs = cell_glitch_index(&a, &rules, &limits(), &w)
                + cell_glitch_index(&b, &rules, &limits(), &w);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }

        #[test]
        fn normalized_score_ignores_duplicated_observations(ds in arb_dataset()) {
            let rules = reference_rules();
            let w = GlitchWeights::default();
            let mut doubled = ds.clone();
            for s in &mut doubled.series {
                let n = s.observations.len() as u32;
                let copies: Vec<_> = s.observations.iter().map(|o| {
                    let mut c = o.clone();
                    c.t += n;
                    c
                }).collect();
                s.observations.extend(copies);
            }
            let a = normalized_glitch_score(&ds, &rules, &limits(), &w);
            let b = normalized_glitch_score(&doubled, &rules, &limits(), &w);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn missing_and_outlier_never_share_a_cell(ds in arb_dataset()) {
            let tight = OutlierLimits::from_bounds(&[(0.0, 0.1); 3]);
            let scan = Detector::new(reference_rules(), tight).scan(&ds);
            for m in scan.series.iter().flatten() {
                prop_assert_eq!(m.column(GlitchType::Missing).0 & m.column(GlitchType::Outlier).0, 0);
            }
        }

        #[test]
        fn rank_is_a_deterministic_permutation(ds in arb_dataset()) {
            let w = GlitchWeights::default();
            let r1 = series_glitch_rank(&ds, &reference_rules(), &limits(), &w);
            let r2 = series_glitch_rank(&ds, &reference_rules(), &limits(), &w);
            prop_assert_eq!(&r1, &r2);
            let mut idx: Vec<usize> = r1.iter().map(|r| r.index).collect();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..ds.series.len()).collect::<Vec<_>>());
        }
    }
}
