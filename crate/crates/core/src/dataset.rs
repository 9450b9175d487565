//! Hierarchical time-series data model.
//!
//! Every series belongs to a leaf node `(i, j, k)` of a three-layer network and
//! carries a fixed number `v` of attributes per time step. Absent values are
//! `None`. Datasets are treated as immutable values: cleaning and transforms
//! return new datasets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on attributes per dataset; per-observation flags are packed in a `u32`.
pub const MAX_ATTRIBUTES: usize = 32;

/// Leaf node of the network hierarchy (e.g. RNC / cell tower / sector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl NodeId {
    pub fn new(i: u32, j: u32, k: u32) -> Self {
        Self { i, j, k }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.i, self.j, self.k)
    }
}

/// Identifies a series within a dataset. Bootstrap samples may contain the same
/// node several times; each draw gets its own `instance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesId {
    pub node: NodeId,
    pub instance: u32,
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.instance == 0 {
            write!(f, "{}", self.node)
        } else {
            write!(f, "{}#{}", self.node, self.instance)
        }
    }
}

/// One time step of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: u32,
    pub values: Vec<Option<f64>>,
    /// Bit `a` set: attribute `a` was left in original units by a log transform
    /// because it was not strictly positive.
    pub passthrough: u32,
}

impl Observation {
    pub fn new(t: u32, values: Vec<Option<f64>>) -> Self {
        Self {
            t,
            values,
            passthrough: 0,
        }
    }

    #[inline]
    pub fn value(&self, attr: usize) -> Option<f64> {
        self.values[attr]
    }

    #[inline]
    pub fn is_passthrough(&self, attr: usize) -> bool {
        self.passthrough & (1 << attr) != 0
    }

    /// Overwrites a cell with a working-space value.
    #[inline]
    pub fn set(&mut self, attr: usize, value: f64) {
        self.values[attr] = Some(value);
        self.passthrough &= !(1 << attr);
    }

    #[inline]
    pub fn clear(&mut self, attr: usize) {
        self.values[attr] = None;
        self.passthrough &= !(1 << attr);
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub node: NodeId,
    pub instance: u32,
    /// Sorted by strictly increasing `t`.
    pub observations: Vec<Observation>,
}

impl TimeSeries {
    pub fn new(node: NodeId, observations: Vec<Observation>) -> Self {
        Self {
            node,
            instance: 0,
            observations,
        }
    }

    pub fn id(&self) -> SeriesId {
        SeriesId {
            node: self.node,
            instance: self.instance,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Where a dataset sits in the evaluation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Dirty,
    Ideal,
    SampledDirty,
    SampledIdeal,
    Treated,
}

/// Per-attribute value transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrTransform {
    #[default]
    Identity,
    #[serde(alias = "ln", alias = "natural-log")]
    Log,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transform(pub Vec<AttrTransform>);

impl Transform {
    pub fn identity(v: usize) -> Self {
        Self(vec![AttrTransform::Identity; v])
    }

    /// Identity everywhere except a natural log on `attr`.
    pub fn log_on(v: usize, attr: usize) -> Self {
        let mut tf = Self::identity(v);
        tf.0[attr] = AttrTransform::Log;
        tf
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|t| *t == AttrTransform::Identity)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, attr: usize) -> AttrTransform {
        self.0.get(attr).copied().unwrap_or_default()
    }

    /// Maps a working-space value back to original units.
    #[inline]
    pub fn to_original(&self, attr: usize, value: f64, passthrough: bool) -> f64 {
        match self.get(attr) {
            AttrTransform::Log if !passthrough => value.exp(),
            _ => value,
        }
    }
}

/// Outcome metadata of [`apply_transform`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransformReport {
    /// Per attribute, how many observed non-positive values were left untransformed.
    pub passthrough_cells: Vec<usize>,
}

impl TransformReport {
    pub fn total_passthrough(&self) -> usize {
        self.passthrough_cells.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub attribute_names: Vec<String>,
    pub series: Vec<TimeSeries>,
    pub role: Role,
    /// Transform that maps original units to the stored (working) values.
    pub transform: Transform,
}

impl Dataset {
    /// Builds a dataset, checking that every observation has `attribute_names.len()` values.
    pub fn new(attribute_names: Vec<String>, series: Vec<TimeSeries>, role: Role) -> Result<Self> {
        let v = attribute_names.len();
        if v == 0 || v > MAX_ATTRIBUTES {
            return Err(Error::InvalidArgument(format!(
                "attribute count must be in 1..={MAX_ATTRIBUTES}, got {v}"
            )));
        }
        for s in &series {
            for w in s.observations.windows(2) {
                if w[0].t >= w[1].t {
                    return Err(Error::DuplicateTime {
                        node: s.node,
                        t: w[1].t,
                    });
                }
            }
            if let Some(obs) = s.observations.iter().find(|o| o.values.len() != v) {
                return Err(Error::DimensionMismatch {
                    expected: v,
                    got: obs.values.len(),
                });
            }
        }
        Ok(Self {
            attribute_names,
            series,
            role,
            transform: Transform::identity(v),
        })
    }

    /// Generic attribute names `attr1..attrv`.
    pub fn default_names(v: usize) -> Vec<String> {
        (1..=v).map(|a| format!("attr{a}")).collect()
    }

    pub fn v(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn observation_count(&self) -> usize {
        self.series.iter().map(TimeSeries::len).sum()
    }

    /// Total number of cells, `Σ T_series × v`.
    pub fn cell_count(&self) -> usize {
        self.observation_count() * self.v()
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Same attributes, role, and transform; different series.
    pub fn with_series(&self, series: Vec<TimeSeries>) -> Self {
        Self {
            attribute_names: self.attribute_names.clone(),
            series,
            role: self.role,
            transform: self.transform.clone(),
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.series.iter().flat_map(|s| s.observations.iter())
    }

    /// Value of `attr` in original units.
    pub fn original_value(&self, obs: &Observation, attr: usize) -> Option<f64> {
        obs.value(attr)
            .map(|x| self.transform.to_original(attr, x, obs.is_passthrough(attr)))
    }

    /// Working-space values of observations with no missing attribute.
    pub fn complete_tuples(&self) -> Vec<Vec<f64>> {
        self.observations()
            .filter(|o| o.is_complete())
            .map(|o| o.values.iter().map(|x| x.unwrap()).collect())
            .collect()
    }

    /// Working-space values of `attr` usable for fitting: observed and actually
    /// in working units (passthrough cells excluded).
    pub fn fit_values(&self, attr: usize) -> Vec<f64> {
        self.observations()
            .filter(|o| !o.is_passthrough(attr))
            .filter_map(|o| o.value(attr))
            .collect()
    }

    /// Concatenates the series of `other` after those of `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.v() != other.v() {
            return Err(Error::DimensionMismatch {
                expected: self.v(),
                got: other.v(),
            });
        }
        let mut series = self.series.clone();
        series.extend(other.series.iter().cloned());
        Ok(self.with_series(series))
    }
}

/// Applies a per-attribute transform. Observed strictly positive values on
/// log-flagged attributes become `ln(x)`. Non-positive values are left as they
/// are and marked passthrough, so rule checks still see the original value.
pub fn apply_transform(ds: &Dataset, tf: &Transform) -> Result<(Dataset, TransformReport)> {
    if tf.len() != ds.v() {
        return Err(Error::DimensionMismatch {
            expected: ds.v(),
            got: tf.len(),
        });
    }
    if !ds.transform.is_identity() {
        return Err(Error::InvalidArgument(
            "dataset is already transformed; invert it first".into(),
        ));
    }
    let mut report = TransformReport {
        passthrough_cells: vec![0; ds.v()],
    };
    let mut out = ds.clone();
    out.transform = tf.clone();
    for obs in out.series.iter_mut().flat_map(|s| s.observations.iter_mut()) {
        for (a, slot) in obs.values.iter_mut().enumerate() {
            if tf.get(a) != AttrTransform::Log {
                continue;
            }
            if let Some(x) = slot {
                if *x > 0.0 {
                    *x = x.ln();
                } else {
                    obs.passthrough |= 1 << a;
                    report.passthrough_cells[a] += 1;
                }
            }
        }
    }
    Ok((out, report))
}

/// Maps every value back to original units and resets the transform to identity.
pub fn invert_transform(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for obs in out.series.iter_mut().flat_map(|s| s.observations.iter_mut()) {
        for (a, slot) in obs.values.iter_mut().enumerate() {
            if let Some(x) = slot {
                *x = ds.transform.to_original(a, *x, obs.passthrough & (1 << a) != 0);
            }
        }
        obs.passthrough = 0;
    }
    out.transform = Transform::identity(ds.v());
    out
}
