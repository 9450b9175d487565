//! The run configuration file (TOML).
//!
//! ```toml
//! output_dir = "out"
//! dataset = "data/network.csv"      # or a [synth] table, never both
//!
//! [experiment]
//! replications = 50
//! series_per_sample = 100
//! strategies = [1, 2, 3, 4, 5]
//! cost_fractions = [0, 20, 50, 100]
//! master_seed = 7
//!
//! [distortion]
//! bins = 8
//!
//! [[rules]]
//! kind = "lower-bound"
//! attr = 0
//! min = 0.0
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cleaneval_core::io::ColumnMapping;
use cleaneval_core::{
    load_dataset, ConstraintRule, Dataset, DistortionParams, ExperimentConfig, Schema, SynthSpec,
};
use serde::Deserialize;

/// Header names for datasets whose columns are not in `i,j,k,t,attrs...` order.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedColumns {
    pub node: [String; 3],
    pub time: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub columns: Option<NamedColumns>,
    pub max_series_len: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    /// Overrides `experiment.distortion` when present.
    pub distortion: Option<DistortionParams>,
    /// Overrides `experiment.rules` when present.
    pub rules: Option<Vec<ConstraintRule>>,
}

/// Where the dirty dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File(PathBuf),
    Synth(Box<SynthSpec>),
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        if let Some(d) = cfg.distortion.take() {
            cfg.experiment.distortion = d;
        }
        if let Some(r) = cfg.rules.take() {
            cfg.experiment.rules = r;
        }
        match (&cfg.dataset, &cfg.synth) {
            (Some(_), Some(_)) => bail!("configure either `dataset` or `[synth]`, not both"),
            (None, None) => bail!("configure a `dataset` path or a `[synth]` section"),
            _ => {}
        }
        if let Some(d) = &mut cfg.dataset {
            if d.is_relative() {
                *d = base.join(&*d);
            }
            if !d.is_file() {
                bail!("dataset {} does not exist", d.display());
            }
        }
        if let Some(s) = &cfg.synth {
            s.validate()?;
        }
        if let Some(o) = &mut cfg.output_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn source(&self) -> Source {
        match (&self.dataset, &self.synth) {
            (Some(p), _) => Source::File(p.clone()),
            (None, Some(s)) => Source::Synth(Box::new(s.clone())),
            (None, None) => unreachable!("validated at parse time"),
        }
    }

    pub fn schema(&self) -> Schema {
        let columns = match &self.columns {
            None => ColumnMapping::Positional,
            Some(c) => ColumnMapping::Named {
                node: c.node.clone(),
                time: c.time.clone(),
                attributes: c.attributes.clone(),
            },
        };
        Schema {
            columns,
            max_series_len: self.max_series_len,
        }
    }

    /// Loads or generates the dirty dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        Ok(match self.source() {
            Source::File(p) => load_dataset(&p, &self.schema())
                .with_context(|| format!("cannot load {}", p.display()))?,
            Source::Synth(s) => cleaneval_core::generate(&s)?,
        })
    }

    /// `--out` wins over the config; the default is `./out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// `--seed` replaces both the experiment and the generator seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.experiment.master_seed = seed;
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
    }
}
