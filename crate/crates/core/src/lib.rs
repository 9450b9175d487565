//! Evaluate data-cleaning strategies on three axes: glitch improvement,
//! statistical distortion, and cost.
//!
//! A dirty dataset of hierarchical time series is split into an ideal part and
//! the rest; bootstrap replications draw paired samples of whole series from
//! both, apply each cleaning strategy to the top fraction of glitchy series, and
//! record how much the glitch score improved and how far the cleaned
//! distribution moved from the dirty one (Earth Mover's Distance).

pub mod cleaning;
pub mod dataset;
pub mod distortion;
pub mod error;
pub mod experiment;
pub mod glitch;
pub mod io;
pub mod seed;
pub mod synth;

pub use cleaning::{
    apply_strategy, fit_gaussian, gaussian_impute, mean_replace, winsorize, CellRef, FittedModels,
    GaussianModel, OutlierMethod, RepairMethod, Strategy, Treatment,
};
pub use dataset::{
    apply_transform, invert_transform, AttrTransform, Dataset, NodeId, Observation, Role,
    SeriesId, TimeSeries, Transform, TransformReport,
};
pub use distortion::{
    build_histogram, emd, emd_1d_oracle, ground_distance, statistical_distortion, BinDim, BinningSpec,
    DistortionMode, DistortionParams, FlowSolution, GroundMetric, Histogram,
};
pub use error::{Error, Result};
pub use experiment::{
    extract_ideal, run_experiment, run_replication, sample_pair, summarize, ExperimentConfig,
    ExperimentOutput, LimitsMode, Replication, ReplicationFailure, ReplicationResult, SummaryRow,
};
pub use glitch::{
    build_glitch_matrix, cell_glitch_index, detect_inconsistent, detect_missing, detect_outliers,
    fit_outlier_limits, glitch_percentages, normalized_glitch_score, reference_rules,
    series_glitch_rank, ConstraintRule, Detector, GlitchMatrix, GlitchPercentages, GlitchScan,
    GlitchType, GlitchWeights, OutlierLimits,
};
pub use io::{load_dataset, save_dataset, Schema};
pub use synth::{generate, reference_dataset, reference_spec, SynthSpec};
