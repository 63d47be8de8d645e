//! Binned fair quantile regression (BFQR).
//!
//! Post-processes the lower/upper heads of any quantile regression model into
//! prediction sets that give equal opportunity of coverage: conditional on the
//! true label falling in a label bin, coverage does not depend on the protected
//! group, while marginal coverage stays at `1 - alpha`.
//!
//! The pipeline is:
//!
//! 1. [`dataset`]: load or generate data, split 3:1:1, cut the calibration
//!    labels into equal-mass bins.
//! 2. [`quantile_model`]: fit affine pinball-loss heads on the training split.
//! 3. [`conformal`]: conformity scores and the CQR / GCQR / LCQR baselines.
//! 4. [`bfqr`]: per (group, bin) score quantiles and the union-of-sub-intervals
//!    predictor, plus its convex hull variant.
//! 5. [`optimizer`]: choose per-bin coverage targets that shrink mean width
//!    without moving mean coverage.
//! 6. [`metrics`]: coverage, width, mean max coverage gap and the energy
//!    distance independence statistic `T`.
//! 7. [`harness`]: seeded multi-method sweeps and report emission.

pub mod bfqr;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod interval;
pub mod metrics;
pub mod optimizer;
pub mod quantile_model;

pub use bfqr::{BetaVector, BfqrPredictor, BinEdges, GroupBinQuantiles};
pub use conformal::{
    conformal_quantile, conformity_score, ConformityRecord, CqrPredictor, GcqrPredictor,
    LcqrPredictor, SortedScores,
};
pub use dataset::{BinPartition, Dataset, GeneratorOptions, SplitIndices};
pub use error::{Error, Result};
pub use harness::{AggregateTable, ExperimentConfig, Method};
pub use interval::IntervalUnion;
pub use metrics::{EvaluationRecord, MetricsReport, TSettings};
pub use optimizer::{OptimizerSettings, OptimizerState, TracePoint};
pub use quantile_model::{pinball_loss, FitOptions, QuantileModel};
