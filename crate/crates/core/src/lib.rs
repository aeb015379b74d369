//! Geographical networks built from gridded rainfall time series.
//!
//! The crate reads a grid of per-cell time series, computes pairwise
//! similarity (Pearson correlation or mutual information), builds networks
//! by global thresholding and by the disparity-filter backbone, compares
//! them against configuration-model ensembles and Erdős–Rényi baselines,
//! and relates topological to geographical distance.

pub mod error;
pub mod export;
pub mod geoanalysis;
pub mod graph;
pub mod grid;
pub mod metrics;
pub mod netbuild;
pub mod nullmodels;
pub mod pipeline;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{Adjacency, Edge, GeoGraph, GeoNode};
pub use grid::{GridCell, GridFormat, GridSeries, RegionMask, Units};
pub use metrics::{full_report, MetricsReport, TableRow};
pub use netbuild::{backbone_graph, calibrate_alpha, threshold_graph, ThresholdMode};
pub use nullmodels::{ensemble_metrics, er_analytics, small_world_test, CmWeights};
pub use pipeline::{run_pipeline, PipelineConfig};
pub use similarity::{similarity_matrix, Measure, MiSettings, SimilarityMatrix};
pub use synth::{generate_synthetic, SyntheticSpec};
