//! Instance generation, split management and the cached experiment
//! pipeline.

mod cache;
mod config;
mod coverage;
mod dataset;
mod generators;
mod pipeline;
mod report;

pub use cache::{digest, Cache};
pub use config::{default_splits, parse_list, parse_search, ExperimentConfig, GenConfig, SplitSpec};
pub use coverage::{compute_coverage, Coverage};
pub use dataset::{generate_instances, ingest_external, prepare_dataset, size_of, Dataset, Source, MANIFEST};
pub use generators::InstanceGenerator;
pub use pipeline::{
    calibration_report, CoverageReport, InstanceOutcome, Pipeline, ReadyEncoder, SplitCoverage, Status, TrainedModel,
};
pub use report::{render_csv, render_svg, render_table, PLANNER_REF};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unsupported domain '{0}'")]
    UnsupportedDomain(String),
    #[error("config: {0}")]
    Config(String),
    #[error("expected outcomes for {expected} seeds, found {found}")]
    SeedMismatch { expected: usize, found: usize },
    #[error("no usable training instances")]
    NoTrainingData,
    #[error("{stage} failed for {problem}: {detail}")]
    Stage { stage: String, problem: String, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Cache(#[from] std::io::Error),
    #[error(transparent)]
    Pddl(#[from] crate::pddl::PddlError),
    #[error(transparent)]
    Manifest(#[from] crate::trajectory::ManifestError),
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
}
