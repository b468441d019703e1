//! Config loading, the staged experiment pipeline and report / plot-data output
//! for horseshoe-lab.

pub mod config;
pub mod pipeline;
pub mod plot;

pub use config::{load_config, parse_config, parse_spec, read_spec, ExperimentSpec, ResolvedSpec, Stage};
pub use pipeline::{load_state, run_pipeline, Report, ReportBundle, State};
pub use plot::{emit_plotdata, PlotKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs `{missing}`; run it first or point --out-dir at its report")]
    Dependency { stage: String, missing: String },
    #[error("unknown plot kind `{kind}`; known kinds: {known}")]
    UnknownPlotKind { kind: String, known: String },
    #[error("report of stage `{stage}` has no `{kind}` series")]
    MissingSeries { kind: String, stage: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] horseshoe_lab::model::ModelError),
    #[error(transparent)]
    Dimension(#[from] horseshoe_lab::dimension::DimensionError),
    #[error(transparent)]
    Thermo(#[from] horseshoe_lab::thermo::ThermoError),
    #[error(transparent)]
    Marstrand(#[from] horseshoe_lab::marstrand::MarstrandError),
    #[error(transparent)]
    Stacking(#[from] horseshoe_lab::stacking::StackingError),
    #[error(transparent)]
    Geometry(#[from] horseshoe_lab::geometry::GeometryError),
}
