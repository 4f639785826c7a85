//! Synthetic ground truth: a procedural three-armed object, a depth
//! renderer, scripted analytic deformations with exact inverses, and the
//! benchmark that scores the tracker against them.

mod bench;
mod render;
mod scenario;
mod script;
mod tripod;

pub use bench::{
    export_dataset, median, run_benchmark, run_with_fixture, BenchMetrics, BenchOptions, BenchRun, BenchTimings,
    Fixture,
};
pub use render::{render_depth, render_depth_meters};
pub use scenario::{look_at, Resolution, Scenario};
pub use script::{apply_script, DeformationScript, PointMap, Profile, ScriptKind, ScriptMap};
pub use tripod::TripodSpec;

use crate::correspond::CorrespondError;
use crate::geometry::GeometryError;
use crate::refmodel::RefModelError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid deformation script: {0}")]
    InvalidScript(&'static str),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("unknown scenario '{0}' (neither a built-in name nor an existing file)")]
    UnknownScenario(String),
    #[error("unknown resolution '{0}' (expected coarse or fine)")]
    UnknownResolution(String),
    #[error("{context}: {source}")]
    Pipeline {
        context: String,
        #[source]
        source: Box<crate::pipeline::PipelineError>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    RefModel(#[from] RefModelError),
    #[error(transparent)]
    Correspond(#[from] CorrespondError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
