//! Orchestration: reference initialization, the per-frame
//! observe / correspond / estimate loop, POI reports in camera and
//! end-effector coordinates, configuration and file formats.

mod config;
mod io;
mod tracker;

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use config::{FeatureConfig, GridConfig, InputPaths, PipelineConfig, TsdfConfig};
pub use io::{list_frames, read_report_lines, write_report_line};
pub use tracker::{initialize, localize_pois, track_frame, FrameDiagnostics, TrackerState};

use crate::correspond::CorrespondError;
use crate::geometry::{GeometryError, RigidTransform};
use crate::refmodel::RefModelError;
use crate::solver::SolverError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(
        "registration failed ({model_keypoints} model / {observed_keypoints} observed keypoints, \
         {matches} matches): {source}"
    )]
    Registration {
        model_keypoints: usize,
        observed_keypoints: usize,
        matches: usize,
        #[source]
        source: CorrespondError,
    },
    #[error("frame {frame}: {source}")]
    Solver {
        frame: usize,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    RefModel(#[from] RefModelError),
    #[error(transparent)]
    Correspond(#[from] CorrespondError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Hand-eye calibration: maps camera coordinates into the robot
/// end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Calibration {
    pub camera_to_ee: RigidTransform<f64>,
}

/// File form of [`Calibration`]: a row-major rotation and a translation (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Calibration {
    pub fn from_file(f: &CalibrationFile) -> Result<Self, GeometryError> {
        let r = Matrix3::from_fn(|i, j| f.rotation[i][j]);
        Ok(Self {
            camera_to_ee: RigidTransform::new(r, Vector3::from(f.translation))?,
        })
    }

    pub fn to_file(&self) -> CalibrationFile {
        let r = self.camera_to_ee.rotation;
        CalibrationFile {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: self.camera_to_ee.translation.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file(&file).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(&self.to_file()).expect("plain data serializes");
        std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiEstimate {
    pub name: String,
    pub camera: [f64; 3],
    pub end_effector: [f64; 3],
    /// Mean correspondence weight inside the POI's grid cell; 0 without
    /// support.
    pub confidence: f64,
}

/// One line of the tracking output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiReport {
    pub frame: usize,
    pub pois: Vec<PoiEstimate>,
}

impl PoiReport {
    pub fn position(&self, name: &str) -> Option<Vector3<f64>> {
        self.pois.iter().find(|p| p.name == name).map(|p| Vector3::from(p.camera))
    }
}
