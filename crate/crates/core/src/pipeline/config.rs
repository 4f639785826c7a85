use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::correspond::{ObservationConfig, RansacConfig, WeightCaps};
use crate::refmodel::{CameraIntrinsics, SelectionConfig};
use crate::solver::{EnergyWeights, SolverConfig};

/// Deformation grid resolution. An explicit `spacing` wins over
/// `target_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub spacing: Option<f64>,
    pub target_points: usize,
    pub margin_cells: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            spacing: None,
            target_points: 700,
            margin_cells: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    pub truncation: f64,
}

impl Default for TsdfConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.0015,
            truncation: 0.0045,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Feature correspondences during tracking; registration always uses
    /// descriptors.
    pub enabled: bool,
    /// SHOT support radius (m).
    pub shot_radius: f64,
    /// Both clouds are averaged on cubes of this edge (m) before keypoint
    /// selection and description.
    pub voxel: f64,
    /// Keypoint spacing as a multiple of the grid spacing.
    pub keypoint_spacing: f64,
    pub match_ratio: f64,
    /// Tracking features whose current model point lies farther than this
    /// multiple of the grid spacing from the observed point are dropped.
    pub gate: f64,
    /// Nearest model descriptors per observed keypoint offered to
    /// registration.
    pub candidates: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            shot_radius: 0.04,
            voxel: 0.0025,
            keypoint_spacing: 0.5,
            match_ratio: 0.9,
            gate: 1.0,
            candidates: 5,
        }
    }
}

/// Files referenced by a configuration; relative paths resolve against the
/// configuration file's directory. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub library: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub grid: GridConfig,
    pub tsdf: TsdfConfig,
    pub observation: ObservationConfig,
    pub selection: SelectionConfig,
    pub caps: WeightCaps,
    pub features: FeatureConfig,
    pub ransac: RansacConfig,
    /// Point-to-plane ICP iterations polishing the registration.
    pub rigid_refine_iters: usize,
    pub weights: EnergyWeights,
    /// `ω_r = regularizer_scale · correspondences / gridpoints`, per frame.
    pub regularizer_scale: f64,
    pub solver: SolverConfig,
    /// Re-run registration when the mean correspondence weight of the
    /// warm-started state drops below this.
    pub reregister_below: f64,
    pub seed: u64,
    pub inputs: InputPaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::vga(),
            grid: GridConfig::default(),
            tsdf: TsdfConfig::default(),
            observation: ObservationConfig::default(),
            selection: SelectionConfig::default(),
            caps: WeightCaps::default(),
            features: FeatureConfig::default(),
            ransac: RansacConfig::default(),
            rigid_refine_iters: 10,
            // point-to-point held at 10: lower values let the model slide
            // along flat regions where point-to-plane gives no grip
            weights: EnergyWeights {
                omega_p: 10.0,
                ..EnergyWeights::default()
            },
            regularizer_scale: 5.0,
            solver: SolverConfig::default(),
            reregister_below: 0.2,
            seed: 0,
            inputs: InputPaths::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<(), PipelineError> {
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Config(msg.to_string()))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.intrinsics.validate()?;
        self.weights.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.solver.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(s) = self.grid.spacing {
            check(positive(s), "grid.spacing must be positive")?;
        } else {
            check(self.grid.target_points >= 8, "grid.target_points must be at least 8")?;
        }
        check(positive(self.tsdf.voxel_size), "tsdf.voxel_size must be positive")?;
        check(self.tsdf.truncation >= self.tsdf.voxel_size, "tsdf.truncation must be at least one voxel")?;
        check(positive(self.features.shot_radius), "features.shot_radius must be positive")?;
        check(positive(self.features.keypoint_spacing), "features.keypoint_spacing must be positive")?;
        check(
            self.features.match_ratio > 0.0 && self.features.match_ratio <= 1.0,
            "features.match_ratio must lie in (0, 1]",
        )?;
        check(positive(self.features.gate), "features.gate must be positive")?;
        check(positive(self.features.voxel), "features.voxel must be positive")?;
        check(self.features.candidates > 0, "features.candidates must be positive")?;
        check(self.caps.n_max > 0.0, "caps.n_max must be positive")?;
        check(self.caps.d_max.is_none_or(positive), "caps.d_max must be positive")?;
        check((0.0..1.0).contains(&self.caps.min_weight), "caps.min_weight must lie in [0, 1)")?;
        check(positive(self.regularizer_scale), "regularizer_scale must be positive")?;
        check((0.0..=1.0).contains(&self.reregister_below), "reregister_below must lie in [0, 1]")?;
        check(self.ransac.max_iterations > 0, "ransac.max_iterations must be positive")?;
        check(positive(self.ransac.overlap_distance), "ransac.overlap_distance must be positive")?;
        check(positive(self.ransac.overlap_spacing), "ransac.overlap_spacing must be positive")?;
        check(
            (0.0..=180.0).contains(&self.ransac.max_normal_angle_deg),
            "ransac.max_normal_angle_deg must lie in [0, 180]",
        )?;
        Ok(())
    }

    /// Reads and validates a JSON configuration. Unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.inputs.library, &mut cfg.inputs.pois, &mut cfg.inputs.calibration]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"grid": {"spacing": 0.02}}"#).is_ok());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"gird": {}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"grid": {"spacnig": 0.02}}"#).is_err());
    }

    #[test]
    fn relative_inputs_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"inputs": {"library": "lib/manifest.json"}}"#).unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.inputs.library.unwrap(), dir.path().join("lib/manifest.json"));
        std::fs::write(&path, r#"{"tsdf": {"voxel_size": -1.0}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(PipelineError::Config(_))));
    }
}
