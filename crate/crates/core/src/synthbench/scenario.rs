use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::script::{DeformationScript, PointMap, Profile, ScriptKind};
use super::tripod::TripodSpec;
use super::{render_depth, SynthError};
use crate::geometry::{RigidTransform, TriangleMesh};
use crate::refmodel::{fuse_frames, CameraIntrinsics, DepthFrame, LibraryEntry, ModelLibrary, PoiSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// About 15000 reference vertices and 700 gridpoints.
    Coarse,
    /// About 30000 reference vertices and 3250 gridpoints.
    Fine,
}

impl Resolution {
    /// Fusion voxel of the demonstrated reference mesh.
    pub fn library_voxel(self) -> f64 {
        match self {
            Resolution::Coarse => 0.0015,
            Resolution::Fine => 0.00105,
        }
    }

    pub fn grid_points(self) -> usize {
        match self {
            Resolution::Coarse => 700,
            Resolution::Fine => 3250,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Coarse => "coarse",
            Resolution::Fine => "fine",
        }
    }
}

impl std::str::FromStr for Resolution {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s {
            "coarse" => Ok(Resolution::Coarse),
            "fine" => Ok(Resolution::Fine),
            _ => Err(SynthError::UnknownResolution(s.to_string())),
        }
    }
}

/// Everything needed to synthesize a tracking sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub tripod: TripodSpec,
    /// Voxel of the ground-truth surface used for rendering (m).
    pub truth_voxel: f64,
    pub frames: usize,
    /// Depth noise standard deviation (m).
    pub noise_sigma: f64,
    /// Camera distance above the hub (m).
    pub camera_distance: f64,
    /// Bounds of the random per-seed object pose offset.
    pub max_pose_angle_deg: f64,
    pub max_pose_offset: f64,
    pub intrinsics: CameraIntrinsics,
    pub scripts: Vec<DeformationScript>,
    pub pois: Vec<PoiSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::tripod()
    }
}

fn tripod_pois(t: &TripodSpec) -> Vec<PoiSpec> {
    // (arm, distance from hub, lateral offset)
    let layout: [(usize, f64, f64); 10] = [
        (0, 0.045, 0.004),
        (0, 0.07, -0.006),
        (0, 0.095, 0.0),
        (0, 0.115, 0.005),
        (1, 0.05, -0.004),
        (1, 0.075, 0.006),
        (1, 0.098, 0.0),
        (2, 0.045, 0.005),
        (2, 0.068, -0.005),
        (2, 0.088, 0.002),
    ];
    let mut count = [0usize; 3];
    layout
        .iter()
        .map(|&(arm, s, l)| {
            count[arm] += 1;
            PoiSpec {
                name: format!("arm{arm}_{}", count[arm]),
                position: t.top_point(arm, s, l).into(),
            }
        })
        .collect()
}

impl Scenario {
    /// Ten POIs on a tripod whose longest arm bends by 2.5 cm at its tip
    /// and swings back while a second arm twists, over 30 frames.
    pub fn tripod() -> Self {
        let tripod = TripodSpec::default();
        let a0 = tripod.arm_axis(0);
        let a1 = tripod.arm_axis(1);
        let scripts = vec![
            DeformationScript {
                kind: ScriptKind::Bend,
                amplitude: 0.2 * tripod.arm_lengths[0],
                origin: [0.0; 3],
                axis: a0.into(),
                direction: [0.0, 0.0, 1.0],
                start: 0.03,
                // the rounded tip, so no vertex moves further than the amplitude
                reach: tripod.arm_lengths[0] + tripod.half_width,
                width: 0.02,
                profile: Profile::Swing,
            },
            DeformationScript {
                kind: ScriptKind::Twist,
                amplitude: 20f64.to_radians(),
                origin: [0.0; 3],
                axis: a1.into(),
                direction: [0.0, 0.0, 1.0],
                start: 0.035,
                reach: tripod.arm_lengths[1],
                width: 0.02,
                profile: Profile::Ramp,
            },
        ];
        Self {
            name: "tripod".into(),
            pois: tripod_pois(&tripod),
            tripod,
            truth_voxel: 0.0008,
            frames: 30,
            noise_sigma: 0.0005,
            camera_distance: 0.45,
            max_pose_angle_deg: 10.0,
            max_pose_offset: 0.01,
            intrinsics: CameraIntrinsics {
                depth_scale: 0.00025,
                ..CameraIntrinsics::vga()
            },
            scripts,
        }
    }

    /// The tripod scenario with every script amplitude set to zero.
    pub fn tripod_static() -> Self {
        let mut s = Self::tripod();
        s.name = "tripod-static".into();
        for script in &mut s.scripts {
            script.amplitude = 0.0;
        }
        s
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "tripod" => Some(Self::tripod()),
            "tripod-static" => Some(Self::tripod_static()),
            _ => None,
        }
    }

    /// A built-in scenario name, else a JSON scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self, SynthError> {
        if let Some(s) = Self::named(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(SynthError::UnknownScenario(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let s: Self = serde_json::from_str(&text).map_err(|e| SynthError::Scenario(format!("{name_or_path}: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames == 0 {
            return Err(SynthError::Scenario("frames must be at least 1".into()));
        }
        let positive = [self.truth_voxel, self.camera_distance];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(SynthError::Scenario("truth_voxel and camera_distance must be positive".into()));
        }
        let nonneg = [self.noise_sigma, self.max_pose_angle_deg, self.max_pose_offset];
        if !nonneg.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(SynthError::Scenario("noise and pose bounds must be non-negative".into()));
        }
        self.intrinsics.validate()?;
        for s in &self.scripts {
            s.validate()?;
        }
        Ok(())
    }

    /// Model-to-camera pose looking straight down on the top face.
    pub fn nominal_pose(&self) -> RigidTransform<f64> {
        RigidTransform {
            rotation: Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            translation: Vector3::new(0.0, 0.0, self.camera_distance),
        }
    }

    /// Nominal pose perturbed by a random rotation about the tripod center
    /// (uniform axis, angle up to the bound) and a random offset.
    pub fn object_pose(&self, seed: u64) -> RigidTransform<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = loop {
            let v = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()).map(|x| 2.0 * x - 1.0);
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let angle = self.max_pose_angle_deg.to_radians() * rng.random::<f64>();
        let offset = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>())
            .map(|x| (2.0 * x - 1.0) * self.max_pose_offset);
        let (lo, hi) = self.tripod.bounds();
        let c = (lo + hi) * 0.5;
        let spin = RigidTransform::from_axis_angle(&axis, angle, Vector3::zeros());
        let about_center = RigidTransform::from_translation(c + offset)
            .compose(&spin)
            .compose(&RigidTransform::from_translation(-c));
        self.nominal_pose().compose(&about_center)
    }

    /// Camera-to-model poses of the demonstration: top, bottom and six
    /// oblique views, all aimed at the tripod center.
    pub fn demonstration_views(&self) -> Vec<RigidTransform<f64>> {
        let (lo, hi) = self.tripod.bounds();
        let target = (lo + hi) * 0.5;
        let d = self.camera_distance;
        let mut dirs = vec![Vector3::z(), -Vector3::z()];
        for k in 0..4 {
            let az = (45.0 + 90.0 * k as f64).to_radians();
            let el = 40f64.to_radians();
            dirs.push(Vector3::new(el.sin() * az.cos(), el.sin() * az.sin(), el.cos()));
        }
        for k in 0..2 {
            let az = (90.0 + 180.0 * k as f64).to_radians();
            let el = 45f64.to_radians();
            dirs.push(Vector3::new(el.sin() * az.cos(), el.sin() * az.sin(), -el.cos()));
        }
        dirs.iter().map(|dir| look_at(&(target + dir * d), &target)).collect()
    }

    /// Ground-truth surface at rest.
    pub fn truth_mesh(&self) -> Result<TriangleMesh<f64>, SynthError> {
        Ok(self.tripod.mesh(self.truth_voxel)?)
    }

    /// Reference library from fused noise-free demonstration views.
    pub fn demonstrate(&self, truth: &TriangleMesh<f64>, voxel: f64) -> Result<ModelLibrary<f64>, SynthError> {
        let frames: Vec<(DepthFrame, RigidTransform<f64>)> = self
            .demonstration_views()
            .into_iter()
            .map(|cam_to_model| (render_depth(truth, &cam_to_model.inverse(), &self.intrinsics, 0.0, 0), cam_to_model))
            .collect();
        let (lo, hi) = self.tripod.bounds();
        let pad = Vector3::repeat(0.01);
        let mesh = fuse_frames(&frames, &self.intrinsics, lo - pad, hi + pad, voxel, 3.0 * voxel)?;
        Ok(ModelLibrary::new(vec![LibraryEntry {
            name: "rest".into(),
            mesh,
        }])?)
    }

    /// Deformed ground-truth surface and point map at `frame`.
    pub fn deformed(&self, truth: &TriangleMesh<f64>, frame: usize) -> Result<(TriangleMesh<f64>, PointMap), SynthError> {
        super::apply_script(truth, &self.scripts, frame, self.frames)
    }

    /// Per-frame noise seed derived from the run seed.
    pub fn noise_seed(seed: u64, frame: usize) -> u64 {
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (frame as u64 + 1)
    }
}

/// Camera-to-world pose of a camera at `eye` looking at `target`, image
/// rows pointing away from world +z where possible.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> RigidTransform<f64> {
    let z = (target - eye).normalize();
    let up = if z.z.abs() > 0.9 { Vector3::y() } else { Vector3::z() };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    RigidTransform {
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: *eye,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::is_rotation;

    #[test]
    fn look_at_points_the_optical_axis() {
        for eye in [Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.3, -0.2, 0.1), Vector3::new(0.0, 0.0, -0.4)] {
            let t = look_at(&eye, &Vector3::zeros());
            assert!(is_rotation(&t.rotation, 1e-12));
            let target_cam = t.inverse().apply(&Vector3::zeros());
            assert!(target_cam.x.abs() < 1e-12 && target_cam.y.abs() < 1e-12);
            assert!((target_cam.z - eye.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn object_pose_is_bounded_and_seeded() {
        let s = Scenario::tripod();
        let nominal = s.nominal_pose();
        for seed in 0..20 {
            let p = s.object_pose(seed);
            assert!(nominal.rotation_angle_to(&p).to_degrees() <= 10.0 + 1e-9);
            assert_eq!(p, s.object_pose(seed));
        }
        assert_ne!(s.object_pose(1), s.object_pose(2));
    }

    #[test]
    fn pois_lie_on_the_top_faces() {
        let s = Scenario::tripod();
        assert_eq!(s.pois.len(), 10);
        for p in &s.pois {
            let v = Vector3::from(p.position);
            assert!(s.tripod.sdf(&v).abs() < 1e-12, "{}", p.name);
            assert!(v.z > 0.0);
        }
    }

    #[test]
    fn full_bend_moves_the_tip_by_a_fifth_of_the_arm() {
        let s = Scenario::tripod();
        let truth = s.truth_mesh().unwrap();
        let bend = s.scripts[0].at_factor(1.0);
        let peak = truth.vertices().iter().map(|p| (bend.apply(p) - p).norm()).fold(0.0, f64::max);
        assert!((peak - 0.025).abs() < 0.001, "{peak}");
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario::tripod();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(Scenario::resolve("no-such-scenario").is_err());
        assert!("medium".parse::<Resolution>().is_err());
    }
}
