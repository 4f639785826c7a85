use std::collections::HashMap;

use nalgebra::{Matrix6, Rotation3, Vector3, Vector6};
use serde::Serialize;

use super::{Calibration, PipelineConfig, PipelineError, PoiEstimate, PoiReport};
use crate::correspond::{
    compute_shot, find_projective, match_features, nearest_candidates, overlap_registration, uniform_keypoints,
    voxel_downsample, Correspondence, FeatureCorrespondence, Observation, Registration, ShotDescriptor, SurfaceOverlap,
};
use crate::geometry::{
    bind_mesh, build_static_grid, spacing_for_point_count, DeformationState, RigidTransform, StaticGrid,
    TriangleMesh, TrilinearAnchor,
};
use crate::refmodel::{define_pois, select_reference, ModelLibrary, PoiDefinition, PoiSpec};
use crate::solver::{energy_breakdown, flip_flop_solve, CorrespondenceSet};
use crate::spatial::PointHash;
use crate::Real;

/// Per-frame summary kept in [`TrackerState::history`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub observed_points: usize,
    pub correspondences: usize,
    pub features: usize,
    pub mean_weight: f64,
    pub omega_r: f64,
    pub reregistered: bool,
    pub steps: usize,
    pub accepted_steps: usize,
    pub converged: bool,
    pub energy_start: f64,
    pub energy_end: f64,
}

/// Everything carried from one frame to the next.
#[derive(Debug, Clone)]
pub struct TrackerState<T: Real> {
    pub reference: usize,
    pub reference_name: String,
    pub mesh: TriangleMesh<T>,
    pub anchors: Vec<TrilinearAnchor<T>>,
    pub grid: StaticGrid<T>,
    pub state: DeformationState<T>,
    pub pois: Vec<PoiDefinition<T>>,
    /// Frames tracked so far.
    pub frames: usize,
    pub history: Vec<FrameDiagnostics>,
    pub poi_confidence: Vec<f64>,
    /// Inlier fraction of the most recent registration.
    pub inlier_fraction: f64,
    model_keypoints: Vec<usize>,
    model_descriptors: Vec<ShotDescriptor<T>>,
}

/// Features of one observation; `points` and `normals` are the
/// voxel-averaged cloud the keypoints index into.
struct ObservedFeatures<T: Real> {
    points: Vec<Vector3<T>>,
    normals: Vec<Vector3<T>>,
    keypoints: Vec<usize>,
    descriptors: Vec<ShotDescriptor<T>>,
}

fn observed_features<T: Real>(
    obs: &Observation<T>,
    cfg: &PipelineConfig,
    spacing: T,
) -> Result<ObservedFeatures<T>, PipelineError> {
    let (raw, raw_normals): (Vec<_>, Vec<_>) = obs.oriented_points().map(|(_, p, n)| (p, n)).unzip();
    let (points, normals) = voxel_downsample(&raw, &raw_normals, T::lit(cfg.features.voxel))?;
    let keypoints = uniform_keypoints(&points, spacing * T::lit(cfg.features.keypoint_spacing));
    let descriptors = compute_shot(&points, &normals, &keypoints, T::lit(cfg.features.shot_radius))?;
    Ok(ObservedFeatures {
        points,
        normals,
        keypoints,
        descriptors,
    })
}

fn resolve_spacing<T: Real>(mesh: &TriangleMesh<T>, cfg: &PipelineConfig) -> Result<T, PipelineError> {
    Ok(match cfg.grid.spacing {
        Some(s) => T::lit(s),
        None => spacing_for_point_count(mesh, cfg.grid.target_points, cfg.grid.margin_cells)?,
    })
}

/// Point-to-plane ICP on the global transform with a weak point-to-point
/// term that keeps tangential drift bounded. The field is left untouched.
fn refine_rigid<T: Real>(
    mesh: &TriangleMesh<T>,
    anchors: &[TrilinearAnchor<T>],
    state: &mut DeformationState<T>,
    obs: &Observation<T>,
    cfg: &PipelineConfig,
    d_max: T,
) {
    const POINT_WEIGHT: f64 = 0.1;
    for _ in 0..cfg.rigid_refine_iters {
        let corrs = find_projective(mesh, anchors, state, obs, &cfg.caps, d_max);
        if corrs.len() < 6 {
            return;
        }
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in &corrs {
            let p = c.model_point.map(|v| v.to_f64_lossy());
            let q = c.observed_point.map(|v| v.to_f64_lossy());
            let n = c.observed_normal.map(|v| v.to_f64_lossy());
            let w2 = c.weight.to_f64_lossy().powi(2);
            let mut add = |j: Vector6<f64>, r: f64, w: f64| {
                h += j * j.transpose() * w;
                g += j * (r * w);
            };
            let pn = p.cross(&n);
            add(Vector6::new(pn.x, pn.y, pn.z, n.x, n.y, n.z), n.dot(&(p - q)), w2);
            for a in 0..3 {
                let e = Vector3::ith(a, 1.0);
                let pe = p.cross(&e);
                add(Vector6::new(pe.x, pe.y, pe.z, e.x, e.y, e.z), p[a] - q[a], w2 * POINT_WEIGHT);
            }
        }
        let Some(chol) = h.cholesky() else { return };
        let xi = -chol.solve(&g);
        if !xi.iter().all(|v| v.is_finite()) {
            return;
        }
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let step = RigidTransform {
            rotation: Rotation3::new(omega).into_inner(),
            translation: Vector3::new(xi[3], xi[4], xi[5]),
        };
        state.global = step.cast::<T>().compose(&state.global);
        if omega.norm() < 1e-7 && step.translation.norm() < 1e-7 {
            return;
        }
    }
}

impl<T: Real> TrackerState<T> {
    pub fn spacing(&self) -> T {
        self.grid.spacing()
    }

    fn d_max(&self, cfg: &PipelineConfig) -> T {
        cfg.caps.d_max.map_or(self.spacing() * T::lit(2.0), T::lit)
    }

    /// Rigid alignment of the currently deformed model (field applied, global
    /// ignored) to the observation; replaces the global transform.
    fn register(&mut self, obs: &Observation<T>, feats: &ObservedFeatures<T>, cfg: &PipelineConfig) -> Result<Registration<T>, PipelineError> {
        let local: Vec<Vector3<T>> = self.anchors.iter().map(|a| self.state.local_point(a)).collect();
        let candidates = nearest_candidates(&self.model_descriptors, &feats.descriptors, cfg.features.candidates)?;
        let pairs: Vec<(usize, usize)> = candidates
            .iter()
            .map(|m| (self.model_keypoints[m.model], feats.keypoints[m.observed]))
            .collect();
        let inlier = cfg.ransac.inlier_distance.map_or(self.spacing() * T::lit(1.5), T::lit);
        let tolerance = T::lit(cfg.ransac.overlap_distance);
        let (surface, surface_normals) = voxel_downsample(&local, self.mesh.normals(), T::lit(cfg.features.voxel))?;
        let sample_spacing = T::lit(cfg.ransac.overlap_spacing);
        let surface_samples = uniform_keypoints(&surface, sample_spacing);
        let observed_samples = uniform_keypoints(&feats.points, sample_spacing);
        let overlap = SurfaceOverlap::new(
            (surface, surface_normals),
            surface_samples,
            (feats.points.clone(), feats.normals.clone()),
            observed_samples,
            tolerance,
            T::lit(cfg.ransac.max_normal_angle_deg.to_radians()),
        )?;
        let reg = overlap_registration(&local, &feats.points, &pairs, &cfg.ransac, inlier, &overlap).map_err(|source| {
            PipelineError::Registration {
                model_keypoints: self.model_keypoints.len(),
                observed_keypoints: feats.keypoints.len(),
                matches: pairs.len(),
                source,
            }
        })?;
        self.state.global = reg.transform;
        let d_max = self.d_max(cfg);
        refine_rigid(&self.mesh, &self.anchors, &mut self.state, obs, cfg, d_max);
        self.inlier_fraction = reg.inlier_fraction.to_f64_lossy();
        log::debug!(
            "registration: {} matches, inlier fraction {:.3}, {} hypotheses",
            pairs.len(),
            self.inlier_fraction,
            reg.hypotheses
        );
        Ok(reg)
    }

    fn feature_correspondences(
        &self,
        feats: &ObservedFeatures<T>,
        cfg: &PipelineConfig,
    ) -> Result<Vec<FeatureCorrespondence<T>>, PipelineError> {
        let matches = match_features(&self.model_descriptors, &feats.descriptors, T::lit(cfg.features.match_ratio))?;
        let gate = self.spacing() * T::lit(cfg.features.gate);
        Ok(matches
            .iter()
            .filter_map(|m| {
                let v = self.model_keypoints[m.model];
                let anchor = self.anchors[v];
                let observed_point = feats.points[feats.keypoints[m.observed]];
                ((self.state.deform(&anchor) - observed_point).norm() <= gate).then(|| FeatureCorrespondence {
                    vertex: v,
                    anchor,
                    model_point: self.mesh.vertices()[v],
                    observed_point,
                    descriptor_distance: m.distance,
                    weight: T::one(),
                })
            })
            .collect())
    }

    fn update_confidence(&mut self, corrs: &[Correspondence<T>]) {
        let mut cells: HashMap<[usize; 3], (f64, usize)> = HashMap::new();
        for c in corrs {
            let e = cells.entry(c.anchor.cell).or_default();
            e.0 += c.weight.to_f64_lossy();
            e.1 += 1;
        }
        self.poi_confidence = self
            .pois
            .iter()
            .map(|p| cells.get(&p.anchor.cell).map_or(0.0, |(s, n)| (s / *n as f64).clamp(0.0, 1.0)))
            .collect();
    }

    /// Estimates the deformation for one observation, warm-started from the
    /// previous state.
    pub fn track(&mut self, obs: &Observation<T>, cfg: &PipelineConfig) -> Result<FrameDiagnostics, PipelineError> {
        let frame = self.frames;
        self.frames += 1;
        let d_max = self.d_max(cfg);
        let observed_points = obs.valid_count();
        let mut diag = FrameDiagnostics {
            frame,
            observed_points,
            correspondences: 0,
            features: 0,
            mean_weight: 0.0,
            omega_r: 0.0,
            reregistered: false,
            steps: 0,
            accepted_steps: 0,
            converged: false,
            energy_start: 0.0,
            energy_end: 0.0,
        };

        let mean_weight = |c: &[Correspondence<T>]| {
            if c.is_empty() {
                0.0
            } else {
                c.iter().map(|c| c.weight.to_f64_lossy()).sum::<f64>() / c.len() as f64
            }
        };
        let mut corrs = find_projective(&self.mesh, &self.anchors, &self.state, obs, &cfg.caps, d_max);
        let needs_features = cfg.features.enabled || mean_weight(&corrs) < cfg.reregister_below;
        let feats = if needs_features && observed_points >= cfg.selection.min_points {
            Some(observed_features(obs, cfg, self.spacing())?)
        } else {
            None
        };
        if mean_weight(&corrs) < cfg.reregister_below {
            if let Some(f) = &feats {
                let before = self.state.global;
                match self.register(obs, f, cfg) {
                    Ok(_) => {
                        let again = find_projective(&self.mesh, &self.anchors, &self.state, obs, &cfg.caps, d_max);
                        if mean_weight(&again) > mean_weight(&corrs) {
                            corrs = again;
                            diag.reregistered = true;
                        } else {
                            self.state.global = before;
                        }
                    }
                    Err(e) => {
                        log::warn!("frame {frame}: re-registration failed: {e}");
                        self.state.global = before;
                    }
                }
            }
        }
        if corrs.is_empty() {
            log::warn!("frame {frame}: no correspondences, carrying the previous state");
            self.poi_confidence = vec![0.0; self.pois.len()];
            self.history.push(diag.clone());
            return Ok(diag);
        }

        let features = match (&feats, cfg.features.enabled) {
            (Some(f), true) => self.feature_correspondences(f, cfg)?,
            _ => Vec::new(),
        };
        let weights = cfg
            .weights
            .with_scaled_regularizer(cfg.regularizer_scale, corrs.len(), self.grid.len());
        diag.omega_r = weights.omega_r;
        diag.features = features.len();

        let (mesh, anchors, caps) = (&self.mesh, &self.anchors, &cfg.caps);
        let mut provider = |s: &DeformationState<T>| CorrespondenceSet {
            points: find_projective(mesh, anchors, s, obs, caps, d_max),
            features: features.clone(),
        };
        let start = CorrespondenceSet {
            points: corrs,
            features: features.clone(),
        };
        diag.energy_start = energy_breakdown(&start, &self.state, &self.grid, &weights, cfg.solver.regularizer).total;
        let report = flip_flop_solve(&mut provider, self.state.clone(), &self.grid, &weights, &cfg.solver)
            .map_err(|source| PipelineError::Solver { frame, source })?;
        self.state = report.state;
        diag.steps = report.steps.len();
        diag.accepted_steps = report.steps.iter().filter(|s| s.accepted).count();
        diag.converged = report.converged;
        if let Some(last) = report.steps.iter().rev().find(|s| s.accepted) {
            diag.energy_end = last.energy_after.total;
        } else {
            diag.energy_end = diag.energy_start;
        }

        let fin = find_projective(&self.mesh, &self.anchors, &self.state, obs, &cfg.caps, d_max);
        diag.correspondences = fin.len();
        diag.mean_weight = mean_weight(&fin);
        self.update_confidence(&fin);
        log::debug!("frame {frame}: {}", serde_json::to_string(&diag).unwrap_or_default());
        self.history.push(diag.clone());
        Ok(diag)
    }
}

/// Selects the reference, builds and binds the grid, registers the model to
/// the first observation and anchors the POIs. The returned state is
/// undeformed; track the first observation to refine it.
pub fn initialize<T: Real>(
    library: &ModelLibrary<T>,
    obs: &Observation<T>,
    pois: &[PoiSpec],
    cfg: &PipelineConfig,
) -> Result<TrackerState<T>, PipelineError> {
    cfg.validate()?;
    let (reference, costs) = select_reference(library, obs, &cfg.selection)?;
    log::debug!("reference selection costs: {:?}", costs.iter().map(|c| c.to_f64_lossy()).collect::<Vec<_>>());
    let entry = &library.entries()[reference];
    let mesh = entry.mesh.clone();
    let spacing = resolve_spacing(&mesh, cfg)?;
    let grid = build_static_grid(&mesh, spacing, cfg.grid.margin_cells)?;
    let anchors = bind_mesh(&mesh, &grid)?;
    let pois = define_pois(pois, &grid)?;
    let (cloud, cloud_normals) = voxel_downsample(mesh.vertices(), mesh.normals(), T::lit(cfg.features.voxel))?;
    let cloud_keypoints = uniform_keypoints(&cloud, spacing * T::lit(cfg.features.keypoint_spacing));
    let model_descriptors = compute_shot(&cloud, &cloud_normals, &cloud_keypoints, T::lit(cfg.features.shot_radius))?;
    // descriptors live on the averaged cloud; correspondences need vertices
    let vertices = PointHash::new(mesh.vertices().to_vec(), spacing);
    let model_keypoints = cloud_keypoints
        .iter()
        .map(|&k| vertices.nearest(&cloud[k]).map_or(0, |(v, _)| v))
        .collect();
    let state = DeformationState::rest(&grid, RigidTransform::identity());
    let mut tracker = TrackerState {
        reference,
        reference_name: entry.name.clone(),
        mesh,
        anchors,
        grid,
        state,
        poi_confidence: vec![0.0; pois.len()],
        pois,
        frames: 0,
        history: Vec::new(),
        inlier_fraction: 0.0,
        model_keypoints,
        model_descriptors,
    };
    let feats = observed_features(obs, cfg, spacing)?;
    tracker.register(obs, &feats, cfg)?;
    log::info!(
        "initialized on '{}' ({} vertices, {} gridpoints, spacing {:.4} m)",
        tracker.reference_name,
        tracker.mesh.len(),
        tracker.grid.len(),
        spacing.to_f64_lossy()
    );
    Ok(tracker)
}

/// Current POI positions in camera and end-effector coordinates.
pub fn localize_pois<T: Real>(tracker: &TrackerState<T>, calibration: &Calibration) -> PoiReport {
    let pois = tracker
        .pois
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let cam = tracker.state.deform(&p.anchor).map(|v| v.to_f64_lossy());
            let ee = calibration.camera_to_ee.apply(&cam);
            PoiEstimate {
                name: p.name.clone(),
                camera: cam.into(),
                end_effector: ee.into(),
                confidence: tracker.poi_confidence.get(i).copied().unwrap_or(0.0),
            }
        })
        .collect();
    PoiReport {
        frame: tracker.frames.saturating_sub(1),
        pois,
    }
}

/// Functional form of [`TrackerState::track`] followed by
/// [`localize_pois`].
pub fn track_frame<T: Real>(
    mut tracker: TrackerState<T>,
    obs: &Observation<T>,
    cfg: &PipelineConfig,
    calibration: &Calibration,
) -> Result<(TrackerState<T>, PoiReport), PipelineError> {
    tracker.track(obs, cfg)?;
    let report = localize_pois(&tracker, calibration);
    Ok((tracker, report))
}
