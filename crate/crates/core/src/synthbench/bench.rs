use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scenario::{Resolution, Scenario};
use super::script::PointMap;
use super::{render_depth, SynthError};
use crate::correspond::{make_observation_with, Observation};
use crate::geometry::{RigidTransform, TriangleMesh};
use crate::pipeline::{initialize, localize_pois, Calibration, InputPaths, PipelineConfig, PoiEstimate, PoiReport};
use crate::refmodel::{save_library, save_poi_file, DepthFrame, ModelLibrary};

/// Ground truth and reference library shared by runs of one scenario at one
/// resolution.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub scenario: Scenario,
    pub resolution: Resolution,
    pub truth: TriangleMesh<f64>,
    pub library: ModelLibrary<f64>,
}

impl Fixture {
    pub fn prepare(scenario: &Scenario, resolution: Resolution) -> Result<Self, SynthError> {
        scenario.validate()?;
        let truth = scenario.truth_mesh()?;
        let library = scenario.demonstrate(&truth, resolution.library_voxel())?;
        Ok(Self {
            scenario: scenario.clone(),
            resolution,
            truth,
            library,
        })
    }

    /// Pipeline defaults for this scenario and resolution.
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            intrinsics: self.scenario.intrinsics,
            seed,
            ..PipelineConfig::default()
        };
        cfg.grid.target_points = self.resolution.grid_points();
        cfg.tsdf.voxel_size = self.resolution.library_voxel();
        cfg.tsdf.truncation = 3.0 * self.resolution.library_voxel();
        cfg.ransac.seed = seed;
        cfg
    }

    /// Rendered depth of `frame` plus its ground-truth map.
    pub fn render(&self, pose: &RigidTransform<f64>, frame: usize, seed: u64) -> Result<(DepthFrame, PointMap), SynthError> {
        let (mesh, map) = self.scenario.deformed(&self.truth, frame)?;
        let depth = render_depth(
            &mesh,
            pose,
            &self.scenario.intrinsics,
            self.scenario.noise_sigma,
            Scenario::noise_seed(seed, frame),
        );
        Ok((depth, map))
    }

    /// Camera-frame ground-truth POI positions at `frame`.
    pub fn truth_pois(&self, pose: &RigidTransform<f64>, map: &PointMap) -> Vec<Vector3<f64>> {
        self.scenario
            .pois
            .iter()
            .map(|p| pose.apply(&map.apply(&Vector3::from(p.position))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchOptions {
    pub seed: u64,
    /// Limit on the number of frames (defaults to the scenario length).
    pub frames: Option<usize>,
    /// Overrides [`Fixture::pipeline_config`].
    pub pipeline: Option<PipelineConfig>,
}

/// Precision and data-association statistics of one run. Wall times are
/// kept out of the serialized form so that equal seeds give byte-identical
/// JSON; see [`BenchMetrics::frame_seconds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMetrics {
    pub scenario: String,
    pub resolution: Resolution,
    pub seed: u64,
    pub frames: usize,
    pub noise_sigma: f64,
    pub reference_vertices: usize,
    pub gridpoints: usize,
    pub poi_names: Vec<String>,
    /// Per-POI error (m) on the first, undeformed frame.
    pub localization_error: Vec<f64>,
    pub median_localization_error: f64,
    /// `[frame - 1][poi]` error (m) on the remaining frames.
    pub tracking_error: Vec<Vec<f64>>,
    pub tracking_rms: Vec<f64>,
    pub tracking_max: Vec<f64>,
    /// Largest amount (m) by which a reported POI moved farther between two
    /// consecutive frames than its ground truth did.
    pub max_jump_excess: f64,
    pub correspondences: Vec<usize>,
    pub features: Vec<usize>,
    pub mean_weight: Vec<f64>,
    pub inlier_fraction: f64,
    pub reregistrations: usize,
    #[serde(skip)]
    pub frame_seconds: Vec<f64>,
}

/// Wall-time companion of [`BenchMetrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTimings {
    pub frame_seconds: Vec<f64>,
    pub max_seconds: f64,
    pub mean_seconds: f64,
}

impl BenchMetrics {
    pub fn timings(&self) -> BenchTimings {
        let n = self.frame_seconds.len().max(1) as f64;
        BenchTimings {
            frame_seconds: self.frame_seconds.clone(),
            max_seconds: self.frame_seconds.iter().copied().fold(0.0, f64::max),
            mean_seconds: self.frame_seconds.iter().sum::<f64>() / n,
        }
    }

    /// Per-frame errors as CSV: `frame,<poi>...` with the localization
    /// frame first.
    pub fn error_csv(&self) -> String {
        let mut s = format!("frame,{}\n", self.poi_names.join(","));
        let rows = std::iter::once(&self.localization_error).chain(&self.tracking_error);
        for (f, row) in rows.enumerate() {
            let cells: Vec<String> = row.iter().map(|e| format!("{e:.9}")).collect();
            s.push_str(&format!("{f},{}\n", cells.join(",")));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("frame,seconds\n");
        for (f, t) in self.frame_seconds.iter().enumerate() {
            s.push_str(&format!("{f},{t:.6}\n"));
        }
        s
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Output of [`run_with_fixture`]: the metrics plus every report.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub metrics: BenchMetrics,
    pub reports: Vec<PoiReport>,
}

fn errors(report: &PoiReport, truth: &[Vector3<f64>]) -> Vec<f64> {
    report
        .pois
        .iter()
        .zip(truth)
        .map(|(p, t)| (Vector3::from(p.camera) - t).norm())
        .collect()
}

/// Renders the scenario, runs the tracker on every frame and scores it.
/// Timing covers observation preprocessing, initialization and tracking;
/// rendering is excluded.
pub fn run_with_fixture(fixture: &Fixture, options: &BenchOptions) -> Result<BenchRun, SynthError> {
    let scenario = &fixture.scenario;
    let cfg = options.pipeline.clone().unwrap_or_else(|| fixture.pipeline_config(options.seed));
    let frames = options.frames.unwrap_or(scenario.frames).clamp(1, scenario.frames);
    let pose = scenario.object_pose(options.seed);
    let calibration = Calibration::default();

    let mut tracker = None;
    let mut reports = Vec::with_capacity(frames);
    let mut truths = Vec::with_capacity(frames);
    let mut frame_seconds = Vec::with_capacity(frames);
    for k in 0..frames {
        let (depth, map) = fixture.render(&pose, k, options.seed)?;
        truths.push(fixture.truth_pois(&pose, &map));
        let clock = Instant::now();
        let obs: Observation<f64> = make_observation_with(&depth, &cfg.intrinsics, &cfg.observation)?;
        let t = match tracker.as_mut() {
            Some(t) => t,
            None => tracker.insert(initialize(&fixture.library, &obs, &scenario.pois, &cfg).map_err(|e| {
                SynthError::Pipeline {
                    context: format!("scenario '{}' seed {} frame {k}", scenario.name, options.seed),
                    source: Box::new(e),
                }
            })?),
        };
        t.track(&obs, &cfg).map_err(|e| SynthError::Pipeline {
            context: format!("scenario '{}' seed {} frame {k}", scenario.name, options.seed),
            source: Box::new(e),
        })?;
        reports.push(localize_pois(t, &calibration));
        frame_seconds.push(clock.elapsed().as_secs_f64());
    }
    let tracker = tracker.expect("at least one frame");

    let localization_error = errors(&reports[0], &truths[0]);
    let tracking_error: Vec<Vec<f64>> = reports[1..].iter().zip(&truths[1..]).map(|(r, t)| errors(r, t)).collect();
    let npoi = scenario.pois.len();
    let (tracking_rms, tracking_max) = if tracking_error.is_empty() {
        (vec![0.0; npoi], vec![0.0; npoi])
    } else {
        let n = tracking_error.len() as f64;
        (
            (0..npoi)
                .map(|i| (tracking_error.iter().map(|r| r[i] * r[i]).sum::<f64>() / n).sqrt())
                .collect(),
            (0..npoi).map(|i| tracking_error.iter().map(|r| r[i]).fold(0.0, f64::max)).collect(),
        )
    };
    let mut max_jump_excess = 0.0f64;
    for k in 1..frames {
        for i in 0..npoi {
            let moved = (Vector3::from(reports[k].pois[i].camera) - Vector3::from(reports[k - 1].pois[i].camera)).norm();
            let truth = (truths[k][i] - truths[k - 1][i]).norm();
            max_jump_excess = max_jump_excess.max(moved - truth);
        }
    }

    let metrics = BenchMetrics {
        scenario: scenario.name.clone(),
        resolution: fixture.resolution,
        seed: options.seed,
        frames,
        noise_sigma: scenario.noise_sigma,
        reference_vertices: tracker.mesh.len(),
        gridpoints: tracker.grid.len(),
        poi_names: scenario.pois.iter().map(|p| p.name.clone()).collect(),
        median_localization_error: median(&localization_error),
        localization_error,
        tracking_error,
        tracking_rms,
        tracking_max,
        max_jump_excess,
        correspondences: tracker.history.iter().map(|d| d.correspondences).collect(),
        features: tracker.history.iter().map(|d| d.features).collect(),
        mean_weight: tracker.history.iter().map(|d| d.mean_weight).collect(),
        inlier_fraction: tracker.inlier_fraction,
        reregistrations: tracker.history.iter().filter(|d| d.reregistered).count(),
        frame_seconds,
    };
    Ok(BenchRun { metrics, reports })
}

/// [`Fixture::prepare`] followed by [`run_with_fixture`].
pub fn run_benchmark(scenario: &Scenario, resolution: Resolution, options: &BenchOptions) -> Result<BenchRun, SynthError> {
    let fixture = Fixture::prepare(scenario, resolution)?;
    run_with_fixture(&fixture, options)
}

/// Writes a self-contained tracking dataset: library, POI file, depth
/// frames, configuration, identity calibration and ground-truth POI
/// positions (JSON lines, one per frame).
pub fn export_dataset(fixture: &Fixture, seed: u64, frames: Option<usize>, dir: &Path) -> Result<(), SynthError> {
    let scenario = &fixture.scenario;
    let frames = frames.unwrap_or(scenario.frames).clamp(1, scenario.frames);
    std::fs::create_dir_all(dir.join("library"))?;
    std::fs::create_dir_all(dir.join("frames"))?;
    save_library(&fixture.library, &dir.join("library/manifest.json"))?;
    save_poi_file(&scenario.pois, &dir.join("pois.json"))?;
    Calibration::default()
        .save(&dir.join("calibration.json"))
        .map_err(|e| SynthError::Pipeline {
            context: "dataset export".into(),
            source: Box::new(e),
        })?;
    let mut cfg = fixture.pipeline_config(seed);
    cfg.inputs = InputPaths {
        library: Some("library/manifest.json".into()),
        pois: Some("pois.json".into()),
        calibration: Some("calibration.json".into()),
    };
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;

    let pose = scenario.object_pose(seed);
    let mut truth = String::new();
    for k in 0..frames {
        let (depth, map) = fixture.render(&pose, k, seed)?;
        depth.save(&dir.join(format!("frames/frame_{k:06}.pgm")))?;
        let report = PoiReport {
            frame: k,
            pois: scenario
                .pois
                .iter()
                .zip(fixture.truth_pois(&pose, &map))
                .map(|(p, t)| PoiEstimate {
                    name: p.name.clone(),
                    camera: t.into(),
                    end_effector: t.into(),
                    confidence: 1.0,
                })
                .collect(),
        };
        truth.push_str(&serde_json::to_string(&report)?);
        truth.push('\n');
    }
    std::fs::write(dir.join("ground_truth.jsonl"), truth)?;
    Ok(())
}
