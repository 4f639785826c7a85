use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::Deserialize;

use deformtrack::correspond::{make_observation_with, Observation};
use deformtrack::geometry::{build_static_grid, ply, spacing_for_point_count, TriangleMesh};
use deformtrack::pipeline::{initialize, list_frames, localize_pois, write_report_line, Calibration, CalibrationFile, PipelineConfig};
use deformtrack::refmodel::{
    define_pois, fuse_frames, load_library, load_poi_file, observed_bounds, save_library, save_poi_file, DepthFrame,
    LibraryEntry, ModelLibrary,
};
use deformtrack::synthbench::{export_dataset, run_with_fixture, BenchOptions, Fixture, Resolution, Scenario};

#[derive(Parser)]
#[command(name = "deformtrack", version, about = "Track points of interest on deformable objects from depth frames")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResolutionArg {
    Coarse,
    Fine,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse posed depth frames into a reference mesh.
    Demonstrate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding `poses.json` and the depth frames it lists.
        #[arg(long)]
        frames: PathBuf,
        /// Output mesh (ASCII PLY).
        #[arg(long)]
        out: PathBuf,
        /// Library manifest to add the mesh to (created if missing).
        #[arg(long)]
        library: Option<PathBuf>,
        /// Library entry name.
        #[arg(long, default_value = "demonstration")]
        name: String,
    },
    /// Check a POI file against the deformation grid of a mesh.
    Annotate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        /// Validated POI file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track POIs through a directory of depth frames.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        pois: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Report output (JSON lines, one record per frame).
        #[arg(long)]
        out: PathBuf,
        /// Directory receiving `frame_%06d.ply` deformed meshes.
        #[arg(long)]
        dump_meshes: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the synthetic benchmark.
    Bench {
        /// Built-in scenario name (`tripod`, `tripod-static`) or JSON file.
        #[arg(long, default_value = "tripod")]
        scenario: String,
        #[arg(long, value_enum, default_value = "coarse")]
        resolution: ResolutionArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of frames to run (defaults to the scenario length).
        #[arg(long)]
        frames: Option<usize>,
        /// Pipeline configuration overriding the benchmark defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metrics JSON; wall times go to `<stem>.timing.json` beside it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-frame error and timing CSV files.
        #[arg(long)]
        emit_plots: Option<PathBuf>,
        /// Write the rendered sequence as a tracking dataset and exit.
        #[arg(long)]
        export_dataset: Option<PathBuf>,
    },
}

type CliResult<T> = Result<T, String>;

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(PipelineConfig::default()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PosedFrame {
    depth: PathBuf,
    /// Camera-to-model pose.
    pose: CalibrationFile,
}

fn demonstrate(config: Option<&Path>, frames: &Path, out: &Path, library: Option<&Path>, name: &str) -> CliResult<()> {
    let cfg = load_config(config)?;
    let poses_path = frames.join("poses.json");
    let text = std::fs::read_to_string(&poses_path).map_err(|e| format!("{}: {e}", poses_path.display()))?;
    let list: Vec<PosedFrame> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", poses_path.display()))?;
    if list.is_empty() {
        return Err(format!("{}: no frames listed", poses_path.display()));
    }
    let mut posed = Vec::with_capacity(list.len());
    for f in &list {
        let path = frames.join(&f.depth);
        let depth = DepthFrame::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        depth.check_dims(&cfg.intrinsics).map_err(|e| format!("{}: {e}", path.display()))?;
        let pose = Calibration::from_file(&f.pose)
            .map_err(|e| format!("{}: pose of {}: {e}", poses_path.display(), f.depth.display()))?
            .camera_to_ee;
        posed.push((depth, pose));
    }
    let (lo, hi) = observed_bounds(&posed, &cfg.intrinsics).ok_or("demonstration frames contain no valid depth")?;
    let pad = Vector3::repeat(2.0 * cfg.tsdf.truncation);
    let mesh = fuse_frames(&posed, &cfg.intrinsics, lo - pad, hi + pad, cfg.tsdf.voxel_size, cfg.tsdf.truncation)
        .map_err(|e| e.to_string())?;
    ply::save_ply(&mesh, out).map_err(|e| format!("{}: {e}", out.display()))?;
    log::info!("fused {} frames into {} vertices", posed.len(), mesh.len());
    if let Some(manifest) = library {
        let mut entries = if manifest.exists() {
            load_library::<f64>(manifest).map_err(|e| e.to_string())?.entries().to_vec()
        } else {
            Vec::new()
        };
        entries.retain(|e| e.name != name);
        entries.push(LibraryEntry {
            name: name.to_string(),
            mesh,
        });
        let lib = ModelLibrary::new(entries).map_err(|e| e.to_string())?;
        save_library(&lib, manifest).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn annotate(config: Option<&Path>, mesh: &Path, pois: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    let mesh: TriangleMesh<f64> = ply::load_ply(mesh).map_err(|e| format!("{}: {e}", mesh.display()))?;
    let specs = load_poi_file(pois).map_err(|e| format!("{}: {e}", pois.display()))?;
    let spacing = match cfg.grid.spacing {
        Some(s) => s,
        None => spacing_for_point_count(&mesh, cfg.grid.target_points, cfg.grid.margin_cells).map_err(|e| e.to_string())?,
    };
    let grid = build_static_grid(&mesh, spacing, cfg.grid.margin_cells).map_err(|e| e.to_string())?;
    define_pois(&specs, &grid).map_err(|e| e.to_string())?;
    save_poi_file(&specs, out).map_err(|e| format!("{}: {e}", out.display()))?;
    Ok(())
}

struct TrackArgs<'a> {
    config: Option<&'a Path>,
    frames: &'a Path,
    library: Option<&'a Path>,
    pois: Option<&'a Path>,
    calibration: Option<&'a Path>,
    out: &'a Path,
    dump_meshes: Option<&'a Path>,
    seed: Option<u64>,
}

fn track(args: TrackArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.ransac.seed = seed;
    }
    let library_path = args
        .library
        .map(Path::to_path_buf)
        .or(cfg.inputs.library.clone())
        .ok_or("no library given (--library or inputs.library in the configuration)")?;
    let poi_path = args
        .pois
        .map(Path::to_path_buf)
        .or(cfg.inputs.pois.clone())
        .ok_or("no POI file given (--pois or inputs.pois in the configuration)")?;
    let calibration = match args.calibration.map(Path::to_path_buf).or(cfg.inputs.calibration.clone()) {
        Some(p) => Calibration::load(&p).map_err(|e| e.to_string())?,
        None => Calibration::default(),
    };
    let library = load_library::<f64>(&library_path).map_err(|e| format!("{}: {e}", library_path.display()))?;
    let specs = load_poi_file(&poi_path).map_err(|e| format!("{}: {e}", poi_path.display()))?;
    let frames = list_frames(args.frames).map_err(|e| e.to_string())?;
    if let Some(dir) = args.dump_meshes {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let mut out = create(args.out)?;
    let mut tracker = None;
    for (k, path) in frames.iter().enumerate() {
        let depth = DepthFrame::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        depth.check_dims(&cfg.intrinsics).map_err(|e| format!("{}: {e}", path.display()))?;
        let obs: Observation<f64> =
            make_observation_with(&depth, &cfg.intrinsics, &cfg.observation).map_err(|e| format!("{}: {e}", path.display()))?;
        let t = match tracker.as_mut() {
            Some(t) => t,
            None => tracker.insert(initialize(&library, &obs, &specs, &cfg).map_err(|e| format!("{}: {e}", path.display()))?),
        };
        t.track(&obs, &cfg).map_err(|e| format!("{}: {e}", path.display()))?;
        let report = localize_pois(t, &calibration);
        write_report_line(&mut out, &report).map_err(|e| format!("{}: {e}", args.out.display()))?;
        if let Some(dir) = args.dump_meshes {
            let vertices = t.anchors.iter().map(|a| t.state.deform(a)).collect();
            let mesh = t.mesh.with_vertices(vertices).map_err(|e| e.to_string())?;
            let p = dir.join(format!("frame_{k:06}.ply"));
            ply::save_ply(&mesh, &p).map_err(|e| format!("{}: {e}", p.display()))?;
        }
    }
    out.flush().map_err(|e| format!("{}: {e}", args.out.display()))?;
    Ok(())
}

struct BenchArgs<'a> {
    scenario: &'a str,
    resolution: Resolution,
    seed: u64,
    frames: Option<usize>,
    config: Option<&'a Path>,
    out: Option<&'a Path>,
    emit_plots: Option<&'a Path>,
    export: Option<&'a Path>,
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let scenario = Scenario::resolve(args.scenario).map_err(|e| e.to_string())?;
    let fixture = Fixture::prepare(&scenario, args.resolution).map_err(|e| e.to_string())?;
    if let Some(dir) = args.export {
        return export_dataset(&fixture, args.seed, args.frames, dir).map_err(|e| format!("{}: {e}", dir.display()));
    }
    let pipeline = match args.config {
        Some(p) => Some(PipelineConfig::load(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let options = BenchOptions {
        seed: args.seed,
        frames: args.frames,
        pipeline,
    };
    let run = run_with_fixture(&fixture, &options).map_err(|e| e.to_string())?;
    let m = &run.metrics;
    let json = serde_json::to_string_pretty(m).map_err(|e| e.to_string())?;
    let timing = serde_json::to_string_pretty(&m.timings()).map_err(|e| e.to_string())?;
    match args.out {
        Some(p) => {
            std::fs::write(p, &json).map_err(|e| format!("{}: {e}", p.display()))?;
            let tp = p.with_extension("timing.json");
            std::fs::write(&tp, &timing).map_err(|e| format!("{}: {e}", tp.display()))?;
        }
        None => println!("{json}"),
    }
    if let Some(dir) = args.emit_plots {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        std::fs::write(dir.join("errors.csv"), m.error_csv()).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("timing.csv"), m.timing_csv()).map_err(|e| e.to_string())?;
    }
    let t = m.timings();
    eprintln!(
        "{} {}: median localization {:.3} mm, worst tracking RMS {:.3} mm, worst max {:.3} mm, max frame {:.3} s",
        m.scenario,
        m.resolution.as_str(),
        1e3 * m.median_localization_error,
        1e3 * m.tracking_rms.iter().copied().fold(0.0, f64::max),
        1e3 * m.tracking_max.iter().copied().fold(0.0, f64::max),
        t.max_seconds
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Demonstrate {
            config,
            frames,
            out,
            library,
            name,
        } => demonstrate(config.as_deref(), frames, out, library.as_deref(), name),
        Command::Annotate { config, mesh, pois, out } => annotate(config.as_deref(), mesh, pois, out),
        Command::Track {
            config,
            frames,
            library,
            pois,
            calibration,
            out,
            dump_meshes,
            seed,
        } => track(TrackArgs {
            config: config.as_deref(),
            frames,
            library: library.as_deref(),
            pois: pois.as_deref(),
            calibration: calibration.as_deref(),
            out,
            dump_meshes: dump_meshes.as_deref(),
            seed: *seed,
        }),
        Command::Bench {
            scenario,
            resolution,
            seed,
            frames,
            config,
            out,
            emit_plots,
            export_dataset,
        } => bench(BenchArgs {
            scenario,
            resolution: match resolution {
                ResolutionArg::Coarse => Resolution::Coarse,
                ResolutionArg::Fine => Resolution::Fine,
            },
            seed: *seed,
            frames: *frames,
            config: config.as_deref(),
            out: out.as_deref(),
            emit_plots: emit_plots.as_deref(),
            export: export_dataset.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEFORMTRACK_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
