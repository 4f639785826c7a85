//! Offline demonstration: depth fusion into a TSDF, Marching Cubes surface
//! extraction, the library of reference meshes, and POI anchoring.

mod camera;
mod depth;
mod library;
mod marching_cubes;
mod mc_tables;
mod poi;
mod tsdf;

use nalgebra::Vector3;

pub use camera::CameraIntrinsics;
pub use depth::DepthFrame;
pub use library::{
    load_library, save_library, select_reference, LibraryEntry, ManifestEntry, ModelLibrary, SelectionConfig,
};
pub use marching_cubes::extract_mesh;
pub use poi::{define_poi, define_pois, load_poi_file, save_poi_file, PoiDefinition, PoiSpec};
pub use tsdf::{tsdf_integrate, TsdfVolume, DEFAULT_MAX_WEIGHT};

use crate::geometry::{GeometryError, RigidTransform, TriangleMesh};
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum RefModelError {
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("depth frame is {frame:?} but intrinsics expect {intrinsics:?}")]
    DimensionMismatch {
        frame: (usize, usize),
        intrinsics: (usize, usize),
    },
    #[error("camera pose is not a finite rigid transform")]
    InvalidPose,
    #[error("invalid TSDF volume: {0}")]
    InvalidVolume(&'static str),
    #[error("volume holds no observed zero crossing")]
    NoSurface,
    #[error("malformed PGM depth frame: {0}")]
    Pgm(String),
    #[error("model library is empty")]
    EmptyLibrary,
    #[error("duplicate library entry '{0}'")]
    DuplicateName(String),
    #[error("observation has {found} valid points, at least {required} required")]
    TooFewPoints { found: usize, required: usize },
    #[error("POI '{0}' lies outside the grid box")]
    PoiOutsideGrid(String),
    #[error("duplicate POI name '{0}'")]
    DuplicatePoi(String),
    #[error("bad POI file: {0}")]
    PoiFile(String),
    #[error("bad library manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fuses posed depth frames into a TSDF spanning `[lo, hi]` and extracts the
/// reference mesh. `poses` map camera to model coordinates.
pub fn fuse_frames<T: Real>(
    frames: &[(DepthFrame, RigidTransform<T>)],
    intr: &CameraIntrinsics,
    lo: Vector3<T>,
    hi: Vector3<T>,
    voxel_size: T,
    truncation: T,
) -> Result<TriangleMesh<T>, RefModelError> {
    let mut volume = TsdfVolume::covering(lo, hi, voxel_size, truncation)?;
    for (frame, pose) in frames {
        volume = tsdf_integrate(&volume, frame, pose, intr)?;
    }
    extract_mesh(&volume)
}

/// Bounding box of all valid back-projected pixels, in model coordinates.
pub fn observed_bounds<T: Real>(
    frames: &[(DepthFrame, RigidTransform<T>)],
    intr: &CameraIntrinsics,
) -> Option<(Vector3<T>, Vector3<T>)> {
    let mut bounds: Option<(Vector3<T>, Vector3<T>)> = None;
    for (frame, pose) in frames {
        for v in 0..frame.height {
            for u in 0..frame.width {
                let Some(z) = frame.meters(u, v, intr.depth_scale) else { continue };
                let p = pose.apply(&intr.backproject(u as f64, v as f64, T::lit(z)));
                bounds = Some(match bounds {
                    None => (p, p),
                    Some((lo, hi)) => (lo.inf(&p), hi.sup(&p)),
                });
            }
        }
    }
    bounds
}
