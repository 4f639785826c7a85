use nalgebra::Vector3;
use rayon::prelude::*;

use super::{CameraIntrinsics, DepthFrame, RefModelError};
use crate::geometry::RigidTransform;
use crate::Real;

/// Default accumulation weight cap.
pub const DEFAULT_MAX_WEIGHT: f64 = 64.0;

/// Truncated signed distance volume. Voxel `(i, j, k)` sits at
/// `origin + voxel_size·(i, j, k)` and has linear index `i + nx·(j + ny·k)`.
/// Values are positive in front of the surface (towards the sensor).
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume<T: Real> {
    origin: Vector3<T>,
    voxel_size: T,
    dims: [usize; 3],
    truncation: T,
    max_weight: T,
    values: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> TsdfVolume<T> {
    pub fn new(origin: Vector3<T>, voxel_size: T, dims: [usize; 3], truncation: T) -> Result<Self, RefModelError> {
        if !(voxel_size > T::zero()) || !voxel_size.is_finite() {
            return Err(RefModelError::InvalidVolume("voxel size must be positive"));
        }
        if truncation < voxel_size || !truncation.is_finite() {
            return Err(RefModelError::InvalidVolume("truncation must be at least one voxel"));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(RefModelError::InvalidVolume("at least two voxels per axis required"));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            max_weight: T::lit(DEFAULT_MAX_WEIGHT),
            values: vec![truncation; n],
            weights: vec![T::zero(); n],
        })
    }

    /// Volume covering the box `[lo, hi]`.
    pub fn covering(lo: Vector3<T>, hi: Vector3<T>, voxel_size: T, truncation: T) -> Result<Self, RefModelError> {
        let mut dims = [0; 3];
        for k in 0..3 {
            let n = ((hi[k] - lo[k]) / voxel_size).ceil().to_f64_lossy().max(1.0) as usize + 1;
            dims[k] = n;
        }
        Self::new(lo, voxel_size, dims, truncation)
    }

    pub fn with_max_weight(mut self, max_weight: T) -> Self {
        self.max_weight = max_weight;
        self
    }

    /// Fills the volume from an analytic signed distance function with unit
    /// weight everywhere.
    pub fn from_sdf(
        origin: Vector3<T>,
        voxel_size: T,
        dims: [usize; 3],
        truncation: T,
        sdf: impl Fn(&Vector3<T>) -> T + Sync,
    ) -> Result<Self, RefModelError> {
        let mut v = Self::new(origin, voxel_size, dims, truncation)?;
        let (nx, ny) = (dims[0], dims[1]);
        let this = &v;
        let vals: Vec<T> = (0..v.values.len())
            .into_par_iter()
            .map(|i| {
                let p = this.position_of(i % nx, (i / nx) % ny, i / (nx * ny));
                sdf(&p).clamp(-truncation, truncation)
            })
            .collect();
        v.values = vals;
        v.weights = vec![T::one(); v.values.len()];
        Ok(v)
    }

    pub fn origin(&self) -> Vector3<T> {
        self.origin
    }
    pub fn voxel_size(&self) -> T {
        self.voxel_size
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn truncation(&self) -> T {
        self.truncation
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn position_of(&self, i: usize, j: usize, k: usize) -> Vector3<T> {
        self.origin + Vector3::new(T::from_usize_lossy(i), T::from_usize_lossy(j), T::from_usize_lossy(k)) * self.voxel_size
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> T {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize, k: usize) -> T {
        self.weights[self.index(i, j, k)]
    }

    /// Returns the sign-flipped volume (same weights).
    pub fn negated(&self) -> Self {
        let mut v = self.clone();
        for x in &mut v.values {
            *x = -*x;
        }
        v
    }
}

/// Fuses one depth frame into the volume. `pose` maps camera coordinates to
/// volume (world) coordinates. Every voxel whose projective signed distance
/// lies within the truncation band gets a running-average update with unit
/// weight; weights saturate at the volume's cap.
pub fn tsdf_integrate<T: Real>(
    volume: &TsdfVolume<T>,
    depth: &DepthFrame,
    pose: &RigidTransform<T>,
    intr: &CameraIntrinsics,
) -> Result<TsdfVolume<T>, RefModelError> {
    depth.check_dims(intr)?;
    pose.validate(T::lit(1e-6)).map_err(|_| RefModelError::InvalidPose)?;
    let world_to_cam = pose.inverse();
    let mut out = volume.clone();
    let [nx, ny, _] = volume.dims;
    let slab = nx * ny;
    let trunc = volume.truncation;
    let cap = volume.max_weight;
    out.values
        .par_chunks_mut(slab)
        .zip(out.weights.par_chunks_mut(slab))
        .enumerate()
        .for_each(|(k, (vals, ws))| {
            for j in 0..ny {
                for i in 0..nx {
                    let q = world_to_cam.apply(&volume.position_of(i, j, k));
                    let Some((u, v)) = intr.project(&q) else { continue };
                    let Some(d) = depth.meters(u, v, intr.depth_scale) else { continue };
                    let sdf = T::lit(d) - q.z;
                    if sdf < -trunc || sdf > trunc {
                        continue;
                    }
                    let idx = i + nx * j;
                    let w = ws[idx];
                    vals[idx] = (vals[idx] * w + sdf) / (w + T::one());
                    ws[idx] = (w + T::one()).min(cap);
                }
            }
        });
    Ok(out)
}
