use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CorrespondError;
use crate::refmodel::{CameraIntrinsics, DepthFrame};
use crate::Real;

/// Normal estimation settings for [`make_observation_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Half-width (pixels) of the central-difference stencil.
    pub normal_step: usize,
    /// Largest depth difference (m) per pixel of stencil offset before a
    /// neighbor counts as lying across a depth discontinuity.
    pub max_depth_jump: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            normal_step: 2,
            max_depth_jump: 0.005,
        }
    }
}

/// Organized point cloud in the camera frame. Pixel `(u, v)` is stored at
/// `v * width + u`; a pixel has a normal only if it has a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real> {
    pub intrinsics: CameraIntrinsics,
    pub points: Vec<Option<Vector3<T>>>,
    pub normals: Vec<Option<Vector3<T>>>,
}

impl<T: Real> Observation<T> {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn point(&self, u: usize, v: usize) -> Option<Vector3<T>> {
        self.points[v * self.intrinsics.width + u]
    }

    #[inline]
    pub fn normal(&self, u: usize, v: usize) -> Option<Vector3<T>> {
        self.normals[v * self.intrinsics.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    /// Pixels carrying both a point and a normal, as `(pixel index, point, normal)`.
    pub fn oriented_points(&self) -> impl Iterator<Item = (usize, Vector3<T>, Vector3<T>)> + '_ {
        self.points
            .iter()
            .zip(&self.normals)
            .enumerate()
            .filter_map(|(i, (p, n))| Some((i, (*p)?, (*n)?)))
    }
}

/// Back-projects a depth frame and estimates per-pixel normals with the
/// default stencil.
pub fn make_observation<T: Real>(depth: &DepthFrame, intr: &CameraIntrinsics) -> Result<Observation<T>, CorrespondError> {
    make_observation_with(depth, intr, &ObservationConfig::default())
}

/// Back-projects every valid pixel through the pinhole model. Normals are
/// the cross product of the horizontal and vertical central-difference
/// tangents, oriented towards the camera; pixels lacking a stencil neighbor
/// (or separated from it by a depth jump) get no normal.
pub fn make_observation_with<T: Real>(
    depth: &DepthFrame,
    intr: &CameraIntrinsics,
    cfg: &ObservationConfig,
) -> Result<Observation<T>, CorrespondError> {
    depth.check_dims(intr)?;
    let (w, h) = (intr.width, intr.height);
    let points: Vec<Option<Vector3<T>>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            depth
                .meters(u, v, intr.depth_scale)
                .map(|z| intr.backproject(u as f64, v as f64, T::lit(z)))
        })
        .collect();

    let k = cfg.normal_step.max(1);
    let jump = T::lit(cfg.max_depth_jump * k as f64);
    let normals: Vec<Option<Vector3<T>>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            let c = points[i]?;
            if u < k || v < k || u + k >= w || v + k >= h {
                return None;
            }
            let near = |j: usize| points[j].filter(|p| (p.z - c.z).abs() <= jump);
            let right = near(i + k)?;
            let left = near(i - k)?;
            let down = near(i + k * w)?;
            let up = near(i - k * w)?;
            let n = (right - left).cross(&(down - up)).try_normalize(T::lit(1e-30))?;
            Some(if n.dot(&c) > T::zero() { -n } else { n })
        })
        .collect();

    Ok(Observation {
        intrinsics: *intr,
        points,
        normals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 40.0, 30.0, 80, 60, 0.00025).unwrap()
    }

    #[test]
    fn plane_normals_face_camera() {
        let c = cam();
        let f = DepthFrame::from_meters(80, 60, &vec![0.5; 4800], c.depth_scale);
        let o: Observation<f64> = make_observation(&f, &c).unwrap();
        assert_eq!(o.valid_count(), 4800);
        let mut count = 0;
        for (_, _, n) in o.oriented_points() {
            assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-3);
            count += 1;
        }
        assert!(count > 4000);
        // border pixels lack stencil neighbors
        assert!(o.normal(0, 0).is_none());
    }

    #[test]
    fn principal_ray_and_empty_frame() {
        let c = cam();
        let mut f = DepthFrame::zeros(80, 60);
        let o: Observation<f64> = make_observation(&f, &c).unwrap();
        assert_eq!(o.valid_count(), 0);
        f.data[30 * 80 + 40] = 3000;
        let o: Observation<f64> = make_observation(&f, &c).unwrap();
        let p = o.point(40, 30).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 0.75)).norm() < 1e-15);
        assert!(o.normal(40, 30).is_none());
    }

    #[test]
    fn slanted_plane_normal() {
        // plane z = 0.5 + 0.5 x, sampled exactly per ray
        let c = cam();
        let mut m = vec![0.0; 4800];
        for v in 0..60 {
            for u in 0..80 {
                let rx = (u as f64 - c.cx) / c.fx;
                m[v * 80 + u] = 0.5 / (1.0 - 0.5 * rx);
            }
        }
        // 10 µm depth units keep quantization below the tolerance
        let f = DepthFrame::from_meters(80, 60, &m, 1e-5);
        let mut cc = c;
        cc.depth_scale = 1e-5;
        let o: Observation<f64> = make_observation(&f, &cc).unwrap();
        let expect = Vector3::new(0.5, 0.0, -1.0).normalize();
        let n = o.normal(40, 30).unwrap();
        assert!((n - expect).norm() < 3e-3, "{n}");
    }

    #[test]
    fn dimension_mismatch() {
        assert!(make_observation::<f64>(&DepthFrame::zeros(10, 10), &cam()).is_err());
    }
}
