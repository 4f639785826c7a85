use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RefModelError;
use crate::Real;

/// Pinhole intrinsics plus the metric scale of stored depth units.
///
/// The camera looks along `+z`; pixel `(u, v)` has its center at integer
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, depth_scale: f64) -> Result<Self, RefModelError> {
        let c = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), RefModelError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0
            && [self.fx, self.fy, self.cx, self.cy, self.depth_scale].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(RefModelError::InvalidIntrinsics)
        }
    }

    /// 640×480 camera with a 525 px focal length and 0.25 mm depth units.
    pub fn vga() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            depth_scale: 0.00025,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Continuous image coordinates of a camera-frame point (no bounds test).
    #[inline]
    pub fn project_continuous<T: Real>(&self, p: &Vector3<T>) -> Option<(f64, f64)> {
        let z = p.z.to_f64_lossy();
        if !(z > 0.0) {
            return None;
        }
        Some((
            self.fx * p.x.to_f64_lossy() / z + self.cx,
            self.fy * p.y.to_f64_lossy() / z + self.cy,
        ))
    }

    /// Nearest pixel of a camera-frame point, `None` behind the camera or
    /// outside the image.
    #[inline]
    pub fn project<T: Real>(&self, p: &Vector3<T>) -> Option<(usize, usize)> {
        let (u, v) = self.project_continuous(p)?;
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((u as usize, v as usize))
    }

    /// Point at metric depth `z` along the ray through pixel `(u, v)`.
    #[inline]
    pub fn backproject<T: Real>(&self, u: f64, v: f64, z: T) -> Vector3<T> {
        let zf = z.to_f64_lossy();
        Vector3::new(
            T::lit((u - self.cx) * zf / self.fx),
            T::lit((v - self.cy) * zf / self.fy),
            z,
        )
    }

    /// Unnormalized ray direction `((u-cx)/fx, (v-cy)/fy, 1)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}
