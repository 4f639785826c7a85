use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::TriangleMesh;
use crate::refmodel::{extract_mesh, RefModelError, TsdfVolume};

/// Three flattened arms joined at a hub, lying in the x-y plane with the
/// domed face towards +z. Arm cross-sections are half-ellipses with
/// different top and bottom heights so the object has a distinct top side;
/// unequal angles and lengths break its rotational symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripodSpec {
    pub arm_angles_deg: [f64; 3],
    /// Hub-center to arm-end distance of each arm's center line (m).
    pub arm_lengths: [f64; 3],
    pub half_width: f64,
    pub top_height: f64,
    pub bottom_height: f64,
    /// Smooth-union radius at the hub (m).
    pub blend: f64,
}

impl Default for TripodSpec {
    fn default() -> Self {
        Self {
            arm_angles_deg: [0.0, 110.0, 235.0],
            arm_lengths: [0.125, 0.11, 0.10],
            half_width: 0.015,
            top_height: 0.009,
            bottom_height: 0.005,
            blend: 0.008,
        }
    }
}

fn ellipsoid_distance(q: &Vector3<f64>, r: &Vector3<f64>) -> f64 {
    let k0 = q.component_div(r).norm();
    let k1 = q.component_div(&r.component_mul(r)).norm();
    if k1 <= 0.0 {
        return -r.min();
    }
    k0 * (k0 - 1.0) / k1
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

impl TripodSpec {
    /// Unit direction of arm `i` in the x-y plane.
    pub fn arm_axis(&self, i: usize) -> Vector3<f64> {
        let a = self.arm_angles_deg[i].to_radians();
        Vector3::new(a.cos(), a.sin(), 0.0)
    }

    /// In-plane unit vector perpendicular to arm `i`.
    pub fn arm_lateral(&self, i: usize) -> Vector3<f64> {
        Vector3::z().cross(&self.arm_axis(i))
    }

    fn arm_sdf(&self, i: usize, p: &Vector3<f64>) -> f64 {
        let s = p.dot(&self.arm_axis(i));
        let t = s.clamp(0.0, self.arm_lengths[i]);
        let q = Vector3::new(s - t, p.dot(&self.arm_lateral(i)), p.z);
        let h = if q.z >= 0.0 { self.top_height } else { self.bottom_height };
        ellipsoid_distance(&q, &Vector3::new(self.half_width, self.half_width, h))
    }

    /// Approximate signed distance; exact zero set.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let mut d = self.arm_sdf(0, p);
        for i in 1..3 {
            d = smooth_min(d, self.arm_sdf(i, p), self.blend);
        }
        d
    }

    /// Point on the top face of arm `i`, `along` meters from the hub center
    /// and `lateral` meters off the center line. Exact away from the hub
    /// blend and the arm-end cap.
    pub fn top_point(&self, i: usize, along: f64, lateral: f64) -> Vector3<f64> {
        let a = self.half_width;
        let z = self.top_height * (1.0 - (lateral / a).powi(2)).max(0.0).sqrt();
        self.arm_axis(i) * along + self.arm_lateral(i) * lateral + Vector3::new(0.0, 0.0, z)
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::new(-self.half_width, -self.half_width, -self.bottom_height);
        let mut hi = Vector3::new(self.half_width, self.half_width, self.top_height);
        for i in 0..3 {
            let end = self.arm_axis(i) * self.arm_lengths[i];
            let pad = Vector3::new(self.half_width, self.half_width, 0.0);
            lo = lo.inf(&(end - pad));
            hi = hi.sup(&(end + pad));
        }
        (lo, hi)
    }

    /// Marching Cubes surface of the analytic shape at `voxel` resolution.
    pub fn mesh(&self, voxel: f64) -> Result<TriangleMesh<f64>, RefModelError> {
        let (lo, hi) = self.bounds();
        let pad = Vector3::repeat(4.0 * voxel);
        let origin = lo - pad;
        let ext = hi + pad - origin;
        let dims = [0, 1, 2].map(|a| (ext[a] / voxel).ceil() as usize + 1);
        let vol = TsdfVolume::from_sdf(origin, voxel, dims, 4.0 * voxel, |p| self.sdf(p))?;
        extract_mesh(&vol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_points_lie_on_the_surface() {
        let t = TripodSpec::default();
        for (i, s, l) in [(0, 0.06, 0.0), (1, 0.08, 0.01), (2, 0.05, -0.012)] {
            assert!(t.sdf(&t.top_point(i, s, l)).abs() < 1e-12);
        }
        assert!(t.sdf(&Vector3::zeros()) < 0.0);
        assert!(t.sdf(&Vector3::new(0.0, 0.0, 0.05)) > 0.0);
    }

    #[test]
    fn mesh_is_closed_and_close_to_shape() {
        let t = TripodSpec::default();
        let voxel = 0.002;
        let m = t.mesh(voxel).unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        let worst = m.vertices().iter().map(|v| t.sdf(v).abs()).fold(0.0, f64::max);
        assert!(worst < voxel, "{worst}");
    }
}
