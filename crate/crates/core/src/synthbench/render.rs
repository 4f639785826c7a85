use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geometry::{RigidTransform, TriangleMesh};
use crate::refmodel::{CameraIntrinsics, DepthFrame};

const NEAR: f64 = 1e-3;
const BAND_ROWS: usize = 16;

/// Rasterized depth (m) of `mesh` seen through `intr`; `pose` maps model to
/// camera coordinates. Each covered pixel holds the nearest ray-triangle
/// intersection through its center, 0 where nothing is hit.
pub fn render_depth_meters(mesh: &TriangleMesh<f64>, pose: &RigidTransform<f64>, intr: &CameraIntrinsics) -> Vec<f64> {
    let (w, h) = (intr.width, intr.height);
    let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| pose.apply(v)).collect();
    let px: Vec<Option<(f64, f64)>> = cam
        .iter()
        .map(|p| (p.z > NEAR).then(|| (intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy)))
        .collect();

    let bands = h.div_ceil(BAND_ROWS);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); bands];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (px[tri[0]], px[tri[1]], px[tri[2]]) else { continue };
        let vmin = a.1.min(b.1).min(c.1).ceil().max(0.0);
        let vmax = a.1.max(b.1).max(c.1).floor().min(h as f64 - 1.0);
        let umin = a.0.min(b.0).min(c.0).ceil().max(0.0);
        let umax = a.0.max(b.0).max(c.0).floor().min(w as f64 - 1.0);
        if vmin > vmax || umin > umax {
            continue;
        }
        for band in (vmin as usize / BAND_ROWS)..=(vmax as usize / BAND_ROWS) {
            bins[band].push(t);
        }
    }

    let mut depth = vec![0.0f64; w * h];
    depth.par_chunks_mut(BAND_ROWS * w).enumerate().for_each(|(band, rows)| {
        let row0 = band * BAND_ROWS;
        let nrows = rows.len() / w;
        for &t in &bins[band] {
            let tri = mesh.triangles()[t];
            let (a, b, c) = (px[tri[0]].unwrap(), px[tri[1]].unwrap(), px[tri[2]].unwrap());
            let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if area.abs() < 1e-12 {
                continue;
            }
            let (p0, p1, p2) = (cam[tri[0]], cam[tri[1]], cam[tri[2]]);
            let n = (p1 - p0).cross(&(p2 - p0));
            let np0 = n.dot(&p0);
            let vmin = (a.1.min(b.1).min(c.1).ceil().max(row0 as f64)) as usize;
            let vmax = a.1.max(b.1).max(c.1).floor().min((row0 + nrows) as f64 - 1.0);
            if vmax < vmin as f64 {
                continue;
            }
            let umin = a.0.min(b.0).min(c.0).ceil().max(0.0) as usize;
            let umax = a.0.max(b.0).max(c.0).floor().min(w as f64 - 1.0) as usize;
            for v in vmin..=vmax as usize {
                let y = v as f64;
                for u in umin..=umax {
                    let x = u as f64;
                    let e0 = ((c.0 - b.0) * (y - b.1) - (c.1 - b.1) * (x - b.0)) / area;
                    let e1 = ((a.0 - c.0) * (y - c.1) - (a.1 - c.1) * (x - c.0)) / area;
                    let e2 = 1.0 - e0 - e1;
                    if e0 < -1e-12 || e1 < -1e-12 || e2 < -1e-12 {
                        continue;
                    }
                    let ray = Vector3::new((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
                    let denom = n.dot(&ray);
                    if denom.abs() < 1e-18 {
                        continue;
                    }
                    let z = np0 / denom;
                    let slot = &mut rows[(v - row0) * w + u];
                    if z > NEAR && (*slot == 0.0 || z < *slot) {
                        *slot = z;
                    }
                }
            }
        }
    });
    depth
}

/// [`render_depth_meters`] plus Gaussian depth noise of standard deviation
/// `noise_sigma` (m) on covered pixels, quantized to the 16-bit format.
pub fn render_depth(
    mesh: &TriangleMesh<f64>,
    pose: &RigidTransform<f64>,
    intr: &CameraIntrinsics,
    noise_sigma: f64,
    seed: u64,
) -> DepthFrame {
    let mut depth = render_depth_meters(mesh, pose, intr);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("finite positive sigma");
        for d in depth.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + normal.sample(&mut rng)).max(NEAR);
        }
    }
    DepthFrame::from_meters(intr.width, intr.height, &depth, intr.depth_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspond::{make_observation_with, Observation, ObservationConfig};

    fn plane(z: f64, half: f64) -> TriangleMesh<f64> {
        TriangleMesh::new(
            vec![
                Vector3::new(-half, -half, z),
                Vector3::new(half, -half, z),
                Vector3::new(half, half, z),
                Vector3::new(-half, half, z),
            ],
            None,
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn plane_reads_exact_depth() {
        let intr = CameraIntrinsics::vga();
        let f = render_depth(&plane(0.5, 0.5), &RigidTransform::identity(), &intr, 0.0, 0);
        assert_eq!(f.valid_count(), intr.pixel_count());
        assert!(f.data.iter().all(|&d| d == 2000));
        let empty = render_depth(&plane(-0.5, 0.5), &RigidTransform::identity(), &intr, 0.0, 0);
        assert_eq!(empty.valid_count(), 0);
    }

    #[test]
    fn noise_has_requested_spread() {
        let intr = CameraIntrinsics::vga();
        let m = plane(0.5, 0.5);
        let f = render_depth(&m, &RigidTransform::identity(), &intr, 0.001, 7);
        let vals: Vec<f64> = f.data.iter().map(|&d| d as f64 * intr.depth_scale - 0.5).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(mean.abs() < 1e-4);
        assert!((sd - 0.001).abs() < 5e-5);
        assert_eq!(f, render_depth(&m, &RigidTransform::identity(), &intr, 0.001, 7));
    }

    #[test]
    fn sphere_points_round_trip() {
        let r = 0.08;
        let c = Vector3::new(0.02, -0.01, 0.5);
        let vol = crate::refmodel::TsdfVolume::from_sdf(
            Vector3::repeat(-0.1),
            0.004,
            [51, 51, 51],
            0.012,
            |p: &Vector3<f64>| p.norm() - r,
        )
        .unwrap();
        let mesh = crate::refmodel::extract_mesh(&vol).unwrap();
        let intr = CameraIntrinsics::vga();
        let pose = RigidTransform::from_translation(c);
        let meters = render_depth_meters(&mesh, &pose, &intr);
        // the faceted sphere deviates from the analytic one by at most the
        // chord sagitta of a voxel-sized facet
        let sagitta = 0.004f64.powi(2) / (8.0 * r) + 1e-4;
        let mut n = 0;
        for v in 0..intr.height {
            for u in 0..intr.width {
                let z = meters[v * intr.width + u];
                if z > 0.0 {
                    let p: Vector3<f64> = intr.backproject(u as f64, v as f64, z);
                    assert!(((p - c).norm() - r).abs() < sagitta + 1e-6);
                    n += 1;
                }
            }
        }
        assert!(n > 1000);
        // quantized frame through the observation path
        let f = DepthFrame::from_meters(intr.width, intr.height, &meters, intr.depth_scale);
        let o: Observation<f64> = make_observation_with(&f, &intr, &ObservationConfig::default()).unwrap();
        for (i, p) in o.points.iter().enumerate() {
            if let Some(p) = p {
                let exact: Vector3<f64> = intr.backproject((i % intr.width) as f64, (i / intr.width) as f64, meters[i]);
                assert!((p - exact).norm() < 1e-6 + intr.depth_scale);
            }
        }
    }
}
