//! SHOT (Signature of Histograms of OrienTations) local descriptors.
//!
//! Each descriptor is built in a repeatable local reference frame (weighted
//! covariance eigenvectors, sign-disambiguated by the majority of neighbor
//! offsets). The support sphere is split into 32 volumes (8 azimuth × 2
//! elevation × 2 radial); each volume holds an 11-bin histogram of the cosine
//! between neighbor normals and the frame's z axis. Contributions are spread
//! over neighboring bins along all four dimensions.
//!
//! Only neighbors whose normal points into the keypoint normal's half-space
//! enter the support, and the frame's z axis is oriented along the keypoint
//! normal. A closed model thinner than the support radius then yields the
//! same descriptor as a single view of its visible side.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::CorrespondError;
use crate::spatial::PointHash;
use crate::Real;

pub const AZIMUTH_BINS: usize = 8;
pub const ELEVATION_BINS: usize = 2;
pub const RADIAL_BINS: usize = 2;
pub const COSINE_BINS: usize = 11;
pub const SHOT_LEN: usize = AZIMUTH_BINS * ELEVATION_BINS * RADIAL_BINS * COSINE_BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct ShotDescriptor<T: Real> {
    pub bins: Vec<T>,
    pub radius: T,
    /// `false` when the support held no neighbor; `bins` is then all zero.
    pub valid: bool,
}

impl<T: Real> ShotDescriptor<T> {
    pub fn distance(&self, other: &Self) -> T {
        self.bins
            .iter()
            .zip(&other.bins)
            .fold(T::zero(), |a, (x, y)| a + (*x - *y) * (*x - *y))
            .sqrt()
    }

    fn invalid(radius: T) -> Self {
        Self {
            bins: vec![T::zero(); SHOT_LEN],
            radius,
            valid: false,
        }
    }
}

/// Local reference frame as rows `(x, y, z)`.
pub fn local_frame<T: Real>(center: &Vector3<T>, neighbors: &[Vector3<T>], radius: T) -> Option<Matrix3<T>> {
    let mut cov = Matrix3::zeros();
    let mut wsum = T::zero();
    for q in neighbors {
        let d = q - center;
        let w = radius - d.norm();
        if w <= T::zero() {
            continue;
        }
        cov += d * d.transpose() * w;
        wsum += w;
    }
    if wsum <= T::zero() {
        return None;
    }
    cov /= wsum;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut x: Vector3<T> = eig.eigenvectors.column(order[0]).into_owned();
    let mut z: Vector3<T> = eig.eigenvectors.column(order[2]).into_owned();
    disambiguate(&mut x, center, neighbors);
    disambiguate(&mut z, center, neighbors);
    let y = z.cross(&x);
    Some(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

fn disambiguate<T: Real>(axis: &mut Vector3<T>, center: &Vector3<T>, neighbors: &[Vector3<T>]) {
    let mut pos = 0i64;
    let mut sum = T::zero();
    for q in neighbors {
        let s = (q - center).dot(axis);
        sum += s;
        if s >= T::zero() {
            pos += 1;
        } else {
            pos -= 1;
        }
    }
    if pos < 0 || (pos == 0 && sum < T::zero()) {
        *axis = -*axis;
    }
}

/// Linear soft-binning weights `(bin, weight)` for a continuous coordinate
/// measured in bin units (bin centers at `k + 0.5`). Non-wrapping
/// coordinates clamp at the ends.
fn soft_bins(coord: f64, bins: usize, wrap: bool) -> [(usize, f64); 2] {
    let s = coord - 0.5;
    let lo = s.floor();
    let f = s - lo;
    let lo = lo as i64;
    let n = bins as i64;
    if wrap {
        let a = lo.rem_euclid(n) as usize;
        let b = (lo + 1).rem_euclid(n) as usize;
        [(a, 1.0 - f), (b, f)]
    } else if lo < 0 {
        [(0, 1.0), (0, 0.0)]
    } else if lo + 1 >= n {
        [((n - 1) as usize, 1.0), (0, 0.0)]
    } else {
        [(lo as usize, 1.0 - f), ((lo + 1) as usize, f)]
    }
}

/// Computes SHOT descriptors at `keypoints` (indices into `points`).
pub fn compute_shot<T: Real>(
    points: &[Vector3<T>],
    normals: &[Vector3<T>],
    keypoints: &[usize],
    radius: T,
) -> Result<Vec<ShotDescriptor<T>>, CorrespondError> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(CorrespondError::InvalidConfig("SHOT radius must be positive"));
    }
    if normals.len() != points.len() {
        return Err(CorrespondError::MissingNormals);
    }
    if let Some(&k) = keypoints.iter().find(|&&k| k >= points.len()) {
        return Err(CorrespondError::IndexOutOfRange(k));
    }
    let hash = PointHash::new(points.to_vec(), radius);
    Ok(keypoints
        .par_iter()
        .map(|&k| describe(&hash, normals, k, radius))
        .collect())
}

fn describe<T: Real>(hash: &PointHash<T>, normals: &[Vector3<T>], k: usize, radius: T) -> ShotDescriptor<T> {
    let points = hash.points();
    let center = points[k];
    let nk = normals[k];
    let support: Vec<usize> = hash
        .within_radius(&center, radius)
        .into_iter()
        .filter(|&i| i != k && normals[i].dot(&nk) > T::zero())
        .collect();
    if support.is_empty() {
        return ShotDescriptor::invalid(radius);
    }
    let nbr: Vec<Vector3<T>> = support.iter().map(|&i| points[i]).collect();
    let Some(mut frame) = local_frame(&center, &nbr, radius) else {
        return ShotDescriptor::invalid(radius);
    };
    if frame.row(2).transpose().dot(&nk) < T::zero() {
        // flip z and y together to stay right-handed
        for j in 0..3 {
            frame[(2, j)] = -frame[(2, j)];
            frame[(1, j)] = -frame[(1, j)];
        }
    }
    let z = frame.row(2).transpose();
    let r = radius.to_f64_lossy();
    let mut hist = vec![0.0f64; SHOT_LEN];
    for (&i, q) in support.iter().zip(&nbr) {
        let local = frame * (q - center);
        let (lx, ly, lz) = (local.x.to_f64_lossy(), local.y.to_f64_lossy(), local.z.to_f64_lossy());
        let dist = (lx * lx + ly * ly + lz * lz).sqrt();
        if dist <= 0.0 {
            continue;
        }
        let cos = normals[i].dot(&z).to_f64_lossy().clamp(-1.0, 1.0);
        let cos_coord = (1.0 + cos) * 0.5 * COSINE_BINS as f64;
        let az_coord = (ly.atan2(lx) + PI) / (2.0 * PI) * AZIMUTH_BINS as f64;
        let el_coord = ((lz / dist).clamp(-1.0, 1.0).asin() + PI / 2.0) / PI * ELEVATION_BINS as f64;
        let rad_coord = dist / r * RADIAL_BINS as f64;
        for (cb, cw) in soft_bins(cos_coord, COSINE_BINS, false) {
            for (ab, aw) in soft_bins(az_coord, AZIMUTH_BINS, true) {
                for (eb, ew) in soft_bins(el_coord, ELEVATION_BINS, false) {
                    for (rb, rw) in soft_bins(rad_coord, RADIAL_BINS, false) {
                        let w = cw * aw * ew * rw;
                        if w == 0.0 {
                            continue;
                        }
                        let volume = ab + AZIMUTH_BINS * (eb + ELEVATION_BINS * rb);
                        hist[volume * COSINE_BINS + cb] += w;
                    }
                }
            }
        }
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return ShotDescriptor::invalid(radius);
    }
    ShotDescriptor {
        bins: hist.into_iter().map(|v| T::lit(v / norm)).collect(),
        radius,
        valid: true,
    }
}

/// Uniform spatial subsample: per occupied cube of edge `spacing`, the point
/// nearest to the cube center. Returned indices are ascending.
pub fn uniform_keypoints<T: Real>(points: &[Vector3<T>], spacing: T) -> Vec<usize> {
    let mut best: HashMap<[i64; 3], (usize, T)> = HashMap::new();
    let half = T::lit(0.5);
    for (i, p) in points.iter().enumerate() {
        let key = [0, 1, 2].map(|a| (p[a] / spacing).floor().to_f64_lossy() as i64);
        let center = Vector3::new(
            (T::lit(key[0] as f64) + half) * spacing,
            (T::lit(key[1] as f64) + half) * spacing,
            (T::lit(key[2] as f64) + half) * spacing,
        );
        let d = (p - center).norm_squared();
        best.entry(key)
            .and_modify(|e| {
                if d < e.1 {
                    *e = (i, d);
                }
            })
            .or_insert((i, d));
    }
    let mut out: Vec<usize> = best.into_values().map(|(i, _)| i).collect();
    out.sort_unstable();
    out
}

/// Averages points and normals per occupied cube of edge `voxel`. Output is
/// ordered by cube; cubes whose normals cancel are dropped. Evens out the
/// sampling density between a mesh and a single view before describing.
pub fn voxel_downsample<T: Real>(
    points: &[Vector3<T>],
    normals: &[Vector3<T>],
    voxel: T,
) -> Result<(Vec<Vector3<T>>, Vec<Vector3<T>>), CorrespondError> {
    if normals.len() != points.len() {
        return Err(CorrespondError::MissingNormals);
    }
    if !(voxel > T::zero()) || !voxel.is_finite() {
        return Err(CorrespondError::InvalidConfig("voxel size must be positive"));
    }
    let mut cells: HashMap<[i64; 3], (Vector3<T>, Vector3<T>, usize)> = HashMap::new();
    for (p, n) in points.iter().zip(normals) {
        let key = [0, 1, 2].map(|a| (p[a] / voxel).floor().to_f64_lossy() as i64);
        let e = cells.entry(key).or_insert((Vector3::zeros(), Vector3::zeros(), 0));
        e.0 += p;
        e.1 += n;
        e.2 += 1;
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    Ok(keys
        .iter()
        .filter_map(|k| {
            let (ps, ns, c) = cells[k];
            ns.try_normalize(T::lit(1e-12)).map(|n| (ps / T::from_usize_lossy(c), n))
        })
        .unzip())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    #[test]
    fn lone_keypoint_is_invalid() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let nrm = vec![Vector3::z(); 2];
        let d = compute_shot(&pts, &nrm, &[0], 0.1).unwrap();
        assert!(!d[0].valid);
        assert!(d[0].bins.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn soft_bins_sum_to_one() {
        for c in [0.0, 0.3, 0.5, 5.2, 10.9, 11.0] {
            let s: f64 = soft_bins(c, 11, false).iter().map(|b| b.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let w = soft_bins(0.1, 8, true);
        assert_eq!(w[0].0, 7);
        assert_eq!(w[1].0, 0);
    }

    #[test]
    fn errors() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0)];
        assert!(compute_shot(&pts, &[Vector3::z()], &[0], 0.0).is_err());
        assert!(compute_shot(&pts, &[], &[0], 0.1).is_err());
        assert!(compute_shot(&pts, &[Vector3::z()], &[3], 0.1).is_err());
    }

    /// Jittered samples of a bumpy height field with analytic normals.
    pub(crate) fn bumpy_patch(seed: u64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = |x: f64, y: f64| 0.01 * (x * 40.0).sin() * (y * 27.0).cos() + 0.006 * (x * 13.0 + y * 31.0).sin();
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                let x = (i as f64 + rng.random_range(-0.4..0.4)) * 0.002;
                let y = (j as f64 + rng.random_range(-0.4..0.4)) * 0.002;
                let h = 1e-6;
                let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
                let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
                pts.push(Vector3::new(x, y, f(x, y)));
                nrm.push(Vector3::new(-fx, -fy, 1.0).normalize());
            }
        }
        (pts, nrm)
    }

    #[test]
    fn identical_clouds_give_identical_descriptors() {
        let (p, n) = bumpy_patch(1);
        let k = uniform_keypoints(&p, 0.01);
        assert_eq!(compute_shot(&p, &n, &k, 0.015).unwrap(), compute_shot(&p, &n, &k, 0.015).unwrap());
    }

    #[test]
    fn rotated_copy_keeps_descriptors() {
        use crate::geometry::RigidTransform;
        let (p, n) = bumpy_patch(2);
        let k = uniform_keypoints(&p, 0.01);
        let tf = RigidTransform::from_axis_angle(&Vector3::new(0.2, 1.0, -0.4), 1.1, Vector3::new(0.3, -0.1, 0.8));
        let pr: Vec<_> = p.iter().map(|q| tf.apply(q)).collect();
        let nr: Vec<_> = n.iter().map(|q| tf.rotation * q).collect();
        let a = compute_shot(&p, &n, &k, 0.015).unwrap();
        let b = compute_shot(&pr, &nr, &k, 0.015).unwrap();
        let close = a.iter().zip(&b).filter(|(x, y)| x.valid && x.distance(y) < 0.1).count();
        assert!(close * 10 >= k.len() * 9, "{close} of {}", k.len());

        let m = crate::correspond::match_features(&a, &b, 0.8).unwrap();
        let correct = m.iter().filter(|x| x.model == x.observed).count();
        assert!(correct * 10 >= k.len() * 9, "{correct} of {}", k.len());
    }

    #[test]
    fn downsample_averages_per_cube() {
        let p = vec![
            Vector3::new(0.01, 0.01, 0.0),
            Vector3::new(0.03, 0.01, 0.0),
            Vector3::new(0.15, 0.0, 0.0),
            Vector3::new(0.31, 0.0, 0.0),
            Vector3::new(0.32, 0.0, 0.0),
        ];
        let n = vec![Vector3::z(), Vector3::x(), Vector3::z(), Vector3::z(), -Vector3::z()];
        let (dp, dn) = voxel_downsample(&p, &n, 0.1).unwrap();
        // the last cube's normals cancel, so it is dropped
        assert_eq!(dp.len(), 2);
        assert!((dp[0] - Vector3::new(0.02, 0.01, 0.0)).norm() < 1e-15);
        assert!((dn[0] - Vector3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-15);
        assert_eq!(dp[1], p[2]);
        assert!(voxel_downsample(&p, &n[..2], 0.1).is_err());
        assert!(voxel_downsample(&p, &n, 0.0).is_err());
    }

    #[test]
    fn keypoints_cover_every_cell() {
        let pts: Vec<Vector3<f64>> = (0..100).map(|i| Vector3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let k = uniform_keypoints(&pts, 0.1);
        assert_eq!(k.len(), 10);
        assert!(k.windows(2).all(|w| w[0] < w[1]));
    }
}
