use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;

use crate::geometry::{nearest_rotation, DeformationState, StaticGrid};
use crate::Real;

/// Compressed sparse row matrix with scalar entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T: Real> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Applies the matrix to per-gridpoint 3-vectors (the 3×3-block expansion
    /// `A ⊗ I₃`).
    pub fn apply_vec3(&self, x: &[Vector3<T>]) -> Vec<Vector3<T>> {
        (0..self.n)
            .into_par_iter()
            .map(|i| self.row(i).fold(Vector3::zeros(), |acc, (j, v)| acc + x[j] * v))
            .collect()
    }
}

/// Graph Laplacian of the 6-neighborhood: `|N_i|` on the diagonal, `-1` per
/// edge. Acts identically on each coordinate axis.
pub fn build_laplacian<T: Real>(grid: &StaticGrid<T>) -> CsrMatrix<T> {
    let n = grid.len();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * 7);
    let mut vals = Vec::with_capacity(n * 7);
    row_ptr.push(0);
    for i in 0..n {
        let mut row: Vec<usize> = grid.neighbors(i).collect();
        let degree = row.len();
        row.push(i);
        row.sort_unstable();
        for j in row {
            cols.push(j);
            vals.push(if j == i { T::from_usize_lossy(degree) } else { -T::one() });
        }
        row_ptr.push(cols.len());
    }
    CsrMatrix { n, row_ptr, cols, vals }
}

/// `Σ_i Σ_{j∈N_i} ‖(t_i - t_j) - R_i(t̂_i - t̂_j)‖²`; every edge counts in
/// both directions.
pub fn arap_energy<T: Real>(state: &DeformationState<T>, grid: &StaticGrid<T>) -> T {
    let per: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let ti = state.translations[i];
            let hi = grid.position(i);
            grid.neighbors(i).fold(T::zero(), |acc, j| {
                let e = (ti - state.translations[j]) - state.rotations[i] * (hi - grid.position(j));
                acc + e.norm_squared()
            })
        })
        .collect();
    per.into_iter().fold(T::zero(), |a, b| a + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit<T: Real> {
    pub rotation: Matrix3<T>,
    /// Set when the neighborhood covariance vanished and identity was used.
    pub degenerate: bool,
}

/// Closed-form rotation minimizing the ARAP term of gridpoint `i` for the
/// current translations.
pub fn fit_rotation<T: Real>(i: usize, state: &DeformationState<T>, grid: &StaticGrid<T>) -> RotationFit<T> {
    let ti = state.translations[i];
    let hi = grid.position(i);
    let mut cov = Matrix3::zeros();
    let mut any = false;
    for j in grid.neighbors(i) {
        cov += (hi - grid.position(j)) * (ti - state.translations[j]).transpose();
        any = true;
    }
    let scale = grid.spacing() * grid.spacing();
    if !any || !(cov.norm() > scale * T::lit(1e-12)) {
        return RotationFit {
            rotation: Matrix3::identity(),
            degenerate: true,
        };
    }
    // argmax tr(R·cov) is the rotation nearest to covᵀ
    match nearest_rotation(&cov.transpose()) {
        Some(rotation) => RotationFit {
            rotation,
            degenerate: false,
        },
        None => RotationFit {
            rotation: Matrix3::identity(),
            degenerate: true,
        },
    }
}

pub fn fit_all_rotations<T: Real>(state: &DeformationState<T>, grid: &StaticGrid<T>) -> Vec<RotationFit<T>> {
    (0..grid.len()).into_par_iter().map(|i| fit_rotation(i, state, grid)).collect()
}

/// `b_i = Σ_{j∈N_i} ((R_i + R_j)/2)(t̂_i - t̂_j)`.
pub fn arap_rhs<T: Real>(state: &DeformationState<T>, grid: &StaticGrid<T>) -> Vec<Vector3<T>> {
    let half = T::lit(0.5);
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let hi = grid.position(i);
            grid.neighbors(i).fold(Vector3::zeros(), |acc, j| {
                acc + (state.rotations[i] + state.rotations[j]) * (hi - grid.position(j)) * half
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{is_rotation, RigidTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(d: [usize; 3]) -> StaticGrid<f64> {
        StaticGrid::new(Vector3::new(-0.1, 0.0, 0.2), 0.05, d).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        RigidTransform::from_axis_angle(&axis, rng.random::<f64>() * 6.2, Vector3::zeros()).rotation
    }

    #[test]
    fn energy_examples() {
        let g = grid([3, 3, 3]);
        let mut s = DeformationState::rest(&g, RigidTransform::identity());
        assert_eq!(arap_energy(&s, &g), 0.0);
        // rigid motion of all gridpoints with matching rotations
        let q = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.8, Vector3::new(0.3, 0.0, -0.1));
        let mut r = s.clone();
        for i in 0..g.len() {
            r.translations[i] = q.apply(&s.translations[i]);
            r.rotations[i] = q.rotation;
        }
        assert!(arap_energy(&r, &g) < 1e-24);
        // center gridpoint displaced: 6 neighbors, both edge directions
        let d = Vector3::new(0.001, -0.002, 0.0005);
        let c = g.index(1, 1, 1);
        s.translations[c] += d;
        let expect = 6.0 * 2.0 * d.norm_squared();
        assert!((arap_energy(&s, &g) - expect).abs() < 1e-18);
    }

    #[test]
    fn energy_rigid_invariance_random() {
        let g = grid([3, 4, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = DeformationState::rest(&g, RigidTransform::identity());
        for i in 0..g.len() {
            s.translations[i] += Vector3::new(rng.random(), rng.random(), rng.random()) * 0.01;
            s.rotations[i] = random_rotation(&mut rng);
        }
        let e = arap_energy(&s, &g);
        for _ in 0..10 {
            let q = RigidTransform::from_axis_angle(&Vector3::new(rng.random(), rng.random(), 1.0), rng.random(), Vector3::new(rng.random(), 0.2, -0.4));
            let mut r = s.clone();
            for i in 0..g.len() {
                r.translations[i] = q.apply(&s.translations[i]);
                r.rotations[i] = q.rotation * s.rotations[i];
            }
            assert!((arap_energy(&r, &g) - e).abs() < 1e-9 * e.max(1.0));
        }
    }

    #[test]
    fn fit_rotation_recovers_and_beats_random() {
        let g = grid([3, 3, 3]);
        let s = DeformationState::rest(&g, RigidTransform::identity());
        let f = fit_rotation(g.index(1, 1, 1), &s, &g);
        assert!((f.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(!f.degenerate);

        let q = RigidTransform::from_axis_angle(&Vector3::new(0.2, -0.5, 1.0), 2.5, Vector3::new(1.0, 2.0, 3.0));
        let mut r = s.clone();
        for i in 0..g.len() {
            r.translations[i] = q.apply(&s.translations[i]);
        }
        for i in 0..g.len() {
            assert!((fit_rotation(i, &r, &g).rotation - q.rotation).norm() < 1e-9);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s2 = s.clone();
        for t in s2.translations.iter_mut() {
            *t += Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.05;
        }
        let i = g.index(1, 1, 1);
        let local = |rot: &Matrix3<f64>| {
            g.neighbors(i).fold(0.0, |a, j| {
                a + ((s2.translations[i] - s2.translations[j]) - rot * (g.position(i) - g.position(j))).norm_squared()
            })
        };
        let fit = fit_rotation(i, &s2, &g).rotation;
        assert!(is_rotation(&fit, 1e-9));
        let best = local(&fit);
        for _ in 0..10_000 {
            assert!(best <= local(&random_rotation(&mut rng)) + 1e-15);
        }
    }

    #[test]
    fn fit_rotation_reflection_branch_and_degenerate() {
        let g = grid([3, 3, 3]);
        let mut s = DeformationState::rest(&g, RigidTransform::identity());
        // mirror the neighborhood: the covariance has negative determinant
        let c = g.position(g.index(1, 1, 1));
        for i in 0..g.len() {
            let p = g.position(i) - c;
            s.translations[i] = c + Vector3::new(-p.x, p.y, p.z);
        }
        let f = fit_rotation(g.index(1, 1, 1), &s, &g);
        assert!(is_rotation(&f.rotation, 1e-9));
        assert!(!f.degenerate);
        // collapse all gridpoints onto one location
        for t in s.translations.iter_mut() {
            *t = Vector3::zeros();
        }
        let f = fit_rotation(0, &s, &g);
        assert!(f.degenerate);
        assert_eq!(f.rotation, Matrix3::identity());
    }

    #[test]
    fn laplacian_examples() {
        let g = grid([2, 1, 1]);
        let l = build_laplacian(&g).to_dense();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        for d in [[2, 2, 2], [3, 2, 4], [4, 4, 4]] {
            let g = grid(d);
            let l = build_laplacian(&g).to_dense();
            assert_eq!(l, l.transpose());
            for i in 0..g.len() {
                assert_eq!(l.row(i).sum(), 0.0);
            }
            let mut ev: Vec<f64> = l.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(ev[0].abs() < 1e-10);
            assert!(ev[1] > 1e-3);
        }
    }

    #[test]
    fn rhs_examples() {
        let g = grid([3, 3, 2]);
        let s = DeformationState::rest(&g, RigidTransform::identity());
        let l = build_laplacian(&g);
        let b = arap_rhs(&s, &g);
        let lt = l.apply_vec3(&s.translations);
        for (x, y) in lt.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
        // common rotation Q: T = Q·T̂ + c solves L·T = b
        let q = RigidTransform::from_axis_angle(&Vector3::new(0.3, 0.3, -1.0), 1.1, Vector3::new(0.4, 0.5, 0.6));
        let mut r = s.clone();
        r.rotations.iter_mut().for_each(|m| *m = q.rotation);
        let b = arap_rhs(&r, &g);
        let t: Vec<_> = s.translations.iter().map(|p| q.apply(p)).collect();
        for (x, y) in l.apply_vec3(&t).iter().zip(&b) {
            assert!((x - y).norm() < 1e-9);
        }
        let single = StaticGrid::new(Vector3::zeros(), 1.0, [1, 1, 1]).unwrap();
        let s1 = DeformationState::rest(&single, RigidTransform::identity());
        assert_eq!(arap_rhs(&s1, &single), vec![Vector3::zeros()]);
    }
}
