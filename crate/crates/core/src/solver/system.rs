use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;

use super::arap::{arap_rhs, build_laplacian, CsrMatrix};
use super::pcg::LinearOperator;
use super::residual::{residual_feature, residual_p2p, residual_p2s};
use super::{EnergyWeights, RegularizerForm};
use crate::correspond::{Correspondence, FeatureCorrespondence};
use crate::geometry::{DeformationState, StaticGrid};
use crate::Real;

/// Blocks per gridpoint row: offsets in `{-1, 0, 1}³`, index
/// `(dx+1) + 3(dy+1) + 9(dz+1)`.
pub const STENCIL: usize = 27;
const CENTER: usize = 13;

/// Gauss-Newton normal system over the `3|G|` translation unknowns.
///
/// The data part is stored as 3×3 blocks on the 27-point stencil; the
/// regularizer part (`coefficient·L` or `coefficient·LᵀL`) is applied
/// through the grid Laplacian. `rhs` holds `-Jᵀr`.
#[derive(Debug, Clone)]
pub struct SparseNormalSystem<T: Real> {
    dims: [usize; 3],
    blocks: Vec<Matrix3<T>>,
    has_data: Vec<bool>,
    laplacian: CsrMatrix<T>,
    form: RegularizerForm,
    reg_coefficient: T,
    pub rhs: Vec<T>,
}

struct Term<T: Real> {
    corners: [usize; 8],
    alpha: [T; 8],
    hessian: Matrix3<T>,
    gradient: Vector3<T>,
}

fn corner_offset(k: usize) -> [i64; 3] {
    [(k & 1) as i64, ((k >> 1) & 1) as i64, ((k >> 2) & 1) as i64]
}

fn stencil_index(d: [i64; 3]) -> usize {
    ((d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1)) as usize
}

impl<T: Real> SparseNormalSystem<T> {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn form(&self) -> RegularizerForm {
        self.form
    }

    /// Data block between gridpoint `i` and its stencil neighbor at `offset`.
    pub fn data_block(&self, i: usize, offset: [i64; 3]) -> Matrix3<T> {
        self.blocks[i * STENCIL + stencil_index(offset)]
    }

    fn neighbor(&self, i: usize, o: usize) -> Option<usize> {
        let [nx, ny, _] = self.dims;
        let c = [i % nx, (i / nx) % ny, i / (nx * ny)];
        let d = [(o % 3) as i64 - 1, ((o / 3) % 3) as i64 - 1, (o / 9) as i64 - 1];
        let mut q = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as i64 + d[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            q[a] = v as usize;
        }
        Some(q[0] + nx * (q[1] + ny * q[2]))
    }

    fn apply_laplacian(&self, x: &[T], y: &mut [T]) {
        y.par_chunks_mut(3).enumerate().for_each(|(i, yi)| {
            let mut acc = [T::zero(); 3];
            for (j, v) in self.laplacian.row(i) {
                for a in 0..3 {
                    acc[a] += v * x[3 * j + a];
                }
            }
            yi.copy_from_slice(&acc);
        });
    }

    /// Dense copy of the full matrix; intended for small grids.
    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            self.apply(&e, &mut col);
            e[j] = T::zero();
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }
}

impl<T: Real> LinearOperator<T> for SparseNormalSystem<T> {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        let c = self.reg_coefficient;
        match self.form {
            RegularizerForm::EdgeArap => {
                self.apply_laplacian(x, y);
                y.par_iter_mut().for_each(|v| *v *= c);
            }
            RegularizerForm::LaplacianSquared => {
                let mut tmp = vec![T::zero(); x.len()];
                self.apply_laplacian(x, &mut tmp);
                self.apply_laplacian(&tmp, y);
                y.par_iter_mut().for_each(|v| *v *= c);
            }
        }
        y.par_chunks_mut(3).enumerate().for_each(|(i, yi)| {
            if !self.has_data[i] {
                return;
            }
            let mut acc = Vector3::zeros();
            for o in 0..STENCIL {
                if let Some(j) = self.neighbor(i, o) {
                    acc += self.blocks[i * STENCIL + o] * Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
                }
            }
            for a in 0..3 {
                yi[a] += acc[a];
            }
        });
    }

    fn diagonal(&self) -> Vec<T> {
        let c = self.reg_coefficient;
        (0..self.len())
            .map(|k| {
                let i = k / 3;
                let degree = T::from_usize_lossy(self.laplacian.row(i).count() - 1);
                let reg = match self.form {
                    RegularizerForm::EdgeArap => c * degree,
                    RegularizerForm::LaplacianSquared => c * (degree * degree + degree),
                };
                reg + self.blocks[i * STENCIL + CENTER][(k % 3, k % 3)]
            })
            .collect()
    }
}

/// Builds the Gauss-Newton system of the translation subproblem at `state`.
/// Each point correspondence contributes a point-to-point term (`ω_p`) and a
/// point-to-plane term (`ω_s`); features contribute with `ω_f`.
pub fn assemble<T: Real>(
    correspondences: &[Correspondence<T>],
    features: &[FeatureCorrespondence<T>],
    state: &DeformationState<T>,
    grid: &StaticGrid<T>,
    weights: &EnergyWeights,
    form: RegularizerForm,
) -> SparseNormalSystem<T> {
    let n = grid.len();
    let rg = state.global.rotation;
    let (wp, ws, wf) = (T::lit(weights.omega_p), T::lit(weights.omega_s), T::lit(weights.omega_f));

    let mut terms: Vec<Term<T>> = correspondences
        .par_iter()
        .map(|c| {
            let sp = wp * c.weight;
            let ss = ws * c.weight;
            let m = rg.transpose() * c.observed_normal;
            let r = residual_p2p(c, state);
            let d = residual_p2s(c, state);
            Term {
                corners: c.anchor.corners,
                alpha: c.anchor.weights,
                hessian: Matrix3::identity() * (sp * sp) + m * m.transpose() * (ss * ss),
                gradient: -(rg.transpose() * r * (sp * sp) + m * (d * ss * ss)),
            }
        })
        .collect();
    terms.par_extend(features.par_iter().map(|f| {
        let s = wf * f.weight;
        let r = residual_feature(f, state);
        Term {
            corners: f.anchor.corners,
            alpha: f.anchor.weights,
            hessian: Matrix3::identity() * (s * s),
            gradient: -(rg.transpose() * r * (s * s)),
        }
    }));

    // per-gridpoint lists of (term, corner slot), in term order
    let mut start = vec![0usize; n + 1];
    for t in &terms {
        for k in 0..8 {
            if t.alpha[k] != T::zero() {
                start[t.corners[k] + 1] += 1;
            }
        }
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut touching = vec![(0usize, 0usize); start[n]];
    for (ti, t) in terms.iter().enumerate() {
        for k in 0..8 {
            if t.alpha[k] != T::zero() {
                let g = t.corners[k];
                touching[fill[g]] = (ti, k);
                fill[g] += 1;
            }
        }
    }

    let mut blocks = vec![Matrix3::zeros(); n * STENCIL];
    let mut rhs = vec![T::zero(); 3 * n];
    blocks
        .par_chunks_mut(STENCIL)
        .zip(rhs.par_chunks_mut(3))
        .enumerate()
        .for_each(|(i, (row, b))| {
            let mut g = Vector3::zeros();
            for &(ti, k) in &touching[start[i]..start[i + 1]] {
                let t = &terms[ti];
                let ak = t.alpha[k];
                let ok = corner_offset(k);
                for k2 in 0..8 {
                    let a2 = t.alpha[k2];
                    if a2 == T::zero() {
                        continue;
                    }
                    let o2 = corner_offset(k2);
                    let d = [o2[0] - ok[0], o2[1] - ok[1], o2[2] - ok[2]];
                    row[stencil_index(d)] += t.hessian * (ak * a2);
                }
                g += t.gradient * ak;
            }
            b.copy_from_slice(g.as_slice());
        });
    let has_data = (0..n).map(|i| start[i + 1] > start[i]).collect();

    let laplacian = build_laplacian(grid);
    let omega_r = T::lit(weights.omega_r);
    let lt = laplacian.apply_vec3(&state.translations);
    let b = arap_rhs(state, grid);
    let reg_residual: Vec<Vector3<T>> = lt.iter().zip(&b).map(|(x, y)| x - y).collect();
    let (reg_coefficient, reg_gradient) = match form {
        RegularizerForm::EdgeArap => {
            let c = omega_r * T::lit(2.0);
            (c, reg_residual)
        }
        RegularizerForm::LaplacianSquared => (omega_r, laplacian.apply_vec3(&reg_residual)),
    };
    rhs.par_chunks_mut(3).zip(&reg_gradient).for_each(|(b, g)| {
        for a in 0..3 {
            b[a] -= reg_coefficient * g[a];
        }
    });

    SparseNormalSystem {
        dims: grid.dims(),
        blocks,
        has_data,
        laplacian,
        form,
        reg_coefficient,
        rhs,
    }
}
