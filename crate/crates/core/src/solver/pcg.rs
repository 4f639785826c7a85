use nalgebra::DMatrix;
use rayon::prelude::*;

use super::SolverError;
use crate::Real;

/// Chunk length of the parallel reductions. Partial sums are combined in
/// chunk order, so results do not depend on the thread count.
const REDUCE_CHUNK: usize = 2048;

/// Symmetric operator consumed by [`pcg_solve`].
pub trait LinearOperator<T: Real>: Sync {
    fn dim(&self) -> usize;
    /// `y = A·x`.
    fn apply(&self, x: &[T], y: &mut [T]);
    fn diagonal(&self) -> Vec<T>;
}

impl<T: Real> LinearOperator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            *yi = self.row(i).iter().zip(x).fold(T::zero(), |a, (m, v)| a + *m * *v);
        });
    }

    fn diagonal(&self) -> Vec<T> {
        self.diagonal().iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome<T: Real> {
    pub solution: Vec<T>,
    pub iterations: usize,
    /// `‖b - A·x‖ / ‖b‖` at exit (0 for a zero right-hand side).
    pub relative_residual: T,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let partial: Vec<T> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).fold(T::zero(), |s, (p, q)| s + *p * *q))
        .collect();
    partial.into_iter().fold(T::zero(), |s, v| s + v)
}

/// Conjugate gradient with a Jacobi preconditioner, started from zero.
pub fn pcg_solve<T: Real, A: LinearOperator<T>>(
    op: &A,
    rhs: &[T],
    max_iters: usize,
    rel_tol: T,
) -> Result<PcgOutcome<T>, SolverError> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(SolverError::SizeMismatch { operator: n, rhs: rhs.len() });
    }
    if !rhs.iter().all(|v| v.is_finite()) {
        return Err(SolverError::NonFinite("right-hand side"));
    }
    let diag = op.diagonal();
    let mut inv = Vec::with_capacity(n);
    for (i, d) in diag.iter().enumerate() {
        if !d.is_finite() {
            return Err(SolverError::NonFinite("operator diagonal"));
        }
        if *d <= T::zero() {
            return Err(SolverError::ZeroDiagonal(i));
        }
        inv.push(T::one() / *d);
    }
    let mut x = vec![T::zero(); n];
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == T::zero() {
        return Ok(PcgOutcome { solution: x, iterations: 0, relative_residual: T::zero() });
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<T> = r.par_iter().zip(&inv).map(|(a, b)| *a * *b).collect();
    let mut p = z.clone();
    let mut ap = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let mut rel = T::one();
    let mut iterations = 0;
    while iterations < max_iters {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(SolverError::NonFinite("conjugate gradient iterate"));
        }
        if pap <= T::zero() {
            break;
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * *pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * *ai);
        iterations += 1;
        rel = dot(&r, &r).sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(SolverError::NonFinite("conjugate gradient residual"));
        }
        if rel < rel_tol {
            break;
        }
        z.par_iter_mut().zip(&r).zip(&inv).for_each(|((zi, ri), di)| *zi = *ri * *di);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = *zi + beta * *pi);
    }
    Ok(PcgOutcome { solution: x, iterations, relative_residual: rel })
}
