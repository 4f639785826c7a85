//! Deformation estimation: weighted residuals and their Jacobians, the grid
//! ARAP regularizer, a block-sparse Gauss-Newton normal system solved by PCG,
//! and the flip-flop driver alternating closed-form rotation fits with
//! translation updates.
//!
//! Conventions: the data residuals are scaled by `ω·w_c`, so the data energy
//! is `Σ (ω·w_c)²·‖r‖²`; the regularizer enters as `ω_r·E_reg`. The normal
//! system is stored as `H·Δ = g` with `g = -Jᵀr` so that the update is
//! `t ← t + damping·Δ`.

mod arap;
mod flipflop;
mod pcg;
mod residual;
mod system;

use serde::{Deserialize, Serialize};

pub use arap::{arap_energy, arap_rhs, build_laplacian, fit_all_rotations, fit_rotation, CsrMatrix, RotationFit};
pub use flipflop::{
    energy_breakdown, flip_flop_solve, CorrespondenceProvider, CorrespondenceSet, EnergyBreakdown, FlipRecord,
    SolveReport, StepRecord,
};
pub use pcg::{pcg_solve, LinearOperator, PcgOutcome};
pub use residual::{jacobian_plane_rows, jacobian_point_rows, residual_feature, residual_p2p, residual_p2s};
pub use system::{assemble, SparseNormalSystem, STENCIL};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid energy weights: {0}")]
    InvalidWeights(&'static str),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("system size mismatch: operator {operator}, rhs {rhs}")]
    SizeMismatch { operator: usize, rhs: usize },
    #[error("zero diagonal entry at unknown {0}; the system lacks regularization")]
    ZeroDiagonal(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Term weights of the total energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyWeights {
    pub omega_p: f64,
    pub omega_s: f64,
    pub omega_f: f64,
    pub omega_r: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            omega_p: 1.0,
            omega_s: 1.0,
            omega_f: 0.5,
            omega_r: 1.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<(), SolverError> {
        let all = [self.omega_p, self.omega_s, self.omega_f, self.omega_r];
        if !all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(SolverError::InvalidWeights("weights must be finite and non-negative"));
        }
        if self.omega_p + self.omega_s + self.omega_f <= 0.0 {
            return Err(SolverError::InvalidWeights("at least one data weight must be positive"));
        }
        if self.omega_r <= 0.0 {
            return Err(SolverError::InvalidWeights("omega_r must be positive"));
        }
        Ok(())
    }

    /// Copy with `omega_r = scale · correspondences / gridpoints`.
    pub fn with_scaled_regularizer(self, scale: f64, correspondences: usize, gridpoints: usize) -> Self {
        let ratio = correspondences.max(1) as f64 / gridpoints.max(1) as f64;
        Self {
            omega_r: scale * ratio,
            ..self
        }
    }
}

/// How the regularizer enters the translation subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerForm {
    /// Gauss-Newton of the edge-wise ARAP energy: `2·ω_r·L` and
    /// `2·ω_r·(L·T - b)`. Flip and flop then share one objective.
    #[default]
    EdgeArap,
    /// Least squares on the Laplacian residual `L·T - b`: `ω_r·LᵀL` and
    /// `ω_r·Lᵀ(L·T - b)`.
    LaplacianSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub flip_flop_iters: usize,
    pub gn_iters_per_flip: usize,
    pub pcg_max_iters: usize,
    pub pcg_rel_tol: f64,
    /// Initial step scale in `(0, 1]`; halved on an energy increase.
    pub step_damping: f64,
    /// Smallest damping tried before a step is rejected.
    pub min_damping: f64,
    /// Early exit once the largest gridpoint step (m) falls below this.
    pub convergence_eps: f64,
    pub regularizer: RegularizerForm,
    /// Re-query correspondences before every Gauss-Newton step; otherwise
    /// once per flip.
    pub requery_each_step: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            flip_flop_iters: 10,
            gn_iters_per_flip: 2,
            pcg_max_iters: 200,
            pcg_rel_tol: 1e-5,
            step_damping: 1.0,
            min_damping: 1.0 / 16.0,
            convergence_eps: 1e-5,
            regularizer: RegularizerForm::EdgeArap,
            requery_each_step: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.flip_flop_iters == 0 || self.gn_iters_per_flip == 0 || self.pcg_max_iters == 0 {
            return Err(SolverError::InvalidConfig("iteration counts must be positive"));
        }
        if !(self.pcg_rel_tol > 0.0 && self.pcg_rel_tol < 1.0) {
            return Err(SolverError::InvalidConfig("pcg_rel_tol must lie in (0, 1)"));
        }
        if !(self.step_damping > 0.0 && self.step_damping <= 1.0) {
            return Err(SolverError::InvalidConfig("step_damping must lie in (0, 1]"));
        }
        if !(self.min_damping > 0.0 && self.min_damping <= self.step_damping) {
            return Err(SolverError::InvalidConfig("min_damping must lie in (0, step_damping]"));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(SolverError::InvalidConfig("convergence_eps must be positive"));
        }
        Ok(())
    }
}
