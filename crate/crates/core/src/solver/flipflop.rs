use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use super::arap::{arap_energy, arap_rhs, build_laplacian, fit_all_rotations};
use super::pcg::pcg_solve;
use super::residual::{residual_feature, residual_p2p, residual_p2s};
use super::system::assemble;
use super::{EnergyWeights, RegularizerForm, SolverConfig, SolverError};
use crate::correspond::{Correspondence, FeatureCorrespondence};
use crate::geometry::{DeformationState, StaticGrid};
use crate::Real;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet<T: Real> {
    pub points: Vec<Correspondence<T>>,
    pub features: Vec<FeatureCorrespondence<T>>,
}

/// Source of correspondences for a given deformation state.
pub trait CorrespondenceProvider<T: Real> {
    fn query(&mut self, state: &DeformationState<T>) -> CorrespondenceSet<T>;
}

impl<T: Real, F: FnMut(&DeformationState<T>) -> CorrespondenceSet<T>> CorrespondenceProvider<T> for F {
    fn query(&mut self, state: &DeformationState<T>) -> CorrespondenceSet<T> {
        self(state)
    }
}

/// Weighted energy terms; `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub p2p: f64,
    pub p2s: f64,
    pub feature: f64,
    pub regularizer: f64,
    pub total: f64,
}

/// Total energy of `state` for a fixed correspondence set. The regularizer
/// term matches `form`: `ω_r·E_reg` for the edge form, `ω_r·‖L·T - b‖²`
/// for the Laplacian form.
pub fn energy_breakdown<T: Real>(
    set: &CorrespondenceSet<T>,
    state: &DeformationState<T>,
    grid: &StaticGrid<T>,
    weights: &EnergyWeights,
    form: RegularizerForm,
) -> EnergyBreakdown {
    let (wp, ws, wf) = (weights.omega_p, weights.omega_s, weights.omega_f);
    let per: Vec<(f64, f64)> = set
        .points
        .par_iter()
        .map(|c| {
            let w = c.weight.to_f64_lossy();
            let r = residual_p2p(c, state).norm_squared().to_f64_lossy();
            let d = residual_p2s(c, state).to_f64_lossy();
            ((wp * w).powi(2) * r, (ws * w).powi(2) * d * d)
        })
        .collect();
    let feats: Vec<f64> = set
        .features
        .par_iter()
        .map(|f| (wf * f.weight.to_f64_lossy()).powi(2) * residual_feature(f, state).norm_squared().to_f64_lossy())
        .collect();
    let p2p = per.iter().map(|x| x.0).sum::<f64>();
    let p2s = per.iter().map(|x| x.1).sum::<f64>();
    let feature = feats.iter().sum::<f64>();
    let reg = match form {
        RegularizerForm::EdgeArap => arap_energy(state, grid).to_f64_lossy(),
        RegularizerForm::LaplacianSquared => {
            let lt = build_laplacian(grid).apply_vec3(&state.translations);
            let b = arap_rhs(state, grid);
            lt.iter().zip(&b).map(|(x, y)| (x - y).norm_squared().to_f64_lossy()).sum::<f64>()
        }
    };
    let regularizer = weights.omega_r * reg;
    EnergyBreakdown {
        p2p,
        p2s,
        feature,
        regularizer,
        total: p2p + p2s + feature + regularizer,
    }
}

/// Rotation refit of one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipRecord {
    pub cycle: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub degenerate_rotations: usize,
}

/// One Gauss-Newton translation step. Both energies are evaluated with the
/// correspondence set the step was assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub cycle: usize,
    pub step: usize,
    pub correspondences: usize,
    pub features: usize,
    pub energy_before: EnergyBreakdown,
    pub energy_after: EnergyBreakdown,
    pub damping: f64,
    pub accepted: bool,
    pub pcg_iterations: usize,
    pub pcg_relative_residual: f64,
    pub max_step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T: Real> {
    pub state: DeformationState<T>,
    pub flips: Vec<FlipRecord>,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
}

fn stepped<T: Real>(state: &DeformationState<T>, delta: &[T], scale: T) -> DeformationState<T> {
    let mut next = state.clone();
    next.translations.par_iter_mut().enumerate().for_each(|(i, t)| {
        *t += Vector3::new(delta[3 * i], delta[3 * i + 1], delta[3 * i + 2]) * scale;
    });
    next
}

/// Alternates closed-form rotation fits (flip) with Gauss-Newton steps on the
/// gridpoint translations (flop). The global transform stays fixed. A step
/// that raises the energy is retried with half the damping down to
/// `min_damping`, then discarded.
pub fn flip_flop_solve<T: Real, P: CorrespondenceProvider<T>>(
    provider: &mut P,
    initial: DeformationState<T>,
    grid: &StaticGrid<T>,
    weights: &EnergyWeights,
    cfg: &SolverConfig,
) -> Result<SolveReport<T>, SolverError> {
    weights.validate()?;
    cfg.validate()?;
    initial.validate(grid)?;
    let form = cfg.regularizer;
    let mut state = initial;
    let mut flips = Vec::with_capacity(cfg.flip_flop_iters);
    let mut steps = Vec::with_capacity(cfg.flip_flop_iters * cfg.gn_iters_per_flip);
    let mut set = provider.query(&state);
    let mut converged = false;

    'cycles: for cycle in 0..cfg.flip_flop_iters {
        let before = energy_breakdown(&set, &state, grid, weights, form).total;
        let fits = fit_all_rotations(&state, grid);
        let mut refit = state.clone();
        for (r, f) in refit.rotations.iter_mut().zip(&fits) {
            *r = f.rotation;
        }
        let after = energy_breakdown(&set, &refit, grid, weights, form).total;
        // the edge form is minimized exactly; the Laplacian form may not be
        let take = form == RegularizerForm::EdgeArap || after <= before;
        if take {
            state = refit;
        }
        let flip = FlipRecord {
            cycle,
            energy_before: before,
            energy_after: if take { after } else { before },
            degenerate_rotations: fits.iter().filter(|f| f.degenerate).count(),
        };
        log::trace!("flip {}", serde_json::to_string(&flip).unwrap_or_default());
        flips.push(flip);

        for step in 0..cfg.gn_iters_per_flip {
            if cfg.requery_each_step || step == 0 {
                set = provider.query(&state);
            }
            let sys = assemble(&set.points, &set.features, &state, grid, weights, form);
            let sol = pcg_solve(&sys, &sys.rhs, cfg.pcg_max_iters, T::lit(cfg.pcg_rel_tol))?;
            let e0 = energy_breakdown(&set, &state, grid, weights, form);
            let max_delta = sol
                .solution
                .chunks(3)
                .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().to_f64_lossy())
                .fold(0.0, f64::max);

            let mut damping = cfg.step_damping;
            let mut record = StepRecord {
                cycle,
                step,
                correspondences: set.points.len(),
                features: set.features.len(),
                energy_before: e0,
                energy_after: e0,
                damping,
                accepted: false,
                pcg_iterations: sol.iterations,
                pcg_relative_residual: sol.relative_residual.to_f64_lossy(),
                max_step: 0.0,
            };
            loop {
                let candidate = stepped(&state, &sol.solution, T::lit(damping));
                let e1 = energy_breakdown(&set, &candidate, grid, weights, form);
                if !e1.total.is_finite() {
                    return Err(SolverError::NonFinite("energy"));
                }
                if e1.total <= e0.total {
                    state = candidate;
                    record.energy_after = e1;
                    record.damping = damping;
                    record.accepted = true;
                    record.max_step = damping * max_delta;
                    break;
                }
                damping *= 0.5;
                if damping < cfg.min_damping {
                    break;
                }
            }
            log::trace!("step {}", serde_json::to_string(&record).unwrap_or_default());
            steps.push(record);
            if record.max_step < cfg.convergence_eps {
                converged = true;
                break 'cycles;
            }
        }
    }
    Ok(SolveReport {
        state,
        flips,
        steps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{anchor_point, RigidTransform, TrilinearAnchor};

    fn grid() -> StaticGrid<f64> {
        StaticGrid::new(Vector3::new(-0.06, -0.06, -0.03), 0.02, [7, 7, 4]).unwrap()
    }

    fn plane_samples(g: &StaticGrid<f64>) -> Vec<(TrilinearAnchor<f64>, Vector3<f64>)> {
        let mut out = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let p = Vector3::new(-0.05 + i as f64 * 0.0025, -0.05 + j as f64 * 0.0025, 0.0);
                out.push((anchor_point(&p, g).unwrap(), p));
            }
        }
        out
    }

    fn bump(p: &Vector3<f64>) -> Vector3<f64> {
        let r2 = p.x * p.x + p.y * p.y;
        p + Vector3::new(0.0, 0.0, 0.01 * (-r2 / (2.0 * 0.02f64.powi(2))).exp())
    }

    fn provider<'a>(
        samples: &'a [(TrilinearAnchor<f64>, Vector3<f64>)],
        target: impl Fn(&Vector3<f64>) -> Vector3<f64> + 'a,
        keep: impl Fn(&Vector3<f64>) -> bool + 'a,
    ) -> impl FnMut(&DeformationState<f64>) -> CorrespondenceSet<f64> + 'a {
        move |_s: &DeformationState<f64>| CorrespondenceSet {
            points: samples
                .iter()
                .filter(|(_, p)| keep(p))
                .enumerate()
                .map(|(k, (a, p))| Correspondence {
                    vertex: k,
                    anchor: *a,
                    model_point: *p,
                    model_normal: Vector3::z(),
                    observed_point: target(p),
                    observed_normal: Vector3::z(),
                    weight: 1.0,
                })
                .collect(),
            features: Vec::new(),
        }
    }

    #[test]
    fn fixed_point_when_observation_matches() {
        let g = grid();
        let samples = plane_samples(&g);
        let mut prov = provider(&samples, |p| *p, |_| true);
        let s0 = DeformationState::rest(&g, RigidTransform::identity());
        let out = flip_flop_solve(&mut prov, s0.clone(), &g, &EnergyWeights::default(), &SolverConfig::default()).unwrap();
        assert!(out.converged);
        for (a, b) in out.state.translations.iter().zip(&s0.translations) {
            assert!((a - b).norm() < 1e-5);
        }
    }

    #[test]
    fn gaussian_bump_recovered() {
        let g = grid();
        let samples = plane_samples(&g);
        let mut prov = provider(&samples, bump, |_| true);
        let w = EnergyWeights { omega_p: 1.0, omega_s: 0.0, omega_f: 0.0, omega_r: 0.05 };
        let cfg = SolverConfig { flip_flop_iters: 20, pcg_rel_tol: 1e-8, pcg_max_iters: 1000, ..Default::default() };
        let out = flip_flop_solve(&mut prov, DeformationState::rest(&g, RigidTransform::identity()), &g, &w, &cfg).unwrap();
        let mse = samples
            .iter()
            .map(|(a, p)| (out.state.deform(a) - bump(p)).norm_squared())
            .sum::<f64>()
            / samples.len() as f64;
        assert!(mse.sqrt() < 0.001, "rms {}", mse.sqrt());
        for s in &out.steps {
            assert!(s.energy_after.total <= s.energy_before.total + 1e-12);
        }
        for f in &out.flips {
            assert!(f.energy_after <= f.energy_before + 1e-12);
        }
    }

    #[test]
    fn hidden_half_stays_rigid() {
        let g = grid();
        let samples = plane_samples(&g);
        let lift = |p: &Vector3<f64>| p + Vector3::new(0.0, 0.0, 0.004 + 0.05 * p.x.max(0.0));
        let visible = |p: &Vector3<f64>| p.x < 0.0;
        let cfg = SolverConfig { flip_flop_iters: 10, pcg_rel_tol: 1e-8, pcg_max_iters: 1000, ..Default::default() };
        let s0 = DeformationState::rest(&g, RigidTransform::identity());
        let w = EnergyWeights { omega_p: 1.0, omega_s: 0.0, omega_f: 0.0, omega_r: 0.05 };
        let reg = flip_flop_solve(&mut provider(&samples, lift, visible), s0.clone(), &g, &w, &cfg).unwrap();
        let w_weak = EnergyWeights { omega_r: 1e-7, ..w };
        let weak = flip_flop_solve(&mut provider(&samples, lift, visible), s0, &g, &w_weak, &cfg).unwrap();
        let hidden: Vec<usize> = (0..g.len()).filter(|&i| g.position(i).x > 0.01).collect();
        let hidden_energy = |s: &DeformationState<f64>| {
            hidden
                .iter()
                .map(|&i| {
                    g.neighbors(i)
                        .map(|j| ((s.translations[i] - s.translations[j]) - s.rotations[i] * (g.position(i) - g.position(j))).norm_squared())
                        .sum::<f64>()
                })
                .sum::<f64>()
        };
        assert!(hidden_energy(&reg.state) <= hidden_energy(&weak.state));
    }
}
