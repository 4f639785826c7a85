use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorrespondError, Observation};
use crate::geometry::{DeformationState, TriangleMesh, TrilinearAnchor};
use crate::Real;

/// Caps and gates of the projective correspondence search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightCaps {
    /// Distance (m) at which the distance sub-weight reaches 0. `None`
    /// resolves to twice the grid spacing.
    pub d_max: Option<f64>,
    /// Normal chord length at which the normal sub-weight reaches 0
    /// (1.0 corresponds to 60°).
    pub n_max: f64,
    /// Correspondences with a lower weight are dropped.
    pub min_weight: f64,
    /// Drop pairs farther apart than `d_max`.
    pub gate_distance: bool,
    /// Drop model points whose deformed normal faces away from the camera.
    pub front_facing_only: bool,
}

impl Default for WeightCaps {
    fn default() -> Self {
        Self {
            d_max: None,
            n_max: 1.0,
            min_weight: 0.01,
            gate_distance: true,
            front_facing_only: true,
        }
    }
}

/// Projective link between a deformed model vertex and the observed pixel it
/// projects onto. The same record serves the point-to-point residual and the
/// point-to-plane residual through `(observed_point, observed_normal)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Real> {
    pub vertex: usize,
    pub anchor: TrilinearAnchor<T>,
    pub model_point: Vector3<T>,
    pub model_normal: Vector3<T>,
    pub observed_point: Vector3<T>,
    pub observed_normal: Vector3<T>,
    pub weight: T,
}

/// `((w_d + w_n + w_v) / 3)²` with linear fall-off sub-weights
/// `w_d = max(0, 1 - d_pos/d_max)`, `w_n = max(0, 1 - d_normal/n_max)`,
/// `w_v = max(0, cos view_angle)`.
pub fn correspondence_weight<T: Real>(d_pos: T, d_normal: T, view_angle: T, d_max: T, n_max: T) -> Result<T, CorrespondError> {
    if ![d_pos, d_normal, view_angle, d_max, n_max].iter().all(|v| v.is_finite()) {
        return Err(CorrespondError::NonFinite("correspondence weight input"));
    }
    if !(d_max > T::zero()) || !(n_max > T::zero()) {
        return Err(CorrespondError::InvalidConfig("weight caps must be positive"));
    }
    let zero = T::zero();
    let one = T::one();
    let w_d = (one - d_pos.max(zero) / d_max).max(zero);
    let w_n = (one - d_normal.max(zero) / n_max).max(zero);
    let w_v = view_angle.cos().max(zero);
    let avg = (w_d + w_n + w_v) / T::lit(3.0);
    Ok((avg * avg).clamp(zero, one))
}

/// Deforms every model vertex, projects it into the observation and pairs it
/// with the measured point/normal at that pixel. `d_max` is the resolved
/// distance cap (see [`WeightCaps::d_max`]).
pub fn find_projective<T: Real>(
    mesh: &TriangleMesh<T>,
    anchors: &[TrilinearAnchor<T>],
    state: &DeformationState<T>,
    obs: &Observation<T>,
    caps: &WeightCaps,
    d_max: T,
) -> Vec<Correspondence<T>> {
    let n_max = T::lit(caps.n_max);
    let min_w = T::lit(caps.min_weight);
    let intr = &obs.intrinsics;
    anchors
        .par_iter()
        .enumerate()
        .filter_map(|(i, anchor)| {
            let p = state.deform(anchor);
            let (u, v) = intr.project(&p)?;
            let pa = obs.point(u, v)?;
            let na = obs.normal(u, v)?;
            let n = state.deform_normal(anchor, &mesh.normals()[i]);
            let view = -p.try_normalize(T::lit(1e-30))?;
            let cos_view = n.dot(&view).clamp(-T::one(), T::one());
            if caps.front_facing_only && cos_view <= T::zero() {
                return None;
            }
            let d_pos = (p - pa).norm();
            if caps.gate_distance && d_pos > d_max {
                return None;
            }
            let d_normal = (n - na).norm();
            let w = correspondence_weight(d_pos, d_normal, cos_view.acos(), d_max, n_max).ok()?;
            if w < min_w {
                return None;
            }
            Some(Correspondence {
                vertex: i,
                anchor: *anchor,
                model_point: p,
                model_normal: n,
                observed_point: pa,
                observed_normal: na,
                weight: w,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn weight_examples() {
        let w = correspondence_weight(0.0, 0.0, 0.0, 0.01, 1.0).unwrap();
        assert_eq!(w, 1.0);
        let w = correspondence_weight(0.02, 1.5, PI / 2.0, 0.01, 1.0).unwrap();
        assert!(w.abs() < 1e-30);
        // sub-weights (1, 1, 0.5): view angle 60°
        let w = correspondence_weight(0.0, 0.0, PI / 3.0, 0.01, 1.0).unwrap();
        assert!((w - (2.5f64 / 3.0).powi(2)).abs() < 1e-12);
        assert!((w - 0.694).abs() < 1e-3);
        assert!(correspondence_weight(f64::NAN, 0.0, 0.0, 0.01, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn weight_monotone_and_bounded(d in 0.0f64..0.05, dn in 0.0f64..2.0, a in 0.0f64..PI,
                                       dd in 0.0f64..0.01, ddn in 0.0f64..0.5, da in 0.0f64..0.5) {
            let w = correspondence_weight(d, dn, a, 0.02, 1.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
            prop_assert!(correspondence_weight(d + dd, dn, a, 0.02, 1.0).unwrap() <= w + 1e-15);
            prop_assert!(correspondence_weight(d, (dn + ddn).min(2.0), a, 0.02, 1.0).unwrap() <= w + 1e-15);
            prop_assert!(correspondence_weight(d, dn, (a + da).min(PI), 0.02, 1.0).unwrap() <= w + 1e-15);
        }
    }
}
