use nalgebra::{Matrix3, RowVector3, Vector3};

use crate::correspond::{Correspondence, FeatureCorrespondence};
use crate::geometry::{DeformationState, TrilinearAnchor};
use crate::Real;

/// Deformed model point minus observed point.
pub fn residual_p2p<T: Real>(c: &Correspondence<T>, state: &DeformationState<T>) -> Vector3<T> {
    state.deform(&c.anchor) - c.observed_point
}

/// Signed distance of the deformed model point from the observed tangent
/// plane, measured along the observed normal.
pub fn residual_p2s<T: Real>(c: &Correspondence<T>, state: &DeformationState<T>) -> T {
    c.observed_normal.dot(&(state.deform(&c.anchor) - c.observed_point))
}

pub fn residual_feature<T: Real>(f: &FeatureCorrespondence<T>, state: &DeformationState<T>) -> Vector3<T> {
    state.deform(&f.anchor) - f.observed_point
}

/// `∂(scale·r)/∂t_i = scale·α_i·R` for every anchored gridpoint of a
/// vector-valued residual (point-to-point and feature).
pub fn jacobian_point_rows<T: Real>(
    anchor: &TrilinearAnchor<T>,
    scale: T,
    state: &DeformationState<T>,
) -> [(usize, Matrix3<T>); 8] {
    let r = state.global.rotation * scale;
    std::array::from_fn(|k| (anchor.corners[k], r * anchor.weights[k]))
}

/// `∂(scale·d)/∂t_i = scale·α_i·nᵀR` for the point-to-plane residual.
pub fn jacobian_plane_rows<T: Real>(
    anchor: &TrilinearAnchor<T>,
    normal: &Vector3<T>,
    scale: T,
    state: &DeformationState<T>,
) -> [(usize, RowVector3<T>); 8] {
    let row = normal.transpose() * state.global.rotation * scale;
    std::array::from_fn(|k| (anchor.corners[k], row * anchor.weights[k]))
}
