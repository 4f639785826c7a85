use nalgebra::{Matrix3, Vector3};

use super::{nearest_rotation, transform::is_rotation, GeometryError, RigidTransform, StaticGrid, TrilinearAnchor};
use crate::Real;

/// Unknowns of the deformation estimate: one global rigid transform plus a
/// translation `t_i` and rotation `R_i` per gridpoint.
///
/// Deformed gridpoint positions `t_i` live in the reference (model) frame;
/// the global transform maps them into the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState<T: Real> {
    pub global: RigidTransform<T>,
    pub translations: Vec<Vector3<T>>,
    pub rotations: Vec<Matrix3<T>>,
}

impl<T: Real> DeformationState<T> {
    /// Undeformed state: `t_i = t̂_i`, `R_i = I`.
    pub fn rest(grid: &StaticGrid<T>, global: RigidTransform<T>) -> Self {
        Self {
            global,
            translations: grid.positions(),
            rotations: vec![Matrix3::identity(); grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.translations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.translations.is_empty()
    }

    pub fn validate(&self, grid: &StaticGrid<T>) -> Result<(), GeometryError> {
        if self.translations.len() != grid.len() || self.rotations.len() != grid.len() {
            return Err(GeometryError::StateSizeMismatch {
                expected: grid.len(),
                translations: self.translations.len(),
                rotations: self.rotations.len(),
            });
        }
        self.global.validate(T::lit(1e-6))?;
        if self.translations.iter().any(|t| !t.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite("gridpoint translation"));
        }
        let tol = T::lit(1e-5);
        if let Some(i) = self.rotations.iter().position(|r| !is_rotation(r, tol)) {
            return Err(GeometryError::InvalidGridRotation { index: i });
        }
        Ok(())
    }

    /// `Σ α_i t_i` in the reference frame, before the global transform.
    #[inline]
    pub fn local_point(&self, anchor: &TrilinearAnchor<T>) -> Vector3<T> {
        anchor.blend(|i| self.translations[i])
    }

    /// Deformed camera-frame position `R[Σ α_i t_i] + t` without index checks.
    #[inline]
    pub fn deform(&self, anchor: &TrilinearAnchor<T>) -> Vector3<T> {
        self.global.apply(&self.local_point(anchor))
    }

    /// Rotates a rest-frame normal by the blended gridpoint rotations and the
    /// global rotation.
    pub fn deform_normal(&self, anchor: &TrilinearAnchor<T>, normal: &Vector3<T>) -> Vector3<T> {
        let mut m = Matrix3::zeros();
        for k in 0..8 {
            if anchor.weights[k] != T::zero() {
                m += self.rotations[anchor.corners[k]] * anchor.weights[k];
            }
        }
        let n = self.global.rotation * (m * normal);
        n.try_normalize(T::lit(1e-20)).unwrap_or(*normal)
    }

    /// Re-projects every `R_i` onto SO(3) (polar decomposition).
    pub fn reproject_rotations(&mut self) {
        for r in &mut self.rotations {
            if let Some(q) = nearest_rotation(r) {
                *r = q;
            }
        }
    }

    /// Deformation field `V_i = t̂_i - t_i`.
    pub fn field(&self, grid: &StaticGrid<T>) -> Vec<Vector3<T>> {
        self.translations
            .iter()
            .enumerate()
            .map(|(i, t)| grid.position(i) - t)
            .collect()
    }
}

/// Deformed world position of an anchored point, with index checks.
pub fn deform_point<T: Real>(anchor: &TrilinearAnchor<T>, state: &DeformationState<T>) -> Result<Vector3<T>, GeometryError> {
    let n = state.translations.len();
    if let Some(&bad) = anchor.corners.iter().find(|&&i| i >= n) {
        return Err(GeometryError::IndexOutOfRange { index: bad, len: n });
    }
    Ok(state.deform(anchor))
}
