use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use super::GeometryError;
use crate::Real;

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking that `rotation` is a proper rotation
    /// (orthonormal, det +1) within `1e-6`.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate(T::lit(1e-6))?;
        Ok(t)
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<T>, angle: T, translation: Vector3<T>) -> Self {
        let rotation = if axis.norm() > T::zero() {
            Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
        } else {
            Matrix3::identity()
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn validate(&self, tol: T) -> Result<(), GeometryError> {
        let finite = self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite("rigid transform"));
        }
        if !is_rotation(&self.rotation, tol) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance_to(&self, other: &Self) -> T {
        (self.translation - other.translation).norm()
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        RigidTransform {
            rotation: self.rotation.map(|v| U::lit(v.to_f64_lossy())),
            translation: self.translation.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

pub fn is_rotation<T: Real>(m: &Matrix3<T>, tol: T) -> bool {
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    err <= tol && (m.determinant() - T::one()).abs() <= tol
}

/// Angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    let c = ((r.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    let s = T::lit(0.5)
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    s.atan2(c)
}

/// Closest proper rotation to `m` in the Frobenius sense (polar factor with
/// determinant correction). Returns `None` when the SVD fails to converge.
pub fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Option<Matrix3<T>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        // flip the direction of the smallest singular value
        let k = smallest_index(&svd.singular_values);
        let mut u2 = u;
        for row in 0..3 {
            u2[(row, k)] = -u2[(row, k)];
        }
        r = u2 * v_t;
    }
    Some(r)
}

pub(crate) fn smallest_index<T: Real>(s: &Vector3<T>) -> usize {
    let mut k = 0;
    for i in 1..3 {
        if s[i] < s[k] {
            k = i;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::from_axis_angle(&Vector3::new(0.3, -1.0, 0.5), 0.7, Vector3::new(0.1, 0.2, -0.3));
        let id = t.compose(&t.inverse());
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_reflections() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn nearest_rotation_fixes_reflection() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -0.5);
        let r = nearest_rotation(&m).unwrap();
        assert!(is_rotation(&r, 1e-12));
    }

    #[test]
    fn rotation_angle_matches_construction() {
        for &a in &[0.0, 1e-4, 0.5, 2.0, 3.1] {
            let t = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), a, Vector3::zeros());
            assert_relative_eq!(rotation_angle(&t.rotation), a, epsilon = 1e-9);
        }
    }
}
