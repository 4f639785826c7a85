use nalgebra::Vector3;

use super::{GeometryError, RigidTransform};
use crate::Real;

/// Indexed triangle mesh with unit vertex normals.
///
/// Construction drops zero-area triangles and fills in missing normals from
/// area-weighted face normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T: Real> {
    vertices: Vec<Vector3<T>>,
    normals: Vec<Vector3<T>>,
    triangles: Vec<[usize; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            normals: Vec::new(),
            triangles: Vec::new(),
        }
    }

    pub fn new(
        vertices: Vec<Vector3<T>>,
        normals: Option<Vec<Vector3<T>>>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite("mesh vertex"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(GeometryError::TriangleIndexOutOfRange { triangle: t });
            }
        }
        let area_eps = T::lit(1e-30);
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|tri| {
                tri[0] != tri[1]
                    && tri[1] != tri[2]
                    && tri[0] != tri[2]
                    && face_normal(&vertices, tri).norm_squared() > area_eps
            })
            .collect();
        if n > 0 && triangles.is_empty() {
            return Err(GeometryError::DegenerateMesh);
        }

        let mut accum = vec![Vector3::zeros(); n];
        for tri in &triangles {
            // cross product length is twice the area
            let fnrm = face_normal(&vertices, tri);
            for &i in tri {
                accum[i] += fnrm;
            }
        }
        let given = match normals {
            Some(ns) => {
                if ns.len() != n {
                    return Err(GeometryError::NormalCountMismatch {
                        vertices: n,
                        normals: ns.len(),
                    });
                }
                Some(ns)
            }
            None => None,
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let candidate = given.as_ref().map(|g| g[i]).filter(|v| v.iter().all(|c| c.is_finite()));
            let nrm = match candidate.and_then(|v| v.try_normalize(T::lit(1e-20))) {
                Some(u) => u,
                None => accum[i]
                    .try_normalize(T::lit(1e-30))
                    .ok_or(GeometryError::IsolatedVertex { vertex: i })?,
            };
            out.push(nrm);
        }
        Ok(Self {
            vertices,
            normals: out,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Vector3<T>] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Vector3<T>] {
        &self.normals
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Axis-aligned bounding box `(min, max)`, `None` for an empty mesh.
    pub fn bounding_box(&self) -> Option<(Vector3<T>, Vector3<T>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    pub fn centroid(&self) -> Option<Vector3<T>> {
        if self.vertices.is_empty() {
            return None;
        }
        let sum = self.vertices.iter().fold(Vector3::zeros(), |a, v| a + v);
        Some(sum / T::from_usize_lossy(self.vertices.len()))
    }

    pub fn transformed(&self, pose: &RigidTransform<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| pose.apply(v)).collect(),
            normals: self.normals.iter().map(|n| pose.apply_vector(n)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Replaces vertex positions, recomputing normals from the new geometry.
    pub fn with_vertices(&self, vertices: Vec<Vector3<T>>) -> Result<Self, GeometryError> {
        Self::new(vertices, None, self.triangles.clone())
    }

    /// Drops vertices no triangle references, keeping the remaining order.
    pub fn without_unreferenced(self) -> Self {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        if used.iter().all(|&u| u) {
            return self;
        }
        let mut remap = vec![usize::MAX; used.len()];
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = vertices.len();
                vertices.push(self.vertices[i]);
                normals.push(self.normals[i]);
            }
        }
        let triangles = self.triangles.iter().map(|t| t.map(|i| remap[i])).collect();
        Self {
            vertices,
            normals,
            triangles,
        }
    }

    /// Euler characteristic `V - E + F` (edges counted once per unordered pair).
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    pub fn surface_area(&self) -> T {
        self.triangles
            .iter()
            .fold(T::zero(), |a, t| a + face_normal(&self.vertices, t).norm() * T::lit(0.5))
    }
}

#[inline]
pub(crate) fn face_normal<T: Real>(v: &[Vector3<T>], tri: &[usize; 3]) -> Vector3<T> {
    (v[tri[1]] - v[tri[0]]).cross(&(v[tri[2]] - v[tri[0]]))
}
