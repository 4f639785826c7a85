use nalgebra::Vector3;
use rayon::prelude::*;

use super::{GeometryError, TriangleMesh};
use crate::Real;

/// Axis offsets of the 6-neighborhood, in the order neighbors are reported.
const AXIS_STEPS: [(usize, bool); 6] = [(0, false), (0, true), (1, false), (1, true), (2, false), (2, true)];

/// Equally spaced lattice holding the rest positions of the deformation
/// gridpoints. Gridpoint `(ix, iy, iz)` has linear index `ix + nx·(iy + ny·iz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGrid<T: Real> {
    origin: Vector3<T>,
    spacing: T,
    dims: [usize; 3],
}

impl<T: Real> StaticGrid<T> {
    pub fn new(origin: Vector3<T>, spacing: T, dims: [usize; 3]) -> Result<Self, GeometryError> {
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(GeometryError::NonPositiveSpacing);
        }
        if dims.contains(&0) {
            return Err(GeometryError::EmptyGrid);
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite("grid origin"));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
        })
    }

    pub fn origin(&self) -> Vector3<T> {
        self.origin
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Number of gridpoints `|G|`.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<T> {
        let [x, y, z] = self.coords(i);
        self.position_of(x, y, z)
    }

    #[inline]
    pub fn position_of(&self, ix: usize, iy: usize, iz: usize) -> Vector3<T> {
        self.origin
            + Vector3::new(
                T::from_usize_lossy(ix),
                T::from_usize_lossy(iy),
                T::from_usize_lossy(iz),
            ) * self.spacing
    }

    /// Rest positions `t̂_i` of all gridpoints, in index order.
    pub fn positions(&self) -> Vec<Vector3<T>> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    /// Axis-aligned box spanned by the lattice.
    pub fn bounds(&self) -> (Vector3<T>, Vector3<T>) {
        let d = self.dims;
        (self.origin, self.position_of(d[0] - 1, d[1] - 1, d[2] - 1))
    }

    pub fn contains(&self, p: &Vector3<T>) -> bool {
        let (lo, hi) = self.bounds();
        let eps = self.spacing * T::lit(1e-9);
        (0..3).all(|k| p[k] >= lo[k] - eps && p[k] <= hi[k] + eps)
    }

    /// Axis-adjacent gridpoints of `i`, truncated at the lattice boundary.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.coords(i);
        AXIS_STEPS.iter().filter_map(move |&(axis, up)| {
            let mut n = c;
            if up {
                if c[axis] + 1 >= self.dims[axis] {
                    return None;
                }
                n[axis] += 1;
            } else {
                if c[axis] == 0 {
                    return None;
                }
                n[axis] -= 1;
            }
            Some(self.index(n[0], n[1], n[2]))
        })
    }

    /// Every undirected lattice edge `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|i| self.neighbors(i).filter(move |&j| j > i).map(move |j| (i, j)))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> StaticGrid<U> {
        StaticGrid {
            origin: self.origin.map(|v| U::lit(v.to_f64_lossy())),
            spacing: U::lit(self.spacing.to_f64_lossy()),
            dims: self.dims,
        }
    }
}

/// The axis-adjacent gridpoints of `i` (6 in the interior, 5/4/3 on faces,
/// edges and corners).
pub fn grid_neighborhood<T: Real>(i: usize, grid: &StaticGrid<T>) -> Result<Vec<usize>, GeometryError> {
    if i >= grid.len() {
        return Err(GeometryError::IndexOutOfRange { index: i, len: grid.len() });
    }
    Ok(grid.neighbors(i).collect())
}

/// Smallest lattice of the given spacing that encloses the mesh bounding box
/// grown by `margin_cells` cells on every side. The slack left over by rounding
/// up is split evenly between both sides of each axis.
pub fn build_static_grid<T: Real>(
    mesh: &TriangleMesh<T>,
    spacing: T,
    margin_cells: usize,
) -> Result<StaticGrid<T>, GeometryError> {
    if !(spacing > T::zero()) || !spacing.is_finite() {
        return Err(GeometryError::NonPositiveSpacing);
    }
    let (lo, hi) = mesh.bounding_box().ok_or(GeometryError::EmptyMesh)?;
    let margin = spacing * T::from_usize_lossy(margin_cells);
    let lo = lo.add_scalar(-margin);
    let hi = hi.add_scalar(margin);
    let mut dims = [0usize; 3];
    let mut origin = Vector3::zeros();
    for k in 0..3 {
        let extent = hi[k] - lo[k];
        let ratio = (extent / spacing - T::lit(1e-9)).ceil();
        let cells = ratio.to_f64_lossy().max(1.0) as usize;
        dims[k] = cells + 1;
        let span = spacing * T::from_usize_lossy(cells);
        origin[k] = (lo[k] + hi[k]) * T::lit(0.5) - span * T::lit(0.5);
    }
    StaticGrid::new(origin, spacing, dims)
}

/// Spacing for which [`build_static_grid`] yields roughly `target_points`
/// gridpoints (bisection on the spacing; the count is monotone in it).
pub fn spacing_for_point_count<T: Real>(
    mesh: &TriangleMesh<T>,
    target_points: usize,
    margin_cells: usize,
) -> Result<T, GeometryError> {
    let (lo, hi) = mesh.bounding_box().ok_or(GeometryError::EmptyMesh)?;
    let diag = (hi - lo).norm().max(T::lit(1e-6));
    let count = |s: T| build_static_grid(mesh, s, margin_cells).map(|g| g.len());
    let mut small = diag * T::lit(1e-4);
    let mut large = diag * T::lit(2.0);
    for _ in 0..80 {
        let mid = (small * large).sqrt();
        if count(mid)? > target_points {
            small = mid;
        } else {
            large = mid;
        }
    }
    let (cs, cl) = (count(small)?, count(large)?);
    let ds = cs.abs_diff(target_points);
    let dl = cl.abs_diff(target_points);
    Ok(if ds < dl { small } else { large })
}

/// Trilinear binding of a point to the 8 corners of one grid cell.
///
/// Corner `k` sits at cell offset `(k & 1, (k >> 1) & 1, (k >> 2) & 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrilinearAnchor<T: Real> {
    pub cell: [usize; 3],
    pub corners: [usize; 8],
    pub weights: [T; 8],
}

impl<T: Real> TrilinearAnchor<T> {
    /// `Σ α_k f(corner_k)`.
    #[inline]
    pub fn blend(&self, mut f: impl FnMut(usize) -> Vector3<T>) -> Vector3<T> {
        let mut acc = Vector3::zeros();
        for k in 0..8 {
            if self.weights[k] != T::zero() {
                acc += f(self.corners[k]) * self.weights[k];
            }
        }
        acc
    }

    /// Reconstruction over the undeformed lattice, `Σ α_i t̂_i`.
    pub fn rest_position(&self, grid: &StaticGrid<T>) -> Vector3<T> {
        self.blend(|i| grid.position(i))
    }
}

/// Computes the trilinear weights of `p` inside its grid cell. Points lying
/// exactly on a shared cell face belong to the lower-index cell.
pub fn anchor_point<T: Real>(p: &Vector3<T>, grid: &StaticGrid<T>) -> Result<TrilinearAnchor<T>, GeometryError> {
    if grid.dims.iter().any(|&d| d < 2) {
        return Err(GeometryError::EmptyGrid);
    }
    if !p.iter().all(|c| c.is_finite()) || !grid.contains(p) {
        return Err(GeometryError::PointOutsideGrid);
    }
    let mut cell = [0usize; 3];
    let mut frac = [T::zero(); 3];
    for k in 0..3 {
        let f = (p[k] - grid.origin[k]) / grid.spacing;
        let c = (f.ceil().to_f64_lossy() as i64 - 1).clamp(0, grid.dims[k] as i64 - 2) as usize;
        cell[k] = c;
        frac[k] = (f - T::from_usize_lossy(c)).clamp(T::zero(), T::one());
    }
    let mut corners = [0usize; 8];
    let mut weights = [T::zero(); 8];
    for k in 0..8 {
        let d = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
        corners[k] = grid.index(cell[0] + d[0], cell[1] + d[1], cell[2] + d[2]);
        let mut w = T::one();
        for a in 0..3 {
            w *= if d[a] == 1 { frac[a] } else { T::one() - frac[a] };
        }
        weights[k] = w;
    }
    Ok(TrilinearAnchor {
        cell,
        corners,
        weights,
    })
}

/// One anchor per mesh vertex, in vertex order.
pub fn bind_mesh<T: Real>(mesh: &TriangleMesh<T>, grid: &StaticGrid<T>) -> Result<Vec<TrilinearAnchor<T>>, GeometryError> {
    mesh.vertices()
        .par_iter()
        .enumerate()
        .map(|(i, v)| anchor_point(v, grid).map_err(|_| GeometryError::VertexOutsideGrid { vertex: i }))
        .collect()
}
