//! Surface and deformation model.
//!
//! Object surfaces are triangle meshes. Deformations live on an equally
//! spaced lattice of gridpoints ([`StaticGrid`]); every mesh vertex is bound
//! to the 8 corners of its enclosing cell by trilinear weights
//! ([`TrilinearAnchor`]), so the deformed position of any anchored point is
//! `R [Σ α_i t_i] + t` for the current [`DeformationState`].

mod grid;
mod mesh;
pub mod ply;
mod state;
mod transform;

pub use grid::{
    anchor_point, bind_mesh, build_static_grid, grid_neighborhood, spacing_for_point_count, StaticGrid,
    TrilinearAnchor,
};
pub use mesh::TriangleMesh;
#[cfg(test)]
pub(crate) use mesh::face_normal;
pub use state::{deform_point, DeformationState};
pub use transform::{is_rotation, nearest_rotation, rotation_angle, RigidTransform};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("grid spacing must be positive and finite")]
    NonPositiveSpacing,
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("grid needs at least two gridpoints along every axis")]
    EmptyGrid,
    #[error("point lies outside the grid box")]
    PointOutsideGrid,
    #[error("mesh vertex {vertex} lies outside the grid box")]
    VertexOutsideGrid { vertex: usize },
    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("triangle {triangle} references a missing vertex")]
    TriangleIndexOutOfRange { triangle: usize },
    #[error("mesh has vertices but no non-degenerate triangle")]
    DegenerateMesh,
    #[error("vertex {vertex} has no usable normal")]
    IsolatedVertex { vertex: usize },
    #[error("{normals} normals given for {vertices} vertices")]
    NormalCountMismatch { vertices: usize, normals: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not a proper rotation")]
    InvalidRotation,
    #[error("gridpoint {index} carries an invalid rotation")]
    InvalidGridRotation { index: usize },
    #[error("state holds {translations} translations / {rotations} rotations, grid has {expected} points")]
    StateSizeMismatch {
        expected: usize,
        translations: usize,
        rotations: usize,
    },
    #[error("malformed polygon file: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
