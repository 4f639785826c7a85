//! Localization and tracking of user-defined points of interest on
//! deformable objects observed by a single depth camera.
//!
//! A reference mesh of the object is reconstructed from posed depth frames
//! ([`refmodel`]) and embedded in a regular deformation grid
//! ([`geometry`]). Every frame is turned into an organized point cloud and
//! associated with the deformed model ([`correspond`]); the grid's
//! translations and rotations are then estimated by a regularized
//! Gauss-Newton solver ([`solver`]). [`pipeline`] ties these together and
//! reports POI positions in camera and end-effector coordinates;
//! [`synthbench`] measures the result against analytic ground truth.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

// `!(x > 0)` style checks are deliberate: NaN has to fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod scalar;
mod spatial;
pub mod correspond;
pub mod geometry;
pub mod pipeline;
pub mod refmodel;
pub mod solver;
pub mod synthbench;

pub use scalar::Real;

pub type Mesh = geometry::TriangleMesh<f64>;
pub type Grid = geometry::StaticGrid<f64>;
pub type Anchor = geometry::TrilinearAnchor<f64>;
pub type State = geometry::DeformationState<f64>;
pub type Transform = geometry::RigidTransform<f64>;
pub type Tracker = pipeline::TrackerState<f64>;
pub type Library = refmodel::ModelLibrary<f64>;
