//! 3D object proposal engine for driving scenes.
//!
//! Candidate oriented boxes are exhaustively sampled on an estimated ground
//! plane, scored in constant time per box against voxelized occupancy,
//! free-space and height-prior fields, ranked by a learned linear energy and
//! de-duplicated with greedy NMS. Proposal quality is measured with oracle
//! recall analytics.

pub mod dataset;
pub mod energy;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod ground;
pub mod learning;
pub mod sampler;

pub use energy::{ClassModel, PotentialVector, SceneGrids};
pub use geometry::{CameraCalib, OrientedBox3D, Point3, PointCloud, Rect2D};
pub use grid::{GridSpec, IntegralGrid, VoxelGrid};
pub use ground::GroundPlane;
pub use sampler::{NmsMode, ProposalList};
