//! Geometry side of the toolkit: mesh ingestion and queries, watertight
//! field generation, SDF training-sample production, and rendering-based
//! quality filters.

pub mod bvh;
pub mod components;
pub mod fieldgen;
pub mod grid;
pub mod io;
pub mod mc;
pub mod mesh;
pub mod render;
pub mod metrics;
pub mod sample;
pub mod shapes;

pub use bvh::DistanceAccelerator;
pub use components::{connected_components, ComponentLabeling};
pub use mesh::{Aabb, TriangleMesh};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum GeomError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("point set is empty")]
    EmptySet,
    #[error("triangle {triangle} references a vertex outside 0..{vertex_count}")]
    IndexOutOfRange { triangle: usize, vertex_count: usize },
    #[error("normal is not unit length")]
    NonUnitNormal,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("iso-surface not crossed")]
    EmptySurface,
    #[error("unknown component {0}")]
    UnknownComponent(usize),
    #[error("empty mask")]
    EmptyMask,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
