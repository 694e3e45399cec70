//! Iterative hybridized discontinuous Galerkin (iHDG) solver.
//!
//! The solver alternates independent element-local solves with face-local
//! trace updates (a block Gauss-Seidel sweep on the augmented volume+trace
//! system) for transport, linearized shallow water and
//! convection-diffusion problems on structured box meshes.

pub mod bench;
pub mod config;
pub mod error;
pub mod experiments;
pub mod flux;
pub mod local;
pub mod mesh;
pub mod model;
pub mod oracle;
pub mod reference;
pub mod solver;
pub mod theory;
pub mod time;
pub mod trace;

pub use error::{Error, Result};
pub use flux::FluxScheme;
pub use local::Discretization;
pub use mesh::Mesh;
pub use model::Model;
pub use reference::ReferenceElement;
