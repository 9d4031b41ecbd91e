//! Element-local dense linear algebra expressions for hybridized and
//! statically condensed finite element methods on triangles.

#![allow(clippy::needless_range_loop, clippy::needless_late_init)]

pub mod dense;
pub mod error;
pub mod fem;
pub mod forms;
pub mod mesh;
pub mod postprocess;
pub mod precon;
pub mod slate;
pub mod solvers;
pub mod vtk;

pub use error::{Error, Result};
