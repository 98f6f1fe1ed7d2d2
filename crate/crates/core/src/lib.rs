pub mod analysis;
pub mod assembly;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod multigrid;
pub mod quadrature;
pub mod saddle;
pub mod vtk;
pub mod space;

pub use error::{Error, Result};
