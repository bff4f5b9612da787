pub mod analyzer;
pub mod error;
pub mod geometry;
pub mod matlib;
pub mod model;
pub mod ode;
pub mod riccati;

pub use error::{Error, Result};
