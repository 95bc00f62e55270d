//! Crowd counting with a two-column fusion network, steep differentiable
//! binarization heads and intermediate supervision, on top of a small
//! reverse-mode autodiff engine.

pub mod autodiff;
pub mod config;
pub mod density;
pub mod error;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Shape, Tensor};
