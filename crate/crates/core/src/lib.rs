//! Multi-headed neural ensemble search.
//!
//! A shared convolutional backbone feeds `M` prediction heads whose cell
//! architectures are found by one-shot differentiable or random search.
//! The crate contains everything from the autodiff engine up to the
//! experiment harness.

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod search;
pub mod space;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
