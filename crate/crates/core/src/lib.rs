//! Model selection for stochastic linear contextual bandits.
//!
//! Nested feature maps `φ^1 ⊂ … ⊂ φ^M`, a residual-variance test that decides
//! when to move to a richer class, and the learners and simulation harness
//! around it.

pub mod environment;
pub mod error;
pub mod harness;
pub mod learners;
pub mod linalg;
pub mod modcb;
pub mod residual;
pub mod util;

pub use error::{Error, Result};
