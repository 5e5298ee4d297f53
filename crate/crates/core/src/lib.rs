//! Formal Fefferman-Graham expansions of asymptotically de Sitter vacuum metrics.

pub mod error;
pub mod grid;
mod linalg;
pub mod series;
pub mod frame;
pub mod indicial;
pub mod poly;
pub mod recursion;
pub mod verify;

pub use error::{FgError, Result};
