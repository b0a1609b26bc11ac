//! Minimal reverse-mode differentiation engine.

pub mod conv;
pub mod gradcheck;
pub mod graph;

pub use conv::ConvSpec;
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Graph, Var};
