//! Joint task offloading, CPU allocation and trajectory control for
//! multi-UAV edge computing.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod cost;
pub mod error;
pub mod flow;
pub mod harness;
pub mod joint;
pub mod offload;
pub mod resource;
pub mod scenario;
pub mod trajectory;

pub use error::{ConfigError, SolveError};
