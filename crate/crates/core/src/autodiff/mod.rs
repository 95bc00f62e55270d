//! Reverse-mode differentiation over a recorded operation graph.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, Var, BCE_PROB_CLAMP, SDB_EXP_CLAMP};
