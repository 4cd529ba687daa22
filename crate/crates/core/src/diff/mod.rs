//! Dense reverse-mode differentiation: tape, parameter store with Adam,
//! and a finite-difference gradient checker.

mod check;
mod graph;
mod store;

pub use check::{finite_diff_check, FdReport, REL_FLOOR};
pub use graph::{Gradients, Graph, NodeId};
pub use store::{AdamConfig, NamedTensor, ParamId, ParameterStore, StepStats};
