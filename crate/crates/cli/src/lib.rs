//! Train/test/analyze/reproduce pipeline behind the `perspective` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod svg;

pub use config::RunConfig;
pub use error::CliError;
