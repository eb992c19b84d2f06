//! Command-line surface and HTTP tuning API for `panelguard`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod error;
pub mod serve;

pub use error::{CliError, CliResult};
