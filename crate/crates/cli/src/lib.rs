//! Front end for `phs-core`: a line-oriented system-file format, the
//! built-in example systems and the `phs` commands.

// `!(x <= tol)` is used on purpose: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod builtins;
pub mod commands;
pub mod error;
pub mod sysfile;

pub use commands::{run, Cli, Command};
pub use error::CliError;
