//! Configuration, orchestration and result files for the `circlekam`
//! command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod config;
pub mod output;
pub mod run;

pub use config::{Command, ConfigError, ExperimentConfig, Format};
pub use output::{Cell, Report, Table, SCHEMA};
pub use run::{run, Failure, Options};
