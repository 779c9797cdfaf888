//! Scenario files, experiment orchestration and report bundles for `gne-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod error;
pub mod scenario;
pub mod setup;
pub mod verify;

pub use config::{load_scenario, parse_scenario, Scenario};
pub use error::{HarnessError, Result};
pub use scenario::{run_scenario, run_to_dir, ReportBundle, Summary};
