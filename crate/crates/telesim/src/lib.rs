//! Deterministic desk-scale simulator for force-feedback teleoperation.
//!
//! A 1-DOF operator model manipulates a parametric tissue through a scaled
//! follower while a pluggable force estimator renders feedback at its own
//! rate. A windowed passivity observer/controller can stabilize the loop,
//! and post-hoc analysis reproduces transparency, stability, and stiffness
//! metrics. A small trainable network plus a data-refitting procedure close
//! the loop on estimator improvement.
//!
//! Start with the runnable examples (`cargo run --example closed_loop_run`)
//! or the `telesim` binary, which exposes the four studies as subcommands.

pub mod analysis;
pub mod config;
pub mod environment;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod filter;
pub mod neural;
pub mod passivity;
pub mod plant;
pub mod plot;
pub mod runlog;
pub mod sim;
pub mod trajectory;

pub use config::{ExperimentConfig, SimConfig};
pub use error::{Result, SimError};
pub use runlog::{LogRecord, RunLog};
pub use sim::{make_schedule, run, ControlMode, RunParams};
