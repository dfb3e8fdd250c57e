//! Finite-state discounted dynamic programming with on-line policy iteration.
//!
//! The crate provides the Bellman operators and exact policy evaluation
//! ([`bellman`]), classical policy iteration ([`classical`]), on-line policy
//! iteration with exploration and rollout modes ([`online`]), log
//! verification ([`verify`]), brute-force ground truth and comparison sweeps
//! ([`oracle`]), and the instance and run-log file formats ([`format`],
//! [`runlog`]).
//!
//! Library indices are 0-based; files and CLI output are 1-based.

pub mod bellman;
pub mod classical;
pub mod error;
pub mod format;
pub mod instances;
mod linalg;
pub mod model;
pub mod online;
pub mod oracle;
pub mod runlog;
pub mod verify;

pub use error::{LoadError, ModelError};
pub use format::{load_instance, save_instance, validate, InstanceDoc, ValidationReport};
pub use model::{CostVector, MdpInstance, StationaryPolicy};
pub use online::{run_online_pi, ImprovementRule, OnlineConfig, OnlineMode, OnlineRunLog};
