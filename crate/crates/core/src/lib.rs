//! Shared-bottom multi-task classifiers trained with vanilla scalarization,
//! per-task fairness remediation, or multi-task-aware fairness routing, plus
//! the group-fairness metrics and Pareto tooling used to compare them.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pareto;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
