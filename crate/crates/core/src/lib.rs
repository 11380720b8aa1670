//! Offline domain randomization: fitting simulator parameter distributions
//! to offline transition data and measuring the resulting sim-to-real gap.

// Validation uses negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cmaes;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod fitting;
pub mod gap;
pub mod gaussian;
pub mod likelihood;
pub mod rng;
pub mod simulators;
pub mod stats;

pub use cmaes::{optimize, CmaConfig, OptimResult};
pub use consistency::{consistency_sweep, SweepConfig, SweepReport};
pub use dataset::{BehaviorPolicy, OfflineDataset, ResetDistribution, Transition};
pub use error::{OdrError, Result};
pub use fitting::{fit, FitConfig, FitResult};
pub use gap::{bayes_optimal_policy, udr_vs_odr_report, value_iteration, DiscretePrior, GapReport};
pub use gaussian::{DiagonalGaussian, ParamBox};
pub use likelihood::{ObjectiveConfig, ObjectiveKind};
pub use simulators::{FamilySpec, FiniteMdpClass, PointMassSim, SimulatorFamily, TabularMdp};
