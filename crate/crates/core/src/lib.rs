//! Pareto-frontier-guided optimal transport (PG-OT) for multi-reward
//! optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`pareto`] and [`store`]: dominance, frontier extraction, the frontier file.
//! * [`ot`]: log-domain Sinkhorn and fixed-plan transport gradients.
//! * [`metrics`]: joint domination / collapse rates, win rates, histogram KL.
//! * [`testbed`]: a synthetic generator with strong and weak reward models and
//!   a hidden quality oracle that makes reward hacking observable.
//! * [`detector`]: oracle and statistical reward-hacking detectors.
//! * [`trainer`]: the staged offline/online loop and the scalarized baselines.
//! * [`cli`]: the `pgot` command line.

pub mod cli;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod ot;
pub mod pareto;
pub mod rng;
pub mod store;
pub mod testbed;
pub mod trainer;

pub use error::{Error, Result};
pub use pareto::{FrontierMode, ParetoFrontier, RewardVector};
