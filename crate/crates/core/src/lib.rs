//! Density matching reward learning.
//!
//! Learns a reward from demonstrations by estimating the expert's
//! stationary state-action density and choosing the reward that best
//! matches it, either exactly over a finite space ([`reward::solve_discrete`])
//! or in closed form over a kernel expansion ([`reward::fit_kdmrl`]).
//!
//! Two benches exercise the learned rewards: a gridworld MDP scored by
//! expected value difference ([`gridworld`]) and a multi-lane driving
//! simulator controlled by receding-horizon search ([`track`]).

pub mod demo;
pub mod density;
pub mod error;
pub mod gridworld;
pub mod metrics;
pub mod oracle;
pub mod reward;
pub mod rng;
pub mod track;

pub use demo::{DemoSet, Episode};
pub use density::{DensityEstimate, KernelParams, Standardizer};
pub use error::{Error, Result};
pub use reward::{DiscreteDistribution, DiscreteReward, KdmrlParams, RewardModel};
