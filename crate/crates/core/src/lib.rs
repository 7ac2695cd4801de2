//! Offline reinforcement learning for MDPs with generalized linear rewards
//! and linear transitions.
//!
//! Rewards are fit per step by GLM maximum likelihood, transitions by ridge
//! regression, and the two uncertainty bonuses are kept separate so that
//! reward-free episodes can sharpen the transition estimate.

pub mod baselines;
pub mod data;
pub mod envs;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod link;
pub mod numerics;
pub mod policy;
pub mod solver;

pub use data::{Episode, TrajectoryDataset, TrajectoryStep};
pub use error::{Error, Result};
pub use features::{ActionBlockFeatures, FeatureMap, FeatureMapPair, TableFeatures};
pub use link::LinkFunction;
pub use policy::{DecisionRule, PessimisticPolicy, RewardRange, StochasticPolicy};
pub use solver::{GpeviConfig, SolveReport};
