//! Data-collection policies.

use crate::error::Result;
use crate::policy::{DecisionRule, EpsilonGreedy, PessimisticPolicy, UniformPolicy};
use crate::solver::{solve_gpevi, GpeviConfig};

use super::{generate_dataset, EnvSpec};

/// Probability of a uniform action under the behavior mixture.
pub const BEHAVIOR_EPSILON: f64 = 0.3;

/// Default number of uniform-policy episodes behind the reference policy.
pub const DEFAULT_PILOT_EPISODES: usize = 10_000;

const PILOT_SEED_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

/// The reference action with probability 0.7, a uniform action otherwise.
pub fn behavior_policy<P: DecisionRule>(reference: P) -> Result<EpsilonGreedy<P>> {
    EpsilonGreedy::new(reference, BEHAVIOR_EPSILON)
}

/// Surrogate for the unknown optimal policy of a continuous environment: an
/// unpenalized fit (`c_r = c_p = 0`) on uniform-policy pilot episodes.
///
/// The pilot data depend only on the environment seed, so the reference is
/// fixed per environment.
pub fn reference_policy(spec: &EnvSpec, pilot_episodes: usize) -> Result<PessimisticPolicy> {
    let uniform = UniformPolicy { n_actions: spec.n_actions };
    let pilot = generate_dataset(spec, &uniform, pilot_episodes, 0, spec.seed ^ PILOT_SEED_SALT)?;
    let config = GpeviConfig::new(spec.link(), spec.features(), 0.0);
    Ok(solve_gpevi(&pilot, &config)?.policy)
}
