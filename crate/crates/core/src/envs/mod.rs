//! Synthetic environments, data collection, and the tabular exact-DP oracle.

pub mod behavior;
pub mod continuous;
pub mod tabular;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Episode, TrajectoryDataset, TrajectoryStep};
use crate::error::{Error, Result};
use crate::policy::StochasticPolicy;

pub use behavior::{behavior_policy, reference_policy, BEHAVIOR_EPSILON};
pub use continuous::{acceptance_probability, rejection_transition, EnvSpec, RewardFamily};
pub use tabular::{DpSolution, TabularEnvSpec};

/// An episodic simulator with known reward means.
pub trait Environment: Send + Sync {
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn initial_state(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn sample_reward(&self, h: usize, x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<f64>;
    fn transition(&self, h: usize, x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
    fn mean_reward(&self, h: usize, x: &[f64], a: usize) -> f64;
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One episode under `policy`; rewards are kept only when `labeled`.
pub fn rollout<E, P>(env: &E, policy: &P, labeled: bool, rng: &mut dyn RngCore) -> Result<Episode>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    let mut x = env.initial_state(rng);
    let mut episode = Vec::with_capacity(env.horizon());
    for h in 1..=env.horizon() {
        let a = policy.sample(h, &x, rng)?;
        let r = env.sample_reward(h, &x, a, rng)?;
        let next = env.transition(h, &x, a, rng)?;
        episode.push(TrajectoryStep { state: x, action: a, reward: labeled.then_some(r), next_state: next.clone() });
        x = next;
    }
    Ok(episode)
}

/// Rolls out `n_labeled + n_unlabeled` episodes, episode `i` on stream `i` of
/// `seed`, and strips rewards from the last `n_unlabeled`.
///
/// Stripped episodes still draw their rewards, so episode `i` follows the same
/// trajectory whatever the labeled count.
pub fn generate_dataset<E, P>(
    env: &E,
    policy: &P,
    n_labeled: usize,
    n_unlabeled: usize,
    seed: u64,
) -> Result<TrajectoryDataset>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    if policy.n_actions() != env.n_actions() {
        return Err(Error::config("policy and environment disagree on the action count"));
    }
    let episodes = (0..n_labeled + n_unlabeled)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            rollout(env, policy, i < n_labeled, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::new(env.horizon(), env.state_dim(), env.n_actions(), episodes)
}
