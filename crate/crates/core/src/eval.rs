//! Off-policy evaluation, Monte-Carlo policy values and cross-validation of
//! the bonus constant.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::TrajectoryDataset;
use crate::envs::{stream_rng, Environment};
use crate::error::{Error, Result};
use crate::policy::{DecisionRule, EpsilonGreedy, Greedy, StochasticPolicy};

/// Bonus constants tried by default during cross-validation.
pub const DEFAULT_C_GRID: [f64; 4] = [0.005, 0.001, 0.0005, 0.0001];

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_eval_episodes: usize,
}

impl OpeEstimate {
    /// Mean and standard error of per-episode values.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let m = samples.len();
        if m == 0 {
            return Err(Error::Evaluation("no episodes to evaluate".into()));
        }
        let mean = samples.iter().sum::<f64>() / m as f64;
        let std_error = if m > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { value: mean, std_error, n_eval_episodes: m })
    }
}

/// Step-wise importance sampling:
/// `V̂ = (1/m) Σ_τ Σ_h ρ_{τ,h} r_h^τ` with `ρ_{τ,h} = Π_{t≤h} π(a_t|x_t)/μ(a_t|x_t)`.
pub fn step_importance_sampling<T, B>(data: &TrajectoryDataset, target: &T, behavior: &B) -> Result<OpeEstimate>
where
    T: StochasticPolicy + ?Sized,
    B: StochasticPolicy + ?Sized,
{
    if !data.all_labeled() {
        return Err(Error::Evaluation("evaluation data must carry rewards".into()));
    }
    let per_episode = data
        .episodes()
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut rho = 1.0;
            let mut total = 0.0;
            for (t, s) in ep.iter().enumerate() {
                let h = t + 1;
                let mu = behavior.prob(h, &s.state, s.action)?;
                if !(mu > 0.0) {
                    return Err(Error::Evaluation(format!(
                        "episode {i} step {h}: behavior probability of logged action {} is zero",
                        s.action
                    )));
                }
                rho *= target.prob(h, &s.state, s.action)? / mu;
                if rho == 0.0 {
                    // Later behavior probabilities are still checked.
                    for (u, later) in ep.iter().enumerate().skip(t + 1) {
                        if !(behavior.prob(u + 1, &later.state, later.action)? > 0.0) {
                            return Err(Error::Evaluation(format!(
                                "episode {i} step {}: behavior probability of logged action {} is zero",
                                u + 1,
                                later.action
                            )));
                        }
                    }
                    break;
                }
                total += rho * s.reward.expect("labeled");
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    OpeEstimate::from_samples(&per_episode)
}

/// Step-IS of a deterministic rule, optionally softened to `ε`-greedy.
pub fn evaluate_rule<R, B>(data: &TrajectoryDataset, rule: &R, behavior: &B, epsilon: Option<f64>) -> Result<OpeEstimate>
where
    R: DecisionRule + ?Sized,
    B: StochasticPolicy + ?Sized,
{
    match epsilon {
        Some(eps) => step_importance_sampling(data, &EpsilonGreedy::new(rule, eps)?, behavior),
        None => step_importance_sampling(data, &Greedy(rule), behavior),
    }
}

/// Average expected return of `m` fresh rollouts, rollout `i` on stream `i`
/// of `seed`.
///
/// Each visited step contributes its mean reward rather than a sampled one;
/// the estimate is unbiased and has no reward noise.
pub fn mc_policy_value<E, P>(env: &E, policy: &P, m: usize, seed: u64) -> Result<OpeEstimate>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    if m == 0 {
        return Err(Error::Evaluation("Monte-Carlo evaluation needs at least one rollout".into()));
    }
    let returns = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut x = env.initial_state(&mut rng);
            let mut total = 0.0;
            for h in 1..=env.horizon() {
                let a = policy.sample(h, &x, &mut rng)?;
                total += env.mean_reward(h, &x, a);
                x = env.transition(h, &x, a, &mut rng)?;
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    OpeEstimate::from_samples(&returns)
}

/// `reference − V^π`, with `V^π` from [`mc_policy_value`].
pub fn suboptimality<E, P>(env: &E, policy: &P, reference: f64, m: usize, seed: u64) -> Result<f64>
where
    E: Environment + ?Sized,
    P: StochasticPolicy + ?Sized,
{
    Ok(reference - mc_policy_value(env, policy, m, seed)?.value)
}

#[derive(Debug, Clone, Copy)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    /// Soften greedy targets to `ε`-greedy when scoring.
    pub epsilon: Option<f64>,
}

impl CvOptions {
    pub fn new(seed: u64) -> Self {
        Self { folds: DEFAULT_FOLDS, seed, epsilon: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub chosen_c: f64,
    /// Mean held-out score per grid entry, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Episode indices of each fold, assigned by a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// K-fold selection of the bonus constant.
///
/// `fit(train, c)` trains on the labeled training folds (callers add any
/// unlabeled data themselves); the held-out fold is scored by step-IS
/// against `behavior`. The highest mean score wins; ties go to the larger
/// `c`.
pub fn cross_validate_c<F, R, B>(
    labeled: &TrajectoryDataset,
    grid: &[f64],
    behavior: &B,
    options: &CvOptions,
    fit: F,
) -> Result<CvResult>
where
    F: Fn(&TrajectoryDataset, f64) -> Result<R> + Sync,
    R: DecisionRule,
    B: StochasticPolicy + ?Sized,
{
    if grid.is_empty() {
        return Err(Error::CrossValidation("empty grid".into()));
    }
    if grid.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::CrossValidation("grid values must be finite and non-negative".into()));
    }
    if options.folds < 2 {
        return Err(Error::CrossValidation("need at least two folds".into()));
    }
    if !labeled.all_labeled() {
        return Err(Error::CrossValidation("cross-validation data must be labeled".into()));
    }
    let n = labeled.len();
    if n < options.folds {
        return Err(Error::CrossValidation(format!(
            "{n} labeled episodes cannot fill {} folds",
            options.folds
        )));
    }
    if grid.len() == 1 {
        return Ok(CvResult { chosen_c: grid[0], scores: vec![(grid[0], f64::NAN)] });
    }

    let folds = fold_assignment(n, options.folds, options.seed);
    let splits: Vec<(TrajectoryDataset, TrajectoryDataset)> = folds
        .iter()
        .enumerate()
        .map(|(k, held)| {
            let train: Vec<usize> =
                folds.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
            let mut train = train;
            train.sort_unstable();
            (labeled.subset(&train), labeled.subset(held))
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    for &c in grid {
        let fold_scores = splits
            .par_iter()
            .map(|(train, held)| {
                let rule = fit(train, c)?;
                Ok(evaluate_rule(held, &rule, behavior, options.epsilon)?.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        scores.push((c, fold_scores.iter().sum::<f64>() / fold_scores.len() as f64));
    }

    let mut best = scores[0];
    for &(c, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && c > best.0) {
            best = (c, s);
        }
    }
    Ok(CvResult { chosen_c: best.0, scores })
}
