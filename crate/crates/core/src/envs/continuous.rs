//! Continuous-state simulation environment with action-block features.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Bernoulli, Beta, Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{action_block_features, ActionBlockFeatures, FeatureMapPair};
use crate::link::{sigmoid, LinkFunction};

use super::{stream_rng, Environment};

/// Proposals drawn before a transition is declared degenerate.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

/// Variance of the Gaussian reward family.
pub const GAUSSIAN_REWARD_VARIANCE: f64 = 0.1;

const THETA_STREAM: u64 = u64::MAX;
const MAX_BETA_ATTEMPTS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardFamily {
    /// Bernoulli with logistic mean.
    Binomial,
    /// `Beta(s, 1−s)` with `s` the logistic mean.
    Beta,
    /// `Normal(φᵀθ, 0.1)`, identity link.
    Gaussian,
}

impl RewardFamily {
    pub fn link(self) -> LinkFunction {
        match self {
            RewardFamily::Binomial | RewardFamily::Beta => LinkFunction::Logit,
            RewardFamily::Gaussian => LinkFunction::Identity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardFamily::Binomial => "binomial",
            RewardFamily::Beta => "beta",
            RewardFamily::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binomial" | "logistic" | "bernoulli" => Ok(RewardFamily::Binomial),
            "beta" => Ok(RewardFamily::Beta),
            "gaussian" | "normal" => Ok(RewardFamily::Gaussian),
            other => Err(Error::config(format!("unknown reward family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub d: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub family: RewardFamily,
    /// `theta_star[h-1] ∈ ℝ^{d·|A|}`.
    pub theta_star: Vec<DVector<f64>>,
    pub seed: u64,
}

impl EnvSpec {
    /// Draws every `θ*ₕ` element-wise from `Uniform(−0.5, 0.5)`.
    pub fn new(d: usize, n_actions: usize, horizon: usize, family: RewardFamily, seed: u64) -> Result<Self> {
        if d == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::config("state dimension, action count and horizon must be positive"));
        }
        let mut rng = stream_rng(seed, THETA_STREAM);
        let theta_star = (0..horizon)
            .map(|_| DVector::from_fn(d * n_actions, |_, _| rng.random_range(-0.5..0.5)))
            .collect();
        Ok(Self { d, n_actions, horizon, family, theta_star, seed })
    }

    pub fn link(&self) -> LinkFunction {
        self.family.link()
    }

    pub fn features(&self) -> FeatureMapPair {
        FeatureMapPair::shared(Arc::new(ActionBlockFeatures::new(self.d, self.n_actions)))
    }

    /// `φ(x,a)ᵀθ*ₕ`.
    pub fn linear_predictor(&self, h: usize, x: &[f64], a: usize) -> f64 {
        action_block_features(x, a, self.d, self.n_actions).dot(&self.theta_star[h - 1])
    }

    fn check(&self, h: usize, x: &[f64], a: usize) -> Result<()> {
        if h == 0 || h > self.horizon || x.len() != self.d || a >= self.n_actions {
            return Err(Error::Environment(format!(
                "invalid query (h={h}, |x|={}, a={a}) for d={}, |A|={}, H={}",
                x.len(),
                self.d,
                self.n_actions,
                self.horizon
            )));
        }
        Ok(())
    }
}

/// `min(1, ⟨x·(a+1) + a/d, exp(−x′)⟩ / (Σx′·(a+1) + a))`, with negative or
/// non-finite ratios mapped to 0.
pub fn acceptance_probability(x: &[f64], a: usize, candidate: &[f64]) -> f64 {
    let d = x.len() as f64;
    let af = a as f64;
    let numerator: f64 = x.iter().zip(candidate).map(|(xi, ci)| (xi * (af + 1.0) + af / d) * (-ci).exp()).sum();
    let denominator = candidate.iter().sum::<f64>() * (af + 1.0) + af;
    let ratio = numerator / denominator;
    if ratio.is_finite() && ratio > 0.0 {
        ratio.min(1.0)
    } else {
        0.0
    }
}

/// One proposal and its accept/reject coin.
fn propose(x: &[f64], a: usize, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
    let candidate: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let alpha = acceptance_probability(x, a, &candidate);
    (rng.random::<f64>() < alpha).then_some(candidate)
}

/// Uniform proposals on `[−0.5, 0.5]^d`, accepted with [`acceptance_probability`].
pub fn rejection_transition(x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        if let Some(candidate) = propose(x, a, rng) {
            return Ok(candidate);
        }
    }
    Err(Error::Environment(format!(
        "no proposal accepted in {MAX_REJECTION_ATTEMPTS} attempts at action {a}"
    )))
}

impl Environment for EnvSpec {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn state_dim(&self) -> usize {
        self.d
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.d).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn sample_reward(&self, h: usize, x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<f64> {
        self.check(h, x, a)?;
        let u = self.linear_predictor(h, x, a);
        match self.family {
            RewardFamily::Binomial => {
                let b = Bernoulli::new(sigmoid(u)).map_err(|e| Error::Environment(e.to_string()))?;
                Ok(if b.sample(rng) { 1.0 } else { 0.0 })
            }
            RewardFamily::Beta => {
                let s = sigmoid(u);
                let beta = Beta::new(s, 1.0 - s).map_err(|e| Error::Environment(e.to_string()))?;
                // Small shape parameters can round a draw onto the boundary.
                for _ in 0..MAX_BETA_ATTEMPTS {
                    let r = beta.sample(rng);
                    if r > 0.0 && r < 1.0 {
                        return Ok(r);
                    }
                }
                Err(Error::Environment(format!("Beta({s}, {}) kept hitting the boundary", 1.0 - s)))
            }
            RewardFamily::Gaussian => {
                let normal = Normal::new(u, GAUSSIAN_REWARD_VARIANCE.sqrt())
                    .map_err(|e| Error::Environment(e.to_string()))?;
                Ok(normal.sample(rng))
            }
        }
    }

    fn transition(&self, h: usize, x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.check(h, x, a)?;
        rejection_transition(x, a, rng)
    }

    fn mean_reward(&self, h: usize, x: &[f64], a: usize) -> f64 {
        self.link().eval(self.linear_predictor(h, x, a))
    }
}
