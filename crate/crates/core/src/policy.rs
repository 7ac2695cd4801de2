//! Policies: the fitted pessimistic policy and the small set of decision-rule
//! adapters used for data collection and evaluation.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::features::FeatureMapPair;
use crate::link::LinkFunction;
use crate::numerics::SpdFactor;

/// A deterministic policy over steps `h = 1..=H`.
pub trait DecisionRule: Send + Sync {
    fn n_actions(&self) -> usize;
    fn action(&self, h: usize, x: &[f64]) -> Result<usize>;
}

/// A (possibly) randomized policy with known action probabilities.
pub trait StochasticPolicy: Send + Sync {
    fn n_actions(&self) -> usize;
    fn prob(&self, h: usize, x: &[f64], a: usize) -> Result<f64>;
    fn sample(&self, h: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<usize>;
}

impl<T: DecisionRule + ?Sized> DecisionRule for &T {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn action(&self, h: usize, x: &[f64]) -> Result<usize> {
        (**self).action(h, x)
    }
}

impl<T: DecisionRule + ?Sized> DecisionRule for Arc<T> {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn action(&self, h: usize, x: &[f64]) -> Result<usize> {
        (**self).action(h, x)
    }
}

impl<T: StochasticPolicy + ?Sized> StochasticPolicy for &T {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn prob(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        (**self).prob(h, x, a)
    }
    fn sample(&self, h: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        (**self).sample(h, x, rng)
    }
}

impl<T: StochasticPolicy + ?Sized> StochasticPolicy for Arc<T> {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn prob(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        (**self).prob(h, x, a)
    }
    fn sample(&self, h: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        (**self).sample(h, x, rng)
    }
}

/// Point mass on a decision rule's action.
#[derive(Debug, Clone)]
pub struct Greedy<P>(pub P);

impl<P: DecisionRule> StochasticPolicy for Greedy<P> {
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }
    fn prob(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        Ok(if self.0.action(h, x)? == a { 1.0 } else { 0.0 })
    }
    fn sample(&self, h: usize, x: &[f64], _rng: &mut dyn RngCore) -> Result<usize> {
        self.0.action(h, x)
    }
}

/// Follows `rule` with probability `1 − ε`, otherwise acts uniformly at random.
///
/// With `ε = 0.3` this is the data-collection mixture; small `ε` gives a
/// softened target for importance sampling.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy<P> {
    pub rule: P,
    pub epsilon: f64,
}

impl<P: DecisionRule> EpsilonGreedy<P> {
    pub fn new(rule: P, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if rule.n_actions() == 0 {
            return Err(Error::config("empty action set"));
        }
        Ok(Self { rule, epsilon })
    }
}

impl<P: DecisionRule> StochasticPolicy for EpsilonGreedy<P> {
    fn n_actions(&self) -> usize {
        self.rule.n_actions()
    }

    fn prob(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        let uniform = self.epsilon / self.n_actions() as f64;
        let greedy = if self.rule.action(h, x)? == a { 1.0 - self.epsilon } else { 0.0 };
        Ok(greedy + uniform)
    }

    fn sample(&self, h: usize, x: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        let reference = self.rule.action(h, x)?;
        if rng.random::<f64>() < self.epsilon {
            Ok(rng.random_range(0..self.n_actions()))
        } else {
            Ok(reference)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl StochasticPolicy for UniformPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn prob(&self, _h: usize, _x: &[f64], a: usize) -> Result<f64> {
        Ok(if a < self.n_actions { 1.0 / self.n_actions as f64 } else { 0.0 })
    }
    fn sample(&self, _h: usize, _x: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rng.random_range(0..self.n_actions))
    }
}

/// A deterministic rule given by a fixed table of actions per (step, state index).
#[derive(Debug, Clone)]
pub struct TabularRule {
    pub n_actions: usize,
    /// `actions[h-1][s]`.
    pub actions: Vec<Vec<usize>>,
}

impl DecisionRule for TabularRule {
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn action(&self, h: usize, x: &[f64]) -> Result<usize> {
        let s = crate::features::state_index(x);
        self.actions
            .get(h.wrapping_sub(1))
            .and_then(|row| row.get(s))
            .copied()
            .ok_or_else(|| Error::config(format!("no action for step {h}, state {s}")))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Reward range `[g_min, g_max]` used to normalize unbounded rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRange {
    pub g_min: f64,
    pub g_max: f64,
}

impl RewardRange {
    pub fn new(g_min: f64, g_max: f64) -> Result<Self> {
        if !(g_min.is_finite() && g_max.is_finite() && g_max > g_min) {
            return Err(Error::config(format!("invalid reward range ({g_min}, {g_max})")));
        }
        Ok(Self { g_min, g_max })
    }

    pub fn unit() -> Self {
        Self { g_min: 0.0, g_max: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.g_max - self.g_min
    }

    /// `(v − g_min) / (g_max − g_min)`.
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.g_min) / (self.g_max - self.g_min)
    }

    /// Range of `g(u)` over `|u| ≤ bound`, widened by `slack·width` on each side.
    pub fn for_link(link: &LinkFunction, bound: f64, slack: f64) -> Result<Self> {
        let lo = link.eval(-bound).min(link.eval(bound));
        let hi = link.eval(-bound).max(link.eval(bound));
        let w = hi - lo;
        Self::new(lo - slack * w, hi + slack * w)
    }
}

/// Fitted reward model of one step: `θ̃ₕ`, the factor of `Σ̃ₕ(θ̃ₕ)`, and `α_r`.
#[derive(Debug, Clone)]
pub struct RewardComponent {
    pub theta: DVector<f64>,
    pub sigma_factor: SpdFactor,
    pub alpha: f64,
}

/// Fitted transition model of one step: `βₕ`, the factor of `Λₕ + λI`, and `α_p`.
#[derive(Debug, Clone)]
pub struct TransitionComponent {
    pub beta: DVector<f64>,
    pub gram_factor: SpdFactor,
    pub alpha: f64,
}

/// One step of a pessimistic policy. Linear (reward-free) baselines leave
/// `reward` empty and fold the reward into `transition`.
#[derive(Debug, Clone)]
pub struct StepModel {
    pub reward: Option<RewardComponent>,
    pub transition: TransitionComponent,
}

/// The two bonus components at a state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bonus {
    pub reward: f64,
    pub transition: f64,
}

/// Per-step pessimistic Q-functions and their greedy policy.
///
/// `Q̃ₕ(x,a) = min{ g(φ_rᵀθₕ) + φ_pᵀβₕ − Γₕ(x,a), H−h+1 }⁺`, with `g`
/// replaced by its range-normalized version when a [`RewardRange`] is set.
#[derive(Debug, Clone)]
pub struct PessimisticPolicy {
    horizon: usize,
    link: LinkFunction,
    features: FeatureMapPair,
    normalization: Option<RewardRange>,
    steps: Vec<StepModel>,
}

impl PessimisticPolicy {
    /// `steps[h-1]` describes step `h`.
    pub fn new(
        link: LinkFunction,
        features: FeatureMapPair,
        normalization: Option<RewardRange>,
        steps: Vec<StepModel>,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::config("policy needs at least one step"));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.transition.beta.len() != features.d_p() || s.transition.gram_factor.dim() != features.d_p() {
                return Err(Error::config(format!("step {}: transition dimension mismatch", i + 1)));
            }
            if let Some(r) = &s.reward {
                if r.theta.len() != features.d_r() || r.sigma_factor.dim() != features.d_r() {
                    return Err(Error::config(format!("step {}: reward dimension mismatch", i + 1)));
                }
            }
        }
        Ok(Self { horizon: steps.len(), link, features, normalization, steps })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn link(&self) -> &LinkFunction {
        &self.link
    }

    pub fn features(&self) -> &FeatureMapPair {
        &self.features
    }

    pub fn normalization(&self) -> Option<RewardRange> {
        self.normalization
    }

    pub fn step(&self, h: usize) -> &StepModel {
        &self.steps[h - 1]
    }

    pub fn steps(&self) -> &[StepModel] {
        &self.steps
    }

    fn check(&self, h: usize, x: &[f64], a: usize) -> Result<()> {
        if h == 0 || h > self.horizon {
            return Err(Error::config(format!("step {h} outside 1..={}", self.horizon)));
        }
        if x.len() != self.features.state_dim() {
            return Err(Error::config(format!(
                "state has dimension {}, feature maps expect {}",
                x.len(),
                self.features.state_dim()
            )));
        }
        if a >= self.features.n_actions() {
            return Err(Error::config(format!("action {a} outside [0, {})", self.features.n_actions())));
        }
        Ok(())
    }

    /// Estimated Bellman backup and the raw (unnormalized) bonus components.
    fn components(&self, h: usize, x: &[f64], a: usize) -> Result<(f64, Bonus)> {
        self.check(h, x, a)?;
        let step = &self.steps[h - 1];
        let phi_p = self.features.transition.eval(x, a);
        let mut estimate = phi_p.dot(&step.transition.beta);
        let transition = step.transition.alpha * step.transition.gram_factor.quad_form(&phi_p).sqrt();
        let mut reward = 0.0;
        if let Some(rc) = &step.reward {
            let phi_r = self.features.reward.eval(x, a);
            let u = phi_r.dot(&rc.theta);
            let mean = self.link.eval(u);
            let mean = match self.normalization {
                Some(range) => range.normalize(mean),
                None => mean,
            };
            estimate += mean;
            let slope = self.link.deriv(u);
            reward = rc.alpha * (slope * slope * rc.sigma_factor.quad_form(&phi_r)).sqrt();
        }
        Ok((estimate, Bonus { reward, transition }))
    }

    /// `(𝔹̃ₕṼₕ₊₁)(x,a)`: the fitted backup before bonus and clipping.
    pub fn bellman_estimate(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        Ok(self.components(h, x, a)?.0)
    }

    /// Bonus components as subtracted in `evaluate_q` (range-normalized when set).
    pub fn gamma(&self, h: usize, x: &[f64], a: usize) -> Result<Bonus> {
        let (_, b) = self.components(h, x, a)?;
        Ok(match self.normalization {
            Some(range) => Bonus { reward: b.reward / range.width(), transition: b.transition / range.width() },
            None => b,
        })
    }

    pub fn evaluate_q(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        let (estimate, b) = self.components(h, x, a)?;
        let total = match self.normalization {
            Some(range) => (b.reward + b.transition) / range.width(),
            None => b.reward + b.transition,
        };
        let ceiling = (self.horizon - h + 1) as f64;
        Ok((estimate - total).min(ceiling).max(0.0))
    }

    pub fn q_values(&self, h: usize, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.features.n_actions()).map(|a| self.evaluate_q(h, x, a)).collect()
    }

    pub fn greedy_action(&self, h: usize, x: &[f64]) -> Result<usize> {
        let q = self.q_values(h, x)?;
        argmax_lowest(&q).ok_or_else(|| Error::config("empty action set"))
    }

    /// `Ṽₕ(x) = max_a Q̃ₕ(x,a)`, and 0 past the horizon.
    pub fn value(&self, h: usize, x: &[f64]) -> Result<f64> {
        if h == self.horizon + 1 {
            return Ok(0.0);
        }
        Ok(self.q_values(h, x)?.into_iter().fold(0.0, f64::max))
    }
}

impl DecisionRule for PessimisticPolicy {
    fn n_actions(&self) -> usize {
        self.features.n_actions()
    }
    fn action(&self, h: usize, x: &[f64]) -> Result<usize> {
        self.greedy_action(h, x)
    }
}
