//! Finite GLMDP with one-hot features, solvable exactly by backward induction.
//!
//! The state vector is `[s as f64]`. With one-hot features the linear
//! transition model is exact: `μₕ(s′)` has entry `P[h][s][a][s′]` at
//! coordinate `s·|A| + a`.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::features::{state_index, FeatureMapPair, TableFeatures};
use crate::link::{sigmoid, LinkFunction};
use crate::policy::{argmax_lowest, StochasticPolicy, TabularRule};

use super::{stream_rng, Environment};

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TabularEnvSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// `transitions[h-1][s][a][s′]`.
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `theta_star[h-1][s·|A| + a]`; rewards are Bernoulli with logistic mean.
    pub theta_star: Vec<DVector<f64>>,
    pub initial: Vec<f64>,
}

/// Optimal values and actions; `v[h-1][s]` for `h = 1..=H+1`, the last row zero.
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub v: Vec<Vec<f64>>,
    /// `q[h-1][s][a]`.
    pub q: Vec<Vec<Vec<f64>>>,
    pub policy: TabularRule,
}

impl TabularEnvSpec {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        theta_star: Vec<DVector<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let horizon = transitions.len();
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::Environment("empty tabular specification".into()));
        }
        if theta_star.len() != horizon || theta_star.iter().any(|t| t.len() != n_states * n_actions) {
            return Err(Error::Environment("theta_star shape does not match S·|A| per step".into()));
        }
        let stochastic = |row: &[f64]| {
            row.len() == n_states
                && row.iter().all(|p| *p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE
        };
        for (h, per_h) in transitions.iter().enumerate() {
            if per_h.len() != n_states || per_h.iter().any(|r| r.len() != n_actions) {
                return Err(Error::Environment(format!("transition table at step {} has the wrong shape", h + 1)));
            }
            for (s, per_s) in per_h.iter().enumerate() {
                for (a, row) in per_s.iter().enumerate() {
                    if !stochastic(row) {
                        return Err(Error::Environment(format!(
                            "P[{}][{s}][{a}] is not a probability vector",
                            h + 1
                        )));
                    }
                }
            }
        }
        if !stochastic(&initial) {
            return Err(Error::Environment("initial distribution is not a probability vector".into()));
        }
        Ok(Self { n_states, n_actions, horizon, transitions, theta_star, initial })
    }

    /// Dirichlet(1) transition rows, `θ*` uniform on `(−0.5, 0.5)`, uniform start.
    pub fn random(n_states: usize, n_actions: usize, horizon: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, u64::MAX);
        let transitions = (0..horizon)
            .map(|_| {
                (0..n_states)
                    .map(|_| {
                        (0..n_actions)
                            .map(|_| {
                                let w: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
                                let total: f64 = w.iter().sum();
                                w.into_iter().map(|v| v / total).collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let theta_star = (0..horizon)
            .map(|_| DVector::from_fn(n_states * n_actions, |_, _| rng.random_range(-0.5..0.5)))
            .collect();
        let initial = vec![1.0 / n_states as f64; n_states];
        Self::new(n_states, n_actions, transitions, theta_star, initial)
    }

    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn link(&self) -> LinkFunction {
        LinkFunction::Logit
    }

    pub fn features(&self) -> FeatureMapPair {
        FeatureMapPair::shared(Arc::new(TableFeatures::one_hot(self.n_states, self.n_actions)))
    }

    pub fn state(s: usize) -> Vec<f64> {
        vec![s as f64]
    }

    /// `g(θ*ₕ[s,a])`.
    pub fn reward_mean(&self, h: usize, s: usize, a: usize) -> f64 {
        sigmoid(self.theta_star[h - 1][s * self.n_actions + a])
    }

    /// `(𝔹ₕV)(s,a) = g(θ*ₕ[s,a]) + Σ_{s′} P[h][s][a][s′]·V(s′)`.
    pub fn bellman(&self, h: usize, v_next: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        let cont: f64 = self.transitions[h - 1][s][a].iter().zip(v_next).map(|(p, v)| p * v).sum();
                        self.reward_mean(h, s, a) + cont
                    })
                    .collect()
            })
            .collect()
    }

    pub fn exact_dp(&self) -> DpSolution {
        let mut v = vec![vec![0.0; self.n_states]; self.horizon + 1];
        let mut q = vec![Vec::new(); self.horizon];
        let mut actions = vec![Vec::new(); self.horizon];
        for h in (1..=self.horizon).rev() {
            let qh = self.bellman(h, &v[h]);
            actions[h - 1] = qh.iter().map(|row| argmax_lowest(row).expect("nonempty actions")).collect();
            v[h - 1] = qh.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            q[h - 1] = qh;
        }
        DpSolution { v, q, policy: TabularRule { n_actions: self.n_actions, actions } }
    }

    /// Exact `V^π_h(s)` for a stochastic policy, `h = 1..=H+1`.
    pub fn evaluate_policy<P: StochasticPolicy + ?Sized>(&self, policy: &P) -> Result<Vec<Vec<f64>>> {
        let mut v = vec![vec![0.0; self.n_states]; self.horizon + 1];
        for h in (1..=self.horizon).rev() {
            let qh = self.bellman(h, &v[h]);
            for s in 0..self.n_states {
                let x = Self::state(s);
                let mut total = 0.0;
                for (a, q) in qh[s].iter().enumerate() {
                    total += policy.prob(h, &x, a)? * q;
                }
                v[h - 1][s] = total;
            }
        }
        Ok(v)
    }

    /// `Σ_s ρ(s)·V(s)`.
    pub fn initial_value(&self, v1: &[f64]) -> f64 {
        self.initial.iter().zip(v1).map(|(p, v)| p * v).sum()
    }

    /// `β*ₕ = Σ_{s′} V*ₕ₊₁(s′)·μₕ(s′)` from the explicit table.
    pub fn beta_star(&self, h: usize, v_next: &[f64]) -> DVector<f64> {
        let mut beta = DVector::zeros(self.dim());
        for (s_next, v) in v_next.iter().enumerate() {
            let mu = DVector::from_fn(self.dim(), |i, _| {
                self.transitions[h - 1][i / self.n_actions][i % self.n_actions][s_next]
            });
            beta.axpy(*v, &mu, 1.0);
        }
        beta
    }

    /// `max |Q*ₕ(s,a) − g(φ_rᵀθ*ₕ) − φ_pᵀβ*ₕ|` over all steps, states and actions.
    pub fn completeness_residual(&self, dp: &DpSolution) -> f64 {
        let features = TableFeatures::one_hot(self.n_states, self.n_actions);
        let mut worst: f64 = 0.0;
        for h in 1..=self.horizon {
            let beta = self.beta_star(h, &dp.v[h]);
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let phi = features.row(s, a);
                    let decomposed = sigmoid(phi.dot(&self.theta_star[h - 1])) + phi.dot(&beta);
                    worst = worst.max((dp.q[h - 1][s][a] - decomposed).abs());
                }
            }
        }
        worst
    }

    fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding can leave the cumulative sum a hair below one.
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    fn check(&self, h: usize, x: &[f64], a: usize) -> Result<usize> {
        let valid = h >= 1 && h <= self.horizon && x.len() == 1 && x[0] >= 0.0 && a < self.n_actions;
        let s = if valid { state_index(x) } else { usize::MAX };
        if s >= self.n_states {
            return Err(Error::Environment(format!("invalid tabular query (h={h}, x={x:?}, a={a})")));
        }
        Ok(s)
    }
}

impl Environment for TabularEnvSpec {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        Self::state(Self::sample_index(&self.initial, rng))
    }

    fn sample_reward(&self, h: usize, x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<f64> {
        let s = self.check(h, x, a)?;
        Ok(if rng.random::<f64>() < self.reward_mean(h, s, a) { 1.0 } else { 0.0 })
    }

    fn transition(&self, h: usize, x: &[f64], a: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let s = self.check(h, x, a)?;
        Ok(Self::state(Self::sample_index(&self.transitions[h - 1][s][a], rng)))
    }

    fn mean_reward(&self, h: usize, x: &[f64], a: usize) -> f64 {
        self.reward_mean(h, state_index(x), a)
    }
}
