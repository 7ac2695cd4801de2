//! Comparison methods: linear pessimistic value iteration and two
//! fitted-Q-iteration variants with a shared weight vector.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureMapPair};
use crate::link::LinkFunction;
use crate::numerics::{fit_ridge, min_eigenvalue, SpdFactor};
use crate::policy::{argmax_lowest, DecisionRule, PessimisticPolicy, StepModel, TransitionComponent};
use crate::solver::{SolveReport, StepDiagnostics};

#[derive(Clone)]
pub struct LpeviConfig {
    pub lambda: f64,
    pub xi: f64,
    pub c: f64,
    /// Replaces the scheduled `α` when set.
    pub alpha: Option<f64>,
    pub features: Arc<dyn FeatureMap>,
}

impl std::fmt::Debug for LpeviConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LpeviConfig")
            .field("lambda", &self.lambda)
            .field("xi", &self.xi)
            .field("c", &self.c)
            .field("alpha", &self.alpha)
            .field("dim", &self.features.dim())
            .finish()
    }
}

impl LpeviConfig {
    pub fn new(features: Arc<dyn FeatureMap>, c: f64) -> Self {
        Self { lambda: 1.0, xi: 0.01, c, alpha: None, features }
    }

    /// `α = c·d·H·√ln(2dHn/ξ)` unless overridden.
    pub fn alpha(&self, horizon: usize, n: usize) -> f64 {
        if let Some(a) = self.alpha {
            return a;
        }
        let d = self.features.dim() as f64;
        let h = horizon as f64;
        self.c * d * h * (2.0 * d * h * n as f64 / self.xi).ln().sqrt()
    }
}

/// Pessimistic value iteration with a linear model of `r + V`.
///
/// The result is a [`PessimisticPolicy`] whose steps carry no reward
/// component; the single bonus sits in the transition slot.
pub fn solve_lpevi(data: &TrajectoryDataset, config: &LpeviConfig) -> Result<SolveReport> {
    let start = Instant::now();
    if !(config.lambda > 0.0) || !(config.xi > 0.0 && config.xi < 1.0) || !(config.c >= 0.0) {
        return Err(Error::config("LPEVI needs λ > 0, ξ ∈ (0, 1) and c ≥ 0"));
    }
    if config.alpha.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
        return Err(Error::config("LPEVI α override must be non-negative"));
    }
    if data.is_empty() || !data.all_labeled() {
        return Err(Error::data("LPEVI needs a nonempty, fully labeled dataset"));
    }
    let fm = &config.features;
    if fm.state_dim() != data.state_dim() || fm.n_actions() != data.n_actions() {
        return Err(Error::config("feature map does not match the dataset shape"));
    }
    let horizon = data.horizon();
    let n = data.len();
    let d = fm.dim();
    let alpha = config.alpha(horizon, n);
    let features = FeatureMapPair::shared(fm.clone());

    let mut steps: Vec<Option<StepModel>> = vec![None; horizon];
    let mut diagnostics = vec![None; horizon];
    let mut tail: Option<PessimisticPolicy> = None;
    for h in (1..=horizon).rev() {
        let on_step = |e: Error| Error::Solver { step: h, message: e.to_string() };
        let mut phi = DMatrix::zeros(n, d);
        for (t, ep) in data.episodes().iter().enumerate() {
            let s = &ep[h - 1];
            phi.row_mut(t).copy_from(&fm.eval(&s.state, s.action).transpose());
        }
        let continuation: Vec<f64> = match &tail {
            None => vec![0.0; n],
            Some(next) => data
                .episodes()
                .par_iter()
                .map(|ep| next.value(h + 1, &ep[h - 1].next_state))
                .collect::<Result<_>>()
                .map_err(on_step)?,
        };
        let targets = DVector::from_iterator(
            n,
            data.episodes().iter().zip(&continuation).map(|(ep, v)| ep[h - 1].reward.expect("labeled") + v),
        );
        let ridge = fit_ridge(&phi, &targets, config.lambda).map_err(on_step)?;
        steps[h - 1] = Some(StepModel {
            reward: None,
            transition: TransitionComponent { beta: ridge.beta.clone(), gram_factor: ridge.factor.clone(), alpha },
        });
        let filled: Vec<StepModel> = steps
            .iter()
            .map(|s| s.clone().unwrap_or_else(|| steps[h - 1].clone().expect("step just fitted")))
            .collect();
        let policy = PessimisticPolicy::new(LinkFunction::Identity, features.clone(), None, filled)?;
        let mut sum_p = 0.0;
        for ep in data.episodes() {
            sum_p += policy.gamma(h, &ep[h - 1].state, ep[h - 1].action)?.transition;
        }
        diagnostics[h - 1] = Some(StepDiagnostics {
            glm_iterations: 0,
            reward_min_eig: f64::NAN,
            transition_min_eig: min_eigenvalue(&(&ridge.gram_plus / n as f64)),
            mean_gamma_r: 0.0,
            mean_gamma_p: sum_p / n as f64,
        });
        tail = Some(policy);
    }
    Ok(SolveReport {
        policy: tail.expect("horizon is positive"),
        diagnostics: diagnostics.into_iter().map(|d| d.expect("every step fitted")).collect(),
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FqiConfig {
    pub lambda: f64,
    pub sweeps: usize,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self { lambda: 1.0, sweeps: 50 }
    }
}

/// A linear Q-function `φ(x,a)ᵀw` shared by all steps, optionally with a
/// one-hot step indicator appended to `φ`.
#[derive(Clone)]
pub struct LinearQPolicy {
    pub weights: DVector<f64>,
    features: Arc<dyn FeatureMap>,
    horizon: usize,
    step_indicator: bool,
}

impl std::fmt::Debug for LinearQPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearQPolicy")
            .field("weights", &self.weights)
            .field("horizon", &self.horizon)
            .field("step_indicator", &self.step_indicator)
            .finish()
    }
}

impl LinearQPolicy {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn uses_step_indicator(&self) -> bool {
        self.step_indicator
    }

    fn feature(&self, h: usize, x: &[f64], a: usize) -> DVector<f64> {
        augmented(self.features.as_ref(), self.step_indicator, self.horizon, h, x, a)
    }

    pub fn q(&self, h: usize, x: &[f64], a: usize) -> Result<f64> {
        if h == 0 || h > self.horizon || a >= self.features.n_actions() || x.len() != self.features.state_dim() {
            return Err(Error::config(format!("invalid query (h={h}, a={a}, |x|={})", x.len())));
        }
        Ok(self.feature(h, x, a).dot(&self.weights))
    }

    pub fn greedy_action(&self, h: usize, x: &[f64]) -> Result<usize> {
        let q = (0..self.features.n_actions()).map(|a| self.q(h, x, a)).collect::<Result<Vec<_>>>()?;
        argmax_lowest(&q).ok_or_else(|| Error::config("empty action set"))
    }
}

impl DecisionRule for LinearQPolicy {
    fn n_actions(&self) -> usize {
        self.features.n_actions()
    }
    fn action(&self, h: usize, x: &[f64]) -> Result<usize> {
        self.greedy_action(h, x)
    }
}

fn augmented(fm: &dyn FeatureMap, step_indicator: bool, horizon: usize, h: usize, x: &[f64], a: usize) -> DVector<f64> {
    let phi = fm.eval(x, a);
    if !step_indicator {
        return phi;
    }
    let d = phi.len();
    let mut out = DVector::zeros(d + horizon);
    out.rows_mut(0, d).copy_from(&phi);
    out[d + h - 1] = 1.0;
    out
}

fn fitted_q_iteration(
    data: &TrajectoryDataset,
    features: Arc<dyn FeatureMap>,
    config: &FqiConfig,
    step_indicator: bool,
) -> Result<LinearQPolicy> {
    if data.is_empty() || !data.all_labeled() {
        return Err(Error::data("Q-learning baselines need a nonempty, fully labeled dataset"));
    }
    if features.state_dim() != data.state_dim() || features.n_actions() != data.n_actions() {
        return Err(Error::config("feature map does not match the dataset shape"));
    }
    if !(config.lambda > 0.0) {
        return Err(Error::config("FQI ridge λ must be positive"));
    }
    let horizon = data.horizon();
    let n_actions = data.n_actions();
    let dim = features.dim() + if step_indicator { horizon } else { 0 };
    let rows = data.len() * horizon;

    let mut phi = DMatrix::zeros(rows, dim);
    let mut rewards = DVector::zeros(rows);
    let mut terminal = vec![false; rows];
    // next[a'] holds φ(x′, a′) of each pooled transition (zero rows at the horizon).
    let mut next = vec![DMatrix::zeros(rows, dim); n_actions];
    for (t, ep) in data.episodes().iter().enumerate() {
        for (i, s) in ep.iter().enumerate() {
            let h = i + 1;
            let row = t * horizon + i;
            phi.row_mut(row).copy_from(&augmented(features.as_ref(), step_indicator, horizon, h, &s.state, s.action).transpose());
            rewards[row] = s.reward.expect("labeled");
            if h == horizon {
                terminal[row] = true;
                continue;
            }
            for (a, m) in next.iter_mut().enumerate() {
                m.row_mut(row)
                    .copy_from(&augmented(features.as_ref(), step_indicator, horizon, h + 1, &s.next_state, a).transpose());
            }
        }
    }

    let mut gram = phi.tr_mul(&phi);
    gram = (&gram + gram.transpose()) * 0.5;
    for i in 0..dim {
        gram[(i, i)] += config.lambda;
    }
    let factor = SpdFactor::new(&gram).ok_or_else(|| Error::data("FQI Gram matrix is not positive definite"))?;

    let mut w = DVector::zeros(dim);
    for _ in 0..config.sweeps {
        let next_q: Vec<DVector<f64>> = next.iter().map(|m| m * &w).collect();
        let targets = DVector::from_fn(rows, |row, _| {
            if terminal[row] {
                rewards[row]
            } else {
                rewards[row] + next_q.iter().map(|q| q[row]).fold(f64::NEG_INFINITY, f64::max)
            }
        });
        w = factor.solve(&phi.tr_mul(&targets));
    }
    Ok(LinearQPolicy { weights: w, features, horizon, step_indicator })
}

/// Fitted Q-iteration with one weight vector for all steps and no step information.
pub fn solve_single_q(data: &TrajectoryDataset, features: Arc<dyn FeatureMap>, config: &FqiConfig) -> Result<LinearQPolicy> {
    fitted_q_iteration(data, features, config, false)
}

/// As [`solve_single_q`], with a one-hot step indicator appended to the features.
pub fn solve_global_q(data: &TrajectoryDataset, features: Arc<dyn FeatureMap>, config: &FqiConfig) -> Result<LinearQPolicy> {
    fitted_q_iteration(data, features, config, true)
}
