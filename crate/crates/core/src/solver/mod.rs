//! Pessimistic value iteration with decomposed reward and transition bonuses.
//!
//! All four variants (fully labeled, semi-supervised, and their
//! range-normalized versions) share one backward recursion; they differ in
//! which episodes feed the transition regression, in the sample size inside
//! the confidence schedule, and in whether rewards are normalized.

pub mod gpevi;
pub mod ssgpevi;
pub mod unbounded;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::features::FeatureMapPair;
use crate::link::LinkFunction;
use crate::numerics::{
    fit_glm, fit_ridge, min_eigenvalue, SpdFactor, DEFAULT_GLM_MAX_ITER, DEFAULT_GLM_TOL, HESSIAN_JITTER,
};
use crate::policy::{PessimisticPolicy, RewardComponent, RewardRange, StepModel, TransitionComponent};

pub use gpevi::solve_gpevi;
pub use ssgpevi::solve_ssgpevi;
pub use unbounded::{solve_gpevi_unbounded, solve_ssgpevi_unbounded};

#[derive(Debug, Clone)]
pub struct GpeviConfig {
    pub lambda: f64,
    pub xi: f64,
    pub c_r: f64,
    pub c_p: f64,
    pub link: LinkFunction,
    pub features: FeatureMapPair,
    pub glm_tol: f64,
    pub glm_max_iter: usize,
}

impl GpeviConfig {
    /// λ = 1, ξ = 0.01, `c_r = c_p = c`.
    pub fn new(link: LinkFunction, features: FeatureMapPair, c: f64) -> Self {
        Self {
            lambda: 1.0,
            xi: 0.01,
            c_r: c,
            c_p: c,
            link,
            features,
            glm_tol: DEFAULT_GLM_TOL,
            glm_max_iter: DEFAULT_GLM_MAX_ITER,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c_r = c;
        self.c_p = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::config(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        for (name, c) in [("c_r", self.c_r), ("c_p", self.c_p)] {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {c}")));
            }
        }
        if self.glm_tol <= 0.0 {
            return Err(Error::config("GLM tolerance must be positive"));
        }
        Ok(())
    }

    /// `α_r = c_r·√(d_r·ln(H/ξ))`.
    pub fn alpha_r(&self, horizon: usize) -> f64 {
        let d_r = self.features.d_r() as f64;
        self.c_r * (d_r * (horizon as f64 / self.xi).ln()).sqrt()
    }

    /// `ζ = ln(2(d_r+d_p)·H·n/ξ)`, with `n` the number of episodes feeding the
    /// transition regression.
    pub fn zeta(&self, horizon: usize, n: usize) -> f64 {
        let d = (self.features.d_r() + self.features.d_p()) as f64;
        (2.0 * d * horizon as f64 * n as f64 / self.xi).ln()
    }

    /// `α_p = c_p·(d_p+d_r)·H·√ζ`.
    pub fn alpha_p(&self, horizon: usize, n: usize) -> f64 {
        self.alpha_p_scaled(horizon, n, 1.0)
    }

    /// `α_p` carrying a reward-range width factor.
    pub fn alpha_p_scaled(&self, horizon: usize, n: usize, width: f64) -> f64 {
        let d = (self.features.d_r() + self.features.d_p()) as f64;
        self.c_p * width * d * horizon as f64 * self.zeta(horizon, n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub glm_iterations: usize,
    /// Smallest eigenvalue of `Σ̃ₕ/n`.
    pub reward_min_eig: f64,
    /// Smallest eigenvalue of `(Λₕ+λI)/n`, `n` counting all transition episodes.
    pub transition_min_eig: f64,
    /// Mean bonus components over the step's transitions.
    pub mean_gamma_r: f64,
    pub mean_gamma_p: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub policy: PessimisticPolicy,
    /// `diagnostics[h-1]` describes step `h`.
    pub diagnostics: Vec<StepDiagnostics>,
    pub wall_time: Duration,
}

fn check_features(features: &FeatureMapPair, data: &TrajectoryDataset) -> Result<()> {
    if features.state_dim() != data.state_dim() || features.n_actions() != data.n_actions() {
        return Err(Error::config(format!(
            "feature maps expect state dimension {} and {} actions, data has {} and {}",
            features.state_dim(),
            features.n_actions(),
            data.state_dim(),
            data.n_actions()
        )));
    }
    Ok(())
}

/// The shared backward recursion.
///
/// `labeled` fits the reward model; `labeled` followed by `unlabeled` feeds the
/// transition regression. With a range, rewards and bonuses are normalized.
pub(crate) fn backward_induction(
    config: &GpeviConfig,
    labeled: &TrajectoryDataset,
    unlabeled: Option<&TrajectoryDataset>,
    range: Option<RewardRange>,
) -> Result<SolveReport> {
    let start = Instant::now();
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::data("at least one labeled episode is required"));
    }
    if !labeled.all_labeled() {
        return Err(Error::data("labeled dataset contains reward-free episodes"));
    }
    check_features(&config.features, labeled)?;
    if let Some(u) = unlabeled {
        labeled.check_compatible(u)?;
        if u.n_labeled() > 0 {
            return Err(Error::data("unlabeled dataset contains labeled episodes"));
        }
    }

    let horizon = labeled.horizon();
    let n = labeled.len();
    let n_total = n + unlabeled.map_or(0, TrajectoryDataset::len);
    let width = range.map_or(1.0, |r| r.width());
    let alpha_r = config.alpha_r(horizon);
    let alpha_p = config.alpha_p_scaled(horizon, n_total, width);
    let features = &config.features;
    let d_r = features.d_r();
    let d_p = features.d_p();

    let transition_episodes: Vec<_> = labeled
        .episodes()
        .iter()
        .chain(unlabeled.map_or(&[][..], |u| u.episodes()))
        .collect();

    let mut steps: Vec<Option<StepModel>> = vec![None; horizon];
    let mut diagnostics: Vec<Option<StepDiagnostics>> = vec![None; horizon];
    // Policy over steps h+1..=H, built incrementally from the tail.
    let mut tail: Option<PessimisticPolicy> = None;

    for h in (1..=horizon).rev() {
        let on_step = |e: Error| match e {
            Error::Solver { .. } => e,
            other => Error::Solver { step: h, message: other.to_string() },
        };

        let mut phi_r = DMatrix::zeros(n, d_r);
        let mut rewards = DVector::zeros(n);
        for (t, ep) in labeled.episodes().iter().enumerate() {
            let s = &ep[h - 1];
            phi_r.row_mut(t).copy_from(&features.reward.eval(&s.state, s.action).transpose());
            rewards[t] = s.reward.expect("labeled episode");
        }
        let glm = fit_glm(&phi_r, &rewards, &config.link, config.glm_tol, config.glm_max_iter).map_err(on_step)?;
        if !glm.converged {
            return Err(Error::Solver {
                step: h,
                message: format!(
                    "GLM fit did not converge after {} iterations (gradient norm {:.3e})",
                    glm.iterations, glm.final_gradient_norm
                ),
            });
        }
        let sigma_factor = SpdFactor::with_jitter(&glm.sigma_matrix, HESSIAN_JITTER).map_err(on_step)?;

        let mut phi_p = DMatrix::zeros(n_total, d_p);
        for (t, ep) in transition_episodes.iter().enumerate() {
            let s = &ep[h - 1];
            phi_p.row_mut(t).copy_from(&features.transition.eval(&s.state, s.action).transpose());
        }
        let targets: Vec<f64> = match &tail {
            None => vec![0.0; n_total],
            Some(next) => transition_episodes
                .par_iter()
                .map(|ep| next.value(h + 1, &ep[h - 1].next_state))
                .collect::<Result<_>>()
                .map_err(on_step)?,
        };
        let ridge = fit_ridge(&phi_p, &DVector::from_vec(targets), config.lambda).map_err(on_step)?;

        let model = StepModel {
            reward: Some(RewardComponent { theta: glm.theta.clone(), sigma_factor, alpha: alpha_r }),
            transition: TransitionComponent { beta: ridge.beta.clone(), gram_factor: ridge.factor.clone(), alpha: alpha_p },
        };
        steps[h - 1] = Some(model);

        // Rebuild the tail policy so step h becomes queryable. Earlier steps
        // are placeholders and never evaluated.
        let filled: Vec<StepModel> = steps
            .iter()
            .map(|s| s.clone().unwrap_or_else(|| steps[h - 1].clone().expect("step just fitted")))
            .collect();
        let policy = PessimisticPolicy::new(config.link.clone(), features.clone(), range, filled)?;

        let mut sum_r = 0.0;
        let mut sum_p = 0.0;
        for ep in &transition_episodes {
            let s = &ep[h - 1];
            let b = policy.gamma(h, &s.state, s.action)?;
            sum_r += b.reward;
            sum_p += b.transition;
        }
        diagnostics[h - 1] = Some(StepDiagnostics {
            glm_iterations: glm.iterations,
            reward_min_eig: min_eigenvalue(&(&glm.sigma_matrix / n as f64)),
            transition_min_eig: min_eigenvalue(&(&ridge.gram_plus / n_total as f64)),
            mean_gamma_r: sum_r / n_total as f64,
            mean_gamma_p: sum_p / n_total as f64,
        });
        tail = Some(policy);
    }

    Ok(SolveReport {
        policy: tail.expect("horizon is positive"),
        diagnostics: diagnostics.into_iter().map(|d| d.expect("every step fitted")).collect(),
        wall_time: start.elapsed(),
    })
}
