//! One replication of the simulation protocol: environment, reference and
//! behavior policies, train/test data, and per-method fit and evaluation.

use std::sync::Arc;
use std::time::Instant;

use crate::baselines::{solve_global_q, solve_lpevi, solve_single_q, FqiConfig, LinearQPolicy, LpeviConfig};
use crate::data::TrajectoryDataset;
use crate::envs::{behavior_policy, generate_dataset, reference_policy, EnvSpec, RewardFamily};
use crate::error::{Error, Result};
use crate::eval::{cross_validate_c, evaluate_rule, mc_policy_value, CvOptions, OpeEstimate, DEFAULT_C_GRID};
use crate::policy::{DecisionRule, EpsilonGreedy, Greedy, PessimisticPolicy, RewardRange};
use crate::solver::{
    solve_gpevi, solve_gpevi_unbounded, solve_ssgpevi, solve_ssgpevi_unbounded, GpeviConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Fit on the labeled episodes only.
    Gpevi,
    /// Fit on all episodes with their rewards kept.
    GpeviFull,
    SsGpevi,
    GpeviUnbounded,
    SsGpeviUnbounded,
    Lpevi,
    SingleQ,
    GlobalQ,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Gpevi,
        Method::GpeviFull,
        Method::SsGpevi,
        Method::GpeviUnbounded,
        Method::SsGpeviUnbounded,
        Method::Lpevi,
        Method::SingleQ,
        Method::GlobalQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gpevi => "gpevi",
            Method::GpeviFull => "gpevi_full",
            Method::SsGpevi => "ss_gpevi",
            Method::GpeviUnbounded => "gpevi_unbounded",
            Method::SsGpeviUnbounded => "ss_gpevi_unbounded",
            Method::Lpevi => "lpevi",
            Method::SingleQ => "single_q",
            Method::GlobalQ => "global_q",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown method '{}'", s.trim())))
    }

    /// Whether the method has a bonus constant to cross-validate.
    pub fn uses_bonus(self) -> bool {
        !matches!(self, Method::SingleQ | Method::GlobalQ)
    }

    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

/// Everything that defines a replication apart from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub d: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub family: RewardFamily,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub test_size: usize,
    pub pilot_episodes: usize,
    pub lambda: f64,
    pub xi: f64,
    pub c_grid: Vec<f64>,
    /// Skip cross-validation and use this constant.
    pub fixed_c: Option<f64>,
    pub folds: usize,
    /// ε for softened targets in step-IS; `None` keeps greedy targets.
    pub target_epsilon: Option<f64>,
    /// Bound on `|φᵀθ|` behind the default reward range; `0.5·√d` when unset.
    pub param_bound: Option<f64>,
    pub fqi_sweeps: usize,
    /// Rollouts for the Monte-Carlo suboptimality; 0 disables it.
    pub subopt_rollouts: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            d: 8,
            n_actions: 2,
            horizon: 5,
            family: RewardFamily::Binomial,
            n_labeled: 1000,
            n_unlabeled: 0,
            test_size: 250,
            pilot_episodes: crate::envs::behavior::DEFAULT_PILOT_EPISODES,
            lambda: 1.0,
            xi: 0.01,
            c_grid: DEFAULT_C_GRID.to_vec(),
            fixed_c: None,
            folds: crate::eval::DEFAULT_FOLDS,
            target_epsilon: None,
            param_bound: None,
            fqi_sweeps: 50,
            subopt_rollouts: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_actions == 0 || self.horizon == 0 {
            return Err(Error::config("d, n_actions and horizon must be positive"));
        }
        if self.c_grid.is_empty() && self.fixed_c.is_none() {
            return Err(Error::config("c grid is empty"));
        }
        if self.c_grid.iter().chain(&self.fixed_c).any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::config("bonus constants must be finite and non-negative"));
        }
        if self.fixed_c.is_none() && self.folds < 2 {
            return Err(Error::config("need at least two folds"));
        }
        if self.pilot_episodes == 0 {
            return Err(Error::config("pilot_episodes must be positive"));
        }
        if !(self.lambda > 0.0) || !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::config("need lambda > 0 and xi in (0, 1)"));
        }
        if let Some(eps) = self.target_epsilon {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::config("target_epsilon must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn reward_range(&self) -> Result<RewardRange> {
        let bound = self.param_bound.unwrap_or(0.5 * (self.d as f64).sqrt());
        RewardRange::for_link(&self.family.link(), bound, 0.1)
    }

    /// Labeled fraction `n / (n + N)`.
    pub fn labeled_ratio(&self) -> f64 {
        let total = self.n_labeled + self.n_unlabeled;
        if total == 0 {
            0.0
        } else {
            self.n_labeled as f64 / total as f64
        }
    }
}

/// SplitMix64 finalizer applied to `seed + tag`; used to derive independent seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_TAG: u64 = 1;
const TEST_TAG: u64 = 2;
const CV_TAG: u64 = 3;
const MC_TAG: u64 = 4;

/// A fitted policy of any method.
#[derive(Debug, Clone)]
pub enum FittedPolicy {
    Pessimistic(PessimisticPolicy),
    LinearQ(LinearQPolicy),
}

impl DecisionRule for FittedPolicy {
    fn n_actions(&self) -> usize {
        match self {
            FittedPolicy::Pessimistic(p) => p.n_actions(),
            FittedPolicy::LinearQ(p) => p.n_actions(),
        }
    }
    fn action(&self, h: usize, x: &[f64]) -> Result<usize> {
        match self {
            FittedPolicy::Pessimistic(p) => p.action(h, x),
            FittedPolicy::LinearQ(p) => p.action(h, x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub chosen_c: Option<f64>,
    pub ope: OpeEstimate,
    pub suboptimality: Option<f64>,
    pub fit_seconds: f64,
    pub eval_seconds: f64,
    pub policy: FittedPolicy,
}

/// Environment, policies and data of one seeded replication.
pub struct Replication {
    pub seed: u64,
    pub spec: ExperimentSpec,
    pub env: EnvSpec,
    pub reference: Arc<PessimisticPolicy>,
    pub behavior: EpsilonGreedy<Arc<PessimisticPolicy>>,
    /// The first `n_labeled` training episodes.
    pub labeled: TrajectoryDataset,
    /// The remaining `n_unlabeled` episodes, rewards stripped.
    pub unlabeled: TrajectoryDataset,
    /// All `n_labeled + n_unlabeled` episodes with rewards.
    pub full: TrajectoryDataset,
    pub test: TrajectoryDataset,
}

impl Replication {
    pub fn prepare(spec: &ExperimentSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let env = EnvSpec::new(spec.d, spec.n_actions, spec.horizon, spec.family, seed)?;
        let reference = Arc::new(reference_policy(&env, spec.pilot_episodes)?);
        let behavior = behavior_policy(reference.clone())?;
        let total = spec.n_labeled + spec.n_unlabeled;
        let full = generate_dataset(&env, &behavior, total, 0, derive_seed(seed, TRAIN_TAG))?;
        let labeled = full.subset(&(0..spec.n_labeled).collect::<Vec<_>>());
        let unlabeled = full.subset(&(spec.n_labeled..total).collect::<Vec<_>>()).strip_rewards_from(0);
        let test = generate_dataset(&env, &behavior, spec.test_size, 0, derive_seed(seed, TEST_TAG))?;
        Ok(Self { seed, spec: spec.clone(), env, reference, behavior, labeled, unlabeled, full, test })
    }

    pub fn gpevi_config(&self, c: f64) -> GpeviConfig {
        let mut config = GpeviConfig::new(self.env.link(), self.env.features(), c);
        config.lambda = self.spec.lambda;
        config.xi = self.spec.xi;
        config
    }

    /// Fits `method` with bonus constant `c` on the given labeled episodes
    /// (plus the replication's unlabeled episodes for semi-supervised methods).
    pub fn fit(&self, method: Method, labeled: &TrajectoryDataset, c: f64) -> Result<FittedPolicy> {
        let config = self.gpevi_config(c);
        let fqi = FqiConfig { lambda: self.spec.lambda, sweeps: self.spec.fqi_sweeps };
        let fm = config.features.transition.clone();
        Ok(match method {
            Method::Gpevi | Method::GpeviFull => FittedPolicy::Pessimistic(solve_gpevi(labeled, &config)?.policy),
            Method::SsGpevi => FittedPolicy::Pessimistic(solve_ssgpevi(labeled, &self.unlabeled, &config)?.policy),
            Method::GpeviUnbounded => FittedPolicy::Pessimistic(
                solve_gpevi_unbounded(labeled, &config, self.spec.reward_range()?)?.policy,
            ),
            Method::SsGpeviUnbounded => FittedPolicy::Pessimistic(
                solve_ssgpevi_unbounded(labeled, &self.unlabeled, &config, self.spec.reward_range()?)?.policy,
            ),
            Method::Lpevi => {
                let mut l = LpeviConfig::new(fm, c);
                l.lambda = self.spec.lambda;
                l.xi = self.spec.xi;
                FittedPolicy::Pessimistic(solve_lpevi(labeled, &l)?.policy)
            }
            Method::SingleQ => FittedPolicy::LinearQ(solve_single_q(labeled, fm, &fqi)?),
            Method::GlobalQ => FittedPolicy::LinearQ(solve_global_q(labeled, fm, &fqi)?),
        })
    }

    fn training_set(&self, method: Method) -> &TrajectoryDataset {
        match method {
            Method::GpeviFull => &self.full,
            _ => &self.labeled,
        }
    }

    /// Bonus constant for `method`: fixed, or chosen by cross-validation.
    pub fn choose_c(&self, method: Method) -> Result<Option<f64>> {
        if !method.uses_bonus() {
            return Ok(None);
        }
        if let Some(c) = self.spec.fixed_c {
            return Ok(Some(c));
        }
        let options = CvOptions {
            folds: self.spec.folds,
            seed: derive_seed(self.seed, CV_TAG * 16 + method.salt()),
            epsilon: self.spec.target_epsilon,
        };
        let cv = cross_validate_c(self.training_set(method), &self.spec.c_grid, &self.behavior, &options, |train, c| {
            self.fit(method, train, c)
        })?;
        Ok(Some(cv.chosen_c))
    }

    /// Monte-Carlo value of the reference policy, the suboptimality baseline.
    pub fn reference_value(&self) -> Result<f64> {
        Ok(mc_policy_value(&self.env, &Greedy(self.reference.as_ref()), self.spec.subopt_rollouts.max(1), derive_seed(self.seed, MC_TAG))?.value)
    }

    pub fn run_method(&self, method: Method, reference_value: Option<f64>) -> Result<MethodResult> {
        let start = Instant::now();
        let chosen_c = self.choose_c(method)?;
        let policy = self.fit(method, self.training_set(method), chosen_c.unwrap_or(0.0))?;
        let fit_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let ope = evaluate_rule(&self.test, &policy, &self.behavior, self.spec.target_epsilon)?;
        let suboptimality = match reference_value {
            Some(v) if self.spec.subopt_rollouts > 0 => {
                let value = mc_policy_value(&self.env, &Greedy(&policy), self.spec.subopt_rollouts, derive_seed(self.seed, MC_TAG))?;
                Some(v - value.value)
            }
            _ => None,
        };
        Ok(MethodResult {
            method,
            chosen_c,
            ope,
            suboptimality,
            fit_seconds,
            eval_seconds: start.elapsed().as_secs_f64(),
            policy,
        })
    }
}
