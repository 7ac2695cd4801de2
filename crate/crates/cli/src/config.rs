//! Versioned TOML experiment configuration.
//!
//! Every field has a default, so an empty file (or no file) is a complete
//! configuration. The resolved form is embedded in each run manifest and can
//! be fed back through `--config`.

use std::path::{Path, PathBuf};

use glmdp::envs::behavior::DEFAULT_PILOT_EPISODES;
use glmdp::envs::RewardFamily;
use glmdp::eval::{DEFAULT_C_GRID, DEFAULT_FOLDS};
use glmdp::experiment::{ExperimentSpec, Method};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; replication `r` uses `seed + r`.
    pub seed: u64,
    pub reps: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out: PathBuf,
    pub methods: Vec<String>,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// `binomial`, `beta` or `gaussian`.
    pub family: String,
    pub d: usize,
    pub n_actions: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub test_size: usize,
    pub pilot_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub xi: f64,
    pub c_grid: Vec<f64>,
    /// Skips cross-validation when set.
    pub fixed_c: Option<f64>,
    pub folds: usize,
    /// Softens greedy targets for step-IS when set.
    pub target_epsilon: Option<f64>,
    /// Bound on the linear predictor behind the unbounded variants' range.
    pub param_bound: Option<f64>,
    pub fqi_sweeps: usize,
    /// Monte-Carlo rollouts for suboptimality; 0 disables it.
    pub subopt_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Any of `n` and `ratio`.
    pub studies: Vec<String>,
    pub d_grid: Vec<usize>,
    pub action_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub labeled_ratios: Vec<f64>,
    /// Labeled plus unlabeled episodes in the ratio study.
    pub total_episodes: usize,
    pub ratio_methods: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            reps: 20,
            workers: 0,
            out: PathBuf::from("results"),
            methods: ["gpevi", "lpevi", "single_q", "global_q"].map(String::from).to_vec(),
            env: EnvConfig::default(),
            data: DataConfig::default(),
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { family: "binomial".into(), d: 8, n_actions: 2, horizon: 5 }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_labeled: 1000, n_unlabeled: 0, test_size: 250, pilot_episodes: DEFAULT_PILOT_EPISODES }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            xi: 0.01,
            c_grid: DEFAULT_C_GRID.to_vec(),
            fixed_c: None,
            folds: DEFAULT_FOLDS,
            target_epsilon: None,
            param_bound: None,
            fqi_sweeps: 50,
            subopt_rollouts: 0,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            studies: vec!["n".into(), "ratio".into()],
            d_grid: vec![8, 10, 12],
            action_grid: vec![2, 3, 4],
            n_grid: vec![1000, 1500, 2000, 2500],
            labeled_ratios: (1..=9).map(|i| i as f64 / 10.0).collect(),
            total_episodes: 1000,
            ratio_methods: ["gpevi_full", "ss_gpevi", "gpevi"].map(String::from).to_vec(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub reps: Option<usize>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Parses TOML, or the `config` object of a JSON manifest.
    pub fn parse(text: &str, json_manifest: bool) -> CliResult<Self> {
        let config: Self = if json_manifest {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
            let inner = value.get("config").cloned().ok_or_else(|| CliError::Config("manifest has no config".into()))?;
            serde_json::from_value(inner).map_err(|e| CliError::Config(format!("manifest config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    /// File (or defaults) with overrides applied, validated.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        if let Some(methods) = &overrides.methods {
            config.methods = methods.clone();
        }
        if let Some(reps) = overrides.reps {
            config.reps = reps;
        }
        if let Some(workers) = overrides.workers {
            config.workers = workers;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.reps == 0 {
            return Err(CliError::Config("reps must be positive".into()));
        }
        if self.seed.checked_add(self.reps as u64).is_none() {
            return Err(CliError::Config("seed + reps overflows".into()));
        }
        parse_methods(&self.methods)?;
        parse_methods(&self.sweep.ratio_methods)?;
        for study in &self.sweep.studies {
            if study != "n" && study != "ratio" {
                return Err(CliError::Config(format!("unknown study '{study}'")));
            }
        }
        if self.sweep.labeled_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(CliError::Config("labeled ratios must lie in [0, 1]".into()));
        }
        self.spec()?.validate()?;
        Ok(())
    }

    pub fn family(&self) -> CliResult<RewardFamily> {
        Ok(RewardFamily::parse(&self.env.family)?)
    }

    pub fn methods(&self) -> CliResult<Vec<Method>> {
        parse_methods(&self.methods)
    }

    /// The library-level specification for one cell.
    pub fn spec(&self) -> CliResult<ExperimentSpec> {
        Ok(ExperimentSpec {
            d: self.env.d,
            n_actions: self.env.n_actions,
            horizon: self.env.horizon,
            family: self.family()?,
            n_labeled: self.data.n_labeled,
            n_unlabeled: self.data.n_unlabeled,
            test_size: self.data.test_size,
            pilot_episodes: self.data.pilot_episodes,
            lambda: self.solver.lambda,
            xi: self.solver.xi,
            c_grid: self.solver.c_grid.clone(),
            fixed_c: self.solver.fixed_c,
            folds: self.solver.folds,
            target_epsilon: self.solver.target_epsilon,
            param_bound: self.solver.param_bound,
            fqi_sweeps: self.solver.fqi_sweeps,
            subopt_rollouts: self.solver.subopt_rollouts,
        })
    }
}

pub fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    if names.is_empty() {
        return Err(CliError::Config("method list is empty".into()));
    }
    let mut methods = names.iter().map(|s| Method::parse(s)).collect::<glmdp::Result<Vec<_>>>()?;
    methods.sort();
    methods.dedup();
    Ok(methods)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::parse("", false).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn defaults_match_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.solver.lambda, 1.0);
        assert_eq!(c.solver.xi, 0.01);
        assert_eq!(c.data.test_size, 250);
        assert_eq!(c.sweep.n_grid, vec![1000, 1500, 2000, 2500]);
        assert_eq!(c.sweep.labeled_ratios.len(), 9);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.solver.fixed_c = Some(0.001);
        c.env.family = "beta".into();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text, false).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = ExperimentConfig::parse("schema_version = 1\n[env]\nd = 4\n", false).unwrap();
        assert_eq!(c.env.d, 4);
        assert_eq!(c.env.horizon, 5);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "schema_version = 2",
            "colour = 1",
            "[env]\nfamily = \"poisson\"",
            "methods = [\"nope\"]",
            "reps = 0",
            "[solver]\nxi = 1.5",
            "[sweep]\nstudies = [\"time\"]",
            "[solver]\nc_grid = [-1.0]",
            "[solver]\nfolds = 1",
        ] {
            assert!(matches!(ExperimentConfig::parse(text, false), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let o = Overrides {
            seed: Some(9),
            reps: Some(3),
            methods: Some(vec!["lpevi".into()]),
            workers: Some(2),
            out: Some("x".into()),
        };
        let c = ExperimentConfig::resolve(None, &o).unwrap();
        assert_eq!((c.seed, c.reps, c.workers), (9, 3, 2));
        assert_eq!(c.methods().unwrap(), vec![Method::Lpevi]);
        assert_eq!(c.out, PathBuf::from("x"));
    }

    #[test]
    fn manifest_config_is_accepted() {
        let c = ExperimentConfig { seed: 5, ..Default::default() };
        let manifest = serde_json::json!({ "command": "run", "config": c });
        assert_eq!(ExperimentConfig::parse(&manifest.to_string(), true).unwrap(), c);
    }
}
