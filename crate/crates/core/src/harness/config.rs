use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackSpec, DEFAULT_EPSILON};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::training::{Algorithm, LossKind, RunSpec, TrainConfig};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "RSDQN_OUTPUT_ROOT";

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_defense() -> LossKind {
    LossKind::CeDuel
}

fn default_defense_attack() -> AttackSpec {
    AttackSpec::pgd(DEFAULT_EPSILON, 1)
}

fn default_eval_attacks() -> Vec<AttackSpec> {
    vec![
        AttackSpec::none(),
        AttackSpec::pgd(DEFAULT_EPSILON, 1),
        AttackSpec::pgd(DEFAULT_EPSILON, 4),
        AttackSpec::pgd(DEFAULT_EPSILON, 50),
    ]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Settings of evaluation and certification episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Episodes per attack.
    pub episodes: u64,
    /// Episode `i` uses game seed `base_seed + i`.
    pub base_seed: u64,
    /// ε-greedy probability of the deployed agent.
    pub epsilon: f64,
    /// Episodes played for certification.
    pub certify_episodes: u64,
    /// Certify every `certify_stride`-th visited state.
    pub certify_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 15,
            base_seed: 1_000_000,
            epsilon: 0.005,
            certify_episodes: 15,
            certify_stride: 1,
        }
    }
}

/// A TOML experiment description. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: Option<EnvKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    #[serde(default = "default_defense")]
    pub defense: LossKind,
    #[serde(default = "default_defense_attack")]
    pub defense_attack: AttackSpec,
    #[serde(default)]
    pub train_attack: AttackSpec,
    #[serde(default = "default_eval_attacks")]
    pub eval_attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(env: EnvKind, algorithm: Algorithm) -> Self {
        Self {
            env: Some(env),
            seeds: default_seeds(),
            algorithm,
            defense: default_defense(),
            defense_attack: default_defense_attack(),
            train_attack: AttackSpec::none(),
            eval_attacks: default_eval_attacks(),
            train: TrainConfig::default(),
            evaluation: EvalConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs serialize")
    }

    pub fn env(&self) -> Result<EnvKind> {
        self.env
            .ok_or_else(|| Error::Config("missing environment name (`env = \"catch\"` or `\"crossing\"`)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        for seed in &self.seeds {
            self.run_spec(*seed)?.validate()?;
        }
        if self.eval_attacks.is_empty() {
            return Err(Error::Config("evaluation attack list is empty".into()));
        }
        for a in &self.eval_attacks {
            a.validate()?;
        }
        let e = &self.evaluation;
        if e.episodes == 0 || e.certify_episodes == 0 || e.certify_stride == 0 {
            return Err(Error::Config("evaluation episode counts and stride must be positive".into()));
        }
        if !(0.0..=1.0).contains(&e.epsilon) {
            return Err(Error::Config("evaluation epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn run_spec(&self, seed: u64) -> Result<RunSpec> {
        Ok(RunSpec {
            env: self.env()?,
            seed,
            algorithm: self.algorithm,
            defense: self.defense,
            defense_attack: self.defense_attack,
            train_attack: self.train_attack,
            config: self.train.clone(),
        })
    }

    /// Output directory, relocated under `$RSDQN_OUTPUT_ROOT` when relative.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_root().join(format!("seed-{seed}"))
    }
}
