use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Schedule;
use crate::agents::{ArchSpec, HeadKind};
use crate::attacks::{AttackKind, AttackSpec};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::replay::ReplayConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Q explores, learns and is deployed.
    Dqn,
    /// Q learns from replay; a student distilled from Q explores and is deployed.
    Rsdqn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Rsdqn => "rsdqn",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(Algorithm::Dqn),
            "rsdqn" => Ok(Algorithm::Rsdqn),
            other => Err(Error::Config(format!("unknown algorithm {other:?} (expected dqn or rsdqn)"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Student distillation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error between student and teacher Q-values.
    Mse,
    /// Cross-entropy of the student's Q-softmax against the teacher's greedy action.
    Ce,
    /// Advantage cross-entropy plus value squared error.
    CeDuel,
    /// Q cross-entropy plus value squared error.
    Hybrid,
    /// [`LossKind::Ce`] on a PGD-perturbed state.
    CeDef,
    /// [`LossKind::CeDuel`] on a PGD-perturbed state.
    CeDuelDef,
    /// Value squared error plus a mix of advantage cross-entropy and interval loss.
    Provable,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Mse,
        LossKind::Ce,
        LossKind::CeDuel,
        LossKind::Hybrid,
        LossKind::CeDef,
        LossKind::CeDuelDef,
        LossKind::Provable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
            LossKind::CeDuel => "ce_duel",
            LossKind::Hybrid => "hybrid",
            LossKind::CeDef => "ce_def",
            LossKind::CeDuelDef => "ce_duel_def",
            LossKind::Provable => "provable",
        }
    }

    pub fn needs_dueling(self) -> bool {
        matches!(
            self,
            LossKind::CeDuel | LossKind::Hybrid | LossKind::CeDuelDef | LossKind::Provable
        )
    }

    pub fn is_adversarial(self) -> bool {
        matches!(self, LossKind::CeDef | LossKind::CeDuelDef)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown defense {s:?}")))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Final weight of the cross-entropy term in the provable loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPreset {
    /// λ anneals 1 → 0, all weight ends on the interval loss.
    #[default]
    ToZero,
    /// λ anneals 1 → 0.5.
    ToHalf,
}

/// Training hyperparameters. Every field has a default; config files only
/// list what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr_q: f64,
    pub lr_s: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    /// Target network refresh period in frames.
    pub target_sync: u64,
    pub frames: u64,
    /// Frames collected before the first update.
    pub warmup: u64,
    /// Frames between updates once learning has started.
    pub train_every: u64,
    /// Noise multiplier while exploring.
    pub kappa: f64,
    /// ε-greedy probability over frames.
    pub exploration: Schedule,
    pub double_q: bool,
    pub clip_rewards: bool,
    pub replay: ReplayConfig,
    pub hidden: Vec<usize>,
    pub dueling: bool,
    pub sigma_init: f64,
    pub factorized_noise: bool,
    /// A validation episode follows every this many training episodes.
    pub validation_interval: u64,
    pub validation_epsilon: f64,
    /// Weight of the distillation term.
    pub lambda_d: f64,
    pub lambda_preset: LambdaPreset,
    /// Overrides the preset λ schedule.
    pub lambda_schedule: Option<Schedule>,
    /// Largest box radius of the provable loss.
    pub box_epsilon: f64,
    /// Overrides the default box-radius schedule.
    pub box_schedule: Option<Schedule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr_q: 1e-4,
            lr_s: 2e-4,
            adam_epsilon: 1.5e-4,
            batch_size: 32,
            target_sync: 2000,
            frames: 200_000,
            warmup: 4000,
            train_every: 1,
            kappa: 4.0,
            exploration: Schedule::new(1.0, 0.0, 20_000, 0),
            double_q: true,
            clip_rewards: true,
            replay: ReplayConfig::default(),
            hidden: vec![64],
            dueling: true,
            sigma_init: 0.017,
            factorized_noise: false,
            validation_interval: 10,
            validation_epsilon: 0.005,
            lambda_d: 1.0,
            lambda_preset: LambdaPreset::ToZero,
            lambda_schedule: None,
            box_epsilon: 1.0 / 255.0,
            box_schedule: None,
        }
    }
}

impl TrainConfig {
    /// Window of the provable-loss annealing: from one eighth of the run to
    /// its end.
    fn anneal_window(&self) -> (u64, u64) {
        let delay = self.frames / 8;
        (delay, self.frames - delay)
    }

    /// Weight λ of the cross-entropy term in the provable loss.
    pub fn lambda(&self) -> Schedule {
        self.lambda_schedule.unwrap_or_else(|| {
            let (delay, duration) = self.anneal_window();
            let end = match self.lambda_preset {
                LambdaPreset::ToZero => 0.0,
                LambdaPreset::ToHalf => 0.5,
            };
            Schedule::new(1.0, end, duration, delay)
        })
    }

    /// Radius of the box used by the provable loss.
    pub fn box_radius(&self) -> Schedule {
        self.box_schedule.unwrap_or_else(|| {
            let (delay, duration) = self.anneal_window();
            Schedule::new(0.0, self.box_epsilon, duration, delay)
        })
    }

    pub fn adam_q(&self) -> AdamConfig {
        AdamConfig {
            epsilon: self.adam_epsilon,
            ..AdamConfig::with_lr(self.lr_q)
        }
    }

    pub fn adam_s(&self) -> AdamConfig {
        AdamConfig {
            epsilon: self.adam_epsilon,
            ..AdamConfig::with_lr(self.lr_s)
        }
    }

    pub fn arch(&self, input_dim: usize, actions: usize, noisy: bool) -> ArchSpec {
        let head = if self.dueling { HeadKind::Dueling } else { HeadKind::Plain };
        let mut spec = ArchSpec::new(input_dim, self.hidden.clone(), actions, head, noisy);
        spec.sigma_init = self.sigma_init;
        spec.kappa = self.kappa;
        spec.factorized_noise = self.factorized_noise;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("lr_q", self.lr_q),
            ("lr_s", self.lr_s),
            ("adam_epsilon", self.adam_epsilon),
            ("lambda_d", self.lambda_d),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gamma > 1.0 {
            return Err(Error::Config(format!("gamma must be ≤ 1, got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.train_every == 0 || self.frames == 0 {
            return Err(Error::Config(
                "batch_size, target_sync, train_every and frames must be positive".into(),
            ));
        }
        if self.validation_interval == 0 {
            return Err(Error::Config("validation_interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.validation_epsilon) {
            return Err(Error::Config("validation_epsilon must lie in [0, 1]".into()));
        }
        if !(self.kappa >= 1.0) {
            return Err(Error::Config(format!("kappa must be ≥ 1, got {}", self.kappa)));
        }
        if !(self.box_epsilon >= 0.0) {
            return Err(Error::Config("box_epsilon must be ≥ 0".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        for s in [self.exploration, self.lambda(), self.box_radius()] {
            s.validate()?;
        }
        let e = self.exploration;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return Err(Error::Config("exploration schedule must stay in [0, 1]".into()));
        }
        self.replay.validate()
    }
}

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvKind,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Student loss; ignored by DQN.
    pub defense: LossKind,
    /// Attack used inside adversarial losses.
    pub defense_attack: AttackSpec,
    /// Attack applied to the observations of the exploring agent.
    pub train_attack: AttackSpec,
    pub config: TrainConfig,
}

impl RunSpec {
    pub fn new(env: EnvKind, seed: u64, algorithm: Algorithm, defense: LossKind) -> Self {
        Self {
            env,
            seed,
            algorithm,
            defense,
            defense_attack: AttackSpec::pgd(crate::attacks::DEFAULT_EPSILON, 1),
            train_attack: AttackSpec::none(),
            config: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.train_attack.validate()?;
        if self.algorithm == Algorithm::Rsdqn {
            if self.defense.needs_dueling() && !self.config.dueling {
                return Err(Error::Config(format!(
                    "defense {} needs a dueling architecture",
                    self.defense
                )));
            }
            if self.defense.is_adversarial() {
                self.defense_attack.validate()?;
                if self.defense_attack.kind == AttackKind::None {
                    return Err(Error::Config(format!("defense {} needs a defense attack", self.defense)));
                }
            }
        }
        Ok(())
    }
}
