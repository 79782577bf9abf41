//! Gradient-sign observation attacks.
//!
//! FGSM moves every input coordinate by `ε` in the sign direction of the
//! cross-entropy gradient of `softmax(Q(x))` against a label; PGD repeats that
//! `k` times with step `ε/k`, projecting back onto the ε-ball around the
//! clean state after each step. The training-time variant flips the sign so
//! that the perturbation reinforces the label instead of moving away from it.
//!
//! All outputs are clamped to the observation range `[0, 1]`. Several states
//! may be attacked at once by passing a `[batch, input]` row-major buffer and
//! one label per row; rows do not interact.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentNet, Mode, OutputGrad};
use crate::error::{Error, Result};
use crate::nn::loss::cross_entropy_batch;

/// Default attack radius, about one 8-bit intensity step.
pub const DEFAULT_EPSILON: f64 = 0.004;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Fgsm,
    Pgd,
    TrainingPgd,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::TrainingPgd => "training_pgd",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            "training_pgd" | "training-pgd" => Ok(AttackKind::TrainingPgd),
            other => Err(Error::Config(format!("unknown attack kind {other:?}"))),
        }
    }
}

/// Direction of the gradient-sign step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// Increase the loss of the label (test-time attack).
    Away,
    /// Decrease the loss of the label (training-time attack).
    Toward,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Away => 1.0,
            Sign::Toward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: u32,
    /// Start PGD from a uniform point of the ball instead of the clean state.
    #[serde(default)]
    pub random_start: bool,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_steps() -> u32 {
    1
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl AttackSpec {
    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            epsilon: DEFAULT_EPSILON,
            steps: 1,
            random_start: false,
        }
    }

    pub fn new(kind: AttackKind, epsilon: f64, steps: u32) -> Self {
        Self {
            kind,
            epsilon,
            steps,
            random_start: false,
        }
    }

    pub fn pgd(epsilon: f64, steps: u32) -> Self {
        Self::new(AttackKind::Pgd, epsilon, steps)
    }

    pub fn training_pgd(epsilon: f64, steps: u32) -> Self {
        Self::new(AttackKind::TrainingPgd, epsilon, steps)
    }

    pub fn is_none(&self) -> bool {
        self.kind == AttackKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("attack radius must be finite and ≥ 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        Ok(())
    }

    /// Short form `kind` or `kind:k`, e.g. `pgd:4`.
    pub fn parse_short(s: &str, epsilon: f64) -> Result<Self> {
        let (kind, steps) = match s.split_once(':') {
            Some((kind, k)) => (
                kind,
                k.parse::<u32>()
                    .map_err(|_| Error::Config(format!("bad step count in attack {s:?}")))?,
            ),
            None => (s, 1),
        };
        let spec = Self::new(kind.trim().parse()?, epsilon, steps);
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AttackKind::None => write!(f, "none"),
            AttackKind::Fgsm => write!(f, "fgsm(eps={})", self.epsilon),
            AttackKind::Pgd => write!(f, "pgd(k={},eps={})", self.steps, self.epsilon),
            AttackKind::TrainingPgd => write!(f, "training_pgd(k={},eps={})", self.steps, self.epsilon),
        }
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn rows_for(net: &AgentNet, state: &[f64], labels: &[usize]) -> Result<usize> {
    let d = net.input_dim();
    if state.len() != labels.len() * d || labels.is_empty() {
        return Err(Error::dim(format!(
            "{} state values for {} labels of input width {d}",
            state.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&t| t >= net.actions()) {
        return Err(Error::Index {
            index: bad,
            len: net.actions(),
        });
    }
    Ok(labels.len())
}

/// `∇_x` of the mean cross-entropy of `softmax(Q(x))` against `labels`.
pub fn loss_gradient(net: &AgentNet, state: &[f64], labels: &[usize], mode: Mode) -> Result<Vec<f64>> {
    rows_for(net, state, labels)?;
    net.input_gradient(state, mode, |out| {
        let (_, dq) = cross_entropy_batch(&out.q, out.actions, labels)?;
        Ok(OutputGrad {
            q: Some(dq),
            ..OutputGrad::default()
        })
    })
}

/// One gradient-sign step of size `epsilon`, clamped to `[0, 1]`.
pub fn fgsm(net: &AgentNet, state: &[f64], labels: &[usize], epsilon: f64, sign: Sign, mode: Mode) -> Result<Vec<f64>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("attack radius {epsilon} is negative")));
    }
    if epsilon == 0.0 {
        rows_for(net, state, labels)?;
        return Ok(state.to_vec());
    }
    let grad = loss_gradient(net, state, labels, mode)?;
    let step = sign.factor() * epsilon;
    Ok(state
        .iter()
        .zip(&grad)
        .map(|(x, g)| (x + step * sgn(*g)).clamp(0.0, 1.0))
        .collect())
}

fn project(x: &mut [f64], origin: &[f64], epsilon: f64) {
    for (v, o) in x.iter_mut().zip(origin) {
        *v = v.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    }
}

/// `k` FGSM steps of size `ε/k` from the clean state, each followed by
/// projection onto the ε-ball around `state` intersected with `[0, 1]`.
pub fn pgd(
    net: &AgentNet,
    state: &[f64],
    labels: &[usize],
    epsilon: f64,
    steps: u32,
    sign: Sign,
    mode: Mode,
) -> Result<Vec<f64>> {
    pgd_from(net, state, state.to_vec(), labels, epsilon, steps, sign, mode)
}

/// [`pgd`] started from a uniformly random point of the ball.
#[allow(clippy::too_many_arguments)]
pub fn pgd_random_start<R: Rng + ?Sized>(
    net: &AgentNet,
    state: &[f64],
    labels: &[usize],
    epsilon: f64,
    steps: u32,
    sign: Sign,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut start: Vec<f64> = state
        .iter()
        .map(|v| if epsilon > 0.0 { v + rng.random_range(-epsilon..=epsilon) } else { *v })
        .collect();
    project(&mut start, state, epsilon);
    pgd_from(net, state, start, labels, epsilon, steps, sign, mode)
}

#[allow(clippy::too_many_arguments)]
fn pgd_from(
    net: &AgentNet,
    state: &[f64],
    start: Vec<f64>,
    labels: &[usize],
    epsilon: f64,
    steps: u32,
    sign: Sign,
    mode: Mode,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Argument("PGD needs at least one step".into()));
    }
    let step = epsilon / steps as f64;
    let mut x = start;
    for _ in 0..steps {
        x = fgsm(net, &x, labels, step, sign, mode)?;
        project(&mut x, state, epsilon);
    }
    Ok(x)
}

/// Perturbs the observation an agent is about to act on. The label of each
/// row is the agent's own greedy action on the clean state.
pub fn perturb_for_agent<R: Rng + ?Sized>(
    spec: &AttackSpec,
    net: &AgentNet,
    state: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if spec.is_none() {
        return Ok(state.to_vec());
    }
    spec.validate()?;
    let labels = net.predict(state, mode)?.greedy();
    let (steps, sign) = match spec.kind {
        AttackKind::None => unreachable!(),
        AttackKind::Fgsm => (1, Sign::Away),
        AttackKind::Pgd => (spec.steps, Sign::Away),
        AttackKind::TrainingPgd => (spec.steps, Sign::Toward),
    };
    if spec.random_start {
        pgd_random_start(net, state, &labels, spec.epsilon, steps, sign, mode, rng)
    } else {
        pgd(net, state, &labels, spec.epsilon, steps, sign, mode)
    }
}
