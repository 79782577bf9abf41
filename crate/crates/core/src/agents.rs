//! Q-network and student architectures: an MLP trunk followed by either a
//! plain action head or a dueling advantage/value pair, optionally with noisy
//! layers for exploration.
//!
//! The dueling combination is
//!
//! ```text
//! Q(s)_a = V(s) + A(s)_a − mean_a' A(s)_a'
//! ```
//!
//! so `argmax_a Q(s)_a == argmax_a A(s)_a` for every state.
//!
//! Noisy layers carry one Gaussian sample at a time. The [`Mode`] of a forward
//! pass decides how much of that sample is applied: the exploration constant
//! κ in [`Mode::Explore`], 1 in [`Mode::Train`] and nothing in [`Mode::Eval`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{add_into, Linear, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Plain,
    Dueling,
}

/// Architecture descriptor. Fully determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub head: HeadKind,
    pub noisy: bool,
    #[serde(default)]
    pub factorized_noise: bool,
    #[serde(default = "default_sigma")]
    pub sigma_init: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_sigma() -> f64 {
    0.017
}

fn default_kappa() -> f64 {
    4.0
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, actions: usize, head: HeadKind, noisy: bool) -> Self {
        Self {
            input_dim,
            hidden,
            actions,
            head,
            noisy,
            factorized_noise: false,
            sigma_init: default_sigma(),
            kappa: default_kappa(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.actions == 0 {
            return Err(Error::Config("network needs at least one input and one action".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if self.kappa < 1.0 {
            return Err(Error::Config(format!("exploration constant κ must be ≥ 1, got {}", self.kappa)));
        }
        if !(self.sigma_init >= 0.0) {
            return Err(Error::Config("sigma_init must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Acting in the environment: noise scaled by κ.
    Explore,
    /// Loss computation: noise at unit scale.
    Train,
    /// Deployment and validation: noise disabled.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Plain(Linear),
    Dueling { advantage: Linear, value: Linear },
}

/// Layer structure of an [`AgentNet`], separate from its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers {
    pub trunk: Vec<Linear>,
    pub head: Head,
}

impl Layers {
    /// Trunk followed by the layer producing decisions (advantages for a
    /// dueling head, Q-values for a plain head).
    pub fn decision_path(&self) -> impl Iterator<Item = &Linear> {
        let last = match &self.head {
            Head::Plain(l) => l,
            Head::Dueling { advantage, .. } => advantage,
        };
        self.trunk.iter().chain(std::iter::once(last))
    }
}

/// Outputs of a batched forward pass, each flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub batch: usize,
    pub actions: usize,
    /// `[batch, actions]` Q-values (the dueling combination for dueling heads).
    pub q: Vec<f64>,
    /// `[batch, actions]` advantages, dueling only.
    pub advantage: Option<Vec<f64>>,
    /// `[batch]` state values, dueling only.
    pub value: Option<Vec<f64>>,
}

impl NetOutput {
    pub fn q_row(&self, i: usize) -> &[f64] {
        &self.q[i * self.actions..(i + 1) * self.actions]
    }

    /// Rows used for decisions: advantages for dueling heads, Q otherwise.
    pub fn decision(&self) -> &[f64] {
        self.advantage.as_deref().unwrap_or(&self.q)
    }

    pub fn q_tensor(&self) -> Tensor {
        Tensor::matrix(self.batch, self.actions, self.q.clone()).expect("consistent output shape")
    }

    pub fn greedy(&self) -> Vec<usize> {
        self.q.chunks(self.actions).map(argmax).collect()
    }
}

/// Gradient of a scalar loss with respect to the network outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrad {
    pub q: Option<Vec<f64>>,
    pub advantage: Option<Vec<f64>>,
    pub value: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Pass {
    batch: usize,
    noise_scale: f64,
    /// Input of every trunk layer, then the trunk output.
    activations: Vec<Vec<f64>>,
    /// Pre-activation of every trunk layer.
    pre: Vec<Vec<f64>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Network for Q, its target copy, or the student.
#[derive(Debug, Clone)]
pub struct AgentNet {
    spec: ArchSpec,
    params: ParamStore,
    layers: Layers,
    recorded: Option<Pass>,
}

impl PartialEq for AgentNet {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params && self.layers == other.layers
    }
}

impl AgentNet {
    pub fn new<R: Rng + ?Sized>(spec: ArchSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut trunk = Vec::with_capacity(spec.hidden.len());
        let mut width = spec.input_dim;
        // The first trunk layer is the feature extractor and stays deterministic;
        // every later layer is noisy when noise is enabled.
        for (i, &h) in spec.hidden.iter().enumerate() {
            let name = format!("trunk.{i}");
            let layer = if spec.noisy && i > 0 {
                Linear::noisy(&mut params, &name, width, h, spec.sigma_init, spec.factorized_noise, rng)?
            } else {
                Linear::dense(&mut params, &name, width, h, rng)?
            };
            trunk.push(layer);
            width = h;
        }
        let mut make = |name: &str, out: usize, params: &mut ParamStore| {
            if spec.noisy {
                Linear::noisy(params, name, width, out, spec.sigma_init, spec.factorized_noise, rng)
            } else {
                Linear::dense(params, name, width, out, rng)
            }
        };
        let head = match spec.head {
            HeadKind::Plain => Head::Plain(make("out", spec.actions, &mut params)?),
            HeadKind::Dueling => Head::Dueling {
                advantage: make("advantage", spec.actions, &mut params)?,
                value: make("value", 1, &mut params)?,
            },
        };
        Ok(Self {
            spec,
            params,
            layers: Layers { trunk, head },
            recorded: None,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &Layers {
        &self.layers
    }

    /// Layer structure and mutable parameters, borrowed together.
    pub fn split_mut(&mut self) -> (&Layers, &mut ParamStore) {
        (&self.layers, &mut self.params)
    }

    pub fn actions(&self) -> usize {
        self.spec.actions
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn is_dueling(&self) -> bool {
        self.spec.head == HeadKind::Dueling
    }

    pub fn noise_scale(&self, mode: Mode) -> f64 {
        if !self.spec.noisy {
            return 0.0;
        }
        match mode {
            Mode::Explore => self.spec.kappa,
            Mode::Train => 1.0,
            Mode::Eval => 0.0,
        }
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        let heads: Vec<&mut Linear> = match &mut self.layers.head {
            Head::Plain(l) => vec![l],
            Head::Dueling { advantage, value } => vec![advantage, value],
        };
        self.layers.trunk.iter_mut().chain(heads)
    }

    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.spec.noisy {
            for layer in self.layers_mut() {
                layer.resample_noise(rng);
            }
        }
    }

    /// Copies parameter values from a network with the same architecture.
    pub fn copy_params_from(&mut self, other: &AgentNet) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::dim("architectures differ"));
        }
        self.params.copy_values_from(&other.params)
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let d = self.spec.input_dim;
        if x.is_empty() || x.len() % d != 0 {
            return Err(Error::dim(format!("input of {} values for network input {d}", x.len())));
        }
        Ok(x.len() / d)
    }

    fn run(&self, x: &[f64], mode: Mode, keep: bool) -> Result<(NetOutput, Option<Pass>)> {
        let batch = self.check_input(x)?;
        let scale = self.noise_scale(mode);
        let mut activations = Vec::new();
        let mut pre_acts = Vec::new();
        let mut h = x.to_vec();
        for layer in &self.layers.trunk {
            let pre = layer.forward(&self.params, &h, batch, scale)?;
            let out: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            if keep {
                activations.push(std::mem::replace(&mut h, out));
                pre_acts.push(pre);
            } else {
                h = out;
            }
        }
        let actions = self.spec.actions;
        let output = match &self.layers.head {
            Head::Plain(out) => NetOutput {
                batch,
                actions,
                q: out.forward(&self.params, &h, batch, scale)?,
                advantage: None,
                value: None,
            },
            Head::Dueling { advantage, value } => {
                let a = advantage.forward(&self.params, &h, batch, scale)?;
                let v = value.forward(&self.params, &h, batch, scale)?;
                let mut q = Vec::with_capacity(a.len());
                for (row, &vv) in a.chunks(actions).zip(&v) {
                    let mean = row.iter().sum::<f64>() / actions as f64;
                    q.extend(row.iter().map(|ai| vv + (ai - mean)));
                }
                NetOutput {
                    batch,
                    actions,
                    q,
                    advantage: Some(a),
                    value: Some(v),
                }
            }
        };
        let pass = keep.then(|| {
            activations.push(h);
            Pass {
                batch,
                noise_scale: scale,
                activations,
                pre: pre_acts,
            }
        });
        Ok((output, pass))
    }

    /// Forward pass without recording, for acting and evaluation.
    pub fn predict(&self, x: &[f64], mode: Mode) -> Result<NetOutput> {
        Ok(self.run(x, mode, false)?.0)
    }

    /// Forward pass that records intermediate values for [`AgentNet::backward`].
    pub fn forward(&mut self, x: &[f64], mode: Mode) -> Result<NetOutput> {
        let (out, pass) = self.run(x, mode, true)?;
        self.recorded = pass;
        Ok(out)
    }

    /// Accumulates parameter gradients for the most recent recorded forward
    /// pass. The record is consumed.
    pub fn backward(&mut self, grad: &OutputGrad) -> Result<()> {
        let pass = self
            .recorded
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        backprop(&self.layers, &mut self.params, &pass, grad, true, false)?;
        Ok(())
    }

    /// Gradient of a loss with respect to the network input. `loss_grad`
    /// receives the forward outputs and returns the output gradient.
    /// Parameter gradients are left untouched.
    pub fn input_gradient<F>(&self, x: &[f64], mode: Mode, loss_grad: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&NetOutput) -> Result<OutputGrad>,
    {
        let (out, pass) = self.run(x, mode, true)?;
        let grad = loss_grad(&out)?;
        let mut scratch = self.params.clone();
        let dx = backprop(&self.layers, &mut scratch, &pass.expect("recorded"), &grad, false, true)?;
        Ok(dx.expect("input gradient requested"))
    }
}

fn backprop(
    layers: &Layers,
    params: &mut ParamStore,
    pass: &Pass,
    grad: &OutputGrad,
    want_params: bool,
    want_input: bool,
) -> Result<Option<Vec<f64>>> {
    let batch = pass.batch;
    let scale = pass.noise_scale;
    let features = pass.activations.last().expect("trunk output recorded");
    let check = |g: &Option<Vec<f64>>, n: usize, what: &str| -> Result<()> {
        match g {
            Some(v) if v.len() != n => Err(Error::dim(format!("{what} gradient has {} values, expected {n}", v.len()))),
            _ => Ok(()),
        }
    };

    let mut d_features = vec![0.0; features.len()];
    match &layers.head {
        Head::Plain(out) => {
            let n = batch * out.out_dim;
            check(&grad.q, n, "q")?;
            if grad.advantage.is_some() || grad.value.is_some() {
                return Err(Error::State("plain head has no advantage or value output".into()));
            }
            let dq = grad.q.clone().unwrap_or_else(|| vec![0.0; n]);
            head_backward(out, params, scale, features, &dq, batch, want_params, &mut d_features);
        }
        Head::Dueling { advantage, value } => {
            let actions = advantage.out_dim;
            check(&grad.q, batch * actions, "q")?;
            check(&grad.advantage, batch * actions, "advantage")?;
            check(&grad.value, batch, "value")?;
            let mut da = grad.advantage.clone().unwrap_or_else(|| vec![0.0; batch * actions]);
            let mut dv = grad.value.clone().unwrap_or_else(|| vec![0.0; batch]);
            if let Some(dq) = &grad.q {
                // ∂Q_a/∂A_b = δ_ab − 1/n, ∂Q_a/∂V = 1
                for r in 0..batch {
                    let row = &dq[r * actions..(r + 1) * actions];
                    let total: f64 = row.iter().sum();
                    let mean = total / actions as f64;
                    for (d, g) in da[r * actions..(r + 1) * actions].iter_mut().zip(row) {
                        *d += g - mean;
                    }
                    dv[r] += total;
                }
            }
            head_backward(advantage, params, scale, features, &da, batch, want_params, &mut d_features);
            head_backward(value, params, scale, features, &dv, batch, want_params, &mut d_features);
        }
    }

    let mut g = d_features;
    for (i, layer) in layers.trunk.iter().enumerate().rev() {
        for (gi, p) in g.iter_mut().zip(&pass.pre[i]) {
            if *p <= 0.0 {
                *gi = 0.0;
            }
        }
        let need_dx = i > 0 || want_input;
        let dx = need_dx.then(|| {
            let eff = layer.effective(params, scale);
            layer.input_grad(&eff, &g, batch)
        });
        if want_params {
            layer.backward_params(params, scale, &pass.activations[i], &g, batch);
        }
        match dx {
            Some(dx) => g = dx,
            None => return Ok(None),
        }
    }
    Ok(want_input.then_some(g))
}

#[allow(clippy::too_many_arguments)]
fn head_backward(
    layer: &Linear,
    params: &mut ParamStore,
    scale: f64,
    features: &[f64],
    grad_out: &[f64],
    batch: usize,
    want_params: bool,
    d_features: &mut [f64],
) {
    let eff = layer.effective(params, scale);
    let dx = layer.input_grad(&eff, grad_out, batch);
    drop(eff);
    add_into(d_features, &dx);
    if want_params {
        layer.backward_params(params, scale, features, grad_out, batch);
    }
}

/// Q-values for a single state (vector) or a batch (`[batch, input]` matrix).
pub fn q_values(net: &AgentNet, state: &Tensor, mode: Mode) -> Result<Tensor> {
    let out = net.predict(state.data(), mode)?;
    if state.shape().len() == 2 {
        Ok(out.q_tensor())
    } else {
        Ok(Tensor::vector(out.q))
    }
}

/// Greedy action for one state, lowest index on ties.
pub fn greedy_action(net: &AgentNet, state: &[f64], mode: Mode) -> Result<usize> {
    let out = net.predict(state, mode)?;
    if out.batch != 1 {
        return Err(Error::dim(format!("greedy_action takes one state, got {}", out.batch)));
    }
    Ok(argmax(&out.q))
}

/// With probability `epsilon` a uniformly random action, otherwise the
/// greedy action in [`Mode::Explore`]. Always consumes one uniform draw, plus
/// one more when exploring.
pub fn epsilon_greedy<R: Rng + ?Sized>(net: &AgentNet, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    epsilon_greedy_in(net, state, epsilon, Mode::Explore, rng)
}

pub fn epsilon_greedy_in<R: Rng + ?Sized>(
    net: &AgentNet,
    state: &[f64],
    epsilon: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Argument(format!("ε-greedy probability {epsilon} outside [0, 1]")));
    }
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..net.actions()))
    } else {
        greedy_action(net, state, mode)
    }
}
