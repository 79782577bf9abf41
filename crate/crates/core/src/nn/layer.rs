use std::borrow::Cow;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_gtx_acc, matmul_gw, matmul_xwt};
use crate::nn::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// `activation(W·x + b)` for a vector `x` or each row of a `[batch, in]` matrix.
///
/// `weight` is `[out, in]`, `bias` is `[out]`.
pub fn forward_dense(weight: &Tensor, bias: &Tensor, input: &Tensor, activation: Activation) -> Result<Tensor> {
    if weight.shape().len() != 2 {
        return Err(Error::dim(format!("weight must be 2-D, got {:?}", weight.shape())));
    }
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if bias.len() != out_dim {
        return Err(Error::dim(format!("bias has {} entries, layer has {out_dim} outputs", bias.len())));
    }
    if input.cols() != in_dim {
        return Err(Error::dim(format!("input width {} vs layer input {in_dim}", input.cols())));
    }
    let batch = input.rows();
    let mut out = affine(input.data(), weight.data(), bias.data(), batch, in_dim, out_dim);
    if activation == Activation::Relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let shape = if input.shape().len() == 1 { vec![out_dim] } else { vec![batch, out_dim] };
    Tensor::new(shape, out)
}

pub(crate) fn affine(x: &[f64], w: &[f64], b: &[f64], batch: usize, in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * out_dim);
    for _ in 0..batch {
        out.extend_from_slice(b);
    }
    matmul_xwt(x, w, batch, in_dim, out_dim, &mut out, true);
    out
}

/// Current Gaussian draw for a noisy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearKind {
    Dense {
        weight: ParamId,
        bias: ParamId,
    },
    /// `W = μ_W + s·σ_W ⊙ ξ_W`, `b = μ_b + s·σ_b ⊙ ξ_b` where `s` is the
    /// caller's noise scale.
    Noisy {
        weight_mu: ParamId,
        weight_sigma: ParamId,
        bias_mu: ParamId,
        bias_sigma: ParamId,
        factorized: bool,
        noise: NoiseSample,
    },
}

/// A fully connected layer whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub kind: LinearKind,
}

/// Weights actually applied in one forward pass.
#[derive(Debug, Clone)]
pub struct Effective<'a> {
    pub weight: Cow<'a, [f64]>,
    pub bias: Cow<'a, [f64]>,
}

fn uniform_init<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl Linear {
    /// Plain layer, weights and biases uniform in ±1/√fan_in.
    pub fn dense<R: Rng + ?Sized>(
        params: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::matrix(out_dim, in_dim, uniform_init(out_dim * in_dim, in_dim, rng))?,
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::vector(uniform_init(out_dim, in_dim, rng)))?;
        Ok(Self {
            in_dim,
            out_dim,
            kind: LinearKind::Dense { weight, bias },
        })
    }

    /// Noisy layer with means initialized like [`Linear::dense`] and every
    /// noise scale set to `sigma_init`. The noise sample starts at zero.
    pub fn noisy<R: Rng + ?Sized>(
        params: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        sigma_init: f64,
        factorized: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight_mu = params.add(
            format!("{name}.weight_mu"),
            Tensor::matrix(out_dim, in_dim, uniform_init(out_dim * in_dim, in_dim, rng))?,
        )?;
        let weight_sigma = params.add(
            format!("{name}.weight_sigma"),
            Tensor::filled(vec![out_dim, in_dim], sigma_init),
        )?;
        let bias_mu = params.add(format!("{name}.bias_mu"), Tensor::vector(uniform_init(out_dim, in_dim, rng)))?;
        let bias_sigma = params.add(format!("{name}.bias_sigma"), Tensor::filled(vec![out_dim], sigma_init))?;
        Ok(Self {
            in_dim,
            out_dim,
            kind: LinearKind::Noisy {
                weight_mu,
                weight_sigma,
                bias_mu,
                bias_sigma,
                factorized,
                noise: NoiseSample {
                    weight: vec![0.0; out_dim * in_dim],
                    bias: vec![0.0; out_dim],
                },
            },
        })
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self.kind, LinearKind::Noisy { .. })
    }

    /// Draws a fresh noise sample. No-op for dense layers.
    pub fn resample_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (in_dim, out_dim) = (self.in_dim, self.out_dim);
        if let LinearKind::Noisy { factorized, noise, .. } = &mut self.kind {
            if *factorized {
                let f = |x: f64| x.signum() * x.abs().sqrt();
                let e_in: Vec<f64> = (0..in_dim).map(|_| f(StandardNormal.sample(rng))).collect();
                let e_out: Vec<f64> = (0..out_dim).map(|_| f(StandardNormal.sample(rng))).collect();
                for o in 0..out_dim {
                    for i in 0..in_dim {
                        noise.weight[o * in_dim + i] = e_out[o] * e_in[i];
                    }
                }
                noise.bias.copy_from_slice(&e_out);
            } else {
                noise.weight.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                noise.bias.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            }
        }
    }

    pub fn effective<'a>(&self, params: &'a ParamStore, noise_scale: f64) -> Effective<'a> {
        match &self.kind {
            LinearKind::Dense { weight, bias } => Effective {
                weight: Cow::Borrowed(params.value(*weight)),
                bias: Cow::Borrowed(params.value(*bias)),
            },
            LinearKind::Noisy {
                weight_mu,
                weight_sigma,
                bias_mu,
                bias_sigma,
                noise,
                ..
            } => {
                if noise_scale == 0.0 {
                    return Effective {
                        weight: Cow::Borrowed(params.value(*weight_mu)),
                        bias: Cow::Borrowed(params.value(*bias_mu)),
                    };
                }
                let mix = |mu: &[f64], sigma: &[f64], xi: &[f64]| -> Vec<f64> {
                    mu.iter()
                        .zip(sigma)
                        .zip(xi)
                        .map(|((m, s), x)| m + noise_scale * s * x)
                        .collect()
                };
                Effective {
                    weight: Cow::Owned(mix(params.value(*weight_mu), params.value(*weight_sigma), &noise.weight)),
                    bias: Cow::Owned(mix(params.value(*bias_mu), params.value(*bias_sigma), &noise.bias)),
                }
            }
        }
    }

    /// Pre-activation `x·Wᵀ + b` for a `[batch, in]` row-major input.
    pub fn forward(&self, params: &ParamStore, x: &[f64], batch: usize, noise_scale: f64) -> Result<Vec<f64>> {
        if x.len() != batch * self.in_dim {
            return Err(Error::dim(format!(
                "layer expects {} inputs per row, got {} values for {batch} rows",
                self.in_dim,
                x.len()
            )));
        }
        let eff = self.effective(params, noise_scale);
        Ok(affine(x, &eff.weight, &eff.bias, batch, self.in_dim, self.out_dim))
    }

    /// Gradient of the layer input given the output gradient.
    pub fn input_grad(&self, eff: &Effective<'_>, grad_out: &[f64], batch: usize) -> Vec<f64> {
        let mut dx = vec![0.0; batch * self.in_dim];
        matmul_gw(grad_out, &eff.weight, batch, self.out_dim, self.in_dim, &mut dx);
        dx
    }

    /// Accumulates `∂L/∂W_eff` and `∂L/∂b_eff` into the underlying parameters.
    pub fn accumulate(&self, params: &mut ParamStore, noise_scale: f64, dw: &[f64], db: &[f64]) {
        match &self.kind {
            LinearKind::Dense { weight, bias } => {
                add_into(params.grad_mut(*weight), dw);
                add_into(params.grad_mut(*bias), db);
            }
            LinearKind::Noisy {
                weight_mu,
                weight_sigma,
                bias_mu,
                bias_sigma,
                noise,
                ..
            } => {
                add_into(params.grad_mut(*weight_mu), dw);
                add_into(params.grad_mut(*bias_mu), db);
                if noise_scale != 0.0 {
                    let gs = params.grad_mut(*weight_sigma);
                    for ((g, d), xi) in gs.iter_mut().zip(dw).zip(&noise.weight) {
                        *g += d * noise_scale * xi;
                    }
                    let gs = params.grad_mut(*bias_sigma);
                    for ((g, d), xi) in gs.iter_mut().zip(db).zip(&noise.bias) {
                        *g += d * noise_scale * xi;
                    }
                }
            }
        }
    }

    /// Parameter gradients for a batch: `dW = gᵀ·x`, `db = Σ_rows g`.
    pub fn backward_params(
        &self,
        params: &mut ParamStore,
        noise_scale: f64,
        x: &[f64],
        grad_out: &[f64],
        batch: usize,
    ) {
        let mut dw = vec![0.0; self.out_dim * self.in_dim];
        matmul_gtx_acc(grad_out, x, batch, self.out_dim, self.in_dim, &mut dw);
        let mut db = vec![0.0; self.out_dim];
        for row in grad_out.chunks(self.out_dim) {
            add_into(&mut db, row);
        }
        self.accumulate(params, noise_scale, &dw, &db);
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
