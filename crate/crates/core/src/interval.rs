//! Interval (box) abstract domain over the decision path of an [`AgentNet`].
//!
//! A box is propagated in center/radius form. An affine layer maps
//! `(c, h)` to `(W·c + b, |W|·h)`, a ReLU maps `[l, u]` to
//! `[max(l, 0), max(u, 0)]`. Every concrete input inside the box lands inside
//! the propagated output bounds.
//!
//! Only the decision path is propagated: the trunk followed by the advantage
//! layer for dueling networks (the value head never influences the greedy
//! action) or the output layer for plain networks.

use serde::{Deserialize, Serialize};

use crate::agents::{argmax, AgentNet, Mode};
use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_gtx_acc, matmul_gw, matmul_xwt};
use crate::nn::{affine, Linear, Tensor};

/// Number of bisection steps used by [`epsilon_max`].
pub const SEARCH_ITERATIONS: u32 = 20;

/// Lower and upper bound tensors of equal shape with `lower ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalActivation {
    lower: Tensor,
    upper: Tensor,
}

impl IntervalActivation {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::dim(format!(
                "interval bounds of shapes {:?} and {:?}",
                lower.shape(),
                upper.shape()
            )));
        }
        if let Some(i) = lower.data().iter().zip(upper.data()).position(|(l, u)| !(l <= u)) {
            return Err(Error::Argument(format!(
                "lower bound {} exceeds upper bound {} at {i}",
                lower.data()[i],
                upper.data()[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate interval containing exactly `point`.
    pub fn point(point: Tensor) -> Self {
        Self {
            lower: point.clone(),
            upper: point,
        }
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.lower.len()
            && x
                .iter()
                .zip(self.lower.data().iter().zip(self.upper.data()))
                .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    fn center_radius(&self) -> (Vec<f64>, Vec<f64>) {
        self.lower
            .data()
            .iter()
            .zip(self.upper.data())
            .map(|(l, u)| ((l + u) / 2.0, (u - l) / 2.0))
            .unzip()
    }
}

/// The L∞ box of radius `epsilon` around `state`, clamped to the observation
/// range `[0, 1]`.
pub fn box_around(state: &Tensor, epsilon: f64) -> Result<IntervalActivation> {
    if !(epsilon >= 0.0) {
        return Err(Error::Argument(format!("box radius must be non-negative, got {epsilon}")));
    }
    let lower = state.data().iter().map(|v| (v - epsilon).clamp(0.0, 1.0)).collect();
    let upper = state.data().iter().map(|v| (v + epsilon).clamp(0.0, 1.0)).collect();
    IntervalActivation::new(
        Tensor::new(state.shape().to_vec(), lower)?,
        Tensor::new(state.shape().to_vec(), upper)?,
    )
}

#[derive(Debug, Clone)]
struct LayerRecord {
    center_in: Vec<f64>,
    radius_in: Vec<f64>,
    /// Pre-activation bounds, recorded for ReLU layers only.
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Intermediate values of a recorded propagation, consumed by
/// [`backward_interval`].
#[derive(Debug, Clone)]
pub struct IntervalPass {
    batch: usize,
    noise_scale: f64,
    layers: Vec<LayerRecord>,
}

fn abs_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| v.abs()).collect()
}

fn run(net: &AgentNet, input: &IntervalActivation, mode: Mode, keep: bool) -> Result<(IntervalActivation, Option<IntervalPass>)> {
    let d = net.input_dim();
    let n = input.lower.len();
    if n == 0 || n % d != 0 {
        return Err(Error::dim(format!("box of {n} values for network input {d}")));
    }
    let batch = n / d;
    let scale = net.noise_scale(mode);
    let path: Vec<&Linear> = net.layers().decision_path().collect();
    let last = path.len() - 1;
    let (mut c, mut h) = input.center_radius();
    let mut records = Vec::new();
    let mut out = (Vec::new(), Vec::new());
    for (i, layer) in path.iter().enumerate() {
        let eff = layer.effective(net.params(), scale);
        let cn = affine(&c, &eff.weight, &eff.bias, batch, layer.in_dim, layer.out_dim);
        let mut hn = vec![0.0; batch * layer.out_dim];
        matmul_xwt(&h, &abs_weights(&eff.weight), batch, layer.in_dim, layer.out_dim, &mut hn, false);
        let lower: Vec<f64> = cn.iter().zip(&hn).map(|(c, h)| c - h).collect();
        let upper: Vec<f64> = cn.iter().zip(&hn).map(|(c, h)| c + h).collect();
        if i == last {
            if keep {
                records.push(LayerRecord {
                    center_in: std::mem::take(&mut c),
                    radius_in: std::mem::take(&mut h),
                    lower: Vec::new(),
                    upper: Vec::new(),
                });
            }
            out = (lower, upper);
            break;
        }
        let (nc, nh): (Vec<f64>, Vec<f64>) = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| {
                let (l, u) = (l.max(0.0), u.max(0.0));
                ((l + u) / 2.0, (u - l) / 2.0)
            })
            .unzip();
        let prev_c = std::mem::replace(&mut c, nc);
        let prev_h = std::mem::replace(&mut h, nh);
        if keep {
            records.push(LayerRecord {
                center_in: prev_c,
                radius_in: prev_h,
                lower,
                upper,
            });
        }
    }
    let width = path[last].out_dim;
    let shape = if input.lower.shape().len() == 2 { vec![batch, width] } else { vec![width] };
    let result = IntervalActivation {
        lower: Tensor::new(shape.clone(), out.0)?,
        upper: Tensor::new(shape, out.1)?,
    };
    let pass = keep.then_some(IntervalPass {
        batch,
        noise_scale: scale,
        layers: records,
    });
    Ok((result, pass))
}

/// Bounds on the decision outputs over every input in `input`, noise disabled.
pub fn propagate(net: &AgentNet, input: &IntervalActivation) -> Result<IntervalActivation> {
    propagate_in(net, input, Mode::Eval)
}

pub fn propagate_in(net: &AgentNet, input: &IntervalActivation, mode: Mode) -> Result<IntervalActivation> {
    Ok(run(net, input, mode, false)?.0)
}

/// Propagation that keeps what [`backward_interval`] needs.
pub fn propagate_recorded(net: &AgentNet, input: &IntervalActivation, mode: Mode) -> Result<(IntervalActivation, IntervalPass)> {
    let (out, pass) = run(net, input, mode, true)?;
    Ok((out, pass.expect("recorded")))
}

/// Accumulates parameter gradients of a loss on the propagated bounds, given
/// `∂L/∂lower` and `∂L/∂upper` of the output.
pub fn backward_interval(net: &mut AgentNet, pass: &IntervalPass, d_lower: &[f64], d_upper: &[f64]) -> Result<()> {
    let batch = pass.batch;
    let scale = pass.noise_scale;
    let (layers, params) = net.split_mut();
    let path: Vec<&Linear> = layers.decision_path().collect();
    if path.len() != pass.layers.len() {
        return Err(Error::State("interval record does not match the network".into()));
    }
    let out_n = batch * path.last().expect("non-empty path").out_dim;
    if d_lower.len() != out_n || d_upper.len() != out_n {
        return Err(Error::dim(format!("bound gradients must have {out_n} values")));
    }
    // Gradients with respect to the affine output (center, radius).
    let mut dc: Vec<f64> = d_lower.iter().zip(d_upper).map(|(l, u)| l + u).collect();
    let mut dh: Vec<f64> = d_lower.iter().zip(d_upper).map(|(l, u)| u - l).collect();
    for (i, layer) in path.iter().enumerate().rev() {
        let rec = &pass.layers[i];
        let (k, n) = (layer.in_dim, layer.out_dim);
        let eff = layer.effective(params, scale);
        let weight = eff.weight.to_vec();
        let abs_w = abs_weights(&weight);
        drop(eff);

        let mut dw = vec![0.0; n * k];
        matmul_gtx_acc(&dc, &rec.center_in, batch, n, k, &mut dw);
        let mut dw_abs = vec![0.0; n * k];
        matmul_gtx_acc(&dh, &rec.radius_in, batch, n, k, &mut dw_abs);
        for ((g, a), w) in dw.iter_mut().zip(&dw_abs).zip(&weight) {
            if *w > 0.0 {
                *g += a;
            } else if *w < 0.0 {
                *g -= a;
            }
        }
        let mut db = vec![0.0; n];
        for row in dc.chunks(n) {
            crate::nn::add_into(&mut db, row);
        }

        if i > 0 {
            let mut dc_in = vec![0.0; batch * k];
            matmul_gw(&dc, &weight, batch, n, k, &mut dc_in);
            let mut dh_in = vec![0.0; batch * k];
            matmul_gw(&dh, &abs_w, batch, n, k, &mut dh_in);
            // Through the previous layer's ReLU back to its affine output.
            let prev = &pass.layers[i - 1];
            dc = Vec::with_capacity(dc_in.len());
            dh = Vec::with_capacity(dh_in.len());
            for j in 0..dc_in.len() {
                let dl = if prev.lower[j] > 0.0 { (dc_in[j] - dh_in[j]) / 2.0 } else { 0.0 };
                let du = if prev.upper[j] > 0.0 { (dc_in[j] + dh_in[j]) / 2.0 } else { 0.0 };
                dc.push(dl + du);
                dh.push(du - dl);
            }
        }
        layer.accumulate(params, scale, &dw, &db);
    }
    Ok(())
}

/// Worst-case logits for `target`: its lower bound, every other action's
/// upper bound.
fn worst_case_row(lower: &[f64], upper: &[f64], target: usize) -> Vec<f64> {
    let mut z = upper.to_vec();
    z[target] = lower[target];
    z
}

/// Cross-entropy of the worst-case logit vector. Reduces to the ordinary
/// cross-entropy on a point interval and grows with the interval width.
pub fn interval_loss(g: &IntervalActivation, target: usize) -> Result<f64> {
    let (lower, upper) = (g.lower.data(), g.upper.data());
    if target >= lower.len() {
        return Err(Error::Index {
            index: target,
            len: lower.len(),
        });
    }
    crate::nn::cross_entropy(&Tensor::vector(worst_case_row(lower, upper, target)), target)
}

/// Mean interval loss over a batch with gradients wrt the lower and upper
/// bounds.
pub fn interval_loss_batch(g: &IntervalActivation, targets: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let batch = targets.len();
    let n = g.lower.len();
    if batch == 0 || n % batch != 0 {
        return Err(Error::dim(format!("{n} bounds for {batch} targets")));
    }
    let actions = n / batch;
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut d_lower = vec![0.0; n];
    let mut d_upper = vec![0.0; n];
    for (r, &t) in targets.iter().enumerate() {
        let span = r * actions..(r + 1) * actions;
        let z = worst_case_row(&g.lower.data()[span.clone()], &g.upper.data()[span.clone()], t);
        let (l, grad) = crate::nn::loss::cross_entropy_with_grad(&z, t)?;
        total += l;
        for (a, gv) in grad.into_iter().enumerate() {
            if a == t {
                d_lower[span.start + a] = gv * scale;
            } else {
                d_upper[span.start + a] = gv * scale;
            }
        }
    }
    Ok((total * scale, d_lower, d_upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertResult {
    pub certified: bool,
    pub action: usize,
    pub epsilon: f64,
}

fn certify_with(net: &AgentNet, state: &Tensor, action: usize, epsilon: f64) -> Result<bool> {
    let bounds = propagate(net, &box_around(state, epsilon)?)?;
    let lower_t = bounds.lower.data()[action];
    Ok(bounds
        .upper
        .data()
        .iter()
        .enumerate()
        .all(|(a, &u)| a == action || lower_t > u))
}

fn decision_action(net: &AgentNet, state: &Tensor) -> Result<usize> {
    let out = net.predict(state.data(), Mode::Eval)?;
    if out.batch != 1 {
        return Err(Error::dim("certification takes a single state"));
    }
    Ok(argmax(out.decision()))
}

/// Checks that the greedy action `t` on `state` has a lower bound strictly
/// above every other action's upper bound over the box of radius `epsilon`.
/// A positive answer is sound; ties are never certified.
pub fn certify_action(net: &AgentNet, state: &Tensor, epsilon: f64) -> Result<CertResult> {
    let action = decision_action(net, state)?;
    Ok(CertResult {
        certified: certify_with(net, state, action, epsilon)?,
        action,
        epsilon,
    })
}

/// Outcome of the radius search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSearch {
    /// Largest radius found to be certified (the lower end of the bracket).
    pub epsilon: f64,
    /// Smallest radius found not to be certified, or 1.
    pub upper: f64,
    pub iterations: u32,
}

/// Largest certified radius on `[0, 1]` found by bisection.
pub fn epsilon_max(net: &AgentNet, state: &Tensor) -> Result<f64> {
    Ok(search_epsilon_max(net, state)?.epsilon)
}

/// Bisection with [`SEARCH_ITERATIONS`] steps; returns 0 without searching
/// when even the point is not certified.
pub fn search_epsilon_max(net: &AgentNet, state: &Tensor) -> Result<RadiusSearch> {
    let action = decision_action(net, state)?;
    if !certify_with(net, state, action, 0.0)? {
        return Ok(RadiusSearch {
            epsilon: 0.0,
            upper: 0.0,
            iterations: 0,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut iterations = 0;
    while iterations < SEARCH_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if certify_with(net, state, action, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(RadiusSearch {
        epsilon: lo,
        upper: hi,
        iterations,
    })
}
