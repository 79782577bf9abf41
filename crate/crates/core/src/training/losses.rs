//! Temporal-difference update of Q and the student distillation losses.
//!
//! All losses are means over the batch. The squared TD loss is additionally
//! weighted per item by the replay importance weights.

use rand::Rng;

use super::LossKind;
use crate::agents::{argmax, AgentNet, Mode, NetOutput, OutputGrad};
use crate::attacks::{perturb_for_agent, AttackSpec};
use crate::error::{Error, Result};
use crate::interval::{backward_interval, box_around, interval_loss_batch, propagate_recorded};
use crate::nn::loss::{cross_entropy_batch, mse_with_grad};
use crate::nn::{Adam, Tensor};
use crate::replay::Batch;

/// `Y = r` for terminal transitions, otherwise `r + γ·Q⁻(s')` at the greedy
/// next action of Q (double) or of Q⁻ itself.
pub fn td_targets(batch: &Batch, q: &AgentNet, target: &AgentNet, gamma: f64, double: bool) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Argument("TD targets of an empty batch".into()));
    }
    let next = batch.next_states();
    let tq = target.predict(&next, Mode::Train)?;
    let choice: Vec<usize> = if double {
        q.predict(&next, Mode::Train)?.greedy()
    } else {
        tq.greedy()
    };
    Ok(batch
        .transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.reward
            } else {
                t.reward + gamma * tq.q_row(i)[choice[i]]
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QUpdate {
    pub loss: f64,
    /// `|Y − Q(s)_a|` per batch item.
    pub td_errors: Vec<f64>,
}

/// Mean importance-weighted squared TD error and its gradient wrt Q-values.
pub fn td_loss(batch: &Batch, out: &NetOutput, targets: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = batch.len() as f64;
    let mut dq = vec![0.0; out.q.len()];
    let mut loss = 0.0;
    let mut errors = Vec::with_capacity(batch.len());
    for (i, t) in batch.transitions.iter().enumerate() {
        let delta = targets[i] - out.q_row(i)[t.action];
        let w = batch.weights[i];
        loss += w * delta * delta;
        dq[i * out.actions + t.action] = -2.0 * w * delta / n;
        errors.push(delta.abs());
    }
    (loss / n, dq, errors)
}

/// One Adam step of Q on the squared TD loss of the taken actions.
pub fn q_update(
    q: &mut AgentNet,
    target: &AgentNet,
    batch: &Batch,
    optimizer: &mut Adam,
    gamma: f64,
    double: bool,
) -> Result<QUpdate> {
    let targets = td_targets(batch, q, target, gamma, double)?;
    let out = q.forward(&batch.states(), Mode::Train)?;
    if let Some(t) = batch.transitions.iter().find(|t| t.action >= out.actions) {
        return Err(Error::Index {
            index: t.action,
            len: out.actions,
        });
    }
    let (loss, dq, td_errors) = td_loss(batch, &out, &targets);
    q.backward(&OutputGrad {
        q: Some(dq),
        ..OutputGrad::default()
    })?;
    optimizer.step(q.params_mut())?;
    Ok(QUpdate { loss, td_errors })
}

/// Loss selection plus the schedule values it depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillSettings {
    pub kind: LossKind,
    pub lambda_d: f64,
    /// Attack producing the adversarial states of `ce_def` / `ce_duel_def`.
    pub attack: AttackSpec,
    /// Weight of the cross-entropy term in the provable loss.
    pub lambda: f64,
    /// Box radius of the provable loss.
    pub box_epsilon: f64,
}

impl DistillSettings {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            lambda_d: 1.0,
            attack: AttackSpec::pgd(crate::attacks::DEFAULT_EPSILON, 1),
            lambda: 1.0,
            box_epsilon: 0.0,
        }
    }
}

fn dueling_parts(out: &NetOutput, who: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    match (&out.advantage, &out.value) {
        (Some(a), Some(v)) => Ok((a.clone(), v.clone())),
        _ => Err(Error::Config(format!("the {who} network has no dueling head"))),
    }
}

fn scale(v: &mut [f64], by: f64) {
    v.iter_mut().for_each(|x| *x *= by);
}

/// Distillation loss of the student on `states` (`[batch, input]` flat).
/// The teacher's targets always come from the given states; adversarial
/// kinds evaluate the student on perturbed copies treated as constants.
/// With `accumulate`, parameter gradients are added to the student.
pub fn distill<R: Rng + ?Sized>(
    settings: &DistillSettings,
    states: &[f64],
    teacher: &AgentNet,
    student: &mut AgentNet,
    accumulate: bool,
    rng: &mut R,
) -> Result<f64> {
    let kind = settings.kind;
    if kind.needs_dueling() && !(teacher.is_dueling() && student.is_dueling()) {
        return Err(Error::Config(format!("loss {kind} needs dueling teacher and student")));
    }
    if teacher.actions() != student.actions() || teacher.input_dim() != student.input_dim() {
        return Err(Error::Config("teacher and student shapes differ".into()));
    }
    let t_out = teacher.predict(states, Mode::Eval)?;
    let actions = t_out.actions;
    let q_labels = t_out.greedy();
    let a_labels: Vec<usize> = t_out.decision().chunks(actions).map(argmax).collect();

    let input = if kind.is_adversarial() {
        perturb_for_agent(&settings.attack, student, states, Mode::Train, rng)?
    } else {
        states.to_vec()
    };
    let s_out = if accumulate {
        student.forward(&input, Mode::Train)?
    } else {
        student.predict(&input, Mode::Train)?
    };

    let mut grad = OutputGrad::default();
    let mut loss;
    match kind {
        LossKind::Mse => {
            let (l, g) = mse_with_grad(&s_out.q, &t_out.q)?;
            loss = l;
            grad.q = Some(g);
        }
        LossKind::Ce | LossKind::CeDef => {
            let (l, g) = cross_entropy_batch(&s_out.q, actions, &q_labels)?;
            loss = l;
            grad.q = Some(g);
        }
        LossKind::Hybrid => {
            let (_, t_v) = dueling_parts(&t_out, "teacher")?;
            let (_, s_v) = dueling_parts(&s_out, "student")?;
            let (l_ce, g_q) = cross_entropy_batch(&s_out.q, actions, &q_labels)?;
            let (l_v, g_v) = mse_with_grad(&s_v, &t_v)?;
            loss = l_v + settings.lambda_d * l_ce;
            let mut g_q = g_q;
            scale(&mut g_q, settings.lambda_d);
            grad.q = Some(g_q);
            grad.value = Some(g_v);
        }
        LossKind::CeDuel | LossKind::CeDuelDef | LossKind::Provable => {
            let (_, t_v) = dueling_parts(&t_out, "teacher")?;
            let (s_a, s_v) = dueling_parts(&s_out, "student")?;
            let (l_ce, mut g_a) = cross_entropy_batch(&s_a, actions, &a_labels)?;
            let (l_v, g_v) = mse_with_grad(&s_v, &t_v)?;
            let ce_weight = if kind == LossKind::Provable {
                settings.lambda_d * settings.lambda
            } else {
                settings.lambda_d
            };
            loss = l_v + ce_weight * l_ce;
            scale(&mut g_a, ce_weight);
            grad.advantage = Some(g_a);
            grad.value = Some(g_v);
        }
    }
    if accumulate {
        student.backward(&grad)?;
    }

    if kind == LossKind::Provable {
        let robust_weight = settings.lambda_d * (1.0 - settings.lambda);
        if robust_weight != 0.0 {
            let batch = states.len() / student.input_dim();
            let boxed = box_around(
                &Tensor::matrix(batch, student.input_dim(), states.to_vec())?,
                settings.box_epsilon,
            )?;
            let (g, pass) = propagate_recorded(student, &boxed, Mode::Train)?;
            let (l_i, mut d_lower, mut d_upper) = interval_loss_batch(&g, &a_labels)?;
            loss += robust_weight * l_i;
            if accumulate {
                scale(&mut d_lower, robust_weight);
                scale(&mut d_upper, robust_weight);
                backward_interval(student, &pass, &d_lower, &d_upper)?;
            }
        }
    }
    Ok(loss)
}

/// [`distill`] without touching gradients.
pub fn distill_loss<R: Rng + ?Sized>(
    settings: &DistillSettings,
    states: &[f64],
    teacher: &AgentNet,
    student: &AgentNet,
    rng: &mut R,
) -> Result<f64> {
    let mut probe = student.clone();
    distill(settings, states, teacher, &mut probe, false, rng)
}

/// One Adam step of the student on the distillation loss.
pub fn student_update<R: Rng + ?Sized>(
    settings: &DistillSettings,
    states: &[f64],
    teacher: &AgentNet,
    student: &mut AgentNet,
    optimizer: &mut Adam,
    rng: &mut R,
) -> Result<f64> {
    let loss = distill(settings, states, teacher, student, true, rng)?;
    optimizer.step(student.params_mut())?;
    Ok(loss)
}
