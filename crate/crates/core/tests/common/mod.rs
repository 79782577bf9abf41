#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsdqn::agents::{AgentNet, ArchSpec, HeadKind};
use rsdqn::envs::{Environment, Step};
use rsdqn::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random net with up to three layers of at most `max_width` units.
pub fn random_net(seed: u64, input: usize, actions: usize, head: HeadKind, noisy: bool, max_width: usize) -> AgentNet {
    let mut r = rng(seed ^ 0x5eed);
    let depth = r.random_range(0..=2);
    let hidden = (0..depth).map(|_| r.random_range(2..=max_width)).collect();
    let mut net = AgentNet::new(ArchSpec::new(input, hidden, actions, head, noisy), &mut r).unwrap();
    // Larger weights than the default init so gradients are not uniformly tiny.
    for p in net.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    if noisy {
        net.resample_noise(&mut r);
    }
    net
}

pub fn random_states(seed: u64, batch: usize, dim: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..batch * dim).map(|_| r.random::<f64>()).collect()
}

/// All parameter gradients, flattened in store order.
pub fn grads(net: &AgentNet) -> Vec<f64> {
    net.params().iter().flat_map(|p| p.grad.data().to_vec()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Central differences of `loss` over every parameter of `net`, step `h`.
///
/// A coordinate that disagrees with `analytic` is re-estimated with steps
/// shrinking by 4. If the estimate moves with the step, the step straddled a
/// ReLU kink and the small-step limit is the derivative at the point. In a
/// smooth region the estimates agree and the mismatch stands.
pub fn numeric_grads(net: &AgentNet, analytic: &[f64], h: f64, mut loss: impl FnMut(&AgentNet) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
    for (pi, n) in sizes.into_iter().enumerate() {
        for i in 0..n {
            let orig = probe.params().iter().nth(pi).unwrap().value.data()[i];
            let mut central = |step: f64| {
                probe.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[i] = orig + step;
                let up = loss(&probe);
                probe.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[i] = orig - step;
                let down = loss(&probe);
                probe.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[i] = orig;
                (up - down) / (2.0 * step)
            };
            let mut d = central(h);
            if rel(analytic[out.len()], d) > 1e-4 {
                let mut step = h;
                for _ in 0..4 {
                    step /= 4.0;
                    let next = central(step);
                    let settled = rel(next, d) < 1e-5;
                    d = next;
                    if settled {
                        break;
                    }
                }
            }
            out.push(d);
        }
    }
    out
}

/// Largest relative error, with the denominator floored so that gradients
/// that are zero up to rounding compare in absolute terms.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel(*a, *n))
        .fold(0.0, f64::max)
}

/// Environment whose frame encodes the step index and whose rewards are
/// scripted, for checking the training loop frame by frame.
#[derive(Debug, Clone)]
pub struct StubEnv {
    pub length: usize,
    pub t: usize,
    pub done: bool,
    pub seeds: Vec<u64>,
}

impl StubEnv {
    pub fn new(length: usize) -> Self {
        Self { length, t: 0, done: true, seeds: Vec::new() }
    }

    fn frame(&self) -> Vec<f64> {
        let mut f = vec![0.0; 4];
        f[self.t % 4] = 1.0;
        f[(self.t / 4) % 4] += 0.25;
        f
    }
}

impl Environment for StubEnv {
    fn name(&self) -> &'static str {
        "stub"
    }
    fn actions(&self) -> usize {
        2
    }
    fn frame_shape(&self) -> (usize, usize) {
        (2, 2)
    }
    fn max_steps(&self) -> usize {
        self.length
    }
    fn max_abs_reward(&self) -> f64 {
        1.0
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.seeds.push(seed);
        self.t = 0;
        self.done = false;
        self.frame()
    }
    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(rsdqn::Error::State("stub finished".into()));
        }
        if action >= 2 {
            return Err(rsdqn::Error::Index { index: action, len: 2 });
        }
        self.t += 1;
        self.done = self.t >= self.length;
        Ok(Step {
            frame: self.frame(),
            reward: if action == 1 { 1.0 } else { 0.0 },
            done: self.done,
        })
    }
    fn scripted_action(&self) -> usize {
        1
    }
}

pub mod oracle {
    use super::*;
    use rsdqn::agents::Mode;
    use rsdqn::interval::{backward_interval, box_around, interval_loss_batch, propagate_in, propagate_recorded};
    use rsdqn::nn::Tensor;
    use rsdqn::replay::{observation, PrioritizedBuffer, ReplayConfig, Transition};
    use rsdqn::training::losses::{td_loss, td_targets};
    use rsdqn::training::{distill, distill_loss, DistillSettings, LossKind};

    pub const H: f64 = 1e-5;
    const INPUT: usize = 6;
    const ACTIONS: usize = 3;
    const BATCH: usize = 4;

    /// Every loss that is differentiable at a point, named, with the largest
    /// relative error between backprop and central differences.
    pub fn gradient_errors(seed: u64, max_width: usize) -> Vec<(&'static str, f64)> {
        let noisy = seed % 3 == 0;
        let states = random_states(seed, BATCH, INPUT);
        let teacher = random_net(seed + 10_000, INPUT, ACTIONS, HeadKind::Dueling, false, max_width);
        let mut out = Vec::new();

        let distill_cases: [(&'static str, LossKind, HeadKind, f64, f64); 6] = [
            ("mse", LossKind::Mse, HeadKind::Plain, 1.0, 0.0),
            ("ce", LossKind::Ce, HeadKind::Plain, 1.0, 0.0),
            ("ce (dueling student)", LossKind::Ce, HeadKind::Dueling, 1.0, 0.0),
            ("ce_duel", LossKind::CeDuel, HeadKind::Dueling, 1.0, 0.0),
            ("hybrid", LossKind::Hybrid, HeadKind::Dueling, 1.0, 0.0),
            ("provable", LossKind::Provable, HeadKind::Dueling, 0.5, 0.02),
        ];
        for (name, kind, head, lambda, eps) in distill_cases {
            let mut student = random_net(seed, INPUT, ACTIONS, head, noisy, max_width);
            let mut settings = DistillSettings::new(kind);
            settings.lambda = lambda;
            settings.box_epsilon = eps;
            student.params_mut().zero_grad();
            distill(&settings, &states, &teacher, &mut student, true, &mut rng(1)).unwrap();
            let analytic = grads(&student);
            let numeric = numeric_grads(&student, &analytic, H, |n| distill_loss(&settings, &states, &teacher, n, &mut rng(1)).unwrap());
            out.push((name, max_rel_error(&analytic, &numeric)));
        }

        // Interval loss alone at a fixed radius.
        let mut net = random_net(seed, INPUT, ACTIONS, HeadKind::Dueling, noisy, max_width);
        let targets: Vec<usize> = (0..BATCH).map(|i| (seed as usize + i) % ACTIONS).collect();
        let input = box_around(&Tensor::matrix(BATCH, INPUT, states.clone()).unwrap(), 0.03).unwrap();
        net.params_mut().zero_grad();
        let (g, pass) = propagate_recorded(&net, &input, Mode::Train).unwrap();
        let (_, dl, du) = interval_loss_batch(&g, &targets).unwrap();
        backward_interval(&mut net, &pass, &dl, &du).unwrap();
        let analytic = grads(&net);
        let numeric = numeric_grads(&net, &analytic, H, |n| {
            interval_loss_batch(&propagate_in(n, &input, Mode::Train).unwrap(), &targets).unwrap().0
        });
        out.push(("interval_loss", max_rel_error(&analytic, &numeric)));

        // Weighted squared TD loss with the targets held fixed.
        let mut q = random_net(seed, INPUT, ACTIONS, HeadKind::Dueling, noisy, max_width);
        let target = random_net(seed + 20_000, INPUT, ACTIONS, HeadKind::Dueling, false, max_width);
        let mut buffer = PrioritizedBuffer::new(ReplayConfig::default()).unwrap();
        let next = random_states(seed + 1, BATCH, INPUT);
        for i in 0..BATCH {
            buffer.push(Transition {
                state: observation(&states[i * INPUT..(i + 1) * INPUT]),
                action: i % ACTIONS,
                reward: i as f64 - 1.5,
                next_state: observation(&next[i * INPUT..(i + 1) * INPUT]),
                done: i == 3,
            });
        }
        let batch = buffer.sample(BATCH, &mut rng(seed)).unwrap();
        let ys = td_targets(&batch, &q, &target, 0.99, true).unwrap();
        q.params_mut().zero_grad();
        let o = q.forward(&batch.states(), Mode::Train).unwrap();
        let (_, dq, _) = td_loss(&batch, &o, &ys);
        q.backward(&rsdqn::agents::OutputGrad { q: Some(dq), ..Default::default() }).unwrap();
        let analytic = grads(&q);
        let numeric = numeric_grads(&q, &analytic, H, |n| td_loss(&batch, &n.predict(&batch.states(), Mode::Train).unwrap(), &ys).0);
        out.push(("td", max_rel_error(&analytic, &numeric)));
        out
    }

    /// Counts propagate containment violations over `samples` interior points
    /// of a random box through a random net.
    pub fn soundness_violations(seed: u64, samples: usize) -> usize {
        let mut r = rng(seed);
        let input = r.random_range(1..=8);
        let head = if seed % 2 == 0 { HeadKind::Dueling } else { HeadKind::Plain };
        let net = random_net(seed, input, r.random_range(1..=4), head, false, 32);
        let center: Vec<f64> = (0..input).map(|_| r.random::<f64>()).collect();
        let eps = r.random_range(0.0..0.3);
        let bx = box_around(&Tensor::vector(center), eps).unwrap();
        let bounds = rsdqn::interval::propagate(&net, &bx).unwrap();
        let (lo, hi) = (bx.lower().data().to_vec(), bx.upper().data().to_vec());
        let mut violations = 0;
        for _ in 0..samples {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| if h > l { r.random_range(*l..=*h) } else { *l }).collect();
            let out = net.predict(&x, Mode::Eval).unwrap();
            if !bounds.contains(out.decision(), 1e-12) {
                violations += 1;
            }
        }
        violations
    }
}

/// A small policy distilled from a random dueling teacher, standing in for
/// a trained agent: its decisions are sharp and input-dependent.
pub fn toy_policy(seed: u64, input: usize) -> AgentNet {
    use rsdqn::nn::{Adam, AdamConfig};
    use rsdqn::training::{student_update, DistillSettings, LossKind};
    let teacher = random_net(seed + 1, input, 3, HeadKind::Dueling, false, 32);
    let mut student = AgentNet::new(ArchSpec::new(input, vec![32], 3, HeadKind::Dueling, false), &mut rng(seed)).unwrap();
    let mut opt = Adam::new(AdamConfig::with_lr(3e-3), student.params());
    let settings = DistillSettings::new(LossKind::Ce);
    for step in 0..300 {
        let states = random_states(seed * 1000 + step, 32, input);
        student_update(&settings, &states, &teacher, &mut student, &mut opt, &mut rng(step)).unwrap();
    }
    student
}

pub mod replay {
    use super::rng;
    use rsdqn::replay::{observation, PrioritizedBuffer, ReplayConfig, Transition};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    pub fn tagged(i: usize) -> Transition {
        Transition {
            state: observation(&[i as f64]),
            action: 0,
            reward: 0.0,
            next_state: observation(&[i as f64]),
            done: false,
        }
    }

    /// Buffer of `n` items whose slot `i` has TD error `errors[i]`.
    pub fn buffer_with(errors: &[f64]) -> PrioritizedBuffer {
        let mut b = PrioritizedBuffer::new(ReplayConfig { capacity: errors.len(), ..ReplayConfig::default() }).unwrap();
        for i in 0..errors.len() {
            b.push(tagged(i));
        }
        let idx: Vec<usize> = (0..errors.len()).collect();
        b.update_priorities(&idx, errors).unwrap();
        b
    }

    /// Pearson chi-square p-value of `draws` samples against the `p^α` law.
    pub fn chi_square_p(buffer: &PrioritizedBuffer, draws: usize, seed: u64) -> f64 {
        let n = buffer.len();
        let alpha = buffer.config().alpha;
        let weights: Vec<f64> = (0..n).map(|i| buffer.priority(i).unwrap().powf(alpha)).collect();
        let total: f64 = weights.iter().sum();
        let mut counts = vec![0usize; n];
        let mut r = rng(seed);
        let per_call = 100;
        for _ in 0..draws / per_call {
            for i in buffer.sample(per_call, &mut r).unwrap().indices {
                counts[i] += 1;
            }
        }
        let stat: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&c, w)| {
                let e = draws as f64 * w / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat)
    }
}

/// Largest violation of `mean_a Q(s,a) = V(s)` and the number of states whose
/// Q and advantage argmaxes disagree.
pub fn dueling_identity(net: &AgentNet, states: &[f64]) -> (f64, usize) {
    use rsdqn::agents::{argmax, Mode};
    let out = net.predict(states, Mode::Eval).unwrap();
    let (a, v) = (out.advantage.as_ref().unwrap(), out.value.as_ref().unwrap());
    let k = out.actions;
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for i in 0..out.batch {
        let q = out.q_row(i);
        let adv = &a[i * k..(i + 1) * k];
        let mean_q = q.iter().sum::<f64>() / k as f64;
        worst = worst.max((mean_q - v[i]).abs());
        let mean_a = adv.iter().sum::<f64>() / k as f64;
        for j in 0..k {
            worst = worst.max((q[j] - (v[i] + adv[j] - mean_a)).abs());
        }
        if argmax(q) != argmax(adv) {
            mismatches += 1;
        }
    }
    (worst, mismatches)
}

/// `Q_0 = w·x + b_0`, `Q_a = b_a` for `a > 0`. With constant rivals the
/// interval bound of the margin is exact, so the robust radius is
/// `min_a (Q_0 - b_a) / |w|_1` as long as the box stays inside `[0, 1]`.
pub fn one_live_row(w: &[f64], b: &[f64]) -> AgentNet {
    let (inputs, actions) = (w.len(), b.len());
    let mut net = AgentNet::new(ArchSpec::new(inputs, vec![], actions, HeadKind::Plain, false), &mut rng(0)).unwrap();
    let mut weights = vec![0.0; inputs * actions];
    weights[..inputs].copy_from_slice(w);
    let p = net.params_mut();
    let id = p.find("out.weight").unwrap();
    p.value_mut(id).copy_from_slice(&weights);
    let id = p.find("out.bias").unwrap();
    p.value_mut(id).copy_from_slice(b);
    net
}
