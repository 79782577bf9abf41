mod common;

use common::*;
use proptest::prelude::*;
use rsdqn::agents::{AgentNet, ArchSpec, HeadKind, Mode};
use rsdqn::attacks::{fgsm, loss_gradient, perturb_for_agent, pgd, pgd_random_start, AttackSpec, Sign};
use rsdqn::nn::loss::cross_entropy_batch;

fn ce(net: &AgentNet, x: &[f64], t: usize) -> f64 {
    let out = net.predict(x, Mode::Eval).unwrap();
    cross_entropy_batch(&out.q, out.actions, &[t]).unwrap().0
}

fn greedy(net: &AgentNet, x: &[f64]) -> usize {
    net.predict(x, Mode::Eval).unwrap().greedy()[0]
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn logistic_case_moves_against_the_weight() {
    // Logits [w·x, 0] with w > 0 and label 0: dCE/dx < 0, so x moves down.
    let mut net = AgentNet::new(ArchSpec::new(1, vec![], 2, HeadKind::Plain, false), &mut rng(0)).unwrap();
    let p = net.params_mut();
    let w = p.find("out.weight").unwrap();
    p.value_mut(w).copy_from_slice(&[2.0, 0.0]);
    let b = p.find("out.bias").unwrap();
    p.value_mut(b).copy_from_slice(&[0.0, 0.0]);
    let x = fgsm(&net, &[0.5], &[0], 0.1, Sign::Away, Mode::Eval).unwrap();
    assert!((x[0] - 0.4).abs() < 1e-12);
    let x = fgsm(&net, &[0.5], &[0], 0.1, Sign::Toward, Mode::Eval).unwrap();
    assert!((x[0] - 0.6).abs() < 1e-12);
}

#[test]
fn pgd_raises_the_loss_of_the_greedy_action() {
    let net = toy_policy(1, 16);
    let mut raised = 0;
    for i in 0..200 {
        let x = random_states(10_000 + i, 1, 16);
        let t = greedy(&net, &x);
        let adv = pgd(&net, &x, &[t], 0.004, 4, Sign::Away, Mode::Eval).unwrap();
        if ce(&net, &adv, t) >= ce(&net, &x, t) {
            raised += 1;
        }
    }
    assert!(raised >= 190, "loss raised on {raised}/200 states");
}

#[test]
fn training_pgd_reinforces_the_chosen_action() {
    let net = toy_policy(2, 16);
    let spec = AttackSpec::training_pgd(0.004, 1);
    let mut lowered = 0;
    for i in 0..200 {
        let x = random_states(20_000 + i, 1, 16);
        let t = greedy(&net, &x);
        let adv = perturb_for_agent(&spec, &net, &x, Mode::Eval, &mut rng(i)).unwrap();
        if ce(&net, &adv, t) < ce(&net, &x, t) {
            lowered += 1;
        }
    }
    assert!(lowered >= 190, "loss lowered on {lowered}/200 states");
}

#[test]
fn pgd_dominates_fgsm_on_most_states() {
    let net = toy_policy(3, 16);
    let mut wins = 0;
    for i in 0..200 {
        let x = random_states(30_000 + i, 1, 16);
        let t = greedy(&net, &x);
        let one = fgsm(&net, &x, &[t], 0.05, Sign::Away, Mode::Eval).unwrap();
        let four = pgd(&net, &x, &[t], 0.05, 4, Sign::Away, Mode::Eval).unwrap();
        if ce(&net, &four, t) >= ce(&net, &one, t) - 1e-12 {
            wins += 1;
        }
    }
    assert!(wins >= 160, "pgd at least as strong on {wins}/200 states");
}

#[test]
fn none_is_identity_and_idempotent() {
    let net = random_net(4, 6, 3, HeadKind::Dueling, true, 8);
    let x = random_states(4, 3, 6);
    let once = perturb_for_agent(&AttackSpec::none(), &net, &x, Mode::Explore, &mut rng(0)).unwrap();
    let twice = perturb_for_agent(&AttackSpec::none(), &net, &once, Mode::Explore, &mut rng(0)).unwrap();
    assert_eq!(once, x);
    assert_eq!(twice, x);
}

#[test]
fn attack_uses_the_exploring_noise_sample() {
    // Deterministic attacks ignore the rng and follow the current noise sample.
    let net = random_net(5, 6, 3, HeadKind::Dueling, true, 8);
    let x = random_states(5, 1, 6);
    let spec = AttackSpec::pgd(0.01, 2);
    let a = perturb_for_agent(&spec, &net, &x, Mode::Explore, &mut rng(0)).unwrap();
    let b = perturb_for_agent(&spec, &net, &x, Mode::Explore, &mut rng(99)).unwrap();
    assert_eq!(a, b);
    let t = net.predict(&x, Mode::Explore).unwrap().greedy()[0];
    assert_eq!(a, pgd(&net, &x, &[t], 0.01, 2, Sign::Away, Mode::Explore).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn outputs_stay_in_the_ball_and_the_pixel_range(seed in 0u64..100_000, eps in 0.0f64..0.3, k in 1u32..6, random_start: bool) {
        let net = random_net(seed, 8, 3, HeadKind::Dueling, false, 16);
        let x: Vec<f64> = random_states(seed, 2, 8).into_iter().map(|v| if v < 0.2 { 0.0 } else if v > 0.8 { 1.0 } else { v }).collect();
        let labels = [seed as usize % 3, (seed as usize / 3) % 3];
        for sign in [Sign::Away, Sign::Toward] {
            let outs = [
                fgsm(&net, &x, &labels, eps, sign, Mode::Eval).unwrap(),
                if random_start {
                    pgd_random_start(&net, &x, &labels, eps, k, sign, Mode::Eval, &mut rng(seed)).unwrap()
                } else {
                    pgd(&net, &x, &labels, eps, k, sign, Mode::Eval).unwrap()
                },
            ];
            for out in outs {
                prop_assert!(linf(&out, &x) <= eps + 1e-12);
                prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn single_step_pgd_is_fgsm(seed in 0u64..100_000, eps in 0.0f64..0.2) {
        let net = random_net(seed, 8, 3, HeadKind::Plain, false, 16);
        let x = random_states(seed, 1, 8);
        let t = [seed as usize % 3];
        prop_assert_eq!(
            pgd(&net, &x, &t, eps, 1, Sign::Away, Mode::Eval).unwrap(),
            fgsm(&net, &x, &t, eps, Sign::Away, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn signs_are_mirror_images(seed in 0u64..100_000, eps in 0.001f64..0.05) {
        let net = random_net(seed, 8, 3, HeadKind::Dueling, false, 16);
        // Interior states, so clamping never applies.
        let x: Vec<f64> = random_states(seed, 1, 8).into_iter().map(|v| 0.1 + 0.8 * v).collect();
        let t = [seed as usize % 3];
        let g = loss_gradient(&net, &x, &t, Mode::Eval).unwrap();
        prop_assume!(g.iter().all(|v| *v != 0.0));
        let away = fgsm(&net, &x, &t, eps, Sign::Away, Mode::Eval).unwrap();
        let toward = fgsm(&net, &x, &t, eps, Sign::Toward, Mode::Eval).unwrap();
        for i in 0..8 {
            prop_assert!((toward[i] - (2.0 * x[i] - away[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_coordinates_stay_put(seed in 0u64..100_000) {
        // Zero the first-layer weights of input 0, which then has no gradient.
        let mut net = random_net(seed, 4, 3, HeadKind::Plain, false, 8);
        let first = net.params().iter().next().unwrap().name.clone();
        let id = net.params().find(&first).unwrap();
        let cols = 4;
        for (i, v) in net.params_mut().value_mut(id).iter_mut().enumerate() {
            if i % cols == 0 {
                *v = 0.0;
            }
        }
        let x = random_states(seed, 1, 4);
        let out = fgsm(&net, &x, &[0], 0.1, Sign::Away, Mode::Eval).unwrap();
        prop_assert_eq!(out[0], x[0]);
    }
}
