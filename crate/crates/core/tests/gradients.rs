mod common;

use common::oracle::{gradient_errors, H};
use common::*;
use rsdqn::agents::{HeadKind, Mode};
use rsdqn::attacks::loss_gradient;
use rsdqn::nn::loss::cross_entropy_batch;

#[test]
fn parameter_gradients_match_central_differences() {
    for seed in 0..20 {
        for (name, err) in gradient_errors(seed, 24) {
            assert!(err < 1e-4, "seed {seed} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn wide_nets_match_too() {
    for seed in 100..103 {
        for (name, err) in gradient_errors(seed, 64) {
            assert!(err < 1e-4, "seed {seed} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn kink_refinement_does_not_excuse_a_wrong_gradient() {
    use rsdqn::training::{distill, distill_loss, DistillSettings, LossKind};
    let states = random_states(5, 4, 6);
    let teacher = random_net(6, 6, 3, HeadKind::Dueling, false, 16);
    let mut student = random_net(7, 6, 3, HeadKind::Dueling, false, 16);
    let settings = DistillSettings::new(LossKind::CeDuel);
    student.params_mut().zero_grad();
    distill(&settings, &states, &teacher, &mut student, true, &mut rng(1)).unwrap();
    let mut analytic = grads(&student);
    let loss = |n: &rsdqn::agents::AgentNet| distill_loss(&settings, &states, &teacher, n, &mut rng(1)).unwrap();
    assert!(max_rel_error(&analytic, &numeric_grads(&student, &analytic, H, loss)) < 1e-4);
    let i = analytic.iter().position(|g| g.abs() > 1e-2).unwrap();
    analytic[i] *= 1.01;
    let err = max_rel_error(&analytic, &numeric_grads(&student, &analytic, H, loss));
    assert!(err > 5e-3, "a 1% error slipped through: {err:e}");
}

#[test]
fn attack_input_gradient_matches_central_differences() {
    for seed in 0..30 {
        let head = if seed % 2 == 0 { HeadKind::Plain } else { HeadKind::Dueling };
        let net = random_net(seed, 5, 3, head, false, 16);
        let x = random_states(seed + 7, 2, 5);
        let labels = [seed as usize % 3, (seed as usize + 1) % 3];
        let loss = |x: &[f64]| {
            let out = net.predict(x, Mode::Eval).unwrap();
            cross_entropy_batch(&out.q, 3, &labels).unwrap().0
        };
        let analytic = loss_gradient(&net, &x, &labels, Mode::Eval).unwrap();
        let numeric: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut up = x.clone();
                up[i] += H;
                let mut down = x.clone();
                down[i] -= H;
                (loss(&up) - loss(&down)) / (2.0 * H)
            })
            .collect();
        let err = max_rel_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
