mod common;

use common::*;
use rsdqn::agents::{epsilon_greedy_in, AgentNet, ArchSpec, HeadKind, Mode};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn dueling_combination_is_centred_and_preserves_argmax() {
    for seed in 0..10 {
        let net = random_net(seed, 12, 5, HeadKind::Dueling, seed % 2 == 0, 32);
        let states = random_states(seed, 1000, 12);
        let (worst, mismatches) = dueling_identity(&net, &states);
        assert!(worst < 1e-9, "seed {seed}: centring off by {worst:e}");
        assert_eq!(mismatches, 0, "seed {seed}");
    }
}

#[test]
fn noise_is_zero_mean_and_scaled_by_kappa() {
    // Without hidden layers the output is linear in the noise, so its mean is
    // the noise-free output and its spread grows by κ in explore mode.
    let mut net = AgentNet::new(ArchSpec::new(6, vec![], 3, HeadKind::Plain, true), &mut rng(1)).unwrap();
    let x = random_states(2, 1, 6);
    let clean = net.predict(&x, Mode::Eval).unwrap().q;
    let draws = 20_000;
    let mut r = rng(3);
    let (mut sum_t, mut sq_t, mut sq_e) = (vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
    for _ in 0..draws {
        net.resample_noise(&mut r);
        let t = net.predict(&x, Mode::Train).unwrap().q;
        let e = net.predict(&x, Mode::Explore).unwrap().q;
        for a in 0..3 {
            sum_t[a] += t[a] - clean[a];
            sq_t[a] += (t[a] - clean[a]).powi(2);
            sq_e[a] += (e[a] - clean[a]).powi(2);
        }
    }
    let kappa = net.spec().kappa;
    for a in 0..3 {
        let var = sq_t[a] / draws as f64;
        let mean = sum_t[a] / draws as f64;
        assert!(mean.abs() < 4.0 * (var / draws as f64).sqrt(), "action {a}: mean shift {mean}");
        let ratio = (sq_e[a] / sq_t[a]).sqrt();
        assert!((ratio - kappa).abs() < 1e-9, "action {a}: spread ratio {ratio}");
    }
}

#[test]
fn full_exploration_is_uniform() {
    let net = random_net(4, 6, 4, HeadKind::Dueling, false, 8);
    let x = random_states(4, 1, 6);
    let mut counts = [0usize; 4];
    let mut r = rng(5);
    let draws = 40_000;
    for _ in 0..draws {
        counts[epsilon_greedy_in(&net, &x, 1.0, Mode::Eval, &mut r).unwrap()] += 1;
    }
    let e = draws as f64 / 4.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p > 0.001, "counts {counts:?}, p = {p}");
}

#[test]
fn zero_exploration_is_greedy() {
    let net = random_net(6, 6, 4, HeadKind::Dueling, false, 8);
    let mut r = rng(6);
    for i in 0..200 {
        let x = random_states(i, 1, 6);
        let greedy = net.predict(&x, Mode::Eval).unwrap().greedy()[0];
        assert_eq!(epsilon_greedy_in(&net, &x, 0.0, Mode::Eval, &mut r).unwrap(), greedy);
    }
}

#[test]
fn out_of_range_exploration_is_rejected() {
    let net = random_net(7, 6, 4, HeadKind::Plain, false, 8);
    assert!(epsilon_greedy_in(&net, &[0.0; 6], 1.5, Mode::Eval, &mut rng(0)).is_err());
}
