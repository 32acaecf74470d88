//! Exact finite-width factorizations for homogeneous activations.

mod common;

use common::{backward_factor, gamma_f, rel_err};
use nalgebra::{DMatrix, DVector};
use widthlab::data::{synthetic_task, SyntheticKind};
use widthlab::{make_spec, Activation, BiasMode, Loss, Network, ParamName, Sample};

const TOL: f64 = 1e-12;

/// Roundoff grows with the degree through the `p`-fold products.
fn tol(act: Activation) -> f64 {
    TOL * 10f64.powi(act.degree().unwrap() as i32 - 1)
}

fn task() -> (Sample, DVector<f64>) {
    let ds = synthetic_task(12, 8, 3, SyntheticKind::TwoClass).unwrap();
    (ds.sample(0), ds.inputs[5].clone())
}

fn forward_factorization(name: ParamName, depth: usize, act: Activation, m: usize, seed: u64) {
    let p = act.degree().unwrap();
    let spec = make_spec(name, depth, p, act).unwrap().with_bias_mode(BiasMode::FirstLayerOnly);
    let net = Network::init(&spec, m, 12, 1, seed).unwrap();
    let (s, _) = task();
    let tr = net.forward(&s.input).unwrap();
    let tf = net.tilde_forward(&s.input).unwrap();
    let g = gamma_f(&spec, m, p);
    for l in 0..depth {
        let err = rel_err(&tr.h[l], &(&tf.h[l] * g[l]));
        assert!(err <= tol(act), "{name} {act} layer {}: relative error {err:e}", l + 1);
    }
}

#[test]
fn forward_equals_gamma_times_tilde() {
    for seed in 0..3 {
        forward_factorization(ParamName::IpLlr, 3, Activation::relu(), 128, seed);
        forward_factorization(ParamName::NaiveIp, 4, Activation::relu(), 128, seed);
        forward_factorization(ParamName::MuP, 3, Activation::relu(), 128, seed);
        forward_factorization(ParamName::Ntk, 3, Activation::relu(), 96, seed);
        forward_factorization(ParamName::IpLlr, 3, Activation::homogeneous(2, 1.0, 0.0).unwrap(), 128, seed);
        forward_factorization(ParamName::MuP, 3, Activation::homogeneous(1, 1.0, 0.2).unwrap(), 64, seed);
    }
}

#[test]
fn mup_forward_factor_is_one() {
    let spec = make_spec(ParamName::MuP, 4, 1, Activation::relu()).unwrap();
    for m in [16, 128, 1000] {
        assert!(gamma_f(&spec, m, 1).iter().all(|&g| (g - 1.0).abs() < 1e-12));
    }
}

fn backward_factorization(name: ParamName, depth: usize, act: Activation, m: usize, seed: u64) {
    let p = act.degree().unwrap();
    let spec = make_spec(name, depth, p, act).unwrap();
    let net = Network::init(&spec, m, 12, 1, seed).unwrap();
    let (s, _) = task();
    let tr = net.forward(&s.input).unwrap();
    let bw = net.backward(&tr, &DVector::from_element(1, 1.0)).unwrap();
    let tb = net.tilde_backward(&s.input).unwrap();
    let k = backward_factor(&spec, m, p);
    for l in 0..depth {
        let err = rel_err(&bw.dh[l], &(&tb.dh[l] * k[l]));
        assert!(err <= tol(act), "{name} {act} layer {}: relative error {err:e}", l + 1);
    }
}

#[test]
fn backward_equals_factor_times_tilde() {
    for seed in 0..3 {
        backward_factorization(ParamName::IpLlr, 3, Activation::relu(), 128, seed);
        backward_factorization(ParamName::NaiveIp, 5, Activation::relu(), 64, seed);
        backward_factorization(ParamName::MuP, 3, Activation::relu(), 128, seed);
        backward_factorization(ParamName::IpLlr, 3, Activation::homogeneous(2, 1.0, 0.0).unwrap(), 128, seed);
    }
}

fn first_update_closed_forms(depth: usize, act: Activation, m: usize, seed: u64, eta: f64) {
    let p = act.degree().unwrap();
    let spec = make_spec(ParamName::IpLlr, depth, p, act).unwrap();
    let mut net = Network::init(&spec, m, 12, 1, seed).unwrap();
    let (s, _) = task();
    let tf = net.tilde_forward(&s.input).unwrap();
    let tb = net.tilde_backward(&s.input).unwrap();
    let before: Vec<DMatrix<f64>> = (1..=depth + 1).map(|l| net.effective_weight(l)).collect();
    let out = net.sgd_step(std::slice::from_ref(&s), eta, Loss::Squared, None).unwrap();
    let chi0 = out.chi[0][0];
    let mf = m as f64;
    for l in 2..=depth {
        let dw = net.effective_weight(l) - &before[l - 1];
        let want = &tb.dh[l - 1] * tf.x[l - 2].transpose() * (-eta * chi0 / mf);
        let err = (&dw - &want).amax() / want.amax();
        assert!(err <= tol(act), "L={depth} {act} layer {l}: relative error {err:e}");
    }
    let dw = net.effective_weight(depth + 1) - &before[depth];
    let want = &tf.x[depth - 1] * (-eta * chi0 / mf);
    let err = (dw.column(0) - &want).amax() / want.amax();
    assert!(err <= tol(act), "L={depth} {act} output layer: relative error {err:e}");
}

#[test]
fn ipllr_first_updates_match_closed_forms() {
    for seed in 0..3 {
        first_update_closed_forms(3, Activation::relu(), 128, seed, 0.7);
        first_update_closed_forms(5, Activation::relu(), 64, seed, 2.0);
        first_update_closed_forms(3, Activation::homogeneous(2, 1.0, 0.0).unwrap(), 128, seed, 0.3);
    }
}

#[test]
fn update_is_linear_in_eta() {
    let spec = make_spec(ParamName::IpLlr, 3, 1, Activation::relu()).unwrap();
    let (s, _) = task();
    let base = Network::init(&spec, 64, 12, 1, 9).unwrap();
    let delta = |eta: f64| {
        let mut n = base.clone();
        n.sgd_step(std::slice::from_ref(&s), eta, Loss::Squared, None).unwrap();
        n.effective_weight(2) - base.effective_weight(2)
    };
    let (d1, d2) = (delta(1.5), delta(3.0));
    assert!((&d2 - &d1 * 2.0).amax() <= 1e-12 * d2.amax());
}

#[test]
fn tilde_needs_initial_state() {
    let spec = make_spec(ParamName::IpLlr, 3, 1, Activation::relu()).unwrap();
    let (s, _) = task();
    let mut net = Network::init(&spec, 32, 12, 1, 0).unwrap();
    net.sgd_step(std::slice::from_ref(&s), 1.0, Loss::Squared, None).unwrap();
    assert!(net.tilde_forward(&s.input).is_err());
}
