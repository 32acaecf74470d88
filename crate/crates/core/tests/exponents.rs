//! Exponent tables against frozen values and an independent float recomputation.

use widthlab::params::gamma_exponents;
use widthlab::{make_spec, Activation, BiasMode, Exponent, ParamName, Slot};

fn halves(v: &[Exponent]) -> Vec<f64> {
    v.iter().map(|e| e.as_f64()).collect()
}

/// `gamma_1 = -(1 + sum_{k<L} p^k) / 2`, inner layers half a unit lower.
fn gamma_float(depth: usize, p: u32) -> (f64, f64) {
    let s: f64 = (0..depth).map(|k| (p as f64).powi(k as i32)).sum();
    (-(1.0 + s) / 2.0, -(2.0 + s) / 2.0)
}

#[test]
fn gamma_frozen_values() {
    for (depth, p, outer, inner) in [(3, 1, -2.0, -2.5), (2, 1, -1.5, -2.0), (3, 2, -4.0, -4.5)] {
        let g = halves(&gamma_exponents(depth, p).unwrap());
        assert_eq!(g.len(), depth + 1);
        assert_eq!(g[0], outer);
        assert_eq!(g[depth], outer);
        for l in 1..depth {
            assert_eq!(g[l], inner, "L={depth} p={p} layer {}", l + 1);
        }
        assert_eq!(gamma_float(depth, p), (outer, inner));
    }
}

#[test]
fn gamma_matches_float_formula_over_grid() {
    for depth in 2..=8 {
        for p in 1..=3 {
            let g = halves(&gamma_exponents(depth, p).unwrap());
            let (o, i) = gamma_float(depth, p);
            assert_eq!(g[0], o);
            assert_eq!(g[depth], o);
            assert!(g[1..depth].iter().all(|&v| v == i));
        }
    }
}

#[test]
fn gamma_rejects_bad_arguments() {
    assert!(gamma_exponents(1, 1).is_err());
    assert!(gamma_exponents(3, 0).is_err());
}

#[test]
fn naive_ip_and_mup_tables() {
    let relu = Activation::relu();
    let n = make_spec(ParamName::NaiveIp, 3, 1, relu).unwrap();
    assert_eq!(halves(&n.a), vec![0.0, 1.0, 1.0, 1.0]);
    assert_eq!(halves(&n.c_init), vec![-1.0, -2.0, -2.0, -1.0]);
    assert_eq!(n.c_init, n.c_later);

    let mu = make_spec(ParamName::MuP, 3, 1, relu).unwrap();
    assert_eq!(halves(&mu.a), vec![0.0, 0.5, 0.5, 1.0]);
    assert!(halves(&mu.c_init).iter().all(|&c| c == -1.0));

    let ntk = make_spec(ParamName::Ntk, 3, 1, relu).unwrap();
    assert_eq!(halves(&ntk.a), vec![0.0, 0.5, 0.5, 0.5]);
    for l in 1..=4 {
        assert_eq!(ntk.lr_exponent(l, 0, Slot::Weight).unwrap(), Exponent::ZERO);
    }
}

#[test]
fn ipllr_two_phase_rates() {
    let s = make_spec(ParamName::IpLlr, 3, 1, Activation::relu()).unwrap();
    assert_eq!(s.lr_exponent(2, 0, Slot::Weight).unwrap().as_f64(), -2.5);
    assert_eq!(s.lr_exponent(2, 1, Slot::Weight).unwrap().as_f64(), -2.0);
    assert_eq!(s.lr_exponent(1, 0, Slot::Weight).unwrap().as_f64(), -2.0);
    assert_eq!(s.lr_exponent(4, 7, Slot::Weight).unwrap().as_f64(), -1.0);
    assert!(s.lr_exponent(5, 0, Slot::Weight).is_err());
    assert!(s.lr_exponent(0, 0, Slot::Weight).is_err());
}

#[test]
fn ip_bias_tables() {
    let s = make_spec(ParamName::IpBias, 3, 1, Activation::relu()).unwrap();
    assert_eq!(halves(&s.c_init), vec![-2.0, -2.5, -2.0, -1.0]);
    assert_eq!(halves(s.bias_c_init.as_ref().unwrap()), vec![-2.0, -1.5, -1.0, 0.0]);
    assert_eq!(s.bias_mode, BiasMode::UnscaledAbove1);
    // Independent form: weights -(L - l + 4)/2 and biases -(L - l + 2)/2 for 2 <= l <= L.
    for depth in 2..=6usize {
        let s = make_spec(ParamName::IpBias, depth, 1, Activation::relu()).unwrap();
        for l in 2..=depth {
            let lf = (depth - l) as f64;
            assert_eq!(s.lr_exponent(l, 0, Slot::Weight).unwrap().as_f64(), -(lf + 4.0) / 2.0);
            assert_eq!(s.lr_exponent(l, 0, Slot::Bias).unwrap().as_f64(), -(lf + 2.0) / 2.0);
        }
        assert_eq!(s.lr_exponent(1, 0, Slot::Bias).unwrap().as_f64(), -((depth + 1) as f64) / 2.0);
    }
}

#[test]
fn non_centered_shift_and_bias_factor() {
    let s = make_spec(ParamName::IpNonCentered, 4, 1, Activation::relu()).unwrap();
    assert_eq!(s.u_shift, vec![0.0, 1.0, 1.0, 1.0, 1.0]);
    let b = make_spec(ParamName::IpBias, 3, 1, Activation::relu()).unwrap();
    assert_eq!(b.bias_factor(1, 400), 1.0);
    assert_eq!(b.bias_factor(3, 400), 1.0);
    let sc = b.clone().with_bias_mode(BiasMode::Scaled);
    assert!((sc.bias_factor(3, 400) - 1.0 / 400.0).abs() < 1e-15);
}

#[test]
fn default_init_scales() {
    let s = make_spec(ParamName::MuP, 3, 1, Activation::relu()).unwrap();
    let r2 = std::f64::consts::SQRT_2;
    assert_eq!(s.delta, vec![r2, r2, r2, 1.0]);
    // E[relu2(Z)^2] = 3/2, so the scale is sqrt(2/3).
    assert!((Activation::homogeneous(2, 1.0, 0.0).unwrap().default_delta() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn exponent_display_and_scale() {
    assert_eq!(Exponent::from_halves(-5).to_string(), "-5/2");
    assert_eq!(Exponent::integer(-2).to_string(), "-2");
    assert!((Exponent::from_halves(1).scale(256) - 1.0 / 16.0).abs() < 1e-15);
    assert!((Exponent::integer(-1).scale(64) - 64.0).abs() < 1e-12);
}

#[test]
fn names_round_trip() {
    for n in ParamName::ALL {
        assert_eq!(n.as_str().parse::<ParamName>().unwrap(), n);
        assert!(make_spec(n, 3, 1, Activation::relu()).unwrap().validate().is_ok());
    }
    assert!("resnet".parse::<ParamName>().is_err());
    assert!(make_spec(ParamName::MuP, 1, 1, Activation::relu()).is_err());
}
