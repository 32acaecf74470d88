//! Property tests over the structural invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use widthlab::config::{validate, ExperimentConfig, RawConfig, Subcommand};
use widthlab::data::{batches, parse_idx_images, parse_idx_labels, synthetic_task, write_idx_images, write_idx_labels, SyntheticKind};
use widthlab::params::gamma_exponents;
use widthlab::probes::{collapse_statistic, finite_width_equivalence, fit_scaling_exponent, numerical_rank, TrainRoutine};
use widthlab::rng::{gaussian, gaussian_block, Stream};
use widthlab::{make_spec, Activation, Exponent, Loss, ParamName};

fn homogeneous() -> impl Strategy<Value = Activation> {
    (1u32..=3, 0.5f64..2.0, 0.0f64..0.45).prop_map(|(p, a, b)| Activation::homogeneous(p, a, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn activation_is_positively_homogeneous(act in homogeneous(), z in -5.0f64..5.0, c in 0.01f64..20.0) {
        let p = act.degree().unwrap() as i32;
        let lhs = act.value(c * z);
        let rhs = c.powi(p) * act.value(z);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        prop_assert!(act.value(z) >= 0.0);
        let dl = act.deriv(c * z);
        let dr = c.powi(p - 1) * act.deriv(z);
        prop_assert!((dl - dr).abs() <= 1e-12 * dr.abs().max(1e-300));
    }

    #[test]
    fn increment_agrees_with_difference(z in -3.0f64..3.0, dz in -0.5f64..0.5, k in 0usize..4) {
        let act = [Activation::relu(), Activation::Tanh, Activation::Elu, Activation::homogeneous(2, 1.0, 0.3).unwrap()][k];
        let inc = act.increment(z, dz);
        let diff = act.value(z + dz) - act.value(z);
        prop_assert!((inc - diff).abs() <= 1e-12 * (1.0 + diff.abs()));
    }

    #[test]
    fn spec_shapes(depth in 2usize..9, p in 1u32..4, k in 0usize..8) {
        let spec = make_spec(ParamName::ALL[k], depth, p, Activation::relu()).unwrap();
        prop_assert!(spec.validate().is_ok());
        prop_assert_eq!(spec.a.len(), depth + 1);
        prop_assert_eq!(spec.c_init.len(), depth + 1);
        prop_assert_eq!(spec.a[0], Exponent::ZERO);
    }

    #[test]
    fn gamma_gap_is_one_half_for_p_one(depth in 2usize..40) {
        let g = gamma_exponents(depth, 1).unwrap();
        for l in 2..=depth {
            prop_assert_eq!((g[l - 1] - g[0]).as_f64(), -0.5);
        }
    }

    #[test]
    fn ipllr_later_rates_are_naive_ip(depth in 2usize..10, p in 1u32..4) {
        let a = make_spec(ParamName::IpLlr, depth, p, Activation::relu()).unwrap();
        let b = make_spec(ParamName::NaiveIp, depth, p, Activation::relu()).unwrap();
        prop_assert_eq!(&a.c_later, &b.c_init);
        prop_assert_eq!(&a.a, &b.a);
    }

    #[test]
    fn rank_ignores_row_order_and_duplicates(rows in 2usize..10, cols in 2usize..10, seed in 0u64..1000, r in 1usize..4) {
        let r = r.min(rows).min(cols);
        let u = DMatrix::from_fn(rows, r, |i, j| gaussian(seed, Stream::Probe, 0, i as u64, j as u64));
        let v = DMatrix::from_fn(r, cols, |i, j| gaussian(seed, Stream::Probe, 1, i as u64, j as u64));
        let m = &u * &v;
        let base = numerical_rank(&m, rows).unwrap();
        prop_assert_eq!(base, r);
        let mut perm = m.clone();
        perm.swap_rows(0, rows - 1);
        prop_assert_eq!(numerical_rank(&perm, rows).unwrap(), base);
        let dup = m.clone().insert_row(rows, 0.0);
        let mut dup = dup;
        dup.set_row(rows, &m.row(0));
        prop_assert_eq!(numerical_rank(&dup, rows).unwrap(), base);
    }

    #[test]
    fn collapse_is_scale_invariant(seed in 0u64..1000, c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        let m = DMatrix::from_fn(6, 7, |i, j| 1.0 + gaussian(seed, Stream::Probe, 2, i as u64, j as u64));
        let a = collapse_statistic(&m);
        let b = collapse_statistic(&(&m * c));
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn fit_recovers_planted_slope(slope in -2.0f64..2.0, c in 0.1f64..10.0, k in 3usize..7) {
        let w: Vec<f64> = (0..k).map(|i| 32.0 * 2f64.powi(i as i32)).collect();
        let v: Vec<f64> = w.iter().map(|m| c * m.powf(slope)).collect();
        let f = fit_scaling_exponent(&w, &v).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-10);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn idx_round_trip(n in 1usize..6, rows in 1usize..5, cols in 1usize..5, seed in any::<u8>()) {
        let imgs: Vec<Vec<u8>> = (0..n).map(|k| (0..rows * cols).map(|i| (i * 31 + k * 7 + seed as usize) as u8).collect()).collect();
        let labels: Vec<u8> = (0..n).map(|k| (k % 10) as u8).collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_idx_images(&mut a, rows, cols, &imgs).unwrap();
        write_idx_labels(&mut b, &labels).unwrap();
        prop_assert_eq!(parse_idx_images(&a).unwrap(), (rows, cols, imgs));
        prop_assert_eq!(parse_idx_labels(&b).unwrap(), labels);
    }

    #[test]
    fn batches_partition_each_epoch(n in 1usize..200, b in 1usize..50, seed in 0u64..100) {
        prop_assume!(b <= n);
        let out = batches(n, b, seed, 2).unwrap();
        prop_assert_eq!(out.len(), 2 * (n / b));
        for epoch in out.chunks(n / b) {
            let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
            prop_assert!(epoch.iter().all(|x| x.len() == b));
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), (n / b) * b);
            prop_assert!(seen.iter().all(|&i| i < n));
        }
    }

    #[test]
    fn gaussian_block_is_width_nested(seed in any::<u64>(), r in 1usize..9, c in 1usize..9, extra in 1usize..5) {
        let small = gaussian_block(seed, Stream::Weight, 2, r, c);
        let big = gaussian_block(seed, Stream::Weight, 2, r + extra, c + extra);
        for i in 0..r {
            for j in 0..c {
                prop_assert_eq!(small[i * c + j], big[i * (c + extra) + j]);
                prop_assert_eq!(small[i * c + j], gaussian(seed, Stream::Weight, 2, i as u64, j as u64));
            }
        }
    }

    #[test]
    fn config_round_trips(k in 0usize..11, depth in 2usize..8, eta in 0.001f64..20.0, w in proptest::collection::vec(1usize..5000, 1..5)) {
        let cmd = Subcommand::ALL[k];
        let mut user = RawConfig::default();
        user.model.depth = Some(depth);
        user.model.widths = Some(w);
        user.train.eta = Some(eta);
        user.probe.layer = Some(0);
        user.probe.times = Some(vec![]);
        let cfg = ExperimentConfig::for_subcommand(cmd, &user).unwrap();
        let back = validate(&RawConfig::parse(&cfg.to_raw().to_toml()).unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn equivalence_is_symmetric(seed in 0u64..50, steps in 1usize..4) {
        let ds = synthetic_task(6, 8, seed, SyntheticKind::GaussRegression).unwrap();
        let rt = TrainRoutine { stream: ds.samples(&[0, 1, 2]), eta: 0.5, loss: Loss::Squared };
        let a = make_spec(ParamName::IpLlr, 3, 1, Activation::relu()).unwrap();
        let b = make_spec(ParamName::MuP, 3, 1, Activation::relu()).unwrap();
        let tests: Vec<DVector<f64>> = ds.inputs[5..].to_vec();
        let ab = finite_width_equivalence(&a, &b, 32, seed, &rt, &tests, steps).unwrap();
        let ba = finite_width_equivalence(&b, &a, 32, seed, &rt, &tests, steps).unwrap();
        prop_assert_eq!(ab.abs_diff, ba.abs_diff);
        prop_assert_eq!(ab.rel_diff, ba.rel_diff);
    }
}
