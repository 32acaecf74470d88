//! Acceptance suite: one line per criterion, each recomputed from the emitted
//! rows with its own tolerance, alongside the runner's verdicts. Run with
//! `cargo test -p widthlab --test acceptance -- --nocapture` to see the lines.

mod common;

use std::time::Instant;

use common::{gamma_f, loglog_slope};
use nalgebra::{DMatrix, DVector};
use widthlab::config::{ExperimentConfig, RawConfig, Subcommand};
use widthlab::data::{synthetic_task, SyntheticKind};
use widthlab::oracle::{mc_gaussian_expectation, relu_gauss_moments, variance_ladder};
use widthlab::report::{rows_to_string, Row};
use widthlab::runner::{effective_delta, run, RunOutput};
use widthlab::{make_spec, Activation, Loss, Network, ParamName};

struct Outcome {
    passed: bool,
    detail: String,
}

fn preset(cmd: Subcommand) -> ExperimentConfig {
    ExperimentConfig::for_subcommand(cmd, &RawConfig::default()).unwrap()
}

fn run_preset(cmd: Subcommand) -> RunOutput {
    run(&preset(cmd)).unwrap_or_else(|e| panic!("{cmd}: {e}"))
}

fn rows(out: &RunOutput) -> &[Row] {
    &out.tables[0].rows
}

/// `(m, value)` pairs of one metric, sorted by width, finite widths only.
fn series(out: &RunOutput, param: &str, metric: &str, layer: Option<usize>, t: Option<u64>) -> (Vec<f64>, Vec<f64>) {
    let mut v: Vec<(usize, f64)> = rows(out)
        .iter()
        .filter(|r| r.m > 0 && r.parameterization == param && r.metric == metric && r.layer == layer && r.t == t)
        .map(|r| (r.m, r.value))
        .collect();
    v.sort_by_key(|p| p.0);
    (v.iter().map(|p| p.0 as f64).collect(), v.iter().map(|p| p.1).collect())
}

fn single(out: &RunOutput, param: &str, metric: &str, m: usize) -> f64 {
    let hits: Vec<f64> = rows(out)
        .iter()
        .filter(|r| r.parameterization == param && r.metric == metric && r.m == m)
        .map(|r| r.value)
        .collect();
    assert_eq!(hits.len(), 1, "{param} {metric} m={m}");
    hits[0]
}

fn verdicts_pass(out: &RunOutput) -> (bool, usize) {
    (!out.verdicts.is_empty() && out.verdicts.iter().all(|v| v.passed), out.verdicts.len())
}

fn within_time(start: Instant, limit_s: f64) -> (bool, f64) {
    let s = start.elapsed().as_secs_f64();
    (s <= limit_s, s)
}

fn a1_triviality() -> Outcome {
    let start = Instant::now();
    let out = run_preset(Subcommand::Triviality);
    let mut passed = true;
    let mut detail = String::new();
    for t in [1u64, 10, 30] {
        let (w, v) = series(&out, "naive-ip", "abs_f_mean", None, Some(t));
        let ok_w = w == [64.0, 256.0, 1024.0, 4096.0];
        let slope = loglog_slope(&w, &v);
        let ratio = v[v.len() - 1] / v[0];
        let ok = ok_w && slope <= -0.3 && ratio <= 0.1;
        passed &= ok;
        detail += &format!("t={t} slope {slope:.3} ratio {ratio:.3}; ");
    }
    let (vp, n) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 300.0);
    detail += &format!("runner verdicts {n} ok={vp}; {s:.0}s (<= 300)");
    Outcome { passed: passed && vp && tp, detail }
}

fn a2_escape() -> Outcome {
    let start = Instant::now();
    let out = run_preset(Subcommand::LlrEscape);
    let (w, v) = series(&out, "ipllr", "abs_f_mean", None, Some(1));
    let slope = loglog_slope(&w, &v);
    let naive = single(&out, "naive-ip", "abs_f_mean", 4096);
    let ratio = v[v.len() - 1] / naive;
    let ok = w.len() == 4 && slope.abs() <= 0.15 && ratio >= 10.0;
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 300.0);
    Outcome {
        passed: ok && vp && tp,
        detail: format!("slope {slope:.3} (|.| <= 0.15), ipllr/naive at 4096 {ratio:.3e} (>= 10), runner ok={vp}; {s:.0}s"),
    }
}

fn empirical_second_moment(v: &DVector<f64>) -> f64 {
    v.norm_squared() / v.len() as f64
}

fn a3_oracle_consistency() -> Outcome {
    let start = Instant::now();
    let mut passed = true;
    let mut detail = String::new();
    let mut worst_mc = 0.0f64;
    // At sigma = 2 the 1e7-sample standard error of E[relu^2] is 1.4e-3,
    // above the tolerance, so the check runs at unit scale and below.
    for sigma in [0.5, 1.0] {
        let (m1, m2, d) = relu_gauss_moments(sigma);
        let cov = DMatrix::from_element(1, 1, sigma * sigma);
        let n = 10_000_000;
        let e1 = mc_gaussian_expectation(|z| z[0].max(0.0), &cov, n, 11).unwrap().mean;
        let e2 = mc_gaussian_expectation(|z| z[0].max(0.0).powi(2), &cov, n, 12).unwrap().mean;
        let e3 = mc_gaussian_expectation(|z| (z[0] > 0.0) as u8 as f64, &cov, n, 13).unwrap().mean;
        for (a, b) in [(m1, e1), (m2, e2), (d, e3)] {
            worst_mc = worst_mc.max((a - b).abs());
        }
    }
    passed &= worst_mc <= 1e-3;
    detail += &format!("closed form vs 1e7 MC max |diff| {worst_mc:.2e} (<= 1e-3); ");

    let m = 4096;
    let tol = 5.0 / (m as f64).sqrt();
    let act = Activation::relu();
    let spec = make_spec(ParamName::IpLlr, 3, 1, act).unwrap();
    let ds = synthetic_task(16, 4, 0, SyntheticKind::TwoClass).unwrap();
    let xi = &ds.inputs[0];
    let net = Network::init(&spec, m, 16, 1, 0).unwrap();
    let tf = net.tilde_forward(xi).unwrap();
    let tb = net.tilde_backward(xi).unwrap();
    let lad = variance_ladder(3, xi.norm_squared() + 1.0, &effective_delta(&spec, 16), &act, 0, 0).unwrap();
    let mut worst = 0.0f64;
    for l in 0..3 {
        let pairs = [
            (empirical_second_moment(&tf.h[l]), lad.v_h[l]),
            (empirical_second_moment(&tf.x[l]), lad.v_x[l]),
            (empirical_second_moment(&tb.dx[l]), lad.v_dx[l]),
            (empirical_second_moment(&tb.dh[l]), lad.v_dh[l]),
        ];
        for (emp, th) in pairs {
            worst = worst.max((emp - th).abs() / th);
        }
    }
    passed &= worst <= tol;
    let (tp, s) = within_time(start, 120.0);
    detail += &format!("ladder vs tilde at m={m} max rel {worst:.4} (<= {tol:.4}); {s:.0}s (<= 120)");
    Outcome { passed: passed && tp, detail }
}

fn a4_infinite_width() -> Outcome {
    let start = Instant::now();
    let cfg = preset(Subcommand::OracleCompare);
    assert_eq!((cfg.widths.as_slice(), cfg.seeds.len(), cfg.n_mc), (&[4096][..], 20, 1_000_000));
    let out = run(&cfg).unwrap();
    let mu = single(&out, "ipllr", "f1_mean", 4096);
    let se = single(&out, "ipllr", "f1_se", 4096);
    let chi_bar = single(&out, "ipllr", "chi0_mean", 4096);
    let of = single(&out, "ipllr", "oracle_f1", 0);
    let ose = single(&out, "ipllr", "oracle_f1_se", 0);
    let tol = (3.0 * (se * se + ose * ose).sqrt()).max(0.1 * of.abs());
    let close = (mu - of).abs() <= tol;
    let sign = mu.signum() == -chi_bar.signum() && of.signum() == mu.signum();
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 600.0);
    Outcome {
        passed: close && sign && vp && tp,
        detail: format!(
            "finite {mu:.4}+-{se:.4} vs limit {of:.4}+-{ose:.4}, |diff| {:.4} (<= {tol:.4}), mean chi0 {chi_bar:.3} sign ok={sign}, runner ok={vp}; {s:.0}s",
            (mu - of).abs()
        ),
    }
}

fn a5_hp_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = preset(Subcommand::Equivalence);
    assert_eq!((cfg.widths.as_slice(), cfg.steps, cfg.p), (&[256][..], 10, 1));
    let out = run(&cfg).unwrap();
    let worst = single(&out, "hp", "max_rel_diff", 256);
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 60.0);
    Outcome {
        passed: worst <= 1e-8 && vp && tp,
        detail: format!("max relative output difference {worst:.3e} (<= 1e-8), runner ok={vp}; {s:.1}s (<= 60)"),
    }
}

fn a6_hpz() -> Outcome {
    let start = Instant::now();
    let out = run_preset(Subcommand::HpzConvergence);
    let (w, v) = series(&out, "hpz", "abs_diff_mean", None, Some(3));
    let slope = loglog_slope(&w, &v);
    let ratio = v[v.len() - 1] / v[0];
    let ok = w.first() == Some(&64.0) && w.last() == Some(&4096.0) && slope < 0.0 && ratio <= 0.2;
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 300.0);
    Outcome {
        passed: ok && vp && tp,
        detail: format!("|f3 hpz - f3 ipllr| slope {slope:.3} (< 0), terminal ratio {ratio:.3} (<= 0.2), runner ok={vp}; {s:.0}s"),
    }
}

fn a7_homogeneity() -> Outcome {
    let m = 128;
    let eta = 10.0;
    let act = Activation::relu();
    let spec = make_spec(ParamName::IpLlr, 3, 1, act).unwrap();
    let ds = synthetic_task(16, 4, 0, SyntheticKind::TwoClass).unwrap();
    let s0 = ds.sample(0);
    let mut worst_f = 0.0f64;
    let mut worst_u = 0.0f64;
    for seed in 0..5 {
        let mut net = Network::init(&spec, m, 16, 1, seed).unwrap();
        let tr = net.forward(&s0.input).unwrap();
        let tf = net.tilde_forward(&s0.input).unwrap();
        let tb = net.tilde_backward(&s0.input).unwrap();
        let g = gamma_f(&spec, m, 1);
        for l in 0..3 {
            worst_f = worst_f.max(common::rel_err(&tr.h[l], &(&tf.h[l] * g[l])));
        }
        let before: Vec<DMatrix<f64>> = (1..=4).map(|l| net.effective_weight(l)).collect();
        let chi0 = net.sgd_step(std::slice::from_ref(&s0), eta, Loss::Squared, None).unwrap().chi[0][0];
        for l in 2..=3 {
            let dw = net.effective_weight(l) - &before[l - 1];
            let want = &tb.dh[l - 1] * tf.x[l - 2].transpose() * (-eta * chi0 / m as f64);
            worst_u = worst_u.max((&dw - &want).amax() / want.amax());
        }
        let dw = net.effective_weight(4) - &before[3];
        let want = &tf.x[2] * (-eta * chi0 / m as f64);
        worst_u = worst_u.max((dw.column(0) - &want).amax() / want.amax());
    }
    Outcome {
        passed: worst_f <= 1e-12 && worst_u <= 1e-12,
        detail: format!("h = gamma_f h~ max rel {worst_f:.2e}, first-update closed forms max rel {worst_u:.2e} (<= 1e-12)"),
    }
}

fn a8_gradcheck() -> Outcome {
    let out = run_preset(Subcommand::Gradcheck);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for act in ["tanh", "relu2"] {
        let w = rows(&out)
            .iter()
            .filter(|r| r.activation == act && r.m == 32 && r.metric.starts_with("max_rel_error"))
            .map(|r| r.value)
            .fold(f64::NAN, f64::max);
        worst.push((act.to_string(), w));
    }
    let ok = worst.iter().all(|(_, w)| *w <= 1e-5);
    let (vp, _) = verdicts_pass(&out);
    Outcome {
        passed: ok && vp,
        detail: format!("{} (<= 1e-5), runner ok={vp}", worst.iter().map(|(a, w)| format!("{a} {w:.2e}")).collect::<Vec<_>>().join(", ")),
    }
}

fn a9_collapse() -> Outcome {
    let start = Instant::now();
    let out = run_preset(Subcommand::Collapse);
    let (w, v) = series(&out, "ip-non-centered", "dispersion_mean", Some(3), Some(1));
    let slope = loglog_slope(&w, &v);
    let ok = w.first() == Some(&64.0) && w.last() == Some(&2048.0) && slope <= -0.3;
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 180.0);
    Outcome { passed: ok && vp && tp, detail: format!("dispersion slope {slope:.3} (<= -0.3), runner ok={vp}; {s:.0}s") }
}

fn a10_ip_bias() -> Outcome {
    let start = Instant::now();
    let out = run_preset(Subcommand::IpBiasIndependence);
    let (w1, v1) = series(&out, "ip-bias", "h_diff_rms_mean", Some(1), Some(0));
    let (w2, v2) = series(&out, "ip-bias", "h_diff_rms_mean", Some(2), Some(0));
    let (s1, s2) = (loglog_slope(&w1, &v1), loglog_slope(&w2, &v2));
    let ok = s1.abs() <= 0.15 && (s2 + 0.5).abs() <= 0.15;
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 180.0);
    Outcome {
        passed: ok && vp && tp,
        detail: format!("layer 1 slope {s1:.3} (|.| <= 0.15), layer 2 slope {s2:.3} (-0.5 +- 0.15), runner ok={vp}; {s:.0}s"),
    }
}

fn a11_rank() -> Outcome {
    let start = Instant::now();
    let cfg = preset(Subcommand::Rank);
    assert_eq!((cfg.depth, cfg.samples, cfg.widths.as_slice()), (6, 5000, &[512][..]));
    let out = run(&cfg).unwrap();
    let at = |p: &str| {
        rows(&out)
            .iter()
            .find(|r| r.parameterization == p && r.layer == Some(6) && r.m == 512 && r.metric.starts_with("rank:"))
            .map(|r| r.value)
            .unwrap()
    };
    let (a, b) = (at("ipllr"), at("mup"));
    let (vp, _) = verdicts_pass(&out);
    let (tp, s) = within_time(start, 900.0);
    Outcome {
        passed: a * 10.0 <= b && vp && tp,
        detail: format!("layer 6 rank ipllr {a} vs mup {b} (ratio <= 1/10), runner ok={vp}; {s:.0}s"),
    }
}

fn a12_determinism() -> Outcome {
    let mut detail = Vec::new();
    let mut passed = true;
    for cmd in [Subcommand::IpBiasIndependence, Subcommand::Gradcheck, Subcommand::Equivalence] {
        let a = rows_to_string(rows(&run_preset(cmd))).unwrap();
        let b = rows_to_string(rows(&run_preset(cmd))).unwrap();
        let same = a == b && !a.is_empty();
        passed &= same;
        detail.push(format!("{cmd} {} bytes identical={same}", a.len()));
    }
    Outcome { passed, detail: detail.join(", ") }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("1 naive-ip triviality", a1_triviality),
        ("2 ip-llr escape", a2_escape),
        ("3 oracle consistency", a3_oracle_consistency),
        ("4 infinite-width output match", a4_infinite_width),
        ("5 exact hp equivalence", a5_hp_equivalence),
        ("6 hpz limit equivalence", a6_hpz),
        ("7 homogeneity exactness", a7_homogeneity),
        ("8 gradient correctness", a8_gradcheck),
        ("9 ip-non-centered collapse", a9_collapse),
        ("10 ip-bias input independence", a10_ip_bias),
        ("11 rank collapse", a11_rank),
        ("12 determinism", a12_determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let o = f();
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
