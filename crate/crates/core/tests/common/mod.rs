//! Helpers shared by the integration tests: homogeneity factors written
//! from scratch, relative comparisons and a plain least-squares slope.

#![allow(dead_code)]

use nalgebra::DVector;
use widthlab::{ParamSpec, Target};

/// Per-layer scale `omega_l` linking `h^l` to the scale-free `h~^l`:
/// `m^{-a_1}` at the first layer and `m^{1/2 - a_l}` above it.
pub fn omega(spec: &ParamSpec, m: usize) -> Vec<f64> {
    let mf = m as f64;
    (1..=spec.depth)
        .map(|l| {
            let a = spec.a[l - 1].halves() as f64 / 2.0;
            if l == 1 {
                mf.powf(-a)
            } else {
                mf.powf(0.5 - a)
            }
        })
        .collect()
}

/// `gamma_{f,l} = prod_{k <= l} omega_k^{p^{l-k}}` for `l = 1..=L`.
pub fn gamma_f(spec: &ParamSpec, m: usize, p: u32) -> Vec<f64> {
    let om = omega(spec, m);
    let mut out: Vec<f64> = Vec::with_capacity(om.len());
    for l in 0..om.len() {
        let prev = if l == 0 { 1.0 } else { out[l - 1].powi(p as i32) };
        out.push(om[l] * prev);
    }
    out
}

/// `gamma_{b,l} = prod_{k = l+1}^{L} omega_k` for `l = 1..=L`.
pub fn gamma_b(spec: &ParamSpec, m: usize) -> Vec<f64> {
    let om = omega(spec, m);
    (1..=spec.depth).map(|l| om[l..].iter().product()).collect()
}

/// `m^{-a_{L+1}} gamma_{b,l} (prod_{k=l}^{L} gamma_{f,k})^{p-1}`.
pub fn backward_factor(spec: &ParamSpec, m: usize, p: u32) -> Vec<f64> {
    let gf = gamma_f(spec, m, p);
    let gb = gamma_b(spec, m);
    let top = (m as f64).powf(-(spec.a[spec.depth].halves() as f64) / 2.0);
    (1..=spec.depth)
        .map(|l| {
            let prod: f64 = gf[l - 1..].iter().product();
            top * gb[l - 1] * prod.powi(p as i32 - 1)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, tiny)`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.amax().max(1e-300);
    (a - b).amax() / scale
}

/// Ordinary least squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (sx, sy): (f64, f64) = (lx.iter().sum(), ly.iter().sum());
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| a * b).sum();
    let sxx: f64 = lx.iter().map(|a| a * a).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// `df/dprediction` of half the squared error, used where the tests need
/// `chi` without going through the crate.
pub fn squared_chi(f: f64, target: Target) -> f64 {
    match target {
        Target::Scalar(y) => f - y,
        Target::Class(_) => panic!("scalar target expected"),
    }
}
