//! Browser bindings: exponent tables, a small width sweep of the first-step
//! output, and init-time variance ladders. The plain functions return
//! `Result<_, String>` so they can be tested natively; the `js_*` wrappers
//! are what the page calls.

use wasm_bindgen::prelude::*;
use widthlab::data::{synthetic_task, SyntheticKind};
use widthlab::oracle::variance_ladder;
use widthlab::probes::fit_scaling_exponent;
use widthlab::{make_spec, Activation, Loss, Network, ParamName, Slot};

const SWEEP_D: usize = 16;
const SWEEP_N: usize = 64;
const MAX_WIDTH: usize = 2048;

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

/// One line per layer: `l  a_l  c_l(0)  c_l(t>=1)`.
pub fn exponent_table(name: &str, depth: usize, p: u32) -> Result<String, String> {
    let name: ParamName = parse(name)?;
    let spec = make_spec(name, depth, p, Activation::relu()).map_err(|e| e.to_string())?;
    let mut out = String::from("layer\ta\tc(0)\tc(t>=1)\n");
    for l in 1..=depth + 1 {
        let a = spec.scale_exponent(l).map_err(|e| e.to_string())?;
        let c0 = spec.lr_exponent(l, 0, Slot::Weight).map_err(|e| e.to_string())?;
        let c1 = spec.lr_exponent(l, 1, Slot::Weight).map_err(|e| e.to_string())?;
        out += &format!("{l}\t{a}\t{c0}\t{c1}\n");
    }
    Ok(out)
}

/// Mean over `seeds` networks of `|f_1(xi)|` after one single-sample SGD
/// step on a synthetic two-class task, per width.
pub fn width_sweep(name: &str, depth: usize, activation: &str, eta: f64, widths: &[u32], seeds: u32) -> Result<Vec<f64>, String> {
    let name: ParamName = parse(name)?;
    let act: Activation = parse(activation)?;
    if seeds == 0 {
        return Err("need at least one seed".into());
    }
    if let Some(&w) = widths.iter().find(|&&w| w == 0 || w as usize > MAX_WIDTH) {
        return Err(format!("width {w} outside 1..={MAX_WIDTH}"));
    }
    let spec = make_spec(name, depth, 1, act).map_err(|e| e.to_string())?;
    let ds = synthetic_task(SWEEP_D, SWEEP_N, 0, SyntheticKind::TwoClass).map_err(|e| e.to_string())?;
    let xi = &ds.inputs[SWEEP_N - 1];
    let first = ds.sample(0);
    let mut means = Vec::with_capacity(widths.len());
    for &m in widths {
        let mut total = 0.0;
        for s in 0..seeds {
            let mut net = Network::init(&spec, m as usize, SWEEP_D, 1, s as u64).map_err(|e| e.to_string())?;
            net.sgd_step(std::slice::from_ref(&first), eta, Loss::Squared, None).map_err(|e| e.to_string())?;
            total += net.forward(xi).map_err(|e| e.to_string())?.f[0].abs();
        }
        means.push(total / seeds as f64);
    }
    Ok(means)
}

/// Log-log slope of `values` against `widths`.
pub fn slope(widths: &[u32], values: &[f64]) -> Result<f64, String> {
    let w: Vec<f64> = widths.iter().map(|&m| m as f64).collect();
    fit_scaling_exponent(&w, values).map(|f| f.slope).map_err(|e| e.to_string())
}

/// Init-time second moments per layer for unit input variance, with the
/// activation's default init scale everywhere and `delta_{L+1} = 1`.
pub fn ladder_table(depth: usize, activation: &str) -> Result<String, String> {
    let act: Activation = parse(activation)?;
    let mut delta = vec![act.default_delta(); depth + 1];
    delta[depth] = 1.0;
    let lad = variance_ladder(depth, 1.0, &delta, &act, 100_000, 0).map_err(|e| e.to_string())?;
    let mut out = String::from("layer\tE[h^2]\tE[x^2]\tE[dx^2]\tE[dh^2]\n");
    for l in 0..depth {
        out += &format!("{}\t{:.5}\t{:.5}\t{:.5}\t{:.5}\n", l + 1, lad.v_h[l], lad.v_x[l], lad.v_dx[l], lad.v_dh[l]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = exponentTable)]
pub fn js_exponent_table(name: &str, depth: usize, p: u32) -> Result<String, JsValue> {
    exponent_table(name, depth, p).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = widthSweep)]
pub fn js_width_sweep(name: &str, depth: usize, activation: &str, eta: f64, widths: Vec<u32>, seeds: u32) -> Result<Vec<f64>, JsValue> {
    width_sweep(name, depth, activation, eta, &widths, seeds).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = slope)]
pub fn js_slope(widths: Vec<u32>, values: Vec<f64>) -> Result<f64, JsValue> {
    slope(&widths, &values).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = ladderTable)]
pub fn js_ladder_table(depth: usize, activation: &str) -> Result<String, JsValue> {
    ladder_table(depth, activation).map_err(|e| JsValue::from_str(&e))
}
