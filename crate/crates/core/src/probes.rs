//! Measurements on networks: power-law fits, numerical rank, collapse and
//! input-independence statistics, equivalence of two trainings, and a
//! finite-difference gradient check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{loss_increment, loss_eval, Loss, Network, Sample, Target};
use crate::params::{ParamSpec, Variant};
use crate::rng::{derived_rng, Stream};

/// Least-squares line through `(ln m, ln value)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
}

pub fn fit_scaling_exponent(widths: &[f64], values: &[f64]) -> Result<Fit> {
    if widths.len() != values.len() {
        return Err(Error::Precondition(format!("{} widths but {} values", widths.len(), values.len())));
    }
    if widths.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: widths.len() });
    }
    for (i, (&w, &v)) in widths.iter().zip(values).enumerate() {
        if w.is_nan() || w <= 0.0 {
            return Err(Error::NonPositive { index: i, value: w });
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositive { index: i, value: v });
        }
    }
    let xs: Vec<f64> = widths.iter().map(|w| w.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("widths must not all be equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Fit { slope, intercept, residual })
}

/// Number of singular values above `sigma_max * width * 1e-7`.
pub fn numerical_rank(matrix: &DMatrix<f64>, width: usize) -> Result<usize> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("matrix has non-finite entries".into()));
    }
    if matrix.is_empty() {
        return Ok(0);
    }
    let sv = matrix.clone().try_svd(false, false, f64::EPSILON, 0).ok_or(Error::Svd)?.singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(0);
    }
    let tol = smax * width as f64 * 1e-7;
    Ok(sv.iter().filter(|&&s| s > tol).count())
}

/// `std(entries) / max(|mean(entries)|, 1e-12)` with the population std.
pub fn collapse_statistic(delta: &DMatrix<f64>) -> f64 {
    let n = delta.len() as f64;
    let mean = delta.sum() / n;
    let var = delta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs().max(1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndependenceStats {
    /// RMS over coordinates of `h^l(xi) - h^l(xi')`, `l = 1..=L`.
    pub h_rms: Vec<f64>,
    pub f_diff: f64,
}

pub fn input_independence_statistic(net: &Network, xi: &DVector<f64>, xi2: &DVector<f64>) -> Result<IndependenceStats> {
    let a = net.forward(xi)?;
    let b = net.forward(xi2)?;
    let h_rms = a
        .h
        .iter()
        .zip(&b.h)
        .map(|(u, v)| (u - v).norm() / (u.len() as f64).sqrt())
        .collect();
    Ok(IndependenceStats { h_rms, f_diff: (&a.f - &b.f).norm() })
}

/// Single-sample SGD: step `t` trains on `stream[t % len]`.
#[derive(Clone, Debug)]
pub struct TrainRoutine {
    pub stream: Vec<Sample>,
    pub eta: f64,
    pub loss: Loss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    /// Max over test inputs of `|f^A_t - f^B_t|`, for `t = 1..=T`.
    pub abs_diff: Vec<f64>,
    /// Same, divided by `max(|f^A_t|, |f^B_t|)` per input.
    pub rel_diff: Vec<f64>,
    pub max_abs: f64,
    pub max_rel: f64,
    /// Step-0 learning rate used on the B side.
    pub eta_b0: f64,
}

fn scalar_f(net: &Network, xi: &DVector<f64>) -> Result<f64> {
    Ok(net.forward(xi)?.f[0])
}

/// Trains two networks from the same seed and compares their outputs. When
/// B carries weight surgery its step-0 rate is `(chi0^A / chi0^B) eta`.
pub fn finite_width_equivalence(
    spec_a: &ParamSpec,
    spec_b: &ParamSpec,
    width: usize,
    seed: u64,
    routine: &TrainRoutine,
    tests: &[DVector<f64>],
    steps: usize,
) -> Result<EquivalenceReport> {
    if routine.stream.is_empty() || tests.is_empty() {
        return Err(Error::Precondition("equivalence needs training samples and test inputs".into()));
    }
    let d = routine.stream[0].input.len();
    let mut a = Network::init(spec_a, width, d, 1, seed)?;
    let mut b = Network::init(spec_b, width, d, 1, seed)?;
    let first = &routine.stream[0];
    let chi = |net: &Network| -> Result<f64> {
        let f = net.forward(&first.input)?.f;
        Ok(loss_eval(routine.loss, first.target, &f)?.1[0])
    };
    let eta_b0 = if spec_b.variant != Variant::Plain {
        let (ca, cb) = (chi(&a)?, chi(&b)?);
        if cb == 0.0 {
            return Err(Error::Precondition("chi0 of the surgery side is zero".into()));
        }
        ca / cb * routine.eta
    } else {
        routine.eta
    };
    let mut abs_diff = Vec::with_capacity(steps);
    let mut rel_diff = Vec::with_capacity(steps);
    for t in 0..steps {
        let s = &routine.stream[t % routine.stream.len()];
        a.sgd_step(std::slice::from_ref(s), routine.eta, routine.loss, None)?;
        b.sgd_step(std::slice::from_ref(s), if t == 0 { eta_b0 } else { routine.eta }, routine.loss, None)?;
        let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
        for xi in tests {
            let (fa, fb) = (scalar_f(&a, xi)?, scalar_f(&b, xi)?);
            let diff = (fa - fb).abs();
            worst_abs = worst_abs.max(diff);
            let den = fa.abs().max(fb.abs());
            if den > 0.0 {
                worst_rel = worst_rel.max(diff / den);
            }
        }
        abs_diff.push(worst_abs);
        rel_diff.push(worst_rel);
    }
    let max_abs = abs_diff.iter().copied().fold(0.0, f64::max);
    let max_rel = rel_diff.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceReport { abs_diff, rel_diff, max_abs, max_rel, eta_b0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// A ReLU-type kink lies within `10 eps` of some pre-activation.
    pub kink_warning: bool,
}

#[derive(Clone, Copy, Debug)]
enum Param {
    Weight(usize, usize, usize),
    Bias(usize, usize),
}

/// Output of `minus` at `input` and `f(plus) - f(minus)`. The difference
/// is carried through the layers as its own quantity, so the part shared by
/// the two networks never has to cancel in floating point.
pub fn output_increment(plus: &Network, minus: &Network, input: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if plus.width() != minus.width() || plus.depth() != minus.depth() || plus.spec().a != minus.spec().a {
        return Err(Error::Precondition("networks differ in shape or scaling".into()));
    }
    let trace = minus.forward(input)?;
    let spec = minus.spec();
    let (m, depth) = (minus.width(), minus.depth());
    let act = spec.activation;
    let mut dx: Option<DVector<f64>> = None;
    for l in 1..=depth + 1 {
        let prev = if l == 1 { input } else { &trace.x[l - 2] };
        let dw = plus.raw_weight(l) - minus.raw_weight(l);
        let mut d = if l == depth + 1 {
            let mut v = dw.tr_mul(prev);
            if let Some(dx) = &dx {
                v += plus.raw_weight(l).tr_mul(dx);
            }
            v
        } else {
            let mut v = &dw * prev;
            if let Some(dx) = &dx {
                v += plus.raw_weight(l) * dx;
            }
            v
        };
        d *= spec.a[l - 1].scale(m);
        if let (Some(bp), Some(bm)) = (plus.raw_bias(l), minus.raw_bias(l)) {
            d.axpy(spec.bias_factor(l, m), &(bp - bm), 1.0);
        }
        if l == depth + 1 {
            return Ok((trace.f, d));
        }
        let h = &trace.h[l - 1];
        dx = Some(DVector::from_iterator(m, h.iter().zip(d.iter()).map(|(&z, &dz)| act.increment(z, dz))));
    }
    unreachable!("loop returns at the output layer")
}

/// Compares backprop gradients of the raw parameters against central
/// differences on `count` parameters drawn round-robin across every weight
/// and bias block. Both the output and the loss differences are formed
/// without subtracting two rounded totals.
pub fn gradient_check(net: &Network, sample: &Sample, loss: Loss, eps: f64, count: usize, seed: u64) -> Result<GradCheckReport> {
    let depth = net.depth();
    let trace = net.forward(&sample.input)?;
    let kink_warning = matches!(net.spec().activation, crate::Activation::Homogeneous { p: 1, .. })
        && trace.h.iter().any(|h| h.iter().any(|z| z.abs() < 10.0 * eps));
    let (grads, _) = net.gradients(std::slice::from_ref(sample), loss)?;
    let mut blocks: Vec<Param> = Vec::new();
    for l in 1..=depth + 1 {
        blocks.push(Param::Weight(l, 0, 0));
        if net.raw_bias(l).is_some() {
            blocks.push(Param::Bias(l, 0));
        }
    }
    let mut rng = derived_rng(seed, Stream::Probe, 0);
    let mut work = net.clone();
    let mut worst = 0.0f64;
    for i in 0..count {
        let p = match blocks[i % blocks.len()] {
            Param::Weight(l, _, _) => {
                let (r, c) = net.raw_weight(l).shape();
                Param::Weight(l, rng.random_range(0..r), rng.random_range(0..c))
            }
            Param::Bias(l, _) => Param::Bias(l, rng.random_range(0..net.raw_bias(l).map_or(1, |b| b.len()))),
        };
        let (analytic, orig) = match p {
            Param::Weight(l, j, q) => (grads.w[l - 1][(j, q)], net.raw_weight(l)[(j, q)]),
            Param::Bias(l, j) => (grads.b[l - 1].as_ref().map_or(0.0, |b| b[j]), net.raw_bias(l).map_or(0.0, |b| b[j])),
        };
        let set = |v: f64, w: &mut Network| match p {
            Param::Weight(l, j, q) => w.raw_weight_mut(l)[(j, q)] = v,
            Param::Bias(l, j) => {
                if let Some(b) = w.raw_bias_mut(l) {
                    b[j] = v
                }
            }
        };
        set(orig + eps, &mut work);
        let mut low = work.clone();
        set(orig - eps, &mut low);
        let (down, df) = output_increment(&work, &low, &sample.input)?;
        set(orig, &mut work);
        let numeric = loss_increment(loss, sample.target, &down, &df)? / (2.0 * eps);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1e-12));
    }
    Ok(GradCheckReport { max_rel_error: worst, checked: count, kink_warning })
}

/// Convenience: a scalar-target sample.
pub fn scalar_sample(input: DVector<f64>, y: f64) -> Sample {
    Sample::new(input, Target::Scalar(y))
}
