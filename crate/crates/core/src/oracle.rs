//! Infinite-width predictions: Gaussian moments, variance ladders of the
//! scale-free variables, and the first-step limit of IP-LLR.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::net::{loss_eval, Loss, Target};
use crate::rng::{derived_rng, Stream};

/// Samples per independently seeded Monte-Carlo block.
pub const MC_BLOCK: usize = 1 << 16;

/// Streaming mean and variance (Welford, with Chan's merge).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn merge(&mut self, o: &RunningStats) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

/// `(E[relu(Z)], E[relu(Z)^2], E[relu'(Z)])` for `Z ~ N(0, sigma^2)`.
/// The derivative mean is 1/2 also for `sigma = 0` by convention.
pub fn relu_gauss_moments(sigma: f64) -> (f64, f64, f64) {
    assert!(sigma >= 0.0, "standard deviation must be non-negative");
    (sigma / (2.0 * std::f64::consts::PI).sqrt(), 0.5 * sigma * sigma, 0.5)
}

fn cholesky_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd);
    }
    if (cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
        return Err(Error::NotPsd);
    }
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    let jittered = cov + DMatrix::identity(cov.nrows(), cov.ncols()) * 1e-12;
    jittered.cholesky().map(|c| c.l()).ok_or(Error::NotPsd)
}

fn run_block<F>(f: &F, chol: &DMatrix<f64>, seed: u64, block: u64, count: usize) -> RunningStats
where
    F: Fn(&[f64]) -> f64,
{
    let k = chol.nrows();
    let mut rng = derived_rng(seed, Stream::MonteCarlo, block);
    let mut g = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut stats = RunningStats::default();
    for _ in 0..count {
        for gi in g.iter_mut() {
            *gi = StandardNormal.sample(&mut rng);
        }
        for i in 0..k {
            z[i] = (0..=i).map(|j| chol[(i, j)] * g[j]).sum();
        }
        stats.push(f(&z));
    }
    stats
}

/// Monte-Carlo estimate of `E[f(Z)]` for `Z ~ N(0, cov)`.
pub fn mc_gaussian_expectation<F>(f: F, cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n == 0 {
        return Err(Error::Precondition("Monte-Carlo needs at least one sample".into()));
    }
    let chol = cholesky_factor(cov)?;
    let blocks = n.div_ceil(MC_BLOCK);
    let size = |b: usize| if b + 1 == blocks { n - b * MC_BLOCK } else { MC_BLOCK };
    #[cfg(feature = "parallel")]
    let parts: Vec<RunningStats> = {
        use rayon::prelude::*;
        (0..blocks).into_par_iter().map(|b| run_block(&f, &chol, seed, b as u64, size(b))).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<RunningStats> = (0..blocks).map(|b| run_block(&f, &chol, seed, b as u64, size(b))).collect();
    let mut total = RunningStats::default();
    for p in &parts {
        total.merge(p);
    }
    if !(total.mean.is_finite() && total.variance().is_finite()) {
        return Err(Error::Divergence(format!("mean {} over {} samples", total.mean, total.n)));
    }
    Ok(McEstimate { mean: total.mean, std_error: total.std_error(), n: total.n })
}

/// Second moments of the scale-free variables at initialization, per layer
/// `l = 1..=L` (index `l-1`).
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceLadder {
    pub sigma0_sq: f64,
    pub delta: Vec<f64>,
    pub v_h: Vec<f64>,
    pub v_x: Vec<f64>,
    /// `E[sigma'(Z_h)^2]` per layer.
    pub deriv_sq: Vec<f64>,
    pub v_dx: Vec<f64>,
    pub v_dh: Vec<f64>,
}

fn double_factorial_odd(n: i64) -> f64 {
    // (n)!! for odd n, with (-1)!! = 1.
    (1..=n).step_by(2).map(|k| k as f64).product()
}

/// `E[sigma(Z)^2]` and `E[sigma'(Z)^2]` for `Z ~ N(0, v)`.
fn activation_moments(act: &Activation, v: f64, n_mc: usize, seed: u64, level: u64) -> Result<(f64, f64)> {
    if let Activation::Homogeneous { p, alpha, beta } = *act {
        let w = alpha * alpha + beta * beta;
        let pi = p as i32;
        let val = 0.5 * w * v.powi(pi) * double_factorial_odd(2 * p as i64 - 1);
        let der = 0.5 * w * (p * p) as f64 * v.powi(pi - 1) * double_factorial_odd(2 * p as i64 - 3);
        return Ok((val, der));
    }
    if let Activation::Linear = act {
        return Ok((v, 1.0));
    }
    if n_mc < 10_000 {
        return Err(Error::Precondition(format!("n_mc = {n_mc} is below the 10^4 minimum for Monte-Carlo moments")));
    }
    let cov = DMatrix::from_element(1, 1, v);
    let a = *act;
    let val = mc_gaussian_expectation(|z| a.value(z[0]).powi(2), &cov, n_mc, seed ^ (2 * level))?;
    let der = mc_gaussian_expectation(|z| a.deriv(z[0]).powi(2), &cov, n_mc, seed ^ (2 * level + 1))?;
    for e in [val, der] {
        if e.std_error > 0.01 * e.mean.abs() {
            return Err(Error::Precondition(format!(
                "n_mc = {n_mc} too small: standard error {} exceeds 1% of {}",
                e.std_error, e.mean
            )));
        }
    }
    Ok((val.mean, der.mean))
}

/// Forward and backward variance recursions. `delta` has `L+1` entries and
/// its first entry must already include any input rescaling; the first
/// pre-activation variance is `delta_1^2 sigma0_sq`.
pub fn variance_ladder(depth: usize, sigma0_sq: f64, delta: &[f64], act: &Activation, n_mc: usize, seed: u64) -> Result<VarianceLadder> {
    if depth < 1 || delta.len() != depth + 1 {
        return Err(Error::Precondition(format!("need {} init scales for L = {depth}", depth + 1)));
    }
    let mut v_h = Vec::with_capacity(depth);
    let mut v_x = Vec::with_capacity(depth);
    let mut deriv_sq = Vec::with_capacity(depth);
    for l in 1..=depth {
        let vh = if l == 1 { delta[0] * delta[0] * sigma0_sq } else { delta[l - 1] * delta[l - 1] * v_x[l - 2] };
        let (vx, ds) = activation_moments(act, vh, n_mc, seed, l as u64)?;
        v_h.push(vh);
        v_x.push(vx);
        deriv_sq.push(ds);
    }
    let mut v_dx = vec![0.0; depth];
    let mut v_dh = vec![0.0; depth];
    v_dx[depth - 1] = delta[depth] * delta[depth];
    for l in (1..=depth).rev() {
        if l < depth {
            v_dx[l - 1] = delta[l] * delta[l] * v_dh[l];
        }
        v_dh[l - 1] = v_dx[l - 1] * deriv_sq[l - 1];
    }
    let ladder = VarianceLadder { sigma0_sq, delta: delta.to_vec(), v_h, v_x, deriv_sq, v_dx, v_dh };
    let all = ladder.v_h.iter().chain(&ladder.v_x).chain(&ladder.v_dx).chain(&ladder.v_dh);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("variance ladder is not finite".into()));
    }
    Ok(ladder)
}

/// Inputs of the first-step IP-LLR limit.
#[derive(Clone, Debug)]
pub struct OracleInput {
    /// Training input of step 0.
    pub xi0: DVector<f64>,
    pub y0: Target,
    /// Evaluation input.
    pub xi: DVector<f64>,
    pub eta: f64,
    pub loss: Loss,
    pub depth: usize,
    /// Init scales with the first entry already including input rescaling.
    pub delta: Vec<f64>,
    pub activation: Activation,
    pub n_mc: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub chi0: f64,
    /// `lambda_l = E[Z^{x~^l_0} Z^{x^l_1}]` for `l = 1..=L`.
    pub lambda: Vec<f64>,
    pub lambda_se: Vec<f64>,
    pub f1: f64,
    /// Direct sampling error of the output combined with the propagated
    /// errors of the `lambda` chain.
    pub f1_se: f64,
    pub n_mc: usize,
}

/// Infinite-width output after one SGD step of IP-LLR on `(xi0, y0)`,
/// evaluated at `xi`. Needs a positively homogeneous activation.
pub fn ipllr_t1_limit(inp: &OracleInput) -> Result<OracleReport> {
    let act = inp.activation;
    let p = act
        .degree()
        .ok_or_else(|| Error::Unsupported(format!("first-step limit needs a homogeneous activation, got {act}")))?;
    let depth = inp.depth;
    if depth < 2 {
        return Err(Error::InvalidDepth(depth));
    }
    if inp.xi0.len() != inp.xi.len() {
        return Err(Error::Precondition("training and evaluation inputs differ in dimension".into()));
    }
    let (_, chi) = loss_eval(inp.loss, inp.y0, &DVector::zeros(1))?;
    let chi0 = chi[0];
    if chi0 == 0.0 {
        return Ok(OracleReport {
            chi0,
            lambda: vec![0.0; depth],
            lambda_se: vec![0.0; depth],
            f1: 0.0,
            f1_se: 0.0,
            n_mc: inp.n_mc,
        });
    }
    let s00 = inp.xi0.norm_squared() + 1.0;
    let s01 = inp.xi0.dot(&inp.xi) + 1.0;
    let s11 = inp.xi.norm_squared() + 1.0;
    let ladder = variance_ladder(depth, s00, &inp.delta, &act, inp.n_mc.max(10_000), inp.seed)?;
    let d1 = inp.delta[0] * inp.delta[0];
    let k = -inp.eta * chi0;

    let mut lambda = Vec::with_capacity(depth);
    let mut lambda_se = Vec::with_capacity(depth);
    let cov1 = DMatrix::from_row_slice(3, 3, &[d1 * s00, d1 * s01, 0.0, d1 * s01, d1 * s11, 0.0, 0.0, 0.0, ladder.v_dx[0]]);
    let l1 = mc_gaussian_expectation(
        |z| act.value(z[0]) * act.value(z[1] + k * s01 * z[2] * act.deriv(z[0])),
        &cov1,
        inp.n_mc,
        inp.seed.wrapping_add(1),
    )?;
    lambda.push(l1.mean);
    lambda_se.push(l1.std_error);
    let mut f1 = None;
    for l in 2..=depth {
        let c = k * lambda[l - 2];
        let cov = DMatrix::from_row_slice(2, 2, &[ladder.v_h[l - 1], 0.0, 0.0, ladder.v_dx[l - 1]]);
        let est = mc_gaussian_expectation(
            |z| act.value(z[0]) * act.value(c * z[1] * act.deriv(z[0])),
            &cov,
            inp.n_mc,
            inp.seed.wrapping_add(l as u64),
        )?;
        lambda.push(est.mean);
        lambda_se.push(est.std_error);
        if l == depth {
            // Z^{U^{L+1}} is the layer-L backward sample z[1].
            f1 = Some(mc_gaussian_expectation(
                |z| {
                    let x1 = act.value(c * z[1] * act.deriv(z[0]));
                    z[1] * x1 + k * act.value(z[0]) * x1
                },
                &cov,
                inp.n_mc,
                inp.seed.wrapping_add(l as u64),
            )?);
        }
    }
    let f1 = f1.expect("depth >= 2");
    // ln f1 depends on ln lambda_k with sensitivity p^{L-k} for homogeneous activations.
    let mut rel_var = 0.0;
    for kk in 1..depth {
        if lambda[kk - 1] != 0.0 {
            let sens = (p as f64).powi((depth - kk) as i32);
            rel_var += (sens * lambda_se[kk - 1] / lambda[kk - 1]).powi(2);
        }
    }
    let f1_se = (f1.std_error.powi(2) + f1.mean.powi(2) * rel_var).sqrt();
    for v in lambda.iter().chain(std::iter::once(&f1.mean)) {
        if !v.is_finite() {
            return Err(Error::Divergence("first-step limit is not finite".into()));
        }
    }
    Ok(OracleReport { chi0, lambda, lambda_se, f1: f1.mean, f1_se, n_mc: inp.n_mc })
}

/// Limit of the Naive-IP output: it stays at zero for every step and input.
pub fn naive_ip_limit(_t: u64, _xi: &DVector<f64>) -> f64 {
    0.0
}
