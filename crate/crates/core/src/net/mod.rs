//! Finite-width network engine.
//!
//! Raw weights `w^l` are stored; the effective weights are
//! `W^l = m^{-a_l} w^l`. The output layer is stored as an `m x K` matrix so
//! that `f = (W^{L+1})^T x^L`.

mod calibrate;
mod checkpoint;
mod loss;
mod tilde;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::params::{Exponent, ParamSpec, Slot, Variant};
use crate::rng::{gaussian_block, Stream};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{loss_increment, loss_eval, Loss, Target};
pub use tilde::{TildeBackward, TildeForward};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: DVector<f64>,
    pub target: Target,
}

impl Sample {
    pub fn new(input: DVector<f64>, target: Target) -> Self {
        Sample { input, target }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: ParamSpec,
    width: usize,
    input_dim: usize,
    outputs: usize,
    step: u64,
    seed: u64,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<Option<DVector<f64>>>,
}

/// Pre-activations `h^l` and activations `x^l` for `l = 1..=L` (stored at
/// index `l-1`) and the output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: DVector<f64>,
    pub h: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub f: DVector<f64>,
}

/// Batched pre-activations (`m x n`, index `l-1`) and outputs (`K x n`).
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub h: Vec<DMatrix<f64>>,
    pub f: DMatrix<f64>,
}

/// Gradients of `seed^T f` with respect to `x^l` and `h^l` (index `l-1`).
/// When produced from a loss, `seed` is `chi`, the derivative of the loss in
/// the prediction.
#[derive(Clone, Debug)]
pub struct BackwardTrace {
    pub seed: DVector<f64>,
    pub dx: Vec<DVector<f64>>,
    pub dh: Vec<DVector<f64>>,
}

/// Batch-averaged gradients with respect to the raw parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<Option<DVector<f64>>>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Mean loss over the batch, evaluated before the update.
    pub loss: f64,
    /// Loss derivative per sample, before the update.
    pub chi: Vec<DVector<f64>>,
    /// Outputs per sample, before the update.
    pub f: Vec<DVector<f64>>,
}

fn check_finite(v: &DVector<f64>, layer: usize) -> Result<()> {
    if v.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow { layer })
    }
}

impl Network {
    /// Deterministic initialization `w^l = delta_l G + u_l` from the width-nested stream.
    pub fn init(spec: &ParamSpec, width: usize, input_dim: usize, outputs: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if width == 0 || input_dim == 0 || outputs == 0 {
            return Err(Error::Precondition("width, input dimension and outputs must be positive".into()));
        }
        let depth = spec.depth;
        let mut weights = Vec::with_capacity(depth + 1);
        let mut biases = Vec::with_capacity(depth + 1);
        for l in 1..=depth + 1 {
            let cols = match l {
                1 => input_dim,
                l if l == depth + 1 => outputs,
                _ => width,
            };
            let std = spec.delta[l - 1] * if l == 1 && spec.input_rescale { ((input_dim + 1) as f64).powf(-0.5) } else { 1.0 };
            let shift = spec.u_shift[l - 1];
            let raw = gaussian_block(seed, Stream::Weight, l as u64, width, cols);
            weights.push(DMatrix::from_row_iterator(width, cols, raw.into_iter().map(|g| std * g + shift)));
            biases.push(if spec.has_bias(l) {
                let n = if l == depth + 1 { outputs } else { width };
                let raw = gaussian_block(seed, Stream::Bias, l as u64, n, 1);
                Some(DVector::from_iterator(n, raw.into_iter().map(|g| std * g)))
            } else {
                None
            });
        }
        Ok(Network { spec: spec.clone(), width, input_dim, outputs, step: 0, seed, weights, biases })
    }

    pub fn spec(&self) -> &ParamSpec {
        &self.spec
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn depth(&self) -> usize {
        self.spec.depth
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn outputs(&self) -> usize {
        self.outputs
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw weight `w^l`, `l` in `1..=L+1`.
    pub fn raw_weight(&self, layer: usize) -> &DMatrix<f64> {
        &self.weights[layer - 1]
    }

    pub fn raw_bias(&self, layer: usize) -> Option<&DVector<f64>> {
        self.biases[layer - 1].as_ref()
    }

    pub fn raw_weight_mut(&mut self, layer: usize) -> &mut DMatrix<f64> {
        &mut self.weights[layer - 1]
    }

    pub fn raw_bias_mut(&mut self, layer: usize) -> Option<&mut DVector<f64>> {
        self.biases[layer - 1].as_mut()
    }

    /// Effective weight `W^l = m^{-a_l} w^l`.
    pub fn effective_weight(&self, layer: usize) -> DMatrix<f64> {
        &self.weights[layer - 1] * self.scale(layer)
    }

    /// Effective bias `B^l` according to the bias mode.
    pub fn effective_bias(&self, layer: usize) -> Option<DVector<f64>> {
        self.biases[layer - 1].as_ref().map(|b| b * self.spec.bias_factor(layer, self.width))
    }

    fn scale(&self, layer: usize) -> f64 {
        self.spec.a[layer - 1].scale(self.width)
    }

    pub fn forward(&self, input: &DVector<f64>) -> Result<ForwardTrace> {
        if input.len() != self.input_dim {
            return Err(Error::Precondition(format!("input has dimension {}, expected {}", input.len(), self.input_dim)));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition("input is not finite".into()));
        }
        let depth = self.depth();
        let act = self.spec.activation;
        let mut h = Vec::with_capacity(depth);
        let mut x: Vec<DVector<f64>> = Vec::with_capacity(depth);
        for l in 1..=depth {
            let prev = if l == 1 { input } else { &x[l - 2] };
            let mut hl = &self.weights[l - 1] * prev;
            hl *= self.scale(l);
            if let Some(b) = &self.biases[l - 1] {
                hl.axpy(self.spec.bias_factor(l, self.width), b, 1.0);
            }
            check_finite(&hl, l)?;
            x.push(hl.map(|z| act.value(z)));
            check_finite(&x[l - 1], l)?;
            h.push(hl);
        }
        let last = depth + 1;
        let mut f = self.weights[depth].tr_mul(&x[depth - 1]);
        f *= self.scale(last);
        if let Some(b) = &self.biases[depth] {
            f.axpy(self.spec.bias_factor(last, self.width), b, 1.0);
        }
        check_finite(&f, last)?;
        Ok(ForwardTrace { input: input.clone(), h, x, f })
    }

    /// Forward pass of many inputs at once; column `i` of every matrix
    /// belongs to `inputs[i]`.
    pub fn forward_batch(&self, inputs: &[DVector<f64>]) -> Result<BatchForward> {
        if let Some(bad) = inputs.iter().find(|v| v.len() != self.input_dim) {
            return Err(Error::Precondition(format!("input has dimension {}, expected {}", bad.len(), self.input_dim)));
        }
        let n = inputs.len();
        let depth = self.depth();
        let act = self.spec.activation;
        let cols = DMatrix::from_iterator(self.input_dim, n, inputs.iter().flat_map(|v| v.iter().copied()));
        if !cols.iter().all(|v| v.is_finite()) {
            return Err(Error::Precondition("input is not finite".into()));
        }
        let mut h = Vec::with_capacity(depth);
        let mut prev = cols;
        for l in 1..=depth {
            let mut hl = &self.weights[l - 1] * &prev;
            hl *= self.scale(l);
            if let Some(b) = &self.biases[l - 1] {
                let bb = b * self.spec.bias_factor(l, self.width);
                for mut c in hl.column_iter_mut() {
                    c += &bb;
                }
            }
            if !hl.iter().all(|z| z.is_finite()) {
                return Err(Error::Overflow { layer: l });
            }
            prev = hl.map(|z| act.value(z));
            h.push(hl);
        }
        let last = depth + 1;
        let mut f = self.weights[depth].tr_mul(&prev);
        f *= self.scale(last);
        if let Some(b) = &self.biases[depth] {
            let bb = b * self.spec.bias_factor(last, self.width);
            for mut c in f.column_iter_mut() {
                c += &bb;
            }
        }
        if !f.iter().all(|z| z.is_finite()) {
            return Err(Error::Overflow { layer: last });
        }
        Ok(BatchForward { h, f })
    }

    /// Reverse pass for the scalar `seed^T f`.
    pub fn backward(&self, trace: &ForwardTrace, seed: &DVector<f64>) -> Result<BackwardTrace> {
        if seed.len() != self.outputs {
            return Err(Error::Precondition(format!("seed has {} entries, expected {}", seed.len(), self.outputs)));
        }
        let depth = self.depth();
        let act = self.spec.activation;
        let mut dx = vec![DVector::zeros(0); depth];
        let mut dh = vec![DVector::zeros(0); depth];
        let mut cur = &self.weights[depth] * seed;
        cur *= self.scale(depth + 1);
        for l in (1..=depth).rev() {
            check_finite(&cur, l)?;
            let g = cur.zip_map(&trace.h[l - 1], |d, z| d * act.deriv(z));
            check_finite(&g, l)?;
            if l > 1 {
                let mut next = self.weights[l - 1].tr_mul(&g);
                next *= self.scale(l);
                dx[l - 1] = std::mem::replace(&mut cur, next);
            } else {
                dx[0] = cur.clone();
            }
            dh[l - 1] = g;
        }
        Ok(BackwardTrace { seed: seed.clone(), dx, dh })
    }

    /// Backward pass of the loss: the seed is `chi = d loss / d f`.
    pub fn loss_backward(&self, trace: &ForwardTrace, target: Target, loss: Loss) -> Result<(f64, BackwardTrace)> {
        let (value, chi) = loss_eval(loss, target, &trace.f)?;
        Ok((value, self.backward(trace, &chi)?))
    }

    /// Batch-averaged raw-parameter gradients of the loss, plus the
    /// per-sample outputs and `chi`.
    pub fn gradients(&self, batch: &[Sample], loss: Loss) -> Result<(Gradients, StepOutcome)> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let depth = self.depth();
        let n = batch.len();
        let mut fs = Vec::with_capacity(n);
        let mut chis = Vec::with_capacity(n);
        let mut total = 0.0;
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = Vec::with_capacity(n);
        for s in batch {
            let tr = self.forward(&s.input)?;
            let (v, bt) = self.loss_backward(&tr, s.target, loss)?;
            total += v;
            fs.push(tr.f.clone());
            chis.push(bt.seed.clone());
            fwd.push(tr);
            bwd.push(bt);
        }
        let inv = 1.0 / n as f64;
        let mut w = Vec::with_capacity(depth + 1);
        let mut b = Vec::with_capacity(depth + 1);
        for l in 1..=depth + 1 {
            let s = self.scale(l) * inv;
            // Left factor is the backward signal, right factor the layer input.
            let (left, right): (Vec<&DVector<f64>>, Vec<&DVector<f64>>) = if l == depth + 1 {
                (fwd.iter().map(|t| &t.x[depth - 1]).collect(), bwd.iter().map(|b| &b.seed).collect())
            } else {
                let inputs = fwd.iter().map(|t| if l == 1 { &t.input } else { &t.x[l - 2] });
                (bwd.iter().map(|b| &b.dh[l - 1]).collect(), inputs.collect())
            };
            let (rows, cols) = self.weights[l - 1].shape();
            let mut g = DMatrix::zeros(rows, cols);
            if n == 1 {
                g.ger(s, left[0], right[0], 0.0);
            } else {
                let lm = DMatrix::from_iterator(rows, n, left.iter().flat_map(|v| v.iter().copied()));
                let rm = DMatrix::from_iterator(cols, n, right.iter().flat_map(|v| v.iter().copied()));
                g.gemm(s, &lm, &rm.transpose(), 0.0);
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Overflow { layer: l });
            }
            w.push(g);
            b.push(self.biases[l - 1].as_ref().map(|_| {
                let f = self.spec.bias_factor(l, self.width) * inv;
                let mut acc = DVector::zeros(if l == depth + 1 { self.outputs } else { self.width });
                for bt in &bwd {
                    let sig = if l == depth + 1 { &bt.seed } else { &bt.dh[l - 1] };
                    acc.axpy(f, sig, 1.0);
                }
                acc
            }));
        }
        Ok((Gradients { w, b }, StepOutcome { loss: total * inv, chi: chis, f: fs }))
    }

    /// One SGD step: `w^l <- w^l - eta_l m^{-c_l(t)} grad`, with the
    /// HP/HPZ surgery on intermediate layers when leaving step 0.
    pub fn sgd_step(&mut self, batch: &[Sample], eta: f64, loss: Loss, overrides: Option<&[f64]>) -> Result<StepOutcome> {
        let depth = self.depth();
        if let Some(o) = overrides {
            if o.len() != depth + 1 {
                return Err(Error::OverrideLength { expected: depth + 1, got: o.len() });
            }
        }
        let (grads, outcome) = self.gradients(batch, loss)?;
        self.apply(&grads, eta, overrides)?;
        Ok(outcome)
    }

    /// Applies precomputed gradients as one step.
    pub fn apply(&mut self, grads: &Gradients, eta: f64, overrides: Option<&[f64]>) -> Result<()> {
        let depth = self.depth();
        let t = self.step;
        let m = self.width;
        for l in 1..=depth + 1 {
            let eta_l = overrides.map_or(eta, |o| o[l - 1]);
            let sw = -eta_l * self.spec.lr_exponent(l, t, Slot::Weight)?.scale(m);
            if t == 0 && l >= 2 && l <= depth {
                match self.spec.variant {
                    Variant::Plain => {}
                    Variant::Hp => {
                        // Raw factor m^{a_l - 1} leaves m^{-1} U^l in the effective weight.
                        self.weights[l - 1] *= (Exponent::integer(1) - self.spec.a[l - 1]).scale(m);
                    }
                    Variant::Hpz => self.weights[l - 1].fill(0.0),
                }
            }
            self.weights[l - 1].zip_apply(&grads.w[l - 1], |w, g| *w += sw * g);
            if let (Some(b), Some(g)) = (self.biases[l - 1].as_mut(), grads.b[l - 1].as_ref()) {
                let sb = -eta_l * self.spec.lr_exponent(l, t, Slot::Bias)?.scale(m);
                b.axpy(sb, g, 1.0);
            }
        }
        self.step += 1;
        Ok(())
    }
}
