//! Per-layer first-step learning rates for IP-LLR.

use nalgebra::DVector;

use super::{Loss, Network, Sample};
use crate::error::{Error, Result};
use crate::params::{ParamName, Slot};

/// Upper bound on a calibrated base learning rate.
pub const ETA_CAP: f64 = 500.0;

fn mean_abs(a: &[DVector<f64>], b: &[DVector<f64>], eta: f64) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (u, v) in a.iter().zip(b) {
        s += u.iter().zip(v.iter()).map(|(p, q)| (p + eta * q).abs()).sum::<f64>();
        n += u.len();
    }
    s / n as f64
}

impl Network {
    /// Chooses `eta_l` for `l = 2..=L`, input to output, so that the mean of
    /// `|h^l_1|` over `batch1` is one after the step-0 update on `batch0`.
    /// Layers 1 and `L+1` keep `eta`; results are capped at 500.
    pub fn calibrate_ipllr_lr(&self, batch0: &[Sample], batch1: &[Sample], eta: f64, loss: Loss) -> Result<Vec<f64>> {
        if self.step != 0 {
            return Err(Error::Stale { step: self.step });
        }
        if self.spec.name != ParamName::IpLlr {
            return Err(Error::Precondition(format!("calibration is defined for ipllr, not {}", self.spec.name)));
        }
        if batch1.is_empty() {
            return Err(Error::Precondition("empty calibration batch".into()));
        }
        let depth = self.depth();
        let m = self.width;
        let (grads, _) = self.gradients(batch0, loss)?;
        let mut etas = vec![eta; depth + 1];
        // Unit-rate update factors for one layer.
        let unit_w = |l: usize| -> Result<f64> { Ok(-self.spec.lr_exponent(l, 0, Slot::Weight)?.scale(m)) };
        let unit_b = |l: usize| -> Result<f64> { Ok(-self.spec.lr_exponent(l, 0, Slot::Bias)?.scale(m)) };
        let act = self.spec.activation;
        let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(batch1.len());
        {
            let scale = self.spec.a[0].scale(m);
            let bf = self.spec.bias_factor(1, m);
            for s in batch1 {
                let mut h = (&self.weights[0] * &s.input + &grads.w[0] * &s.input * (eta * unit_w(1)?)) * scale;
                if let (Some(b0), Some(gb)) = (self.biases[0].as_ref(), grads.b[0].as_ref()) {
                    h.axpy(bf, b0, 1.0);
                    h.axpy(bf * eta * unit_b(1)?, gb, 1.0);
                }
                inputs.push(h.map(|z| act.value(z)));
            }
        }
        for l in 2..=depth {
            let scale = self.spec.a[l - 1].scale(m);
            let bf = self.spec.bias_factor(l, m);
            let mut a = Vec::with_capacity(inputs.len());
            let mut b = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let mut base = &self.weights[l - 1] * x * scale;
                let mut dir = &grads.w[l - 1] * x * (scale * unit_w(l)?);
                if let (Some(b0), Some(gb)) = (self.biases[l - 1].as_ref(), grads.b[l - 1].as_ref()) {
                    base.axpy(bf, b0, 1.0);
                    dir.axpy(bf * unit_b(l)?, gb, 1.0);
                }
                a.push(base);
                b.push(dir);
            }
            if inputs.iter().all(|v| v.iter().all(|z| *z == 0.0)) {
                return Err(Error::Calibration { layer: l, reason: "all incoming activations are zero".into() });
            }
            let at0 = mean_abs(&a, &b, 0.0);
            let at_cap = mean_abs(&a, &b, ETA_CAP);
            if !(at0.is_finite() && at_cap.is_finite()) {
                return Err(Error::Overflow { layer: l });
            }
            if b.iter().all(|v| v.iter().all(|z| *z == 0.0)) {
                return Err(Error::Calibration { layer: l, reason: "update direction vanishes on the batch".into() });
            }
            if at0 >= 1.0 {
                return Err(Error::Calibration { layer: l, reason: format!("mean |h| is already {at0} before the update") });
            }
            let eta_l = if at_cap <= 1.0 {
                ETA_CAP
            } else {
                let (mut lo, mut hi) = (0.0, ETA_CAP);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mean_abs(&a, &b, mid) < 1.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            };
            etas[l - 1] = eta_l;
            inputs = a
                .iter()
                .zip(&b)
                .map(|(u, v)| (u + v * eta_l).map(|z| act.value(z)))
                .collect();
        }
        Ok(etas)
    }
}
