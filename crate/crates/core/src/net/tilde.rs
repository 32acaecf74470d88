//! Scale-free variables at initialization, built from the centered raw
//! weights `U^l = w^l(0) - u_l` with `What^l = m^{-1/2} U^l` for `l >= 2`.

use nalgebra::{DMatrix, DVector};

use super::Network;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TildeForward {
    pub h: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub f: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct TildeBackward {
    pub dx: Vec<DVector<f64>>,
    pub dh: Vec<DVector<f64>>,
}

impl Network {
    fn centered(&self, layer: usize) -> DMatrix<f64> {
        let u = self.spec.u_shift[layer - 1];
        let w = self.raw_weight(layer);
        if u == 0.0 {
            w.clone()
        } else {
            w.add_scalar(-u)
        }
    }

    fn require_init(&self) -> Result<()> {
        if self.step != 0 {
            return Err(Error::Stale { step: self.step });
        }
        Ok(())
    }

    pub fn tilde_forward(&self, input: &DVector<f64>) -> Result<TildeForward> {
        self.require_init()?;
        let depth = self.depth();
        let act = self.spec.activation;
        let r = (self.width as f64).powf(-0.5);
        let mut h: Vec<DVector<f64>> = Vec::with_capacity(depth);
        let mut x: Vec<DVector<f64>> = Vec::with_capacity(depth);
        for l in 1..=depth {
            let hl = if l == 1 {
                let mut v = self.centered(1) * input;
                if let Some(b) = self.raw_bias(1) {
                    v += b;
                }
                v
            } else {
                self.centered(l) * &x[l - 2] * r
            };
            x.push(hl.map(|z| act.value(z)));
            h.push(hl);
        }
        let f = self.centered(depth + 1).tr_mul(&x[depth - 1]) * r;
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::Overflow { layer: depth + 1 });
        }
        Ok(TildeForward { h, x, f })
    }

    /// Backward tilde variables for a scalar output (`K = 1`), starting from
    /// `dx^L = U^{L+1}`.
    pub fn tilde_backward(&self, input: &DVector<f64>) -> Result<TildeBackward> {
        self.require_init()?;
        if self.outputs != 1 {
            return Err(Error::Unsupported("tilde backward needs a single output".into()));
        }
        let fw = self.tilde_forward(input)?;
        let depth = self.depth();
        let act = self.spec.activation;
        let r = (self.width as f64).powf(-0.5);
        let mut dx = vec![DVector::zeros(0); depth];
        let mut dh = vec![DVector::zeros(0); depth];
        let mut cur: DVector<f64> = self.centered(depth + 1).column(0).into_owned();
        for l in (1..=depth).rev() {
            let g = cur.zip_map(&fw.h[l - 1], |d, z| d * act.deriv(z));
            if l > 1 {
                let next = self.centered(l).tr_mul(&g) * r;
                dx[l - 1] = std::mem::replace(&mut cur, next);
            } else {
                dx[0] = cur.clone();
            }
            dh[l - 1] = g;
        }
        Ok(TildeBackward { dx, dh })
    }
}
