use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loss {
    /// `(y - f)^2 / 2` on a scalar output.
    Squared,
    /// Softmax cross-entropy on `K` logits.
    CrossEntropy,
}

impl Loss {
    pub fn as_str(self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::CrossEntropy => "cross-entropy",
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "squared" | "mse" => Ok(Loss::Squared),
            "cross-entropy" | "ce" | "xent" => Ok(Loss::CrossEntropy),
            _ => Err(Error::UnknownName { kind: "loss", value: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Scalar(f64),
    Class(usize),
}

/// Loss value and its derivative with respect to the prediction.
pub fn loss_eval(kind: Loss, target: Target, f: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    match (kind, target) {
        (Loss::Squared, Target::Scalar(y)) => {
            if f.len() != 1 {
                return Err(Error::TargetMismatch(format!("squared loss needs one output, got {}", f.len())));
            }
            let r = f[0] - y;
            Ok((0.5 * r * r, DVector::from_element(1, r)))
        }
        (Loss::CrossEntropy, Target::Class(k)) => {
            if k >= f.len() {
                return Err(Error::InvalidClass { class: k, classes: f.len() });
            }
            let mx = f.max();
            let e = f.map(|v| (v - mx).exp());
            let z = e.sum();
            let value = z.ln() + mx - f[k];
            let mut g = e / z;
            g[k] -= 1.0;
            Ok((value, g))
        }
        (kind, target) => Err(Error::TargetMismatch(format!("{target:?} with {} loss", kind.as_str()))),
    }
}

/// `loss(f + df) - loss(f)` computed without cancelling the common part of
/// the two values, so that a small `df` keeps its precision.
pub fn loss_increment(kind: Loss, target: Target, f: &DVector<f64>, df: &DVector<f64>) -> Result<f64> {
    if f.len() != df.len() {
        return Err(Error::Precondition("output and increment differ in length".into()));
    }
    loss_eval(kind, target, f)?;
    match (kind, target) {
        (Loss::Squared, Target::Scalar(y)) => Ok(df[0] * (f[0] - y + 0.5 * df[0])),
        (Loss::CrossEntropy, Target::Class(k)) => {
            let mx = f.max();
            let e = f.map(|v| (v - mx).exp());
            let z = e.sum();
            let s: f64 = e.iter().zip(df.iter()).map(|(p, d)| p / z * d.exp_m1()).sum();
            Ok(s.ln_1p() - df[k])
        }
        _ => unreachable!("checked by loss_eval"),
    }
}
