use std::fmt;
use std::str::FromStr;

use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Pointwise nonlinearity.
///
/// The homogeneous family is `alpha z^p` for `z >= 0` and `beta |z|^p` for
/// `z < 0`; its derivative at the kink `z = 0` is taken to be zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Homogeneous { p: u32, alpha: f64, beta: f64 },
    Gelu,
    Elu,
    Tanh,
    Linear,
}

impl Activation {
    pub const fn relu() -> Self {
        Activation::Homogeneous { p: 1, alpha: 1.0, beta: 0.0 }
    }

    pub fn homogeneous(p: u32, alpha: f64, beta: f64) -> Result<Self> {
        if p < 1 || !(alpha > beta && beta >= 0.0) || !alpha.is_finite() {
            return Err(Error::Precondition(format!(
                "homogeneous activation needs p >= 1 and alpha > beta >= 0, got p={p}, alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Activation::Homogeneous { p, alpha, beta })
    }

    pub fn is_relu(&self) -> bool {
        matches!(self, Activation::Homogeneous { p: 1, alpha, beta } if *alpha == 1.0 && *beta == 0.0)
    }

    /// Degree of positive homogeneity, if any.
    pub fn degree(&self) -> Option<u32> {
        match self {
            Activation::Homogeneous { p, .. } => Some(*p),
            Activation::Linear => Some(1),
            _ => None,
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Activation::Homogeneous { p, alpha, beta } => {
                if z >= 0.0 {
                    alpha * z.powi(p as i32)
                } else {
                    beta * (-z).powi(p as i32)
                }
            }
            Activation::Gelu => 0.5 * z * (1.0 + erf(z / std::f64::consts::SQRT_2)),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    pub fn deriv(&self, z: f64) -> f64 {
        match *self {
            Activation::Homogeneous { p, alpha, beta } => {
                let pf = p as f64;
                if z > 0.0 {
                    alpha * pf * z.powi(p as i32 - 1)
                } else if z < 0.0 {
                    -beta * pf * (-z).powi(p as i32 - 1)
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + z * pdf
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    /// `sigma(z + dz) - sigma(z)`, evaluated so that a small `dz` keeps its
    /// relative precision where a closed form allows it.
    pub fn increment(&self, z: f64, dz: f64) -> f64 {
        let a = z + dz;
        match *self {
            Activation::Homogeneous { p, alpha, beta } if (a >= 0.0) == (z >= 0.0) => {
                let (u, v, c, d) = if z >= 0.0 { (a, z, alpha, dz) } else { (-a, -z, beta, -dz) };
                let sum: f64 = (0..p as i32).map(|i| u.powi(i) * v.powi(p as i32 - 1 - i)).sum();
                c * d * sum
            }
            Activation::Tanh => dz.tanh() * (1.0 - a.tanh() * z.tanh()),
            Activation::Elu if a <= 0.0 && z <= 0.0 => z.exp() * dz.exp_m1(),
            Activation::Elu if a > 0.0 && z > 0.0 => dz,
            Activation::Linear => dz,
            _ => self.value(a) - self.value(z),
        }
    }

    /// Default init std. Homogeneous kinds use `E[sigma(Z)^2]^{-1/2}` for a
    /// standard normal `Z`, which is `sqrt 2` for ReLU.
    pub fn default_delta(&self) -> f64 {
        match *self {
            Activation::Homogeneous { p, alpha, beta } => {
                let double_fact: f64 = (1..=2 * p as i64 - 1).step_by(2).map(|k| k as f64).product();
                (2.0 / ((alpha * alpha + beta * beta) * double_fact)).sqrt()
            }
            Activation::Gelu => 2.0,
            Activation::Elu | Activation::Tanh | Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Activation::Homogeneous { p, alpha, beta } if alpha == 1.0 && beta == 0.0 => {
                if p == 1 {
                    write!(f, "relu")
                } else {
                    write!(f, "relu{p}")
                }
            }
            Activation::Homogeneous { p, alpha, beta } => write!(f, "homogeneous:{p}:{alpha}:{beta}"),
            Activation::Gelu => write!(f, "gelu"),
            Activation::Elu => write!(f, "elu"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let unknown = || Error::UnknownName { kind: "activation", value: s.to_string() };
        match key.as_str() {
            "relu" => return Ok(Activation::relu()),
            "gelu" => return Ok(Activation::Gelu),
            "elu" => return Ok(Activation::Elu),
            "tanh" => return Ok(Activation::Tanh),
            "linear" | "identity" => return Ok(Activation::Linear),
            _ => {}
        }
        if let Some(p) = key.strip_prefix("relu") {
            let p: u32 = p.parse().map_err(|_| unknown())?;
            return Activation::homogeneous(p, 1.0, 0.0);
        }
        if let Some(rest) = key.strip_prefix("homogeneous:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(unknown());
            }
            let p = parts[0].parse().map_err(|_| unknown())?;
            let alpha = parts[1].parse().map_err(|_| unknown())?;
            let beta = parts[2].parse().map_err(|_| unknown())?;
            return Activation::homogeneous(p, alpha, beta);
        }
        Err(unknown())
    }
}
