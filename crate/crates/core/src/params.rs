//! Parameterizations as data: scale exponents `a_l`, learning-rate exponents
//! `c_l` (split into the first step and later steps), init scales and the
//! bias convention.
//!
//! Layers are numbered `1..=L+1` in every public function; vectors are stored
//! zero-based.

use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};

/// An exponent that is an exact multiple of one half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Exponent {
    halves: i64,
}

impl Exponent {
    pub const ZERO: Exponent = Exponent { halves: 0 };

    pub const fn from_halves(halves: i64) -> Self {
        Exponent { halves }
    }

    pub const fn integer(n: i64) -> Self {
        Exponent { halves: 2 * n }
    }

    pub const fn halves(self) -> i64 {
        self.halves
    }

    pub fn as_f64(self) -> f64 {
        self.halves as f64 / 2.0
    }

    /// `m^{-e}`, computed as `exp(-e ln m)`.
    pub fn scale(self, m: usize) -> f64 {
        if self.halves == 0 {
            return 1.0;
        }
        (-self.as_f64() * (m as f64).ln()).exp()
    }
}

impl Add for Exponent {
    type Output = Exponent;
    fn add(self, o: Exponent) -> Exponent {
        Exponent::from_halves(self.halves + o.halves)
    }
}

impl Sub for Exponent {
    type Output = Exponent;
    fn sub(self, o: Exponent) -> Exponent {
        Exponent::from_halves(self.halves - o.halves)
    }
}

impl Neg for Exponent {
    type Output = Exponent;
    fn neg(self) -> Exponent {
        Exponent::from_halves(-self.halves)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.halves % 2 == 0 {
            write!(f, "{}", self.halves / 2)
        } else {
            write!(f, "{}/2", self.halves)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    Ntk,
    MuP,
    NaiveIp,
    IpLlr,
    IpBias,
    IpNonCentered,
    Hp,
    Hpz,
}

impl ParamName {
    pub const ALL: [ParamName; 8] = [
        ParamName::Ntk,
        ParamName::MuP,
        ParamName::NaiveIp,
        ParamName::IpLlr,
        ParamName::IpBias,
        ParamName::IpNonCentered,
        ParamName::Hp,
        ParamName::Hpz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Ntk => "ntk",
            ParamName::MuP => "mup",
            ParamName::NaiveIp => "naive-ip",
            ParamName::IpLlr => "ipllr",
            ParamName::IpBias => "ip-bias",
            ParamName::IpNonCentered => "ip-non-centered",
            ParamName::Hp => "hp",
            ParamName::Hpz => "hpz",
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        ParamName::ALL
            .into_iter()
            .find(|n| n.as_str() == key)
            .or(match key.as_str() {
                "μp" | "mu-p" => Some(ParamName::MuP),
                "naiveip" => Some(ParamName::NaiveIp),
                "ip-llr" => Some(ParamName::IpLlr),
                "ipbias" => Some(ParamName::IpBias),
                "ipnoncentered" => Some(ParamName::IpNonCentered),
                _ => None,
            })
            .ok_or_else(|| Error::UnknownName { kind: "parameterization", value: s.to_string() })
    }
}

/// How biases enter the pre-activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BiasMode {
    /// `B^l = m^{-a_l} b^l` at every layer.
    Scaled,
    /// `B^1 = m^{-a_1} b^1`, `B^l = b^l` for `l >= 2`.
    UnscaledAbove1,
    /// Only the first layer has a bias.
    FirstLayerOnly,
}

impl BiasMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasMode::Scaled => "scaled",
            BiasMode::UnscaledAbove1 => "unscaled-above-1",
            BiasMode::FirstLayerOnly => "first-layer-only",
        }
    }
}

impl FromStr for BiasMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scaled" => Ok(BiasMode::Scaled),
            "unscaled-above-1" => Ok(BiasMode::UnscaledAbove1),
            "first-layer-only" => Ok(BiasMode::FirstLayerOnly),
            _ => Err(Error::UnknownName { kind: "bias mode", value: s.to_string() }),
        }
    }
}

/// Weight surgery applied to intermediate layers right after the first update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Plain,
    /// Keep `m^{-1} U^l` in effective terms.
    Hp,
    /// Drop the initial weights entirely.
    Hpz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: ParamName,
    /// Number of hidden layers `L`.
    pub depth: usize,
    /// Homogeneity degree used for the first-step exponents.
    pub p: u32,
    pub activation: Activation,
    pub a: Vec<Exponent>,
    pub c_init: Vec<Exponent>,
    pub c_later: Vec<Exponent>,
    /// Separate bias exponents; `None` means the bias follows the weight.
    pub bias_c_init: Option<Vec<Exponent>>,
    pub bias_c_later: Option<Vec<Exponent>>,
    pub delta: Vec<f64>,
    pub u_shift: Vec<f64>,
    pub bias_mode: BiasMode,
    pub variant: Variant,
    /// Divide the first-layer init std by `sqrt(d+1)`.
    pub input_rescale: bool,
}

/// `gamma_l(p)` for `l = 1..=L+1`.
pub fn gamma_exponents(depth: usize, p: u32) -> Result<Vec<Exponent>> {
    if depth < 2 {
        return Err(Error::InvalidDepth(depth));
    }
    if p < 1 {
        return Err(Error::Precondition(format!("homogeneity degree p = {p} must be at least 1")));
    }
    let mut s: i64 = 0;
    let mut pk: i64 = 1;
    for _ in 0..depth {
        s = s.checked_add(pk).ok_or_else(|| Error::Precondition("exponent overflow".into()))?;
        pk = pk.saturating_mul(p as i64);
    }
    let outer = Exponent::from_halves(-(1 + s));
    let inner = Exponent::from_halves(-2 - s);
    Ok((1..=depth + 1)
        .map(|l| if l == 1 || l == depth + 1 { outer } else { inner })
        .collect())
}

fn layers(depth: usize, first: Exponent, mid: Exponent, last: Exponent) -> Vec<Exponent> {
    (1..=depth + 1)
        .map(|l| match l {
            1 => first,
            l if l == depth + 1 => last,
            _ => mid,
        })
        .collect()
}

const HALF: Exponent = Exponent::from_halves(1);
const ONE: Exponent = Exponent::integer(1);
const M_ONE: Exponent = Exponent::integer(-1);
const M_TWO: Exponent = Exponent::integer(-2);

/// Builds a named parameterization with default init scales for `activation`.
pub fn make_spec(name: ParamName, depth: usize, p: u32, activation: Activation) -> Result<ParamSpec> {
    if depth < 2 {
        return Err(Error::InvalidDepth(depth));
    }
    let ip_a = layers(depth, Exponent::ZERO, ONE, ONE);
    let naive_c = layers(depth, M_ONE, M_TWO, M_ONE);
    let mut delta = vec![activation.default_delta(); depth + 1];
    delta[depth] = 1.0;
    let mut spec = ParamSpec {
        name,
        depth,
        p,
        activation,
        a: ip_a.clone(),
        c_init: naive_c.clone(),
        c_later: naive_c.clone(),
        bias_c_init: None,
        bias_c_later: None,
        delta,
        u_shift: vec![0.0; depth + 1],
        bias_mode: BiasMode::FirstLayerOnly,
        variant: Variant::Plain,
        input_rescale: true,
    };
    match name {
        ParamName::Ntk => {
            spec.a = layers(depth, Exponent::ZERO, HALF, HALF);
            spec.c_init = vec![Exponent::ZERO; depth + 1];
            spec.c_later = spec.c_init.clone();
            spec.bias_mode = BiasMode::Scaled;
        }
        ParamName::MuP | ParamName::Hp | ParamName::Hpz => {
            spec.a = layers(depth, Exponent::ZERO, HALF, ONE);
            spec.c_init = vec![M_ONE; depth + 1];
            spec.c_later = spec.c_init.clone();
            spec.variant = match name {
                ParamName::Hp => Variant::Hp,
                ParamName::Hpz => Variant::Hpz,
                _ => Variant::Plain,
            };
        }
        ParamName::NaiveIp => {}
        ParamName::IpLlr => {
            spec.c_init = gamma_exponents(depth, p)?;
        }
        ParamName::IpBias => {
            let l_ = depth as i64;
            spec.c_init = (1..=depth + 1)
                .map(|l| match l {
                    1 => Exponent::from_halves(-(l_ + 1)),
                    l if l == depth + 1 => M_ONE,
                    l => Exponent::from_halves(-(l_ - l as i64 + 4)),
                })
                .collect();
            spec.bias_c_init = Some(
                (1..=depth + 1)
                    .map(|l| match l {
                        1 => Exponent::from_halves(-(l_ + 1)),
                        l if l == depth + 1 => Exponent::ZERO,
                        l => Exponent::from_halves(-(l_ - l as i64 + 2)),
                    })
                    .collect(),
            );
            spec.bias_c_later = Some(layers(depth, M_ONE, M_ONE, Exponent::ZERO));
            spec.bias_mode = BiasMode::UnscaledAbove1;
        }
        ParamName::IpNonCentered => {
            spec.u_shift = (1..=depth + 1).map(|l| if l == 1 { 0.0 } else { 1.0 }).collect();
            spec.bias_mode = BiasMode::Scaled;
        }
    }
    Ok(spec)
}

impl ParamSpec {
    pub fn layer_count(&self) -> usize {
        self.depth + 1
    }

    fn check_layer(&self, layer: usize) -> Result<usize> {
        if layer == 0 || layer > self.depth + 1 {
            Err(Error::LayerOutOfRange { layer, max: self.depth + 1 })
        } else {
            Ok(layer - 1)
        }
    }

    /// `a_l` for `l` in `1..=L+1`.
    pub fn scale_exponent(&self, layer: usize) -> Result<Exponent> {
        Ok(self.a[self.check_layer(layer)?])
    }

    /// The learning-rate exponent of `layer` used for the update at step `t`.
    pub fn lr_exponent(&self, layer: usize, t: u64, slot: Slot) -> Result<Exponent> {
        let i = self.check_layer(layer)?;
        let (w, b) = if t == 0 {
            (&self.c_init, &self.bias_c_init)
        } else {
            (&self.c_later, &self.bias_c_later)
        };
        Ok(match (slot, b) {
            (Slot::Bias, Some(b)) => b[i],
            _ => w[i],
        })
    }

    /// Whether layer `l` carries a bias vector.
    pub fn has_bias(&self, layer: usize) -> bool {
        layer == 1 || self.bias_mode != BiasMode::FirstLayerOnly
    }

    /// Factor multiplying the raw bias of `layer` in the pre-activation.
    pub fn bias_factor(&self, layer: usize, m: usize) -> f64 {
        match self.bias_mode {
            BiasMode::UnscaledAbove1 if layer >= 2 => 1.0,
            _ => self.a[layer - 1].scale(m),
        }
    }

    /// Checks the structural invariants shared by every parameterization.
    pub fn validate(&self) -> Result<()> {
        let n = self.depth + 1;
        if self.depth < 2 {
            return Err(Error::InvalidDepth(self.depth));
        }
        let lens = [self.a.len(), self.c_init.len(), self.c_later.len(), self.delta.len(), self.u_shift.len()];
        let bias_lens = [&self.bias_c_init, &self.bias_c_later];
        if lens.iter().any(|&k| k != n) || bias_lens.iter().any(|b| b.as_ref().is_some_and(|v| v.len() != n)) {
            return Err(Error::Precondition(format!("exponent and scale vectors must have length {n}")));
        }
        if let Some(i) = self.delta.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::NonPositive { index: i + 1, value: self.delta[i] });
        }
        Ok(())
    }

    pub fn with_delta(mut self, delta: Vec<f64>) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_bias_mode(mut self, mode: BiasMode) -> Self {
        self.bias_mode = mode;
        self
    }

    pub fn with_input_rescale(mut self, on: bool) -> Self {
        self.input_rescale = on;
        self
    }

    pub fn with_u_shift(mut self, u: Vec<f64>) -> Self {
        self.u_shift = u;
        self
    }
}
