//! Experiment configuration: a TOML file with `[run]`, `[model]`, `[data]`,
//! `[train]` and `[probe]` sections. Every key is optional; missing keys are
//! filled from the subcommand preset and then from the training defaults
//! (L = 6, m = 1024, eta = 0.01, B = 512, five seeds, cross-entropy).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::SyntheticKind;
use crate::error::{Error, FieldError, Result};
use crate::net::Loss;
use crate::params::{BiasMode, ParamName};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subcommand {
    Triviality,
    LlrEscape,
    Scaling,
    Rank,
    Equivalence,
    HpzConvergence,
    Collapse,
    IpBiasIndependence,
    OracleCompare,
    Train,
    Gradcheck,
}

impl Subcommand {
    pub const ALL: [Subcommand; 11] = [
        Subcommand::Triviality,
        Subcommand::LlrEscape,
        Subcommand::Scaling,
        Subcommand::Rank,
        Subcommand::Equivalence,
        Subcommand::HpzConvergence,
        Subcommand::Collapse,
        Subcommand::IpBiasIndependence,
        Subcommand::OracleCompare,
        Subcommand::Train,
        Subcommand::Gradcheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Triviality => "triviality",
            Subcommand::LlrEscape => "llr-escape",
            Subcommand::Scaling => "scaling",
            Subcommand::Rank => "rank",
            Subcommand::Equivalence => "equivalence",
            Subcommand::HpzConvergence => "hpz-convergence",
            Subcommand::Collapse => "collapse",
            Subcommand::IpBiasIndependence => "ip-bias-independence",
            Subcommand::OracleCompare => "oracle-compare",
            Subcommand::Train => "train",
            Subcommand::Gradcheck => "gradcheck",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| Error::UnknownName { kind: "subcommand", value: s.to_string() })
    }
}

/// Metric names understood by the probe list.
pub const KNOWN_PROBES: [&str; 12] = [
    "abs-f",
    "loss",
    "accuracy",
    "h-rms",
    "rank",
    "collapse",
    "independence",
    "equivalence",
    "hpz-diff",
    "oracle",
    "gradcheck",
    "tilde-norms",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRun {
    pub subcommand: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub name: Option<String>,
    /// Second parameterization for two-sided probes.
    pub compare: Option<String>,
    pub activation: Option<String>,
    #[serde(rename = "L")]
    pub depth: Option<usize>,
    pub p: Option<u32>,
    pub widths: Option<Vec<usize>>,
    pub bias_mode: Option<String>,
    pub u_shift: Option<f64>,
    pub input_rescale: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawData {
    /// `synthetic` or `mnist`.
    pub kind: Option<String>,
    pub task: Option<String>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub images: Option<String>,
    pub labels: Option<String>,
    pub normalization: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    pub eta: Option<f64>,
    pub batch: Option<usize>,
    pub steps: Option<usize>,
    pub loss: Option<String>,
    pub calibrate: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProbe {
    pub list: Option<Vec<String>>,
    pub times: Option<Vec<u64>>,
    pub layer: Option<usize>,
    pub n_mc: Option<usize>,
    pub samples: Option<usize>,
    pub eps: Option<f64>,
    pub params: Option<usize>,
    pub activations: Option<Vec<String>>,
}

/// The file as written: every field optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub run: RawRun,
    #[serde(default)]
    pub model: RawModel,
    #[serde(default)]
    pub data: RawData,
    #[serde(default)]
    pub train: RawTrain,
    #[serde(default)]
    pub probe: RawProbe,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            Error::Config(vec![FieldError { field: "<file>".into(), message: e.message().to_string() }])
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(mut self, over: &RawConfig) -> Self {
        macro_rules! take {
            ($($sec:ident . $f:ident),* $(,)?) => {
                $( if over.$sec.$f.is_some() { self.$sec.$f = over.$sec.$f.clone(); } )*
            };
        }
        take!(
            run.subcommand, run.seeds, run.out, run.threads,
            model.name, model.compare, model.activation, model.depth, model.p, model.widths,
            model.bias_mode, model.u_shift, model.input_rescale,
            data.kind, data.task, data.d, data.n, data.images, data.labels, data.normalization,
            train.eta, train.batch, train.steps, train.loss, train.calibrate,
            probe.list, probe.times, probe.layer, probe.n_mc, probe.samples, probe.eps, probe.params,
            probe.activations,
        );
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Synthetic { kind: SyntheticKind, d: usize, n: usize },
    Mnist { images: PathBuf, labels: PathBuf, limit: Option<usize> },
}

/// Validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub threads: usize,
    pub param: ParamName,
    pub compare: Option<ParamName>,
    pub activation: Activation,
    pub depth: usize,
    pub p: u32,
    pub widths: Vec<usize>,
    pub bias_mode: Option<BiasMode>,
    pub u_shift: Option<f64>,
    pub input_rescale: bool,
    pub data: DataSpec,
    pub eta: f64,
    pub batch: usize,
    pub steps: usize,
    pub loss: Loss,
    pub calibrate: bool,
    pub probes: Vec<String>,
    pub times: Vec<u64>,
    pub layer: usize,
    pub n_mc: usize,
    pub samples: usize,
    pub eps: f64,
    pub grad_params: usize,
    pub activations: Vec<Activation>,
}

/// Base learning rate of the single-sample theory probes.
pub const THEORY_ETA: f64 = 10.0;
/// Smaller rates for multi-step probes, where `THEORY_ETA` overflows at
/// small widths.
pub const MULTI_STEP_ETA: f64 = 1.0;
pub const HPZ_ETA: f64 = 5.0;

fn strs(v: &[&str]) -> Option<Vec<String>> {
    Some(v.iter().map(|s| s.to_string()).collect())
}

/// Subcommand-specific defaults, applied beneath the user's file.
pub fn preset(cmd: Subcommand) -> RawConfig {
    let mut r = RawConfig::default();
    r.run.subcommand = Some(cmd.as_str().into());
    r.run.out = Some(format!("out/{cmd}"));
    let sweep = Some(vec![64, 256, 1024, 4096]);
    let theory = |r: &mut RawConfig| {
        r.model.depth = Some(3);
        r.model.activation = Some("relu".into());
        r.data.kind = Some("synthetic".into());
        r.data.task = Some("two-class".into());
        r.data.d = Some(16);
        r.data.n = Some(64);
        r.train.eta = Some(THEORY_ETA);
        r.train.batch = Some(1);
        r.train.loss = Some("squared".into());
        r.run.seeds = Some((0..5).collect());
    };
    match cmd {
        Subcommand::Triviality => {
            theory(&mut r);
            r.model.name = Some("naive-ip".into());
            r.model.widths = sweep;
            r.train.eta = Some(MULTI_STEP_ETA);
            r.train.steps = Some(30);
            r.probe.times = Some(vec![1, 10, 30]);
            r.probe.list = strs(&["abs-f"]);
        }
        Subcommand::LlrEscape => {
            theory(&mut r);
            r.model.name = Some("ipllr".into());
            r.model.compare = Some("naive-ip".into());
            r.model.widths = sweep;
            r.train.steps = Some(1);
            r.probe.times = Some(vec![1]);
            r.probe.list = strs(&["abs-f"]);
        }
        Subcommand::Scaling => {
            theory(&mut r);
            r.model.name = Some("naive-ip".into());
            r.model.widths = sweep;
            r.train.steps = Some(0);
            r.probe.list = strs(&["h-rms"]);
        }
        Subcommand::Rank => {
            r.model.name = Some("ipllr".into());
            r.model.compare = Some("mup".into());
            r.model.depth = Some(6);
            r.model.activation = Some("relu".into());
            r.model.widths = Some(vec![512]);
            r.data.kind = Some("mnist".into());
            r.train.steps = Some(1);
            r.train.calibrate = Some(true);
            r.train.loss = Some("cross-entropy".into());
            r.probe.samples = Some(5000);
            r.probe.layer = Some(6);
            r.probe.list = strs(&["rank"]);
            r.run.seeds = Some(vec![0]);
        }
        Subcommand::Equivalence => {
            theory(&mut r);
            r.model.name = Some("ipllr".into());
            r.model.compare = Some("hp".into());
            r.model.widths = Some(vec![256]);
            r.train.eta = Some(MULTI_STEP_ETA);
            r.train.steps = Some(10);
            r.run.seeds = Some(vec![0]);
            r.probe.list = strs(&["equivalence"]);
        }
        Subcommand::HpzConvergence => {
            theory(&mut r);
            r.model.name = Some("ipllr".into());
            r.model.compare = Some("hpz".into());
            r.model.widths = sweep;
            r.train.eta = Some(HPZ_ETA);
            r.train.steps = Some(3);
            r.probe.times = Some(vec![3]);
            r.probe.list = strs(&["hpz-diff"]);
        }
        Subcommand::Collapse => {
            theory(&mut r);
            r.model.name = Some("ip-non-centered".into());
            r.model.depth = Some(4);
            r.model.widths = Some(vec![64, 128, 256, 512, 1024, 2048]);
            r.train.steps = Some(1);
            r.probe.layer = Some(3);
            r.probe.list = strs(&["collapse"]);
        }
        Subcommand::IpBiasIndependence => {
            theory(&mut r);
            r.model.name = Some("ip-bias".into());
            r.model.widths = sweep;
            r.train.steps = Some(0);
            r.probe.list = strs(&["independence"]);
        }
        Subcommand::OracleCompare => {
            theory(&mut r);
            r.model.name = Some("ipllr".into());
            r.model.widths = Some(vec![4096]);
            r.train.steps = Some(1);
            r.probe.n_mc = Some(1_000_000);
            r.run.seeds = Some((0..20).collect());
            r.probe.list = strs(&["oracle"]);
        }
        Subcommand::Train => {
            r.data.kind = Some("mnist".into());
            r.train.steps = Some(10);
            r.train.calibrate = Some(true);
            r.probe.list = strs(&["loss", "accuracy"]);
        }
        Subcommand::Gradcheck => {
            theory(&mut r);
            r.model.name = Some("mup".into());
            r.model.widths = Some(vec![32]);
            r.probe.eps = Some(1e-5);
            r.probe.params = Some(256);
            r.probe.activations = strs(&["tanh", "relu2"]);
            r.probe.list = strs(&["gradcheck"]);
            r.run.seeds = Some(vec![0]);
        }
    }
    r
}

/// Training defaults used when neither the file nor the preset sets a field.
pub fn base_defaults() -> RawConfig {
    let mut r = RawConfig::default();
    r.run.seeds = Some((0..5).collect());
    r.run.out = Some("out".into());
    r.run.threads = Some(0);
    r.model.name = Some("ipllr".into());
    r.model.activation = Some("relu".into());
    r.model.depth = Some(6);
    r.model.p = Some(1);
    r.model.widths = Some(vec![1024]);
    r.model.input_rescale = Some(true);
    r.data.kind = Some("mnist".into());
    r.data.task = Some("two-class".into());
    r.data.d = Some(16);
    r.data.n = Some(64);
    r.data.images = Some("data/mnist-subset/images-idx3-ubyte.gz".into());
    r.data.labels = Some("data/mnist-subset/labels-idx1-ubyte.gz".into());
    r.data.normalization = Some("unit-interval".into());
    r.train.eta = Some(0.01);
    r.train.batch = Some(512);
    r.train.steps = Some(10);
    r.train.loss = Some("cross-entropy".into());
    r.train.calibrate = Some(false);
    r.probe.list = Some(vec![]);
    r.probe.times = Some(vec![]);
    r.probe.layer = Some(0);
    r.probe.n_mc = Some(1_000_000);
    r.probe.samples = Some(5000);
    r.probe.eps = Some(1e-5);
    r.probe.params = Some(256);
    r
}

/// Layers `base <- preset <- user`; the subcommand in the user file, if
/// any, must agree with `cmd`.
pub fn resolve(cmd: Subcommand, user: &RawConfig) -> RawConfig {
    base_defaults().overlay(&preset(cmd)).overlay(user)
}

/// Normalizes a fully layered raw config, collecting every field error.
pub fn validate(raw: &RawConfig) -> Result<ExperimentConfig> {
    let mut errs: Vec<FieldError> = Vec::new();
    let mut bad = |field: &str, message: String| errs.push(FieldError { field: field.into(), message });
    macro_rules! need {
        ($e:expr, $field:literal) => {
            match $e.clone() {
                Some(v) => Some(v),
                None => {
                    bad($field, "missing".into());
                    None
                }
            }
        };
    }
    macro_rules! parse {
        ($e:expr, $field:literal, $t:ty) => {
            match $e.as_deref().map(<$t>::from_str) {
                Some(Ok(v)) => Some(v),
                Some(Err(e)) => {
                    bad($field, e.to_string());
                    None
                }
                None => {
                    bad($field, "missing".into());
                    None
                }
            }
        };
    }
    let subcommand = parse!(raw.run.subcommand, "run.subcommand", Subcommand);
    let seeds = need!(raw.run.seeds, "run.seeds");
    if seeds.as_ref().is_some_and(|s| s.is_empty()) {
        bad("run.seeds", "must not be empty".into());
    }
    let out = need!(raw.run.out, "run.out");
    let threads = need!(raw.run.threads, "run.threads");
    let param = parse!(raw.model.name, "model.name", ParamName);
    let compare = match raw.model.compare.as_deref().map(ParamName::from_str) {
        Some(Ok(v)) => Some(v),
        Some(Err(e)) => {
            bad("model.compare", e.to_string());
            None
        }
        None => None,
    };
    let activation = parse!(raw.model.activation, "model.activation", Activation);
    let depth = need!(raw.model.depth, "model.L");
    if depth.is_some_and(|l| l < 2) {
        bad("model.L", format!("must be at least 2, got {}", depth.unwrap_or(0)));
    }
    let p = need!(raw.model.p, "model.p");
    if p == Some(0) {
        bad("model.p", "must be at least 1".into());
    }
    let mut widths = need!(raw.model.widths, "model.widths").unwrap_or_default();
    if widths.is_empty() {
        bad("model.widths", "must not be empty".into());
    }
    if widths.contains(&0) {
        bad("model.widths", "widths must be positive".into());
    }
    widths.sort_unstable();
    widths.dedup();
    let bias_mode = match raw.model.bias_mode.as_deref().map(BiasMode::from_str) {
        Some(Ok(v)) => Some(v),
        Some(Err(e)) => {
            bad("model.bias_mode", e.to_string());
            None
        }
        None => None,
    };
    let input_rescale = raw.model.input_rescale.unwrap_or(true);
    let data = match raw.data.kind.as_deref() {
        Some("synthetic") => {
            let kind = parse!(raw.data.task, "data.task", SyntheticKind);
            let d = need!(raw.data.d, "data.d");
            let n = need!(raw.data.n, "data.n");
            if d == Some(0) || n == Some(0) {
                bad("data", "d and n must be positive".into());
            }
            match (kind, d, n) {
                (Some(kind), Some(d), Some(n)) => Some(DataSpec::Synthetic { kind, d, n }),
                _ => None,
            }
        }
        Some("mnist") => {
            if raw.data.normalization.as_deref().is_some_and(|n| n != "unit-interval") {
                bad("data.normalization", "only unit-interval is supported for mnist".into());
            }
            match (need!(raw.data.images, "data.images"), need!(raw.data.labels, "data.labels")) {
                (Some(i), Some(l)) => Some(DataSpec::Mnist { images: i.into(), labels: l.into(), limit: None }),
                _ => None,
            }
        }
        Some(other) => {
            bad("data.kind", format!("unknown dataset kind `{other}`"));
            None
        }
        None => {
            bad("data.kind", "missing".into());
            None
        }
    };
    let eta = need!(raw.train.eta, "train.eta");
    if eta.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
        bad("train.eta", "must be positive and finite".into());
    }
    let batch = need!(raw.train.batch, "train.batch");
    if batch == Some(0) {
        bad("train.batch", "must be positive".into());
    }
    let steps = need!(raw.train.steps, "train.steps");
    let loss = parse!(raw.train.loss, "train.loss", Loss);
    let calibrate = raw.train.calibrate.unwrap_or(false);
    let probes = need!(raw.probe.list, "probe.list").unwrap_or_default();
    for p in &probes {
        if !KNOWN_PROBES.contains(&p.as_str()) {
            bad("probe.list", format!("unknown probe `{p}`"));
        }
    }
    let mut times = need!(raw.probe.times, "probe.times").unwrap_or_default();
    times.sort_unstable();
    times.dedup();
    if let (Some(s), Some(&t)) = (steps, times.last()) {
        if t as usize > s {
            bad("probe.times", format!("time {t} exceeds train.steps = {s}"));
        }
    }
    let layer = need!(raw.probe.layer, "probe.layer");
    if let (Some(l), Some(d)) = (layer, depth) {
        if l > d + 1 {
            bad("probe.layer", format!("layer {l} exceeds L+1 = {}", d + 1));
        }
    }
    let n_mc = need!(raw.probe.n_mc, "probe.n_mc");
    let samples = need!(raw.probe.samples, "probe.samples");
    let eps = need!(raw.probe.eps, "probe.eps");
    if eps.is_some_and(|e| e.is_nan() || e <= 0.0) {
        bad("probe.eps", "must be positive".into());
    }
    let grad_params = need!(raw.probe.params, "probe.params");
    let mut activations = Vec::new();
    for a in raw.probe.activations.clone().unwrap_or_default() {
        match Activation::from_str(&a) {
            Ok(v) => activations.push(v),
            Err(e) => bad("probe.activations", e.to_string()),
        }
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let activation = activation.expect("checked");
    if activations.is_empty() {
        activations.push(activation);
    }
    Ok(ExperimentConfig {
        subcommand: subcommand.expect("checked"),
        seeds: seeds.expect("checked"),
        out: out.expect("checked").into(),
        threads: threads.expect("checked"),
        param: param.expect("checked"),
        compare,
        activation,
        depth: depth.expect("checked"),
        p: p.expect("checked"),
        widths,
        bias_mode,
        u_shift: raw.model.u_shift,
        input_rescale,
        data: data.expect("checked"),
        eta: eta.expect("checked"),
        batch: batch.expect("checked"),
        steps: steps.expect("checked"),
        loss: loss.expect("checked"),
        calibrate,
        probes,
        times,
        layer: layer.expect("checked"),
        n_mc: n_mc.expect("checked"),
        samples: samples.expect("checked"),
        eps: eps.expect("checked"),
        grad_params: grad_params.expect("checked"),
        activations,
    })
}

impl ExperimentConfig {
    /// Echo as a raw config; `validate(&cfg.to_raw())` gives back `cfg`.
    pub fn to_raw(&self) -> RawConfig {
        let mut r = RawConfig::default();
        r.run.subcommand = Some(self.subcommand.as_str().into());
        r.run.seeds = Some(self.seeds.clone());
        r.run.out = Some(self.out.display().to_string());
        r.run.threads = Some(self.threads);
        r.model.name = Some(self.param.as_str().into());
        r.model.compare = self.compare.map(|c| c.as_str().into());
        r.model.activation = Some(self.activation.to_string());
        r.model.depth = Some(self.depth);
        r.model.p = Some(self.p);
        r.model.widths = Some(self.widths.clone());
        r.model.bias_mode = self.bias_mode.map(|b| b.as_str().into());
        r.model.u_shift = self.u_shift;
        r.model.input_rescale = Some(self.input_rescale);
        match &self.data {
            DataSpec::Synthetic { kind, d, n } => {
                r.data.kind = Some("synthetic".into());
                r.data.task = Some(
                    match kind {
                        SyntheticKind::GaussRegression => "gauss-regression",
                        SyntheticKind::TwoClass => "two-class",
                    }
                    .into(),
                );
                r.data.d = Some(*d);
                r.data.n = Some(*n);
            }
            DataSpec::Mnist { images, labels, .. } => {
                r.data.kind = Some("mnist".into());
                r.data.images = Some(images.display().to_string());
                r.data.labels = Some(labels.display().to_string());
                r.data.normalization = Some("unit-interval".into());
            }
        }
        r.train.eta = Some(self.eta);
        r.train.batch = Some(self.batch);
        r.train.steps = Some(self.steps);
        r.train.loss = Some(self.loss.as_str().into());
        r.train.calibrate = Some(self.calibrate);
        r.probe.list = Some(self.probes.clone());
        r.probe.times = Some(self.times.clone());
        r.probe.layer = Some(self.layer);
        r.probe.n_mc = Some(self.n_mc);
        r.probe.samples = Some(self.samples);
        r.probe.eps = Some(self.eps);
        r.probe.params = Some(self.grad_params);
        r.probe.activations = Some(self.activations.iter().map(|a| a.to_string()).collect());
        r
    }

    /// Resolves presets and validates in one go.
    pub fn for_subcommand(cmd: Subcommand, user: &RawConfig) -> Result<Self> {
        if let Some(s) = &user.run.subcommand {
            if s.as_str() != cmd.as_str() {
                return Err(Error::Config(vec![FieldError {
                    field: "run.subcommand".into(),
                    message: format!("file says `{s}` but `{cmd}` was requested"),
                }]));
            }
        }
        validate(&resolve(cmd, user))
    }
}
