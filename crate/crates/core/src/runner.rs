//! Runs one experiment: expands a validated config into
//! (parameterization, width, seed) cells, evaluates them (in parallel when
//! the `parallel` feature is on), and collects CSV rows and verdicts in a
//! fixed order so that output bytes depend only on the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{DataSpec, ExperimentConfig, RawConfig, Subcommand};
use crate::data::{batches, load_mnist_idx, synthetic_task, Dataset};
use crate::error::{Error, Result};
use crate::net::{loss_eval, Network, Sample};
use crate::oracle::{ipllr_t1_limit, OracleInput};
use crate::params::{make_spec, ParamName, ParamSpec, Variant};
use crate::probes::{
    collapse_statistic, finite_width_equivalence, gradient_check, input_independence_statistic, numerical_rank,
    TrainRoutine,
};
use crate::report::{write_rows, ProbeReport, Row, Verdict};
use crate::Activation;

/// Rows of one CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTable {
    pub probe: String,
    pub rows: Vec<Row>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run_id: String,
    pub tables: Vec<ProbeTable>,
    pub reports: Vec<ProbeReport>,
    pub verdicts: Vec<Verdict>,
    pub wall_seconds: f64,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// 0 when every verdict passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// Exit status for a run that did not produce verdicts: 3 for numeric
/// failures, 2 for everything else (bad config, unreadable data).
pub fn error_exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

/// FNV-1a over the config echo, ignoring output path and thread count.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let mut raw = cfg.to_raw();
    raw.run.out = None;
    raw.run.threads = None;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in raw.to_toml().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Contents of `manifest.toml`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub version: String,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub files: Vec<String>,
    pub verdicts: Vec<ManifestVerdict>,
    pub config: RawConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestVerdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Precondition(format!("manifest: {}", e.message())))
    }
}

/// Writes one CSV per probe and `manifest.toml` into `cfg.out`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput, started_unix: u64) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    let mut files = Vec::new();
    for t in &out.tables {
        let name = format!("{}.csv", t.probe);
        write_rows(fs::File::create(cfg.out.join(&name))?, &t.rows)?;
        files.push(name);
    }
    let manifest = Manifest {
        run_id: out.run_id.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        wall_seconds: out.wall_seconds,
        files,
        verdicts: out
            .verdicts
            .iter()
            .map(|v| ManifestVerdict { name: v.name.clone(), passed: v.passed, detail: v.detail.clone() })
            .collect(),
        config: cfg.to_raw(),
    };
    let path = cfg.out.join("manifest.toml");
    fs::write(&path, toml::to_string(&manifest).expect("manifest serializes"))?;
    Ok(path)
}

/// Runs and writes outputs; returns the run and the manifest path.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(RunOutput, PathBuf)> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let out = run(cfg)?;
    let path = write_outputs(cfg, &out, started)?;
    Ok((out, path))
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        pool.install(|| run_inner(cfg))
    }
    #[cfg(not(feature = "parallel"))]
    run_inner(cfg)
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let mut ctx = Ctx { cfg, run_id: run_id(cfg), rows: Vec::new(), reports: Vec::new(), verdicts: Vec::new() };
    match cfg.subcommand {
        Subcommand::Triviality => triviality(&mut ctx)?,
        Subcommand::LlrEscape => llr_escape(&mut ctx)?,
        Subcommand::Scaling => scaling(&mut ctx)?,
        Subcommand::Rank => rank(&mut ctx)?,
        Subcommand::Equivalence => equivalence(&mut ctx)?,
        Subcommand::HpzConvergence => hpz_convergence(&mut ctx)?,
        Subcommand::Collapse => collapse(&mut ctx)?,
        Subcommand::IpBiasIndependence => ip_bias_independence(&mut ctx)?,
        Subcommand::OracleCompare => oracle_compare(&mut ctx)?,
        Subcommand::Train => train(&mut ctx)?,
        Subcommand::Gradcheck => gradcheck(&mut ctx)?,
    }
    let Ctx { run_id, rows, reports, verdicts, .. } = ctx;
    Ok(RunOutput {
        run_id,
        tables: vec![ProbeTable { probe: cfg.subcommand.as_str().to_string(), rows }],
        reports,
        verdicts,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    run_id: String,
    rows: Vec<Row>,
    reports: Vec<ProbeReport>,
    verdicts: Vec<Verdict>,
}

impl Ctx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn row(&mut self, param: ParamName, act: &Activation, m: usize, layer: Option<usize>, t: Option<u64>, metric: &str, value: f64) {
        self.rows.push(Row {
            run_id: self.run_id.clone(),
            probe: self.cfg.subcommand.as_str().to_string(),
            parameterization: param.as_str().to_string(),
            activation: act.to_string(),
            m,
            depth: self.cfg.depth,
            layer,
            t,
            metric: metric.to_string(),
            value,
        });
    }

    /// Fit rows use `m = 0`.
    fn fit(&mut self, param: ParamName, layer: Option<usize>, t: Option<u64>, name: &str, values: Vec<f64>) -> Result<ProbeReport> {
        let report = ProbeReport::new(name, self.cfg.widths.clone(), values)?;
        if let Some(fit) = report.fit {
            let act = self.cfg.activation;
            self.row(param, &act, 0, layer, t, "slope", fit.slope);
            self.row(param, &act, 0, layer, t, "intercept", fit.intercept);
            self.row(param, &act, 0, layer, t, "residual", fit.residual);
        }
        Ok(report)
    }

    fn verdict(&mut self, mut report: Option<ProbeReport>, v: Verdict) {
        if let Some(r) = report.as_mut() {
            r.verdict = Some(v.clone());
        }
        if let Some(r) = report {
            self.reports.push(r);
        }
        self.verdicts.push(v);
    }
}

fn in_cell(param: ParamName, m: usize, seed: u64, t: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::InCell { .. } => e,
        e => Error::InCell { parameterization: param.as_str().to_string(), m, seed, t, source: Box::new(e) },
    }
}

/// Evaluates `f` on every `(width, seed)` cell; result `[i][j]` belongs to
/// `widths[i]`, `seeds[j]`.
fn cells<T, F>(widths: &[usize], seeds: &[u64], f: F) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync + Send,
{
    let grid: Vec<(usize, u64)> = widths.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    #[cfg(feature = "parallel")]
    let flat: Vec<Result<T>> = {
        use rayon::prelude::*;
        grid.par_iter().map(|&(m, s)| f(m, s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let flat: Vec<Result<T>> = grid.iter().map(|&(m, s)| f(m, s)).collect();
    let mut out: Vec<Vec<T>> = widths.iter().map(|_| Vec::with_capacity(seeds.len())).collect();
    for (k, r) in flat.into_iter().enumerate() {
        out[k / seeds.len()].push(r?);
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation divided by `sqrt(n)`.
fn std_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn ok_mark(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

/// Spec for `name` with the config's structural overrides.
pub fn build_spec(cfg: &ExperimentConfig, name: ParamName, act: Activation) -> Result<ParamSpec> {
    let mut spec = make_spec(name, cfg.depth, cfg.p, act)?.with_input_rescale(cfg.input_rescale);
    if name == cfg.param {
        if let Some(b) = cfg.bias_mode {
            spec = spec.with_bias_mode(b);
        }
        if let Some(u) = cfg.u_shift {
            spec = spec.with_u_shift((1..=cfg.depth + 1).map(|l| if l == 1 { 0.0 } else { u }).collect());
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn resolve_path(p: &Path) -> PathBuf {
    if p.is_relative() && !p.exists() {
        let alt = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(p);
        if alt.exists() {
            return alt;
        }
    }
    p.to_path_buf()
}

/// Loads the configured dataset; synthetic data is drawn from the first seed.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSpec::Synthetic { kind, d, n } => synthetic_task(*d, *n, cfg.seeds[0], *kind),
        DataSpec::Mnist { images, labels, limit } => {
            let ds = load_mnist_idx(&resolve_path(images), &resolve_path(labels))?;
            Ok(match limit {
                Some(n) => ds.head(*n),
                None => ds,
            })
        }
    }
}

/// Index batches for `steps` updates: with `B = 1` sample `t mod n` feeds
/// step `t`; larger batches come from seeded per-epoch shuffles.
fn schedule(n: usize, batch: usize, seed: u64, steps: usize) -> Result<Vec<Vec<usize>>> {
    if batch == 1 {
        return Ok((0..steps).map(|t| vec![t % n]).collect());
    }
    let per_epoch = n / batch.max(1);
    let epochs = if per_epoch == 0 { 1 } else { steps.div_ceil(per_epoch).max(1) };
    let mut all = batches(n, batch, seed, epochs.max(if steps == 0 { 0 } else { 1 }))?;
    all.truncate(steps);
    Ok(all)
}

/// The held-out evaluation input: the last row of the dataset.
fn probe_input(ds: &Dataset) -> &DVector<f64> {
    &ds.inputs[ds.len() - 1]
}

fn outputs(ds: &Dataset) -> usize {
    ds.classes.unwrap_or(1)
}

/// Trains one network, calling `observe(t, net)` at `t = 0` and after each step.
fn train_observed<F>(spec: &ParamSpec, cfg: &ExperimentConfig, ds: &Dataset, m: usize, seed: u64, steps: usize, mut observe: F) -> Result<Network>
where
    F: FnMut(u64, &Network) -> Result<()>,
{
    let ctx = |t| in_cell(spec.name, m, seed, t);
    let mut net = Network::init(spec, m, ds.d, outputs(ds), seed).map_err(ctx(0))?;
    observe(0, &net).map_err(ctx(0))?;
    let plan = schedule(ds.len(), cfg.batch, seed, steps)?;
    for (t, idx) in plan.iter().enumerate() {
        let batch = ds.samples(idx);
        net.sgd_step(&batch, cfg.eta, cfg.loss, None).map_err(ctx(t as u64))?;
        observe(t as u64 + 1, &net).map_err(ctx(t as u64 + 1))?;
    }
    Ok(net)
}

/// `|f_t(xi)|` (Euclidean norm over outputs) at each requested time.
fn abs_f_at(spec: &ParamSpec, cfg: &ExperimentConfig, ds: &Dataset, m: usize, seed: u64, times: &[u64]) -> Result<Vec<f64>> {
    let xi = probe_input(ds).clone();
    let last = times.iter().copied().max().unwrap_or(0) as usize;
    let mut out = vec![f64::NAN; times.len()];
    train_observed(spec, cfg, ds, m, seed, last, |t, net| {
        for (k, &tt) in times.iter().enumerate() {
            if tt == t {
                out[k] = net.forward(&xi)?.f.norm();
            }
        }
        Ok(())
    })?;
    Ok(out)
}

fn times_or_steps(cfg: &ExperimentConfig) -> Vec<u64> {
    if cfg.times.is_empty() {
        vec![cfg.steps as u64]
    } else {
        cfg.times.clone()
    }
}

fn triviality(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let times = times_or_steps(cfg);
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| abs_f_at(&spec, cfg, &ds, m, s, &times))?;
    for (k, &t) in times.iter().enumerate() {
        let mut means = Vec::new();
        for (i, &m) in cfg.widths.iter().enumerate() {
            let vals: Vec<f64> = grid[i].iter().map(|v| v[k]).collect();
            for (j, &s) in cfg.seeds.iter().enumerate() {
                ctx.row(cfg.param, &cfg.activation, m, None, Some(t), &format!("abs_f:seed={s}"), vals[j]);
            }
            let mu = mean(&vals);
            ctx.row(cfg.param, &cfg.activation, m, None, Some(t), "abs_f_mean", mu);
            means.push(mu);
        }
        let report = ctx.fit(cfg.param, None, Some(t), "abs-f", means)?;
        let v = match report.fit {
            Some(fit) => {
                let ratio = report.terminal_ratio();
                let pass = fit.slope <= -0.3 && ratio <= 0.1;
                Verdict::new(
                    format!("triviality t={t}"),
                    pass,
                    format!("slope {:.4} (<= -0.3), terminal ratio {:.4} (<= 0.1): {}", fit.slope, ratio, ok_mark(pass)),
                )
            }
            None => Verdict::new(format!("triviality t={t}"), false, "need at least three widths"),
        };
        ctx.verdict(Some(report), v);
    }
    Ok(())
}

fn llr_escape(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let t = times_or_steps(cfg)[0];
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| abs_f_at(&spec, cfg, &ds, m, s, &[t]))?;
    let mut means = Vec::new();
    for (i, &m) in cfg.widths.iter().enumerate() {
        let vals: Vec<f64> = grid[i].iter().map(|v| v[0]).collect();
        for (j, &s) in cfg.seeds.iter().enumerate() {
            ctx.row(cfg.param, &cfg.activation, m, None, Some(t), &format!("abs_f:seed={s}"), vals[j]);
        }
        let mu = mean(&vals);
        ctx.row(cfg.param, &cfg.activation, m, None, Some(t), "abs_f_mean", mu);
        means.push(mu);
    }
    let mmax = *cfg.widths.last().expect("widths non-empty");
    let top = *means.last().expect("widths non-empty");
    let report = ctx.fit(cfg.param, None, Some(t), "abs-f", means)?;
    let mut pass = true;
    let mut detail = String::new();
    match report.fit {
        Some(fit) => {
            let ok = fit.slope.abs() <= 0.15;
            pass &= ok;
            detail += &format!("slope {:.4} (|.| <= 0.15): {}", fit.slope, ok_mark(ok));
        }
        None => {
            pass = false;
            detail += "need at least three widths";
        }
    }
    if let Some(other) = cfg.compare {
        let ospec = build_spec(cfg, other, cfg.activation)?;
        let ogrid = cells(&[mmax], &cfg.seeds, |m, s| abs_f_at(&ospec, cfg, &ds, m, s, &[t]))?;
        let ovals: Vec<f64> = ogrid[0].iter().map(|v| v[0]).collect();
        for (j, &s) in cfg.seeds.iter().enumerate() {
            ctx.row(other, &cfg.activation, mmax, None, Some(t), &format!("abs_f:seed={s}"), ovals[j]);
        }
        let omu = mean(&ovals);
        ctx.row(other, &cfg.activation, mmax, None, Some(t), "abs_f_mean", omu);
        let ratio = top / omu;
        ctx.row(cfg.param, &cfg.activation, mmax, None, Some(t), &format!("ratio_over_{}", other.as_str()), ratio);
        let ok = ratio >= 10.0;
        pass &= ok;
        detail += &format!("; {} / {} at m={mmax}: {:.3e} (>= 10): {}", cfg.param, other, ratio, ok_mark(ok));
    }
    ctx.verdict(Some(report), Verdict::new(format!("escape t={t}"), pass, detail));
    Ok(())
}

/// Predicted `h`-RMS exponent of Naive-IP at initialization with a
/// `p`-homogeneous activation: `e_1 = 0`, `e_{l+1} = p e_l - 1/2`.
pub fn naive_ip_h_exponents(depth: usize, p: u32) -> Vec<f64> {
    let mut e = vec![0.0];
    for _ in 1..depth {
        let prev = *e.last().expect("non-empty");
        e.push(p as f64 * prev - 0.5);
    }
    e
}

fn scaling(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let xi = probe_input(&ds).clone();
    let steps = cfg.steps;
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        let net = train_observed(&spec, cfg, &ds, m, s, steps, |_, _| Ok(()))?;
        let tr = net.forward(&xi).map_err(in_cell(spec.name, m, s, steps as u64))?;
        Ok(tr.h.iter().map(|h| h.norm() / (h.len() as f64).sqrt()).collect::<Vec<f64>>())
    })?;
    let expected = match (cfg.param, cfg.activation.degree(), steps) {
        (ParamName::NaiveIp, Some(p), 0) => Some(naive_ip_h_exponents(cfg.depth, p)),
        _ => None,
    };
    for l in 1..=cfg.depth {
        let mut means = Vec::new();
        for (i, &m) in cfg.widths.iter().enumerate() {
            let vals: Vec<f64> = grid[i].iter().map(|v| v[l - 1]).collect();
            let mu = mean(&vals);
            ctx.row(cfg.param, &cfg.activation, m, Some(l), Some(steps as u64), "h_rms_mean", mu);
            means.push(mu);
        }
        let report = ctx.fit(cfg.param, Some(l), Some(steps as u64), "h-rms", means)?;
        match (&expected, report.fit) {
            (Some(e), Some(fit)) => {
                let pass = (fit.slope - e[l - 1]).abs() <= 0.1;
                let v = Verdict::new(
                    format!("h-rms slope layer {l}"),
                    pass,
                    format!("slope {:.4}, predicted {:.2} +- 0.1: {}", fit.slope, e[l - 1], ok_mark(pass)),
                );
                ctx.verdict(Some(report), v);
            }
            _ => ctx.reports.push(report),
        }
    }
    Ok(())
}

/// Numerical rank of every hidden layer's pre-activations over `probe`
/// after one step (calibrated for IP-LLR when requested).
fn ranks_after_one_step(
    spec: &ParamSpec,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    probe: &[DVector<f64>],
    m: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let ctx = |t| in_cell(spec.name, m, seed, t);
    let mut net = Network::init(spec, m, ds.d, outputs(ds), seed).map_err(ctx(0))?;
    let plan = batches(ds.len(), cfg.batch, seed, 1)?;
    let b0 = ds.samples(&plan[0]);
    let overrides = if cfg.calibrate && spec.name == ParamName::IpLlr {
        let b1 = ds.samples(plan.get(1).unwrap_or(&plan[0]));
        Some(net.calibrate_ipllr_lr(&b0, &b1, cfg.eta, cfg.loss).map_err(ctx(0))?)
    } else {
        None
    };
    net.sgd_step(&b0, cfg.eta, cfg.loss, overrides.as_deref()).map_err(ctx(0))?;
    let fwd = net.forward_batch(probe).map_err(ctx(1))?;
    fwd.h.iter().map(|h| numerical_rank(h, m).map_err(ctx(1))).collect()
}

fn rank(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    let probe: Vec<DVector<f64>> = ds.inputs[..cfg.samples.min(ds.len())].to_vec();
    let layer = if cfg.layer == 0 { cfg.depth } else { cfg.layer.min(cfg.depth) };
    let mut sides = vec![cfg.param];
    sides.extend(cfg.compare);
    let mut at_layer = Vec::new();
    for &name in &sides {
        let spec = build_spec(cfg, name, cfg.activation)?;
        let grid = cells(&cfg.widths, &cfg.seeds, |m, s| ranks_after_one_step(&spec, cfg, &ds, &probe, m, s))?;
        let mut per_width = Vec::new();
        for (i, &m) in cfg.widths.iter().enumerate() {
            for l in 1..=cfg.depth {
                let vals: Vec<f64> = grid[i].iter().map(|r| r[l - 1] as f64).collect();
                for (j, &s) in cfg.seeds.iter().enumerate() {
                    ctx.row(name, &cfg.activation, m, Some(l), Some(1), &format!("rank:seed={s}"), vals[j]);
                }
                if l == layer {
                    per_width.push(mean(&vals));
                }
            }
        }
        at_layer.push(per_width);
    }
    if cfg.compare.is_some() {
        for (i, &m) in cfg.widths.iter().enumerate() {
            let (a, b) = (at_layer[0][i], at_layer[1][i]);
            let pass = a * 10.0 <= b;
            ctx.verdict(
                None,
                Verdict::new(
                    format!("rank layer {layer} m={m}"),
                    pass,
                    format!("{} rank {a} vs {} rank {b} (need <= 1/10): {}", sides[0], sides[1], ok_mark(pass)),
                ),
            );
        }
    }
    Ok(())
}

fn routine(cfg: &ExperimentConfig, ds: &Dataset) -> TrainRoutine {
    TrainRoutine { stream: (0..cfg.steps.max(1)).map(|t| ds.sample(t % ds.len())).collect(), eta: cfg.eta, loss: cfg.loss }
}

/// The last three rows, used as held-out test inputs.
fn test_inputs(ds: &Dataset) -> Vec<DVector<f64>> {
    ds.inputs[ds.len().saturating_sub(3)..].to_vec()
}

fn equivalence(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let other = cfg.compare.ok_or_else(|| Error::Precondition("equivalence needs model.compare".into()))?;
    let ds = load_dataset(cfg)?;
    let (sa, sb) = (build_spec(cfg, cfg.param, cfg.activation)?, build_spec(cfg, other, cfg.activation)?);
    let rt = routine(cfg, &ds);
    let tests = test_inputs(&ds);
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        finite_width_equivalence(&sa, &sb, m, s, &rt, &tests, cfg.steps).map_err(in_cell(other, m, s, 0))
    })?;
    let exact = sb.variant == Variant::Hp || other == cfg.param;
    for (i, &m) in cfg.widths.iter().enumerate() {
        let mut worst = 0.0f64;
        for (j, &s) in cfg.seeds.iter().enumerate() {
            let r = &grid[i][j];
            ctx.row(other, &cfg.activation, m, None, Some(0), &format!("eta_b0:seed={s}"), r.eta_b0);
            for t in 0..r.abs_diff.len() {
                ctx.row(other, &cfg.activation, m, None, Some(t as u64 + 1), &format!("abs_diff:seed={s}"), r.abs_diff[t]);
                ctx.row(other, &cfg.activation, m, None, Some(t as u64 + 1), &format!("rel_diff:seed={s}"), r.rel_diff[t]);
            }
            worst = worst.max(r.max_rel);
        }
        ctx.row(other, &cfg.activation, m, None, None, "max_rel_diff", worst);
        if exact {
            let pass = worst <= 1e-8;
            ctx.verdict(
                None,
                Verdict::new(
                    format!("{} = {} at m={m}", cfg.param, other),
                    pass,
                    format!("max relative difference {worst:.3e} (<= 1e-8): {}", ok_mark(pass)),
                ),
            );
        }
    }
    Ok(())
}

fn hpz_convergence(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let other = cfg.compare.ok_or_else(|| Error::Precondition("hpz-convergence needs model.compare".into()))?;
    let ds = load_dataset(cfg)?;
    let (sa, sb) = (build_spec(cfg, cfg.param, cfg.activation)?, build_spec(cfg, other, cfg.activation)?);
    let rt = routine(cfg, &ds);
    let xi = vec![probe_input(&ds).clone()];
    let times = times_or_steps(cfg);
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        finite_width_equivalence(&sa, &sb, m, s, &rt, &xi, cfg.steps).map_err(in_cell(other, m, s, 0))
    })?;
    for &t in &times {
        let mut means = Vec::new();
        for (i, &m) in cfg.widths.iter().enumerate() {
            let vals: Vec<f64> = grid[i].iter().map(|r| r.abs_diff[t as usize - 1]).collect();
            for (j, &s) in cfg.seeds.iter().enumerate() {
                ctx.row(other, &cfg.activation, m, None, Some(t), &format!("abs_diff:seed={s}"), vals[j]);
            }
            let mu = mean(&vals);
            ctx.row(other, &cfg.activation, m, None, Some(t), "abs_diff_mean", mu);
            means.push(mu);
        }
        let report = ctx.fit(other, None, Some(t), "hpz-diff", means)?;
        let v = match report.fit {
            Some(fit) => {
                let ratio = report.terminal_ratio();
                let pass = fit.slope < 0.0 && ratio <= 0.2;
                Verdict::new(
                    format!("{} -> {} t={t}", other, cfg.param),
                    pass,
                    format!("slope {:.4} (< 0), terminal ratio {:.4} (<= 0.2): {}", fit.slope, ratio, ok_mark(pass)),
                )
            }
            None => Verdict::new(format!("{} -> {} t={t}", other, cfg.param), false, "need at least three widths"),
        };
        ctx.verdict(Some(report), v);
    }
    Ok(())
}

fn collapse(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let layer = if cfg.layer == 0 { 3.min(cfg.depth) } else { cfg.layer };
    let steps = cfg.steps.max(1);
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        let mut w0 = None;
        let net = train_observed(&spec, cfg, &ds, m, s, steps, |t, net| {
            if t == 0 {
                w0 = Some(net.effective_weight(layer));
            }
            Ok(())
        })?;
        Ok(collapse_statistic(&(net.effective_weight(layer) - w0.expect("observed at t = 0"))))
    })?;
    let mut means = Vec::new();
    for (i, &m) in cfg.widths.iter().enumerate() {
        for (j, &s) in cfg.seeds.iter().enumerate() {
            ctx.row(cfg.param, &cfg.activation, m, Some(layer), Some(steps as u64), &format!("dispersion:seed={s}"), grid[i][j]);
        }
        let mu = mean(&grid[i]);
        ctx.row(cfg.param, &cfg.activation, m, Some(layer), Some(steps as u64), "dispersion_mean", mu);
        means.push(mu);
    }
    let report = ctx.fit(cfg.param, Some(layer), Some(steps as u64), "collapse", means)?;
    let v = match report.fit {
        Some(fit) => {
            let pass = fit.slope <= -0.3;
            Verdict::new(format!("collapse layer {layer}"), pass, format!("slope {:.4} (<= -0.3): {}", fit.slope, ok_mark(pass)))
        }
        None => Verdict::new(format!("collapse layer {layer}"), false, "need at least three widths"),
    };
    ctx.verdict(Some(report), v);
    Ok(())
}

fn ip_bias_independence(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    if ds.len() < 2 {
        return Err(Error::Precondition("input independence needs two inputs".into()));
    }
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let (a, b) = (ds.inputs[0].clone(), ds.inputs[1].clone());
    let steps = cfg.steps;
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        let net = train_observed(&spec, cfg, &ds, m, s, steps, |_, _| Ok(()))?;
        input_independence_statistic(&net, &a, &b).map_err(in_cell(spec.name, m, s, steps as u64))
    })?;
    let t = Some(steps as u64);
    let mut slopes = vec![None; cfg.depth];
    for l in 1..=cfg.depth {
        let mut means = Vec::new();
        for (i, &m) in cfg.widths.iter().enumerate() {
            let mu = mean(&grid[i].iter().map(|r| r.h_rms[l - 1]).collect::<Vec<_>>());
            ctx.row(cfg.param, &cfg.activation, m, Some(l), t, "h_diff_rms_mean", mu);
            means.push(mu);
        }
        let report = ctx.fit(cfg.param, Some(l), t, "independence", means)?;
        slopes[l - 1] = report.fit.map(|f| f.slope);
        ctx.reports.push(report);
    }
    for (i, &m) in cfg.widths.iter().enumerate() {
        let mu = mean(&grid[i].iter().map(|r| r.f_diff).collect::<Vec<_>>());
        ctx.row(cfg.param, &cfg.activation, m, Some(cfg.depth + 1), t, "f_diff_mean", mu);
    }
    match (slopes[0], slopes.get(1).copied().flatten()) {
        (Some(s1), Some(s2)) => {
            let p1 = s1.abs() <= 0.15;
            let p2 = (s2 + 0.5).abs() <= 0.15;
            ctx.verdict(None, Verdict::new("layer 1 input dependence", p1, format!("slope {s1:.4} (|.| <= 0.15): {}", ok_mark(p1))));
            ctx.verdict(
                None,
                Verdict::new("layer 2 input independence", p2, format!("slope {s2:.4} (-0.5 +- 0.15): {}", ok_mark(p2))),
            );
        }
        _ => ctx.verdict(None, Verdict::new("input independence", false, "need at least three widths")),
    }
    Ok(())
}

/// Init scales as the oracle expects them: the first entry includes the
/// `1/sqrt(d+1)` input rescale when it is on.
pub fn effective_delta(spec: &ParamSpec, d: usize) -> Vec<f64> {
    let mut delta = spec.delta.clone();
    if spec.input_rescale {
        delta[0] /= ((d + 1) as f64).sqrt();
    }
    delta
}

fn oracle_compare(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    if cfg.param != ParamName::IpLlr {
        return Err(Error::Unsupported(format!("oracle-compare is defined for ipllr, not {}", cfg.param)));
    }
    let ds = load_dataset(cfg)?;
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let xi = probe_input(&ds).clone();
    let first = ds.sample(0);
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        let c = in_cell(spec.name, m, s, 1);
        let mut net = Network::init(&spec, m, ds.d, outputs(&ds), s).map_err(in_cell(spec.name, m, s, 0))?;
        let chi0 = net.sgd_step(std::slice::from_ref(&first), cfg.eta, cfg.loss, None).map_err(in_cell(spec.name, m, s, 0))?.chi[0][0];
        Ok((net.forward(&xi).map_err(c)?.f[0], chi0))
    })?;
    let oracle = ipllr_t1_limit(&OracleInput {
        xi0: first.input.clone(),
        y0: first.target,
        xi: xi.clone(),
        eta: cfg.eta,
        loss: cfg.loss,
        depth: cfg.depth,
        delta: effective_delta(&spec, ds.d),
        activation: cfg.activation,
        n_mc: cfg.n_mc,
        seed: cfg.seeds[0],
    })?;
    let act = cfg.activation;
    ctx.row(cfg.param, &act, 0, None, Some(0), "oracle_chi0", oracle.chi0);
    for (l, (lam, se)) in oracle.lambda.iter().zip(&oracle.lambda_se).enumerate() {
        ctx.row(cfg.param, &act, 0, Some(l + 1), Some(1), "oracle_lambda", *lam);
        ctx.row(cfg.param, &act, 0, Some(l + 1), Some(1), "oracle_lambda_se", *se);
    }
    ctx.row(cfg.param, &act, 0, None, Some(1), "oracle_f1", oracle.f1);
    ctx.row(cfg.param, &act, 0, None, Some(1), "oracle_f1_se", oracle.f1_se);
    for (i, &m) in cfg.widths.iter().enumerate() {
        let f: Vec<f64> = grid[i].iter().map(|r| r.0).collect();
        let chi: Vec<f64> = grid[i].iter().map(|r| r.1).collect();
        for (j, &s) in cfg.seeds.iter().enumerate() {
            ctx.row(cfg.param, &act, m, None, Some(1), &format!("f1:seed={s}"), f[j]);
        }
        let (mu, se) = (mean(&f), std_error(&f));
        ctx.row(cfg.param, &act, m, None, Some(0), "chi0_mean", mean(&chi));
        ctx.row(cfg.param, &act, m, None, Some(1), "f1_mean", mu);
        ctx.row(cfg.param, &act, m, None, Some(1), "f1_se", se);
        if i + 1 == cfg.widths.len() {
            let combined = (se * se + oracle.f1_se * oracle.f1_se).sqrt();
            let tol = (3.0 * combined).max(0.1 * oracle.f1.abs());
            let diff = (mu - oracle.f1).abs();
            let close = diff <= tol;
            let sign = oracle.f1.signum() == -oracle.chi0.signum() && mu.signum() == oracle.f1.signum();
            let pass = close && sign;
            ctx.verdict(
                None,
                Verdict::new(
                    format!("oracle match m={m}"),
                    pass,
                    format!(
                        "finite {mu:.4} +- {se:.4}, limit {:.4} +- {:.4}, |diff| {diff:.4} (<= {tol:.4}), sign vs chi0 {}: {}",
                        oracle.f1,
                        oracle.f1_se,
                        if sign { "ok" } else { "wrong" },
                        ok_mark(pass)
                    ),
                ),
            );
        }
    }
    Ok(())
}

fn accuracy(net: &Network, ds: &Dataset, idx: &[usize], cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let inputs: Vec<DVector<f64>> = idx.iter().map(|&i| ds.inputs[i].clone()).collect();
    let fwd = net.forward_batch(&inputs)?;
    let (mut loss, mut hits) = (0.0, 0usize);
    for (k, &i) in idx.iter().enumerate() {
        let f = fwd.f.column(k).into_owned();
        loss += loss_eval(cfg.loss, ds.targets[i], &f)?.0;
        let hit = match ds.targets[i] {
            crate::net::Target::Class(c) => f.argmax().0 == c,
            crate::net::Target::Scalar(y) => f[0].signum() == y.signum(),
        };
        hits += hit as usize;
    }
    let n = idx.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

fn train(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let full = load_dataset(cfg)?;
    let held = (full.len() / 10).max(1);
    let cut = full.len() - held;
    if cut == 0 {
        return Err(Error::Precondition("dataset too small to hold out a test split".into()));
    }
    let ds = full.head(cut);
    let test: Vec<usize> = (cut..full.len()).collect();
    let spec = build_spec(cfg, cfg.param, cfg.activation)?;
    let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
        let c = |t| in_cell(spec.name, m, s, t);
        let mut net = Network::init(&spec, m, ds.d, outputs(&full), s).map_err(c(0))?;
        let plan = schedule(ds.len(), cfg.batch, s, cfg.steps)?;
        let mut losses = Vec::with_capacity(plan.len());
        for (t, idx) in plan.iter().enumerate() {
            let batch: Vec<Sample> = ds.samples(idx);
            let overrides = if t == 0 && cfg.calibrate && spec.name == ParamName::IpLlr {
                let next = plan.get(1).unwrap_or(idx);
                Some(net.calibrate_ipllr_lr(&batch, &ds.samples(next), cfg.eta, cfg.loss).map_err(c(0))?)
            } else {
                None
            };
            losses.push(net.sgd_step(&batch, cfg.eta, cfg.loss, overrides.as_deref()).map_err(c(t as u64))?.loss);
        }
        let (tl, acc) = accuracy(&net, &full, &test, cfg).map_err(c(cfg.steps as u64))?;
        Ok((losses, tl, acc))
    })?;
    let mut finite = true;
    for (i, &m) in cfg.widths.iter().enumerate() {
        for (j, &s) in cfg.seeds.iter().enumerate() {
            let (losses, tl, acc) = &grid[i][j];
            for (t, l) in losses.iter().enumerate() {
                ctx.row(cfg.param, &cfg.activation, m, None, Some(t as u64), &format!("train_loss:seed={s}"), *l);
                finite &= l.is_finite();
            }
            ctx.row(cfg.param, &cfg.activation, m, None, Some(cfg.steps as u64), &format!("test_loss:seed={s}"), *tl);
            ctx.row(cfg.param, &cfg.activation, m, None, Some(cfg.steps as u64), &format!("accuracy:seed={s}"), *acc);
            finite &= tl.is_finite();
        }
        let accs: Vec<f64> = grid[i].iter().map(|g| g.2).collect();
        ctx.row(cfg.param, &cfg.activation, m, None, Some(cfg.steps as u64), "accuracy_mean", mean(&accs));
    }
    ctx.verdict(None, Verdict::new("training finite", finite, format!("losses finite: {}", ok_mark(finite))));
    Ok(())
}

fn gradcheck(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ds = load_dataset(cfg)?;
    let sample = ds.sample(0);
    for act in cfg.activations.clone() {
        let spec = build_spec(cfg, cfg.param, act)?;
        let grid = cells(&cfg.widths, &cfg.seeds, |m, s| {
            let c = in_cell(spec.name, m, s, 0);
            let net = Network::init(&spec, m, ds.d, outputs(&ds), s).map_err(&c)?;
            gradient_check(&net, &sample, cfg.loss, cfg.eps, cfg.grad_params, s).map_err(c)
        })?;
        for (i, &m) in cfg.widths.iter().enumerate() {
            for (j, &s) in cfg.seeds.iter().enumerate() {
                let r = &grid[i][j];
                ctx.row(cfg.param, &act, m, None, Some(0), &format!("max_rel_error:seed={s}"), r.max_rel_error);
                ctx.row(cfg.param, &act, m, None, Some(0), &format!("checked:seed={s}"), r.checked as f64);
                ctx.row(cfg.param, &act, m, None, Some(0), &format!("kink_warning:seed={s}"), r.kink_warning as u8 as f64);
                let pass = r.max_rel_error <= 1e-5 && !r.kink_warning;
                ctx.verdict(
                    None,
                    Verdict::new(
                        format!("gradcheck {act} m={m} seed={s}"),
                        pass,
                        format!(
                            "max relative error {:.3e} over {} parameters (<= 1e-5){}: {}",
                            r.max_rel_error,
                            r.checked,
                            if r.kink_warning { ", kink within 10 eps" } else { "" },
                            ok_mark(pass)
                        ),
                    ),
                );
            }
        }
    }
    Ok(())
}
