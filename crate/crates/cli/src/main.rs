//! `widthlab`: runs one probe experiment and writes CSV reports plus a
//! manifest. Exit status: 0 all verdicts pass, 1 some verdict fails,
//! 2 usage or config error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use widthlab::config::{ExperimentConfig, RawConfig, Subcommand};
use widthlab::runner::{error_exit_code, run_and_write};

#[derive(Parser, Debug)]
#[command(name = "widthlab", version, about = "Width-scaling probes for deep MLP parameterizations")]
struct Cli {
    /// TOML config with [run], [model], [data], [train], [probe] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default out/<subcommand>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// First seed; the seed list becomes seed, seed+1, ... with the preset's length.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved config and exit without running.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Naive-IP output vanishing with width.
    Triviality(Overrides),
    /// IP-LLR first-step output staying order one.
    LlrEscape(Overrides),
    /// Pre-activation RMS exponents per layer.
    Scaling(Overrides),
    /// Numerical rank of hidden pre-activations after one step.
    Rank(Overrides),
    /// Exact finite-width equivalence of two trainings.
    Equivalence(Overrides),
    /// HPZ vs IP-LLR output gap across widths.
    HpzConvergence(Overrides),
    /// Dispersion of a non-centered weight update.
    Collapse(Overrides),
    /// Input dependence of IP-bias pre-activations at init.
    IpBiasIndependence(Overrides),
    /// Finite-width first step vs the infinite-width Monte-Carlo value.
    OracleCompare(Overrides),
    /// Plain SGD training with loss and accuracy.
    Train(Overrides),
    /// Backprop vs central finite differences.
    Gradcheck(Overrides),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Parameterization: ntk, mup, naive-ip, ipllr, ip-bias, ip-non-centered, hp, hpz.
    #[arg(long)]
    param: Option<String>,
    /// Second parameterization for two-sided probes.
    #[arg(long)]
    compare: Option<String>,
    /// relu, reluN, homogeneous:p:alpha:beta, gelu, elu, tanh, linear.
    #[arg(long)]
    activation: Option<String>,
    /// Activations for gradcheck.
    #[arg(long, value_delimiter = ',')]
    activations: Option<Vec<String>>,
    /// Number of hidden layers L.
    #[arg(long, short = 'L')]
    depth: Option<usize>,
    /// Homogeneity degree for the first-step exponents.
    #[arg(long)]
    p: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    bias_mode: Option<String>,
    #[arg(long)]
    u_shift: Option<f64>,
    /// Keep the first-layer init std unscaled by sqrt(d+1).
    #[arg(long)]
    no_input_rescale: bool,
    /// synthetic or mnist.
    #[arg(long)]
    data: Option<String>,
    /// gauss-regression or two-class.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// squared or cross-entropy.
    #[arg(long)]
    loss: Option<String>,
    /// Calibrate IP-LLR first-step rates per layer.
    #[arg(long, overrides_with = "no_calibrate")]
    calibrate: bool,
    #[arg(long)]
    no_calibrate: bool,
    #[arg(long, value_delimiter = ',')]
    probes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<u64>>,
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long)]
    n_mc: Option<usize>,
    /// Inputs used by the rank probe.
    #[arg(long)]
    samples: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    eps: Option<f64>,
    /// Parameters checked per network.
    #[arg(long)]
    params: Option<usize>,
}

impl Command {
    fn split(&self) -> (Subcommand, &Overrides) {
        match self {
            Command::Triviality(o) => (Subcommand::Triviality, o),
            Command::LlrEscape(o) => (Subcommand::LlrEscape, o),
            Command::Scaling(o) => (Subcommand::Scaling, o),
            Command::Rank(o) => (Subcommand::Rank, o),
            Command::Equivalence(o) => (Subcommand::Equivalence, o),
            Command::HpzConvergence(o) => (Subcommand::HpzConvergence, o),
            Command::Collapse(o) => (Subcommand::Collapse, o),
            Command::IpBiasIndependence(o) => (Subcommand::IpBiasIndependence, o),
            Command::OracleCompare(o) => (Subcommand::OracleCompare, o),
            Command::Train(o) => (Subcommand::Train, o),
            Command::Gradcheck(o) => (Subcommand::Gradcheck, o),
        }
    }
}

impl Overrides {
    fn to_raw(&self) -> RawConfig {
        let mut r = RawConfig::default();
        r.model.name = self.param.clone();
        r.model.compare = self.compare.clone();
        r.model.activation = self.activation.clone();
        r.probe.activations = self.activations.clone();
        r.model.depth = self.depth;
        r.model.p = self.p;
        r.model.widths = self.widths.clone();
        r.run.seeds = self.seeds.clone();
        r.model.bias_mode = self.bias_mode.clone();
        r.model.u_shift = self.u_shift;
        if self.no_input_rescale {
            r.model.input_rescale = Some(false);
        }
        r.data.kind = self.data.clone();
        r.data.task = self.task.clone();
        r.data.d = self.d;
        r.data.n = self.n;
        r.data.images = self.images.clone();
        r.data.labels = self.labels.clone();
        r.train.eta = self.eta;
        r.train.batch = self.batch;
        r.train.steps = self.steps;
        r.train.loss = self.loss.clone();
        if self.calibrate {
            r.train.calibrate = Some(true);
        } else if self.no_calibrate {
            r.train.calibrate = Some(false);
        }
        r.probe.list = self.probes.clone();
        r.probe.times = self.times.clone();
        r.probe.layer = self.layer;
        r.probe.n_mc = self.n_mc;
        r.probe.samples = self.samples;
        r.probe.eps = self.eps;
        r.probe.params = self.params;
        r
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, widthlab::Error> {
    let (cmd, over) = cli.command.split();
    let mut user = match &cli.config {
        Some(path) => RawConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RawConfig::default(),
    };
    user = user.overlay(&over.to_raw());
    if let Some(out) = &cli.out {
        user.run.out = Some(out.display().to_string());
    }
    if let Some(t) = cli.threads {
        user.run.threads = Some(t);
    }
    if let (Some(s), None) = (cli.seed, &over.seeds) {
        let count = widthlab::config::resolve(cmd, &user).run.seeds.map_or(1, |v| v.len().max(1));
        user.run.seeds = Some((s..s + count as u64).collect());
    }
    ExperimentConfig::for_subcommand(cmd, &user)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.dry_run {
        print!("{}", cfg.to_raw().to_toml());
        return ExitCode::SUCCESS;
    }
    match run_and_write(&cfg) {
        Ok((out, manifest)) => {
            for v in &out.verdicts {
                println!("[{}] {}: {}", if v.passed { "pass" } else { "FAIL" }, v.name, v.detail);
            }
            println!("run {} wrote {} ({:.1}s)", out.run_id, manifest.display(), out.wall_seconds);
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
