//! `eqrgmm`: fit quantile-process metamodels, generate conditional samples,
//! build bootstrap intervals and reproduce the experiments.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "eqrgmm", version, about = "Quantile regression based generative metamodels")]
struct Cli {
    /// Flat `key = value` file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Leave wall-clock measurements out of every output so runs compare byte for byte.
    #[arg(long, global = true)]
    omit_timings: bool,
    #[command(flatten)]
    tunables: Tunables,
    #[command(subcommand)]
    command: Command,
}

/// Every tunable is kept as text here and parsed once, after merging with the
/// config file, so that errors name the field regardless of where it was set.
#[derive(Args, Debug, Default)]
struct Tunables {
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<String>,
    /// eqrgmm or qrgmm.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// identity, inventory or raw.
    #[arg(long, global = true)]
    basis: Option<String>,
    /// Tail grid resolution; defaults to round(sqrt(n)).
    #[arg(long, global = true)]
    m: Option<String>,
    /// Central spacing multiplier.
    #[arg(long, global = true)]
    c: Option<String>,
    #[arg(long = "tau-l", global = true)]
    tau_l: Option<String>,
    #[arg(long = "tau-u", global = true)]
    tau_u: Option<String>,
    /// Smoothing half-width for gradients, or `residual`.
    #[arg(long = "delta-n", global = true)]
    delta_n: Option<String>,
    #[arg(long = "clamp-negative-gradients", global = true)]
    clamp_negative_gradients: Option<String>,
    /// Bootstrap replicates.
    #[arg(long = "B", global = true)]
    b_count: Option<String>,
    /// Observations generated per model.
    #[arg(long = "K", global = true)]
    k: Option<String>,
    /// Interval miscoverage level.
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Outer replications of an experiment or study.
    #[arg(long = "N", global = true)]
    replications: Option<String>,
    /// Simulated dataset size.
    #[arg(long = "n", global = true)]
    n: Option<String>,
    #[arg(long = "reference-size", global = true)]
    reference_size: Option<String>,
    /// Simulator runs used to estimate inventory ground truth.
    #[arg(long = "truth-size", global = true)]
    truth_size: Option<String>,
    /// Retries for bootstrap replicates that fail to fit.
    #[arg(long, global = true)]
    retries: Option<String>,
}

impl Tunables {
    fn overrides(self) -> Overrides {
        let mut o = Overrides::default();
        o.set("seed", self.seed);
        o.set("workers", self.workers);
        o.set("variant", self.variant);
        o.set("basis", self.basis);
        o.set("m", self.m);
        o.set("c", self.c);
        o.set("tau_l", self.tau_l);
        o.set("tau_u", self.tau_u);
        o.set("delta_n", self.delta_n);
        o.set("clamp_negative_gradients", self.clamp_negative_gradients);
        o.set("B", self.b_count);
        o.set("K", self.k);
        o.set("alpha", self.alpha);
        o.set("N", self.replications);
        o.set("n", self.n);
        o.set("reference_size", self.reference_size);
        o.set("truth_size", self.truth_size);
        o.set("retries", self.retries);
        o
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model from a CSV dataset (columns x1..xp, y).
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw K observations from a fitted model at one covariate value.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Raw covariates, comma separated, e.g. `4,-1,3`.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap percentile interval for an estimand at one covariate value.
    Ci {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// `mean`, `quantile:<level>` or `survival:<threshold>`.
        #[arg(long)]
        estimand: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a training dataset, or with `--reference` a ground-truth sample at `--x`.
    Simulate {
        /// normal, halfnormal, t or inventory.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        reference: bool,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// KS and Wasserstein distances between a generated and a reference sample.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated data, fit, generate and score runs with mean and standard error tables.
    Experiment {
        /// synthetic or inventory.
        #[arg(long)]
        kind: String,
        /// Synthetic error family: normal, halfnormal or t.
        #[arg(long, default_value = "normal")]
        family: String,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        /// Also build bootstrap intervals in every replication and report coverage.
        #[arg(long)]
        coverage: bool,
        /// Comma-separated estimands for the coverage study.
        #[arg(long)]
        estimands: Option<String>,
        /// Compare E-QRGMM and QRGMM for each listed m instead of a single run.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Spread of the gradient estimation error across sample sizes and levels.
    Study {
        #[arg(long, default_value = "normal")]
        family: String,
        #[arg(long = "n-values", default_value = "1000,10000,100000")]
        n_values: String,
        #[arg(long, default_value = "0.01,0.05,0.1,0.2,0.3,0.5,0.7,0.8,0.9,0.95,0.99")]
        levels: String,
        /// CSV table, rows by n and columns by level.
        #[arg(long)]
        out: PathBuf,
        /// Also write every cell as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = match &cli.config {
        Some(path) => Overrides::parse_file(path)?,
        None => Overrides::default(),
    };
    overrides.merge(cli.tunables.overrides());
    let cfg = RunConfig::from_overrides(&overrides)?;
    let ctx = commands::Context {
        cfg,
        omit_timings: cli.omit_timings,
    };
    match cli.command {
        Command::Fit { data, out } => commands::fit(ctx, &data, &out),
        Command::Generate { model, x, out } => commands::generate(ctx, &model, &x, &out),
        Command::Ci { data, x, estimand, out } => commands::ci(ctx, &data, &x, &estimand, &out),
        Command::Simulate { scenario, reference, x, out } => {
            commands::simulate(ctx, &scenario, reference, x.as_deref(), &out)
        }
        Command::Eval { generated, reference, out } => commands::eval(ctx, &generated, &reference, &out),
        Command::Experiment {
            kind,
            family,
            x,
            coverage,
            estimands,
            sweep,
            out_dir,
        } => commands::experiment(
            ctx,
            commands::ExperimentArgs {
                kind,
                family,
                x,
                coverage,
                estimands,
                sweep,
                out_dir,
            },
        ),
        Command::Study {
            family,
            n_values,
            levels,
            out,
            json,
        } => commands::study(ctx, &family, &n_values, &levels, &out, json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
