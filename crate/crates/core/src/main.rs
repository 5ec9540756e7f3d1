use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gapfv::harness::{self, output, ConfigOverrides, Estimator, ExperimentConfig, Mode, SelfcheckOptions};
use gapfv::synthetic::ProfileKind;
use gapfv::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_SELFCHECK: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "gapfv", version, about = "Generalization-gap estimators: FV, LFV, TIC, RIC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic overparameterized ridge regression.
    Linear(CommonArgs),
    /// One-hidden-layer tanh network.
    Nn(CommonArgs),
    /// Run the oracle suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON file with any of the flag fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Noise variance σ².
    #[arg(long = "sigma-sq")]
    sigma_sq: Option<f64>,
    /// intrinsic10, inverse-linear or inverse-sqrt.
    #[arg(long)]
    profile: Option<ProfileKind>,
    /// Input dimensions (comma separated).
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    /// Hidden widths (comma separated).
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Replications for the network ground-truth gap.
    #[arg(long = "tilde-reps")]
    tilde_reps: Option<usize>,
    /// Chain length(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<usize>>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long = "burn-in")]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Subset of delta,efv,fv,lfv,jfv,tic0,tic_kappa,ric (linear) or lfv,tilde (nn).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "train-iters")]
    train_iters: Option<usize>,
    #[arg(long = "init-sd")]
    init_sd: Option<f64>,
    /// Keep the design fixed and redraw only y.
    #[arg(long = "fixed-design")]
    fixed_design: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// CSV destination; the markdown table also goes to `<out>.md`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            n: self.n,
            alpha: self.alpha,
            sigma_sq: self.sigma_sq,
            profile: self.profile,
            d: self.d.clone(),
            m: self.m.clone(),
            reps: self.reps,
            tilde_reps: self.tilde_reps,
            t: self.t.clone(),
            step: self.step,
            burn_in: self.burn_in,
            seed: self.seed,
            estimators: self.estimators.clone(),
            kappa: self.kappa,
            lr: self.lr,
            train_iters: self.train_iters,
            init_sd: self.init_sd,
            fixed_design: self.fixed_design.then_some(true),
            threads: self.threads,
            out: self.out.clone(),
        }
    }

    fn resolve(&self, mode: Mode) -> gapfv::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ConfigOverrides::from_json_file(path)?,
            None => ConfigOverrides::default(),
        };
        base.merge(self.overrides()).resolve(mode)
    }
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "inject-efv-bug", hide = true)]
    inject_efv_bug: bool,
}

fn usage(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_USAGE)
}

fn emit(cfg: &ExperimentConfig, csv: &[u8], markdown: &str) -> Result<(), Error> {
    print!("{markdown}");
    let _ = std::io::stdout().flush();
    if let Some(path) = &cfg.out {
        output::write_outputs(path, csv, markdown)?;
    }
    Ok(())
}

fn run_experiment(args: &CommonArgs, mode: Mode) -> ExitCode {
    let cfg = match args.resolve(mode) {
        Ok(c) => c,
        Err(e) => return usage(&e),
    };
    let result = match mode {
        Mode::Linear => harness::run_linear(&cfg).and_then(|run| {
            let csv = output::linear_csv(&run)?;
            emit(&cfg, &csv, &output::linear_markdown(&run))?;
            Ok(run.failed)
        }),
        Mode::Nn => harness::run_nn(&cfg).and_then(|run| {
            let csv = output::nn_csv(&run)?;
            emit(&cfg, &csv, &output::nn_markdown(&run))?;
            for c in run.cells.iter().filter(|c| c.non_monotone > 0) {
                eprintln!(
                    "warning: d={} M={}: {} training run(s) ended above their initial objective",
                    c.d, c.m, c.non_monotone
                );
            }
            Ok(run.failed())
        }),
        Mode::Selfcheck => unreachable!("selfcheck has its own entry point"),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("error: {failed} replication(s) diverged; partial results written");
            ExitCode::from(EXIT_DIVERGENCE)
        }
        Err(e @ Error::Config { .. }) => usage(&e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_selfcheck(args: &SelfcheckArgs) -> ExitCode {
    let opts = SelfcheckOptions {
        seed: args.seed,
        inject_efv_bug: args.inject_efv_bug,
    };
    match harness::run_selfcheck(&opts) {
        Ok(report) => {
            print!("{}", report.render());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFCHECK)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SELFCHECK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Linear(a) => run_experiment(a, Mode::Linear),
        Command::Nn(a) => run_experiment(a, Mode::Nn),
        Command::Selfcheck(a) => run_selfcheck(a),
    }
}
