use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use transflow_core::checkpoint::Checkpoint;
use transflow_core::entropy::{lambda_eigen, lambda_minimize, Backend};
use transflow_core::flow::{FlowKind, FlowState};
use transflow_core::run::{self, RunConfig, RunSummary};
use transflow_core::scenario;
use transflow_core::verify::{self, Suite, VerifyOptions};
use transflow_core::Error;

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_BLOW_UP: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;
const EXIT_UNSUPPORTED: u8 = 4;
const EXIT_USAGE: u8 = 5;

#[derive(Parser)]
#[command(name = "transflow", version, about = "Transverse Ricci flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a scenario or field file and write a time series.
    Run(RunArgs),
    /// Run a verification suite and write verify.json.
    Verify(VerifyArgs),
    /// Compute the entropy eigenvalue of a scenario.
    Eig(EigArgs),
    /// Continue an interrupted run from its latest checkpoint.
    Resume {
        /// Output directory of the run.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file; flags given on the command line override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    flow: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    lambda_every: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// operators, variation, entropy, flow or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Where to write the JSON report.
    #[arg(long, default_value = "verify.json")]
    report: PathBuf,
}

#[derive(Args)]
struct EigArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 64)]
    dims: usize,
    /// eigen or minimize.
    #[arg(long, default_value = "eigen")]
    backend: String,
    /// Field file receiving the metric and the minimizer.
    #[arg(long, default_value = "f_min.bin")]
    output: PathBuf,
}

enum Failure {
    Core(Error),
    Usage(String),
    Verify(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => EXIT_VERIFY_FAILED,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) if e.is_blow_up() => EXIT_BLOW_UP,
            Failure::Core(Error::NonPositive { .. }) => EXIT_BLOW_UP,
            Failure::Core(Error::NoConvergence { .. }) => EXIT_NO_CONVERGENCE,
            Failure::Core(Error::ModeUnsupported(_)) => EXIT_UNSUPPORTED,
            Failure::Core(_) => EXIT_USAGE,
        }
    }

    fn diagnostic(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Core(e) => (e.kind(), e.to_string()),
            Failure::Usage(m) => ("Usage", m.clone()),
            Failure::Verify(n) => ("VerifyFailed", format!("{n} check(s) did not pass")),
        };
        json!({ "error": kind, "message": message, "exit_code": self.code() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return report(Failure::Usage(e.kind().to_string()));
        }
    };
    if let Err(f) = configure_threads() {
        return report(f);
    }
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Eig(args) => cmd_eig(args),
        Command::Resume { dir } => run::resume(&dir).map(print_summary).map_err(Failure::from),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(failure: Failure) -> ExitCode {
    eprintln!("{}", failure.diagnostic());
    ExitCode::from(failure.code())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("TRANSFLOW_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("TRANSFLOW_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn config_table(args: RunArgs) -> Result<toml::Table, Failure> {
    let mut table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            text.parse::<toml::Table>().map_err(|e| Error::InvalidConfig {
                field: "config".into(),
                reason: e.message().to_string(),
            })?
        }
        None => toml::Table::new(),
    };
    let mut set = |key: &str, value: Option<toml::Value>| {
        if let Some(v) = value {
            table.insert(key.into(), v);
        }
    };
    let path = |p: PathBuf| toml::Value::String(p.to_string_lossy().into_owned());
    let int = |n: u64| i64::try_from(n).map(toml::Value::Integer).unwrap_or(toml::Value::Float(n as f64));
    set("scenario", args.scenario.map(toml::Value::String));
    set("input", args.input.map(path));
    set("dims", args.dims.map(|n| int(n as u64)));
    set("flow", args.flow.map(toml::Value::String));
    set("horizon", args.horizon.map(toml::Value::Float));
    set("cfl", args.cfl.map(toml::Value::Float));
    set("lambda_every", args.lambda_every.map(int));
    set("output", args.output.map(path));
    set("checkpoint_every", args.checkpoint_every.map(int));
    set("seed", args.seed.map(int));
    Ok(table)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = RunConfig::from_table(config_table(args)?)?;
    config.validate()?;
    print_summary(run::run(&config)?);
    Ok(())
}

fn print_summary(summary: RunSummary) {
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let suite: Suite = args.suite.parse()?;
    let report = verify::verify(suite, VerifyOptions { dims: args.dims, seed: args.seed })?;
    print!("{}", report.table());
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Usage(e.to_string()))?;
    std::fs::write(&args.report, text + "\n").map_err(Error::from)?;
    match report.checks.iter().filter(|c| c.status != verify::Status::Pass).count() {
        0 => Ok(()),
        n => Err(Failure::Verify(n)),
    }
}

fn cmd_eig(args: EigArgs) -> Result<(), Failure> {
    let backend: Backend = args.backend.parse()?;
    let s = scenario::build::<f64>(&args.scenario, args.dims)?;
    let report = match backend {
        Backend::Eigen => lambda_eigen(&s.g0, &s.model)?,
        Backend::Minimize => lambda_minimize(&s.g0, &s.model)?,
    };
    println!("lambda      {:.12e}", report.lambda);
    println!("lambda_bar  {:.12e}", report.lambda_bar);
    println!("volume      {:.12e}", report.volume);
    println!("residual    {:.3e}", report.residual);
    let checkpoint = Checkpoint {
        kind: FlowKind::Ricci,
        run_hash: 0,
        rows: 0,
        state: FlowState::new(s.g0.clone(), Some(report.f_min.0.clone())),
        warm_start: None,
        model: Some(s.model.clone()),
    };
    checkpoint.save(&args.output)?;
    Ok(())
}
