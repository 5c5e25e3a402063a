//! `qcbm`: experiment runner over qcbm-core. Every subcommand reads a flat
//! config file (`--config`), lets flags override its keys, writes CSVs plus a
//! `summary.json` manifest into `--out`, and exits with 1 on configuration
//! errors, 2 when a size or memory guard trips and 3 on numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigFile, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qcbm_core::Error),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
    #[error("cannot write output: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot serialize manifest: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use qcbm_core::Error as E;
        match self {
            CliError::Core(E::CapExceeded { .. } | E::Budget(_)) => 2,
            CliError::Core(E::Numeric(_)) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qcbm",
    version,
    about = "Born machine training and loss-concentration experiments"
)]
struct Cli {
    /// Flat `key = value` experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Benchmark datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Sampled KLD against a point mass over random product states.
    KldConcentration(KldArgs),
    /// Parity-order weights of the Gaussian-kernel MMD observable.
    MmdProfile(ProfileArgs),
    /// Empirical and closed-form MMD variance over random circuits.
    VarianceSweep(SweepArgs),
    /// A distribution whose 2-bit marginals match uniform but whose MMD does not vanish.
    TruncationDemo(TruncationArgs),
    /// Train a circuit with Adam or an evolution strategy.
    Train(TrainArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Write a dataset as `bitstring,probability` CSV (to stdout without --out).
    Gen(DatasetArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// ghz, random_K, cardinality, parity3, point_zero or image.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Text file of pixel grids (for `--kind image`).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    threshold_factor: Option<f64>,
}

#[derive(Debug, Args)]
struct KldArgs {
    #[arg(long)]
    n: Vec<usize>,
    #[arg(long)]
    shots: Vec<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    draws: Option<usize>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[arg(long)]
    n: Vec<usize>,
    /// Bandwidth: a number, or a multiple of n such as `n/4` or `0.5n`.
    #[arg(long)]
    sigma: Vec<String>,
    /// Treat the bandwidths as one equal-weight mixture kernel.
    #[arg(long)]
    mixture: Option<bool>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    n: Vec<usize>,
    #[arg(long)]
    sigma: Vec<String>,
    #[arg(long)]
    depth: Vec<usize>,
    #[arg(long)]
    ansatz: Option<String>,
    /// `exact` or a shot count.
    #[arg(long)]
    shots: Option<String>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Debug, Args)]
struct TruncationArgs {
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    ansatz: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dataset: Option<String>,
    /// mmd, global_fidelity, local_fidelity, or an explicit loss (kld, tvd, renyi_2, ...).
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    sigma: Vec<String>,
    #[arg(long)]
    shots: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    /// adam or es.
    #[arg(long)]
    optimizer: Option<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dataset { .. } => "dataset gen",
            Command::KldConcentration(_) => "kld-concentration",
            Command::MmdProfile(_) => "mmd-profile",
            Command::VarianceSweep(_) => "variance-sweep",
            Command::TruncationDemo(_) => "truncation-demo",
            Command::Train(_) => "train",
        }
    }

    fn register(self, s: &mut Settings) {
        match self {
            Command::Dataset {
                action: DatasetCommand::Gen(a),
            } => {
                s.flag_opt("kind", a.kind);
                s.flag_opt("n", a.n);
                s.flag_opt("input", a.input.map(|p| p.display().to_string()));
                s.flag_opt("threshold_factor", a.threshold_factor);
            }
            Command::KldConcentration(a) => {
                s.flag("n", strings(a.n));
                s.flag("shots", strings(a.shots));
                s.flag_opt("epsilon", a.epsilon);
                s.flag_opt("draws", a.draws);
            }
            Command::MmdProfile(a) => {
                s.flag("n", strings(a.n));
                s.flag("sigma", a.sigma);
                s.flag_opt("mixture", a.mixture);
            }
            Command::VarianceSweep(a) => {
                s.flag("n", strings(a.n));
                s.flag("sigma", a.sigma);
                s.flag("depth", strings(a.depth));
                s.flag_opt("ansatz", a.ansatz);
                s.flag_opt("shots", a.shots);
                s.flag_opt("draws", a.draws);
                s.flag_opt("dataset", a.dataset);
            }
            Command::TruncationDemo(a) => {
                s.flag_opt("sigma", a.sigma);
                s.flag_opt("k", a.k);
            }
            Command::Train(a) => {
                s.flag_opt("ansatz", a.ansatz);
                s.flag_opt("n", a.n);
                s.flag_opt("depth", a.depth);
                s.flag_opt("dataset", a.dataset);
                s.flag_opt("loss", a.loss);
                s.flag("sigma", a.sigma);
                s.flag_opt("shots", a.shots);
                s.flag_opt("iterations", a.iterations);
                s.flag_opt("optimizer", a.optimizer);
            }
        }
    }
}

fn strings<T: ToString>(v: Vec<T>) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut settings = Settings::new(file);
    settings.flag_opt("seed", cli.seed);
    settings.flag_opt("out", cli.out.map(|p| p.display().to_string()));
    let name = cli.command.name();
    let command = cli.command;
    let kind = match &command {
        Command::Dataset { .. } => commands::dataset_gen,
        Command::KldConcentration(_) => commands::kld_concentration,
        Command::MmdProfile(_) => commands::mmd_profile,
        Command::VarianceSweep(_) => commands::variance_sweep,
        Command::TruncationDemo(_) => commands::truncation_demo,
        Command::Train(_) => commands::train,
    };
    command.register(&mut settings);
    kind(commands::Context::new(name, settings))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
