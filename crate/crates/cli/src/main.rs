use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use compfs::datasets::read_groups_file;
use compfs::experiment::{run_ablation, run_experiment, AblationGrid, ConfigLayer, THREADS_ENV};
use compfs::metrics::{g_sim, tpr_fdr};
use compfs::Error;

// Exit codes.
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

/// Composite feature selection benchmarks.
#[derive(Parser)]
#[command(name = "compfs", version, after_help = format!(
    "Exit status: 0 success, 1 I/O or data error, 2 usage or config error, 3 some runs failed.\n\
     Set {THREADS_ENV} to cap the worker threads."
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate a model over seeded repeats.
    Run(RunArgs),
    /// Count discovered groups over a grid of learner counts and loss weights.
    Ablate(AblateArgs),
    /// Score a groups file against a truth file.
    Score {
        /// Discovered groups: one group per line, 1-based comma-separated indices.
        groups: PathBuf,
        /// Ground truth in the same format.
        truth: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset such as `syn1/compfs5`.
    #[arg(long)]
    preset: Option<String>,
    /// syn1..syn4, chem1..chem3 or file:<path.csv>.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Seed of the first repeat; repeat r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the report files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    learners: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Sparsity weight (the L1 coefficient for lasso).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    beta_e: Option<f64>,
    #[arg(long)]
    beta_r: Option<f64>,
    /// Turn the sqrt(p) scaling of beta and beta_r on or off.
    #[arg(long)]
    sqrt_p: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// compfs, compfs1, oracle or lasso.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Learner counts.
    #[arg(long, value_delimiter = ',', default_value = "2,5,8,10")]
    grid_learners: Vec<usize>,
    /// Overlap weights swept at the fixed sparsity weight.
    #[arg(long, value_delimiter = ',', default_value = "0.4,1.2,2.0")]
    grid_beta_r: Vec<f64>,
    /// Sparsity weights swept at the fixed overlap weight.
    #[arg(long, value_delimiter = ',', default_value = "0.4,1.0,2.0")]
    grid_beta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    fixed_beta: f64,
    #[arg(long, default_value_t = 1.2)]
    fixed_beta_r: f64,
}

impl Common {
    fn layer(&self, model: Option<String>) -> anyhow::Result<ConfigLayer> {
        let base = match &self.config {
            Some(path) => ConfigLayer::read(path)?,
            None => ConfigLayer::default(),
        };
        let cli = ConfigLayer {
            preset: self.preset.clone(),
            task: self.task.clone(),
            model,
            repeats: self.repeats,
            seed: self.seed,
            n_train: self.n_train,
            n_test: self.n_test,
            n_learners: self.learners,
            hidden: self.hidden,
            beta: self.beta,
            beta_e: self.beta_e,
            beta_r: self.beta_r,
            scale_by_sqrt_p: self.sqrt_p,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            temperature: self.temperature,
            threshold: self.threshold,
        };
        Ok(base.overlay(cli))
    }
}

fn run(args: RunArgs) -> anyhow::Result<u8> {
    let config = args.common.layer(args.model)?.resolve()?;
    let report = run_experiment(&config, args.common.out.as_deref())?;
    print!("{}", report.table());
    Ok(if report.partial { EXIT_PARTIAL } else { 0 })
}

fn ablate(args: AblateArgs) -> anyhow::Result<u8> {
    let mut layer = args.common.layer(None)?;
    if layer.task.is_none() && layer.preset.is_none() {
        layer.preset = Some("syn2/compfs5".into());
    }
    if layer.model.is_none() && layer.preset.is_none() {
        layer.model = Some("compfs".into());
    }
    if layer.repeats.is_none() {
        layer.repeats = Some(3);
    }
    let base = layer.resolve()?;
    let grid = AblationGrid {
        learners: args.grid_learners,
        beta_r: args.grid_beta_r,
        beta: args.grid_beta,
        fixed_beta: args.fixed_beta,
        fixed_beta_r: args.fixed_beta_r,
    };
    let report = run_ablation(&base, &grid, args.common.out.as_deref())?;
    print!("{}", report.table());
    Ok(if report.partial { EXIT_PARTIAL } else { 0 })
}

fn score(groups: PathBuf, truth: PathBuf) -> anyhow::Result<u8> {
    let found = read_groups_file(&groups).with_context(|| format!("groups file {}", groups.display()))?;
    let truth = read_groups_file(&truth).with_context(|| format!("truth file {}", truth.display()))?;
    let rates = tpr_fdr(&truth, &found)?;
    println!(
        "TPR {:.1}  FDR {:.1}  G_sim {:.3}  groups {}",
        100.0 * rates.tpr,
        100.0 * rates.fdr,
        g_sim(&truth, &found)?,
        found.len()
    );
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidArgument(_)) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Ablate(args) => ablate(args),
        Command::Score { groups, truth } => score(groups, truth),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
