//! `fedlab` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration / argument error, 3 I/O or parse
//! error, 4 numeric failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregation::{AggregatorSpec, MatrixKind, AGGREGATOR_NAMES};
use crate::diagnostics::{
    cosine_similarity_selected, decomposed_similarity, mean_offdiagonal, read_update_dump, Selector,
};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, run_pretrain, RunConfig};
use crate::linalg::{read_matrix, write_matrix};
use crate::rpca::{robust_pca, RpcaConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fedlab", version, about = "Federated LoRA fine-tuning with robust-PCA aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the frozen base model on the source data.
    Pretrain(PretrainArgs),
    /// Run a federated fine-tuning experiment.
    Run(RunArgs),
    /// Decompose a matrix file into low-rank and sparse parts.
    Rpca(RpcaArgs),
    /// Cosine similarity between dumped client updates.
    Similarity(SimilarityArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Overrides `seed` (fallback: FEDLAB_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// One of fedavg, scaled, ties, fedrpca (default parameters).
    #[arg(long)]
    pub aggregator: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RpcaArgs {
    pub input: PathBuf,
    pub low_rank_out: PathBuf,
    pub sparse_out: PathBuf,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MatrixArg {
    A,
    B,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    /// Directory of `client_<id>/layer<k>_dA.txt`, `layer<k>_dB.txt`.
    pub updates_dir: PathBuf,
    /// Output similarity matrix.
    pub out_matrix: PathBuf,
    /// Only this layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Only this factor.
    #[arg(long, value_enum)]
    pub matrix: Option<MatrixArg>,
    /// Also report similarity of the robust-PCA low-rank and sparse parts.
    #[arg(long)]
    pub decompose: bool,
}

/// Exit code for an error, by its root cause.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Numeric(_) | Error::ShapeMismatch { .. } | Error::Round { .. } => EXIT_NUMERIC,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn pretrain_cmd(args: &PretrainArgs) -> Result<()> {
    let cfg = load_config(&args.common)?.resolve()?;
    let dir = run_pretrain(&cfg)?;
    println!("checkpoint {}", dir.display());
    Ok(())
}

fn run_cmd(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(name) = &args.aggregator {
        cfg.aggregator = AggregatorSpec::from_name(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown aggregator {name:?}; expected one of {}",
                AGGREGATOR_NAMES.join(", ")
            ))
        })?;
    }
    let go = || run_experiment(&cfg);
    let out = match args.threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(go)?,
        None => go()?,
    };
    println!("metrics {}", out.metrics_path.display());
    println!("final_accuracy {:.6}", out.final_accuracy);
    match out.r90 {
        Some(r) => println!("R@90 {r}"),
        None => println!("R@90 not reached"),
    }
    Ok(())
}

fn rpca_cmd(args: &RpcaArgs) -> Result<()> {
    let cfg = RpcaConfig {
        mu: args.mu,
        lambda: args.lambda,
        tol: args.tol,
        max_iter: args.max_iter,
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let m = read_matrix(&args.input)?;
    let dec = robust_pca(&m, &cfg)?;
    write_matrix(&args.low_rank_out, &dec.low_rank)?;
    write_matrix(&args.sparse_out, &dec.sparse)?;
    println!("iterations {}", dec.iterations);
    println!("residual {:e}", dec.residual);
    println!("converged {}", dec.converged);
    Ok(())
}

fn similarity_cmd(args: &SimilarityArgs) -> Result<()> {
    let updates = read_update_dump(&args.updates_dir)?;
    let selector = Selector {
        layer: args.layer,
        matrix: args.matrix.map(|m| match m {
            MatrixArg::A => MatrixKind::A,
            MatrixArg::B => MatrixKind::B,
        }),
    };
    let c = cosine_similarity_selected(&updates, selector)?;
    write_matrix(&args.out_matrix, &c)?;
    println!("clients {}", updates.len());
    println!("mean_offdiagonal {}", mean_offdiagonal(&c)?);
    if args.decompose {
        let d = decomposed_similarity(&updates, selector, &RpcaConfig::default())?;
        let (_, low, sparse) = d.means()?;
        println!("mean_offdiagonal_low_rank {low}");
        println!("mean_offdiagonal_sparse {sparse}");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Rpca(a) => rpca_cmd(a),
        Command::Similarity(a) => similarity_cmd(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
