use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use ur3_cli::config::RunConfig;
use ur3_cli::{fixture, pipeline};

#[derive(Parser)]
#[command(
    name = "ur3",
    version,
    about = "BM25 retrieval with language-model risk re-ranking"
)]
struct Cli {
    /// Key=value configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Weight on the document-likelihood term of the risk.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Interpolation weight on the retriever score.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Candidate pool size per query.
    #[arg(long, global = true)]
    pool: Option<usize>,

    /// Scoring backend: ngram or http.
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Content-addressed cache for backend responses.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Output directory for artifacts and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Skip queries whose scoring fails instead of aborting.
    #[arg(long, global = true)]
    allow_partial: bool,

    /// Write per-pool-size timing aggregates.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the BM25 index snapshot from the corpus.
    Index,
    /// Produce a first-stage run file (BM25 search or run-file import).
    Retrieve,
    /// Re-rank a run file with the configured method and backend.
    Rerank {
        #[arg(long)]
        run: PathBuf,
        /// none, upr, ur3, or interpolation.
        #[arg(long)]
        method: Option<String>,
    },
    /// Score one or more run files against the dataset.
    Eval {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
    /// Generate answers from the top passages and score them.
    Qa {
        #[arg(long)]
        run: PathBuf,
        /// How many passages go into the reader prompt (1 to 5).
        #[arg(long, default_value_t = 5)]
        top_n: usize,
    },
    /// Diagnostics comparing a baseline run against a treatment run.
    Analyze {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Score sidecar of the treatment run, enables calibration output.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Re-derive rankings from a score sidecar across alpha values.
    SweepAlpha {
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1")]
        alphas: Vec<f64>,
    },
    /// Write the synthetic benchmark bundle and its ground truth.
    Fixture,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(alpha) = cli.alpha {
        config.alpha = alpha;
    }
    if let Some(lambda) = cli.lambda {
        config.lambda = lambda;
    }
    if let Some(pool) = cli.pool {
        config.pool = pool;
    }
    if let Some(backend) = &cli.backend {
        config.backend = backend.parse()?;
    }
    if let Some(cache_dir) = &cli.cache_dir {
        config.cache_dir = Some(cache_dir.clone());
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if cli.timing {
        config.timing = true;
    }
    config.validate()?;

    match cli.command {
        Cmd::Index => {
            pipeline::cmd_index(&config)?;
        }
        Cmd::Retrieve => {
            pipeline::cmd_retrieve(&config)?;
        }
        Cmd::Rerank { run, method } => {
            if let Some(method) = method {
                config.method = method.parse()?;
            }
            pipeline::cmd_rerank(&config, &run, cli.allow_partial)?;
        }
        Cmd::Eval { runs } => {
            pipeline::cmd_eval(&config, &runs)?;
        }
        Cmd::Qa { run, top_n } => {
            pipeline::cmd_qa(&config, &run, top_n, cli.allow_partial)?;
        }
        Cmd::Analyze {
            before,
            after,
            sidecar,
        } => {
            pipeline::cmd_analyze(&config, &before, &after, sidecar.as_deref())?;
        }
        Cmd::SweepAlpha { sidecar, alphas } => {
            pipeline::cmd_sweep_alpha(&config, &sidecar, &alphas)?;
        }
        Cmd::Fixture => {
            fixture::cmd_fixture(&config)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
