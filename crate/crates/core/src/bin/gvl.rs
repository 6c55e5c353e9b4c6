use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gvl::app::{self, AppError, RunConfig};
use gvl::taxonomy::ClusterSpec;

#[derive(Parser)]
#[command(name = "gvl", version, about = "Zero-shot geospatial patch classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Describe every patch with the vision model.
    Describe(Common),
    /// Classify every patch into the flat class list.
    Classify(Common),
    /// Build a meta-class taxonomy from the class list.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// Meta-class counts per level, e.g. `4,3`. Overrides `cluster.sizes`.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Classify coarse-to-fine over the taxonomy.
    RunHier(Common),
    /// Score predictions and write report tables.
    Evaluate(Common),
}

fn load(common: &Common) -> Result<RunConfig, AppError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = std::path::absolute(out).map_err(|source| AppError::Io {
            path: out.display().to_string(),
            source,
        })?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<app::CommandOutput, AppError> {
    match cli.command {
        Command::Describe(c) => app::cmd_describe(&load(&c)?),
        Command::Classify(c) => app::cmd_classify(&load(&c)?),
        Command::Cluster { common, sizes } => {
            let cfg = load(&common)?;
            let spec = sizes
                .map(ClusterSpec::new)
                .transpose()
                .map_err(|e| app::ConfigError::new("--sizes", e.to_string()))?;
            app::cmd_cluster(&cfg, spec.as_ref())
        }
        Command::RunHier(c) => app::cmd_run_hierarchical(&load(&c)?),
        Command::Evaluate(c) => app::cmd_evaluate(&load(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            for path in &out.outputs {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
