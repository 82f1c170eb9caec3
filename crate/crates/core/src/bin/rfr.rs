use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rfr_core::checks::{reports_to_json, run_battery, VerifyOptions, DEFAULT_ASCENT_STEPS, DEFAULT_TRIALS};
use rfr_core::config::ExperimentConfig;
use rfr_core::error::RfrError;
use rfr_core::linalg::DenseMatrix;
use rfr_core::rank::rank_report;
use rfr_core::runner::{run_sweep, run_train, Summary, SweepParam};

/// Effective-rank feature-richness regularization toolkit.
#[derive(Parser, Debug)]
#[command(name = "rfr", version, arg_required_else_help = true)]
struct Cli {
    /// Replace the config's seed list (or the verify seeds) with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Worker threads for multi-run commands (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Print the default experiment config as TOML and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank report (rank, trank, erank) of a CSV matrix, one sample per row.
    Rank {
        matrix: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
    },
    /// Run the incremental protocol for every seed in a config.
    Train { config: PathBuf },
    /// Sweep one parameter and report AIC against the alpha = 0 baseline.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run the entropy / effective-rank verification battery.
    Verify {
        #[arg(long, value_delimiter = ',', default_value = "2,8,64")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = DEFAULT_ASCENT_STEPS)]
        steps: usize,
        /// Replace every check's tolerance (negative values force failures).
        #[arg(long, allow_negative_numbers = true)]
        tolerance: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Param {
    Alpha,
    BaseClasses,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<RfrError> for Failure {
    fn from(e: RfrError) -> Self {
        match e {
            RfrError::Config(_)
            | RfrError::Parse { .. }
            | RfrError::BadRho(_)
            | RfrError::BadSplit(_)
            | RfrError::Io { .. }
            | RfrError::TruncatedFile(_)
            | RfrError::LabelOutOfRange { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.outdir {
        cfg.outdir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn print_summary(s: &Summary) {
    println!("run {} over seeds {:?}", s.name, s.seeds);
    println!("  AIC               {} ± {}", pct(s.aic.mean), pct(s.aic.std));
    println!("  novel accuracy    {} ± {}", pct(s.mean_novel_acc.mean), pct(s.mean_novel_acc.std));
    println!("  final forgetting  {} ± {}", pct(s.final_forgetting.mean), pct(s.final_forgetting.std));
    println!("  base pool erank   {:.3} ± {:.3}", s.base_erank_pool.mean, s.base_erank_pool.std);
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.print_default_config {
        print!("{}", ExperimentConfig::default().to_toml_string());
        return Ok(());
    }
    let Some(cmd) = &cli.command else {
        return Err(Failure::Usage("no subcommand given".into()));
    };
    match cmd {
        Command::Rank { matrix, rho } => {
            let h = DenseMatrix::read_csv(matrix)?;
            println!("{}", rank_report(&h, *rho)?.to_json());
        }
        Command::Train { config } => {
            let cfg = load_config(config, cli)?;
            let summary = run_train(&cfg, config.parent(), cli.jobs)?;
            print_summary(&summary);
        }
        Command::Sweep { config, param, values } => {
            let cfg = load_config(config, cli)?;
            let param = match param {
                Param::Alpha => SweepParam::Alpha,
                Param::BaseClasses => SweepParam::BaseClasses,
            };
            let rows = run_sweep(&cfg, param, values, config.parent(), cli.jobs)?;
            for r in rows.iter().filter(|r| r.seed.is_none()) {
                println!(
                    "{} = {}: AIC {} (baseline {}, improvement {:+.2} points)",
                    param.name(),
                    r.value,
                    pct(r.aic),
                    pct(r.aic_baseline),
                    100.0 * r.improvement
                );
            }
        }
        Command::Verify { dims, trials, seeds, steps, tolerance } => {
            if dims.iter().any(|&d| d < 2) {
                return Err(Failure::Usage("dims: every dimension must be at least 2".into()));
            }
            let opts = VerifyOptions {
                dims: dims.clone(),
                trials: *trials,
                ascent_steps: *steps,
                seeds: cli.seed.map_or_else(|| seeds.clone(), |s| vec![s]),
                tolerance_override: *tolerance,
            };
            let reports = rfr_core::runner::with_pool(cli.jobs, || run_battery(&opts))??;
            println!("{}", reports_to_json(&reports)?);
            let failed: Vec<String> = reports
                .iter()
                .filter(|r| !r.passed)
                .map(|r| format!("{} (dim {}, seed {})", r.name, r.dim, r.seed))
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Run(format!("checks failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
