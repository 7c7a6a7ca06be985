use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use zinmf_cli::commands::{cmd_evaluate, cmd_fit, cmd_selfcheck, cmd_simulate, FitOverrides};
use zinmf_cli::CliError;

#[derive(Parser)]
#[command(name = "zinmf", version, about = "Zero-inflated multi-study Poisson NMF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset with its ground truth
    Simulate {
        /// 1, 2, 3, clustering (Scenario 1 backbone) or clustering2
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fraction of the full study sizes
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Gibbs sampler on a dataset directory
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Flat JSON of hyperparameters and run settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        /// Worker threads; chains run in parallel, results do not depend on this
        #[arg(long, env = "ZINMF_THREADS", default_value_t = 1)]
        threads: usize,
        /// Freeze patterns that stay in the spike cluster
        #[arg(long)]
        prune: bool,
    },
    /// Compare a fit against simulation truth
    Evaluate {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit directory of a degenerate baseline run for the tertile comparison
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Check the sampling primitives, every conditional kernel and the joint distribution
    Selfcheck {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 50_000)]
        rounds: usize,
        #[arg(long, default_value_t = 2718)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Simulate { scenario, seed, scale, out } => {
            let manifest = cmd_simulate(&scenario, seed, scale, &out)?;
            println!("wrote {} files to {}", manifest.outputs.len(), out.display());
        }
        Command::Fit { data, config, out, seed, iterations, burn_in, thin, chains, threads, prune } => {
            let overrides = FitOverrides { seed, iterations, burn_in, thin, chains, prune };
            let manifest = cmd_fit(&data, config.as_deref(), &out, &overrides, threads, &mut std::io::stderr())?;
            println!("wrote {} files to {} in {:.1}s", manifest.outputs.len(), out.display(), manifest.runtime_secs);
        }
        Command::Evaluate { fit, truth, out, baseline } => {
            cmd_evaluate(&fit, &truth, &out, baseline.as_deref())?;
            println!("wrote {}", out.join("metrics.csv").display());
        }
        Command::Selfcheck { pairs, rounds, seed } => {
            if !cmd_selfcheck(pairs, rounds, seed, &mut std::io::stdout())? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
