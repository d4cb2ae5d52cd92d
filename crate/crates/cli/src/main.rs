use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use subedmd::experiment::{self, ExperimentConfig, Scale};
use subedmd::optimizer::OptimizerStatus;

/// Subspace-optimised EDMD surrogates.
#[derive(Debug, Parser)]
#[command(name = "subedmd", version)]
struct Cli {
    /// Override the data seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample data and fit the transformed EDMD model.
    Train(StageArgs),
    /// Optimise the reduced subspace for a trained model.
    Optimize(StageArgs),
    /// Compare full and reduced predictions on the configured grids.
    Evaluate(StageArgs),
    /// Run the Duffing oscillator study end to end.
    ReplicateDuffing {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
        scale: ScaleArg,
    },
    /// Run the built-in property checks.
    Check,
}

#[derive(Debug, Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

struct NumericalFailure;

impl std::fmt::Debug for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("optimiser reported a numerical failure")
    }
}

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

impl std::error::Error for NumericalFailure {}

fn load_stage(args: &StageArgs, seed: Option<u64>) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = seed {
        cfg.data.seed = seed;
    }
    let Some(out) = args.out.clone().or_else(|| cfg.output_dir.clone()) else {
        return Err(subedmd::Error::Config("no output directory: pass --out or set output_dir".into()).into());
    };
    Ok((cfg, out))
}

fn check_status(status: OptimizerStatus) -> anyhow::Result<()> {
    if status == OptimizerStatus::NumericalFailure {
        return Err(NumericalFailure.into());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Train(args) => {
            let (cfg, out) = load_stage(args, cli.seed)?;
            let saved = experiment::run_train(&cfg, &out)?;
            println!(
                "model: M = {}, Gram residual {:e} -> {}",
                saved.model.dictionary_size(),
                saved.provenance.gram_residual,
                out.join(experiment::MODEL_FILE).display()
            );
        }
        Command::Optimize(args) => {
            let (cfg, out) = load_stage(args, cli.seed)?;
            let res = experiment::run_optimize(&cfg, &out)?;
            println!(
                "g_N: {:.6e} -> {:.6e} ({:?}, {} iterations)",
                res.subspace.objective_initial,
                res.subspace.objective_final,
                res.trace.status,
                res.trace.records.len() - 1
            );
            check_status(res.trace.status)?;
        }
        Command::Evaluate(args) => {
            let (cfg, out) = load_stage(args, cli.seed)?;
            let eval = experiment::run_evaluate(&cfg, &out)?;
            print_grids(&eval.summary);
        }
        Command::ReplicateDuffing { out, scale } => {
            let scale = match scale {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Full => Scale::Full,
            };
            let res = experiment::replicate_duffing(out, scale, cli.seed)?;
            let s = &res.evaluation.summary;
            println!(
                "M = {}, r = {}, g_N: {:.6e} -> {:.6e} ({:?})",
                s.dictionary_size, s.rank, s.objective_initial, s.objective_final, s.optimizer_status
            );
            print_grids(s);
            check_status(res.trace.status)?;
        }
        Command::Check => {
            let outcomes = subedmd::selfcheck::run_all()?;
            let mut failed = 0;
            for c in &outcomes {
                let tag = if c.passed() { "PASS" } else { "FAIL" };
                println!("{tag} {:<34} {:.3e} (tol {:.0e})", c.name, c.measured, c.tolerance);
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                bail!("{failed} of {} checks failed", outcomes.len());
            }
        }
    }
    Ok(())
}

fn print_grids(s: &experiment::Summary) {
    for g in &s.grids {
        println!(
            "grid {}: median eps_full {:.4e}, median eps_reduced {:.4e}, median diff {:.4e}, invalid {}",
            g.name, g.eps_full.median, g.eps_reduced.median, g.diff.median, g.diff.invalid_cells
        );
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<NumericalFailure>() {
        return EXIT_NUMERICAL;
    }
    match err.downcast_ref::<subedmd::Error>() {
        Some(subedmd::Error::Config(_) | subedmd::Error::Json(_)) => EXIT_CONFIG,
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
