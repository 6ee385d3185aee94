use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bcwidth_cli::{commands, effective_config};

#[derive(Parser)]
#[command(
    name = "bcwidth",
    about = "Width search with a bilaterally coupled supernet under FLOPs budgets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Width file to retrain (JSON array of channel counts); defaults to the
    /// search output in the output directory.
    #[arg(long)]
    width: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared-weight supernet and record the loss ledger.
    Train(CommonArgs),
    /// Run the budgeted evolutionary width search against trained weights.
    Search(CommonArgs),
    /// Retrain a fixed width from scratch and report test accuracy.
    Retrain(RetrainArgs),
    /// Audit cardinalities, fairness, rank fidelity and populations.
    Analyze(CommonArgs),
    /// Render analysis artifacts as SVG charts.
    Plot(CommonArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let (config, out) =
                effective_config(&args.config, args.out.as_deref(), args.seed)?;
            commands::cmd_train(&config, &out)
        }
        Command::Search(args) => {
            let (config, out) =
                effective_config(&args.config, args.out.as_deref(), args.seed)?;
            commands::cmd_search(&config, &out)
        }
        Command::Retrain(args) => {
            let (config, out) =
                effective_config(&args.common.config, args.common.out.as_deref(), args.common.seed)?;
            commands::cmd_retrain(&config, &out, args.width.as_deref())
        }
        Command::Analyze(args) => {
            let (config, out) =
                effective_config(&args.config, args.out.as_deref(), args.seed)?;
            commands::cmd_analyze(&config, &out)
        }
        Command::Plot(args) => {
            let (config, out) =
                effective_config(&args.config, args.out.as_deref(), args.seed)?;
            commands::cmd_plot(&config, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = format!("{err:#}").replace('\n', "; ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
