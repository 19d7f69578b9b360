use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tdm_cli::commands::{cmd_clear, cmd_run, cmd_verify, ClearArgs, MarketKind, RunArgs};
use tdm_core::risk::CvarFormula;

/// Strategic producer bidding into coupled transmission and distribution markets.
#[derive(Debug, Parser)]
#[command(name = "tdm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Formula {
    PaperLiteral,
    StandardTail,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Market {
    Wm,
    Dm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run market cases over the seasons of an experiment config.
    Run {
        /// A, B, C, D, a comma-separated list, or `all`.
        #[arg(long)]
        case: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        #[arg(long, value_enum)]
        cvar_formula: Option<Formula>,
        /// Worker threads; defaults to the number of logical cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the joint-game MPEC with a brute-force offer grid.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        /// Grid spacing in MW.
        #[arg(long, allow_negative_numbers = true)]
        grid_step: f64,
    },
    /// Clear one market on its own and report prices and dispatch.
    Clear {
        #[arg(long, value_enum)]
        market: Market,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        demand: PathBuf,
        /// CSV with columns unit,bus,cost,hour,mw.
        #[arg(long)]
        offer: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Price at the feeder root in $/MWh (distribution only).
        #[arg(long)]
        substation_price: Option<f64>,
        /// Import limit at the feeder root in MW.
        #[arg(long, default_value_t = 10_000.0)]
        substation_capacity: f64,
        /// Use a polygon with this many sides for the feeder limits.
        #[arg(long)]
        sides: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TDML_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            case,
            config,
            out,
            seed,
            epsilon,
            cvar_formula,
            jobs,
        } => cmd_run(&RunArgs {
            case,
            config,
            out,
            seed,
            epsilon,
            cvar_formula: cvar_formula.map(|f| match f {
                Formula::PaperLiteral => CvarFormula::PaperLiteral,
                Formula::StandardTail => CvarFormula::StandardTail,
            }),
            jobs: jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        }),
        Command::Verify { instance, grid_step } => cmd_verify(&instance, grid_step),
        Command::Clear {
            market,
            network,
            demand,
            offer,
            out,
            substation_price,
            substation_capacity,
            sides,
        } => cmd_clear(&ClearArgs {
            market: match market {
                Market::Wm => MarketKind::Wm,
                Market::Dm => MarketKind::Dm,
            },
            network,
            demand,
            offer,
            out,
            substation_price,
            substation_capacity,
            sides,
        }),
    };
    ExitCode::from(code as u8)
}
