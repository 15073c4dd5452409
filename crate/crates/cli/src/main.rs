use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shel::harness::Scoreboard;
use shel::io::{cmd_basis, cmd_fit, cmd_loo, cmd_simulate, CommandError, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "shel",
    version,
    about = "Hierarchical empirical likelihood spatial models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every model in the roster and write chains and posterior summaries.
    Fit(Common),
    /// Leave-one-out MSPE of the roster on the configured dataset.
    Loo(Common),
    /// Simulation study: synthetic replicates, leave-one-out, scoreboard.
    Simulate(Common),
    /// Moran basis, retained eigenvalues and the M'QM positive-definiteness report.
    Basis(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated model names to keep from the roster.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Comma-separated location indices to hold out.
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
    /// Worker threads; all cores when unset.
    #[arg(long, env = "SHEL_THREADS")]
    threads: Option<usize>,
    /// Do not prepend an intercept column. Not allowed with Moran-ICAR models.
    #[arg(long)]
    no_intercept: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            models: self.models.clone(),
            folds: self.folds.clone(),
            no_intercept: self.no_intercept,
        }
    }

    fn load(&self) -> Result<RunConfig, CommandError> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }
}

fn scoreboard_text(board: &Scoreboard) -> String {
    let mut s = String::new();
    for (name, score) in &board.per_model {
        let mean = score
            .mean_mspe
            .map_or("n/a".to_string(), |m| format!("{m:.6}"));
        s.push_str(&format!(
            "{name:<24} mean MSPE {mean:>14}  failed folds {}\n",
            score.failed_folds
        ));
    }
    for (pair, r) in &board.reductions {
        let win = board.win_rates.get(pair).copied().unwrap_or(f64::NAN);
        s.push_str(&format!(
            "{pair:<40} reduction {r:>8.2}%  win rate {win:.2}\n"
        ));
    }
    s
}

fn run(command: &Command) -> Result<String, CommandError> {
    let common = match command {
        Command::Fit(c) | Command::Loo(c) | Command::Simulate(c) | Command::Basis(c) => c,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CommandError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CommandError::Config(e.to_string()))?;
    }
    let cfg = common.load()?;
    match command {
        Command::Fit(_) => cmd_fit(&cfg),
        Command::Loo(_) => cmd_loo(&cfg).map(|b| scoreboard_text(&b)),
        Command::Simulate(_) => cmd_simulate(&cfg).map(|b| scoreboard_text(&b)),
        Command::Basis(_) => cmd_basis(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
