//! `antigenic`: ingest HI titres, featurize strain pairs, run the
//! supervised/semi-supervised sweep, and render report tables.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use antigenic_core::eval::figures::FigureOptions;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "antigenic", version, about = "Semi-supervised antigenicity prediction")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Show what would be done without computing or writing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Print the merged configuration as TOML and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse FASTA and titre CSV, label pairs, write corpus.csv and ingest.log.
    Ingest,
    /// Write one pair-feature CSV per embedding file.
    Featurize,
    /// Run the nested cross-validation sweep.
    Run {
        /// Comma-separated supervision ratios to keep, e.g. `0.25,0.5`.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Build figure CSVs (and SVGs) from a report.
    Report {
        /// Report JSON (default: <out>/report.json).
        #[arg(long)]
        input: Option<PathBuf>,
        /// One panel per subtype.
        #[arg(long)]
        per_subtype: bool,
        /// Also emit SVG bar charts.
        #[arg(long)]
        svg: bool,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ratios = match &cli.command {
        Command::Run { ratios } => ratios.clone(),
        _ => None,
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        ratios,
    })?;
    cfg.validate()?;
    if cli.print_effective_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest => commands::ingest(&cfg, cli.dry_run).map(|_| ()),
        Command::Featurize => commands::featurize(&cfg, cli.dry_run),
        Command::Run { .. } => commands::run(&cfg, cli.dry_run),
        Command::Report { input, per_subtype, svg } => {
            commands::report(&cfg, input.as_deref(), FigureOptions { per_subtype, svg }, cli.dry_run)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
