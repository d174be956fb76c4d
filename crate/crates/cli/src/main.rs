use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use detec_cli::{commands, exit, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "detec", version, about = "Data-driven dynamic event-triggered control: design and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the excitation experiment and write the data set
    Collect(Common),
    /// Solve both design LMIs from a data set
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Data CSV (default: <out>/data.csv)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Simulate the event-triggered closed loop
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Synthesis JSON (default: <out>/synthesis.json)
        #[arg(long)]
        synthesis: Option<PathBuf>,
    },
    /// Run the full pipeline once per grid point
    Sweep(Common),
    /// Tabulate summary files
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Also write report.txt here
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Collect(c) => {
            let (cfg, out) = resolve(&c)?;
            commands::collect(&cfg, &out)
        }
        Command::Synthesize { common, data } => {
            let (cfg, out) = resolve(&common)?;
            commands::synthesize(&cfg, &out, data.as_deref())
        }
        Command::Simulate { common, synthesis } => {
            let (cfg, out) = resolve(&common)?;
            commands::simulate(&cfg, &out, synthesis.as_deref())
        }
        Command::Sweep(c) => {
            let (cfg, out) = resolve(&c)?;
            commands::sweep(&cfg, &out)
        }
        Command::Report { summaries, out } => commands::report(&summaries, out.as_deref().map(Path::new)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::from(exit::SUCCESS as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(detec_core::Error::RankDeficient { .. }) = e {
                eprintln!("the data are not informative enough: collect more samples or a richer input");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
