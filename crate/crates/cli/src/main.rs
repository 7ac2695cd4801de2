use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glmdp_cli::commands::print_line;
use glmdp_cli::{cmd_generate, cmd_report, cmd_run, cmd_sweep, CliResult, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "glmdp", version, about = "Offline RL experiments on generalized linear MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test datasets and a manifest for every replication.
    Generate(Common),
    /// Train, select c, and evaluate each method on each replication.
    Run(Common),
    /// Aggregate results.jsonl into plot-data CSVs.
    Report {
        /// Directory holding results.jsonl.
        dir: PathBuf,
        /// Where to write the CSVs; defaults to DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sample-size and labeled-ratio studies.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            methods: self.methods.clone(),
            reps: self.reps,
            workers: self.workers,
        };
        ExperimentConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(c) => {
            let config = c.resolve()?;
            let m = cmd_generate(&config)?;
            let episodes: usize = m.cells[0].replications.iter().filter_map(|r| r.train.as_ref()).map(|t| t.episodes).sum();
            print_line(&format!("wrote {} replication(s), {episodes} training episodes, to {}", config.reps, config.out.display()));
        }
        Command::Run(c) => {
            let config = c.resolve()?;
            let outcome = cmd_run(&config)?;
            print_line(&format!("wrote {} record(s) to {}", outcome.records.len(), config.out.display()));
        }
        Command::Sweep(c) => {
            let config = c.resolve()?;
            let outcome = cmd_sweep(&config)?;
            print_line(&format!(
                "wrote {} record(s) over {} cell(s) to {}",
                outcome.records.len(),
                outcome.manifest.cells.len(),
                config.out.display()
            ));
        }
        Command::Report { dir, out } => {
            let r = cmd_report(&dir, out.as_deref())?;
            print_line(&format!("aggregated {} record(s); {} corrupt line(s) skipped", r.records, r.corrupt_lines));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
