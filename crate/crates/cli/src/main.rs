use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use p2s_cli::compare::run_matrix;
use p2s_cli::config::check_writable;
use p2s_cli::runner::{execute, prepare, write_split};
use p2s_cli::{apply, export, workers, CliError, Overrides, RunConfig, Target};
use p2s_core::grpo::Mode;

#[derive(Parser)]
#[command(name = "p2s", version, about = "Process-supervised GRPO on a toy arithmetic task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; omitted keys take built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (the whole matrix under `compare`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; beats P2S_OUT_DIR and the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Disable a component: gcf, rs, hri or pfr. Repeatable.
    #[arg(long, value_name = "TAG")]
    ablate: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Prime, train and evaluate a single run.
    Run(Common),
    /// Check a configuration, list every violated field, print the resolved file.
    Validate(Common),
    /// Run every seed and method in the comparison matrix.
    Compare(Common),
    /// Convert metrics streams to CSV tables.
    Export {
        /// Metrics files, or directories searched for metrics.jsonl.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "curves")]
        out: PathBuf,
    },
}

fn load(common: &Common, target: Target) -> Result<RunConfig, CliError> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let o = Overrides { seed: common.seed, out: common.out.clone(), mode: common.mode, ablate: common.ablate.clone() };
    apply(base, &o, target)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate(common) => {
            let config = load(&common, Target::Single)?;
            print!("{}", config.resolved().to_toml_string());
            eprintln!("ok: no violations");
        }
        Command::Run(common) => {
            let config = load(&common, Target::Single)?.resolved();
            check_writable(&config.out_dir)?;
            let prepared = prepare(&config)?;
            write_split(&config.out_dir, &prepared.split, &prepared.vocab)?;
            let summary = execute(&config, &prepared, &config.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?);
        }
        Command::Compare(common) => {
            let config = load(&common, Target::Matrix)?;
            check_writable(&config.out_dir)?;
            let cmp = run_matrix(&config, &config.out_dir, workers()?)?;
            let table = std::fs::read_to_string(config.out_dir.join("comparison.md"))?;
            println!("{} runs\n{table}", cmp.runs.len());
        }
        Command::Export { inputs, out } => {
            let tables = export::export(&inputs, &out)?;
            for (name, _) in export::CURVES {
                println!("{}: {} rows", out.join(format!("{name}.csv")).display(), tables.rows(name).len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
