//! Process wrapper around [`tsshuffle::cli::run`]: parses flags, overlays the JSON
//! config onto command defaults, writes the output files, and maps errors to exit
//! codes (1 validation/io, 2 numerical). Errors leave as one JSON record on stderr.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tsshuffle::cli::{run, CliError, Command, ExperimentConfig, OutputFile};

const GOLDEN_SHUFFLE_TABLE: &str = include_str!("../../goldens/shuffle_table.csv");

#[derive(Parser)]
#[command(
    name = "tsshuffle",
    version,
    about = "Deterministic experiments on period schedules, block shuffles, and layered heat limits"
)]
struct Args {
    /// Experiment to run; may instead come from the config file's "command" key.
    #[command(subcommand)]
    command: Option<CommandArg>,

    /// JSON file overlaying the command's default configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory the CSV files are written into.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Compare fresh output against the committed golden tables.
    #[arg(long, global = true)]
    golden: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum CommandArg {
    /// Emit the per-level permutation tables of the schedule.
    ShuffleTable,
    /// Sweep pairing residuals over ε and check the L² lower bounds.
    TwoScaleDemo,
    /// Build the tower of shuffled limits and report martingale diagnostics.
    MartingaleDemo,
    /// Compare the two-scale system against the coarse-grained shuffled system.
    HeatCrossValidate,
    /// Run resolved layered solves against the homogenized prediction.
    HeatEpsilonConverge,
}

impl From<CommandArg> for Command {
    fn from(arg: CommandArg) -> Self {
        match arg {
            CommandArg::ShuffleTable => Command::ShuffleTable,
            CommandArg::TwoScaleDemo => Command::TwoScaleDemo,
            CommandArg::MartingaleDemo => Command::MartingaleDemo,
            CommandArg::HeatCrossValidate => Command::HeatCrossValidate,
            CommandArg::HeatEpsilonConverge => Command::HeatEpsilonConverge,
        }
    }
}

fn main() -> ExitCode {
    match execute(&Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "exit": e.exit_code() })
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let config = build_config(args)?;
    let outputs = run(&config)?;
    std::fs::create_dir_all(&args.out)?;
    for file in &outputs {
        let path = args.out.join(&file.name);
        std::fs::write(&path, &file.contents)?;
        println!("wrote {}", path.display());
    }
    if args.golden {
        compare_golden(&config, &outputs)?;
        println!("golden tables match");
    }
    Ok(())
}

fn build_config(args: &Args) -> Result<ExperimentConfig, CliError> {
    let file_value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config parse: {e}")))?;
            Some(value)
        }
        None => None,
    };
    let file_command = match file_value.as_ref().and_then(|v| v.get("command")) {
        Some(c) => Some(
            serde_json::from_value::<Command>(c.clone())
                .map_err(|e| CliError::Validation(format!("config command: {e}")))?,
        ),
        None => None,
    };
    let command = match (args.command.map(Command::from), file_command) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Validation(
                "subcommand and config file name different commands".into(),
            ))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(CliError::Validation(
                "no command: pass a subcommand or a config file with a \"command\" key".into(),
            ))
        }
    };
    let mut merged = serde_json::to_value(ExperimentConfig::for_command(command))
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(value) = file_value {
        match value {
            serde_json::Value::Object(overlay) => {
                let base = merged.as_object_mut().expect("config serializes to an object");
                for (key, val) in overlay {
                    base.insert(key, val);
                }
            }
            _ => {
                return Err(CliError::Validation(
                    "config file must hold a JSON object".into(),
                ))
            }
        }
    }
    let mut config: ExperimentConfig = serde_json::from_value(merged)
        .map_err(|e| CliError::Validation(format!("config: {e}")))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn compare_golden(config: &ExperimentConfig, outputs: &[OutputFile]) -> Result<(), CliError> {
    if config.command != Command::ShuffleTable {
        return Err(CliError::Validation(
            "golden tables are committed for shuffle-table only".into(),
        ));
    }
    let table = outputs
        .iter()
        .find(|f| f.name == "shuffle_table.csv")
        .ok_or_else(|| CliError::Golden("run produced no shuffle_table.csv".into()))?;
    if table.contents != GOLDEN_SHUFFLE_TABLE {
        return Err(CliError::Golden(
            "shuffle_table.csv deviates from the committed table".into(),
        ));
    }
    Ok(())
}
