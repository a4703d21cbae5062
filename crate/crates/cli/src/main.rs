use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use matherkit_cli::config::ConfigError;
use matherkit_cli::run::{RunError, RunManifest};
use matherkit_cli::scenarios::{find, BUNDLED};
use matherkit_cli::{parse_config, parse_config_str, run_scenario, ScenarioConfig};

const EXIT_VALIDATION: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "matherkit", version, about = "Weak KAM, Aubry set and chain recurrence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config (a path, or the name of a bundled scenario).
    Run {
        config: String,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: String },
    /// List the bundled scenarios.
    ListScenarios,
}

fn load(config: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(config);
    match find(config) {
        Some(b) if !path.is_file() => parse_config_str(b.text, Path::new(".")),
        _ => parse_config(path),
    }
}

fn report_config_error(e: &ConfigError) {
    match e {
        ConfigError::Validation(v) => {
            for err in v {
                eprintln!("ValidationError({}, {})", err.field, err.constraint);
            }
        }
        ConfigError::Parse(p) => eprintln!("ParseError({}, {})", p.line, p.message),
        e => eprintln!("{e}"),
    }
}

fn print_stages(m: &RunManifest) {
    for s in &m.stages {
        eprintln!("stage {:<16} {:<8} {:.3}s", s.name, s.status, s.wall_clock.as_secs_f64());
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("MATHERKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("MATHERKIT_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("{e}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    match cli.command {
        Command::ListScenarios => {
            for b in BUNDLED {
                println!("{:<28} {}", b.name, b.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}: {} experiment, output to {}", cfg.name, cfg.experiment.kind(), cfg.output_dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                report_config_error(&e);
                ExitCode::from(EXIT_VALIDATION)
            }
        },
        Command::Run { config, output_dir } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => {
                    report_config_error(&e);
                    return ExitCode::from(EXIT_VALIDATION);
                }
            };
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            match run_scenario(&cfg) {
                Ok(m) => {
                    print_stages(&m);
                    println!("{}", cfg.output_dir.display());
                    for f in &m.files {
                        println!("  {}", f.path);
                    }
                    ExitCode::SUCCESS
                }
                Err(RunError::Stage { stage, message, manifest }) => {
                    print_stages(&manifest);
                    eprintln!("stage {stage} failed: {message}");
                    ExitCode::from(EXIT_STAGE)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_STAGE)
                }
            }
        }
    }
}
