//! The `comprehend` command line: strict INI configuration, chained pipeline
//! stages and a provenance log.

pub mod config;
pub mod error;
pub mod stages;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use sha2::{Digest, Sha256};

use config::{parse_ini, parse_override, Effective, PipelineConfig};
pub use error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Synth,
    Preprocess,
    Features,
    Assemble,
    Train,
    Evaluate,
    Report,
    Bench,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Synth => "synth",
            Self::Preprocess => "preprocess",
            Self::Features => "features",
            Self::Assemble => "assemble",
            Self::Train => "train",
            Self::Evaluate => "evaluate",
            Self::Report => "report",
            Self::Bench => "bench",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "comprehend", version, about = "EEG + syntax comprehension pipeline")]
pub struct Cli {
    /// Commands to run, left to right.
    #[arg(required = true, value_enum)]
    pub commands: Vec<Stage>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// correctness | confusion
    #[arg(long)]
    pub task: Option<String>,
    /// eeg | eeg+nlp | eeg+nlp+con
    #[arg(long)]
    pub features: Option<String>,
    /// lr | rf | svm | stack
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `section.key=value`, may repeat; applied after the file.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

pub const EFFECTIVE_CONFIG: &str = "effective_config.ini";
pub const RUN_LOG: &str = "run_log.csv";
pub const RUN_LOG_HEADER: &str = "unix_time,commands,config_sha256,seed,versions,status";

pub fn versions() -> String {
    format!("comprehend-cli {};comprehend-core {}", env!("CARGO_PKG_VERSION"), comprehend_core::VERSION)
}

/// Effective configuration: file, then `--set`, then the dedicated flags.
pub fn effective_config(cli: &Cli) -> Result<Effective, CliError> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::config(format!("config file {} not found", p.display())),
                _ => CliError::io(p, e),
            })?;
            parse_ini(&text, &p.display().to_string())?
        }
        None => BTreeMap::new(),
    };
    let mut ov = cli.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let mut flag = |sec: &str, key: &str, v: Option<String>| {
        if let Some(v) = v {
            ov.push(((sec.to_string(), key.to_string()), v));
        }
    };
    flag("run", "seed", cli.seed.map(|s| s.to_string()));
    flag("run", "task", cli.task.clone());
    flag("run", "features", cli.features.clone());
    flag("run", "method", cli.method.clone());
    flag("paths", "out_dir", cli.out.as_ref().map(|p| p.display().to_string()));
    Ok(Effective::merge(&file, &ov))
}

fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<(), CliError> {
    match stage {
        Stage::Synth => stages::synth(cfg),
        Stage::Preprocess => stages::preprocess_stage(cfg),
        Stage::Features => stages::features_stage(cfg),
        Stage::Assemble => stages::assemble_stage(cfg),
        Stage::Train => stages::train_stage(cfg),
        Stage::Evaluate => stages::evaluate_stage(cfg),
        Stage::Report => stages::report_stage(cfg),
        Stage::Bench => stages::bench_stage(cfg),
    }
}

/// Validates the configuration, echoes it into the output directory, runs
/// the commands in order and appends a provenance line whatever the outcome.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let eff = effective_config(cli)?;
    let cfg = PipelineConfig::from_effective(&eff)?;
    let text = eff.render();
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    let out = &cfg.paths.out_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let echo = out.join(EFFECTIVE_CONFIG);
    fs::write(&echo, &text).map_err(|e| CliError::io(&echo, e))?;

    let mut result = Ok(());
    for &stage in &cli.commands {
        log::info!("running {}", stage.name());
        result = run_stage(stage, &cfg);
        if result.is_err() {
            break;
        }
    }
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => e.category().to_string(),
    };
    let commands: Vec<&str> = cli.commands.iter().map(|s| s.name()).collect();
    let log_path = out.join(RUN_LOG);
    let fresh = fs::metadata(&log_path).map(|m| m.len() == 0).unwrap_or(true);
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut line = String::new();
    if fresh {
        line.push_str(RUN_LOG_HEADER);
        line.push('\n');
    }
    line.push_str(&format!("{ts},{},{hash},{},{},{status}\n", commands.join(" "), cfg.seed, versions()));
    let logged = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| CliError::io(&log_path, e));
    result.and(logged)
}

/// Parses arguments, runs, prints the one-line error and returns the exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first.to_string()).line());
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
