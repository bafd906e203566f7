use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dttd_core::network::Fault;

use crate::config::{absolute, read_json, AnalyzeKind, GenSpec, ModelChoice, RunConfig, RunRecord, TrainConfig};
use crate::error::{HarnessError, Result};
use crate::gradcheck::run_gradcheck;
use crate::run::execute;

pub const THREADS_ENV: &str = "DTTD_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dttd", version, about = "Synthetic RGBD pose estimation runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AnalyzeArg {
    Tokens,
    Attention,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene directory from a JSON scene spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on one or more scene directories.
    Train {
        #[arg(long, required = true)]
        scene: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a scene.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints across calibrated depth-noise levels.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// `TAG=PATH`, repeatable.
        #[arg(long, required = true)]
        ckpt: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive and network block.
    Gradcheck {
        /// JSON file holding a model config or a preset name such as "toy".
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export token histograms or attention maps for one frame.
    Analyze {
        kind: AnalyzeArg,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a run.json.
    Replay {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_ckpt(arg: &str) -> Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((tag, path)) if !tag.is_empty() && !path.is_empty() => Ok((tag.to_string(), absolute(Path::new(path))?)),
        _ => Err(HarnessError::Validation(format!(
            "--ckpt expects TAG=PATH, got {arg:?}"
        ))),
    }
}

/// Resolved run configuration and output directory of a command.
pub fn resolve(command: Command) -> Result<(RunConfig, Option<PathBuf>)> {
    Ok(match command {
        Command::Gen { spec, out } => (
            RunConfig::Gen {
                spec: read_json::<GenSpec>(&spec)?,
            },
            Some(out),
        ),
        Command::Train {
            scene,
            config,
            epochs,
            seed,
            out,
        } => (
            RunConfig::Train {
                scenes: scene.iter().map(|s| absolute(s)).collect::<Result<_>>()?,
                config: read_json::<TrainConfig>(&config)?,
                epochs,
                seed,
            },
            Some(out),
        ),
        Command::Eval { scene, ckpt, out } => (
            RunConfig::Eval {
                scene: absolute(&scene)?,
                ckpt: absolute(&ckpt)?,
            },
            Some(out),
        ),
        Command::Sweep {
            spec,
            ckpt,
            levels,
            seeds,
            out,
        } => (
            RunConfig::Sweep {
                spec: read_json::<GenSpec>(&spec)?,
                ckpts: ckpt.iter().map(|c| parse_ckpt(c)).collect::<Result<_>>()?,
                levels,
                seeds,
            },
            Some(out),
        ),
        Command::Gradcheck { config, seed, out } => (
            RunConfig::Gradcheck {
                model: read_json::<ModelChoice>(&config)?,
                seed,
            },
            out,
        ),
        Command::Analyze {
            kind,
            scene,
            ckpt,
            frame,
            out,
        } => (
            RunConfig::Analyze {
                kind: match kind {
                    AnalyzeArg::Tokens => AnalyzeKind::Tokens,
                    AnalyzeArg::Attention => AnalyzeKind::Attention,
                },
                scene: absolute(&scene)?,
                ckpt: absolute(&ckpt)?,
                frame,
            },
            Some(out),
        ),
        Command::Replay { run, out } => (RunRecord::read(&run)?.config, Some(out)),
    })
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            HarnessError::Validation(format!("{THREADS_ENV} must be a positive integer, got {value:?}"))
        })?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> Result<String> {
    configure_threads()?;
    match resolve(command)? {
        (RunConfig::Gradcheck { model, seed }, None) => {
            let report = run_gradcheck(&model.resolve(), seed, &Fault::default())?;
            let text = report.render();
            match report.failure() {
                Some(e) => {
                    print!("{text}");
                    Err(e)
                }
                None => Ok(text),
            }
        }
        (config, Some(out)) => execute(&config, &out),
        (_, None) => unreachable!("only gradcheck has an optional output directory"),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
