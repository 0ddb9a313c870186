use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streamgate::datagen::{clip_turns, pack_sequences, write_sequences};
use streamgate::metrics::DeviationReference;
use streamgate::replay::{run_replay, sweep, sweep_csv, ReplayError, RunConfig};
use streamgate::sved::InferenceMask;
use streamgate::synth::{scene_stream, SceneStreamConfig};
use streamgate::trace::{parse_trace, save_trace};

const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "streamgate", version, about = "Perplexity-gated streaming caption replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one trace and write events, responses and a metrics report.
    Replay {
        trace: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run an alpha x window grid over one or more traces and write a CSV.
    Sweep {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated alpha values.
        #[arg(long, value_delimiter = ',', default_value = "1.0,1.01,1.02,1.03,1.04,1.05,1.06,1.07,1.08,1.09,1.1")]
        alphas: Vec<f64>,
        /// Comma-separated window sizes in frames.
        #[arg(long, value_delimiter = ',', default_value = "40")]
        windows: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Export interleaved training sequences with attention and loss masks.
    Datagen {
        trace: PathBuf,
        #[arg(long, default_value_t = 1)]
        pool_size: usize,
        #[arg(long, default_value_t = 8192)]
        context_budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write a synthetic trace and the scenario that scripts it.
    Synth {
        /// Stream length in minutes, split into 20-60 s scenes.
        #[arg(long, default_value_t = 10.0)]
        minutes: f64,
        #[arg(long, default_value_t = 16)]
        tokens_per_frame: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DeviationArg {
    Anchor,
    SceneStart,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1.03)]
    alpha: f64,
    #[arg(long, default_value_t = 40)]
    window_frames: usize,
    #[arg(long, default_value_t = 1)]
    pool_size: usize,
    #[arg(long, default_value_t = 16)]
    tokens_per_frame: usize,
    #[arg(long, default_value_t = 3.0)]
    fps: f64,
    #[arg(long, default_value_t = 8192)]
    context_budget: usize,
    /// `reference:<scenario.json>` or `bridge:tcp:HOST:PORT` / `bridge:stdio:CMD`.
    #[arg(long)]
    scorer: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable the prefix-state cache.
    #[arg(long)]
    no_cache: bool,
    /// Hand scorers the streaming causal mask instead of the plain causal one.
    #[arg(long)]
    scam_inference: bool,
    #[arg(long, value_enum, default_value = "anchor")]
    deviation_reference: DeviationArg,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, ReplayError> {
        let config = RunConfig {
            alpha: self.alpha,
            window_frames: self.window_frames,
            pool_size: self.pool_size,
            tokens_per_frame: self.tokens_per_frame,
            fps: self.fps,
            context_budget: self.context_budget,
            seed: self.seed,
            kv_cache: !self.no_cache,
            inference_mask: if self.scam_inference {
                InferenceMask::Scam
            } else {
                InferenceMask::Causal
            },
            deviation_reference: match self.deviation_reference {
                DeviationArg::Anchor => DeviationReference::Anchor,
                DeviationArg::SceneStart => DeviationReference::SceneStart,
            },
            ..RunConfig::new(self.scorer.parse()?)
        };
        config.validate()?;
        Ok(config)
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("streamgate: {message}");
    ExitCode::from(code)
}

fn replay_error(e: ReplayError) -> ExitCode {
    let code = e.exit_code();
    fail(code as u8, e)
}

fn write_text(path: &Path, text: &str) -> Result<(), ExitCode> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), ExitCode> {
    match command {
        Command::Replay { trace, run, out_dir } => {
            let config = run.config().map_err(replay_error)?;
            let report = run_replay(&config, &trace, &out_dir).map_err(replay_error)?;
            println!(
                "responses={} tim_diff={} tim_redun={} tim_cover={} -> {}",
                report.responses,
                report.tim_diff,
                report.tim_redun,
                report.tim_cover,
                out_dir.display()
            );
        }
        Command::Sweep {
            traces,
            run,
            alphas,
            windows,
            jobs,
            out_dir,
        } => {
            let config = run.config().map_err(replay_error)?;
            if let Some(a) = alphas.iter().find(|&&a| !(a >= 1.0)) {
                return Err(fail(EXIT_USAGE, format!("--alphas: {a} is below 1")));
            }
            let rows = sweep(&config, &alphas, &windows, &traces, jobs).map_err(replay_error)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            let path = out_dir.join("sweep.csv");
            write_text(&path, &sweep_csv(&rows))?;
            println!("{} rows ({failed} failed) -> {}", rows.len(), path.display());
        }
        Command::Datagen {
            trace,
            pool_size,
            context_budget,
            seed,
            out_dir,
        } => {
            if pool_size == 0 {
                return Err(fail(EXIT_USAGE, "--pool-size must be positive"));
            }
            let trace = parse_trace(&trace).map_err(|e| replay_error(e.into()))?;
            let turns = clip_turns(&trace, pool_size, seed).map_err(|e| fail(3, e))?;
            let sequences = pack_sequences(&turns, context_budget).map_err(|e| fail(3, e))?;
            let paths = write_sequences(&out_dir, &sequences).map_err(|e| fail(EXIT_USAGE, e))?;
            println!("{} sequences -> {}", paths.len(), out_dir.display());
        }
        Command::Synth {
            minutes,
            tokens_per_frame,
            seed,
            out_dir,
        } => {
            if !(minutes > 0.0) || tokens_per_frame == 0 {
                return Err(fail(EXIT_USAGE, "--minutes and --tokens-per-frame must be positive"));
            }
            let synthetic = scene_stream(&SceneStreamConfig {
                tokens_per_frame,
                ..SceneStreamConfig::long(minutes, seed)
            });
            std::fs::create_dir_all(&out_dir).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", out_dir.display())))?;
            let trace_path = out_dir.join("trace.ndjson");
            let scenario_path = out_dir.join("scenario.json");
            save_trace(&synthetic.trace, &trace_path)
                .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", trace_path.display())))?;
            synthetic
                .scenario
                .save(&scenario_path)
                .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", scenario_path.display())))?;
            println!(
                "{} frames, {} scenes -> {} and {}",
                synthetic.trace.frames.len(),
                synthetic.trace.timeline.len(),
                trace_path.display(),
                scenario_path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAMGATE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
