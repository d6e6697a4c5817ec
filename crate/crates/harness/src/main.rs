use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use retsync::predictor::PredictorKind;
use retsync_harness::error::{HarnessError, EXIT_INVALID, EXIT_OK};
use retsync_harness::pipeline::{self, selected};
use retsync_harness::{report, runs, Condition, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "retsync", version, about = "Retinal motion synchronization simulator")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        let out = cfg.out.clone();
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground truth and segmentation samples for the grid.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Single condition such as 0.1x8.
        #[arg(long)]
        condition: Option<Condition>,
        /// Trace length (s); defaults to the training plus scoring span.
        #[arg(long)]
        duration: Option<f64>,
        /// Sample rate (Hz); defaults to the grid sample rate.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Train one LSTM per condition on the generated samples.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        condition: Option<Condition>,
    },
    /// Score predictors on the held-out span of every condition.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        condition: Option<Condition>,
        /// Predictor to score (lstm, fft or hold); repeatable. Default: lstm and fft.
        #[arg(long, alias = "predictor")]
        model: Vec<PredictorKind>,
    },
    /// Run the closed-loop procedure for a batch of seeds.
    Run {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds; overrides `seeds` in the config.
        #[arg(long)]
        seeds: Option<u64>,
        /// Predictor driving the procedure (lstm, fft or hold).
        #[arg(long, alias = "predictor", default_value = "lstm")]
        model: PredictorKind,
    },
    /// Merge result directories into summary tables.
    Report {
        /// Directories holding grid or run outputs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long, default_value = "report")]
        out: PathBuf,
        /// Merge outputs of different configurations, tagging rows with their digest.
        #[arg(long)]
        allow_mixed: bool,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            common,
            condition,
            duration,
            rate,
        } => {
            let (cfg, out) = common.resolve()?;
            let duration = duration.unwrap_or(cfg.grid.train_s + cfg.grid.eval_s);
            let rate = rate.unwrap_or(cfg.grid.sample_rate_hz);
            pipeline::generate(&cfg, &out, cfg.seed, &selected(&cfg, condition), duration, rate)
        }
        Command::Train { common, condition } => {
            let (cfg, out) = common.resolve()?;
            pipeline::train(&cfg, &out, &selected(&cfg, condition))
        }
        Command::Evaluate {
            common,
            condition,
            mut model,
        } => {
            let (cfg, out) = common.resolve()?;
            if model.is_empty() {
                model = vec![PredictorKind::Lstm, PredictorKind::Fft];
            }
            model.dedup();
            pipeline::evaluate(&cfg, &out, &selected(&cfg, condition), &model).map(|_| ())
        }
        Command::Run { common, seeds, model } => {
            let (mut cfg, out) = common.resolve()?;
            if let Some(n) = seeds {
                cfg.seeds = n;
            }
            cfg.validate()?;
            let outcome = runs::run(&cfg, &out, model, cfg.seed, cfg.seeds)?;
            println!(
                "{} runs: {} completed, {} successful, {} aborted, {} RPE contacts",
                outcome.runs, outcome.completed, outcome.successes, outcome.aborted, outcome.rpe_touches
            );
            if outcome.aborted > 0 {
                return Err(HarnessError::Aborted {
                    aborted: outcome.aborted,
                    total: outcome.runs,
                });
            }
            Ok(())
        }
        Command::Report {
            inputs,
            out,
            allow_mixed,
        } => {
            let s = report::report(&inputs, &out, allow_mixed)?;
            println!(
                "merged {} grid and {} run files from {} configuration(s) into {}",
                s.grid_files,
                s.run_files,
                s.digests.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are bad input, like a bad config file.
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK } as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
