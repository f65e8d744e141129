use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use perfgen::cgan::{load, save};
use perfgen::experiment::{
    create_output, run_active, run_compare, run_passive, run_simulate, run_update, write_compare_csv, ExperimentConfig,
    ExperimentError, RunOutcome, RunPaths,
};
use perfgen::testgen::{generate_suite, random_suite, write_suite_csv, SuiteReport};
use perfgen::ConditionLabel;

/// Exit status of `update` when the model was retrained.
const EXIT_RETRAINED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "perfgen",
    version,
    about = "Performance test generation with an actively trained conditional GAN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on a fully pre-labeled dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory for metrics.csv, milestones.csv and model.ckpt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with active learning from a partially labeled pool.
    TrainActive {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a test suite from a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        requirement: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reject duplicate tests.
        #[arg(long)]
        unique: bool,
        /// Simulator configuration; adds a `positive` column.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for suite.csv; the suite goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a uniform random suite.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare positive and unique counts of generated and random suites.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Passively trained model.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Actively trained model.
        #[arg(long)]
        active_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay recent tests on the configured system and retrain on change.
    /// Exits with 2 when the checkpoint was retrained.
    Update {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for the retraining metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write dataset and cluster summaries of the configured simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn report_run(kind: &str, out: &Path, r: &RunOutcome) {
    let acc = r.last_accuracy.map_or("n/a".into(), |a| format!("{a:.2}"));
    println!(
        "{kind}: {} steps, stop {:?}, last accuracy {acc}, labels {}, executed {}",
        r.steps, r.stop, r.labels_consumed, r.executed
    );
    for m in &r.milestones {
        println!(
            "  accuracy {:.2} first reached at step {} ({} labels)",
            m.threshold, m.step, m.labels_consumed
        );
    }
    println!("  outputs in {}", out.display());
}

fn suite_output(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(dir) => Box::new(create_output(&dir.join(name))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn summarize(r: &SuiteReport) {
    let pos = r.positives.map_or(String::new(), |p| format!(", {p} positive"));
    eprintln!("{} tests, {} unique{pos}", r.total, r.unique);
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Train { common, out } => {
            let r = run_passive(&common.load()?, Some(&out))?;
            report_run("passive", &out, &r);
        }
        Command::TrainActive { common, out } => {
            let r = run_active(&common.load()?, Some(&out))?;
            report_run("active", &out, &r);
        }
        Command::Generate {
            checkpoint,
            requirement,
            size,
            seed,
            unique,
            config,
            out,
        } => {
            let sim = match config {
                Some(p) => ExperimentConfig::load(p)?.sut.simulator()?,
                None => None,
            };
            let (points, report) = generate_suite(
                &checkpoint,
                ConditionLabel(requirement),
                size,
                seed,
                unique,
                sim.as_ref(),
            )
            .map_err(ExperimentError::from)?;
            let space = load(&checkpoint).map_err(ExperimentError::from)?.model.space;
            let w = suite_output(out.as_deref(), "suite.csv")?;
            write_suite_csv(w, &space, &points, sim.as_ref()).map_err(ExperimentError::from)?;
            summarize(&report);
        }
        Command::Baseline { common, size, out } => {
            let cfg = common.load()?;
            let sim = cfg.sut.simulator()?;
            let space = cfg.sut.space()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let points = random_suite(&space, size, &mut rng);
            let w = suite_output(out.as_deref(), "baseline.csv")?;
            write_suite_csv(w, &space, &points, sim.as_ref()).map_err(ExperimentError::from)?;
            summarize(&SuiteReport::of(&points, sim.as_ref()));
        }
        Command::Compare {
            common,
            checkpoint,
            active_checkpoint,
            out,
        } => {
            let cfg = common.load()?;
            let passive = load(&checkpoint).map_err(ExperimentError::from)?.model;
            let active = active_checkpoint
                .map(|p| load(p).map(|c| c.model))
                .transpose()
                .map_err(ExperimentError::from)?;
            let rows = run_compare(&cfg, &passive, active.as_ref())?;
            let w = suite_output(out.as_deref(), "compare.csv")?;
            write_compare_csv(w, &rows).map_err(std::io::Error::from)?;
        }
        Command::Update {
            common,
            checkpoint,
            out,
        } => {
            let cfg = common.load()?;
            let mut ckpt = load(&checkpoint).map_err(ExperimentError::from)?;
            let metrics = out.as_ref().map(|d| RunPaths::in_dir(d).metrics);
            let report = run_update(&cfg, &mut ckpt, metrics.as_deref())?;
            println!(
                "replayed {}, mismatches {}, failures {}",
                report.replayed, report.mismatches, report.failures
            );
            if !report.changed {
                println!("no change detected; checkpoint kept");
                return Ok(ExitCode::SUCCESS);
            }
            if report.low_budget_warning {
                log::warn!("retraining stopped after one iteration; consider a larger test budget");
            }
            save(&ckpt, &checkpoint).map_err(ExperimentError::from)?;
            println!(
                "retrained for {} steps over {} iterations (stop {:?})",
                report.steps, report.iterations, report.stop
            );
            return Ok(ExitCode::from(EXIT_RETRAINED));
        }
        Command::Simulate { common, out } => {
            run_simulate(&common.load()?, &out)?;
            println!(
                "wrote {} and {}",
                out.join("dataset.csv").display(),
                out.join("clusters.csv").display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
