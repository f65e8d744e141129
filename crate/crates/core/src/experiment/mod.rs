//! Experiment configuration, metrics files and scripted runs: passive and
//! active training on the simulator, suite comparison against random testing,
//! and checkpoint updates after a system change.

mod config;
mod metrics;

pub use config::{epoch_size, ExperimentConfig, SutConfig};
pub use metrics::{
    MetricsRow, MetricsWriter, Milestone, MilestoneTracker, RollingStats, METRICS_COLUMNS, METRICS_SCHEMA,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::active::{
    eval_generator_accuracy, sample_real_batch, train_active, ActiveError, ActiveState, Control, LabeledPool,
    StopReason,
};
use crate::cgan::{save, CganModel, Checkpoint, CheckpointError, ConditionLabel, POSITIVE_LABEL};
use crate::codec::CodecError;
use crate::devops::{devops_update, UpdateReport};
use crate::driver::{DriverError, SimDriver};
use crate::sim::{positive_count, ExecutedTest, SimError, SimulatorConfig};
use crate::testgen::{generate_tests, random_suite, SuiteReport, TestgenError};

/// Accuracy levels whose first crossing is recorded.
pub const MILESTONES: [f64; 3] = [0.5, 0.8, 0.96];

/// Mixed into the run seed for the evaluation RNG, so that measuring accuracy
/// never perturbs the training stream.
const EVAL_STREAM: u64 = 0x5EED_0E7A;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Testgen(#[from] TestgenError),
    #[error("this command needs a simulated system under test")]
    NeedsSimulator,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Output file names inside a run directory.
pub struct RunPaths {
    pub metrics: PathBuf,
    pub milestones: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            milestones: dir.join("milestones.csv"),
            checkpoint: dir.join("model.ckpt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub steps: u64,
    pub last_accuracy: Option<f64>,
    pub milestones: Vec<Milestone>,
    pub labels_consumed: u64,
    pub executed: u64,
    pub model: CganModel,
    /// Most recent executed tests (at most `history_capacity`).
    pub history: Vec<ExecutedTest>,
    pub stop: RunStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStop {
    AccuracyTarget,
    MaxSteps,
    Fjd,
}

impl RunOutcome {
    pub fn milestone(&self, threshold: f64) -> Option<&Milestone> {
        self.milestones.iter().find(|m| m.threshold >= threshold)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            history: self.history.clone(),
        }
    }
}

/// Shared bookkeeping for evaluation, metrics rows and milestones.
struct Tracker<'a, W: Write> {
    config: &'a ExperimentConfig,
    sim: &'a SimulatorConfig,
    eval_rng: ChaCha8Rng,
    rolling: RollingStats,
    milestones: MilestoneTracker,
    metrics: Option<MetricsWriter<W>>,
    last_accuracy: Option<f64>,
    next_eval: u64,
}

impl<'a, W: Write> Tracker<'a, W> {
    fn new(
        config: &'a ExperimentConfig,
        sim: &'a SimulatorConfig,
        metrics: Option<W>,
    ) -> Result<Self, ExperimentError> {
        let metrics = metrics
            .map(MetricsWriter::new)
            .transpose()
            .map_err(io_err(Path::new("metrics")))?;
        Ok(Self {
            config,
            sim,
            eval_rng: ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_STREAM),
            rolling: RollingStats::new(config.rolling_window),
            milestones: MilestoneTracker::new(&MILESTONES),
            metrics,
            last_accuracy: None,
            next_eval: config.eval_interval,
        })
    }

    /// Evaluates accuracy when `step` has reached the next evaluation point
    /// and writes a row. Returns the accuracy when it was measured.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        model: &CganModel,
        step: u64,
        disc_loss: f64,
        gen_loss: f64,
        fjd: Option<f64>,
        labeled: u64,
        executed: u64,
        force_row: bool,
    ) -> Result<Option<f64>, ExperimentError> {
        let mut accuracy = None;
        let mut stats = (None, None);
        if step >= self.next_eval {
            while self.next_eval <= step {
                self.next_eval += self.config.eval_interval;
            }
            let r = eval_generator_accuracy(&model.gen, self.sim, self.config.eval_sample_size, &mut self.eval_rng);
            let (mean, std) = self.rolling.push(r.accuracy);
            self.milestones.observe(r.accuracy, step, labeled, executed);
            self.last_accuracy = Some(r.accuracy);
            accuracy = Some(r.accuracy);
            stats = (Some(mean), Some(std));
        }
        if accuracy.is_some() || force_row {
            if let Some(w) = self.metrics.as_mut() {
                w.write(&MetricsRow {
                    step,
                    disc_loss,
                    gen_loss,
                    accuracy,
                    acc_mean: stats.0,
                    acc_std: stats.1,
                    fjd,
                    labeled,
                    executed,
                })
                .map_err(io_err(Path::new("metrics")))?;
            }
        }
        Ok(accuracy)
    }

    fn finish(mut self, milestones_out: Option<W>) -> Result<(Vec<Milestone>, Option<f64>), ExperimentError> {
        if let Some(w) = self.metrics.as_mut() {
            w.flush().map_err(io_err(Path::new("metrics")))?;
        }
        if let Some(out) = milestones_out {
            self.milestones
                .write_csv(out)
                .map_err(|e| ExperimentError::Config(format!("writing milestones: {e}")))?;
        }
        Ok((self.milestones.reached().to_vec(), self.last_accuracy))
    }
}

fn simulator(config: &ExperimentConfig) -> Result<SimulatorConfig, ExperimentError> {
    config.validate()?;
    config.sut.simulator()?.ok_or(ExperimentError::NeedsSimulator)
}

/// Metrics and milestones writers of a run directory.
type RunWriters = (Option<BufWriter<File>>, Option<BufWriter<File>>);

fn open_outputs(out: Option<&Path>) -> Result<RunWriters, ExperimentError> {
    match out {
        Some(dir) => {
            let p = RunPaths::in_dir(dir);
            Ok((Some(create(&p.metrics)?), Some(create(&p.milestones)?)))
        }
        None => Ok((None, None)),
    }
}

fn save_outcome(out: Option<&Path>, outcome: &RunOutcome) -> Result<(), ExperimentError> {
    if let Some(dir) = out {
        save(&outcome.checkpoint(), RunPaths::in_dir(dir).checkpoint)?;
    }
    Ok(())
}

/// Trains on the first `dataset_size` records of the seeded dataset order
/// until the accuracy target or `max_steps`. With `out`, writes metrics,
/// milestones and the final checkpoint there.
pub fn run_passive(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome, ExperimentError> {
    let sim = simulator(config)?;
    let pool = LabeledPool::from_simulator(&sim, config.dataset_size, config.seed);
    let mut model = CganModel::new(sim.space.clone(), config.num_requirements, config.seed);
    let (metrics_out, milestones_out) = open_outputs(out)?;
    let mut tracker = Tracker::new(config, &sim, metrics_out)?;
    let labeled = pool.len() as u64;
    let half = config.batch_size / 2;
    let max_steps = config.max_steps();
    let mut stop = RunStop::MaxSteps;
    let mut step = 0;
    while step < max_steps {
        step += 1;
        let real = sample_real_batch(&sim.space, Some(&pool), &[], &[], half, model.rng_mut())
            .ok_or_else(|| ExperimentError::Config("dataset is empty".into()))?;
        let losses = model.train_step(&real).map_err(ActiveError::from)?;
        let acc = tracker.record(&model, step, losses.disc_loss, losses.gen_loss, None, labeled, 0, false)?;
        if acc.is_some_and(|a| a >= config.accuracy_target) {
            stop = RunStop::AccuracyTarget;
            break;
        }
    }
    let (milestones, last_accuracy) = tracker.finish(milestones_out)?;
    let outcome = RunOutcome {
        steps: step,
        last_accuracy,
        milestones,
        labels_consumed: labeled,
        executed: 0,
        model,
        history: Vec::new(),
        stop,
    };
    save_outcome(out, &outcome)?;
    Ok(outcome)
}

/// Active training with the first `dataset_size` records as the initial
/// pool and the simulator answering execution requests.
pub fn run_active(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome, ExperimentError> {
    let sim = simulator(config)?;
    let pool = LabeledPool::from_simulator(&sim, config.dataset_size, config.seed);
    let model = CganModel::new(sim.space.clone(), config.num_requirements, config.seed);
    let state = ActiveState::with_pool(pool);
    continue_active(config, &sim, model, state, out)
}

/// Runs the active loop from an existing model and state, stopping at the
/// accuracy target, the FJD threshold or the step limit.
pub fn continue_active(
    config: &ExperimentConfig,
    sim: &SimulatorConfig,
    mut model: CganModel,
    mut state: ActiveState,
    out: Option<&Path>,
) -> Result<RunOutcome, ExperimentError> {
    let (metrics_out, milestones_out) = open_outputs(out)?;
    let mut tracker = Tracker::new(config, sim, metrics_out)?;
    let mut driver = SimDriver::new(sim.clone());
    let al = active_config(config);
    let start_steps = state.training_steps;
    let mut failure = None;
    let mut hit_target = false;
    let outcome = train_active(&mut model, &mut driver, &mut state, &al, &mut |rec, m, s| {
        let labeled = s.labels_consumed();
        let executed = s.executed.len() as u64;
        let step = rec.step - start_steps;
        match tracker.record(m, step, rec.disc_loss, rec.gen_loss, rec.fjd, labeled, executed, true) {
            Ok(Some(a)) if a >= config.accuracy_target => {
                hit_target = true;
                Control::Stop
            }
            Ok(_) => Control::Continue,
            Err(e) => {
                failure = Some(e);
                Control::Stop
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (milestones, last_accuracy) = tracker.finish(milestones_out)?;
    let stop = match outcome.stop {
        StopReason::FjdBelowThreshold => RunStop::Fjd,
        StopReason::Observer if hit_target => RunStop::AccuracyTarget,
        _ => RunStop::MaxSteps,
    };
    let keep = state.executed.len().saturating_sub(config.history_capacity);
    let outcome = RunOutcome {
        steps: state.training_steps - start_steps,
        last_accuracy,
        milestones,
        labels_consumed: state.labels_consumed(),
        executed: state.executed.len() as u64,
        model,
        history: state.executed[keep..].to_vec(),
        stop,
    };
    save_outcome(out, &outcome)?;
    Ok(outcome)
}

/// The loop configuration with the iteration cap derived from `max_steps`.
fn active_config(config: &ExperimentConfig) -> crate::active::AlConfig {
    let mut al = config.al.clone();
    al.batch_size = config.batch_size;
    let per_iter = al.steps_per_iteration.max(1) as u64;
    let cap = config.max_steps().div_ceil(per_iter) as usize;
    al.max_iterations = al.max_iterations.min(cap).max(1);
    al
}

/// Checks a checkpoint against the configured system and retrains on change.
/// Metrics rows for the retraining run are written to `metrics` when given.
pub fn run_update(
    config: &ExperimentConfig,
    checkpoint: &mut Checkpoint,
    metrics: Option<&Path>,
) -> Result<UpdateReport, ExperimentError> {
    config.validate()?;
    let sim = config.sut.simulator()?;
    let mut driver = config.sut.driver()?;
    let al = active_config(config);
    let mut writer = metrics
        .map(create)
        .transpose()?
        .map(MetricsWriter::new)
        .transpose()
        .map_err(io_err(metrics.unwrap_or(Path::new("metrics"))))?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_STREAM);
    let mut rolling = RollingStats::new(config.rolling_window);
    let mut io_failure = None;
    let mut observer = |rec: &crate::active::IterationRecord, m: &CganModel, s: &ActiveState| {
        let accuracy = sim
            .as_ref()
            .map(|sim| eval_generator_accuracy(&m.gen, sim, config.eval_sample_size, &mut eval_rng).accuracy);
        let stats = accuracy.map(|a| rolling.push(a));
        if let Some(w) = writer.as_mut() {
            let row = MetricsRow {
                step: rec.step,
                disc_loss: rec.disc_loss,
                gen_loss: rec.gen_loss,
                accuracy,
                acc_mean: stats.map(|s| s.0),
                acc_std: stats.map(|s| s.1),
                fjd: rec.fjd,
                labeled: s.labels_consumed(),
                executed: s.executed.len() as u64,
            };
            if let Err(e) = w.write(&row) {
                io_failure = Some(e);
                return Control::Stop;
            }
        }
        match accuracy {
            Some(a) if a >= config.accuracy_target => Control::Stop,
            _ => Control::Continue,
        }
    };
    let report = devops_update(checkpoint, driver.as_mut(), &al, &mut observer)?;
    if let Some(mut w) = writer {
        w.flush().map_err(io_err(Path::new("metrics")))?;
    }
    if let Some(e) = io_failure {
        return Err(io_err(Path::new("metrics"))(e));
    }
    let keep = checkpoint.history.len().saturating_sub(config.history_capacity);
    checkpoint.history.drain(..keep);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub size: usize,
    pub passive: SuiteReport,
    pub active: Option<SuiteReport>,
    pub random: SuiteReport,
    pub random_expected: f64,
}

/// Suites of each size from the passive model, the optional active model and
/// uniform random sampling, scored against the simulator.
pub fn run_compare(
    config: &ExperimentConfig,
    passive: &CganModel,
    active: Option<&CganModel>,
) -> Result<Vec<CompareRow>, ExperimentError> {
    let sim = simulator(config)?;
    let base_rate = positive_count(&sim)? as f64 / sim.space.total_combinations() as f64;
    let label = ConditionLabel(POSITIVE_LABEL);
    let mut rows = Vec::new();
    for (k, &size) in config.compare_sizes.iter().enumerate() {
        let seed = config.seed.wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = generate_tests(&passive.gen, &sim.space, label, size, false, &mut rng)?;
        let a = active
            .map(|m| generate_tests(&m.gen, &sim.space, label, size, false, &mut rng))
            .transpose()?;
        let r = random_suite(&sim.space, size, &mut rng);
        rows.push(CompareRow {
            size,
            passive: SuiteReport::of(&p, Some(&sim)),
            active: a.map(|a| SuiteReport::of(&a, Some(&sim))),
            random: SuiteReport::of(&r, Some(&sim)),
            random_expected: size as f64 * base_rate,
        });
    }
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(writer: W, rows: &[CompareRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "size",
        "pcgan_positives",
        "pcgan_unique",
        "acgan_positives",
        "acgan_unique",
        "random_positives",
        "random_unique",
        "random_expected",
    ])?;
    let n = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.size.to_string(),
            n(r.passive.positives),
            r.passive.unique.to_string(),
            n(r.active.and_then(|a| a.positives)),
            n(r.active.map(|a| a.unique)),
            n(r.random.positives),
            r.random.unique.to_string(),
            format!("{:.1}", r.random_expected),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Dataset sizes of the four reference experiments.
pub const REFERENCE_DATASET_SIZES: [usize; 4] = [3_100_000, 1_000_000, 500_000, 100_000];

/// Writes `dataset.csv` (positives and epoch size per dataset size) and
/// `clusters.csv` (one row per bottleneck box) for the configured simulator.
pub fn run_simulate(config: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let sim = simulator(config)?;
    let total = sim.space.total_combinations();
    let mut sizes: Vec<usize> = REFERENCE_DATASET_SIZES
        .iter()
        .copied()
        .chain([config.dataset_size])
        .filter(|&s| s as u64 <= total)
        .collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    let largest = LabeledPool::from_simulator(&sim, sizes.first().copied().unwrap_or(0), config.seed);
    let path = out.join("dataset.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |e: csv::Error| ExperimentError::Config(format!("writing dataset summary: {e}"));
    w.write_record(["dataset_size", "positives", "positive_fraction", "epoch_size"])
        .map_err(csv_err)?;
    for &size in &sizes {
        let positives = (0..size).filter(|&i| largest.label(i) == 1).count();
        w.write_record([
            size.to_string(),
            positives.to_string(),
            format!("{:.6}", positives as f64 / size.max(1) as f64),
            epoch_size(size as u64, config.batch_size as u64).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join("clusters.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["cluster".to_owned()];
    for name in sim.space.variable_names() {
        header.push(format!("{name}_lo"));
        header.push(format!("{name}_hi"));
    }
    header.extend(["volume".into(), "delay".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for (i, c) in sim.clusters.iter().enumerate() {
        let mut row = vec![i.to_string()];
        for &(lo, hi) in &c.bounds {
            row.push(lo.to_string());
            row.push(hi.to_string());
        }
        row.push(c.volume().to_string());
        row.push(c.delay.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    log::info!("{} of {total} combinations are positive", positive_count(&sim)?);
    Ok(())
}

/// Creates `path` (and its parent directory) for buffered writing.
pub fn create_output(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    create(path)
}
