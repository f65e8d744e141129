use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fjd::{frechet_distance_samples, joint_vector};
use super::lc::least_confidence_rank;
use super::pool::{sample_real_batch, LabeledPool};
use crate::cgan::CganModel;
use crate::codec::{decode, encode, EncodedTest, TestPoint};
use crate::driver::TestDriver;
use crate::nn::NnError;
use crate::sim::ExecutedTest;

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("invalid active-learning configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    /// Maximum number of real executions per iteration.
    pub test_budget: usize,
    pub fjd_threshold: f64,
    /// Share of the most uncertain candidates sent for execution.
    pub uncertain_fraction: f64,
    pub max_iterations: usize,
    pub eval_sample_size: usize,
    /// Candidates synthesized and classified per iteration.
    pub candidates_per_iteration: usize,
    /// Adversarial training steps (one discriminator batch plus one generator
    /// batch each) per iteration.
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    /// Number of most recent executed tests compared against the candidates.
    pub fjd_window: usize,
    /// Tests this run must execute before the FJD stop applies. Early on the
    /// executed tests are a subset of the candidates, which makes the
    /// distance small regardless of training progress.
    pub fjd_warmup: usize,
    /// Self-labeled tests kept for discriminator training (oldest dropped first).
    pub labeled_capacity: usize,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            test_budget: 500,
            fjd_threshold: 0.05,
            uncertain_fraction: 0.5,
            max_iterations: 1_000,
            eval_sample_size: 100,
            candidates_per_iteration: 1_000,
            steps_per_iteration: 10,
            batch_size: 64,
            fjd_window: 2_000,
            fjd_warmup: 2_000,
            labeled_capacity: 50_000,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<(), ActiveError> {
        let fail = |m: &str| Err(ActiveError::Config(m.to_owned()));
        if self.test_budget < 1 {
            return fail("test_budget must be ≥ 1");
        }
        if self.fjd_threshold.is_nan() || self.fjd_threshold <= 0.0 {
            return fail("fjd_threshold must be > 0");
        }
        if !(self.uncertain_fraction > 0.0 && self.uncertain_fraction <= 1.0) {
            return fail("uncertain_fraction must be in (0, 1]");
        }
        if self.candidates_per_iteration < 1 || self.max_iterations < 1 {
            return fail("candidates_per_iteration and max_iterations must be ≥ 1");
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return fail("batch_size must be even and ≥ 2");
        }
        Ok(())
    }

    /// Number of candidates executed per iteration.
    pub fn executions_per_iteration(&self) -> usize {
        let share = (self.uncertain_fraction * self.candidates_per_iteration as f64).ceil() as usize;
        share.min(self.test_budget)
    }
}

/// Everything the loop has learned about the SUT so far.
#[derive(Debug, Clone, Default)]
pub struct ActiveState {
    /// Pre-labeled records available from the start, if any.
    pub pool: Option<LabeledPool>,
    /// Tests executed on the SUT with their oracle labels. Never shrinks.
    pub executed: Vec<ExecutedTest>,
    /// Confident candidates labeled by the discriminator (self-training).
    pub labeled: Vec<(TestPoint, usize)>,
    pub training_steps: u64,
    pub iterations: u64,
    pub failed_executions: u64,
}

impl ActiveState {
    pub fn with_pool(pool: LabeledPool) -> Self {
        Self {
            pool: Some(pool),
            ..Self::default()
        }
    }

    /// Ground-truth labels consumed: pre-labeled records plus executions.
    pub fn labels_consumed(&self) -> u64 {
        self.pool.as_ref().map_or(0, |p| p.len() as u64) + self.executed.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Cumulative training steps after this iteration.
    pub step: u64,
    pub disc_loss: f64,
    pub gen_loss: f64,
    /// `None` until enough tests have been executed to fit a Gaussian.
    pub fjd: Option<f64>,
    pub executed_total: usize,
    pub labeled_total: usize,
    pub executed_now: usize,
    pub positives_now: usize,
    pub failures_now: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    FjdBelowThreshold,
    MaxIterations,
    Observer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveOutcome {
    pub log: Vec<IterationRecord>,
    pub stop: StopReason,
}

/// Runs the active training loop until the Fréchet joint distance between
/// fresh candidates and recently executed tests drops to the threshold, the
/// iteration cap is hit, or `observer` asks to stop.
///
/// Per iteration: adversarial steps on real tests drawn from
/// pool ∪ executed ∪ labeled; candidates are synthesized and classified; the
/// least confident share (capped by the budget) is executed and recorded with
/// oracle labels; the remaining candidates are stored with the
/// discriminator's predicted requirement label.
pub fn train_active(
    model: &mut CganModel,
    driver: &mut dyn TestDriver,
    state: &mut ActiveState,
    config: &AlConfig,
    observer: &mut dyn FnMut(&IterationRecord, &CganModel, &ActiveState) -> Control,
) -> Result<ActiveOutcome, ActiveError> {
    config.validate()?;
    let half = config.batch_size / 2;
    let num_labels = model.num_requirements;
    let space = model.space.clone();
    let mut log = Vec::new();
    let executed_at_start = state.executed.len();
    for _ in 0..config.max_iterations {
        // Discriminator training on everything known so far.
        let mut disc_loss = 0.0;
        for _ in 0..config.steps_per_iteration {
            let real = sample_real_batch(
                &space,
                state.pool.as_ref(),
                &state.executed,
                &state.labeled,
                half,
                model.rng_mut(),
            );
            if let Some(real) = real {
                let fake = model.synthesize(half);
                disc_loss += model.train_disc_batch(&real, &fake)?;
            }
        }

        let candidates = model.synthesize(config.candidates_per_iteration);
        let scores = model.disc.classify_batch(&candidates)?;

        let mut gen_loss = 0.0;
        for _ in 0..config.steps_per_iteration {
            gen_loss += model.train_gen_batch(config.batch_size)?;
        }
        state.training_steps += config.steps_per_iteration as u64;

        let ranked = least_confidence_rank(&scores);
        let (uncertain, confident) = ranked.split_at(config.executions_per_iteration().min(ranked.len()));
        let decode_row = |i: usize| {
            decode(
                &model.space,
                &EncodedTest {
                    features: candidates.features.row(i).to_vec(),
                },
            )
        };

        let to_run: Vec<TestPoint> = uncertain.iter().map(|&i| decode_row(i)).collect();
        let mut executed_now = 0;
        let mut positives_now = 0;
        let mut failures_now = 0;
        for result in driver.execute(&to_run) {
            match result {
                Ok(t) => {
                    executed_now += 1;
                    positives_now += t.label;
                    state.executed.push(t);
                }
                Err(e) => {
                    failures_now += 1;
                    log::warn!("test execution failed: {e}");
                }
            }
        }
        state.failed_executions += failures_now as u64;

        if !confident.is_empty() {
            let features = candidates.features.clone();
            let predicted = model.disc.predict_labels(&features)?;
            for &i in confident {
                state.labeled.push((decode_row(i), predicted[i]));
            }
            if state.labeled.len() > config.labeled_capacity {
                let excess = state.labeled.len() - config.labeled_capacity;
                state.labeled.drain(..excess);
            }
        }

        let window_start = state.executed.len().saturating_sub(config.fjd_window);
        let executed_joint: Vec<Vec<f64>> = state.executed[window_start..]
            .iter()
            .map(|t| {
                let enc = encode(&model.space, &t.point).expect("executed tests are in domain");
                joint_vector(&enc.features, t.label, num_labels)
            })
            .collect();
        let candidate_joint: Vec<Vec<f64>> = (0..candidates.len())
            .map(|i| joint_vector(candidates.features.row(i), candidates.labels[i], num_labels))
            .collect();
        let fjd = frechet_distance_samples(&candidate_joint, &executed_joint).ok();

        state.iterations += 1;
        let steps = config.steps_per_iteration.max(1) as f64;
        let record = IterationRecord {
            iteration: state.iterations,
            step: state.training_steps,
            disc_loss: disc_loss / steps,
            gen_loss: gen_loss / steps,
            fjd,
            executed_total: state.executed.len(),
            labeled_total: state.labeled.len(),
            executed_now,
            positives_now,
            failures_now,
        };
        let control = observer(&record, model, state);
        log.push(record);
        let warm = state.executed.len().saturating_sub(executed_at_start) >= config.fjd_warmup;
        if warm && fjd.is_some_and(|d| d <= config.fjd_threshold) {
            return Ok(ActiveOutcome {
                log,
                stop: StopReason::FjdBelowThreshold,
            });
        }
        if control == Control::Stop {
            return Ok(ActiveOutcome {
                log,
                stop: StopReason::Observer,
            });
        }
    }
    Ok(ActiveOutcome {
        log,
        stop: StopReason::MaxIterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::Architecture;
    use crate::driver::SimDriver;
    use crate::sim::default_benchmark;

    fn small_model(seed: u64) -> (CganModel, SimDriver) {
        let cfg = default_benchmark(2);
        let m = CganModel::with_architecture(
            cfg.space.clone(),
            2,
            seed,
            &Architecture {
                hidden_units: 16,
                embed_dim: 4,
                learning_rate: 1e-3,
                ..Architecture::default()
            },
        );
        (m, SimDriver::new(cfg))
    }

    fn config() -> AlConfig {
        AlConfig {
            test_budget: 30,
            candidates_per_iteration: 100,
            steps_per_iteration: 2,
            max_iterations: 5,
            fjd_threshold: 1e-9,
            ..AlConfig::default()
        }
    }

    #[test]
    fn zero_budget_is_rejected() {
        let (mut m, mut d) = small_model(1);
        let cfg = AlConfig {
            test_budget: 0,
            ..config()
        };
        let err = train_active(&mut m, &mut d, &mut ActiveState::default(), &cfg, &mut |_, _, _| {
            Control::Continue
        });
        assert!(matches!(err, Err(ActiveError::Config(_))));
    }

    #[test]
    fn budget_and_fraction_bound_executions() {
        let (mut m, mut d) = small_model(1);
        let mut state = ActiveState::default();
        let mut sizes = Vec::new();
        let out = train_active(&mut m, &mut d, &mut state, &config(), &mut |r, _, s| {
            sizes.push((r.executed_now, r.labeled_total, s.executed.len()));
            Control::Continue
        })
        .unwrap();
        assert_eq!(out.stop, StopReason::MaxIterations);
        assert_eq!(out.log.len(), 5);
        // min(budget 30, ceil(0.5 · 100)) = 30 executed, 70 self-labeled per iteration.
        for (k, &(now, labeled, total)) in sizes.iter().enumerate() {
            assert_eq!(now, 30);
            assert_eq!(labeled, 70 * (k + 1));
            assert_eq!(total, 30 * (k + 1));
        }
        assert_eq!(d.executions(), 150);
        assert_eq!(state.training_steps, 10);

        let cfg = AlConfig {
            test_budget: 500,
            uncertain_fraction: 0.25,
            max_iterations: 1,
            ..config()
        };
        let out = train_active(&mut m, &mut d, &mut state, &cfg, &mut |_, _, _| Control::Continue).unwrap();
        assert_eq!(out.log[0].executed_now, 25);
    }

    #[test]
    fn observer_can_stop_and_executed_never_shrinks() {
        let (mut m, mut d) = small_model(2);
        let mut state = ActiveState::default();
        let mut last = 0;
        let out = train_active(&mut m, &mut d, &mut state, &config(), &mut |r, _, _| {
            assert!(r.executed_total >= last);
            last = r.executed_total;
            if r.iteration == 3 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        assert_eq!(out.stop, StopReason::Observer);
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn loose_threshold_stops_on_fjd() {
        let (mut m, mut d) = small_model(3);
        let cfg = AlConfig {
            fjd_threshold: 1e9,
            fjd_warmup: 0,
            ..config()
        };
        let out = train_active(&mut m, &mut d, &mut ActiveState::default(), &cfg, &mut |_, _, _| {
            Control::Continue
        })
        .unwrap();
        assert_eq!(out.stop, StopReason::FjdBelowThreshold);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn fjd_stop_waits_for_warmup() {
        let (mut m, mut d) = small_model(3);
        let cfg = AlConfig {
            fjd_threshold: 1e9,
            fjd_warmup: 70,
            ..config()
        };
        let out = train_active(&mut m, &mut d, &mut ActiveState::default(), &cfg, &mut |_, _, _| {
            Control::Continue
        })
        .unwrap();
        assert_eq!(out.stop, StopReason::FjdBelowThreshold);
        // 30 executions per iteration: the third one crosses 70.
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn fixed_seed_gives_identical_log() {
        let run = || {
            let (mut m, mut d) = small_model(4);
            let out = train_active(
                &mut m,
                &mut d,
                &mut ActiveState::default(),
                &config(),
                &mut |_, _, _| Control::Continue,
            )
            .unwrap();
            (out, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }
}
