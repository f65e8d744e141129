//! Incremental retraining when the system under test changes.
//!
//! The most recent executed tests are replayed on the new version. If every
//! replayed label matches, the stored model is kept as is. Otherwise the
//! self-labeled tests are dropped and active training resumes from the saved
//! model, seeded with the replayed results.

use crate::active::{train_active, ActiveError, ActiveState, AlConfig, Control, IterationRecord, StopReason};
use crate::cgan::{CganModel, Checkpoint};
use crate::codec::TestPoint;
use crate::driver::TestDriver;
use crate::sim::ExecutedTest;

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeDetection {
    pub changed: bool,
    /// Successfully replayed tests with their new results.
    pub replayed: Vec<ExecutedTest>,
    /// Replayed tests whose label differs from the recorded one.
    pub mismatches: usize,
    /// Replays that failed; each one counts as a change.
    pub failures: usize,
}

/// Replays the last `min(budget, history.len())` tests and compares labels.
pub fn detect_change(driver: &mut dyn TestDriver, history: &[ExecutedTest], budget: usize) -> ChangeDetection {
    let tail = &history[history.len().saturating_sub(budget)..];
    let points: Vec<TestPoint> = tail.iter().map(|t| t.point.clone()).collect();
    let mut replayed = Vec::with_capacity(tail.len());
    let mut mismatches = 0;
    let mut failures = 0;
    for (old, result) in tail.iter().zip(driver.execute(&points)) {
        match result {
            Ok(new) => {
                if new.label != old.label {
                    mismatches += 1;
                }
                replayed.push(new);
            }
            Err(e) => {
                log::warn!("replay of {:?} failed: {e}", old.point);
                failures += 1;
            }
        }
    }
    ChangeDetection {
        changed: mismatches + failures > 0,
        replayed,
        mismatches,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub changed: bool,
    pub replayed: usize,
    pub mismatches: usize,
    pub failures: usize,
    /// Training steps spent adapting; 0 when nothing changed.
    pub steps: u64,
    pub iterations: usize,
    pub stop: Option<StopReason>,
    /// Set when a change was found but the loop stopped after its first
    /// iteration: the replay budget was likely too small to retrain usefully.
    pub low_budget_warning: bool,
}

/// Checks the checkpointed history against `driver` and, on change, retrains
/// the checkpointed model in place. The checkpoint's history is replaced by
/// the tests executed on the new version.
pub fn devops_update(
    checkpoint: &mut Checkpoint,
    driver: &mut dyn TestDriver,
    config: &AlConfig,
    observer: &mut dyn FnMut(&IterationRecord, &CganModel, &ActiveState) -> Control,
) -> Result<UpdateReport, ActiveError> {
    config.validate()?;
    let detection = detect_change(driver, &checkpoint.history, config.test_budget);
    let mut report = UpdateReport {
        changed: detection.changed,
        replayed: detection.replayed.len(),
        mismatches: detection.mismatches,
        failures: detection.failures,
        steps: 0,
        iterations: 0,
        stop: None,
        low_budget_warning: false,
    };
    if !detection.changed {
        return Ok(report);
    }
    let mut state = ActiveState {
        executed: detection.replayed,
        ..ActiveState::default()
    };
    let outcome = train_active(&mut checkpoint.model, driver, &mut state, config, observer)?;
    report.steps = state.training_steps;
    report.iterations = outcome.log.len();
    report.low_budget_warning = outcome.log.len() <= 1 && outcome.stop == StopReason::FjdBelowThreshold;
    report.stop = Some(outcome.stop);
    checkpoint.history = state.executed;
    Ok(report)
}
