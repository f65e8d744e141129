//! Test-suite generation from a trained generator, plus the uniform random
//! baseline it is compared against.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cgan::{load, CheckpointError, ConditionLabel, Generator};
use crate::codec::{decode, EncodedTest, InputSpace, TestPoint};
use crate::sim::SimulatorConfig;

/// Candidates synthesized per generator call.
const CHUNK: usize = 1024;
/// With `unique`, give up after this many candidates per requested test.
pub const UNIQUE_RETRY_FACTOR: usize = 100;

#[derive(Debug, Error)]
pub enum TestgenError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("requirement {requirement} is not one of the model's {num_requirements} labels")]
    UnknownRequirement {
        requirement: usize,
        num_requirements: usize,
    },
    #[error("suite size must be at least 1")]
    EmptySuite,
    #[error("only {found} unique tests found after {tried} candidates ({requested} requested)")]
    UniqueExhausted {
        requested: usize,
        found: usize,
        tried: usize,
    },
    #[error("writing suite: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteReport {
    pub total: usize,
    pub unique: usize,
    /// Known only when a simulator ground truth is supplied.
    pub positives: Option<usize>,
}

impl SuiteReport {
    pub fn of(points: &[TestPoint], ground_truth: Option<&SimulatorConfig>) -> Self {
        let unique = points.iter().collect::<HashSet<_>>().len();
        let positives = ground_truth.map(|cfg| points.iter().filter(|p| cfg.is_positive(p)).count());
        Self {
            total: points.len(),
            unique,
            positives,
        }
    }
}

/// Draws `size` tests from `gen` conditioned on `requirement`. Duplicates are
/// kept unless `unique` is set, in which case they are rejected until
/// `UNIQUE_RETRY_FACTOR * size` candidates have been tried.
pub fn generate_tests<R: Rng + ?Sized>(
    gen: &Generator,
    space: &InputSpace,
    requirement: ConditionLabel,
    size: usize,
    unique: bool,
    rng: &mut R,
) -> Result<Vec<TestPoint>, TestgenError> {
    if size == 0 {
        return Err(TestgenError::EmptySuite);
    }
    let num_requirements = gen.net.num_labels();
    if requirement.0 >= num_requirements {
        return Err(TestgenError::UnknownRequirement {
            requirement: requirement.0,
            num_requirements,
        });
    }
    let cap = size.saturating_mul(UNIQUE_RETRY_FACTOR);
    let mut out = Vec::with_capacity(size);
    let mut seen = HashSet::new();
    let mut tried = 0;
    while out.len() < size {
        if unique && tried >= cap {
            return Err(TestgenError::UniqueExhausted {
                requested: size,
                found: out.len(),
                tried,
            });
        }
        let want = if unique { CHUNK } else { (size - out.len()).min(CHUNK) };
        let batch = gen
            .predict(space, requirement, want, rng)
            .expect("generator matches the checkpoint's input space");
        for i in 0..batch.rows() {
            if out.len() == size || (unique && tried >= cap) {
                break;
            }
            tried += 1;
            let p = decode(
                space,
                &EncodedTest {
                    features: batch.row(i).to_vec(),
                },
            );
            if !unique || seen.insert(p.clone()) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Loads a checkpoint and generates a suite from its generator alone.
pub fn generate_suite(
    checkpoint: impl AsRef<Path>,
    requirement: ConditionLabel,
    size: usize,
    seed: u64,
    unique: bool,
    ground_truth: Option<&SimulatorConfig>,
) -> Result<(Vec<TestPoint>, SuiteReport), TestgenError> {
    let ckpt = load(checkpoint)?;
    let model = ckpt.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = generate_tests(&model.gen, &model.space, requirement, size, unique, &mut rng)?;
    let report = SuiteReport::of(&points, ground_truth);
    Ok((points, report))
}

/// `size` independent uniform points of the space.
pub fn random_suite<R: Rng + ?Sized>(space: &InputSpace, size: usize, rng: &mut R) -> Vec<TestPoint> {
    (0..size).map(|_| space.sample_uniform(rng)).collect()
}

/// Writes one row per test with the variable names as header. A `positive`
/// column is added when a ground truth is given.
pub fn write_suite_csv<W: Write>(
    writer: W,
    space: &InputSpace,
    points: &[TestPoint],
    ground_truth: Option<&SimulatorConfig>,
) -> Result<(), TestgenError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = space.variable_names();
    if ground_truth.is_some() {
        header.push("positive");
    }
    w.write_record(&header)?;
    for p in points {
        let mut row = space.format_point(p);
        if let Some(cfg) = ground_truth {
            row.push(u8::from(cfg.is_positive(p)).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
