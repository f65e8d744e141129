//! Test drivers: execute test points on a system under test and label them
//! with the time-threshold oracle.

mod http;

pub use http::{DerivedBinding, HttpDriver, HttpDriverConfig};

use thiserror::Error;

use crate::codec::{CodecError, TestPoint};
use crate::sim::{execute_sim, ExecutedTest, SimError, SimulatorConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("request {request} ({url}) failed after {partial_time:.3}s: {message}")]
    Request {
        request: usize,
        url: String,
        message: String,
        /// Wall-clock seconds spent on the test before the failure.
        partial_time: f64,
    },
    #[error("invalid driver configuration: {0}")]
    Config(String),
}

/// Executes tests one at a time, in order.
pub trait TestDriver {
    /// One result per input point, in input order. A failed point does not
    /// stop the batch.
    fn execute(&mut self, points: &[TestPoint]) -> Vec<Result<ExecutedTest, DriverError>>;

    /// Number of points executed so far (successful or not).
    fn executions(&self) -> u64;
}

/// Runs `points` through `driver`.
pub fn execute_driver(driver: &mut dyn TestDriver, points: &[TestPoint]) -> Vec<Result<ExecutedTest, DriverError>> {
    driver.execute(points)
}

/// Driver backed by the bottleneck simulator.
#[derive(Debug, Clone)]
pub struct SimDriver {
    config: SimulatorConfig,
    executions: u64,
}

impl SimDriver {
    pub fn new(config: SimulatorConfig) -> Self {
        Self { config, executions: 0 }
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }
}

impl TestDriver for SimDriver {
    fn execute(&mut self, points: &[TestPoint]) -> Vec<Result<ExecutedTest, DriverError>> {
        self.executions += points.len() as u64;
        points
            .iter()
            .map(|p| execute_sim(&self.config, p).map_err(DriverError::from))
            .collect()
    }

    fn executions(&self) -> u64 {
        self.executions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_benchmark;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn simulator_driver_preserves_order_and_count() {
        let cfg = default_benchmark(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<TestPoint> = (0..1000).map(|_| cfg.space.sample_uniform(&mut rng)).collect();
        let mut driver = SimDriver::new(cfg.clone());
        let a = execute_driver(&mut driver, &points);
        assert_eq!(a.len(), 1000);
        for (p, r) in points.iter().zip(&a) {
            let r = r.as_ref().unwrap();
            assert_eq!(&r.point, p);
            assert_eq!(r.label, usize::from(r.t_exe > cfg.threshold));
        }
        let b = execute_driver(&mut SimDriver::new(cfg), &points);
        assert_eq!(a, b);
        assert_eq!(driver.executions(), 1000);
        assert!(execute_driver(&mut driver, &[]).is_empty());
    }

    #[test]
    fn invalid_point_fails_alone() {
        let cfg = default_benchmark(3);
        let mut driver = SimDriver::new(cfg);
        let out = driver.execute(&[
            TestPoint::new(vec![1, 1, 1, 1]),
            TestPoint::new(vec![99, 1, 1, 1]),
            TestPoint::new(vec![2, 2, 2, 2]),
        ]);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
    }
}
