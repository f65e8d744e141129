//! Synthetic system under test: an input space with injected bottleneck
//! clusters and a computed (never slept) execution time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, InputSpace, InputVariableSpec, TestPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("cluster {index}: {reason}")]
    InvalidCluster { index: usize, reason: String },
    #[error("clusters {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("cluster index {index} out of range ({len} clusters)")]
    IndexOutOfRange { index: usize, len: usize },
}

pub const DEFAULT_DELAY: f64 = 5.0;
pub const DEFAULT_BASE_TIME: f64 = 0.05;
pub const DEFAULT_THRESHOLD: f64 = 1.0;
pub const DEFAULT_BENCHMARK_SEED: u64 = 2021;

fn default_delay() -> f64 {
    DEFAULT_DELAY
}

/// Axis-aligned box of closed integer intervals, one per input variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckCluster {
    pub bounds: Vec<(i64, i64)>,
    #[serde(default = "default_delay")]
    pub delay: f64,
}

impl BottleneckCluster {
    pub fn new(bounds: Vec<(i64, i64)>) -> Self {
        Self {
            bounds,
            delay: DEFAULT_DELAY,
        }
    }

    #[inline]
    pub fn contains(&self, point: &TestPoint) -> bool {
        self.bounds
            .iter()
            .zip(&point.values)
            .all(|(&(lo, hi), &v)| lo <= v && v <= hi)
    }

    pub fn volume(&self) -> u64 {
        self.bounds.iter().map(|&(lo, hi)| (hi - lo + 1) as u64).product()
    }

    pub fn overlaps(&self, other: &BottleneckCluster) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(&(a_lo, a_hi), &(b_lo, b_hi))| a_lo <= b_hi && b_lo <= a_hi)
    }
}

/// One execution of a test with its measured time and oracle label.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedTest {
    pub point: TestPoint,
    pub t_exe: f64,
    pub label: usize,
}

/// Label 1 means the test violated the time requirement.
#[inline]
pub fn oracle_label(t_exe: f64, threshold: f64) -> usize {
    usize::from(t_exe > threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub space: InputSpace,
    pub clusters: Vec<BottleneckCluster>,
    pub base_time: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl SimulatorConfig {
    pub fn new(
        space: InputSpace,
        clusters: Vec<BottleneckCluster>,
        base_time: f64,
        threshold: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        let config = Self {
            space,
            clusters,
            base_time,
            threshold,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.space.validate()?;
        if !(self.base_time > 0.0 && self.threshold > self.base_time) {
            return Err(SimError::Timing(format!(
                "need 0 < base_time ({}) < threshold ({})",
                self.base_time, self.threshold
            )));
        }
        for (index, c) in self.clusters.iter().enumerate() {
            let invalid = |reason: String| SimError::InvalidCluster { index, reason };
            if c.bounds.len() != self.space.dim() {
                return Err(invalid(format!(
                    "{} intervals for {} variables",
                    c.bounds.len(),
                    self.space.dim()
                )));
            }
            for (var, &(lo, hi)) in self.space.variables.iter().zip(&c.bounds) {
                if lo > hi || !var.contains(lo) || !var.contains(hi) {
                    return Err(invalid(format!("interval [{lo}, {hi}] outside `{}`", var.name)));
                }
            }
            if self.base_time + c.delay <= self.threshold {
                return Err(invalid(format!(
                    "delay {} does not push execution past the threshold",
                    c.delay
                )));
            }
        }
        for i in 0..self.clusters.len() {
            for j in i + 1..self.clusters.len() {
                if self.clusters[i].overlaps(&self.clusters[j]) {
                    return Err(SimError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }

    /// Index of the cluster containing `point`, if any.
    #[inline]
    pub fn cluster_of(&self, point: &TestPoint) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(point))
    }

    #[inline]
    pub fn is_positive(&self, point: &TestPoint) -> bool {
        self.cluster_of(point).is_some()
    }
}

pub fn execute_sim(config: &SimulatorConfig, point: &TestPoint) -> Result<ExecutedTest, SimError> {
    config.space.check(point)?;
    let t_exe = config.base_time + config.cluster_of(point).map_or(0.0, |i| config.clusters[i].delay);
    Ok(ExecutedTest {
        point: point.clone(),
        t_exe,
        label: oracle_label(t_exe, config.threshold),
    })
}

/// Analytic number of positive points: the summed volume of disjoint clusters.
pub fn positive_count(config: &SimulatorConfig) -> Result<u64, SimError> {
    config.validate()?;
    Ok(config.clusters.iter().map(BottleneckCluster::volume).sum())
}

/// Counts positives by testing every point of the space.
pub fn positive_count_exhaustive(config: &SimulatorConfig) -> u64 {
    config.space.iter_points().filter(|p| config.is_positive(p)).count() as u64
}

/// The RUBiS-shaped benchmark: CID∈[1,20], RID∈[1,62], IID∈[1,50], UID∈[1,50]
/// with 20 disjoint 10×15×10×10 bottleneck boxes.
pub fn default_benchmark(seed: u64) -> SimulatorConfig {
    let space = InputSpace::new(vec![
        InputVariableSpec::integer("CID", 1, 20).expect("CID"),
        InputVariableSpec::integer("RID", 1, 62).expect("RID"),
        InputVariableSpec::integer("IID", 1, 50).expect("IID"),
        InputVariableSpec::integer("UID", 1, 50).expect("UID"),
    ])
    .expect("benchmark space");
    let clusters = place_clusters(&space, &[10, 15, 10, 10], 20, seed);
    SimulatorConfig::new(space, clusters, DEFAULT_BASE_TIME, DEFAULT_THRESHOLD, seed)
        .expect("benchmark config is valid")
}

/// Places `count` disjoint boxes of the given side lengths by uniform rejection sampling.
pub fn place_clusters(space: &InputSpace, sides: &[i64], count: usize, seed: u64) -> Vec<BottleneckCluster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters: Vec<BottleneckCluster> = Vec::with_capacity(count);
    let mut attempts = 0u64;
    while clusters.len() < count {
        attempts += 1;
        assert!(attempts < 10_000_000, "could not place {count} disjoint clusters");
        let bounds = space
            .variables
            .iter()
            .zip(sides)
            .map(|(var, &side)| {
                let (lo, hi) = var.bounds();
                let start = rng.gen_range(lo..=hi - side + 1);
                (start, start + side - 1)
            })
            .collect();
        let candidate = BottleneckCluster::new(bounds);
        if clusters.iter().all(|c| !c.overlaps(&candidate)) {
            clusters.push(candidate);
        }
    }
    clusters
}

pub fn remove_clusters(config: &SimulatorConfig, indices: &[usize]) -> Result<SimulatorConfig, SimError> {
    let len = config.clusters.len();
    if let Some(&index) = indices.iter().find(|&&i| i >= len) {
        return Err(SimError::IndexOutOfRange { index, len });
    }
    let mut out = config.clone();
    out.clusters = config
        .clusters
        .iter()
        .enumerate()
        .filter(|(i, _)| !indices.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(clusters: Vec<BottleneckCluster>) -> Result<SimulatorConfig, SimError> {
        let space = InputSpace::new(vec![
            InputVariableSpec::integer("a", 1, 30).unwrap(),
            InputVariableSpec::integer("b", 1, 30).unwrap(),
            InputVariableSpec::integer("c", 1, 30).unwrap(),
            InputVariableSpec::integer("d", 1, 30).unwrap(),
        ])
        .unwrap();
        SimulatorConfig::new(space, clusters, DEFAULT_BASE_TIME, DEFAULT_THRESHOLD, 0)
    }

    #[test]
    fn inside_cluster_is_slow_and_positive() {
        let cfg = small_config(vec![BottleneckCluster::new(vec![(1, 10), (1, 15), (1, 10), (1, 10)])]).unwrap();
        let t = execute_sim(&cfg, &TestPoint::new(vec![5, 5, 5, 5])).unwrap();
        assert!((t.t_exe - 5.05).abs() < 1e-12);
        assert_eq!(t.label, 1);
        let boundary = execute_sim(&cfg, &TestPoint::new(vec![10, 15, 10, 10])).unwrap();
        assert_eq!(boundary.label, 1);
        let outside = execute_sim(&cfg, &TestPoint::new(vec![11, 5, 5, 5])).unwrap();
        assert_eq!(outside.t_exe, 0.05);
        assert_eq!(outside.label, 0);
        assert!(execute_sim(&cfg, &TestPoint::new(vec![0, 1, 1, 1])).is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(positive_count(&small_config(vec![]).unwrap()).unwrap(), 0);
        let one = small_config(vec![BottleneckCluster::new(vec![(1, 10), (1, 15), (1, 10), (1, 10)])]).unwrap();
        assert_eq!(positive_count(&one).unwrap(), 15_000);
        assert_eq!(positive_count_exhaustive(&one), 15_000);
    }

    #[test]
    fn overlapping_clusters_are_rejected() {
        let err = small_config(vec![
            BottleneckCluster::new(vec![(1, 10), (1, 10), (1, 10), (1, 10)]),
            BottleneckCluster::new(vec![(10, 12), (10, 12), (10, 12), (10, 12)]),
        ])
        .unwrap_err();
        assert_eq!(err, SimError::Overlap(0, 1));
    }

    #[test]
    fn weak_delay_and_bad_threshold_are_rejected() {
        let mut c = BottleneckCluster::new(vec![(1, 2); 4]);
        c.delay = 0.5;
        assert!(matches!(small_config(vec![c]), Err(SimError::InvalidCluster { .. })));
        let space = default_benchmark(1).space;
        assert!(SimulatorConfig::new(space, vec![], 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn default_benchmark_shape() {
        let cfg = default_benchmark(DEFAULT_BENCHMARK_SEED);
        assert_eq!(cfg.space.total_combinations(), 3_100_000);
        assert_eq!(cfg.clusters.len(), 20);
        assert_eq!(positive_count(&cfg).unwrap(), 300_000);
        assert_eq!(default_benchmark(DEFAULT_BENCHMARK_SEED), cfg);
        assert_ne!(default_benchmark(7).clusters, cfg.clusters);
    }

    #[test]
    fn removing_clusters() {
        let cfg = default_benchmark(DEFAULT_BENCHMARK_SEED);
        assert_eq!(remove_clusters(&cfg, &[]).unwrap(), cfg);
        let all: Vec<usize> = (0..20).collect();
        assert_eq!(positive_count(&remove_clusters(&cfg, &all).unwrap()).unwrap(), 0);
        let a = remove_clusters(&cfg, &[0, 1]).unwrap();
        let b = remove_clusters(&a, &[0, 1, 2]).unwrap();
        let c = remove_clusters(&b, &[0, 1, 2, 3]).unwrap();
        assert_eq!(c.clusters.len(), 11);
        assert_eq!(positive_count(&c).unwrap(), 165_000);
        assert!(matches!(
            remove_clusters(&cfg, &[20]),
            Err(SimError::IndexOutOfRange { index: 20, len: 20 })
        ));
    }
}
