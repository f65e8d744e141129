use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::active::AlConfig;
use crate::codec::InputSpace;
use crate::driver::{HttpDriver, HttpDriverConfig, SimDriver, TestDriver};
use crate::sim::{default_benchmark, remove_clusters, SimulatorConfig, DEFAULT_BENCHMARK_SEED};

/// Where tests run: the built-in benchmark, an explicit simulator, or a real
/// system over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SutConfig {
    /// The default 20-cluster benchmark, optionally with clusters removed.
    Benchmark {
        #[serde(default = "default_benchmark_seed")]
        seed: u64,
        #[serde(default)]
        remove: Vec<usize>,
    },
    Simulator(SimulatorConfig),
    Http {
        space: InputSpace,
        #[serde(flatten)]
        http: HttpDriverConfig,
    },
}

fn default_benchmark_seed() -> u64 {
    DEFAULT_BENCHMARK_SEED
}

impl Default for SutConfig {
    fn default() -> Self {
        Self::Benchmark {
            seed: DEFAULT_BENCHMARK_SEED,
            remove: Vec::new(),
        }
    }
}

impl SutConfig {
    /// Ground truth, when the system is simulated.
    pub fn simulator(&self) -> Result<Option<SimulatorConfig>, ExperimentError> {
        match self {
            Self::Benchmark { seed, remove } => {
                let base = default_benchmark(*seed);
                Ok(Some(if remove.is_empty() {
                    base
                } else {
                    remove_clusters(&base, remove)?
                }))
            }
            Self::Simulator(cfg) => {
                cfg.validate()?;
                Ok(Some(cfg.clone()))
            }
            Self::Http { .. } => Ok(None),
        }
    }

    pub fn space(&self) -> Result<InputSpace, ExperimentError> {
        match self {
            Self::Http { space, .. } => Ok(space.clone()),
            _ => Ok(self.simulator()?.expect("simulated").space),
        }
    }

    pub fn driver(&self) -> Result<Box<dyn TestDriver>, ExperimentError> {
        match self {
            Self::Http { space, http } => Ok(Box::new(HttpDriver::new(http.clone(), space.clone())?)),
            _ => Ok(Box::new(SimDriver::new(self.simulator()?.expect("simulated")))),
        }
    }
}

/// One experiment, read from a TOML file. Every field has a default, so an
/// empty file describes a passive run on the built-in benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of pre-labeled records available to training.
    pub dataset_size: usize,
    /// Discriminator batch: half real, half fake.
    pub batch_size: usize,
    pub accuracy_target: f64,
    /// Training steps between accuracy evaluations.
    pub eval_interval: u64,
    pub eval_sample_size: usize,
    /// Evaluations in the rolling accuracy mean/std.
    pub rolling_window: usize,
    /// Hard stop; defaults to twice the epoch size.
    pub max_steps: Option<u64>,
    pub num_requirements: usize,
    /// Executed tests kept in a checkpoint for later change detection.
    pub history_capacity: usize,
    pub compare_sizes: Vec<usize>,
    pub sut: SutConfig,
    pub al: AlConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset_size: 3_100_000,
            batch_size: 64,
            accuracy_target: 0.96,
            eval_interval: 50,
            eval_sample_size: 100,
            rolling_window: 100,
            max_steps: None,
            num_requirements: 2,
            history_capacity: 10_000,
            compare_sizes: vec![1_000, 5_000, 10_000],
            sut: SutConfig::default(),
            al: AlConfig::default(),
        }
    }
}

/// Training steps in one pass over `dataset_size` records.
pub fn epoch_size(dataset_size: u64, batch_size: u64) -> u64 {
    dataset_size / batch_size
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return fail(format!("batch_size must be even and ≥ 2, got {}", self.batch_size));
        }
        if self.num_requirements < 1 {
            return fail("num_requirements must be ≥ 1".into());
        }
        if !(self.accuracy_target > 0.0 && self.accuracy_target <= 1.0) {
            return fail(format!(
                "accuracy_target must be in (0, 1], got {}",
                self.accuracy_target
            ));
        }
        if self.eval_interval == 0 || self.eval_sample_size == 0 || self.rolling_window == 0 {
            return fail("eval_interval, eval_sample_size and rolling_window must be ≥ 1".into());
        }
        let space = self.sut.space()?;
        space.validate()?;
        if self.dataset_size as u64 > space.total_combinations() {
            return fail(format!(
                "dataset_size {} exceeds the {} combinations of the input space",
                self.dataset_size,
                space.total_combinations()
            ));
        }
        self.al.validate()?;
        Ok(())
    }

    pub fn epoch_size(&self) -> u64 {
        epoch_size(self.dataset_size as u64, self.batch_size as u64)
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps.unwrap_or(2 * self.epoch_size()).max(1)
    }
}
