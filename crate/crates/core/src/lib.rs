//! Black-box performance test generation.
//!
//! A conditional GAN learns where in a system's input space the performance
//! requirement is violated. Training is driven by pool-based active learning:
//! the discriminator's least confident candidates are executed on the system
//! under test, the confident ones are self-labeled. A trained generator then
//! emits test suites targeting a requirement, and can be cheaply retrained
//! when the system changes.

pub mod active;
pub mod cgan;
pub mod codec;
pub mod devops;
pub mod driver;
pub mod experiment;
pub mod nn;
pub mod sim;
pub mod testgen;

pub use cgan::{CganModel, Checkpoint, ConditionLabel, POSITIVE_LABEL};
pub use codec::{decode, encode, EncodedTest, InputSpace, InputVariableSpec, TestPoint};
pub use sim::{default_benchmark, execute_sim, ExecutedTest, SimulatorConfig};
