//! Conditional GAN over encoded test points.
//!
//! The generator maps a uniformly sampled encoded test plus a requirement label
//! to a candidate test; the discriminator scores `(test, label)` pairs with the
//! probability that they come from real executions. Both sub-networks embed the
//! label independently and concatenate it with the features before the first
//! hidden layer.

mod checkpoint;

pub use checkpoint::{load, save, Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{encode, EncodedTest, InputSpace};
use crate::nn::{bce_loss_mean, Activation, AdamState, ConditionalNet, Matrix, NnError, Session};

/// Label value marking tests that violate the performance requirement.
pub const POSITIVE_LABEL: usize = 1;

/// Integer coding of a targeted performance requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionLabel(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub hidden_units: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    /// Also show the discriminator real tests paired with a wrong label as
    /// negatives, so it scores whether a test conforms to its condition.
    pub mismatch_negatives: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_units: 128,
            embed_dim: 10,
            learning_rate: AdamState::DEFAULT_LEARNING_RATE,
            mismatch_negatives: true,
        }
    }
}

/// A batch of encoded tests with their condition labels, one row per test.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_tests(tests: &[(EncodedTest, usize)]) -> Result<Self, NnError> {
        let rows: Vec<Vec<f64>> = tests.iter().map(|(t, _)| t.features.clone()).collect();
        Ok(Self {
            features: Matrix::from_rows(&rows)?,
            labels: tests.iter().map(|&(_, l)| l).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_tests(&self) -> Vec<(EncodedTest, ConditionLabel)> {
        (0..self.len())
            .map(|i| {
                (
                    EncodedTest {
                        features: self.features.row(i).to_vec(),
                    },
                    ConditionLabel(self.labels[i]),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: ConditionalNet,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, num_labels: usize, arch: &Architecture, rng: &mut R) -> Self {
        let h = arch.hidden_units;
        Self {
            net: ConditionalNet::new(
                feature_dim,
                num_labels,
                arch.embed_dim,
                &[(h, Activation::Relu), (h, Activation::Relu)],
                (feature_dim, Activation::Tanh),
                rng,
            ),
        }
    }

    /// Uniform samples of the encoded input space, used as generator input.
    pub fn sample_inputs<R: Rng + ?Sized>(space: &InputSpace, count: usize, rng: &mut R) -> Matrix {
        let mut data = Vec::with_capacity(count * space.dim());
        for _ in 0..count {
            let p = space.sample_uniform(rng);
            data.extend(encode(space, &p).expect("sampled point is in domain").features);
        }
        Matrix::from_vec(count, space.dim(), data).expect("input shape")
    }

    /// Transforms `count` random inputs, each conditioned on a uniformly random label.
    pub fn synthesize_batch<R: Rng + ?Sized>(&self, space: &InputSpace, count: usize, rng: &mut R) -> Batch {
        let inputs = Self::sample_inputs(space, count, rng);
        let labels: Vec<usize> = (0..count).map(|_| rng.gen_range(0..self.net.num_labels())).collect();
        let features = self
            .net
            .forward(&inputs, &labels)
            .expect("generator shapes are consistent");
        Batch { features, labels }
    }

    /// Transforms random inputs conditioned on the given labels, one per row.
    pub fn synthesize_labeled<R: Rng + ?Sized>(
        &self,
        space: &InputSpace,
        labels: &[usize],
        rng: &mut R,
    ) -> Result<Batch, NnError> {
        let inputs = Self::sample_inputs(space, labels.len(), rng);
        let features = self.net.forward(&inputs, labels)?;
        Ok(Batch {
            features,
            labels: labels.to_vec(),
        })
    }

    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        space: &InputSpace,
        count: usize,
        rng: &mut R,
    ) -> Vec<(EncodedTest, ConditionLabel)> {
        self.synthesize_batch(space, count, rng).to_tests()
    }

    /// Generates `count` candidates all conditioned on `label`.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        space: &InputSpace,
        label: ConditionLabel,
        count: usize,
        rng: &mut R,
    ) -> Result<Matrix, NnError> {
        let inputs = Self::sample_inputs(space, count, rng);
        self.net.forward(&inputs, &vec![label.0; count])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: ConditionalNet,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, num_labels: usize, arch: &Architecture, rng: &mut R) -> Self {
        let h = arch.hidden_units;
        Self {
            net: ConditionalNet::new(
                feature_dim,
                num_labels,
                arch.embed_dim,
                &[(h, Activation::Relu), (h, Activation::Relu)],
                (1, Activation::Sigmoid),
                rng,
            ),
        }
    }

    /// Probability that `(test, label)` is a real executed test.
    pub fn classify(&self, test: &EncodedTest, label: ConditionLabel) -> Result<f64, NnError> {
        let features = Matrix::from_vec(1, test.features.len(), test.features.clone())?;
        Ok(self.net.forward(&features, &[label.0])?.get(0, 0))
    }

    pub fn classify_batch(&self, batch: &Batch) -> Result<Vec<f64>, NnError> {
        Ok(self.net.forward(&batch.features, &batch.labels)?.into_data())
    }

    /// The requirement label under which each test looks most real.
    pub fn predict_labels(&self, features: &Matrix) -> Result<Vec<usize>, NnError> {
        let n = features.rows();
        let mut best = vec![(f64::NEG_INFINITY, 0usize); n];
        for label in 0..self.net.num_labels() {
            let scores = self.net.forward(features, &vec![label; n])?;
            for (b, &s) in best.iter_mut().zip(scores.data()) {
                if s > b.0 {
                    *b = (s, label);
                }
            }
        }
        Ok(best.into_iter().map(|(_, l)| l).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub disc_loss: f64,
    pub gen_loss: f64,
}

/// Generator, discriminator and their optimizers, plus the RNG that drives training.
#[derive(Debug, Clone, PartialEq)]
pub struct CganModel {
    pub space: InputSpace,
    pub num_requirements: usize,
    pub gen: Generator,
    pub disc: Discriminator,
    pub gen_optimizer: AdamState,
    pub disc_optimizer: AdamState,
    pub rng_seed: u64,
    pub mismatch_negatives: bool,
    pub(crate) rng: ChaCha8Rng,
}

impl CganModel {
    pub fn new(space: InputSpace, num_requirements: usize, seed: u64) -> Self {
        Self::with_architecture(space, num_requirements, seed, &Architecture::default())
    }

    pub fn with_architecture(space: InputSpace, num_requirements: usize, seed: u64, arch: &Architecture) -> Self {
        assert!(num_requirements >= 1, "at least one requirement label");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = space.dim();
        let gen = Generator::new(n, num_requirements, arch, &mut rng);
        let disc = Discriminator::new(n, num_requirements, arch, &mut rng);
        let shapes = |net: &ConditionalNet| net.parameters().iter().map(|p| p.len()).collect::<Vec<_>>();
        let gen_optimizer = AdamState::new(&shapes(&gen.net), arch.learning_rate);
        let disc_optimizer = AdamState::new(&shapes(&disc.net), arch.learning_rate);
        Self {
            space,
            num_requirements,
            gen,
            disc,
            gen_optimizer,
            disc_optimizer,
            rng_seed: seed,
            mismatch_negatives: arch.mismatch_negatives,
            rng,
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Synthesizes candidates with the model's own RNG stream.
    pub fn synthesize(&mut self, count: usize) -> Batch {
        self.gen.synthesize_batch(&self.space, count, &mut self.rng)
    }

    /// Synthesizes one candidate per given label with the model's RNG.
    pub fn synthesize_labeled(&mut self, labels: &[usize]) -> Result<Batch, NnError> {
        self.gen.synthesize_labeled(&self.space, labels, &mut self.rng)
    }

    /// One BCE step on the discriminator: real rows target 1, fake rows
    /// target 0. With `mismatch_negatives` and more than one label, every real
    /// row is repeated with a different label and target 0.
    pub fn train_disc_batch(&mut self, real: &Batch, fake: &Batch) -> Result<f64, NnError> {
        if real.is_empty() && fake.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let cols = if real.is_empty() {
            fake.features.cols()
        } else {
            real.features.cols()
        };
        let mut data = real.features.data().to_vec();
        data.extend_from_slice(fake.features.data());
        let mut labels: Vec<usize> = real.labels.iter().chain(&fake.labels).copied().collect();
        let mut targets: Vec<f64> = (0..labels.len())
            .map(|i| if i < real.len() { 1.0 } else { 0.0 })
            .collect();
        let n = self.num_requirements;
        if self.mismatch_negatives && n > 1 {
            data.extend_from_slice(real.features.data());
            for &l in &real.labels {
                let shift = if n == 2 { 1 } else { self.rng.gen_range(1..n) };
                labels.push((l + shift) % n);
                targets.push(0.0);
            }
        }
        let features = Matrix::from_vec(labels.len(), cols, data)?;
        let mut session = Session::new(&self.disc.net);
        let scores = session.forward(&features, &labels)?.data().to_vec();
        let loss = bce_loss_mean(&scores, &targets);
        let (grads, _) = session.backward_bce(&targets)?;
        self.disc_optimizer.step(self.disc.net.parameters_mut(), &grads)?;
        Ok(loss)
    }

    /// Updates the generator through the frozen discriminator so that its
    /// candidates are scored as real.
    pub fn train_gen_batch(&mut self, batch_size: usize) -> Result<f64, NnError> {
        if batch_size == 0 {
            return Err(NnError::EmptyBatch);
        }
        let inputs = Generator::sample_inputs(&self.space, batch_size, &mut self.rng);
        let labels: Vec<usize> = (0..batch_size)
            .map(|_| self.rng.gen_range(0..self.num_requirements))
            .collect();
        let gen_trace = self.gen.net.forward_trace(&inputs, &labels)?;
        let mut session = Session::new(&self.disc.net);
        let scores = session.forward(gen_trace.output(), &labels)?.data().to_vec();
        let targets = vec![1.0; batch_size];
        let loss = bce_loss_mean(&scores, &targets);
        let (_, grad_candidates) = session.backward_bce(&targets)?;
        let (grads, _) = self.gen.net.backward(&gen_trace, &grad_candidates)?;
        self.gen_optimizer.step(self.gen.net.parameters_mut(), &grads)?;
        Ok(loss)
    }

    /// A full adversarial step: `real.len()` fresh fakes for the discriminator,
    /// then one generator update on a batch of `real.len() * 2`.
    pub fn train_step(&mut self, real: &Batch) -> Result<StepLosses, NnError> {
        let fake = self.synthesize(real.len());
        let disc_loss = self.train_disc_batch(real, &fake)?;
        let gen_loss = self.train_gen_batch((real.len() * 2).max(1))?;
        Ok(StepLosses { disc_loss, gen_loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::InputVariableSpec;

    fn space() -> InputSpace {
        InputSpace::new(vec![
            InputVariableSpec::integer("a", 1, 20).unwrap(),
            InputVariableSpec::integer("b", 1, 62).unwrap(),
        ])
        .unwrap()
    }

    fn small_arch() -> Architecture {
        Architecture {
            hidden_units: 16,
            embed_dim: 4,
            learning_rate: 1e-3,
            ..Architecture::default()
        }
    }

    #[test]
    fn default_architecture_dimensions() {
        let m = CganModel::new(space(), 2, 1);
        let g = m.gen.net.layers();
        assert_eq!(m.gen.net.embedding().dim(), 10);
        assert_eq!(g.len(), 3);
        assert_eq!((g[0].in_dim(), g[0].out_dim()), (12, 128));
        assert_eq!(g[1].out_dim(), 128);
        assert_eq!((g[2].out_dim(), g[2].activation()), (2, Activation::Tanh));
        let d = m.disc.net.layers();
        assert_eq!((d[2].out_dim(), d[2].activation()), (1, Activation::Sigmoid));
        assert_eq!(m.gen_optimizer.learning_rate, 1e-4);
    }

    #[test]
    fn synthesize_counts_and_range() {
        let m = CganModel::new(space(), 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(m.gen.synthesize(&m.space, 0, &mut rng).is_empty());
        let out = m.gen.synthesize(&m.space, 100, &mut rng);
        assert_eq!(out.len(), 100);
        assert!(out
            .iter()
            .all(|(t, l)| l.0 < 2 && t.features.iter().all(|f| f.abs() < 1.0)));
        let again = m.gen.synthesize(&m.space, 100, &mut ChaCha8Rng::seed_from_u64(9));
        let first = m.gen.synthesize(&m.space, 100, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(again, first);
    }

    #[test]
    fn classify_is_pure_and_bounded() {
        let m = CganModel::new(space(), 2, 3);
        let t = EncodedTest {
            features: vec![0.2, -0.4],
        };
        let a = m.disc.classify(&t, ConditionLabel(1)).unwrap();
        assert!(a > 0.0 && a < 1.0);
        assert_eq!(a, m.disc.classify(&t, ConditionLabel(1)).unwrap());
        assert!(m
            .disc
            .classify(&EncodedTest { features: vec![0.0] }, ConditionLabel(0))
            .is_err());
    }

    #[test]
    fn disc_step_freezes_generator() {
        let mut m = CganModel::with_architecture(space(), 2, 5, &small_arch());
        let gen_before = m.gen.clone();
        let disc_before = m.disc.clone();
        let real = m.synthesize(32);
        let fake = m.synthesize(32);
        let loss = m.train_disc_batch(&real, &fake).unwrap();
        assert!(loss >= 0.0);
        assert_eq!(m.gen, gen_before);
        assert_ne!(m.disc, disc_before);
        let empty = Batch {
            features: Matrix::zeros(0, 2),
            labels: vec![],
        };
        assert_eq!(m.train_disc_batch(&empty, &empty), Err(NnError::EmptyBatch));
    }

    #[test]
    fn gen_step_freezes_discriminator() {
        let mut m = CganModel::with_architecture(space(), 2, 5, &small_arch());
        let disc_before = m.disc.clone();
        let gen_before = m.gen.clone();
        let loss = m.train_gen_batch(64).unwrap();
        assert!(loss >= 0.0);
        assert_eq!(m.disc, disc_before);
        assert_ne!(m.gen, gen_before);
        assert_eq!(m.train_gen_batch(0), Err(NnError::EmptyBatch));
    }

    #[test]
    fn disc_loss_trends_down_on_separable_batch() {
        let mut m = CganModel::with_architecture(space(), 2, 11, &small_arch());
        let real = Batch {
            features: Matrix::from_vec(4, 2, vec![0.9, 0.9, 0.8, 0.7, 0.85, 0.95, 0.7, 0.8]).unwrap(),
            labels: vec![1, 1, 1, 1],
        };
        let fake = Batch {
            features: Matrix::from_vec(4, 2, vec![-0.9, -0.9, -0.8, -0.7, -0.85, -0.95, -0.7, -0.8]).unwrap(),
            labels: vec![1, 1, 1, 1],
        };
        let losses: Vec<f64> = (0..50).map(|_| m.train_disc_batch(&real, &fake).unwrap()).collect();
        let first: f64 = losses[..10].iter().sum();
        let last: f64 = losses[40..].iter().sum();
        assert!(last < first, "first {first} last {last}");
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn constant_discriminator_gives_ln2_generator_loss() {
        let mut m = CganModel::with_architecture(space(), 2, 13, &small_arch());
        // Zero every discriminator parameter: the logit is 0 for any input, so
        // the score is exactly 0.5 and nothing flows back to the generator.
        for p in m.disc.net.parameters_mut() {
            p.fill(0.0);
        }
        let gen_before = m.gen.clone();
        let loss = m.train_gen_batch(32).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "loss {loss}");
        assert_eq!(m.gen, gen_before);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut m = CganModel::with_architecture(space(), 2, 21, &small_arch());
            let mut losses = Vec::new();
            for _ in 0..5 {
                let real = m.synthesize(8);
                losses.push(m.train_step(&real).unwrap());
            }
            (m, losses)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn predicted_labels_are_valid() {
        let m = CganModel::new(space(), 3, 2);
        let f = Matrix::from_vec(2, 2, vec![0.1, 0.2, -0.3, 0.9]).unwrap();
        let labels = m.disc.predict_labels(&f).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels.iter().all(|&l| l < 3));
    }
}
