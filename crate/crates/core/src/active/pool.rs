use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cgan::Batch;
use crate::codec::{encode, InputSpace, TestPoint};
use crate::nn::Matrix;
use crate::sim::{ExecutedTest, SimulatorConfig};

/// A pre-labeled dataset: points of the space referenced by enumeration index.
///
/// The dataset order is a seeded shuffle of the whole space, so the first
/// `n` records of a larger dataset are exactly the smaller dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    indices: Vec<u32>,
    labels: Vec<u8>,
}

impl LabeledPool {
    pub fn from_simulator(config: &SimulatorConfig, size: usize, seed: u64) -> Self {
        let total = config.space.total_combinations();
        assert!(total <= u32::MAX as u64, "space too large for an indexed pool");
        assert!(size as u64 <= total, "dataset larger than the input space");
        let mut order: Vec<u32> = (0..total as u32).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(size);
        let labels = order
            .iter()
            .map(|&i| u8::from(config.is_positive(&config.space.point_at(u64::from(i)))))
            .collect();
        Self { indices: order, labels }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn point(&self, space: &InputSpace, i: usize) -> TestPoint {
        space.point_at(u64::from(self.indices[i]))
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Draws `n` real tests uniformly from pool ∪ executed ∪ labeled.
/// Returns `None` when all three are empty.
pub fn sample_real_batch<R: Rng + ?Sized>(
    space: &InputSpace,
    pool: Option<&LabeledPool>,
    executed: &[ExecutedTest],
    labeled: &[(TestPoint, usize)],
    n: usize,
    rng: &mut R,
) -> Option<Batch> {
    let pool_len = pool.map_or(0, LabeledPool::len);
    let total = pool_len + executed.len() + labeled.len();
    if total == 0 || n == 0 {
        return None;
    }
    let dim = space.dim();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut i = rng.gen_range(0..total);
        let (point, label) = if i < pool_len {
            let pool = pool.expect("non-empty pool");
            (pool.point(space, i), pool.label(i))
        } else {
            i -= pool_len;
            if i < executed.len() {
                (executed[i].point.clone(), executed[i].label)
            } else {
                let (p, l) = &labeled[i - executed.len()];
                (p.clone(), *l)
            }
        };
        data.extend(encode(space, &point).expect("stored tests are in domain").features);
        labels.push(label);
    }
    Some(Batch {
        features: Matrix::from_vec(n, dim, data).expect("batch shape"),
        labels,
    })
}
