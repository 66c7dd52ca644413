//! Seeded inputs shared by the benchmarks.

use pipcdr_core::data::{gen_gaussian_mixture, MixtureSpec};
use pipcdr_core::numerics::random_unit_rows;
use pipcdr_core::{Dataset, Matrix, Rng};

/// Unit-row embeddings of two views plus target keys, `n × d` each.
pub struct EmbeddingBatch {
    pub za: Matrix,
    pub zb: Matrix,
    pub za_target: Matrix,
    pub labels: Vec<usize>,
}

pub fn embedding_batch(n: usize, d: usize, k: usize, seed: u64) -> EmbeddingBatch {
    let mut rng = Rng::new(seed);
    EmbeddingBatch {
        za: random_unit_rows(n, d, &mut rng),
        zb: random_unit_rows(n, d, &mut rng),
        za_target: random_unit_rows(n, d, &mut rng),
        labels: (0..n).map(|_| rng.below(k)).collect(),
    }
}

/// The 8-cluster, 800-point, 32-dimensional benchmark mixture.
pub fn benchmark_data() -> Dataset {
    gen_gaussian_mixture(&MixtureSpec::balanced(8, 100, 32, 10.0, 0.5), &mut Rng::new(7))
        .expect("benchmark mixture is feasible")
}

/// Two random labelings of `n` points.
pub fn label_pair(n: usize, ka: usize, kb: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let a = (0..n).map(|_| rng.below(ka)).collect();
    let b = (0..n).map(|_| rng.below(kb)).collect();
    (a, b)
}
