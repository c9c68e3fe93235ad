//! Fixtures shared by the benches.

use densitron_core::{synth_generate, DenseTensor, Matrix, SparseTensor, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 50 learners, 10 questions, 8 attempts, planted rank 3, 80% missing.
pub fn rank3_fixture() -> (SparseTensor, DenseTensor) {
    let spec = SynthSpec { continuous: true, ..SynthSpec::new((50, 10, 8), 3, 0.80, 7) };
    synth_generate(&spec).expect("valid fixture")
}

/// `rows` power-law curves of length `m` with a ~ N(0.5, 0.02), b ~ N(0.2, 0.01).
pub fn curve_matrix(rows: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = Normal::new(0.5, 0.02).unwrap();
    let nb = Normal::new(0.2, 0.01).unwrap();
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            let (a, b): (f64, f64) = (na.sample(&mut rng), nb.sample(&mut rng));
            (1..=m).map(|x| (a * (x as f64).powf(b)).min(1.0)).collect()
        })
        .collect();
    Matrix::from_rows(&data).expect("non-empty")
}
