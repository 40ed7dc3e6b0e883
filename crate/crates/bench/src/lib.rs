//! Shared fixtures for the criterion benches.

use blindtrain::{Matrix, Rng};

/// A random `(m x n, n x p)` operand pair.
pub fn operands(m: usize, n: usize, p: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = Rng::new(seed);
    (
        Matrix::random_normal(m, n, &mut rng),
        Matrix::random_normal(n, p, &mut rng),
    )
}
