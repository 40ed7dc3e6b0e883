//! Permutation-and-coefficient blinding of matrix products.
//!
//! A [`SecretKey`] holds three slots, each a vector of nonzero integer
//! coefficients plus a permutation. For `A (m x n)` and `B (n x p)` the slots
//! are sized `m`, `n` and `p`, and
//!
//! ```text
//! A'(i, j) = c_m(i) / c_n(j) * A(pi_m(i), pi_n(j))
//! B'(i, j) = c_n(i) / c_p(j) * B(pi_n(i), pi_p(j))
//! ```
//!
//! Writing `E_s(i, j) = c_s(i) * [pi_s(i) == j]` this is `A' = E_1 A E_2^-1` and
//! `B' = E_2 B E_3^-1`, so the worker's product is `E_1 (AB) E_3^-1` and the
//! holder of the key unblinds it in `O(mp)`.
//!
//! Rotating the slots ([`SecretKey::shift`]) lets the backward pass blind one
//! new operand (`delta^T`) and multiply it against the operands already blinded
//! in the forward pass.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Matrix, TensorError};

/// Default coefficient key space: integers `1..=255`.
pub const DEFAULT_KEY_SPACE: u64 = 255;

/// Default relative tolerance of the Freivalds residual test.
pub const DEFAULT_VERIFY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("integrity verification failed in round {round}: residual {max_residual:e} exceeds {threshold:e}")]
pub struct IntegrityFailure {
    pub round: u32,
    pub max_residual: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObfuscationError {
    #[error("operand shape {got:?} does not match key shape {expected:?}")]
    KeyShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid key slot: {0}")]
    InvalidSlot(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Integrity(#[from] IntegrityFailure),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Size `|K|` of the coefficient space; coefficients are drawn from
/// `{1, ..., |K|}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpace(u64);

impl KeySpace {
    pub fn new(size: u64) -> Result<Self, ObfuscationError> {
        if size < 2 {
            return Err(ObfuscationError::InvalidConfig(format!(
                "key space size must be at least 2, got {size}"
            )));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> u64 {
        self.0
    }
}

impl Default for KeySpace {
    fn default() -> Self {
        Self(DEFAULT_KEY_SPACE)
    }
}

/// One `(coefficients, permutation)` pair. Indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySlot {
    coeffs: Vec<f64>,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl KeySlot {
    pub fn new(coeffs: Vec<f64>, perm: Vec<usize>) -> Result<Self, ObfuscationError> {
        if coeffs.is_empty() || coeffs.len() != perm.len() {
            return Err(ObfuscationError::InvalidSlot(format!(
                "{} coefficients for a permutation of length {}",
                coeffs.len(),
                perm.len()
            )));
        }
        if let Some(c) = coeffs.iter().find(|c| **c == 0.0 || !c.is_finite()) {
            return Err(ObfuscationError::InvalidSlot(format!(
                "coefficient {c} is not a nonzero finite value"
            )));
        }
        let mut inv_perm = vec![usize::MAX; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inv_perm[p] != usize::MAX {
                return Err(ObfuscationError::InvalidSlot(
                    "permutation is not a bijection".into(),
                ));
            }
            inv_perm[p] = i;
        }
        Ok(Self {
            coeffs,
            perm,
            inv_perm,
        })
    }

    /// Uniform coefficients from the key space and a uniform permutation.
    pub fn random(len: usize, key_space: KeySpace, rng: &mut Rng) -> Self {
        let coeffs = (0..len)
            .map(|_| rng.int_inclusive(1, key_space.size()) as f64)
            .collect();
        let mut perm: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut perm);
        Self::new(coeffs, perm).expect("random slot is valid by construction")
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inv_perm(&self) -> &[usize] {
        &self.inv_perm
    }
}

/// Three ordered key slots. At generation they have lengths `(m, n, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    slots: [KeySlot; 3],
}

impl SecretKey {
    pub fn from_slots(slots: [KeySlot; 3]) -> Self {
        Self { slots }
    }

    /// Key generation for blinding an `(m x n) * (n x p)` product.
    pub fn generate(m: usize, n: usize, p: usize, key_space: KeySpace, rng: &mut Rng) -> Self {
        assert!(m > 0 && n > 0 && p > 0, "key dimensions must be positive");
        // All coefficients are drawn before the permutations.
        let coeffs: Vec<Vec<f64>> = [m, n, p]
            .iter()
            .map(|&len| {
                (0..len)
                    .map(|_| rng.int_inclusive(1, key_space.size()) as f64)
                    .collect()
            })
            .collect();
        let slots: Vec<KeySlot> = coeffs
            .into_iter()
            .map(|c| {
                let mut perm: Vec<usize> = (0..c.len()).collect();
                rng.shuffle(&mut perm);
                KeySlot::new(c, perm).expect("valid by construction")
            })
            .collect();
        let [a, b, c]: [KeySlot; 3] = slots.try_into().expect("three slots");
        Self { slots: [a, b, c] }
    }

    pub fn slot(&self, i: usize) -> &KeySlot {
        &self.slots[i]
    }

    /// Slot lengths in order.
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.slots[0].len(),
            self.slots[1].len(),
            self.slots[2].len(),
        )
    }

    /// Left circular shift: slot `i` of the result is slot `(i + phi) mod 3`
    /// of `self`. With `self` sized `(m, n, p)`, `shift(1)` is `(n, p, m)` and
    /// `shift(2)` is `(p, m, n)`.
    pub fn shift(&self, phi: i64) -> SecretKey {
        let phi = phi.rem_euclid(3) as usize;
        SecretKey {
            slots: std::array::from_fn(|i| self.slots[(i + phi) % 3].clone()),
        }
    }

    /// Blinds both operands of `a * b`.
    pub fn enc_pair(&self, a: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix), ObfuscationError> {
        let (m, n, p) = self.dims();
        check_shape(a, (m, n))?;
        check_shape(b, (n, p))?;
        Ok((
            blind(a, &self.slots[0], &self.slots[1]),
            blind(b, &self.slots[1], &self.slots[2]),
        ))
    }

    /// Blinds only the left operand, `E_1 a E_2^-1`.
    pub fn enc_left(&self, a: &Matrix) -> Result<Matrix, ObfuscationError> {
        let (m, n, _) = self.dims();
        check_shape(a, (m, n))?;
        Ok(blind(a, &self.slots[0], &self.slots[1]))
    }

    /// Blinds only the right operand, `E_2 b E_3^-1`.
    pub fn enc_right(&self, b: &Matrix) -> Result<Matrix, ObfuscationError> {
        let (_, n, p) = self.dims();
        check_shape(b, (n, p))?;
        Ok(blind(b, &self.slots[1], &self.slots[2]))
    }

    /// Unblinds a product without verifying it.
    pub fn dec_only(&self, c_enc: &Matrix) -> Result<Matrix, ObfuscationError> {
        let (m, _, p) = self.dims();
        check_shape(c_enc, (m, p))?;
        let rows = &self.slots[0];
        let cols = &self.slots[2];
        Ok(Matrix::from_fn(m, p, |i, j| {
            let si = rows.inv_perm[i];
            let sj = cols.inv_perm[j];
            cols.coeffs[sj] / rows.coeffs[si] * c_enc.get(si, sj)
        }))
    }

    /// Unblinds `c_enc` and checks it against the retained plaintext operands
    /// with `verifier.rounds` Freivalds rounds.
    pub fn dec(
        &self,
        c_enc: &Matrix,
        a_plain: &Matrix,
        b_plain: &Matrix,
        verifier: Verifier,
        rng: &mut Rng,
    ) -> Result<Matrix, ObfuscationError> {
        let (m, n, p) = self.dims();
        check_shape(a_plain, (m, n))?;
        check_shape(b_plain, (n, p))?;
        let c = self.dec_only(c_enc)?;
        verifier.check(a_plain, b_plain, &c, rng)?;
        Ok(c)
    }
}

fn check_shape(a: &Matrix, expected: (usize, usize)) -> Result<(), ObfuscationError> {
    if a.shape() != expected {
        return Err(ObfuscationError::KeyShape {
            expected,
            got: a.shape(),
        });
    }
    Ok(())
}

fn blind(a: &Matrix, rows: &KeySlot, cols: &KeySlot) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        rows.coeffs[i] / cols.coeffs[j] * a.get(rows.perm[i], cols.perm[j])
    })
}

/// `E(i, j) = c(i) * [pi(i) == j]`.
pub fn encryption_matrix(slot: &KeySlot) -> Matrix {
    let n = slot.len();
    Matrix::from_fn(n, n, |i, j| {
        if slot.perm[i] == j {
            slot.coeffs[i]
        } else {
            0.0
        }
    })
}

/// `E^-1(i, j) = c(pi^-1(i))^-1 * [pi^-1(i) == j]`.
pub fn inverse_encryption_matrix(slot: &KeySlot) -> Matrix {
    let n = slot.len();
    Matrix::from_fn(n, n, |i, j| {
        let src = slot.inv_perm[i];
        if src == j {
            1.0 / slot.coeffs[src]
        } else {
            0.0
        }
    })
}

/// Freivalds verification parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verifier {
    pub rounds: u32,
    pub tolerance: f64,
}

impl Verifier {
    pub fn new(rounds: u32) -> Self {
        Self {
            rounds,
            tolerance: DEFAULT_VERIFY_TOLERANCE,
        }
    }

    /// Residual bound for `c ?= a * b`: `tol * max(1, |a|_max * |b|_max * n)`.
    pub fn threshold(&self, a: &Matrix, b: &Matrix) -> f64 {
        self.tolerance * (a.max_abs() * b.max_abs() * a.cols() as f64).max(1.0)
    }

    /// Runs `rounds` checks of `a (b r) - c r` with `r` uniform in `{0,1}^p`.
    pub fn check(
        &self,
        a: &Matrix,
        b: &Matrix,
        c: &Matrix,
        rng: &mut Rng,
    ) -> Result<(), IntegrityFailure> {
        let threshold = self.threshold(a, b);
        let (m, n, p) = (a.rows(), a.cols(), b.cols());
        debug_assert_eq!(b.rows(), n);
        debug_assert_eq!(c.shape(), (m, p));
        let mut r = vec![0.0; p];
        let mut br = vec![0.0; n];
        for round in 0..self.rounds {
            for v in r.iter_mut() {
                *v = if rng.bit() { 1.0 } else { 0.0 };
            }
            for (k, out) in br.iter_mut().enumerate() {
                *out = dot(b.row(k), &r);
            }
            let mut max_residual = 0.0f64;
            for i in 0..m {
                let residual = dot(a.row(i), &br) - dot(c.row(i), &r);
                // NaN compares false, so test the negation.
                if !(residual.abs() <= max_residual) {
                    max_residual = if residual.is_nan() {
                        f64::INFINITY
                    } else {
                        residual.abs()
                    };
                }
            }
            if max_residual > threshold {
                return Err(IntegrityFailure {
                    round,
                    max_residual,
                    threshold,
                });
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Whether the checked computation is a forward pass only or full training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Inference,
    Training {
        epochs: u64,
        dataset_size: u64,
        batch_size: u64,
    },
}

/// Parameters of the `t`-integrity target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrityConfig {
    /// Tolerated probability of accepting a wrong output.
    pub t: f64,
    pub task: Task,
    pub n_workers: u64,
    pub n_layers: u64,
}

impl IntegrityConfig {
    pub fn validate(&self) -> Result<(), ObfuscationError> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(ObfuscationError::InvalidConfig(format!(
                "t must lie in (0, 1), got {}",
                self.t
            )));
        }
        let mut counts = vec![self.n_workers, self.n_layers];
        if let Task::Training {
            epochs,
            dataset_size,
            batch_size,
        } = self.task
        {
            counts.extend([epochs, dataset_size, batch_size]);
        }
        if counts.contains(&0) {
            return Err(ObfuscationError::InvalidConfig(
                "all counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Offloaded products per worker per layer: 1 for inference, three per
    /// batch (one forward, two backward) over every batch of every epoch for
    /// training.
    pub fn alpha(&self) -> u64 {
        match self.task {
            Task::Inference => 1,
            Task::Training {
                epochs,
                dataset_size,
                batch_size,
            } => 3 * epochs * dataset_size.div_ceil(batch_size),
        }
    }

    /// `log2(1 / (1 - (1 - t)^(1 / (alpha N L))))`.
    pub fn rounds_bound(&self) -> f64 {
        let exponent = 1.0 / (self.alpha() as f64 * self.n_workers as f64 * self.n_layers as f64);
        let per_product = -(exponent * (-self.t).ln_1p()).exp_m1();
        -per_product.log2()
    }
}

/// Smallest `k` strictly above [`IntegrityConfig::rounds_bound`].
pub fn min_rounds(cfg: &IntegrityConfig) -> Result<u32, ObfuscationError> {
    cfg.validate()?;
    Ok(cfg.rounds_bound().floor() as u32 + 1)
}

/// `log2(m! n! |K|^(m + n))`, the brute-force search space for recovering an
/// `m x n` blinded matrix.
pub fn brute_force_bound(m: u64, n: u64, key_space: KeySpace) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    (ln_gamma(m as f64 + 1.0) + ln_gamma(n as f64 + 1.0)) / ln2
        + (m + n) as f64 * (key_space.size() as f64).log2()
}
