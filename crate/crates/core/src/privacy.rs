//! Mutual-information leakage of blinding schemes.
//!
//! The privacy score of a scheme is `-I(X; X_o)` where `X_o` is what a worker
//! observes. Entries are paired by position and the information is estimated
//! with a plug-in histogram over equal-width bins.

use crate::error::{Error, Result};
use crate::obfuscate::{KeySlot, KeySpace, SecretKey};
use crate::rng::Rng;
use crate::tensor::Matrix;

pub const DEFAULT_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlindScheme {
    /// Direct exposure.
    Identity,
    ScalarMult { mu: f64 },
    /// `X + R` with Gaussian `R` of the same standard deviation as `X`.
    AddRandom { seed: u64 },
    /// Row and column coefficients only, identity permutations.
    EncNoPerm,
    /// The full blinding transform.
    EncFull,
}

impl BlindScheme {
    pub fn name(&self) -> &'static str {
        match self {
            BlindScheme::Identity => "identity",
            BlindScheme::ScalarMult { .. } => "scalar_mult",
            BlindScheme::AddRandom { .. } => "add_random",
            BlindScheme::EncNoPerm => "enc_no_perm",
            BlindScheme::EncFull => "enc_full",
        }
    }

    /// What a worker sees of `x`. `rng` draws keys for the two blinding
    /// variants.
    pub fn apply(&self, x: &Matrix, key_space: KeySpace, rng: &mut Rng) -> Result<Matrix> {
        let (m, n) = x.shape();
        Ok(match *self {
            BlindScheme::Identity => x.clone(),
            BlindScheme::ScalarMult { mu } => {
                if mu == 0.0 || !mu.is_finite() {
                    return Err(Error::Config(format!("scalar multiplier must be nonzero, got {mu}")));
                }
                x.scale(mu)
            }
            BlindScheme::AddRandom { seed } => {
                let sd = std_dev(x.as_slice());
                let mut noise_rng = Rng::new(seed);
                let noise: Vec<f64> = (0..m * n).map(|_| sd * noise_rng.normal()).collect();
                x.add(&Matrix::new(m, n, noise)?)?
            }
            BlindScheme::EncFull => SecretKey::generate(m, n, 1, key_space, rng).enc_left(x)?,
            BlindScheme::EncNoPerm => {
                let full = SecretKey::generate(m, n, 1, key_space, rng);
                let strip = |i: usize| {
                    let coeffs = full.slot(i).coeffs().to_vec();
                    let len = coeffs.len();
                    KeySlot::new(coeffs, (0..len).collect()).expect("identity permutation")
                };
                SecretKey::from_slots([strip(0), strip(1), strip(2)]).enc_left(x)?
            }
        })
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub bits: f64,
    pub n_bins: usize,
    pub n_samples: usize,
}

fn bin_indices(v: &[f64], n_bins: usize) -> Vec<usize> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    v.iter()
        .map(|&x| {
            if width <= 0.0 {
                0
            } else {
                (((x - lo) / width * n_bins as f64) as usize).min(n_bins - 1)
            }
        })
        .collect()
}

/// Plug-in estimate of `I(X; Y)` in bits. Each variable is cut into `n_bins`
/// equal-width bins over its observed range.
pub fn mi_estimate(x: &[f64], y: &[f64], n_bins: usize) -> Result<MiEstimate> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Config(format!(
            "need equal-length nonempty samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {n_bins}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Config("samples must be finite".into()));
    }
    let bx = bin_indices(x, n_bins);
    let by = bin_indices(y, n_bins);
    let mut joint = vec![0usize; n_bins * n_bins];
    let mut px = vec![0usize; n_bins];
    let mut py = vec![0usize; n_bins];
    for (&i, &j) in bx.iter().zip(&by) {
        joint[i * n_bins + j] += 1;
        px[i] += 1;
        py[j] += 1;
    }
    let n = x.len() as f64;
    let mut bits = 0.0;
    for i in 0..n_bins {
        for j in 0..n_bins {
            let c = joint[i * n_bins + j];
            if c > 0 {
                let pxy = c as f64 / n;
                bits += pxy * (pxy * n * n / (px[i] as f64 * py[j] as f64)).log2();
            }
        }
    }
    Ok(MiEstimate {
        bits: bits.max(0.0),
        n_bins,
        n_samples: x.len(),
    })
}

/// `-I(X; X_o)` over positionally paired entries.
pub fn privacy_score(
    scheme: BlindScheme,
    x: &Matrix,
    key_space: KeySpace,
    n_bins: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let observed = scheme.apply(x, key_space, rng)?;
    Ok(-mi_estimate(x.as_slice(), observed.as_slice(), n_bins)?.bits)
}

/// Spatially correlated test image: uniform noise smoothed by a wrapping
/// `(2 radius + 1)^2` box filter.
pub fn smooth_field(rows: usize, cols: usize, radius: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let noise: Vec<f64> = (0..rows * cols).map(|_| rng.uniform()).collect();
    let r = radius as isize;
    let wrap = |v: isize, n: usize| v.rem_euclid(n as isize) as usize;
    Matrix::from_fn(rows, cols, |i, j| {
        let mut acc = 0.0;
        for di in -r..=r {
            for dj in -r..=r {
                acc += noise[wrap(i as isize + di, rows) * cols + wrap(j as isize + dj, cols)];
            }
        }
        acc / ((2 * r + 1) * (2 * r + 1)) as f64
    })
}
