use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabError;
use crate::linalg::random_unit_vector;

pub const MIN_ALIGNMENT_TRIALS: usize = 100;

/// Monte Carlo estimate of `E|uᵀv|` for independent uniform unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEstimate {
    pub dim: usize,
    pub trials: usize,
    pub seed: u64,
    pub mean: f64,
    pub std_error: f64,
    /// Large-dimension approximation `√(2/(πD))`.
    pub asymptotic: f64,
    /// Closed form `Γ(D/2) / (√π Γ((D+1)/2))`.
    pub exact: f64,
}

impl AlignmentEstimate {
    /// Distance from the exact expectation in standard errors.
    pub fn z_score(&self) -> f64 {
        let diff = (self.mean - self.exact).abs();
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `√(2/(πD))`
pub fn asymptotic_alignment(dim: usize) -> f64 {
    (2.0 / (std::f64::consts::PI * dim as f64)).sqrt()
}

/// Exact `E|uᵀv|` on the sphere in `R^dim`, via the recurrence
/// `e(D+2) = e(D) · D/(D+1)` from `e(1) = 1`, `e(2) = 2/π`.
pub fn exact_alignment(dim: usize) -> f64 {
    assert!(dim >= 1, "dimension must be positive");
    let mut d = if dim % 2 == 1 { 1 } else { 2 };
    let mut e = if d == 1 { 1.0 } else { 2.0 / std::f64::consts::PI };
    while d < dim {
        e *= d as f64 / (d as f64 + 1.0);
        d += 2;
    }
    e
}

pub fn random_alignment_baseline(dim: usize, trials: usize, seed: u64) -> Result<AlignmentEstimate, LabError> {
    if dim == 0 {
        return Err(LabError::Infeasible {
            condition: "dimension must be at least 1".into(),
        });
    }
    if trials < MIN_ALIGNMENT_TRIALS {
        return Err(LabError::Infeasible {
            condition: format!("{trials} trials, need at least {MIN_ALIGNMENT_TRIALS}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let u = random_unit_vector(&mut rng, dim);
        let v = random_unit_vector(&mut rng, dim);
        let a = u.dot(&v).abs();
        sum += a;
        sum_sq += a * a;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(AlignmentEstimate {
        dim,
        trials,
        seed,
        mean,
        std_error: (var / n).sqrt(),
        asymptotic: asymptotic_alignment(dim),
        exact: exact_alignment(dim),
    })
}
