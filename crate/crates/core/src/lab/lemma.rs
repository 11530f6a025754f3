use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{build_chain, dominant_path_scale, ChainConfig, ChainRealization};
use super::LabError;
use crate::linalg::spectral_norm;

/// Default multiplier on the perturbation-accumulation bound.
pub const DEFAULT_LEMMA_SLACK: f64 = 2.0;

const DEGENERATE_PATH: f64 = 1e-12;

/// Per-factor floating-point allowance added to the bound, so an exactly
/// rank-1 chain (`ξ = 0`) is not failed on rounding.
pub const ROUNDING_ALLOWANCE: f64 = 1e-13;

/// Outcome of the perturbation-accumulation check for one product length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub m: usize,
    /// `‖Φ^(M) − Φ_dom^(M)‖₂ / ‖Φ_dom^(M)‖₂`
    pub measured_ratio: f64,
    /// `slack · (Mξ + M²ξε_κ) + M · ROUNDING_ALLOWANCE`
    pub bound: f64,
    pub satisfied: bool,
}

/// Checks `‖R^(M)‖₂/‖Φ_dom^(M)‖₂ ≤ slack·(Mξ + M²ξε_κ)` for `M = 1..=m_max`.
///
/// `ξ` is the chain's nominal gap and `ε_κ` the realized worst alignment
/// defect. The big-O constant of the second-order term is taken as 1 and the
/// whole bound is scaled by `slack`.
pub fn verify_lemma1(chain: &ChainRealization, m_max: usize, slack: f64) -> Result<Vec<LemmaVerdict>, LabError> {
    if m_max == 0 || m_max > chain.depth() {
        return Err(LabError::OutOfRange {
            what: "m_max",
            value: m_max,
            max: chain.depth(),
        });
    }
    if slack.is_nan() || slack < 1.0 {
        return Err(LabError::Infeasible {
            condition: format!("slack = {slack} must be at least 1"),
        });
    }
    let xi = chain.xi;
    let eps = chain.eps_kappa();
    let v1 = chain.layers[0].v.transpose();

    let mut verdicts = Vec::with_capacity(m_max);
    let mut phi = chain.propagator(1).clone();
    for m in 1..=m_max {
        if m > 1 {
            phi = chain.propagator(m) * phi;
        }
        let scale = dominant_path_scale(chain, m);
        let gains: f64 = chain.layers[..m].iter().map(|l| l.sigma1).product();
        // |∏κ| at rounding level means the dominant path is annihilated
        if !scale.is_finite() || scale.abs() <= DEGENERATE_PATH * gains {
            return Err(LabError::DominantPathDegenerate { m });
        }
        let residual = &phi - &chain.layers[m - 1].u * &v1 * scale;
        let measured_ratio = spectral_norm(&residual) / scale.abs();
        let mf = m as f64;
        let bound = slack * (mf * xi + mf * mf * xi * eps) + mf * ROUNDING_ALLOWANCE;
        verdicts.push(LemmaVerdict {
            m,
            measured_ratio,
            bound,
            satisfied: measured_ratio <= bound,
        });
    }
    Ok(verdicts)
}

/// Per-`M` summary across many seeded chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSummary {
    pub m: usize,
    pub bound_nominal: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// Largest observed `measured_ratio / bound`; below 1 means every trial held.
    pub worst_bound_fraction: f64,
    pub satisfied: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaFailure {
    pub seed: u64,
    pub verdict: LemmaVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSweep {
    pub trials: usize,
    pub summary: Vec<LemmaSummary>,
    pub failures: Vec<LemmaFailure>,
}

impl LemmaSweep {
    pub fn all_satisfied(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs [`verify_lemma1`] on `template` re-seeded with each of `seeds`.
/// Trials run in parallel; the reduction walks them in seed order, so the
/// result does not depend on scheduling.
pub fn lemma_sweep(template: &ChainConfig, seeds: &[u64], m_max: usize, slack: f64) -> Result<LemmaSweep, LabError> {
    let runs: Vec<(u64, Vec<LemmaVerdict>)> = seeds
        .par_iter()
        .map(|&seed| {
            let chain = build_chain(&template.with_seed(seed))?;
            verify_lemma1(&chain, m_max, slack).map(|v| (seed, v))
        })
        .collect::<Result<_, _>>()?;

    let trials = runs.len();
    let eps = template.eps_kappa();
    let mut summary = Vec::with_capacity(m_max);
    let mut failures = Vec::new();
    for m in 1..=m_max {
        let mut max_ratio = 0.0f64;
        let mut sum = 0.0;
        let mut worst = 0.0f64;
        let mut satisfied = 0;
        for (seed, verdicts) in &runs {
            let v = verdicts[m - 1];
            max_ratio = max_ratio.max(v.measured_ratio);
            sum += v.measured_ratio;
            if v.bound > 0.0 {
                worst = worst.max(v.measured_ratio / v.bound);
            } else if v.measured_ratio > 0.0 {
                worst = f64::INFINITY;
            }
            if v.satisfied {
                satisfied += 1;
            } else {
                failures.push(LemmaFailure {
                    seed: *seed,
                    verdict: v,
                });
            }
        }
        let mf = m as f64;
        summary.push(LemmaSummary {
            m,
            bound_nominal: slack * (mf * template.xi + mf * mf * template.xi * eps) + mf * ROUNDING_ALLOWANCE,
            max_ratio,
            mean_ratio: if trials > 0 { sum / trials as f64 } else { 0.0 },
            worst_bound_fraction: worst,
            satisfied,
            trials,
        });
    }
    Ok(LemmaSweep {
        trials,
        summary,
        failures,
    })
}
