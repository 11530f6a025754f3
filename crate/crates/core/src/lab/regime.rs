use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::chain::ChainRealization;
use crate::linalg::{leading_pair, spectral_norm};

/// Tolerance applied to the `≥ 1` gain comparisons and to the sharp
/// projection/directionality constructions, which hold with equality up
/// to rounding.
const COMPARE_TOL: f64 = 1e-9;

/// Operational readings of the asymptotic `≪ 1` hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// `ε_κ · L` must stay below this.
    pub alignment_depth: f64,
    /// `ξ · L / γ` must stay below this.
    pub spectral_purity: f64,
    /// Minimum `|(vᵀG)·ψ₀| / ‖vᵀG‖`.
    pub directionality: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            alignment_depth: 0.1,
            spectral_purity: 0.1,
            directionality: FRAC_1_SQRT_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Disintegration,
    Attractor,
    Unclassified,
}

/// One flag per attractor hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TheoremConditions {
    pub stability: bool,
    pub cumulative_gain: bool,
    pub alignment: bool,
    pub projection_bound: bool,
    pub directionality: bool,
    pub sign_consistency: bool,
    pub spectral_purity: bool,
}

impl TheoremConditions {
    pub fn all(&self) -> bool {
        self.stability
            && self.cumulative_gain
            && self.alignment
            && self.projection_bound
            && self.directionality
            && self.sign_consistency
            && self.spectral_purity
    }
}

/// Quantities measured from the realized matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainMeasurements {
    pub max_xi: f64,
    pub min_abs_kappa: f64,
    pub eps_kappa: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    /// Smallest `‖v_{k+1}ᵀG_k‖₂ / ‖G_k‖_F`.
    pub min_projection: f64,
    /// Smallest `|(v_{k+1}ᵀG_k)·ψ₀| / ‖v_{k+1}ᵀG_k‖₂`.
    pub min_directionality: f64,
    /// Largest injection spectral norm, `‖G‖_max`.
    pub max_injection_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    /// `(l, ‖J_l‖₂)` for `l = 1..L`.
    pub jacobian_norm_curve: Vec<(usize, f64)>,
    /// `σ₂/σ₁` of `J_L − G_L`; absent when that matrix vanishes.
    pub rank1_dominance: Option<f64>,
    /// `ξL/γ`
    pub predicted_noise_bound: f64,
    pub conditions_met: TheoremConditions,
    pub measured: ChainMeasurements,
    /// `‖J_L − G_L‖₂`, the norm of the collapsed component.
    pub collapse_norm: f64,
    /// `|cos|` between the leading left singular vector of `J_L − G_L` and `u_L`.
    pub attractor_alignment: Option<f64>,
    /// `|cos|` between the leading right singular vector of `J_L − G_L` and `ψ₀`.
    pub psi_alignment: Option<f64>,
    /// `‖G‖_max / (1 − μ)` when `μ = max ρ_j < 1`.
    pub disintegration_bound: Option<f64>,
}

/// Final Jacobian and its norm at every depth.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianTrace {
    pub final_jacobian: DMatrix<f64>,
    pub norm_curve: Vec<(usize, f64)>,
}

/// Iterates `J_l = W_l J_{l−1} + G_l` from `J_0 = 0`.
pub fn simulate_jacobian(chain: &ChainRealization) -> JacobianTrace {
    let first = &chain.injections[0];
    let mut j = DMatrix::zeros(first.nrows(), first.ncols());
    let mut norm_curve = Vec::with_capacity(chain.depth());
    for l in 1..=chain.depth() {
        j = chain.propagator(l) * j + &chain.injections[l - 1];
        norm_curve.push((l, spectral_norm(&j)));
    }
    JacobianTrace {
        final_jacobian: j,
        norm_curve,
    }
}

/// Evaluates both regimes' hypotheses on the realized chain and measures the
/// rank-1 structure of `J_L − G_L`.
pub fn classify_regime(chain: &ChainRealization, thresholds: &RegimeThresholds) -> RegimeReport {
    let depth = chain.depth();
    let depth_f = depth as f64;
    let kappas = chain.alignments();
    let gaps = chain.spectral_gaps();
    let rhos = chain.effective_gains();
    // ρ_L carries no alignment factor; the stability hypothesis is about
    // the links j < L, the final gain enters through the cumulative product.
    let link_rhos = &rhos[..depth - 1];

    let max_xi = gaps.iter().copied().fold(0.0, f64::max);
    let min_abs_kappa = kappas.iter().map(|k| k.abs()).fold(1.0, f64::min);
    let eps_kappa = 1.0 - min_abs_kappa;
    let max_rho = rhos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_rho = rhos.iter().copied().fold(f64::INFINITY, f64::min);

    let stability = link_rhos.iter().all(|r| *r >= 1.0 - COMPARE_TOL);
    let mut suffix = 1.0;
    let mut cumulative_gain = true;
    for layer in chain.layers.iter().rev() {
        suffix *= layer.sigma1;
        cumulative_gain &= suffix >= 1.0 - COMPARE_TOL;
    }
    let alignment = eps_kappa * depth_f < thresholds.alignment_depth;

    let mut min_projection = 1.0f64;
    let mut min_directionality = 1.0f64;
    let mut signs = Vec::with_capacity(depth.saturating_sub(1));
    for k in 1..depth {
        let g = &chain.injections[k - 1];
        let proj = chain.layers[k].v.transpose() * g;
        let proj_norm = proj.norm();
        let fro = g.norm();
        min_projection = min_projection.min(if fro > 0.0 { proj_norm / fro } else { 0.0 });
        let along = (&proj * &chain.psi0)[0];
        min_directionality = min_directionality.min(if proj_norm > 0.0 { along.abs() / proj_norm } else { 0.0 });
        signs.push((chain.path_amplitude(k) * along).signum());
    }
    let projection_bound = min_projection >= chain.gamma * (1.0 - COMPARE_TOL);
    let directionality = min_directionality >= thresholds.directionality * (1.0 - COMPARE_TOL);
    let sign_consistency = signs.iter().all(|s| *s != 0.0 && *s == signs[0]);
    let predicted_noise_bound = max_xi * depth_f / chain.gamma;
    let spectral_purity = predicted_noise_bound < thresholds.spectral_purity;

    let conditions_met = TheoremConditions {
        stability,
        cumulative_gain,
        alignment,
        projection_bound,
        directionality,
        sign_consistency,
        spectral_purity,
    };

    let trace = simulate_jacobian(chain);
    let collapsed = &trace.final_jacobian - &chain.injections[depth - 1];
    let leading = leading_pair(&collapsed);
    let (rank1_dominance, attractor_alignment, psi_alignment) = if leading.sigma1 > 0.0 {
        (
            Some(leading.sigma2 / leading.sigma1),
            Some(leading.left.dot(&chain.layers[depth - 1].u).abs()),
            Some(leading.right.dot(&chain.psi0).abs()),
        )
    } else {
        (None, None, None)
    };

    let max_injection_norm = chain.injections.iter().map(spectral_norm).fold(0.0, f64::max);
    let disintegration_bound = (max_rho < 1.0).then(|| max_injection_norm / (1.0 - max_rho));

    let regime = if conditions_met.all() {
        Regime::Attractor
    } else if max_rho < 1.0 {
        Regime::Disintegration
    } else {
        Regime::Unclassified
    };

    RegimeReport {
        regime,
        jacobian_norm_curve: trace.norm_curve,
        rank1_dominance,
        predicted_noise_bound,
        conditions_met,
        measured: ChainMeasurements {
            max_xi,
            min_abs_kappa,
            eps_kappa,
            min_rho,
            max_rho,
            min_projection,
            min_directionality,
            max_injection_norm,
        },
        collapse_norm: leading.sigma1,
        attractor_alignment,
        psi_alignment,
        disintegration_bound,
    }
}
