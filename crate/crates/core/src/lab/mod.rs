//! Synthetic propagator chains with controlled spectral geometry.
//!
//! A chain is a stack of layers `W_j = σ₁,ⱼ u_j v_jᵀ + E_j` with context
//! injections `G_j`. The context Jacobian follows `J_l = W_l J_{l−1} + G_l`.
//! This module builds such chains, checks how far the full product drifts
//! from its dominant rank-1 path, and classifies a chain as dispersive
//! (effective gain below one, bounded sensitivity) or attractor (aligned,
//! gain at least one, `J_L − G_L` collapsing to rank 1).

mod alignment;
mod chain;
mod lemma;
mod regime;

use thiserror::Error;

pub use alignment::{
    asymptotic_alignment, exact_alignment, random_alignment_baseline, AlignmentEstimate, MIN_ALIGNMENT_TRIALS,
};
pub use chain::{
    build_chain, chain_product, dominant_path_scale, dominant_product, ChainConfig, ChainLayout, ChainRealization,
    PropagatorLayer,
};
pub use lemma::{
    lemma_sweep, verify_lemma1, LemmaFailure, LemmaSummary, LemmaSweep, LemmaVerdict, DEFAULT_LEMMA_SLACK,
    ROUNDING_ALLOWANCE,
};
pub use regime::{
    classify_regime, simulate_jacobian, ChainMeasurements, JacobianTrace, Regime, RegimeReport, RegimeThresholds,
    TheoremConditions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("infeasible chain configuration: {condition}")]
    Infeasible { condition: String },
    #[error("{what} = {value} is out of range 1..={max}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        max: usize,
    },
    #[error("dominant path vanishes at product length {m}")]
    DominantPathDegenerate { m: usize },
}
