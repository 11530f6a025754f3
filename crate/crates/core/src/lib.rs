//! Spectral propagation diagnostics.
//!
//! - [`metrics`]: effective rank, power-law alpha and Kirchhoff index of a
//!   singular-value spectrum, and clean-vs-adversarial deltas.
//! - [`lab`]: synthetic propagator chains for checking the perturbation and
//!   regime bounds numerically.
//! - [`store`]: the SPAC activation container, spectra and pair discovery.
//! - [`pipeline`]: batch pair metrics, delta tables, layer curves and the
//!   phase plane.

pub mod lab;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod store;

pub use metrics::{
    effective_rank, kirchhoff_index, metric_delta, spectral_alpha, KfFloor, MetricConfig, MetricDelta, MetricsError,
    SpectralMetrics, Spectrum, TailRange,
};
