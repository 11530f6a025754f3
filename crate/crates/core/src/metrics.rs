//! Spectral observables of a singular-value spectrum.
//!
//! Three scalars summarise the shape of a spectrum `σ₁ ≥ σ₂ ≥ … ≥ σ_k`:
//!
//! - effective rank: `exp(H(p))` with `p_i = σ_i / Σσ`, the entropy-based
//!   count of "active" modes;
//! - spectral alpha: the negated OLS slope of `ln σ_i` against `ln i` over a
//!   tail range, so a decaying power law `σ_i ∝ i^-α` yields a positive `α`;
//! - Kirchhoff index: `Σ 1/λ_i` with `λ_i = σ_i²`, with a configurable floor
//!   on `λ` so near-null modes stay finite.
//!
//! All metrics are computed on the top-K truncated spectrum; `K` is the unit
//! of comparison between clean and perturbed activations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of usable points for the tail regression.
pub const MIN_TAIL_POINTS: usize = 3;

/// Default relative Kirchhoff floor: `λ_i` is clamped to `1e-12 · λ₁`.
pub const DEFAULT_RELATIVE_KF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("degenerate spectrum: no positive singular value")]
    DegenerateSpectrum,
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("insufficient tail: {usable} positive values in {start}..{end}, need at least {MIN_TAIL_POINTS}")]
    InsufficientTail { usable: usize, start: usize, end: usize },
    #[error("tail {start}..{end} is outside a spectrum of length {len}")]
    TailOutOfRange { start: usize, end: usize, len: usize },
    #[error("truncation level {k} is invalid for a spectrum of length {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("zero eigenvalue at index {index} with a zero floor")]
    DivisionDegenerate { index: usize },
    #[error("incompatible metrics: {0}")]
    IncompatibleMetrics(String),
    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },
}

/// Singular values sorted non-increasing, together with the rank of the
/// matrix they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<f64>,
    source_rank: usize,
}

impl Spectrum {
    /// Validates an already-ordered spectrum.
    pub fn new(values: Vec<f64>, source_rank: usize) -> Result<Self, MetricsError> {
        if source_rank == 0 {
            return Err(MetricsError::InvalidSpectrum("source rank must be positive".into()));
        }
        if values.len() > source_rank {
            return Err(MetricsError::InvalidSpectrum(format!(
                "{} values exceed source rank {source_rank}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(MetricsError::InvalidSpectrum(format!(
                "value {} at index {} is negative or non-finite",
                values[i],
                i + 1
            )));
        }
        if let Some(i) = values.windows(2).position(|w| w[0] < w[1]) {
            return Err(MetricsError::InvalidSpectrum(format!(
                "values not non-increasing at index {}",
                i + 2
            )));
        }
        Ok(Self { values, source_rank })
    }

    /// Sorts `values` non-increasing before validating. Tiny negative values
    /// produced by rounding in a decomposition are clamped to zero.
    pub fn from_unsorted(mut values: Vec<f64>, source_rank: usize) -> Result<Self, MetricsError> {
        for v in &mut values {
            if *v < 0.0 && *v > -f64::EPSILON {
                *v = 0.0;
            }
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Self::new(values, source_rank)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source_rank(&self) -> usize {
        self.source_rank
    }

    /// Keeps the leading `min(k, len)` values.
    pub fn truncate_top_k(&self, k: usize) -> Spectrum {
        let keep = k.min(self.values.len());
        Spectrum {
            values: self.values[..keep].to_vec(),
            source_rank: self.source_rank,
        }
    }

    /// Squared singular values, i.e. Gram-matrix eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.values.iter().map(|s| s * s).collect()
    }
}

/// Exponential of the Shannon entropy (natural log) of the normalised
/// spectrum. Zero values contribute nothing.
pub fn effective_rank(s: &Spectrum) -> Result<f64, MetricsError> {
    let total: f64 = s.values.iter().sum();
    if s.is_empty() || total <= 0.0 {
        return Err(MetricsError::DegenerateSpectrum);
    }
    let entropy: f64 = s
        .values
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp().clamp(1.0, s.len() as f64))
}

/// 1-based inclusive index range used for the tail fit. An open end means
/// "through the last retained value".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailRange {
    pub start: usize,
    pub end: Option<usize>,
}

impl Default for TailRange {
    /// `2..`: skip the dominant mode and fit the rest.
    fn default() -> Self {
        Self { start: 2, end: None }
    }
}

impl TailRange {
    pub fn new(start: usize, end: Option<usize>) -> Result<Self, MetricsError> {
        let range = Self { start, end };
        range.validate().map(|_| range)
    }

    fn validate(&self) -> Result<(), MetricsError> {
        let bad = |reason: &str| MetricsError::Parse {
            what: "tail range",
            input: self.to_string(),
            reason: reason.to_string(),
        };
        if self.start == 0 {
            return Err(bad("indices are 1-based"));
        }
        if let Some(end) = self.end {
            if end < self.start {
                return Err(bad("end precedes start"));
            }
        }
        Ok(())
    }

    /// Resolves the range against a spectrum of length `len`, clipping an
    /// explicit end that runs past it.
    pub fn clip(&self, len: usize) -> (usize, usize) {
        let end = self.end.map_or(len, |e| e.min(len));
        (self.start, end)
    }
}

impl fmt::Display for TailRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            Some(end) => write!(f, "{}..{}", self.start, end),
            None => write!(f, "{}..", self.start),
        }
    }
}

impl FromStr for TailRange {
    type Err = MetricsError;

    /// Accepts `START..END`, `START..=END` (same meaning) and `START..`.
    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| MetricsError::Parse {
            what: "tail range",
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let (start, end) = input
            .trim()
            .split_once("..")
            .ok_or_else(|| err("expected START..END"))?;
        let end = end.strip_prefix('=').unwrap_or(end);
        let start: usize = start.trim().parse().map_err(|_| err("bad start index"))?;
        let end = match end.trim() {
            "" => None,
            e => Some(e.parse::<usize>().map_err(|_| err("bad end index"))?),
        };
        TailRange::new(start, end)
    }
}

/// Power-law exponent of the spectrum over `tail`: `α = −slope` of the
/// unweighted least-squares line through `(ln i, ln σ_i)`. Zero values
/// inside the tail are skipped.
pub fn spectral_alpha(s: &Spectrum, tail: TailRange) -> Result<f64, MetricsError> {
    let end = tail.end.unwrap_or(s.len());
    if tail.start == 0 || end > s.len() || end < tail.start {
        return Err(MetricsError::TailOutOfRange {
            start: tail.start,
            end,
            len: s.len(),
        });
    }
    let points: Vec<(f64, f64)> = (tail.start..=end)
        .filter_map(|i| {
            let v = s.values[i - 1];
            (v > 0.0).then(|| ((i as f64).ln(), v.ln()))
        })
        .collect();
    if points.len() < MIN_TAIL_POINTS {
        return Err(MetricsError::InsufficientTail {
            usable: points.len(),
            start: tail.start,
            end,
        });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
        let dx = x - mean_x;
        (sxy + dx * (y - mean_y), sxx + dx * dx)
    });
    Ok(-sxy / sxx)
}

/// How the Kirchhoff floor on `λ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum KfFloor {
    /// A fixed lower bound on `λ_i`.
    Absolute(f64),
    /// A multiple of the leading eigenvalue `λ₁`.
    Relative(f64),
}

impl Default for KfFloor {
    fn default() -> Self {
        KfFloor::Relative(DEFAULT_RELATIVE_KF_FLOOR)
    }
}

impl KfFloor {
    pub fn resolve(&self, lambda1: f64) -> f64 {
        match *self {
            KfFloor::Absolute(f) => f,
            KfFloor::Relative(f) => f * lambda1,
        }
    }
}

impl fmt::Display for KfFloor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KfFloor::Absolute(v) => write!(f, "abs:{v:e}"),
            KfFloor::Relative(v) => write!(f, "{v:e}"),
        }
    }
}

impl FromStr for KfFloor {
    type Err = MetricsError;

    /// A bare number is a relative floor; `abs:VALUE` is absolute.
    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| MetricsError::Parse {
            what: "Kirchhoff floor",
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = input.trim();
        let (absolute, number) = match trimmed.strip_prefix("abs:") {
            Some(rest) => (true, rest),
            None => (false, trimmed.strip_prefix("rel:").unwrap_or(trimmed)),
        };
        let value: f64 = number.trim().parse().map_err(|_| err("not a number"))?;
        if !value.is_finite() || value < 0.0 {
            return Err(err("floor must be finite and non-negative"));
        }
        Ok(if absolute {
            KfFloor::Absolute(value)
        } else {
            KfFloor::Relative(value)
        })
    }
}

/// Sum of inverse eigenvalues `1/σ_i²` over the first `k` values, with each
/// `λ_i` raised to at least `floor`.
pub fn kirchhoff_index(s: &Spectrum, k: usize, floor: f64) -> Result<f64, MetricsError> {
    if k == 0 || k > s.len() {
        return Err(MetricsError::KOutOfRange { k, len: s.len() });
    }
    let mut total = 0.0;
    for (i, sigma) in s.values[..k].iter().enumerate() {
        let lambda = (sigma * sigma).max(floor);
        if lambda <= 0.0 {
            return Err(MetricsError::DivisionDegenerate { index: i + 1 });
        }
        total += 1.0 / lambda;
    }
    Ok(total)
}

/// Parses a comma-separated list of truncation levels such as `10,50`.
pub fn parse_topk_list(input: &str) -> Result<Vec<usize>, MetricsError> {
    let err = |reason: String| MetricsError::Parse {
        what: "top-k list",
        input: input.to_string(),
        reason,
    };
    let mut out = Vec::new();
    for part in input.split(',') {
        let k: usize = part
            .trim()
            .parse()
            .map_err(|_| err(format!("{:?} is not a positive integer", part.trim())))?;
        if k == 0 {
            return Err(err("truncation levels must be at least 1".into()));
        }
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Ok(out)
}

/// Knobs shared by every metric evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricConfig {
    pub tail: TailRange,
    pub kf_floor: KfFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMetrics {
    pub n_eff: f64,
    pub alpha: f64,
    pub kf: f64,
    pub k_used: usize,
}

impl SpectralMetrics {
    /// Truncates to the top `k` values and evaluates all three observables
    /// on the truncated spectrum. The tail end is clipped to the retained
    /// length.
    pub fn compute(s: &Spectrum, k: usize, cfg: &MetricConfig) -> Result<Self, MetricsError> {
        let top = s.truncate_top_k(k);
        let n_eff = effective_rank(&top)?;
        let (start, end) = cfg.tail.clip(top.len());
        if end < start {
            return Err(MetricsError::InsufficientTail { usable: 0, start, end });
        }
        let alpha = spectral_alpha(&top, TailRange { start, end: Some(end) })?;
        let floor = cfg.kf_floor.resolve(top.values[0] * top.values[0]);
        let kf = kirchhoff_index(&top, top.len(), floor)?;
        Ok(Self {
            n_eff,
            alpha,
            kf,
            k_used: top.len(),
        })
    }
}

/// Clean-to-perturbed shift of the three observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub d_n_eff_pct: f64,
    pub d_log10_kf: f64,
    pub d_alpha: f64,
}

impl MetricDelta {
    pub const ZERO: MetricDelta = MetricDelta {
        d_n_eff_pct: 0.0,
        d_log10_kf: 0.0,
        d_alpha: 0.0,
    };
}

/// Signed shift with `clean` as baseline; negative `d_n_eff_pct` is a
/// collapse.
pub fn metric_delta(clean: &SpectralMetrics, adv: &SpectralMetrics) -> Result<MetricDelta, MetricsError> {
    if clean.k_used != adv.k_used {
        return Err(MetricsError::IncompatibleMetrics(format!(
            "k_used differs ({} vs {})",
            clean.k_used, adv.k_used
        )));
    }
    if clean.n_eff <= 0.0 || clean.kf <= 0.0 || adv.kf <= 0.0 {
        return Err(MetricsError::IncompatibleMetrics(
            "n_eff and kf must be positive".into(),
        ));
    }
    Ok(MetricDelta {
        d_n_eff_pct: 100.0 * (adv.n_eff - clean.n_eff) / clean.n_eff,
        d_log10_kf: adv.kf.log10() - clean.kf.log10(),
        d_alpha: adv.alpha - clean.alpha,
    })
}
