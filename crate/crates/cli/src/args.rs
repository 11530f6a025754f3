use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spi_core::lab::ChainLayout;
use spi_core::metrics::parse_topk_list;
use spi_core::pipeline::DEFAULT_ALPHA_THRESHOLD;
use spi_core::store::Component;
use spi_core::{KfFloor, MetricConfig, MetricsError, TailRange};

#[derive(Debug, Parser)]
#[command(name = "spi", version, about = "Spectral propagation diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify product and regime bounds on synthetic propagator chains.
    Simulate(SimulateArgs),
    /// Per-record spectral metrics at each truncation level.
    Metrics(AnalyzeArgs),
    /// Clean-vs-adversarial delta tables and per-layer curves.
    Compare(AnalyzeArgs),
    /// Final-layer phase diagram.
    Phase(PhaseArgs),
}

/// Comma-separated list of truncation levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK(pub Vec<usize>);

impl FromStr for TopK {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_topk_list(s).map(TopK)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = "spi_out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Singular-value truncation levels, e.g. `10,50,100`.
    #[arg(long)]
    pub topk: Option<TopK>,
    /// 1-based inclusive rank range of the power-law fit, e.g. `2..50`.
    #[arg(long, default_value_t = TailRange::default())]
    pub tail: TailRange,
    /// Kirchhoff eigenvalue floor: a bare number is relative to λ₁; `abs:X` is absolute.
    #[arg(long, default_value_t = KfFloor::default())]
    pub kf_floor: KfFloor,
    #[arg(long, default_value_t = DEFAULT_ALPHA_THRESHOLD)]
    pub alpha_threshold: f64,
    /// Omit the wall-clock timestamp so reruns are byte-identical.
    #[arg(long)]
    pub no_timestamp: bool,
}

impl CommonArgs {
    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            tail: self.tail,
            kf_floor: self.kf_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeTarget {
    Attractor,
    Disintegration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Independent,
    Stationary,
}

impl From<LayoutArg> for ChainLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Independent => ChainLayout::Independent,
            LayoutArg::Stationary => ChainLayout::Stationary,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Check the dominant-path product bound for every prefix length.
    #[arg(long)]
    pub lemma: bool,
    /// Build chains from a regime preset and check their classification.
    #[arg(long, value_enum)]
    pub regime: Option<RegimeTarget>,
    /// Monte Carlo mean |u·v| of independent random unit vectors.
    #[arg(long)]
    pub alignment: bool,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Residual level σ₂/σ₁ of each layer.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Alignment between consecutive dominant directions.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    /// Share of each injection along the next input direction.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Dominant singular value of every layer.
    #[arg(long)]
    pub gain: Option<f64>,
    /// Frobenius norm of every injection.
    #[arg(long)]
    pub injection_norm: Option<f64>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    /// Number of seeds (chains or vector pairs).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Multiplier on the leading-order bounds.
    #[arg(long)]
    pub slack: Option<f64>,
    /// Upper limit on ε_κ·L for the alignment condition.
    #[arg(long)]
    pub alignment_depth_threshold: Option<f64>,
    /// Upper limit on ξL/γ for the spectral purity condition.
    #[arg(long)]
    pub spectral_purity_threshold: Option<f64>,
    /// Lower limit on the injection directionality.
    #[arg(long)]
    pub directionality_threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory searched recursively for `.spac` files.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub analyze: AnalyzeArgs,
    /// Effective-rank threshold; defaults to the midpoint of the two α groups.
    #[arg(long)]
    pub n_eff_threshold: Option<f64>,
    /// Restrict to one component.
    #[arg(long)]
    pub component: Option<Component>,
}
