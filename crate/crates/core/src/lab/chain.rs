use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabError;
use crate::linalg::{complement_basis, random_orthogonal, random_unit_orthogonal, random_unit_vector, spectral_norm};

/// Whether every layer draws fresh directions, or one layer (and one
/// injection) is repeated through the whole depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainLayout {
    #[default]
    Independent,
    Stationary,
}

/// Generator parameters for a synthetic propagator chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub depth: usize,
    pub dim: usize,
    pub context_dim: usize,
    /// Relative residual level `σ₂/σ₁` of every layer.
    pub xi: f64,
    /// Alignment `v_{j+1}·u_j` between consecutive dominant directions.
    pub kappa_target: f64,
    /// Dominant singular value per layer; a single entry is broadcast.
    pub gain_schedule: Vec<f64>,
    /// Fraction of each injection's Frobenius norm carried along `v_{k+1}`.
    pub gamma: f64,
    /// Coherence direction in context space; drawn from the seed when absent.
    pub psi0: Option<Vec<f64>>,
    /// Frobenius norm of every injection.
    pub injection_norm: f64,
    pub layout: ChainLayout,
    pub seed: u64,
}

impl ChainConfig {
    /// Unperturbed, perfectly aligned, unit-gain chain.
    pub fn new(depth: usize, dim: usize) -> Self {
        Self {
            depth,
            dim,
            context_dim: dim,
            xi: 0.0,
            kappa_target: 1.0,
            gain_schedule: vec![1.0],
            gamma: 1.0,
            psi0: None,
            injection_norm: 1.0,
            layout: ChainLayout::Independent,
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// `ε_κ = 1 − |κ|`.
    pub fn eps_kappa(&self) -> f64 {
        1.0 - self.kappa_target.abs()
    }

    /// Dominant singular value of layer `j` (1-based).
    pub fn gain(&self, j: usize) -> f64 {
        if self.gain_schedule.len() == 1 {
            self.gain_schedule[0]
        } else {
            self.gain_schedule[j - 1]
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let infeasible = |condition: String| Err(LabError::Infeasible { condition });
        if self.depth == 0 {
            return infeasible("depth must be at least 1".into());
        }
        if self.dim < 3 {
            return infeasible(format!("dim = {} cannot host the residual (need dim ≥ 3)", self.dim));
        }
        if self.context_dim == 0 {
            return infeasible("context_dim must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.xi) {
            return infeasible(format!("xi = {} must lie in [0, 1)", self.xi));
        }
        if !self.kappa_target.is_finite() || self.kappa_target.abs() > 1.0 {
            return infeasible(format!("|kappa_target| = {} exceeds 1", self.kappa_target.abs()));
        }
        if self.gain_schedule.len() != 1 && self.gain_schedule.len() != self.depth {
            return infeasible(format!(
                "gain schedule has {} entries, expected 1 or depth = {}",
                self.gain_schedule.len(),
                self.depth
            ));
        }
        if let Some(g) = self.gain_schedule.iter().find(|g| !g.is_finite() || **g <= 0.0) {
            return infeasible(format!("gain {g} must be positive and finite"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return infeasible(format!("gamma = {} must lie in (0, 1]", self.gamma));
        }
        if self.gamma < 1.0 && self.dim < 2 {
            return infeasible("gamma < 1 needs a direction orthogonal to v".into());
        }
        if !(self.injection_norm.is_finite() && self.injection_norm > 0.0) {
            return infeasible(format!("injection_norm = {} must be positive", self.injection_norm));
        }
        if let Some(psi) = &self.psi0 {
            if psi.len() != self.context_dim {
                return infeasible(format!(
                    "psi0 has length {}, context_dim is {}",
                    psi.len(),
                    self.context_dim
                ));
            }
            let norm = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return infeasible(format!("psi0 has norm {norm}, expected 1"));
            }
        }
        if self.layout == ChainLayout::Stationary && self.kappa_target < 0.0 && self.depth > 2 {
            return infeasible(
                "sign consistency needs alternating injections; a stationary chain with negative kappa cannot provide them"
                    .into(),
            );
        }
        Ok(())
    }
}

/// One layer `W = σ₁ u vᵀ + E`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorLayer {
    pub sigma1: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub e: DMatrix<f64>,
}

impl PropagatorLayer {
    pub fn dominant(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose() * self.sigma1
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.dominant() + &self.e
    }
}

/// A concrete chain: layers `W_1..W_L` and injections `G_1..G_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRealization {
    pub layers: Vec<PropagatorLayer>,
    pub injections: Vec<DMatrix<f64>>,
    pub psi0: DVector<f64>,
    /// Nominal generator values, kept for bound evaluation.
    pub xi: f64,
    pub gamma: f64,
    propagators: Vec<DMatrix<f64>>,
}

impl ChainRealization {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].u.len()
    }

    /// `W_j`, 1-based.
    pub fn propagator(&self, j: usize) -> &DMatrix<f64> {
        &self.propagators[j - 1]
    }

    /// `κ_j = v_{j+1}·u_j` for `j = 1..L−1`.
    pub fn alignments(&self) -> Vec<f64> {
        self.layers.windows(2).map(|w| w[1].v.dot(&w[0].u)).collect()
    }

    /// Measured `σ₂/σ₁` of every `W_j`, from the residual's spectral norm.
    pub fn spectral_gaps(&self) -> Vec<f64> {
        self.layers.iter().map(|l| spectral_norm(&l.e) / l.sigma1).collect()
    }

    /// `1 − min_j |κ_j|` over the realized chain (0 for a single layer).
    pub fn eps_kappa(&self) -> f64 {
        self.alignments().iter().map(|k| 1.0 - k.abs()).fold(0.0, f64::max)
    }

    /// Effective gains: `σ₁,ⱼ|κ_j|` for `j < L`, and `σ₁,L` for the last
    /// layer, which has no successor.
    pub fn effective_gains(&self) -> Vec<f64> {
        let kappas = self.alignments();
        self.layers
            .iter()
            .enumerate()
            .map(|(j, l)| l.sigma1 * kappas.get(j).map_or(1.0, |k| k.abs()))
            .collect()
    }

    /// Amplitude of the dominant path from layer `k+1` to the top:
    /// `A_{L,k} = σ₁,L ∏_{j=k+1}^{L−1} σ₁,ⱼ κ_j` (1-based `k`, `k < L`).
    pub fn path_amplitude(&self, k: usize) -> f64 {
        let depth = self.depth();
        let kappas = self.alignments();
        let inner: f64 = (k + 1..depth)
            .map(|j| self.layers[j - 1].sigma1 * kappas[j - 1])
            .product();
        self.layers[depth - 1].sigma1 * inner
    }
}

/// Realizes a chain with the requested geometry.
///
/// For every layer, `E_j = ξσ₁ C diag(d) (C R)ᵀ` where `C` spans the
/// complement of `span(u_j, v_j)`, `R` is a random rotation and `d₁ = 1 ≥ d_i`,
/// so `‖E_j‖₂ = ξσ₁` exactly and `E_j` never touches the dominant pair.
/// Consecutive layers are linked by `v_{j+1} = κu_j + √(1−κ²)w_j` with
/// `w_j ⟂ u_j`. Injections are
/// `G_k = Ḡ(s_k γ v_{k+1} ψ₀ᵀ + √(1−γ²) q_k r_kᵀ)` with `q_k ⟂ v_{k+1}`,
/// which makes `‖v_{k+1}ᵀG_k‖₂ = γ‖G_k‖_F` and points `v_{k+1}ᵀG_k` along
/// `ψ₀`; `s_k = sign(A_{L,k})` keeps every path contribution the same sign.
pub fn build_chain(cfg: &ChainConfig) -> Result<ChainRealization, LabError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let psi0 = match &cfg.psi0 {
        Some(p) => DVector::from_column_slice(p),
        None => random_unit_vector(&mut rng, cfg.context_dim),
    };
    let kappa = cfg.kappa_target;
    let perp = (1.0 - kappa * kappa).max(0.0).sqrt();
    let depth = cfg.depth;

    let next_input = |rng: &mut ChaCha8Rng, u: &DVector<f64>| -> DVector<f64> {
        let w = random_unit_orthogonal(rng, u);
        if perp == 0.0 {
            return u * kappa;
        }
        let v = u * kappa + w * perp;
        let n = v.norm();
        v / n
    };

    let mut layers = Vec::with_capacity(depth);
    // v_{L+1} is virtual: it only shapes G_L, which no condition inspects.
    let mut inputs = Vec::with_capacity(depth + 1);
    match cfg.layout {
        ChainLayout::Independent => {
            inputs.push(random_unit_vector(&mut rng, cfg.dim));
            for j in 1..=depth {
                let u = random_unit_vector(&mut rng, cfg.dim);
                let v = inputs[j - 1].clone();
                let sigma1 = cfg.gain(j);
                let e = residual(&mut rng, &u, &v, cfg.xi * sigma1);
                inputs.push(next_input(&mut rng, &u));
                layers.push(PropagatorLayer { sigma1, u, v, e });
            }
        }
        ChainLayout::Stationary => {
            let u = random_unit_vector(&mut rng, cfg.dim);
            let v = next_input(&mut rng, &u);
            let e = residual(&mut rng, &u, &v, cfg.xi * cfg.gain(1));
            for j in 1..=depth {
                let sigma1 = cfg.gain(j);
                let scale = sigma1 / cfg.gain(1);
                layers.push(PropagatorLayer {
                    sigma1,
                    u: u.clone(),
                    v: v.clone(),
                    e: &e * scale,
                });
                inputs.push(v.clone());
            }
            inputs.push(v.clone());
        }
    }

    let gamma = cfg.gamma;
    let remainder = (1.0 - gamma * gamma).max(0.0).sqrt();
    let mut injections = Vec::with_capacity(depth);
    let mut tied: Option<DMatrix<f64>> = None;
    for (k, input) in inputs.iter().enumerate().take(depth + 1).skip(1) {
        if let (ChainLayout::Stationary, Some(g)) = (cfg.layout, &tied) {
            injections.push(g.clone());
            continue;
        }
        // sign(A_{L,k}) = sign(κ)^{L−1−k}
        let sign = if kappa < 0.0 && (depth.saturating_sub(1 + k)) % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        let g = injection(&mut rng, input, &psi0, sign * gamma, remainder, cfg.injection_norm);
        if cfg.layout == ChainLayout::Stationary {
            tied = Some(g.clone());
        }
        injections.push(g);
    }

    let propagators = layers.iter().map(PropagatorLayer::matrix).collect();
    Ok(ChainRealization {
        layers,
        injections,
        psi0,
        xi: cfg.xi,
        gamma,
        propagators,
    })
}

fn residual<R: Rng>(rng: &mut R, u: &DVector<f64>, v: &DVector<f64>, norm: f64) -> DMatrix<f64> {
    let dim = u.len();
    if norm == 0.0 {
        return DMatrix::zeros(dim, dim);
    }
    let basis = complement_basis(rng, u, v);
    let r = basis.ncols();
    let rotated = &basis * random_orthogonal(rng, r);
    let mut weights = DVector::from_fn(r, |_, _| rng.random::<f64>());
    weights[0] = 1.0;
    let scaled = DMatrix::from_fn(dim, r, |i, c| basis[(i, c)] * weights[c] * norm);
    scaled * rotated.transpose()
}

fn injection<R: Rng>(
    rng: &mut R,
    v_next: &DVector<f64>,
    psi0: &DVector<f64>,
    along: f64,
    remainder: f64,
    norm: f64,
) -> DMatrix<f64> {
    let mut g = v_next * psi0.transpose() * along;
    if remainder > 0.0 {
        let q = random_unit_orthogonal(rng, v_next);
        let r = random_unit_vector(rng, psi0.len());
        g += q * r.transpose() * remainder;
    }
    g * norm
}

/// `Φ^(m) = W_m ⋯ W_1`: later layers multiply on the left.
pub fn chain_product(chain: &ChainRealization, m: usize) -> Result<DMatrix<f64>, LabError> {
    if m == 0 || m > chain.depth() {
        return Err(LabError::OutOfRange {
            what: "product length",
            value: m,
            max: chain.depth(),
        });
    }
    let mut phi = chain.propagator(1).clone();
    for j in 2..=m {
        phi = chain.propagator(j) * phi;
    }
    Ok(phi)
}

/// Scalar factor `c` of the dominant path `Φ_dom^(m) = c · u_m v_1ᵀ`, so
/// `‖Φ_dom^(m)‖₂ = |c|`.
pub fn dominant_path_scale(chain: &ChainRealization, m: usize) -> f64 {
    let kappas = chain.alignments();
    let gains: f64 = chain.layers[..m].iter().map(|l| l.sigma1).product();
    let links: f64 = kappas[..m - 1].iter().product();
    gains * links
}

pub fn dominant_product(chain: &ChainRealization, m: usize) -> DMatrix<f64> {
    let c = dominant_path_scale(chain, m);
    &chain.layers[m - 1].u * chain.layers[0].v.transpose() * c
}
