//! Test-only oracles and fixture generation, independent of nalgebra's SVD.

#![allow(dead_code, clippy::needless_range_loop)]

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spi_core::store::{encode_record, ActivationRecord, Component, Condition};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-32 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// `AᵀA` of a row-major `rows × cols` matrix, accumulated pairwise.
pub fn gram(rows: usize, cols: usize, data: &[f64]) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; cols]; cols];
    for i in 0..cols {
        for j in i..cols {
            let terms: Vec<f64> = (0..rows).map(|r| data[r * cols + i] * data[r * cols + j]).collect();
            let s = pairwise_sum(&terms);
            g[i][j] = s;
            g[j][i] = s;
        }
    }
    g
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Singular values via the Gram route: `σ_i = sqrt(max(λ_i, 0))`.
pub fn gram_singular_values(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    jacobi_eigenvalues(gram(rows, cols, data))
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// Slope of the ordinary least-squares line through `(x, y)`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `exp(−Σ p ln p)` with `p_i = σ_i / Σσ`, written out longhand.
pub fn entropy_rank(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    let h: f64 = values
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

pub fn power_law(n: usize, alpha: f64) -> Vec<f64> {
    (1..=n).map(|i| (i as f64).powf(-alpha)).collect()
}

pub fn gaussian_data(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `rows × cols` matrix with orthonormal columns from a seeded QR.
fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Row-major `U diag(σ) Vᵀ` with random orthonormal `U`, `V`.
pub fn rotated_matrix(rng: &mut ChaCha8Rng, rows: usize, sigma: &[f64]) -> Vec<f32> {
    let n = sigma.len();
    let u = random_orthonormal(rng, rows, n);
    let v = random_orthonormal(rng, n, n);
    let m = u * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sigma)) * v.transpose();
    (0..rows)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)] as f32)
        .collect()
}

/// Row-major `rows × σ.len()` matrix with `σ` on the diagonal.
pub fn diagonal_matrix(rows: usize, sigma: &[f64]) -> Vec<f32> {
    let n = sigma.len();
    let mut data = vec![0.0f32; rows * n];
    for (i, s) in sigma.iter().enumerate() {
        data[i * n + i] = *s as f32;
    }
    data
}

/// Designated group of the engineered fixture set.
pub const HEADLINE_MODEL: &str = "small";
pub const HEADLINE_COMPONENT: Component = Component::CrossAttention;
pub const HEADLINE_K: usize = 50;
pub const HEADLINE_PCT: f64 = -13.40;
/// Per-layer targets whose mean is `HEADLINE_PCT`.
pub const HEADLINE_LAYER_PCT: [f64; 4] = [-10.0, -12.0, -14.8, -16.8];

const FIXTURE_ROWS: usize = 72;
const FIXTURE_COLS: usize = 56;

/// Clean tail exponent of the pair fixtures.
const CLEAN_SLOPE: f64 = 0.5;

/// `σ_i · i^{−β}` with `β` chosen so that the top-`k` effective rank drops
/// by `pct` percent relative to `clean`. `clean` must be `i^{−CLEAN_SLOPE}`
/// for raises: past `β = −CLEAN_SLOPE` the spectrum flattens and the rank
/// stops being monotone in `β`.
pub fn damped_for_delta(clean: &[f64], k: usize, pct: f64) -> Vec<f64> {
    let target = entropy_rank(&clean[..k]) * (1.0 + pct / 100.0);
    let damp = |beta: f64| -> Vec<f64> {
        clean
            .iter()
            .enumerate()
            .map(|(i, s)| s * ((i + 1) as f64).powf(-beta))
            .collect()
    };
    let (mut lo, mut hi) = if pct <= 0.0 { (0.0, 8.0) } else { (-CLEAN_SLOPE, 0.0) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let n = entropy_rank(&damp(mid)[..k]);
        // effective rank falls as β grows
        if n > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    damp(0.5 * (lo + hi))
}

struct Spec {
    model: &'static str,
    component: Component,
    layers: Vec<f64>,
    samples: &'static [&'static str],
}

/// Every fixture file as `(relative path, bytes)`, in a fixed order.
pub fn fixture_files() -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f1c7);
    let clean = power_law(FIXTURE_COLS, CLEAN_SLOPE);

    let groups = [
        Spec {
            model: HEADLINE_MODEL,
            component: HEADLINE_COMPONENT,
            layers: HEADLINE_LAYER_PCT.to_vec(),
            samples: &["1089-0001@wer=0.72", "1089-0002@wer=0.61"],
        },
        Spec {
            model: "small",
            component: Component::SelfAttention,
            layers: vec![-1.0, -1.5, -2.0, -2.5],
            samples: &["1089-0001@wer=0.72", "1089-0002@wer=0.61"],
        },
        Spec {
            model: "tiny",
            component: Component::Ffn,
            layers: vec![3.0, 1.0],
            samples: &["2277-0001@wer=0.93"],
        },
    ];
    for g in &groups {
        for (layer, pct) in g.layers.iter().enumerate() {
            let adv = damped_for_delta(&clean, HEADLINE_K, *pct);
            for sample in g.samples {
                for (condition, sigma) in [(Condition::Clean, &clean), (Condition::Adversarial, &adv)] {
                    let data = rotated_matrix(&mut rng, FIXTURE_ROWS, sigma);
                    let r = ActivationRecord::new(
                        g.model,
                        g.component,
                        layer,
                        *sample,
                        condition,
                        FIXTURE_ROWS,
                        FIXTURE_COLS,
                        data,
                    )
                    .unwrap();
                    out.push((Path::new("pairs").join(r.file_name()), encode_record(&r).unwrap()));
                }
            }
        }
    }

    // Two clusters straddling α = 9, diagonal so the steep tail survives f32.
    let phase = [
        ("large", Component::SelfAttention, [(1.2, 1.4), (9.4, 9.6)]),
        ("tiny", Component::SelfAttention, [(0.5, 0.6), (0.7, 0.8)]),
    ];
    for (model, component, per_layer) in phase {
        for (layer, (a_clean, a_adv)) in per_layer.into_iter().enumerate() {
            for (condition, a) in [(Condition::Clean, a_clean), (Condition::Adversarial, a_adv)] {
                let sigma = power_law(FIXTURE_COLS, a);
                let r = ActivationRecord::new(
                    model,
                    component,
                    layer,
                    "phase-0001",
                    condition,
                    FIXTURE_ROWS,
                    FIXTURE_COLS,
                    diagonal_matrix(FIXTURE_ROWS, &sigma),
                )
                .unwrap();
                out.push((Path::new("phase").join(r.file_name()), encode_record(&r).unwrap()));
            }
        }
    }
    out
}

pub fn fixture_root() -> PathBuf {
    // resolves from either crate, so the CLI tests can share these files
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}
