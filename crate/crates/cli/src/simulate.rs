use rayon::prelude::*;
use serde::Serialize;
use spi_core::lab::{
    asymptotic_alignment, build_chain, classify_regime, lemma_sweep, random_alignment_baseline, AlignmentEstimate,
    ChainConfig, ChainLayout, LabError, LemmaSweep, Regime, RegimeReport, RegimeThresholds, DEFAULT_LEMMA_SLACK,
};

use crate::args::{RegimeTarget, SimulateArgs};
use crate::manifest::{ensure_dir, write_json, RunManifest};
use crate::{CliError, Outcome};

/// Minimum `|cos|` between the collapsed Jacobian and `u_L` for an attractor run to pass.
pub const ATTRACTOR_ALIGNMENT_MIN: f64 = 0.99;
/// Largest `|z|` against the exact mean for an alignment run to pass.
pub const ALIGNMENT_Z_MAX: f64 = 3.0;

#[derive(Serialize)]
struct SeedRange {
    first: u64,
    count: usize,
}

#[derive(Serialize)]
struct LemmaSection {
    config: ChainConfig,
    slack: f64,
    seeds: SeedRange,
    passed: bool,
    sweep: LemmaSweep,
}

#[derive(Serialize)]
struct RegimeTrial {
    seed: u64,
    regime: Regime,
    rank1_dominance: Option<f64>,
    attractor_alignment: Option<f64>,
    final_norm: f64,
    disintegration_bound: Option<f64>,
    passed: bool,
}

#[derive(Serialize)]
struct RegimeSection {
    target: Regime,
    config: ChainConfig,
    slack: f64,
    thresholds: RegimeThresholds,
    seeds: SeedRange,
    passed: bool,
    failing_seeds: Vec<u64>,
    trials: Vec<RegimeTrial>,
    /// Full report of the first seed, including the norm curve.
    first: RegimeReport,
}

#[derive(Serialize)]
struct AlignmentSection {
    estimate: AlignmentEstimate,
    z_score: f64,
    relative_error_vs_asymptotic: f64,
    passed: bool,
}

#[derive(Serialize)]
struct SimulateReport {
    manifest: RunManifest,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemma: Option<LemmaSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime: Option<RegimeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alignment: Option<AlignmentSection>,
}

struct Preset {
    depth: usize,
    dim: usize,
    xi: f64,
    kappa: f64,
    gain: f64,
    gamma: f64,
    layout: ChainLayout,
}

const LEMMA_PRESET: Preset = Preset {
    depth: 24,
    dim: 64,
    xi: 1e-3,
    kappa: 0.9999,
    gain: 1.0,
    gamma: 1.0,
    layout: ChainLayout::Independent,
};

const ATTRACTOR_PRESET: Preset = Preset {
    depth: 32,
    dim: 64,
    xi: 1e-4,
    kappa: 0.9999,
    gain: 1.01,
    gamma: 0.8,
    layout: ChainLayout::Independent,
};

const DISINTEGRATION_PRESET: Preset = Preset {
    depth: 100,
    dim: 16,
    xi: 1e-3,
    kappa: 1.0,
    gain: 0.5,
    gamma: 1.0,
    layout: ChainLayout::Stationary,
};

fn chain_config(a: &SimulateArgs, p: &Preset) -> Result<ChainConfig, CliError> {
    let dim = a.dim.unwrap_or(p.dim);
    let cfg = ChainConfig {
        xi: a.xi.unwrap_or(p.xi),
        kappa_target: a.kappa.unwrap_or(p.kappa),
        gain_schedule: vec![a.gain.unwrap_or(p.gain)],
        gamma: a.gamma.unwrap_or(p.gamma),
        injection_norm: a.injection_norm.unwrap_or(1.0),
        layout: a.layout.map(Into::into).unwrap_or(p.layout),
        seed: a.common.seed,
        ..ChainConfig::new(a.depth.unwrap_or(p.depth), dim)
    };
    cfg.validate().map_err(lab_error)?;
    Ok(cfg)
}

fn lab_error(e: LabError) -> CliError {
    match e {
        LabError::Infeasible { .. } | LabError::OutOfRange { .. } => CliError::Usage(e.to_string()),
        LabError::DominantPathDegenerate { .. } => CliError::Domain(e.to_string()),
    }
}

fn seeds(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first.wrapping_add(i)).collect()
}

fn run_lemma(a: &SimulateArgs, slack: f64) -> Result<LemmaSection, CliError> {
    let config = chain_config(a, &LEMMA_PRESET)?;
    let count = a.trials.unwrap_or(100);
    if count == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let sweep = lemma_sweep(&config, &seeds(a.common.seed, count), config.depth, slack).map_err(lab_error)?;
    for f in sweep.failures.iter().take(20) {
        eprintln!(
            "lemma violated: seed {} M={} ratio {:.3e} > bound {:.3e}",
            f.seed, f.verdict.m, f.verdict.measured_ratio, f.verdict.bound
        );
    }
    Ok(LemmaSection {
        passed: sweep.all_satisfied(),
        config,
        slack,
        seeds: SeedRange {
            first: a.common.seed,
            count,
        },
        sweep,
    })
}

fn run_regime(
    a: &SimulateArgs,
    target: RegimeTarget,
    slack: f64,
    thresholds: RegimeThresholds,
) -> Result<RegimeSection, CliError> {
    let (preset, want) = match target {
        RegimeTarget::Attractor => (&ATTRACTOR_PRESET, Regime::Attractor),
        RegimeTarget::Disintegration => (&DISINTEGRATION_PRESET, Regime::Disintegration),
    };
    let config = chain_config(a, preset)?;
    let count = a.trials.unwrap_or(1);
    if count == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let seed_list = seeds(a.common.seed, count);
    let reports: Vec<RegimeReport> = seed_list
        .par_iter()
        .map(|&s| build_chain(&config.with_seed(s)).map(|c| classify_regime(&c, &thresholds)))
        .collect::<Result<_, _>>()
        .map_err(lab_error)?;

    let trials: Vec<RegimeTrial> = seed_list
        .iter()
        .zip(&reports)
        .map(|(&seed, r)| {
            let final_norm = r.jacobian_norm_curve.last().map_or(0.0, |p| p.1);
            let passed = r.regime == want
                && match want {
                    Regime::Attractor => {
                        r.rank1_dominance.is_some_and(|d| d <= slack * r.predicted_noise_bound)
                            && r.attractor_alignment.is_some_and(|c| c >= ATTRACTOR_ALIGNMENT_MIN)
                    }
                    _ => r
                        .disintegration_bound
                        .is_some_and(|b| r.jacobian_norm_curve.iter().all(|p| p.1 <= b * (1.0 + 1e-12))),
                };
            RegimeTrial {
                seed,
                regime: r.regime,
                rank1_dominance: r.rank1_dominance,
                attractor_alignment: r.attractor_alignment,
                final_norm,
                disintegration_bound: r.disintegration_bound,
                passed,
            }
        })
        .collect();
    let failing_seeds: Vec<u64> = trials.iter().filter(|t| !t.passed).map(|t| t.seed).collect();
    for t in trials.iter().filter(|t| !t.passed).take(20) {
        eprintln!(
            "regime check failed: seed {} classified {:?}, dominance {:?}",
            t.seed, t.regime, t.rank1_dominance
        );
    }
    Ok(RegimeSection {
        target: want,
        config,
        slack,
        thresholds,
        seeds: SeedRange {
            first: a.common.seed,
            count,
        },
        passed: failing_seeds.is_empty(),
        failing_seeds,
        trials,
        first: reports.into_iter().next().expect("at least one trial"),
    })
}

fn run_alignment(a: &SimulateArgs) -> Result<AlignmentSection, CliError> {
    let dim = a.dim.unwrap_or(1280);
    let trials = a.trials.unwrap_or(10_000);
    let estimate = random_alignment_baseline(dim, trials, a.common.seed).map_err(lab_error)?;
    let z = estimate.z_score();
    let asym = asymptotic_alignment(dim);
    Ok(AlignmentSection {
        estimate,
        z_score: z,
        relative_error_vs_asymptotic: (estimate.mean - asym) / asym,
        passed: z.abs() <= ALIGNMENT_Z_MAX,
    })
}

pub fn run(a: &SimulateArgs) -> Result<Outcome, CliError> {
    if !a.lemma && a.regime.is_none() && !a.alignment {
        return Err(CliError::Usage(
            "simulate needs at least one of --lemma, --regime, --alignment".into(),
        ));
    }
    let slack = a.slack.unwrap_or(DEFAULT_LEMMA_SLACK);
    if !(slack >= 1.0 && slack.is_finite()) {
        return Err(CliError::Usage(format!("--slack must be at least 1, got {slack}")));
    }
    let defaults = RegimeThresholds::default();
    let thresholds = RegimeThresholds {
        alignment_depth: a.alignment_depth_threshold.unwrap_or(defaults.alignment_depth),
        spectral_purity: a.spectral_purity_threshold.unwrap_or(defaults.spectral_purity),
        directionality: a.directionality_threshold.unwrap_or(defaults.directionality),
    };

    let mut manifest = RunManifest::new("simulate", a.common.no_timestamp);
    manifest
        .param("seed", a.common.seed)
        .param("lemma", a.lemma)
        .param("regime", a.regime.map(|r| format!("{r:?}").to_lowercase()))
        .param("alignment", a.alignment)
        .param("slack", slack)
        .param("thresholds", thresholds)
        .param("attractor_alignment_min", ATTRACTOR_ALIGNMENT_MIN)
        .param("alignment_z_max", ALIGNMENT_Z_MAX);

    let lemma = a.lemma.then(|| run_lemma(a, slack)).transpose()?;
    let regime = a.regime.map(|t| run_regime(a, t, slack, thresholds)).transpose()?;
    let alignment = a.alignment.then(|| run_alignment(a)).transpose()?;

    if let Some(l) = &lemma {
        manifest
            .param("lemma_config", &l.config)
            .param("lemma_trials", l.seeds.count);
    }
    if let Some(r) = &regime {
        manifest
            .param("regime_config", &r.config)
            .param("regime_trials", r.seeds.count);
    }
    if let Some(al) = &alignment {
        manifest
            .param("alignment_dim", al.estimate.dim)
            .param("alignment_trials", al.estimate.trials);
    }

    let passed = lemma.as_ref().is_none_or(|l| l.passed)
        && regime.as_ref().is_none_or(|r| r.passed)
        && alignment.as_ref().is_none_or(|al| al.passed);

    if let Some(l) = &lemma {
        let worst = l
            .sweep
            .summary
            .iter()
            .map(|s| s.worst_bound_fraction)
            .fold(0.0, f64::max);
        eprintln!(
            "lemma: {} chains, {} violations, worst ratio/bound {:.3}",
            l.seeds.count,
            l.sweep.failures.len(),
            worst
        );
    }
    if let Some(r) = &regime {
        eprintln!(
            "regime: {}/{} seeds classified {:?} within bounds",
            r.trials.iter().filter(|t| t.passed).count(),
            r.trials.len(),
            r.target
        );
    }
    if let Some(al) = &alignment {
        eprintln!(
            "alignment: D={} mean {:.5} ± {:.5} (exact {:.5}, z = {:.2})",
            al.estimate.dim, al.estimate.mean, al.estimate.std_error, al.estimate.exact, al.z_score
        );
    }

    let report = SimulateReport {
        manifest,
        passed,
        lemma,
        regime,
        alignment,
    };
    ensure_dir(&a.common.out)?;
    write_json(&a.common.out.join("simulate.json"), &report)?;
    Ok(if passed {
        Outcome::Success
    } else {
        Outcome::DomainFailure
    })
}
