//! Batch analysis over clean/adversarial record pairs.
//!
//! Every pair is reduced to per-condition [`SpectralMetrics`] and a
//! [`MetricDelta`] at each truncation level. Deltas are then pooled per
//! `(model, component, K)` into table cells, per layer into depth curves,
//! and final-layer metrics are placed on an `(N_eff, α)` phase plane.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{metric_delta, MetricConfig, MetricDelta, MetricsError, SpectralMetrics, Spectrum};
use crate::store::{compute_spectrum, Component, Condition, PairKey, RecordPair};

/// Phase-plane `α` threshold separating the high-decay region.
pub const DEFAULT_ALPHA_THRESHOLD: f64 = 9.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{key}: {source}")]
    Metrics {
        key: Box<PairKey>,
        #[source]
        source: MetricsError,
    },
    #[error("no pair metrics to aggregate")]
    EmptyInput,
    #[error("{model_id}/{component}: layer curve needs at least 2 layers, found {layers}")]
    InsufficientDepth {
        model_id: String,
        component: Component,
        layers: usize,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

/// Metrics of both halves of one pair at one truncation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub key: PairKey,
    pub k: usize,
    pub clean: SpectralMetrics,
    pub adversarial: SpectralMetrics,
    pub delta: MetricDelta,
}

/// Spectra of a pair, computed once and reused for every `K`.
#[derive(Debug, Clone)]
pub struct PairSpectra {
    pub key: PairKey,
    pub clean: Spectrum,
    pub adversarial: Spectrum,
}

impl PairSpectra {
    pub fn from_pair(p: &RecordPair) -> Self {
        Self {
            key: p.key(),
            clean: compute_spectrum(&p.clean),
            adversarial: compute_spectrum(&p.adversarial),
        }
    }

    pub fn metrics_at(&self, k: usize, cfg: &MetricConfig) -> Result<PairMetrics, PipelineError> {
        let tag = |source| PipelineError::Metrics {
            key: Box::new(self.key.clone()),
            source,
        };
        let clean = SpectralMetrics::compute(&self.clean, k, cfg).map_err(tag)?;
        let adversarial = SpectralMetrics::compute(&self.adversarial, k, cfg).map_err(tag)?;
        let delta = metric_delta(&clean, &adversarial).map_err(tag)?;
        Ok(PairMetrics {
            key: self.key.clone(),
            k,
            clean,
            adversarial,
            delta,
        })
    }
}

/// spectrum → top-K → metrics per condition → delta.
pub fn pair_metrics(p: &RecordPair, k: usize, cfg: &MetricConfig) -> Result<PairMetrics, PipelineError> {
    PairSpectra::from_pair(p).metrics_at(k, cfg)
}

/// Evaluates every pair at every `K` in parallel. Output order follows
/// `pairs`, then `ks`; failures are returned alongside, never dropped.
pub fn batch_pair_metrics(
    pairs: &[RecordPair],
    ks: &[usize],
    cfg: &MetricConfig,
) -> (Vec<PairMetrics>, Vec<PipelineError>) {
    let results: Vec<Vec<Result<PairMetrics, PipelineError>>> = pairs
        .par_iter()
        .map(|p| {
            let spectra = PairSpectra::from_pair(p);
            ks.iter().map(|&k| spectra.metrics_at(k, cfg)).collect()
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => failed.push(e),
        }
    }
    (ok, failed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer_index: usize,
    pub mean_delta: MetricDelta,
    pub n_pairs: usize,
}

/// Filter provenance carried in sample ids as a `wer=<value>` token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerProvenance {
    pub n_tagged: usize,
    pub min_wer: f64,
}

/// One table cell: mean delta over every pair and layer of a
/// `(model, component)` group at one `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub model_id: String,
    pub component: Component,
    pub k: usize,
    pub mean_delta: MetricDelta,
    pub n_pairs: usize,
    pub per_layer: Vec<LayerAggregate>,
    pub wer_filter: Option<WerProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateWarning {
    pub model_id: String,
    pub component: Component,
    pub k: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub k: usize,
    /// How pairs and layers were pooled.
    pub pooling: String,
    pub cells: Vec<CellAggregate>,
    pub warnings: Vec<AggregateWarning>,
}

/// Extracts `wer=<float>` from a sample id such as `1089-0001@wer=0.72`.
pub fn wer_from_sample_id(sample_id: &str) -> Option<f64> {
    sample_id
        .split(['@', ';', '|', ',', '&'])
        .find_map(|tok| tok.trim().strip_prefix("wer="))
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

fn mean_delta<'a>(items: impl Iterator<Item = &'a MetricDelta>) -> (MetricDelta, usize) {
    let mut sum = MetricDelta::ZERO;
    let mut n = 0usize;
    for d in items {
        sum.d_n_eff_pct += d.d_n_eff_pct;
        sum.d_log10_kf += d.d_log10_kf;
        sum.d_alpha += d.d_alpha;
        n += 1;
    }
    let nf = n.max(1) as f64;
    (
        MetricDelta {
            d_n_eff_pct: sum.d_n_eff_pct / nf,
            d_log10_kf: sum.d_log10_kf / nf,
            d_alpha: sum.d_alpha / nf,
        },
        n,
    )
}

/// Arithmetic means of each delta field per `(model, component)` at `k`,
/// pooled over pairs and layers. Groups that appear only at other `K`
/// values are reported as warnings rather than zero rows.
pub fn aggregate_table(metrics: &[PairMetrics], k: usize) -> Result<AggregateTable, PipelineError> {
    if metrics.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut groups: BTreeMap<(String, Component), Vec<&PairMetrics>> = BTreeMap::new();
    for m in metrics {
        let entry = groups.entry((m.key.model_id.clone(), m.key.component)).or_default();
        if m.k == k {
            entry.push(m);
        }
    }

    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for ((model_id, component), mut members) in groups {
        if members.is_empty() {
            warnings.push(AggregateWarning {
                model_id,
                component,
                k,
                message: format!("no pair produced metrics at K={k}"),
            });
            continue;
        }
        // fixed summation order makes the means independent of input order
        members.sort_by(|a, b| a.key.cmp(&b.key));
        let (mean, n_pairs) = mean_delta(members.iter().map(|m| &m.delta));

        let mut by_layer: BTreeMap<usize, Vec<&MetricDelta>> = BTreeMap::new();
        for m in &members {
            by_layer.entry(m.key.layer_index).or_default().push(&m.delta);
        }
        let per_layer = by_layer
            .into_iter()
            .map(|(layer_index, ds)| {
                let (mean_delta, n_pairs) = mean_delta(ds.into_iter());
                LayerAggregate {
                    layer_index,
                    mean_delta,
                    n_pairs,
                }
            })
            .collect();

        let wers: Vec<f64> = members
            .iter()
            .filter_map(|m| wer_from_sample_id(&m.key.sample_id))
            .collect();
        let wer_filter = (!wers.is_empty()).then(|| WerProvenance {
            n_tagged: wers.len(),
            min_wer: wers.iter().copied().fold(f64::INFINITY, f64::min),
        });

        cells.push(CellAggregate {
            model_id,
            component,
            k,
            mean_delta: mean,
            n_pairs,
            per_layer,
            wer_filter,
        });
    }
    Ok(AggregateTable {
        k,
        pooling: "arithmetic mean over pairs and layers; log10 Kf shifts averaged in log space".into(),
        cells,
        warnings,
    })
}

/// Mean `ΔN_eff %` per layer for one `(model, component, K)`.
pub fn layer_curves(
    metrics: &[PairMetrics],
    model_id: &str,
    component: Component,
    k: usize,
) -> Result<Vec<(usize, f64)>, PipelineError> {
    let mut members: Vec<&PairMetrics> = metrics
        .iter()
        .filter(|m| m.k == k && m.key.model_id == model_id && m.key.component == component)
        .collect();
    members.sort_by(|a, b| a.key.cmp(&b.key));
    let mut by_layer: BTreeMap<usize, Vec<&MetricDelta>> = BTreeMap::new();
    for m in members {
        by_layer.entry(m.key.layer_index).or_default().push(&m.delta);
    }
    if by_layer.len() < 2 {
        return Err(PipelineError::InsufficientDepth {
            model_id: model_id.to_string(),
            component,
            layers: by_layer.len(),
        });
    }
    Ok(by_layer
        .into_iter()
        .map(|(layer, ds)| (layer, mean_delta(ds.into_iter()).0.d_n_eff_pct))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    Dispersive,
    Attractor,
    Unassigned,
}

/// Mean final-layer metrics of one model/component under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseInput {
    pub model_id: String,
    pub component: Component,
    pub condition: Condition,
    pub n_eff: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub model_id: String,
    pub component: Component,
    pub condition: Condition,
    pub n_eff: f64,
    pub alpha: f64,
    pub cluster: Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Configured,
    /// Midpoint of the mean `N_eff` above and below the `α` threshold.
    ClusterMidpoint,
    /// All points fell on one side of the `α` threshold; mean `N_eff`.
    BatchMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub alpha_threshold: f64,
    pub n_eff_threshold: f64,
    pub n_eff_threshold_source: ThresholdSource,
    pub points: Vec<PhasePoint>,
}

/// Averages the deepest layer's metrics per `(model, component, condition)`.
pub fn final_layer_inputs(metrics: &[PairMetrics], k: usize) -> Vec<PhaseInput> {
    let mut deepest: BTreeMap<(String, Component), usize> = BTreeMap::new();
    for m in metrics.iter().filter(|m| m.k == k) {
        let e = deepest.entry((m.key.model_id.clone(), m.key.component)).or_insert(0);
        *e = (*e).max(m.key.layer_index);
    }
    let mut out = Vec::new();
    for ((model_id, component), layer) in deepest {
        let mut members: Vec<&PairMetrics> = metrics
            .iter()
            .filter(|m| {
                m.k == k && m.key.model_id == model_id && m.key.component == component && m.key.layer_index == layer
            })
            .collect();
        members.sort_by(|a, b| a.key.cmp(&b.key));
        let n = members.len() as f64;
        for condition in [Condition::Clean, Condition::Adversarial] {
            let pick = |m: &&PairMetrics| match condition {
                Condition::Clean => m.clean,
                Condition::Adversarial => m.adversarial,
            };
            out.push(PhaseInput {
                model_id: model_id.clone(),
                component,
                condition,
                n_eff: members.iter().map(|m| pick(m).n_eff).sum::<f64>() / n,
                alpha: members.iter().map(|m| pick(m).alpha).sum::<f64>() / n,
            });
        }
    }
    out
}

/// Places points on the phase plane. Attractor: `α > α*` and
/// `N_eff < N*`; Dispersive: `α < α*` and `N_eff ≥ N*`; anything else is
/// unassigned. Without an explicit `N*`, it is the midpoint between the mean
/// `N_eff` of points above and below `α*`.
pub fn phase_points(inputs: &[PhaseInput], alpha_threshold: f64, n_eff_threshold: Option<f64>) -> PhaseDiagram {
    let (n_eff_threshold, source) = match n_eff_threshold {
        Some(t) => (t, ThresholdSource::Configured),
        None => {
            let mean = |pts: &[&PhaseInput]| pts.iter().map(|p| p.n_eff).sum::<f64>() / pts.len() as f64;
            let high: Vec<&PhaseInput> = inputs.iter().filter(|p| p.alpha > alpha_threshold).collect();
            let low: Vec<&PhaseInput> = inputs.iter().filter(|p| p.alpha <= alpha_threshold).collect();
            if !high.is_empty() && !low.is_empty() {
                (0.5 * (mean(&high) + mean(&low)), ThresholdSource::ClusterMidpoint)
            } else if inputs.is_empty() {
                (0.0, ThresholdSource::BatchMean)
            } else {
                let all: Vec<&PhaseInput> = inputs.iter().collect();
                (mean(&all), ThresholdSource::BatchMean)
            }
        }
    };
    let points = inputs
        .iter()
        .map(|p| {
            let cluster = if p.alpha > alpha_threshold && p.n_eff < n_eff_threshold {
                Cluster::Attractor
            } else if p.alpha < alpha_threshold && p.n_eff >= n_eff_threshold {
                Cluster::Dispersive
            } else {
                Cluster::Unassigned
            };
            PhasePoint {
                model_id: p.model_id.clone(),
                component: p.component,
                condition: p.condition,
                n_eff: p.n_eff,
                alpha: p.alpha,
                cluster,
            }
        })
        .collect();
    PhaseDiagram {
        alpha_threshold,
        n_eff_threshold,
        n_eff_threshold_source: source,
        points,
    }
}

#[derive(Serialize)]
struct TableRow<'a> {
    model: &'a str,
    component: &'a str,
    k: usize,
    d_n_eff_pct: f64,
    d_log10_kf: f64,
    d_alpha: f64,
    n_pairs: usize,
}

/// One row per cell: `model,component,k,d_n_eff_pct,d_log10_kf,d_alpha,n_pairs`.
pub fn write_table_csv<W: Write>(cells: &[CellAggregate], out: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(TableRow {
            model: &c.model_id,
            component: c.component.as_str(),
            k: c.k,
            d_n_eff_pct: c.mean_delta.d_n_eff_pct,
            d_log10_kf: c.mean_delta.d_log10_kf,
            d_alpha: c.mean_delta.d_alpha,
            n_pairs: c.n_pairs,
        })?;
    }
    if cells.is_empty() {
        w.write_record([
            "model",
            "component",
            "k",
            "d_n_eff_pct",
            "d_log10_kf",
            "d_alpha",
            "n_pairs",
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct PhaseRow<'a> {
    model: &'a str,
    component: &'a str,
    condition: String,
    n_eff: f64,
    alpha: f64,
    cluster: Cluster,
}

pub fn write_phase_csv<W: Write>(diagram: &PhaseDiagram, out: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    for p in &diagram.points {
        w.serialize(PhaseRow {
            model: &p.model_id,
            component: p.component.as_str(),
            condition: p.condition.to_string(),
            n_eff: p.n_eff,
            alpha: p.alpha,
            cluster: p.cluster,
        })?;
    }
    if diagram.points.is_empty() {
        w.write_record(["model", "component", "condition", "n_eff", "alpha", "cluster"])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Distinct `(model, component)` groups present at `k`.
pub fn groups_at(metrics: &[PairMetrics], k: usize) -> BTreeSet<(String, Component)> {
    metrics
        .iter()
        .filter(|m| m.k == k)
        .map(|m| (m.key.model_id.clone(), m.key.component))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ActivationRecord;
    use proptest::prelude::*;

    fn key(model: &str, component: Component, layer: usize, sample: &str) -> PairKey {
        PairKey {
            model_id: model.into(),
            component,
            layer_index: layer,
            sample_id: sample.into(),
        }
    }

    fn sm(n_eff: f64, alpha: f64) -> SpectralMetrics {
        SpectralMetrics {
            n_eff,
            alpha,
            kf: 10.0,
            k_used: 10,
        }
    }

    fn pm(model: &str, layer: usize, sample: &str, pct: f64) -> PairMetrics {
        PairMetrics {
            key: key(model, Component::CrossAttention, layer, sample),
            k: 10,
            clean: sm(10.0, 1.0),
            adversarial: sm(10.0 * (1.0 + pct / 100.0), 1.0),
            delta: MetricDelta {
                d_n_eff_pct: pct,
                d_log10_kf: pct / 10.0,
                d_alpha: -pct / 100.0,
            },
        }
    }

    fn diag_record(values: &[f32], condition: Condition) -> ActivationRecord {
        let n = values.len();
        let mut data = vec![0.0f32; (n + 4) * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        ActivationRecord::new("small", Component::CrossAttention, 3, "s0", condition, n + 4, n, data).unwrap()
    }

    #[test]
    fn identity_pair_has_zero_delta() {
        let values: Vec<f32> = (1..=20).map(|i| 1.0 / i as f32).collect();
        let clean = diag_record(&values, Condition::Clean);
        let adv = diag_record(&values, Condition::Adversarial);
        let m = pair_metrics(&RecordPair::new(clean, adv).unwrap(), 10, &MetricConfig::default()).unwrap();
        assert_eq!(m.delta, MetricDelta::ZERO);
    }

    #[test]
    fn damped_tail_collapses_rank_and_hardens_slope() {
        let clean: Vec<f32> = (1..=50).map(|i| (i as f32).powf(-0.5)).collect();
        let adv: Vec<f32> = clean
            .iter()
            .enumerate()
            .map(|(i, v)| if i >= 10 { v * 0.1 } else { *v })
            .collect();
        let pair = RecordPair::new(
            diag_record(&clean, Condition::Clean),
            diag_record(&adv, Condition::Adversarial),
        )
        .unwrap();
        let m = pair_metrics(&pair, 50, &MetricConfig::default()).unwrap();
        assert!(m.delta.d_n_eff_pct < 0.0);
        assert!(m.delta.d_alpha > 0.0);
        assert!(m.delta.d_log10_kf > 0.0);
    }

    #[test]
    fn rank_one_adversarial_collapses_and_has_no_slope() {
        let clean: Vec<f32> = (1..=30).map(|i| 1.0 + 1.0 / i as f32).collect();
        let n = 30;
        let a: Vec<f32> = (0..n + 4).map(|i| 1.0 + (i % 3) as f32).collect();
        let b: Vec<f32> = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { -2.0 }).collect();
        let data = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        let adv = ActivationRecord::new(
            "small",
            Component::CrossAttention,
            3,
            "s0",
            Condition::Adversarial,
            n + 4,
            n,
            data,
        )
        .unwrap();
        let s = compute_spectrum(&adv).truncate_top_k(10);
        assert!((crate::metrics::effective_rank(&s).unwrap() - 1.0).abs() < 1e-6);
        let pair = RecordPair::new(diag_record(&clean, Condition::Clean), adv).unwrap();
        assert!(matches!(
            pair_metrics(&pair, 10, &MetricConfig::default()),
            Err(PipelineError::Metrics {
                source: MetricsError::InsufficientTail { .. },
                ..
            })
        ));
    }

    #[test]
    fn failing_pair_is_tagged_with_key() {
        let pair = RecordPair::new(
            diag_record(&[0.0, 0.0, 0.0, 0.0], Condition::Clean),
            diag_record(&[1.0, 1.0, 1.0, 1.0], Condition::Adversarial),
        )
        .unwrap();
        match pair_metrics(&pair, 4, &MetricConfig::default()) {
            Err(PipelineError::Metrics { key, source }) => {
                assert_eq!(key.layer_index, 3);
                assert_eq!(source, MetricsError::DegenerateSpectrum);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mean_of_one_and_two() {
        let t = aggregate_table(&[pm("tiny", 0, "a", -7.5)], 10).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert_eq!(t.cells[0].mean_delta, pm("tiny", 0, "a", -7.5).delta);

        let t = aggregate_table(&[pm("tiny", 0, "a", 2.0), pm("tiny", 1, "b", -4.0)], 10).unwrap();
        assert!((t.cells[0].mean_delta.d_n_eff_pct + 1.0).abs() < 1e-12);
        assert_eq!(t.cells[0].n_pairs, 2);
        assert_eq!(t.cells[0].per_layer.len(), 2);
    }

    #[test]
    fn missing_k_becomes_warning() {
        let mut other = pm("large", 0, "a", 1.0);
        other.k = 50;
        let t = aggregate_table(&[pm("tiny", 0, "a", 1.0), other], 10).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(t.warnings[0].model_id, "large");
        assert!(matches!(aggregate_table(&[], 10), Err(PipelineError::EmptyInput)));
    }

    #[test]
    fn wer_provenance() {
        assert_eq!(wer_from_sample_id("1089-0001@wer=0.72"), Some(0.72));
        assert_eq!(wer_from_sample_id("plain"), None);
        let mut a = pm("tiny", 0, "x@wer=0.9", 1.0);
        a.key.sample_id = "x@wer=0.9".into();
        let b = pm("tiny", 0, "y@wer=0.6", 1.0);
        let t = aggregate_table(&[a, b], 10).unwrap();
        assert_eq!(
            t.cells[0].wer_filter,
            Some(WerProvenance {
                n_tagged: 2,
                min_wer: 0.6
            })
        );
    }

    #[test]
    fn curves() {
        let flat = vec![pm("m", 0, "a", -3.0), pm("m", 1, "a", -3.0), pm("m", 2, "a", -3.0)];
        let c = layer_curves(&flat, "m", Component::CrossAttention, 10).unwrap();
        assert!(c.iter().all(|p| p.1 == -3.0));

        let worsening: Vec<PairMetrics> = (0..6).map(|l| pm("m", l, "a", -(l as f64) * 2.0)).collect();
        let c = layer_curves(&worsening, "m", Component::CrossAttention, 10).unwrap();
        assert!(c.windows(2).all(|w| w[1].1 < w[0].1));

        let sparse = vec![pm("m", 0, "a", 1.0), pm("m", 2, "a", 2.0), pm("m", 5, "a", 3.0)];
        let c = layer_curves(&sparse, "m", Component::CrossAttention, 10).unwrap();
        assert_eq!(c.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 2, 5]);

        assert!(matches!(
            layer_curves(&[pm("m", 4, "a", 1.0)], "m", Component::CrossAttention, 10),
            Err(PipelineError::InsufficientDepth { layers: 1, .. })
        ));
    }

    fn pin(model: &str, n_eff: f64, alpha: f64) -> PhaseInput {
        PhaseInput {
            model_id: model.into(),
            component: Component::SelfAttention,
            condition: Condition::Adversarial,
            n_eff,
            alpha,
        }
    }

    #[test]
    fn phase_corners() {
        let d = phase_points(
            &[pin("large", 3.0, 9.5), pin("tiny", 30.0, 2.0), pin("odd", 30.0, 9.5)],
            DEFAULT_ALPHA_THRESHOLD,
            Some(10.0),
        );
        let clusters: Vec<Cluster> = d.points.iter().map(|p| p.cluster).collect();
        assert_eq!(
            clusters,
            vec![Cluster::Attractor, Cluster::Dispersive, Cluster::Unassigned]
        );
    }

    #[test]
    fn phase_threshold_defaults_to_cluster_midpoint() {
        let d = phase_points(
            &[pin("large", 4.0, 9.5), pin("tiny", 30.0, 2.0), pin("small", 20.0, 3.0)],
            9.0,
            None,
        );
        assert_eq!(d.n_eff_threshold_source, ThresholdSource::ClusterMidpoint);
        assert!((d.n_eff_threshold - 0.5 * (4.0 + 25.0)).abs() < 1e-12);
        assert_eq!(d.points[0].cluster, Cluster::Attractor);
        assert_eq!(d.points[1].cluster, Cluster::Dispersive);

        let d = phase_points(&[pin("a", 4.0, 1.0), pin("b", 8.0, 2.0)], 9.0, None);
        assert_eq!(d.n_eff_threshold_source, ThresholdSource::BatchMean);
        assert_eq!(d.n_eff_threshold, 6.0);
    }

    #[test]
    fn final_layer_selection() {
        let metrics = vec![pm("m", 0, "a", 1.0), pm("m", 3, "a", 2.0), pm("m", 3, "b", 4.0)];
        let inputs = final_layer_inputs(&metrics, 10);
        assert_eq!(inputs.len(), 2);
        assert_eq!(inputs[0].condition, Condition::Clean);
        assert!((inputs[1].n_eff - 10.0 * 1.03).abs() < 1e-12);
    }

    #[test]
    fn table_csv_columns() {
        let t = aggregate_table(&[pm("tiny", 0, "a", -7.5)], 10).unwrap();
        let mut buf = Vec::new();
        write_table_csv(&t.cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,component,k,d_n_eff_pct,d_log10_kf,d_alpha,n_pairs"
        );
        assert_eq!(lines.next().unwrap(), "tiny,cross_attn,10,-7.5,-0.75,0.075,1");
    }

    proptest! {
        #[test]
        fn identical_deltas_aggregate_exactly(pct in -50.0f64..50.0, n in 1usize..40) {
            let metrics: Vec<PairMetrics> = (0..n).map(|i| pm("m", i % 4, &format!("s{i}"), pct)).collect();
            let t = aggregate_table(&metrics, 10).unwrap();
            let expected = pm("m", 0, "a", pct).delta;
            prop_assert!((t.cells[0].mean_delta.d_n_eff_pct - expected.d_n_eff_pct).abs() <= 1e-12 * pct.abs().max(1.0));
            prop_assert!((t.cells[0].mean_delta.d_alpha - expected.d_alpha).abs() <= 1e-12);
        }

        #[test]
        fn aggregation_is_permutation_invariant(
            pcts in prop::collection::vec(-30.0f64..30.0, 2..30),
            shift in 0usize..29,
        ) {
            let metrics: Vec<PairMetrics> = pcts
                .iter()
                .enumerate()
                .map(|(i, p)| pm(if i % 2 == 0 { "a" } else { "b" }, i % 3, &format!("s{i}"), *p))
                .collect();
            let mut rotated = metrics.clone();
            rotated.rotate_left(shift % metrics.len());
            rotated.reverse();
            prop_assert_eq!(aggregate_table(&metrics, 10).unwrap(), aggregate_table(&rotated, 10).unwrap());
        }

        #[test]
        fn every_pair_lands_in_one_group(
            models in prop::collection::vec(0usize..3, 1..25),
        ) {
            let metrics: Vec<PairMetrics> = models
                .iter()
                .enumerate()
                .map(|(i, m)| pm(["tiny", "small", "large"][*m], i % 2, &format!("s{i}"), 1.0))
                .collect();
            let t = aggregate_table(&metrics, 10).unwrap();
            prop_assert_eq!(t.cells.iter().map(|c| c.n_pairs).sum::<usize>(), metrics.len());
        }

        #[test]
        fn raising_alpha_threshold_never_creates_attractors(
            pts in prop::collection::vec((0.5f64..60.0, 0.0f64..15.0), 1..20),
            t1 in 0.0f64..15.0,
            bump in 0.0f64..5.0,
            n_star in prop::option::of(1.0f64..60.0),
        ) {
            let inputs: Vec<PhaseInput> = pts.iter().map(|(n, a)| pin("m", *n, *a)).collect();
            let low = phase_points(&inputs, t1, n_star);
            let high = phase_points(&inputs, t1 + bump, n_star);
            for (a, b) in low.points.iter().zip(&high.points) {
                prop_assert!(!(a.cluster == Cluster::Dispersive && b.cluster == Cluster::Attractor));
            }
        }
    }
}
