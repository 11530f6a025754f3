use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spi_core::pipeline::{
    aggregate_table, batch_pair_metrics, final_layer_inputs, layer_curves, phase_points, write_phase_csv,
    write_table_csv, AggregateTable, PairMetrics, PhaseDiagram, PipelineError,
};
use spi_core::store::{compute_spectrum, scan_pairs, scan_records, Component, PairScan, StoreError};
use spi_core::SpectralMetrics;

use crate::args::{AnalyzeArgs, CommonArgs, PhaseArgs};
use crate::manifest::{ensure_dir, write_bytes, write_json, RunManifest};
use crate::svg::phase_svg;
use crate::{CliError, Outcome};

const DEFAULT_TOPK: [usize; 2] = [10, 50];
const DEFAULT_PHASE_K: usize = 50;

#[derive(Serialize)]
struct FileIssue {
    path: String,
    error: String,
}

fn display_path(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn manifest_for(command: &str, a: &AnalyzeArgs, ks: &[usize]) -> RunManifest {
    let c: &CommonArgs = &a.common;
    let mut m = RunManifest::new(command, c.no_timestamp);
    m.param("input", a.input.to_string_lossy())
        .param("topk", ks)
        .param("tail", c.tail.to_string())
        .param("kf_floor", c.kf_floor.to_string())
        .param("seed", c.seed)
        .param("centering", "none")
        .param("token_positions", "all stored rows");
    m
}

fn store_error(e: StoreError) -> CliError {
    CliError::Domain(e.to_string())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), PipelineError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Domain(e.to_string()))?;
    Ok(buf)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    file: &'a str,
    model: &'a str,
    component: &'a str,
    layer: usize,
    sample: &'a str,
    condition: String,
    k: usize,
    k_used: usize,
    n_eff: f64,
    alpha: f64,
    kf: f64,
}

#[derive(Serialize)]
struct MetricsSidecar {
    manifest: RunManifest,
    records: usize,
    rows: usize,
    invalid_files: Vec<FileIssue>,
    metric_failures: Vec<FileIssue>,
    warnings: usize,
}

pub fn metrics(a: &AnalyzeArgs) -> Result<Outcome, CliError> {
    let ks = a.common.topk.as_ref().map_or(DEFAULT_TOPK.to_vec(), |t| t.0.clone());
    let cfg = a.common.metric_config();
    let scan = scan_records(&a.input).map_err(store_error)?;
    let invalid_files: Vec<FileIssue> = scan
        .invalid
        .iter()
        .map(|(p, e)| FileIssue {
            path: display_path(&a.input, p),
            error: e.to_string(),
        })
        .collect();
    if scan.records.is_empty() {
        eprintln!(
            "error: no valid SPAC files under {} ({} unreadable)",
            a.input.display(),
            invalid_files.len()
        );
        return Ok(Outcome::DomainFailure);
    }

    let per_record: Vec<Vec<(usize, Result<SpectralMetrics, String>)>> = scan
        .records
        .par_iter()
        .map(|(_, r)| {
            let s = compute_spectrum(r);
            ks.iter()
                .map(|&k| (k, SpectralMetrics::compute(&s, k, &cfg).map_err(|e| e.to_string())))
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut metric_failures = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    for ((path, r), results) in scan.records.iter().zip(&per_record) {
        let file = display_path(&a.input, path);
        for (k, res) in results {
            match res {
                Ok(m) => {
                    w.serialize(MetricRow {
                        file: &file,
                        model: &r.model_id,
                        component: r.component.as_str(),
                        layer: r.layer_index,
                        sample: &r.sample_id,
                        condition: r.condition.to_string(),
                        k: *k,
                        k_used: m.k_used,
                        n_eff: m.n_eff,
                        alpha: m.alpha,
                        kf: m.kf,
                    })
                    .map_err(|e| CliError::Domain(e.to_string()))?;
                    rows.push(());
                }
                Err(e) => {
                    log::warn!("{file} K={k}: {e}");
                    metric_failures.push(FileIssue {
                        path: file.clone(),
                        error: format!("K={k}: {e}"),
                    });
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Domain(e.to_string()))?;

    ensure_dir(&a.common.out)?;
    write_bytes(&a.common.out.join("metrics.csv"), &bytes)?;
    let warnings = invalid_files.len() + metric_failures.len();
    let sidecar = MetricsSidecar {
        manifest: manifest_for("metrics", a, &ks),
        records: scan.records.len(),
        rows: rows.len(),
        invalid_files,
        metric_failures,
        warnings,
    };
    write_json(&a.common.out.join("metrics.manifest.json"), &sidecar)?;
    eprintln!(
        "metrics: {} records, {} rows, {warnings} warnings",
        sidecar.records, sidecar.rows
    );
    Ok(Outcome::Success)
}

fn pair_scan(input: &Path) -> Result<PairScan, CliError> {
    let scan = scan_pairs(input).map_err(store_error)?;
    for u in &scan.unpaired {
        log::warn!("{}: no {} counterpart", u.path.display(), opposite(u.condition));
    }
    Ok(scan)
}

fn opposite(c: spi_core::store::Condition) -> &'static str {
    match c {
        spi_core::store::Condition::Clean => "adversarial",
        spi_core::store::Condition::Adversarial => "clean",
    }
}

struct PairRun {
    metrics: Vec<PairMetrics>,
    issues: Vec<FileIssue>,
}

fn run_pairs(input: &Path, scan: &PairScan, ks: &[usize], common: &CommonArgs) -> PairRun {
    let (metrics, failed) = batch_pair_metrics(&scan.pairs, ks, &common.metric_config());
    let mut issues: Vec<FileIssue> = scan
        .invalid
        .iter()
        .map(|(p, e)| FileIssue {
            path: display_path(input, p),
            error: e.to_string(),
        })
        .collect();
    issues.extend(scan.unpaired.iter().map(|u| FileIssue {
        path: display_path(input, &u.path),
        error: format!("unpaired {} record {}", u.condition, u.key),
    }));
    for e in failed {
        log::warn!("{e}");
        issues.push(FileIssue {
            path: String::new(),
            error: e.to_string(),
        });
    }
    PairRun { metrics, issues }
}

#[derive(Serialize)]
struct Curve {
    model_id: String,
    component: Component,
    /// `(layer, mean ΔN_eff %)`
    points: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct LayerReport<'a> {
    manifest: &'a RunManifest,
    table: &'a AggregateTable,
    curves: Vec<Curve>,
}

#[derive(Serialize)]
struct CompareSidecar<'a> {
    manifest: &'a RunManifest,
    pairs: usize,
    outputs: Vec<String>,
    issues: Vec<FileIssue>,
}

pub fn compare(a: &AnalyzeArgs) -> Result<Outcome, CliError> {
    let ks = a.common.topk.as_ref().map_or(DEFAULT_TOPK.to_vec(), |t| t.0.clone());
    let scan = pair_scan(&a.input)?;
    if scan.pairs.is_empty() {
        eprintln!("error: no clean/adversarial pairs under {}", a.input.display());
        return Ok(Outcome::DomainFailure);
    }
    let run = run_pairs(&a.input, &scan, &ks, &a.common);
    let manifest = manifest_for("compare", a, &ks);
    ensure_dir(&a.common.out)?;

    let mut outputs = Vec::new();
    let mut issues = run.issues;
    for &k in &ks {
        let table = match aggregate_table(&run.metrics, k) {
            Ok(t) => t,
            Err(PipelineError::EmptyInput) => {
                eprintln!("error: every pair failed metric computation");
                return Ok(Outcome::DomainFailure);
            }
            Err(e) => return Err(CliError::Domain(e.to_string())),
        };
        for w in &table.warnings {
            log::warn!("{}/{} K={}: {}", w.model_id, w.component, w.k, w.message);
        }
        let curves = table
            .cells
            .iter()
            .filter_map(|c| match layer_curves(&run.metrics, &c.model_id, c.component, k) {
                Ok(points) => Some(Curve {
                    model_id: c.model_id.clone(),
                    component: c.component,
                    points,
                }),
                Err(e) => {
                    issues.push(FileIssue {
                        path: String::new(),
                        error: format!("K={k}: {e}"),
                    });
                    None
                }
            })
            .collect();

        let csv_name = format!("table_k{k}.csv");
        let json_name = format!("layers_k{k}.json");
        write_bytes(
            &a.common.out.join(&csv_name),
            &csv_bytes(|b| write_table_csv(&table.cells, b))?,
        )?;
        write_json(
            &a.common.out.join(&json_name),
            &LayerReport {
                manifest: &manifest,
                table: &table,
                curves,
            },
        )?;
        eprintln!("compare: K={k}: {} cells", table.cells.len());
        outputs.push(csv_name);
        outputs.push(json_name);
    }
    write_json(
        &a.common.out.join("compare.manifest.json"),
        &CompareSidecar {
            manifest: &manifest,
            pairs: scan.pairs.len(),
            outputs,
            issues,
        },
    )?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct PhaseSidecar<'a> {
    manifest: &'a RunManifest,
    diagram: &'a PhaseDiagram,
    issues: Vec<FileIssue>,
}

pub fn phase(p: &PhaseArgs) -> Result<Outcome, CliError> {
    let a = &p.analyze;
    let k = match a.common.topk.as_ref().map(|t| t.0.as_slice()) {
        None => DEFAULT_PHASE_K,
        Some([k]) => *k,
        Some(list) => {
            return Err(CliError::Usage(format!(
                "phase takes a single --topk value, got {}",
                list.len()
            )))
        }
    };
    if !a.common.alpha_threshold.is_finite() {
        return Err(CliError::Usage("--alpha-threshold must be finite".into()));
    }
    let scan = pair_scan(&a.input)?;
    let run = run_pairs(&a.input, &scan, &[k], &a.common);
    let inputs: Vec<_> = final_layer_inputs(&run.metrics, k)
        .into_iter()
        .filter(|i| p.component.is_none_or(|c| c == i.component))
        .collect();
    if inputs.is_empty() {
        eprintln!("error: no final-layer metrics at K={k} under {}", a.input.display());
        return Ok(Outcome::DomainFailure);
    }
    let diagram = phase_points(&inputs, a.common.alpha_threshold, p.n_eff_threshold);

    let mut manifest = manifest_for("phase", a, &[k]);
    manifest
        .param("alpha_threshold", a.common.alpha_threshold)
        .param("n_eff_threshold", p.n_eff_threshold)
        .param("component", p.component.map(|c| c.as_str()));

    ensure_dir(&a.common.out)?;
    let out: PathBuf = a.common.out.clone();
    write_bytes(&out.join("phase.csv"), &csv_bytes(|b| write_phase_csv(&diagram, b))?)?;
    write_bytes(&out.join("phase.svg"), phase_svg(&diagram, &manifest).as_bytes())?;
    write_json(
        &out.join("phase.manifest.json"),
        &PhaseSidecar {
            manifest: &manifest,
            diagram: &diagram,
            issues: run.issues,
        },
    )?;
    eprintln!(
        "phase: {} points, N_eff threshold {:.3} ({:?})",
        diagram.points.len(),
        diagram.n_eff_threshold,
        diagram.n_eff_threshold_source
    );
    Ok(Outcome::Success)
}
