mod common;

use std::fs;

use common::*;
use spi_core::pipeline::{
    aggregate_table, batch_pair_metrics, final_layer_inputs, layer_curves, phase_points, Cluster,
};
use spi_core::store::{scan_pairs, Component, Condition};
use spi_core::MetricConfig;

/// Set `SPI_REGEN_FIXTURES=1` to rewrite the committed files.
#[test]
fn committed_fixtures_match_generator() {
    let root = fixture_root();
    let files = fixture_files();
    if std::env::var_os("SPI_REGEN_FIXTURES").is_some() {
        for (rel, bytes) in &files {
            let path = root.join(rel);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, bytes).unwrap();
        }
    }
    for (rel, bytes) in &files {
        let on_disk = fs::read(root.join(rel)).unwrap_or_else(|e| panic!("{}: {e}", rel.display()));
        assert!(on_disk == *bytes, "{} differs from generator output", rel.display());
    }
}

#[test]
fn headline_cell_and_layer_targets() {
    let scan = scan_pairs(fixture_root().join("pairs")).unwrap();
    assert!(scan.unpaired.is_empty() && scan.invalid.is_empty());
    let (metrics, failed) = batch_pair_metrics(&scan.pairs, &[10, HEADLINE_K], &MetricConfig::default());
    assert!(failed.is_empty(), "{failed:?}");

    let table = aggregate_table(&metrics, HEADLINE_K).unwrap();
    let cell = table
        .cells
        .iter()
        .find(|c| c.model_id == HEADLINE_MODEL && c.component == HEADLINE_COMPONENT)
        .unwrap();
    assert!(
        (cell.mean_delta.d_n_eff_pct - HEADLINE_PCT).abs() <= 0.01,
        "{}",
        cell.mean_delta.d_n_eff_pct
    );
    assert_eq!(cell.n_pairs, 8);
    assert_eq!(cell.wer_filter.unwrap().min_wer, 0.61);

    let curve = layer_curves(&metrics, HEADLINE_MODEL, HEADLINE_COMPONENT, HEADLINE_K).unwrap();
    for ((_, got), want) in curve.iter().zip(HEADLINE_LAYER_PCT) {
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
    }
    // worsening by depth
    assert!(curve.windows(2).all(|w| w[1].1 < w[0].1));

    let tiny = table.cells.iter().find(|c| c.model_id == "tiny").unwrap();
    assert!((tiny.mean_delta.d_n_eff_pct - 2.0).abs() < 0.01, "{:?}", tiny);
    assert!(tiny.mean_delta.d_alpha < 0.0);
}

#[test]
fn phase_fixture_forms_two_clusters() {
    let scan = scan_pairs(fixture_root().join("phase")).unwrap();
    let (metrics, failed) = batch_pair_metrics(&scan.pairs, &[HEADLINE_K], &MetricConfig::default());
    assert!(failed.is_empty(), "{failed:?}");
    let inputs = final_layer_inputs(&metrics, HEADLINE_K);
    assert_eq!(inputs.len(), 4);
    for i in &inputs {
        let want = match (i.model_id.as_str(), i.condition) {
            ("large", Condition::Clean) => 9.4,
            ("large", Condition::Adversarial) => 9.6,
            ("tiny", Condition::Clean) => 0.7,
            _ => 0.8,
        };
        assert!(
            (i.alpha - want).abs() < 1e-6,
            "{} {:?}: {}",
            i.model_id,
            i.condition,
            i.alpha
        );
        assert_eq!(i.component, Component::SelfAttention);
    }
    let d = phase_points(&inputs, 9.0, None);
    for p in &d.points {
        let want = if p.model_id == "large" {
            Cluster::Attractor
        } else {
            Cluster::Dispersive
        };
        assert_eq!(p.cluster, want, "{p:?}");
    }
}
