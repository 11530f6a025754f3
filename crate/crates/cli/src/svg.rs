use std::fmt::Write;

use spi_core::pipeline::{Cluster, PhaseDiagram};

use crate::manifest::RunManifest;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

pub fn cluster_color(c: Cluster) -> &'static str {
    match c {
        Cluster::Attractor => "#d62728",
        Cluster::Dispersive => "#1f77b4",
        Cluster::Unassigned => "#7f7f7f",
    }
}

fn cluster_name(c: Cluster) -> &'static str {
    match c {
        Cluster::Attractor => "attractor",
        Cluster::Dispersive => "dispersive",
        Cluster::Unassigned => "unassigned",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Padded `[lo, hi]` covering `values` and `extra`, never zero width.
fn axis_range(values: impl Iterator<Item = f64>, extra: f64) -> (f64, f64) {
    let (mut lo, mut hi) = values.fold((extra, extra), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.08 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Scatter of `N_eff` (x) against `α` (y), one colour per cluster, with
/// both thresholds drawn as dashed lines and the run manifest embedded.
pub fn phase_svg(d: &PhaseDiagram, manifest: &RunManifest) -> String {
    let (x0, x1) = axis_range(d.points.iter().map(|p| p.n_eff), d.n_eff_threshold);
    let (y0, y1) = axis_range(d.points.iter().map(|p| p.alpha), d.alpha_threshold);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let meta = serde_json::to_string(manifest).expect("manifest serializes");
    let _ = writeln!(s, "<metadata>{}</metadata>", escape(&meta));
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );

    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#,
            sx(xv),
            HEIGHT - MARGIN + 16.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            MARGIN - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">effective rank N_eff</text>"#,
        WIDTH / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">spectral decay α</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let _ = writeln!(
        s,
        r##"<line class="threshold alpha" x1="{MARGIN}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#444" stroke-dasharray="4 3"/>"##,
        WIDTH - MARGIN,
        sy(d.alpha_threshold),
        sy(d.alpha_threshold)
    );
    let _ = writeln!(
        s,
        r##"<line class="threshold n_eff" x1="{:.1}" x2="{:.1}" y1="{MARGIN}" y2="{:.1}" stroke="#444" stroke-dasharray="4 3"/>"##,
        sx(d.n_eff_threshold),
        sx(d.n_eff_threshold),
        HEIGHT - MARGIN
    );

    for p in &d.points {
        let (cx, cy) = (sx(p.n_eff), sy(p.alpha));
        let label = format!("{} {} {}", p.model_id, p.component, p.condition);
        let _ = writeln!(
            s,
            r#"<circle class="pt {}" cx="{cx:.1}" cy="{cy:.1}" r="5" fill="{}"><title>{}: N_eff={:.4}, α={:.4}</title></circle>"#,
            cluster_name(p.cluster),
            cluster_color(p.cluster),
            escape(&label),
            p.n_eff,
            p.alpha
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            cx + 7.0,
            cy - 6.0,
            escape(&label)
        );
    }

    for (i, c) in [Cluster::Attractor, Cluster::Dispersive, Cluster::Unassigned]
        .into_iter()
        .enumerate()
    {
        let y = MARGIN + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="4" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 90.0,
            cluster_color(c),
            WIDTH - MARGIN - 80.0,
            y + 4.0,
            cluster_name(c)
        );
    }
    s.push_str("</svg>\n");
    s
}
