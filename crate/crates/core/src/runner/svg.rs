//! Static SVG plots: DSM heatmaps and grouped bar charts.

use std::fmt::Write;

use crate::dsm::Dsm;
use crate::metrics::Aggregate;

const CELL: usize = 28;
const LABEL_W: usize = 160;
const TOP: usize = 40;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fill(v: u8) -> &'static str {
    match v {
        0 => "#ffffff",
        1 => "#2b5d8a",
        _ => "#b8b8b8",
    }
}

/// One `class="cell"` rect per cell, colored by value, plus a
/// `class="mismatch"` outline where `pred` differs from `truth`.
pub fn heatmap_svg(pred: &Dsm, truth: &Dsm, title: &str) -> String {
    let n = pred.len();
    let w = LABEL_W + n * CELL + 20;
    let h = TOP + n * CELL + 20;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="4" y="16" font-size="13">{}</text>"#, esc(title));
    for (i, label) in pred.labels().iter().enumerate() {
        let y = TOP + i * CELL + CELL / 2 + 4;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, LABEL_W - 6, esc(label));
    }
    let cells = pred.cells();
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (LABEL_W + j * CELL, TOP + i * CELL);
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#999999"><title>{}</title></rect>"##,
                fill(v),
                v
            );
        }
    }
    let t = truth.cells();
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let differs = t.get(i).and_then(|r| r.get(j)).is_some_and(|&tv| tv != v);
            if differs {
                let (x, y) = (LABEL_W + j * CELL + 2, TOP + i * CELL + 2);
                let _ = writeln!(
                    s,
                    r##"<rect class="mismatch" x="{x}" y="{y}" width="{}" height="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
                    CELL - 4,
                    CELL - 4
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

pub struct BarGroup {
    pub label: String,
    pub values: [Option<Aggregate>; 6],
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#17becf"];

/// Grouped bars of metric means with ±std error bars. The four ratio
/// metrics share a 0..1 axis; distances are scaled to their maximum.
pub fn bar_chart_svg(groups: &[BarGroup], names: &[&str; 6]) -> String {
    let bar = 14usize;
    let group_w = bar * 6 + 24;
    let plot_h = 200.0;
    let (left, top) = (50usize, 30usize);
    let w = left + groups.len().max(1) * group_w + 140;
    let h = top + plot_h as usize + 120;
    let dist_max = groups
        .iter()
        .flat_map(|g| g.values[4..].iter().flatten().map(|a| a.mean + a.std))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let base = top as f64 + plot_h;
    let _ = writeln!(s, r##"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="#000000"/>"##, w - 140);
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + gi * group_w + 12;
        for (mi, v) in g.values.iter().enumerate() {
            let Some(a) = v else { continue };
            let scale = if mi < 4 { 1.0 } else { 1.0 / dist_max };
            let height = (a.mean * scale).clamp(0.0, 1.0) * plot_h;
            let x = gx + mi * bar;
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{x}" y="{:.2}" width="{}" height="{height:.2}" fill="{}"><title>{} {}: {} ± {}</title></rect>"#,
                base - height,
                bar - 2,
                PALETTE[mi],
                esc(&g.label),
                names[mi],
                a.mean,
                a.std
            );
            let cx = x as f64 + (bar - 2) as f64 / 2.0;
            let hi = base - ((a.mean + a.std) * scale).clamp(0.0, 1.0) * plot_h;
            let lo = base - ((a.mean - a.std) * scale).clamp(0.0, 1.0) * plot_h;
            let _ = writeln!(s, r##"<line class="err" x1="{cx:.2}" y1="{hi:.2}" x2="{cx:.2}" y2="{lo:.2}" stroke="#000000"/>"##);
        }
        let lx = gx + bar * 3;
        let ly = base as usize + 14;
        let _ = writeln!(
            s,
            r#"<text x="{lx}" y="{ly}" text-anchor="end" transform="rotate(-35 {lx} {ly})">{}</text>"#,
            esc(&g.label)
        );
    }
    let legend_x = w - 130;
    for (mi, name) in names.iter().enumerate() {
        let y = top + mi * 16;
        let _ = writeln!(s, r#"<rect x="{legend_x}" y="{y}" width="10" height="10" fill="{}"/>"#, PALETTE[mi]);
        let suffix = if mi < 4 { "" } else { " (scaled)" };
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}{suffix}</text>"#, legend_x + 14, y + 9);
    }
    s.push_str("</svg>\n");
    s
}
