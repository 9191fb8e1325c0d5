//! Plot-ready CSV tables and simple SVG bar charts from a report.

use std::fmt::Write as _;

use crate::corpus::Subtype;

use super::experiment::{CellReport, ExperimentReport, Scope};

pub const GROUPED_BARS_HEADER: &str =
    "embedding,paradigm,learner,ratio,macro_f1,macro_ci_low,macro_ci_high,all_f1,all_ci_low,all_ci_high,status";
pub const SUBTYPE_PANEL_HEADER: &str = "embedding,paradigm,learner,ratio,f1,ci_low,ci_high,n_test";

/// Which outputs to build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FigureOptions {
    pub per_subtype: bool,
    pub svg: bool,
}

fn triple(c: &CellReport, scope: Scope) -> String {
    match c.row(scope) {
        Some(r) => format!("{:.6},{:.6},{:.6}", r.mean_f1, r.ci_low, r.ci_high),
        None => ",,".into(),
    }
}

fn cell_prefix(c: &CellReport) -> String {
    let k = &c.key;
    format!("{},{},{},{}", k.embedding, k.paradigm, k.learner_name(), k.ratio.value())
}

/// One row per cell: macro-over-subtypes and all-pairs F1 with intervals.
pub fn grouped_bars_csv(report: &ExperimentReport) -> String {
    let mut s = format!("{GROUPED_BARS_HEADER}\n");
    for c in &report.cells {
        let status = if c.is_ok() { "ok" } else { "failed" };
        let _ = writeln!(
            s,
            "{},{},{},{status}",
            cell_prefix(c),
            triple(c, Scope::MacroOverSubtypes),
            triple(c, Scope::AllPairs)
        );
    }
    s
}

/// One panel per subtype, one row per cell holding that subtype's score.
pub fn subtype_panel_csv(report: &ExperimentReport, subtype: Subtype) -> String {
    let mut s = format!("{SUBTYPE_PANEL_HEADER}\n");
    for c in &report.cells {
        if let Some(r) = c.row(Scope::Subtype(subtype)) {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{}", cell_prefix(c), r.mean_f1, r.ci_low, r.ci_high, r.n_test);
        }
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bars grouped by ratio, one bar per (embedding, paradigm, learner), with
/// interval whiskers. `scope` picks the score row plotted.
pub fn bar_chart_svg(report: &ExperimentReport, scope: Scope, title: &str) -> String {
    let mut ratios: Vec<_> = report.cells.iter().map(|c| c.key.ratio).collect();
    ratios.sort();
    ratios.dedup();
    let mut series: Vec<String> = Vec::new();
    for c in &report.cells {
        let name = format!("{} {} {}", c.key.embedding, c.key.paradigm, c.key.learner_name());
        if !series.contains(&name) {
            series.push(name);
        }
    }
    let (bar_w, gap, plot_h, left, top) = (14.0, 24.0, 240.0, 50.0, 30.0);
    let group_w = bar_w * series.len().max(1) as f64 + gap;
    let width = left + group_w * ratios.len().max(1) as f64 + 20.0;
    let legend_h = 16.0 * series.len() as f64;
    let height = top + plot_h + 40.0 + legend_h;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="16" font-size="12">{}</text>"#, escape(title));
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            width - 20.0,
            y(v),
            y(v),
            left - 4.0,
            y(v) + 3.0
        );
    }
    for (gi, r) in ratios.iter().enumerate() {
        let gx = left + gi as f64 * group_w + gap / 2.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{r}</text>"#, gx + group_w / 2.0 - gap / 2.0, top + plot_h + 14.0);
        for (si, name) in series.iter().enumerate() {
            let cell = report.cells.iter().find(|c| {
                c.key.ratio == *r && format!("{} {} {}", c.key.embedding, c.key.paradigm, c.key.learner_name()) == *name
            });
            let Some(row) = cell.and_then(|c| c.row(scope)) else { continue };
            let x = gx + si as f64 * bar_w;
            let hue = (si * 360) / series.len().max(1);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="hsl({hue},55%,55%)"/>"#,
                y(row.mean_f1),
                bar_w - 2.0,
                y(0.0) - y(row.mean_f1)
            );
            let cx = x + bar_w / 2.0 - 1.0;
            let _ = writeln!(s, r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#, y(row.ci_low), y(row.ci_high));
        }
    }
    for (si, name) in series.iter().enumerate() {
        let ly = top + plot_h + 30.0 + 16.0 * si as f64;
        let hue = (si * 360) / series.len().max(1);
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{:.1}" width="10" height="10" fill="hsl({hue},55%,55%)"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 9.0,
            left + 14.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `(file name, contents)` for every requested output.
pub fn figure_files(report: &ExperimentReport, opts: FigureOptions) -> Vec<(String, String)> {
    let mut out = vec![("grouped_bars.csv".to_string(), grouped_bars_csv(report))];
    if opts.per_subtype {
        for s in Subtype::ALL {
            out.push((format!("subtype_{s}.csv"), subtype_panel_csv(report, s)));
        }
    }
    if opts.svg {
        out.push(("grouped_bars.svg".into(), bar_chart_svg(report, Scope::MacroOverSubtypes, "F1 (macro over subtypes)")));
        if opts.per_subtype {
            for s in Subtype::ALL {
                out.push((format!("subtype_{s}.svg"), bar_chart_svg(report, Scope::Subtype(s), &format!("F1 {s}"))));
            }
        }
    }
    out
}
