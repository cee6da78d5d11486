//! Hand-written SVG figures. Each document carries the config hash in a
//! metadata comment and in a visible footer.

use std::fmt::Write as _;

use crate::heads::{HeadCounts, HeadLabel};
use crate::metrics::AggregateTable;
use crate::patch::{normalize_per_layer, SweepGrid};

const PALETTE: [&str; 7] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut s = Svg {
            body: String::new(),
            width,
            height,
        };
        s.text(width / 2.0, 20.0, title, 14.0, "middle");
        s
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="1"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, t: &str, size: f64, anchor: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            esc(t)
        );
    }

    fn finish(mut self, config_hash: &str) -> String {
        let h = self.height;
        self.text(self.width - 6.0, h - 6.0, &format!("config {config_hash}"), 8.0, "end");
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- config-hash: {config_hash} -->\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
        )
    }
}

fn empty(title: &str, config_hash: &str) -> String {
    let mut s = Svg::new(320.0, 120.0, title);
    s.text(160.0, 65.0, "no data", 12.0, "middle");
    s.finish(config_hash)
}

/// Diverging color for a value in [-1, 1]: blue for restoration, red for the opposite.
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let fade = |c: f64| (255.0 - (255.0 - c) * v.abs()).round() as u8;
    let (r, g, b) = if v >= 0.0 { (33.0, 102.0, 172.0) } else { (178.0, 24.0, 43.0) };
    format!("#{:02x}{:02x}{:02x}", fade(r), fade(g), fade(b))
}

/// Layer-by-column heatmap of a sweep, normalized per layer for display only.
pub fn heatmap_svg(grid: &SweepGrid<f64>, col_labels: &[String], config_hash: &str) -> String {
    let title = format!("{} {} sweep, {}", grid.granularity, grid.mode.as_str(), grid.pair_id);
    if grid.rows() == 0 || grid.cols() == 0 {
        return empty(&title, config_hash);
    }
    let shown = normalize_per_layer(grid);
    let cell = 22.0;
    let (left, top) = (50.0, 40.0);
    let width = left + cell * grid.cols() as f64 + 20.0;
    let height = top + cell * grid.rows() as f64 + 90.0;
    let mut s = Svg::new(width.max(320.0), height, &title);
    for (l, row) in shown.grid.iter().enumerate() {
        let y = top + cell * l as f64;
        s.text(left - 6.0, y + cell * 0.7, &format!("L{l}"), 9.0, "end");
        for (t, v) in row.iter().enumerate() {
            s.rect(left + cell * t as f64, y, cell - 1.0, cell - 1.0, &diverging(*v));
        }
    }
    let base = top + cell * grid.rows() as f64 + 12.0;
    for t in 0..grid.cols() {
        let label = col_labels.get(t).cloned().unwrap_or_else(|| t.to_string());
        let x = left + cell * t as f64 + cell / 2.0;
        let _ = writeln!(
            s.body,
            r#"<text x="{x:.2}" y="{base:.2}" font-size="8" font-family="sans-serif" text-anchor="end" transform="rotate(-60 {x:.2} {base:.2})">{}</text>"#,
            esc(&label)
        );
    }
    s.text(12.0, top - 8.0, grid.row_axis.as_str(), 9.0, "start");
    s.finish(config_hash)
}

/// Vertical bar chart; `errors[i]` draws a whisker when present.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64], errors: &[Option<f64>], config_hash: &str) -> String {
    if values.is_empty() {
        return empty(title, config_hash);
    }
    let bar = 26.0;
    let (left, top, plot_h) = (60.0, 40.0, 200.0);
    let width = (left + bar * values.len() as f64 + 30.0).max(320.0);
    let mut s = Svg::new(width, top + plot_h + 110.0, title);
    let hi = values
        .iter()
        .zip(errors.iter().map(|e| e.unwrap_or(0.0)).chain(std::iter::repeat(0.0)))
        .map(|(v, e)| (v + e).max(0.0))
        .fold(0.0, f64::max);
    let lo = values.iter().map(|v| v.min(0.0)).fold(0.0, f64::min);
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let y_of = |v: f64| top + plot_h * (hi - v) / span;
    let zero = y_of(0.0);
    s.line(left, top, left, top + plot_h);
    s.line(left, zero, left + bar * values.len() as f64, zero);
    s.text(left - 4.0, top + 4.0, &format!("{hi:.3}"), 8.0, "end");
    s.text(left - 4.0, top + plot_h, &format!("{lo:.3}"), 8.0, "end");
    for (i, v) in values.iter().enumerate() {
        let x = left + bar * i as f64 + 3.0;
        let (y0, y1) = (y_of(*v).min(zero), y_of(*v).max(zero));
        s.rect(x, y0, bar - 6.0, (y1 - y0).max(0.5), PALETTE[0]);
        if let Some(Some(e)) = errors.get(i) {
            let cx = x + (bar - 6.0) / 2.0;
            s.line(cx, y_of(v + e), cx, y_of(v - e));
            s.line(cx - 4.0, y_of(v + e), cx + 4.0, y_of(v + e));
            s.line(cx - 4.0, y_of(v - e), cx + 4.0, y_of(v - e));
        }
        let base = top + plot_h + 12.0;
        let cx = x + (bar - 6.0) / 2.0;
        let _ = writeln!(
            s.body,
            r#"<text x="{cx:.2}" y="{base:.2}" font-size="8" font-family="sans-serif" text-anchor="end" transform="rotate(-60 {cx:.2} {base:.2})">{}</text>"#,
            esc(&labels[i])
        );
    }
    s.finish(config_hash)
}

/// Category-by-stage bars with SEM whiskers; rows without SEM get no whisker.
pub fn aggregate_svg(table: &AggregateTable, config_hash: &str) -> String {
    let labels: Vec<String> = table.rows.iter().map(|r| format!("{} {}", r.category, r.group)).collect();
    let values: Vec<f64> = table.rows.iter().map(|r| r.mean_abs_dld).collect();
    let errors: Vec<Option<f64>> = table.rows.iter().map(|r| r.sem).collect();
    bar_chart_svg("Mean |dLD| by token category and layer group", &labels, &values, &errors, config_hash)
}

/// Per-layer stacked counts of labeled heads.
pub fn head_counts_svg(counts: &HeadCounts, config_hash: &str) -> String {
    let title = "Mean labeled heads per layer";
    if counts.counts.is_empty() {
        return empty(title, config_hash);
    }
    let bar = 28.0;
    let (left, top, plot_h) = (50.0, 40.0, 200.0);
    let width = (left + bar * counts.counts.len() as f64 + 170.0).max(360.0);
    let mut s = Svg::new(width, top + plot_h + 50.0, title);
    let max_total = counts
        .counts
        .iter()
        .map(|r| r.iter().sum::<f64>())
        .fold(0.0, f64::max)
        .max(1.0);
    s.line(left, top + plot_h, left + bar * counts.counts.len() as f64, top + plot_h);
    s.text(left - 4.0, top + 4.0, &format!("{max_total:.2}"), 8.0, "end");
    for (layer, row) in counts.counts.iter().enumerate() {
        let x = left + bar * layer as f64 + 3.0;
        let mut y = top + plot_h;
        for (i, c) in row.iter().enumerate() {
            let h = plot_h * c / max_total;
            if h > 0.0 {
                y -= h;
                s.rect(x, y, bar - 6.0, h, PALETTE[i % PALETTE.len()]);
            }
        }
        s.text(x + (bar - 6.0) / 2.0, top + plot_h + 12.0, &format!("L{layer}"), 8.0, "middle");
    }
    let lx = left + bar * counts.counts.len() as f64 + 20.0;
    for (i, label) in HeadLabel::ALL.iter().enumerate() {
        let y = top + 14.0 * i as f64;
        s.rect(lx, y, 10.0, 10.0, PALETTE[i % PALETTE.len()]);
        s.text(lx + 14.0, y + 9.0, label.slug(), 9.0, "start");
    }
    s.finish(config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{AggregateRow, Stage};
    use crate::dataset::TokenCategory;

    #[test]
    fn whiskers_only_with_sem() {
        let row = |sem| AggregateRow {
            category: TokenCategory::QueryToken,
            group: Stage::Early,
            mean_abs_dld: 1.0,
            sem,
            n_samples: 1,
            n_token_instances: 1,
        };
        let without = aggregate_svg(&AggregateTable { groups: vec![], rows: vec![row(None)] }, "abc");
        let with = aggregate_svg(&AggregateTable { groups: vec![], rows: vec![row(Some(0.2))] }, "abc");
        assert_eq!(with.matches("<line").count(), without.matches("<line").count() + 3);
        assert!(without.contains("config-hash: abc"));
    }

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging(0.0), "#ffffff");
        assert_eq!(diverging(1.0), "#2166ac");
        assert_eq!(diverging(-1.0), "#b2182b");
    }
}
