//! Delimited-text tables with JSON mirrors; column order is fixed.

use std::path::Path;

use serde::Serialize;

use crate::dataset::{ContrastPair, RetentionReport};
use crate::error::{Error, Result};
use crate::heads::{HeadCounts, HeadLabel};
use crate::metrics::{AggregateTable, LayerGroup, Retrospection};
use crate::patch::{write_json, RegionAblation};

pub const RETENTION_HEADER: &str = "scope\ttotal\tretained\trate";
pub const ABLATION_HEADER: &str = "region\tmetric\tlayer\tmean\tn_pairs\tn_degenerate";
pub const RETROSPECTION_HEADER: &str = "category\tearly\tlate\tratio\tpersistent";
pub const PER_TOKEN_HEADER: &str = "pair_id\tstage\tposition\tcategory\tmean_abs_dld";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.tsv` and `<stem>.json` under `dir`, returning both file names.
pub fn write_table<T: Serialize>(dir: &Path, stem: &str, tsv: &str, json: &T) -> Result<[String; 2]> {
    let tsv_name = format!("{stem}.tsv");
    let json_name = format!("{stem}.json");
    write_text(&dir.join(&tsv_name), tsv)?;
    write_json(&dir.join(&json_name), json)?;
    Ok([tsv_name, json_name])
}

pub fn retention_tsv(r: &RetentionReport) -> String {
    let mut out = format!("{RETENTION_HEADER}\n");
    out.push_str(&format!("overall\t{}\t{}\t{:.6}\n", r.total, r.retained, r.rate));
    for d in &r.by_depth {
        out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", d.depth, d.total, d.retained, d.rate));
    }
    out
}

/// Per-layer means over pairs, one row per (region, layer).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummaryRow {
    pub region: String,
    pub metric: String,
    /// Layer index, or `all` in cumulative mode.
    pub layer: String,
    pub mean: Option<f64>,
    pub n_pairs: usize,
    pub n_degenerate: usize,
}

pub fn summarize_ablations(results: &[RegionAblation]) -> Vec<AblationSummaryRow> {
    let mut rows: Vec<AblationSummaryRow> = Vec::new();
    let mut keys: Vec<(String, String, bool, usize)> = Vec::new();
    for r in results {
        let key = (r.region.slug().to_string(), r.metric.as_str().to_string(), r.cumulative, r.values.len());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (region, metric, cumulative, n) in keys {
        let group: Vec<&RegionAblation> = results
            .iter()
            .filter(|r| r.region.slug() == region && r.cumulative == cumulative && r.values.len() == n)
            .collect();
        for layer in 0..n {
            let vals: Vec<f64> = group.iter().filter_map(|r| r.values[layer]).collect();
            rows.push(AblationSummaryRow {
                region: region.clone(),
                metric: metric.clone(),
                layer: if cumulative { "all".into() } else { layer.to_string() },
                mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                n_pairs: vals.len(),
                n_degenerate: group.len() - vals.len(),
            });
        }
    }
    rows
}

pub fn ablation_tsv(rows: &[AblationSummaryRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let mean = r.mean.map_or_else(|| "NA".into(), |m| format!("{m:.9}"));
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.region, r.metric, r.layer, mean, r.n_pairs, r.n_degenerate
        ));
    }
    out
}

pub fn retrospection_tsv(rows: &[Retrospection]) -> String {
    let mut out = format!("{RETROSPECTION_HEADER}\n");
    for r in rows {
        let ratio = r.ratio.map_or_else(|| "NA".into(), |x| format!("{x:.6}"));
        out.push_str(&format!(
            "{}\t{:.9}\t{:.9}\t{}\t{}\n",
            r.category, r.early, r.late, ratio, r.persistent
        ));
    }
    out
}

pub fn per_token_tsv(entries: &[(&ContrastPair, Vec<Vec<f64>>)], groups: &[LayerGroup]) -> String {
    let mut out = format!("{PER_TOKEN_HEADER}\n");
    for (pair, stages) in entries {
        for (g, row) in groups.iter().zip(stages) {
            for (t, v) in row.iter().enumerate() {
                let cat = pair.annotations.get(t).map_or("other".to_string(), |a| a.category.to_string());
                out.push_str(&format!("{}\t{}\t{t}\t{cat}\t{v:.9}\n", pair.id, g.name));
            }
        }
    }
    out
}

pub fn aggregate_tsv(table: &AggregateTable) -> String {
    table.to_tsv()
}

/// Head counts as text; an empty count set yields only the header.
pub fn head_counts_tsv(counts: &HeadCounts) -> String {
    if counts.counts.is_empty() {
        let mut out = String::from("layer");
        for l in HeadLabel::ALL {
            out.push('\t');
            out.push_str(l.slug());
        }
        out.push('\n');
        return out;
    }
    counts.to_tsv()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DepthRetention, Depth, Region};
    use crate::patch::AblationMetric;

    #[test]
    fn retention_rows() {
        let r = RetentionReport {
            model_id: "toy".into(),
            total: 74,
            retained: 42,
            rate: 42.0 / 74.0,
            by_depth: vec![DepthRetention {
                depth: Depth::OneHop,
                total: 74,
                retained: 42,
                rate: 42.0 / 74.0,
            }],
        };
        let t = retention_tsv(&r);
        assert!(t.contains("overall\t74\t42\t0.567568"));
        assert!(t.contains("one_hop\t74\t42\t0.567568"));
    }

    #[test]
    fn ablation_summary_means_and_degenerates() {
        let mk = |vals: Vec<Option<f64>>| RegionAblation {
            pair_id: "p".into(),
            region: Region::FactsRegion,
            metric: AblationMetric::Rld,
            cumulative: false,
            ld_origin: 1.0,
            degenerate: vals.iter().any(Option::is_none),
            values: vals,
        };
        let rows = summarize_ablations(&[mk(vec![Some(1.0), Some(2.0)]), mk(vec![Some(3.0), None])]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mean, Some(2.0));
        assert_eq!(rows[1].mean, Some(2.0));
        assert_eq!(rows[1].n_degenerate, 1);
        assert!(ablation_tsv(&[]).lines().count() == 1);
    }
}
