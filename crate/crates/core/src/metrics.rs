//! Stage-wise reductions of residual sweeps: category means with SEM, per-token
//! stage means, and fact-retrospection persistence.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TokenAnnotation, TokenCategory};
use crate::error::{Error, Result};
use crate::patch::{SweepGrid, RATIO_EPSILON};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Early,
    Middle,
    Late,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Early, Stage::Middle, Stage::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Early => "early",
            Stage::Middle => "middle",
            Stage::Late => "late",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive layer range of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGroup {
    pub name: Stage,
    pub lo: usize,
    pub hi: usize,
}

impl LayerGroup {
    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn len(&self) -> usize {
        self.hi + 1 - self.lo
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupScheme {
    Fixed36,
    #[default]
    Proportional,
}

impl FromStr for GroupScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed36" => Ok(GroupScheme::Fixed36),
            "proportional" => Ok(GroupScheme::Proportional),
            _ => Err(Error::Config(format!("unknown layer-group scheme {s:?} (fixed36, proportional)"))),
        }
    }
}

impl fmt::Display for GroupScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupScheme::Fixed36 => "fixed36",
            GroupScheme::Proportional => "proportional",
        })
    }
}

/// `round(n * num / 36)` with halves rounded up, in integer arithmetic.
fn scaled_boundary(n: usize, num: usize) -> usize {
    (2 * n * num + 36) / 72
}

pub fn make_layer_groups(n_layers: usize, scheme: GroupScheme) -> Result<Vec<LayerGroup>> {
    let fail = || Error::LayerGroupScheme {
        scheme: scheme.to_string(),
        n_layers,
    };
    if n_layers < 3 || (scheme == GroupScheme::Fixed36 && n_layers != 36) {
        return Err(fail());
    }
    let b1 = scaled_boundary(n_layers, 14).clamp(1, n_layers - 2);
    let b2 = scaled_boundary(n_layers, 24).clamp(b1 + 1, n_layers - 1);
    Ok(vec![
        LayerGroup {
            name: Stage::Early,
            lo: 0,
            hi: b1 - 1,
        },
        LayerGroup {
            name: Stage::Middle,
            lo: b1,
            hi: b2 - 1,
        },
        LayerGroup {
            name: Stage::Late,
            lo: b2,
            hi: n_layers - 1,
        },
    ])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean with an `n - 1` denominator; absent for a single value.
pub fn sem(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

fn check_grid<S: Scalar>(grid: &SweepGrid<S>, groups: &[LayerGroup]) -> Result<()> {
    if grid.is_normalized() {
        return Err(Error::NormalizedGrid(grid.pair_id.clone()));
    }
    if let Some(g) = groups.iter().find(|g| g.hi >= grid.rows() || g.lo > g.hi) {
        return Err(Error::LayerGroupScheme {
            scheme: format!("{}={}..{}", g.name, g.lo, g.hi),
            n_layers: grid.rows(),
        });
    }
    Ok(())
}

/// `[stage][position]` mean of `|dld|` over the layers of each stage.
pub fn per_token_stage_mean<S: Scalar>(grid: &SweepGrid<S>, groups: &[LayerGroup]) -> Result<Vec<Vec<f64>>> {
    check_grid(grid, groups)?;
    Ok(groups
        .iter()
        .map(|g| {
            (0..grid.cols())
                .map(|t| g.layers().map(|l| grid.get(l, t).f64().abs()).sum::<f64>() / g.len() as f64)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub category: TokenCategory,
    pub group: Stage,
    pub mean_abs_dld: f64,
    pub sem: Option<f64>,
    pub n_samples: usize,
    pub n_token_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub groups: Vec<LayerGroup>,
    pub rows: Vec<AggregateRow>,
}

impl AggregateTable {
    pub fn get(&self, category: TokenCategory, group: Stage) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.category == category && r.group == group)
    }

    pub const TSV_HEADER: &'static str = "category\tgroup\tmean_abs_dld\tsem\tn_samples\tn_token_instances";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::TSV_HEADER);
        for r in &self.rows {
            let sem = r.sem.map_or_else(|| "NA".to_string(), |s| format!("{s:.9}"));
            out.push_str(&format!(
                "{}\t{}\t{:.9}\t{}\t{}\t{}\n",
                r.category, r.group, r.mean_abs_dld, sem, r.n_samples, r.n_token_instances
            ));
        }
        out
    }
}

/// Per-sample `[category][stage]` means plus token counts; absent categories are `None`.
type SampleMeans = Vec<Option<(Vec<f64>, usize)>>;

fn sample_means<S: Scalar>(grid: &SweepGrid<S>, ann: &[TokenAnnotation], groups: &[LayerGroup]) -> Result<SampleMeans> {
    check_grid(grid, groups)?;
    if ann.len() != grid.cols() {
        return Err(Error::AnnotationLengthMismatch {
            annotations: ann.len(),
            matrix: grid.cols(),
        });
    }
    let stage = per_token_stage_mean(grid, groups)?;
    Ok(TokenCategory::ALL
        .iter()
        .map(|&c| {
            let positions: Vec<usize> = ann.iter().filter(|a| a.category == c).map(|a| a.position).collect();
            if positions.is_empty() {
                return None;
            }
            let per_group = stage
                .iter()
                .map(|row| positions.iter().map(|&t| row[t]).sum::<f64>() / positions.len() as f64)
                .collect();
            Some((per_group, positions.len()))
        })
        .collect())
}

/// Nested mean of `|dld|`: layers within a stage, tokens within a category, then samples.
pub fn mean_abs_dld_by_category<S: Scalar>(
    samples: &[(&SweepGrid<S>, &[TokenAnnotation])],
    groups: &[LayerGroup],
) -> Result<AggregateTable> {
    let partial = samples
        .par_iter()
        .map(|(g, a)| sample_means(g, a, groups).map_err(|e| e.for_pair(&g.pair_id)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (ci, &category) in TokenCategory::ALL.iter().enumerate() {
        let present: Vec<&(Vec<f64>, usize)> = partial.iter().filter_map(|s| s[ci].as_ref()).collect();
        if present.is_empty() {
            continue;
        }
        let n_token_instances = present.iter().map(|p| p.1).sum();
        for (gi, g) in groups.iter().enumerate() {
            let values: Vec<f64> = present.iter().map(|p| p.0[gi]).collect();
            rows.push(AggregateRow {
                category,
                group: g.name,
                mean_abs_dld: mean(&values),
                sem: sem(&values),
                n_samples: values.len(),
                n_token_instances,
            });
        }
    }
    Ok(AggregateTable {
        groups: groups.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersistenceOptions {
    /// Late must reach this fraction of the category's Early value.
    pub early_fraction: f64,
    /// Late must also reach the median Late value of non-fact categories.
    pub require_median: bool,
}

impl Default for PersistenceOptions {
    fn default() -> Self {
        PersistenceOptions {
            early_fraction: 0.25,
            require_median: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrospection {
    pub category: TokenCategory,
    pub early: f64,
    pub late: f64,
    /// Late / Early; absent when Early is below the ratio guard.
    pub ratio: Option<f64>,
    pub persistent: bool,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

pub fn retrospection_score(table: &AggregateTable, opts: &PersistenceOptions) -> Vec<Retrospection> {
    let (Some(first), Some(last)) = (table.groups.first(), table.groups.last()) else {
        return Vec::new();
    };
    let value = |c: TokenCategory, s: Stage| table.get(c, s).map(|r| r.mean_abs_dld);
    let entries: Vec<(TokenCategory, f64, f64)> = TokenCategory::ALL
        .iter()
        .filter_map(|&c| Some((c, value(c, first.name)?, value(c, last.name)?)))
        .collect();
    let floor = median(entries.iter().filter(|e| !e.0.is_fact()).map(|e| e.2).collect()).unwrap_or(0.0);
    entries
        .into_iter()
        .map(|(category, early, late)| {
            let ratio = (early >= RATIO_EPSILON).then(|| late / early);
            let persistent =
                late > 0.0 && late >= opts.early_fraction * early && (!opts.require_median || late >= floor);
            Retrospection {
                category,
                early,
                late,
                ratio,
                persistent,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Region;
    use crate::patch::{Granularity, Normalization, PatchMode};
    use crate::scalar::Precision;

    fn grid(values: Vec<Vec<f64>>) -> SweepGrid<f64> {
        SweepGrid {
            pair_id: "g".into(),
            granularity: Granularity::Resid,
            mode: PatchMode::Patch,
            precision: Precision::F64,
            tolerance: 1e-6,
            row_axis: "layer".into(),
            col_axis: "position".into(),
            ld_clean: 1.0,
            ld_baseline: -1.0,
            normalization: Normalization::None,
            grid: values,
        }
    }

    fn ann(cats: &[TokenCategory]) -> Vec<TokenAnnotation> {
        cats.iter()
            .enumerate()
            .map(|(position, &category)| TokenAnnotation {
                position,
                region: Region::FactsRegion,
                category,
            })
            .collect()
    }

    #[test]
    fn layer_groups() {
        let g = make_layer_groups(36, GroupScheme::Fixed36).unwrap();
        assert_eq!(g.iter().map(|g| (g.lo, g.hi)).collect::<Vec<_>>(), vec![(0, 13), (14, 23), (24, 35)]);
        assert_eq!(make_layer_groups(36, GroupScheme::Proportional).unwrap(), g);
        let g6 = make_layer_groups(6, GroupScheme::Proportional).unwrap();
        assert_eq!(g6.iter().map(|g| (g.lo, g.hi)).collect::<Vec<_>>(), vec![(0, 1), (2, 3), (4, 5)]);
        assert!(make_layer_groups(6, GroupScheme::Fixed36).is_err());
        assert!(make_layer_groups(2, GroupScheme::Proportional).is_err());
        for n in 3..80 {
            let g = make_layer_groups(n, GroupScheme::Proportional).unwrap();
            assert_eq!(g[0].lo, 0);
            assert_eq!(g[1].lo, g[0].hi + 1);
            assert_eq!(g[2].lo, g[1].hi + 1);
            assert_eq!(g[2].hi, n - 1);
        }
    }

    #[test]
    fn single_sample_collapses_to_raw() {
        use TokenCategory::*;
        let g = grid(vec![vec![1.0, -2.0], vec![3.0, 0.5], vec![-4.0, 6.0]]);
        let groups = [
            LayerGroup { name: Stage::Early, lo: 0, hi: 0 },
            LayerGroup { name: Stage::Middle, lo: 1, hi: 1 },
            LayerGroup { name: Stage::Late, lo: 2, hi: 2 },
        ];
        let a = ann(&[FactsValue, QueryToken]);
        let t = mean_abs_dld_by_category(&[(&g, &a[..])], &groups).unwrap();
        assert_eq!(t.get(FactsValue, Stage::Late).unwrap().mean_abs_dld, 4.0);
        assert_eq!(t.get(QueryToken, Stage::Early).unwrap().mean_abs_dld, 2.0);
        assert_eq!(t.get(QueryToken, Stage::Early).unwrap().sem, None);
        assert!(t.get(Delimiter, Stage::Early).is_none());
        assert_eq!(t.rows.len(), 6);
    }

    #[test]
    fn normalized_grids_are_refused() {
        let mut g = grid(vec![vec![1.0]; 3]);
        g.normalization = Normalization::PerLayerMaxAbs;
        let groups = make_layer_groups(3, GroupScheme::Proportional).unwrap();
        let a = ann(&[TokenCategory::QueryToken]);
        assert!(matches!(
            mean_abs_dld_by_category(&[(&g, &a[..])], &groups),
            Err(Error::Pair { .. })
        ));
        assert!(matches!(per_token_stage_mean(&g, &groups), Err(Error::NormalizedGrid(_))));
    }

    #[test]
    fn stage_mean_constant() {
        let g = grid(vec![vec![-0.5; 4]; 6]);
        let groups = make_layer_groups(6, GroupScheme::Proportional).unwrap();
        for row in per_token_stage_mean(&g, &groups).unwrap() {
            assert_eq!(row, vec![0.5; 4]);
        }
    }

    #[test]
    fn sem_values() {
        assert_eq!(sem(&[3.0]), None);
        let s = sem(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((s - (5.0_f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn retrospection() {
        use TokenCategory::*;
        let groups = make_layer_groups(3, GroupScheme::Proportional).unwrap();
        let row = |category, group, m| AggregateRow {
            category,
            group,
            mean_abs_dld: m,
            sem: None,
            n_samples: 1,
            n_token_instances: 1,
        };
        let table = AggregateTable {
            groups,
            rows: vec![
                row(FactsValue, Stage::Early, 2.0),
                row(FactsValue, Stage::Late, 2.0),
                row(QueryToken, Stage::Early, 1.0),
                row(QueryToken, Stage::Late, 3.0),
                row(Delimiter, Stage::Early, 1.0),
                row(Delimiter, Stage::Late, 0.0),
            ],
        };
        let r = retrospection_score(&table, &PersistenceOptions::default());
        let get = |c| r.iter().find(|x| x.category == c).unwrap().clone();
        assert_eq!(get(FactsValue).ratio, Some(1.0));
        assert!(get(FactsValue).persistent);
        assert_eq!(get(Delimiter).ratio, Some(0.0));
        assert!(!get(Delimiter).persistent);
        assert_eq!(get(QueryToken).ratio, Some(3.0));
    }
}
