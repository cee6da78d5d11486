//! Attention-head taxonomy: thresholded attention-mass rules and per-layer counts.
//!
//! Column 0 is treated as an attention sink. It never counts toward the
//! functional rules (splitting, transmission, binding, fact retrieval, the
//! off-diagonal part of self-processing); it only feeds the idle rule.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ContrastPair, Region, TokenAnnotation, TokenCategory};
use crate::error::{Error, Result};
use crate::model::HookedModel;
use crate::scalar::Scalar;

const ROW_SUM_TOLERANCE: f64 = 1e-3;
/// Fixed ceiling on off-diagonal mass for self-processing heads.
pub const SELF_OFF_DIAGONAL_MAX: f64 = 0.2;
/// Fixed floor on off-diagonal within-expression mass for expression-processing heads.
pub const EXPR_OFF_DIAGONAL_MIN: f64 = 0.2;

/// Causal, row-stochastic attention probabilities of one head (query × key).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix<S> {
    pub layer: usize,
    pub head: usize,
    size: usize,
    weights: Vec<S>,
}

impl<S: Scalar> AttentionMatrix<S> {
    /// Validates shape, sign, causality and row sums (within 1e-3).
    pub fn new(layer: usize, head: usize, size: usize, weights: Vec<S>) -> Result<Self> {
        let bad = |message: String| Error::InvalidAttention { layer, head, message };
        if weights.len() != size * size {
            return Err(bad(format!("{} weights for a {size}x{size} matrix", weights.len())));
        }
        for i in 0..size {
            let row = &weights[i * size..(i + 1) * size];
            let mut sum = 0.0;
            for (j, w) in row.iter().enumerate() {
                let w = w.f64();
                if !w.is_finite() || w < 0.0 {
                    return Err(bad(format!("entry ({i}, {j}) = {w}")));
                }
                if j > i && w != 0.0 {
                    return Err(bad(format!("entry ({i}, {j}) above the diagonal is {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(bad(format!("row {i} sums to {sum}")));
            }
        }
        Ok(AttentionMatrix {
            layer,
            head,
            size,
            weights,
        })
    }

    /// Builds from nested rows.
    pub fn from_rows(layer: usize, head: usize, rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidAttention {
                layer,
                head,
                message: format!("row of length {} in a {n}-row matrix", r.len()),
            });
        }
        Self::new(layer, head, n, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, query: usize, key: usize) -> S {
        self.weights[query * self.size + key]
    }

    pub fn row(&self, query: usize) -> &[S] {
        &self.weights[query * self.size..(query + 1) * self.size]
    }

    fn mass(&self, query: usize, keys: impl IntoIterator<Item = usize>) -> f64 {
        keys.into_iter().map(|k| self.get(query, k).f64()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLabel {
    Splitting,
    Transmission,
    EntityBinding,
    FactRetrieval,
    Idle,
    SelfProcessing,
    ExpressionProcessing,
}

impl HeadLabel {
    pub const ALL: [HeadLabel; 7] = [
        HeadLabel::Splitting,
        HeadLabel::Transmission,
        HeadLabel::EntityBinding,
        HeadLabel::FactRetrieval,
        HeadLabel::Idle,
        HeadLabel::SelfProcessing,
        HeadLabel::ExpressionProcessing,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            HeadLabel::Splitting => "splitting",
            HeadLabel::Transmission => "transmission",
            HeadLabel::EntityBinding => "entity_binding",
            HeadLabel::FactRetrieval => "fact_retrieval",
            HeadLabel::Idle => "idle",
            HeadLabel::SelfProcessing => "self_processing",
            HeadLabel::ExpressionProcessing => "expression_processing",
        }
    }

    fn index(self) -> usize {
        HeadLabel::ALL.iter().position(|l| *l == self).expect("listed")
    }
}

impl fmt::Display for HeadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for HeadLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadLabel::ALL
            .into_iter()
            .find(|l| l.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown head label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub split: f64,
    pub trans: f64,
    pub bind: f64,
    pub fact: f64,
    pub idle: f64,
    pub diag: f64,
    pub expr: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            split: 0.5,
            trans: 0.4,
            bind: 0.3,
            fact: 0.3,
            idle: 0.8,
            diag: 0.6,
            expr: 0.6,
        }
    }
}

impl Thresholds {
    pub fn for_label(&self, label: HeadLabel) -> f64 {
        match label {
            HeadLabel::Splitting => self.split,
            HeadLabel::Transmission => self.trans,
            HeadLabel::EntityBinding => self.bind,
            HeadLabel::FactRetrieval => self.fact,
            HeadLabel::Idle => self.idle,
            HeadLabel::SelfProcessing => self.diag,
            HeadLabel::ExpressionProcessing => self.expr,
        }
    }

    pub fn set(&mut self, label: HeadLabel, value: f64) {
        let slot = match label {
            HeadLabel::Splitting => &mut self.split,
            HeadLabel::Transmission => &mut self.trans,
            HeadLabel::EntityBinding => &mut self.bind,
            HeadLabel::FactRetrieval => &mut self.fact,
            HeadLabel::Idle => &mut self.idle,
            HeadLabel::SelfProcessing => &mut self.diag,
            HeadLabel::ExpressionProcessing => &mut self.expr,
        };
        *slot = value;
    }

    /// Parses `split=0.5,trans=0.4,...`; omitted keys keep their defaults.
    pub fn parse_overrides(text: &str) -> Result<Self> {
        let mut th = Thresholds::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("threshold {part:?} is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("threshold {k} has non-numeric value {v:?}")))?;
            let slot = match k.trim() {
                "split" => &mut th.split,
                "trans" => &mut th.trans,
                "bind" => &mut th.bind,
                "fact" => &mut th.fact,
                "idle" => &mut th.idle,
                "diag" => &mut th.diag,
                "expr" => &mut th.expr,
                other => return Err(Error::Config(format!("unknown threshold {other:?}"))),
            };
            *slot = v;
        }
        Ok(th)
    }
}

/// Every measured mass behind the labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub split: f64,
    pub trans: f64,
    /// Mass from each region's final token onto its earlier tokens (reported only).
    pub terminal: f64,
    pub bind: f64,
    pub fact: f64,
    pub idle: f64,
    pub diag: f64,
    pub off_diag: f64,
    pub expr: f64,
    pub expr_off_diag: f64,
}

impl HeadScores {
    pub fn for_label(&self, label: HeadLabel) -> f64 {
        match label {
            HeadLabel::Splitting => self.split,
            HeadLabel::Transmission => self.trans,
            HeadLabel::EntityBinding => self.bind,
            HeadLabel::FactRetrieval => self.fact,
            HeadLabel::Idle => self.idle,
            HeadLabel::SelfProcessing => self.diag,
            HeadLabel::ExpressionProcessing => self.expr,
        }
    }

    fn passes(&self, label: HeadLabel, th: &Thresholds) -> bool {
        let base = self.for_label(label) >= th.for_label(label);
        match label {
            HeadLabel::SelfProcessing => base && self.off_diag <= SELF_OFF_DIAGONAL_MAX,
            HeadLabel::ExpressionProcessing => base && self.expr_off_diag >= EXPR_OFF_DIAGONAL_MIN,
            _ => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub name: HeadLabel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLabelSet {
    pub layer: usize,
    pub head: usize,
    pub labels: Vec<ScoredLabel>,
    pub scores: HeadScores,
}

impl HeadLabelSet {
    pub fn has(&self, label: HeadLabel) -> bool {
        self.labels.iter().any(|l| l.name == label)
    }

    pub fn names(&self) -> Vec<HeadLabel> {
        self.labels.iter().map(|l| l.name).collect()
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The facts_var position that opens the clause containing `value`, if any.
fn clause_var(ann: &[TokenAnnotation], value: usize) -> Option<usize> {
    ann[..value]
        .iter()
        .rev()
        .take_while(|a| a.category != TokenCategory::Delimiter)
        .find(|a| a.category == TokenCategory::FactsVar)
        .map(|a| a.position)
}

/// Computes every rule score for one head.
pub fn head_scores<S: Scalar>(m: &AttentionMatrix<S>, ann: &[TokenAnnotation]) -> Result<HeadScores> {
    let n = m.size();
    if ann.len() != n {
        return Err(Error::AnnotationLengthMismatch {
            annotations: ann.len(),
            matrix: n,
        });
    }
    let of = |c: TokenCategory| -> Vec<usize> { ann.iter().filter(|a| a.category == c).map(|a| a.position).collect() };
    let in_region = |r: Region| -> Vec<usize> { ann.iter().filter(|a| a.region == r).map(|a| a.position).collect() };
    let delimiters: Vec<usize> = of(TokenCategory::Delimiter).into_iter().filter(|&p| p > 0).collect();
    let values = of(TokenCategory::FactsValue);
    let expression = in_region(Region::ExpressionRegion);

    let idle = mean((0..n).map(|i| m.get(i, 0).f64()));
    let diag = mean((0..n).map(|i| m.get(i, i).f64()));
    let off_diag = mean((1..n).map(|i| m.mass(i, 1..i)));
    let split = mean((1..n).map(|i| m.mass(i, delimiters.iter().copied())));

    let mut trans: f64 = 0.0;
    let mut terminal: f64 = 0.0;
    for region in [Region::FactsRegion, Region::ExpressionRegion] {
        let members = in_region(region);
        if members.len() < 3 {
            continue;
        }
        let eligible: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&p| p > 0 && ann[p].category != TokenCategory::Delimiter)
            .collect();
        let earlier = |i: usize| eligible.iter().copied().filter(move |&j| j < i);
        let rows: Vec<usize> = members.iter().copied().filter(|&i| earlier(i).next().is_some()).collect();
        trans = trans.max(mean(rows.iter().map(|&i| m.mass(i, earlier(i)))));
        if let Some(&last) = members.last() {
            terminal = terminal.max(m.mass(last, earlier(last)));
        }
    }

    let bind = mean(values.iter().filter_map(|&v| {
        clause_var(ann, v)
            .filter(|&var| var > 0)
            .map(|var| m.get(v, var).f64())
    }));

    let query_fact = of(TokenCategory::QueryToken)
        .last()
        .map(|&q| m.mass(q, values.iter().copied()))
        .unwrap_or(0.0);
    let expr_fact = mean(expression.iter().map(|&i| m.mass(i, values.iter().copied())));
    let fact = query_fact.max(expr_fact);

    let expr = mean(expression.iter().map(|&i| m.mass(i, expression.iter().copied())));
    let expr_off_diag = mean(
        expression
            .iter()
            .map(|&i| m.mass(i, expression.iter().copied().filter(|&j| j != i))),
    );

    Ok(HeadScores {
        split,
        trans,
        terminal,
        bind,
        fact,
        idle,
        diag,
        off_diag,
        expr,
        expr_off_diag,
    })
}

/// Multi-label classification of one head under `th`.
pub fn classify_head<S: Scalar>(
    m: &AttentionMatrix<S>,
    ann: &[TokenAnnotation],
    th: &Thresholds,
) -> Result<HeadLabelSet> {
    let scores = head_scores(m, ann)?;
    let labels = HeadLabel::ALL
        .into_iter()
        .filter(|l| scores.passes(*l, th))
        .map(|name| ScoredLabel {
            name,
            score: scores.for_label(name),
        })
        .collect();
    Ok(HeadLabelSet {
        layer: m.layer,
        head: m.head,
        labels,
        scores,
    })
}

pub fn capture_attention<M: HookedModel + ?Sized>(prompt: &str, model: &M) -> Result<Vec<AttentionMatrix<M::Scalar>>> {
    model.attention_patterns(prompt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub prompt_id: String,
    pub heads: Vec<HeadLabelSet>,
    pub thresholds: Thresholds,
}

/// Classifies every head on the clean prompt of `pair`.
pub fn classify_pair<M: HookedModel + ?Sized>(pair: &ContrastPair, model: &M, th: &Thresholds) -> Result<HeadReport> {
    let heads = capture_attention(&pair.prompt_clean, model)?
        .iter()
        .map(|m| classify_head(m, &pair.annotations, th))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.for_pair(&pair.id))?;
    Ok(HeadReport {
        prompt_id: pair.id.clone(),
        heads,
        thresholds: *th,
    })
}

/// Per-layer mean number of heads carrying each label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCounts {
    pub n_prompts: usize,
    pub n_heads: usize,
    pub labels: Vec<HeadLabel>,
    /// `counts[layer][label index]`.
    pub counts: Vec<Vec<f64>>,
    pub thresholds: Thresholds,
}

impl HeadCounts {
    pub fn get(&self, layer: usize, label: HeadLabel) -> f64 {
        self.counts[layer][label.index()]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("layer");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l.slug());
        }
        out.push('\n');
        for (layer, row) in self.counts.iter().enumerate() {
            out.push_str(&layer.to_string());
            for c in row {
                out.push_str(&format!("\t{c:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies per-layer labeled heads from a set of reports.
pub fn tally_reports(reports: &[HeadReport], n_layers: usize, n_heads: usize, th: &Thresholds) -> HeadCounts {
    let mut counts = vec![vec![0.0; HeadLabel::ALL.len()]; n_layers];
    for r in reports {
        for h in &r.heads {
            for l in &h.labels {
                counts[h.layer][l.name.index()] += 1.0;
            }
        }
    }
    if !reports.is_empty() {
        let k = reports.len() as f64;
        counts.iter_mut().flatten().for_each(|c| *c /= k);
    }
    HeadCounts {
        n_prompts: reports.len(),
        n_heads,
        labels: HeadLabel::ALL.to_vec(),
        counts,
        thresholds: *th,
    }
}

/// Classifies all heads on each clean prompt and averages per-layer counts.
pub fn count_heads_per_layer<M: HookedModel + ?Sized>(
    pairs: &[ContrastPair],
    model: &M,
    th: &Thresholds,
) -> Result<(HeadCounts, Vec<HeadReport>)> {
    if pairs.is_empty() {
        return Err(Error::Config("head counting needs a non-empty corpus".into()));
    }
    let reports = pairs
        .par_iter()
        .map(|p| classify_pair(p, model, th))
        .collect::<Result<Vec<_>>>()?;
    let spec = model.spec();
    Ok((tally_reports(&reports, spec.n_layers, spec.n_heads, th), reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusConfig, Depth, QuotaMode, RuleCategory, VariantSet};
    use crate::model::{build_toy_model, SymbolTokenizer, ToyConfig};

    fn demorgan_pair() -> ContrastPair {
        let tok = SymbolTokenizer::corpus_default();
        let cfg = CorpusConfig {
            rules: vec![RuleCategory::DeMorgan],
            depths: vec![Depth::OneHop],
            variants: VariantSet::Canonical,
            quota: QuotaMode::Exhaustive,
            ..Default::default()
        };
        generate_corpus(&cfg, &tok).unwrap().pairs.remove(0)
    }

    fn matrix(rows: Vec<Vec<f64>>) -> AttentionMatrix<f64> {
        AttentionMatrix::from_rows(0, 0, &rows).unwrap()
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(AttentionMatrix::<f64>::new(0, 0, 2, vec![1.0, 0.0, 0.5, 0.4]).is_err());
        assert!(AttentionMatrix::<f64>::new(0, 0, 2, vec![0.5, 0.5, 0.5, 0.5]).is_err());
        assert!(AttentionMatrix::<f64>::new(0, 0, 2, vec![1.0, 0.0, 1.5, -0.5]).is_err());
        assert!(AttentionMatrix::<f64>::new(0, 0, 2, vec![1.0]).is_err());
        assert!(AttentionMatrix::<f64>::new(0, 0, 2, vec![1.0, 0.0, 0.5, 0.5]).is_ok());
    }

    #[test]
    fn idle_only() {
        let pair = demorgan_pair();
        let n = pair.len();
        let rows = (0..n).map(|_| (0..n).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect()).collect();
        let set = classify_head(&matrix(rows), &pair.annotations, &Thresholds::default()).unwrap();
        assert_eq!(set.names(), vec![HeadLabel::Idle]);
        assert_eq!(set.labels[0].score, 1.0);
    }

    #[test]
    fn identity_is_self_processing() {
        let pair = demorgan_pair();
        let n = pair.len();
        let rows = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let set = classify_head(&matrix(rows), &pair.annotations, &Thresholds::default()).unwrap();
        assert_eq!(set.names(), vec![HeadLabel::SelfProcessing]);
    }

    #[test]
    fn length_mismatch() {
        let pair = demorgan_pair();
        let m = matrix(vec![vec![1.0]]);
        assert!(matches!(
            classify_head(&m, &pair.annotations, &Thresholds::default()),
            Err(Error::AnnotationLengthMismatch { .. })
        ));
    }

    #[test]
    fn threshold_overrides() {
        let th = Thresholds::parse_overrides("split=0.7, idle=0.9").unwrap();
        assert_eq!(th.split, 0.7);
        assert_eq!(th.idle, 0.9);
        assert_eq!(th.trans, 0.4);
        assert!(Thresholds::parse_overrides("nope=1").is_err());
        assert!(Thresholds::parse_overrides("split").is_err());
    }

    #[test]
    fn toy_capture_and_counts() {
        let model = build_toy_model::<f64>(ToyConfig::default()).unwrap();
        let mats = capture_attention("A is True, B", &model).unwrap();
        assert_eq!(mats.len(), 8);
        assert!(mats.iter().all(|m| m.size() == 5));
        let pair = demorgan_pair();
        let one = count_heads_per_layer(std::slice::from_ref(&pair), &model, &Thresholds::default()).unwrap().0;
        let three = count_heads_per_layer(&vec![pair.clone(); 3], &model, &Thresholds::default()).unwrap().0;
        assert_eq!(one.counts, three.counts);
        for row in &one.counts {
            assert!(row.iter().all(|&c| (0.0..=2.0).contains(&c)));
        }
        assert!(one.to_tsv().starts_with("layer\tsplitting\t"));
    }
}
