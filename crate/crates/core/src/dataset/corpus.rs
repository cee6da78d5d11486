//! Corpus generation: exhaustive enumeration, seeded quota subsampling and reporting.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{instantiate_rule, make_contrast_pairs, ContrastPair, FlipMode};
use super::templates::{templates_for, Depth, RuleCategory};
use crate::error::{Error, Result};
use crate::logic::{enumerate_assignments, NegationStyle, RenderStyle, ValueStyle};
use crate::model::{answer_token_ids, Tokenizer};

/// Seed of the shipped default corpus.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSet {
    /// Only the first template of each category (the one shown in the rule table).
    Canonical,
    #[default]
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaMode {
    /// Built-in per-rule quota table, 74 one-hop + 296 two-hop.
    #[default]
    Default,
    /// Keep every valid pair.
    Exhaustive,
    /// Explicit quotas keyed by `"<rule>/<depth>"`, e.g. `"de_morgan/one_hop"`.
    Table(BTreeMap<String, usize>),
}

/// Per-rule quotas of the default corpus: `(rule, one-hop, two-hop)`.
pub const DEFAULT_QUOTAS: [(RuleCategory, usize, usize); 11] = [
    (RuleCategory::Identity, 8, 32),
    (RuleCategory::Domination, 0, 16),
    (RuleCategory::Idempotent, 4, 16),
    (RuleCategory::DoubleNegation, 2, 8),
    (RuleCategory::ExcludedMiddle, 0, 4),
    (RuleCategory::Contradiction, 0, 4),
    (RuleCategory::Commutative, 12, 60),
    (RuleCategory::Associative, 12, 24),
    (RuleCategory::Distributive, 16, 40),
    (RuleCategory::DeMorgan, 12, 60),
    (RuleCategory::Absorption, 8, 32),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub rules: Vec<RuleCategory>,
    pub depths: Vec<Depth>,
    pub style: ValueStyle,
    pub negation: NegationStyle,
    pub seed: u64,
    pub variants: VariantSet,
    pub quota: QuotaMode,
    pub flip: FlipMode,
    /// Optional seeded subsample of the final corpus.
    pub limit: Option<usize>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            rules: RuleCategory::ALL.to_vec(),
            depths: Depth::ALL.to_vec(),
            style: ValueStyle::Long,
            negation: NegationStyle::Glyph,
            seed: DEFAULT_SEED,
            variants: VariantSet::All,
            quota: QuotaMode::Default,
            flip: FlipMode::Single,
            limit: None,
        }
    }
}

impl CorpusConfig {
    fn quota(&self, rule: RuleCategory, depth: Depth) -> Option<usize> {
        match &self.quota {
            QuotaMode::Exhaustive => None,
            QuotaMode::Default => DEFAULT_QUOTAS.iter().find(|q| q.0 == rule).map(|q| match depth {
                Depth::OneHop => q.1,
                Depth::TwoHop => q.2,
            }),
            QuotaMode::Table(t) => t.get(&format!("{rule}/{depth}")).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub rule: RuleCategory,
    pub depth: Depth,
    /// Valid pairs before subsampling.
    pub pool: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub style: Option<ValueStyle>,
    /// Set when the requested value style had to be replaced.
    pub style_fallback: Option<String>,
    pub groups: Vec<GroupCount>,
    pub one_hop: usize,
    pub two_hop: usize,
    pub warnings: Vec<String>,
}

impl CorpusReport {
    pub fn total(&self) -> usize {
        self.one_hop + self.two_hop
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pairs: Vec<ContrastPair>,
    pub report: CorpusReport,
}

fn group_seed(seed: u64, rule: RuleCategory, depth: Depth) -> u64 {
    let r = RuleCategory::ALL.iter().position(|x| *x == rule).unwrap_or(0) as u64;
    let d = depth as u64;
    seed ^ (r * 2 + d + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Keeps `k` of `n` indices chosen by a seeded shuffle, returned ascending.
pub fn seeded_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k >= n {
        return idx;
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Every valid pair for one rule/depth in canonical order, plus warnings.
pub fn enumerate_pairs(
    rule: RuleCategory,
    depth: Depth,
    variants: VariantSet,
    style: RenderStyle,
    flip: FlipMode,
    seed: u64,
    tok: &dyn Tokenizer,
) -> Result<Vec<ContrastPair>> {
    let mut templates = templates_for(rule, depth);
    if variants == VariantSet::Canonical {
        templates.truncate(1);
    }
    let mut out = Vec::new();
    for t in &templates {
        t.validate()?;
        for a in enumerate_assignments(&t.free_vars())? {
            let clean = instantiate_rule(t, &a, style)?;
            match make_contrast_pairs(t, &clean, tok, flip, style, seed) {
                Ok(p) => out.extend(p),
                Err(Error::NoAnswerFlippingCorruption(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Builds the corpus described by `config`; output is deterministic for a fixed seed.
pub fn generate_corpus(config: &CorpusConfig, tok: &dyn Tokenizer) -> Result<Corpus> {
    let mut report = CorpusReport::default();
    let mut values = config.style;
    if let Err(Error::MultiTokenAnswer(form)) = answer_token_ids(tok, values) {
        if values == ValueStyle::Long {
            let msg = format!("value form {form:?} is not a single token; switched corpus to short style");
            warn!("{msg}");
            report.style_fallback = Some(msg);
            values = ValueStyle::Short;
            answer_token_ids(tok, values)?;
        } else {
            return Err(Error::MultiTokenAnswer(form));
        }
    }
    report.style = Some(values);
    let style = RenderStyle {
        values,
        negation: config.negation,
    };

    let mut rules = config.rules.clone();
    rules.sort();
    rules.dedup();
    let mut depths = config.depths.clone();
    depths.sort();
    depths.dedup();

    let mut pairs = Vec::new();
    for &rule in &rules {
        for &depth in &depths {
            let pool = enumerate_pairs(rule, depth, config.variants, style, config.flip, config.seed, tok)?;
            let quota = config.quota(rule, depth);
            let keep = seeded_subset(pool.len(), quota.unwrap_or(usize::MAX), group_seed(config.seed, rule, depth));
            if pool.is_empty() {
                let msg = format!("{rule} {depth}: no answer-flipping corruption exists; rule excluded from pairs");
                warn!("{msg}");
                report.warnings.push(msg);
            } else if let Some(q) = quota.filter(|q| *q > pool.len()) {
                let msg = format!("{rule} {depth}: quota {q} exceeds the {} available pairs", pool.len());
                warn!("{msg}");
                report.warnings.push(msg);
            }
            report.groups.push(GroupCount {
                rule,
                depth,
                pool: pool.len(),
                emitted: keep.len(),
            });
            match depth {
                Depth::OneHop => report.one_hop += keep.len(),
                Depth::TwoHop => report.two_hop += keep.len(),
            }
            let mut pool: Vec<Option<ContrastPair>> = pool.into_iter().map(Some).collect();
            pairs.extend(keep.into_iter().map(|i| pool[i].take().expect("indices are unique")));
        }
    }

    if let Some(limit) = config.limit {
        if limit < pairs.len() {
            let keep = seeded_subset(pairs.len(), limit, config.seed.rotate_left(17));
            let mut all: Vec<Option<ContrastPair>> = pairs.into_iter().map(Some).collect();
            pairs = keep.into_iter().map(|i| all[i].take().expect("unique")).collect();
            report.one_hop = pairs.iter().filter(|p| p.depth == Depth::OneHop).count();
            report.two_hop = pairs.iter().filter(|p| p.depth == Depth::TwoHop).count();
        }
    }
    Ok(Corpus { pairs, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SymbolTokenizer;

    #[test]
    fn default_corpus_counts() {
        let tok = SymbolTokenizer::corpus_default();
        let c = generate_corpus(&CorpusConfig::default(), &tok).unwrap();
        assert_eq!(c.pairs.len(), 370);
        assert_eq!(c.report.one_hop, 74);
        assert_eq!(c.report.two_hop, 296);
        assert!(c.report.style_fallback.is_none());
        // tautology/contradiction one-hop groups are reported
        assert_eq!(c.report.warnings.len(), 3, "{:?}", c.report.warnings);
    }

    #[test]
    fn exhaustive_canonical_demorgan() {
        let tok = SymbolTokenizer::corpus_default();
        let cfg = CorpusConfig {
            rules: vec![RuleCategory::DeMorgan],
            depths: vec![Depth::OneHop],
            variants: VariantSet::Canonical,
            quota: QuotaMode::Exhaustive,
            ..Default::default()
        };
        assert_eq!(generate_corpus(&cfg, &tok).unwrap().pairs.len(), 4);
    }

    #[test]
    fn excluded_middle_only_warns() {
        let tok = SymbolTokenizer::corpus_default();
        let cfg = CorpusConfig {
            rules: vec![RuleCategory::ExcludedMiddle],
            depths: vec![Depth::OneHop],
            quota: QuotaMode::Exhaustive,
            ..Default::default()
        };
        let c = generate_corpus(&cfg, &tok).unwrap();
        assert!(c.pairs.is_empty());
        assert_eq!(c.report.warnings.len(), 1);
        assert!(c.report.warnings[0].contains("excluded_middle"));
    }

    #[test]
    fn style_falls_back_to_short() {
        let mut pieces: Vec<String> = [" True", " Fa", "lse", " T", " F", ",", " is", " and", " or", " (", ")", "¬", " ¬"]
            .map(String::from)
            .to_vec();
        for c in 'A'..='D' {
            pieces.push(c.to_string());
            pieces.push(format!(" {c}"));
        }
        let tok = SymbolTokenizer::from_pieces(pieces);
        let cfg = CorpusConfig {
            rules: vec![RuleCategory::Identity],
            depths: vec![Depth::OneHop],
            ..Default::default()
        };
        let c = generate_corpus(&cfg, &tok).unwrap();
        assert_eq!(c.report.style, Some(ValueStyle::Short));
        assert!(c.report.style_fallback.is_some());
        assert!(c.pairs.iter().all(|p| p.value_style == ValueStyle::Short));
        assert!(c.pairs[0].prompt_clean.contains(" T") || c.pairs[0].prompt_clean.contains(" F"));
    }

    #[test]
    fn limit_subsamples_deterministically() {
        let tok = SymbolTokenizer::corpus_default();
        let cfg = CorpusConfig {
            limit: Some(8),
            ..Default::default()
        };
        let a = generate_corpus(&cfg, &tok).unwrap();
        let b = generate_corpus(&cfg, &tok).unwrap();
        assert_eq!(a.pairs.len(), 8);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.report.total(), 8);
    }

    #[test]
    fn explicit_quota_table() {
        let tok = SymbolTokenizer::corpus_default();
        let cfg = CorpusConfig {
            rules: vec![RuleCategory::Commutative],
            depths: vec![Depth::OneHop],
            quota: QuotaMode::Table([("commutative/one_hop".to_string(), 5)].into()),
            ..Default::default()
        };
        assert_eq!(generate_corpus(&cfg, &tok).unwrap().pairs.len(), 5);
    }
}
