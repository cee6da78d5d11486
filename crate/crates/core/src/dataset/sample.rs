//! Prompt instantiation, token annotation and contrast-pair construction.

use serde::{Deserialize, Serialize};

use super::templates::{Depth, FactKind, RuleCategory, RuleTemplate};
use crate::error::{Error, Result};
use crate::logic::{eval_expr, render_value, Assignment, ExprPiece, PieceKind, RenderStyle, ValueStyle};
use crate::logic::render::expr_pieces;
use crate::model::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    FactsRegion,
    ExpressionRegion,
    QueryToken,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::FactsRegion, Region::ExpressionRegion, Region::QueryToken];

    pub fn slug(self) -> &'static str {
        match self {
            Region::FactsRegion => "facts",
            Region::ExpressionRegion => "expression",
            Region::QueryToken => "query",
        }
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "facts" | "facts_region" => Ok(Region::FactsRegion),
            "expression" | "expr" | "expression_region" => Ok(Region::ExpressionRegion),
            "query" | "query_token" => Ok(Region::QueryToken),
            other => Err(Error::Config(format!("unknown region {other:?}"))),
        }
    }
}

/// Token role within the prompt.
///
/// Constants inside expressions are labeled `expr_var` (operands). Tokens of a
/// derived fact's defining expression carry `expr_*` labels but sit in the
/// facts region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCategory {
    FactsVar,
    FactsIs,
    FactsValue,
    Delimiter,
    ExprOpen,
    ExprNeg,
    ExprVar,
    ExprOp,
    ExprClose,
    ExprLast,
    QueryToken,
    Other,
}

impl TokenCategory {
    pub const ALL: [TokenCategory; 12] = [
        TokenCategory::FactsVar,
        TokenCategory::FactsIs,
        TokenCategory::FactsValue,
        TokenCategory::Delimiter,
        TokenCategory::ExprOpen,
        TokenCategory::ExprNeg,
        TokenCategory::ExprVar,
        TokenCategory::ExprOp,
        TokenCategory::ExprClose,
        TokenCategory::ExprLast,
        TokenCategory::QueryToken,
        TokenCategory::Other,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            TokenCategory::FactsVar => "facts_var",
            TokenCategory::FactsIs => "facts_is",
            TokenCategory::FactsValue => "facts_value",
            TokenCategory::Delimiter => "delimiter",
            TokenCategory::ExprOpen => "expr_open",
            TokenCategory::ExprNeg => "expr_neg",
            TokenCategory::ExprVar => "expr_var",
            TokenCategory::ExprOp => "expr_op",
            TokenCategory::ExprClose => "expr_close",
            TokenCategory::ExprLast => "expr_last",
            TokenCategory::QueryToken => "query_token",
            TokenCategory::Other => "other",
        }
    }

    pub fn is_fact(self) -> bool {
        matches!(
            self,
            TokenCategory::FactsVar | TokenCategory::FactsIs | TokenCategory::FactsValue
        )
    }
}

impl std::fmt::Display for TokenCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub position: usize,
    pub region: Region,
    pub category: TokenCategory,
}

/// A semantically labeled span of the rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub region: Region,
    pub category: TokenCategory,
}

/// One instantiated prompt with its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub category: RuleCategory,
    pub depth: Depth,
    pub variant: usize,
    /// Values of the free facts.
    pub assignment: Assignment,
    pub prompt: String,
    pub answer: bool,
    pub style: ValueStyle,
    pub segments: Vec<Segment>,
}

struct PromptBuilder {
    text: String,
    segments: Vec<Segment>,
}

impl PromptBuilder {
    fn push(&mut self, piece: &str, space: bool, region: Region, category: TokenCategory) {
        if space {
            self.text.push(' ');
        }
        let start = self.text.len();
        self.text.push_str(piece);
        self.segments.push(Segment {
            start,
            end: self.text.len(),
            region,
            category,
        });
    }

    fn push_expr(&mut self, pieces: &[ExprPiece], region: Region, last_is_terminal: bool) {
        for (i, p) in pieces.iter().enumerate() {
            let category = if last_is_terminal && i + 1 == pieces.len() {
                TokenCategory::ExprLast
            } else {
                match p.kind {
                    PieceKind::Open => TokenCategory::ExprOpen,
                    PieceKind::Close => TokenCategory::ExprClose,
                    PieceKind::Neg => TokenCategory::ExprNeg,
                    PieceKind::Var | PieceKind::Const => TokenCategory::ExprVar,
                    PieceKind::Op => TokenCategory::ExprOp,
                }
            };
            // the first piece always follows a clause separator
            self.push(p.text, i == 0 || p.space_before, region, category);
        }
    }
}

/// Fully resolved assignment: free facts from `a`, derived facts evaluated in clause order.
pub fn resolve_facts(t: &RuleTemplate, a: &Assignment) -> Result<Assignment> {
    let mut full = Assignment::new();
    for slot in &t.facts {
        let value = match &slot.kind {
            FactKind::Free => a.get(slot.var).ok_or(Error::UnboundVariable(slot.var))?,
            FactKind::Derived(e) => eval_expr(e, &full)?,
        };
        full.set(slot.var, value);
    }
    Ok(full)
}

/// Renders the prompt for `t` under `a` and computes its answer by chaining.
pub fn instantiate_rule(t: &RuleTemplate, a: &Assignment, style: RenderStyle) -> Result<Sample> {
    let full = resolve_facts(t, a)?;
    let answer = eval_expr(&t.query, &full)?;

    let mut b = PromptBuilder {
        text: String::new(),
        segments: Vec::new(),
    };
    let facts = Region::FactsRegion;
    for (i, slot) in t.facts.iter().enumerate() {
        b.push(crate::logic::render::var_text(slot.var), i > 0, facts, TokenCategory::FactsVar);
        b.push("is", true, facts, TokenCategory::FactsIs);
        match &slot.kind {
            FactKind::Free => {
                let v = full.get(slot.var).expect("resolved");
                b.push(render_value(v, style.values), true, facts, TokenCategory::FactsValue);
            }
            FactKind::Derived(e) => b.push_expr(&expr_pieces(e, style, false), facts, false),
        }
        b.push(",", false, facts, TokenCategory::Delimiter);
    }
    b.push_expr(
        &expr_pieces(&t.query, style, t.query_parens),
        Region::ExpressionRegion,
        true,
    );
    b.push("is", true, Region::QueryToken, TokenCategory::QueryToken);

    let free: Assignment = t.free_vars().into_iter().map(|v| (v, full.get(v).expect("resolved"))).collect();
    Ok(Sample {
        id: format!("{}-{}-v{}-{}", t.category.slug(), t.depth.short(), t.variant, free.code()),
        category: t.category,
        depth: t.depth,
        variant: t.variant,
        assignment: free,
        prompt: b.text,
        answer,
        style: style.values,
        segments: b.segments,
    })
}

/// Labels every token of `s.prompt` with its region and category.
pub fn annotate_tokens(s: &Sample, tok: &dyn Tokenizer) -> Result<Vec<TokenAnnotation>> {
    let tokens = tok.encode(&s.prompt)?;
    if tokens.len() < 3 {
        return Err(Error::AnnotationAmbiguous(format!("{}: fewer than 3 tokens", s.id)));
    }
    let bytes = s.prompt.as_bytes();
    let mut per_segment = vec![0usize; s.segments.len()];
    let mut out = Vec::with_capacity(tokens.len());
    for (position, t) in tokens.iter().enumerate() {
        let mut start = t.start;
        while start < t.end && bytes[start] == b' ' {
            start += 1;
        }
        let owner = s
            .segments
            .iter()
            .position(|seg| seg.start <= start && t.end <= seg.end && start < t.end)
            .ok_or_else(|| {
                Error::AnnotationAmbiguous(format!(
                    "{}: token {:?} at {position} straddles prompt segments",
                    s.id,
                    &s.prompt[t.start..t.end]
                ))
            })?;
        per_segment[owner] += 1;
        let seg = &s.segments[owner];
        out.push(TokenAnnotation {
            position,
            region: seg.region,
            category: seg.category,
        });
    }
    for (seg, n) in s.segments.iter().zip(&per_segment) {
        let single = matches!(
            seg.category,
            TokenCategory::FactsValue | TokenCategory::QueryToken | TokenCategory::ExprLast
        );
        if single && *n != 1 {
            return Err(Error::AnnotationAmbiguous(format!(
                "{}: {} {:?} spans {n} tokens",
                s.id,
                seg.category,
                &s.prompt[seg.start..seg.end]
            )));
        }
    }
    Ok(out)
}

/// Which fact subsets are flipped when building corruptions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMode {
    #[default]
    Single,
    /// Every non-empty subset of free facts.
    Multi,
}

/// Aligned clean/corrupt prompt pair; serialized one per line in dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastPair {
    pub id: String,
    pub rule: RuleCategory,
    pub depth: Depth,
    pub prompt_clean: String,
    pub prompt_corrupt: String,
    pub answer_clean: bool,
    pub answer_corrupt: bool,
    /// Indices into the template's fact clauses.
    pub corrupted_fact_indices: Vec<usize>,
    pub value_style: ValueStyle,
    pub annotations: Vec<TokenAnnotation>,
    pub seed: u64,
}

impl ContrastPair {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Positions of a given category, ascending.
    pub fn positions_of(&self, category: TokenCategory) -> Vec<usize> {
        self.annotations
            .iter()
            .filter(|a| a.category == category)
            .map(|a| a.position)
            .collect()
    }

    pub fn positions_in(&self, region: Region) -> Vec<usize> {
        self.annotations
            .iter()
            .filter(|a| a.region == region)
            .map(|a| a.position)
            .collect()
    }
}

fn flip_sets(n: usize, mode: FlipMode) -> Vec<Vec<usize>> {
    match mode {
        FlipMode::Single => (0..n).map(|i| vec![i]).collect(),
        FlipMode::Multi => (1..1usize << n)
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect::<Vec<_>>())
            .collect(),
    }
}

/// All answer-flipping corruptions of `clean`, with alignment checks.
pub fn make_contrast_pairs(
    t: &RuleTemplate,
    clean: &Sample,
    tok: &dyn Tokenizer,
    mode: FlipMode,
    style: RenderStyle,
    seed: u64,
) -> Result<Vec<ContrastPair>> {
    let free_idx = t.free_fact_indices();
    let clean_ann = annotate_tokens(clean, tok)?;
    let clean_ids: Vec<u32> = tok.encode(&clean.prompt)?.iter().map(|x| x.id).collect();
    let mut out = Vec::new();
    for set in flip_sets(free_idx.len(), mode) {
        let mut a = clean.assignment.clone();
        for &k in &set {
            let var = t.facts[free_idx[k]].var;
            a.set(var, !a.get(var).expect("free fact bound"));
        }
        let corrupt = instantiate_rule(t, &a, style)?;
        if corrupt.answer == clean.answer {
            continue;
        }
        let fact_indices: Vec<usize> = set.iter().map(|&k| free_idx[k]).collect();
        let id = format!(
            "{}-x{}",
            clean.id,
            fact_indices.iter().map(ToString::to_string).collect::<Vec<_>>().join("")
        );
        let corrupt_ids: Vec<u32> = tok.encode(&corrupt.prompt)?.iter().map(|x| x.id).collect();
        if corrupt_ids.len() != clean_ids.len() {
            return Err(Error::TokenizationMisaligned {
                pair: id,
                clean: clean_ids.len(),
                corrupt: corrupt_ids.len(),
            });
        }
        let corrupt_ann = annotate_tokens(&corrupt, tok)?;
        if corrupt_ann != clean_ann {
            return Err(Error::AnnotationAmbiguous(format!("{id}: clean and corrupt annotations differ")));
        }
        let differing: Vec<usize> = (0..clean_ids.len()).filter(|&i| clean_ids[i] != corrupt_ids[i]).collect();
        if differing.len() != set.len()
            || differing
                .iter()
                .any(|&p| clean_ann[p].category != TokenCategory::FactsValue)
        {
            return Err(Error::AnnotationAmbiguous(format!(
                "{id}: flipped facts differ at positions {differing:?}"
            )));
        }
        out.push(ContrastPair {
            id,
            rule: t.category,
            depth: t.depth,
            prompt_clean: clean.prompt.clone(),
            prompt_corrupt: corrupt.prompt,
            answer_clean: clean.answer,
            answer_corrupt: corrupt.answer,
            corrupted_fact_indices: fact_indices,
            value_style: style.values,
            annotations: clean_ann.clone(),
            seed,
        });
    }
    if out.is_empty() {
        return Err(Error::NoAnswerFlippingCorruption(clean.id.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::templates::templates_for;
    use crate::model::SymbolTokenizer;

    fn demorgan() -> RuleTemplate {
        templates_for(RuleCategory::DeMorgan, Depth::OneHop).remove(0)
    }

    #[test]
    fn instantiates_table_examples() {
        let a = Assignment::new().with('A', true).with('B', false);
        let s = instantiate_rule(&demorgan(), &a, RenderStyle::default()).unwrap();
        assert_eq!(s.prompt, "A is True, B is False, (¬A or ¬B) is");
        assert!(s.answer);

        let ident = templates_for(RuleCategory::Identity, Depth::OneHop).remove(0);
        let s = instantiate_rule(
            &ident,
            &Assignment::new().with('A', true),
            RenderStyle::with_values(ValueStyle::Short),
        )
        .unwrap();
        assert_eq!(s.prompt, "A is T, A and T is");
        assert!(s.answer);

        let two = templates_for(RuleCategory::Identity, Depth::TwoHop).remove(0);
        let s = instantiate_rule(
            &two,
            &Assignment::new().with('A', true).with('C', false),
            RenderStyle::with_values(ValueStyle::Short),
        )
        .unwrap();
        assert_eq!(s.prompt, "A is T, B is A and T, C is F, B and C is");
        assert!(!s.answer);
    }

    #[test]
    fn two_hop_table_chains() {
        let dm = &templates_for(RuleCategory::DeMorgan, Depth::TwoHop)[1];
        let a = Assignment::new().with('A', true).with('B', false).with('D', true);
        let s = instantiate_rule(dm, &a, RenderStyle::with_values(ValueStyle::Short)).unwrap();
        assert_eq!(s.prompt, "A is T, B is F, C is ¬(A and B), D is T, C or D is");
        assert!(s.answer);

        let comm = &templates_for(RuleCategory::Commutative, Depth::TwoHop)[1];
        let s = instantiate_rule(comm, &a, RenderStyle::with_values(ValueStyle::Short)).unwrap();
        assert_eq!(s.prompt, "A is T, B is F, C is A and B, D is T, C or D is");
        assert!(s.answer);
    }

    #[test]
    fn unbound_free_fact() {
        let err = instantiate_rule(&demorgan(), &Assignment::new().with('A', true), RenderStyle::default());
        assert!(matches!(err, Err(Error::UnboundVariable('B'))));
    }

    #[test]
    fn annotations_of_demorgan_prompt() {
        let tok = SymbolTokenizer::corpus_default();
        let a = Assignment::new().with('A', true).with('B', false);
        let s = instantiate_rule(&demorgan(), &a, RenderStyle::default()).unwrap();
        let ann = annotate_tokens(&s, &tok).unwrap();
        use TokenCategory::*;
        let cats: Vec<TokenCategory> = ann.iter().map(|a| a.category).collect();
        assert_eq!(
            cats,
            [
                FactsVar, FactsIs, FactsValue, Delimiter, FactsVar, FactsIs, FactsValue, Delimiter, ExprOpen,
                ExprNeg, ExprVar, ExprOp, ExprNeg, ExprVar, ExprLast, QueryToken
            ]
        );
        assert_eq!(ann[2].region, Region::FactsRegion);
        assert_eq!(ann[14].region, Region::ExpressionRegion);
        assert_eq!(ann[15].region, Region::QueryToken);
        assert_eq!(ann.iter().filter(|a| a.category == QueryToken).count(), 1);
    }

    #[test]
    fn split_value_word_is_ambiguous() {
        let mut pieces: Vec<String> = vec![" Tr".into(), "ue".into()];
        pieces.extend(["A", " is", ",", " (", "¬", "A", " or", " ¬", "B", ")", " B", " False"].map(String::from));
        let tok = SymbolTokenizer::from_pieces(pieces);
        let a = Assignment::new().with('A', true).with('B', false);
        let s = instantiate_rule(&demorgan(), &a, RenderStyle::default()).unwrap();
        assert!(matches!(annotate_tokens(&s, &tok), Err(Error::AnnotationAmbiguous(_))));
    }

    #[test]
    fn demorgan_pairs_from_tt() {
        let tok = SymbolTokenizer::corpus_default();
        let t = demorgan();
        let s = instantiate_rule(&t, &Assignment::new().with('A', true).with('B', true), RenderStyle::default())
            .unwrap();
        let pairs = make_contrast_pairs(&t, &s, &tok, FlipMode::Single, RenderStyle::default(), 0).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].prompt_corrupt, "A is True, B is False, (¬A or ¬B) is");

        // the figure pair: clean A=T,B=F, corrupt A=T,B=T
        let s = instantiate_rule(&t, &Assignment::new().with('A', true).with('B', false), RenderStyle::default())
            .unwrap();
        let pairs = make_contrast_pairs(&t, &s, &tok, FlipMode::Single, RenderStyle::default(), 0).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].prompt_corrupt, "A is True, B is True, (¬A or ¬B) is");
        assert!(!pairs[0].answer_corrupt);
        assert_eq!(pairs[0].corrupted_fact_indices, vec![1]);
    }

    #[test]
    fn tautology_has_no_pairs() {
        let tok = SymbolTokenizer::corpus_default();
        let t = templates_for(RuleCategory::ExcludedMiddle, Depth::OneHop).remove(0);
        for v in [true, false] {
            let s = instantiate_rule(&t, &Assignment::new().with('A', v), RenderStyle::default()).unwrap();
            let r = make_contrast_pairs(&t, &s, &tok, FlipMode::Single, RenderStyle::default(), 0);
            assert!(matches!(r, Err(Error::NoAnswerFlippingCorruption(_))));
        }
    }

    #[test]
    fn misaligned_tokenization_is_reported() {
        // " False" splits into two pieces while " True" is whole
        let mut pieces: Vec<String> = [" True", " Fal", "se", "A", " is", ",", " and"].map(String::from).to_vec();
        pieces.push(" A".into());
        let tok = SymbolTokenizer::from_pieces(pieces);
        let t = templates_for(RuleCategory::Identity, Depth::OneHop).remove(0);
        let s = instantiate_rule(&t, &Assignment::new().with('A', true), RenderStyle::default()).unwrap();
        let r = make_contrast_pairs(&t, &s, &tok, FlipMode::Single, RenderStyle::default(), 0);
        assert!(matches!(r, Err(Error::TokenizationMisaligned { .. })), "{r:?}");
    }

    #[test]
    fn multi_flip_pairs() {
        let tok = SymbolTokenizer::corpus_default();
        let t = demorgan();
        let s = instantiate_rule(&t, &Assignment::new().with('A', true).with('B', false), RenderStyle::default())
            .unwrap();
        let pairs = make_contrast_pairs(&t, &s, &tok, FlipMode::Multi, RenderStyle::default(), 0).unwrap();
        // TF -> TT flips the answer; TF -> FF and TF -> FT do not
        assert_eq!(pairs.len(), 1);
        let s = instantiate_rule(&t, &Assignment::new().with('A', true).with('B', true), RenderStyle::default())
            .unwrap();
        let pairs = make_contrast_pairs(&t, &s, &tok, FlipMode::Multi, RenderStyle::default(), 0).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].corrupted_fact_indices, vec![0, 1]);
    }

    #[test]
    fn derived_fact_tokens_stay_in_facts_region() {
        let tok = SymbolTokenizer::corpus_default();
        let t = templates_for(RuleCategory::Identity, Depth::TwoHop).remove(0);
        let s = instantiate_rule(&t, &Assignment::new().with('A', true).with('C', false), RenderStyle::default())
            .unwrap();
        let ann = annotate_tokens(&s, &tok).unwrap();
        // "A is True, B is A and True, C is False, B and C is"
        assert_eq!(ann[6].category, TokenCategory::ExprVar);
        assert_eq!(ann[6].region, Region::FactsRegion);
        let values: Vec<usize> = ann.iter().filter(|a| a.category == TokenCategory::FactsValue).map(|a| a.position).collect();
        assert_eq!(values, vec![2, 12]);
    }
}
