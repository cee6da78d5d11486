//! Rule templates, annotated prompts, contrast pairs and corpus generation.

mod corpus;
mod filter;
mod io;
mod sample;
mod templates;

pub use corpus::{
    enumerate_pairs, generate_corpus, seeded_subset, Corpus, CorpusConfig, CorpusReport, GroupCount, QuotaMode,
    VariantSet, DEFAULT_QUOTAS, DEFAULT_SEED,
};
pub use filter::{filter_by_model, predicts, DepthRetention, RetentionReport};
pub use io::{read_pairs_jsonl, write_pairs_jsonl};
pub use sample::{
    annotate_tokens, instantiate_rule, make_contrast_pairs, resolve_facts, ContrastPair, FlipMode, Region, Sample,
    Segment, TokenAnnotation, TokenCategory,
};
pub use templates::{templates_for, Depth, FactKind, FactSlot, RuleCategory, RuleTemplate};
