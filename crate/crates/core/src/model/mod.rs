//! Hookable model contract: named activation sites, capture and intervention.

mod cache_io;
mod tokenizer;
mod toy;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::AttentionMatrix;
use crate::logic::ValueStyle;
use crate::scalar::{Precision, Scalar};

pub use cache_io::{load_cache, save_cache, site_list_hash, CacheKey, CacheSidecar, PromptRole};
pub use tokenizer::{answer_token_ids, AnswerTokens, SymbolTokenizer, Token, Tokenizer};
pub use toy::{build_toy_model, ToyConfig, ToyModel};

/// Static description of a model's geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub context_limit: usize,
    pub precision: Precision,
}

/// A named place in the forward pass where activations can be read or replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationSite {
    /// Residual stream entering `layer`, at one position.
    ResidPre { layer: usize, position: usize },
    /// Per-head attention output (before the output projection), all positions.
    HeadOutput { layer: usize, head: usize },
    /// Per-head attention output at a single position.
    HeadOutputAt {
        layer: usize,
        head: usize,
        position: usize,
    },
    /// MLP output at one position, before it is added to the residual stream.
    MlpOut { layer: usize, position: usize },
}

impl ActivationSite {
    pub fn layer(&self) -> usize {
        match *self {
            ActivationSite::ResidPre { layer, .. }
            | ActivationSite::HeadOutput { layer, .. }
            | ActivationSite::HeadOutputAt { layer, .. }
            | ActivationSite::MlpOut { layer, .. } => layer,
        }
    }

    /// Number of scalars stored for this site.
    pub fn width(&self, spec: &ModelSpec, seq_len: usize) -> usize {
        match self {
            ActivationSite::ResidPre { .. } | ActivationSite::MlpOut { .. } => spec.d_model,
            ActivationSite::HeadOutput { .. } => spec.d_head * seq_len,
            ActivationSite::HeadOutputAt { .. } => spec.d_head,
        }
    }

    pub fn check_bounds(&self, spec: &ModelSpec, seq_len: usize) -> Result<()> {
        let ok = match *self {
            ActivationSite::ResidPre { layer, position } | ActivationSite::MlpOut { layer, position } => {
                layer < spec.n_layers && position < seq_len
            }
            ActivationSite::HeadOutput { layer, head } => layer < spec.n_layers && head < spec.n_heads,
            ActivationSite::HeadOutputAt {
                layer,
                head,
                position,
            } => layer < spec.n_layers && head < spec.n_heads && position < seq_len,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SiteOutOfRange(format!("{self} (seq_len {seq_len})")))
        }
    }

    /// Every ResidPre site for a prompt of `seq_len` tokens.
    pub fn all_resid_pre(n_layers: usize, seq_len: usize) -> Vec<Self> {
        (0..n_layers)
            .flat_map(|layer| (0..seq_len).map(move |position| ActivationSite::ResidPre { layer, position }))
            .collect()
    }

    pub fn all_mlp_out(n_layers: usize, seq_len: usize) -> Vec<Self> {
        (0..n_layers)
            .flat_map(|layer| (0..seq_len).map(move |position| ActivationSite::MlpOut { layer, position }))
            .collect()
    }

    pub fn all_head_output(n_layers: usize, n_heads: usize) -> Vec<Self> {
        (0..n_layers)
            .flat_map(|layer| (0..n_heads).map(move |head| ActivationSite::HeadOutput { layer, head }))
            .collect()
    }
}

impl fmt::Display for ActivationSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationSite::ResidPre { layer, position } => write!(f, "resid_pre[{layer},{position}]"),
            ActivationSite::HeadOutput { layer, head } => write!(f, "head_out[{layer},{head}]"),
            ActivationSite::HeadOutputAt {
                layer,
                head,
                position,
            } => write!(f, "head_out[{layer},{head},{position}]"),
            ActivationSite::MlpOut { layer, position } => write!(f, "mlp_out[{layer},{position}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    ReplaceFromCache,
    ZeroAblate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Intervention {
    pub site: ActivationSite,
    pub mode: InterventionMode,
}

impl Intervention {
    pub fn replace(site: ActivationSite) -> Self {
        Intervention {
            site,
            mode: InterventionMode::ReplaceFromCache,
        }
    }

    pub fn zero(site: ActivationSite) -> Self {
        Intervention {
            site,
            mode: InterventionMode::ZeroAblate,
        }
    }
}

/// Activations captured during one forward pass, keyed by site.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache<S> {
    seq_len: usize,
    entries: BTreeMap<ActivationSite, Vec<S>>,
}

impl<S: Scalar> ActivationCache<S> {
    pub fn new(seq_len: usize) -> Self {
        ActivationCache {
            seq_len,
            entries: BTreeMap::new(),
        }
    }

    /// An empty cache, for runs that only zero-ablate.
    pub fn empty() -> Self {
        Self::new(0)
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn insert(&mut self, site: ActivationSite, values: Vec<S>) {
        self.entries.insert(site, values);
    }

    pub fn get(&self, site: &ActivationSite) -> Option<&[S]> {
        self.entries.get(site).map(Vec::as_slice)
    }

    /// Looks up `site`, deriving single-position head outputs from a full head entry.
    pub fn resolve(&self, site: &ActivationSite, d_head: usize) -> Option<&[S]> {
        if let Some(v) = self.get(site) {
            return Some(v);
        }
        if let ActivationSite::HeadOutputAt {
            layer,
            head,
            position,
        } = *site
        {
            let full = self.get(&ActivationSite::HeadOutput { layer, head })?;
            return full.get(position * d_head..(position + 1) * d_head);
        }
        None
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sites(&self) -> impl Iterator<Item = &ActivationSite> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ActivationSite, &[S])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().flatten().all(|x| x.is_finite())
    }
}

/// A decoder-only transformer that exposes capture and replacement hooks.
///
/// One forward pass at a time per instance; caches returned by capture are
/// immutable and may be shared across threads.
pub trait HookedModel: Send + Sync {
    type Scalar: Scalar;

    fn spec(&self) -> &ModelSpec;

    fn tokenizer(&self) -> &dyn Tokenizer;

    /// Final-position logits plus a cache holding exactly `sites`.
    fn run_with_capture(
        &self,
        prompt: &str,
        sites: &[ActivationSite],
    ) -> Result<(Vec<Self::Scalar>, ActivationCache<Self::Scalar>)>;

    /// Final-position logits with `interventions` applied before each site is consumed.
    fn run_with_intervention(
        &self,
        prompt: &str,
        interventions: &[Intervention],
        cache: &ActivationCache<Self::Scalar>,
    ) -> Result<Vec<Self::Scalar>>;

    /// Attention probabilities of every head, layer-major.
    fn attention_patterns(&self, _prompt: &str) -> Result<Vec<AttentionMatrix<Self::Scalar>>> {
        Err(Error::Unsupported("attention readout"))
    }

    fn answer_tokens(&self, style: ValueStyle) -> Result<AnswerTokens> {
        answer_token_ids(self.tokenizer(), style)
    }

    fn token_count(&self, prompt: &str) -> Result<usize> {
        Ok(self.tokenizer().encode(prompt)?.len())
    }
}
