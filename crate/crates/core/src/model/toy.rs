//! Deterministic toy decoder-only transformer with hookable sites.
//!
//! Pre-norm blocks (RMSNorm without gain), rotary position handling inside
//! attention and a GELU MLP. Because positions only enter through the rotary
//! rotation of queries and keys, `ResidPre(0, p)` is exactly the token
//! embedding at `p`.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    ActivationCache, ActivationSite, HookedModel, Intervention, InterventionMode, ModelSpec,
    SymbolTokenizer, Tokenizer,
};
use crate::error::{Error, Result};
use crate::heads::AttentionMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Hidden width of the MLP; `0` means `4 * d_model`.
    pub d_mlp: usize,
    pub context_limit: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            n_layers: 4,
            n_heads: 2,
            d_model: 16,
            d_mlp: 0,
            context_limit: 64,
        }
    }
}

impl ToyConfig {
    /// Parses `toy` or `toy:seed=1,layers=4,heads=2,d_model=16`.
    pub fn from_model_id(id: &str) -> Result<Self> {
        let mut cfg = ToyConfig::default();
        let rest = match id.strip_prefix("toy") {
            Some("") => return Ok(cfg),
            Some(rest) => rest
                .strip_prefix(':')
                .ok_or_else(|| Error::ModelUnavailable(id.to_string()))?,
            None => return Err(Error::ModelUnavailable(id.to_string())),
        };
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("toy option {kv:?} is not key=value")))?;
            let n: u64 = v
                .parse()
                .map_err(|_| Error::Config(format!("toy option {k} needs an integer, got {v:?}")))?;
            match k {
                "seed" => cfg.seed = n,
                "layers" => cfg.n_layers = n as usize,
                "heads" => cfg.n_heads = n as usize,
                "d_model" => cfg.d_model = n as usize,
                "d_mlp" => cfg.d_mlp = n as usize,
                "ctx" => cfg.context_limit = n as usize,
                other => return Err(Error::Config(format!("unknown toy option {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn model_id(&self) -> String {
        format!(
            "toy:seed={},layers={},heads={},d_model={}",
            self.seed, self.n_layers, self.n_heads, self.d_model
        )
    }
}

/// Row-major matrix applied as `y = M x`.
#[derive(Debug, Clone)]
struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                S::of(z * std)
            })
            .collect();
        Mat { rows, cols, data }
    }

    fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn apply(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

fn rms_norm<S: Scalar>(x: &[S]) -> Vec<S> {
    let n = S::of(x.len() as f64);
    let ms = x.iter().fold(S::zero(), |acc, v| acc + *v * *v) / n;
    let scale = (ms + S::of(1e-6)).sqrt().recip();
    x.iter().map(|v| *v * scale).collect()
}

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + S::of(0.044715) * x * x * x)).tanh())
}

#[derive(Debug, Clone)]
struct Block<S> {
    wq: Mat<S>,
    wk: Mat<S>,
    wv: Mat<S>,
    wo: Mat<S>,
    w_in: Mat<S>,
    w_out: Mat<S>,
}

/// Seeded toy transformer over [`SymbolTokenizer::corpus_default`].
#[derive(Debug, Clone)]
pub struct ToyModel<S> {
    config: ToyConfig,
    spec: ModelSpec,
    tokenizer: SymbolTokenizer,
    embed: Mat<S>,
    blocks: Vec<Block<S>>,
    unembed: Mat<S>,
    /// cos/sin tables indexed by `[position][pair]`.
    rope: Vec<Vec<(S, S)>>,
}

/// Builds the toy backend; identical `(seed, dims)` give identical weights in any precision.
pub fn build_toy_model<S: Scalar>(config: ToyConfig) -> Result<ToyModel<S>> {
    ToyModel::new(config)
}

impl<S: Scalar> ToyModel<S> {
    pub fn new(config: ToyConfig) -> Result<Self> {
        if config.n_layers == 0 || config.n_layers > 8 {
            return Err(Error::Config(format!("toy model supports 1..=8 layers, got {}", config.n_layers)));
        }
        if config.n_heads == 0 || !config.d_model.is_multiple_of(config.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                config.d_model, config.n_heads
            )));
        }
        let d_head = config.d_model / config.n_heads;
        if !d_head.is_multiple_of(2) {
            return Err(Error::Config(format!("rotary attention needs an even head width, got {d_head}")));
        }
        let d = config.d_model;
        let d_mlp = if config.d_mlp == 0 { 4 * d } else { config.d_mlp };
        let tokenizer = SymbolTokenizer::corpus_default();
        let vocab = tokenizer.vocab_size();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let embed = Mat::random(&mut rng, vocab, d, 1.0);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                wq: Mat::random(&mut rng, d, d, inv_sqrt_d),
                wk: Mat::random(&mut rng, d, d, inv_sqrt_d),
                wv: Mat::random(&mut rng, d, d, inv_sqrt_d),
                wo: Mat::random(&mut rng, d, d, inv_sqrt_d),
                w_in: Mat::random(&mut rng, d_mlp, d, inv_sqrt_d),
                w_out: Mat::random(&mut rng, d, d_mlp, 1.0 / (d_mlp as f64).sqrt()),
            })
            .collect();
        let unembed = Mat::random(&mut rng, vocab, d, inv_sqrt_d);

        let rope = (0..config.context_limit)
            .map(|p| {
                (0..d_head / 2)
                    .map(|i| {
                        let theta = p as f64 * 10000f64.powf(-2.0 * i as f64 / d_head as f64);
                        (S::of(theta.cos()), S::of(theta.sin()))
                    })
                    .collect()
            })
            .collect();

        let spec = ModelSpec {
            model_id: config.model_id(),
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            d_model: d,
            d_head,
            vocab_size: vocab,
            context_limit: config.context_limit,
            precision: S::PRECISION,
        };
        Ok(ToyModel {
            config,
            spec,
            tokenizer,
            embed,
            blocks,
            unembed,
            rope,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn encode(&self, prompt: &str) -> Result<Vec<u32>> {
        let ids: Vec<u32> = self.tokenizer.encode(prompt)?.iter().map(|t| t.id).collect();
        if ids.is_empty() {
            return Err(Error::Tokenization {
                offset: 0,
                piece: prompt.to_string(),
            });
        }
        if ids.len() > self.spec.context_limit {
            return Err(Error::Config(format!(
                "prompt of {} tokens exceeds the context limit {}",
                ids.len(),
                self.spec.context_limit
            )));
        }
        Ok(ids)
    }

    fn rotate(&self, v: &mut [S], position: usize) {
        for (i, (cos, sin)) in self.rope[position].iter().enumerate() {
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = a * *cos - b * *sin;
            v[2 * i + 1] = a * *sin + b * *cos;
        }
    }

    fn check_interventions(
        &self,
        interventions: &[Intervention],
        cache: &ActivationCache<S>,
        seq_len: usize,
    ) -> Result<()> {
        for iv in interventions {
            iv.site.check_bounds(&self.spec, seq_len)?;
            if iv.mode == InterventionMode::ReplaceFromCache {
                let values = cache
                    .resolve(&iv.site, self.spec.d_head)
                    .ok_or_else(|| Error::MissingCacheEntry(iv.site.to_string()))?;
                let expected = iv.site.width(&self.spec, seq_len);
                if values.len() != expected {
                    return Err(Error::ShapeMismatch {
                        site: iv.site.to_string(),
                        expected,
                        found: values.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Full forward pass. `capture` and `interventions` are optional hooks.
    fn forward(
        &self,
        ids: &[u32],
        capture: &BTreeSet<ActivationSite>,
        interventions: &[Intervention],
        source: &ActivationCache<S>,
        mut attention: Option<&mut Vec<AttentionMatrix<S>>>,
    ) -> (Vec<S>, ActivationCache<S>) {
        let n = ids.len();
        let d = self.spec.d_model;
        let dh = self.spec.d_head;
        let mut out = ActivationCache::new(n);

        let mut by_layer: HashMap<usize, Vec<&Intervention>> = HashMap::new();
        for iv in interventions {
            by_layer.entry(iv.site.layer()).or_default().push(iv);
        }
        let patch = |iv: &Intervention, dst: &mut [S]| match iv.mode {
            InterventionMode::ZeroAblate => dst.iter_mut().for_each(|x| *x = S::zero()),
            InterventionMode::ReplaceFromCache => {
                let src = source.resolve(&iv.site, dh).expect("validated before the forward pass");
                dst.copy_from_slice(src);
            }
        };

        let mut resid: Vec<Vec<S>> = ids.iter().map(|&t| self.embed.row(t as usize).to_vec()).collect();

        for (l, block) in self.blocks.iter().enumerate() {
            let hooks = by_layer.get(&l).map(Vec::as_slice).unwrap_or(&[]);

            for iv in hooks {
                if let ActivationSite::ResidPre { position, .. } = iv.site {
                    patch(iv, &mut resid[position]);
                }
            }
            for p in 0..n {
                let site = ActivationSite::ResidPre { layer: l, position: p };
                if capture.contains(&site) {
                    out.insert(site, resid[p].clone());
                }
            }

            let normed: Vec<Vec<S>> = resid.iter().map(|x| rms_norm(x)).collect();
            let mut q: Vec<Vec<S>> = normed.iter().map(|x| block.wq.apply(x)).collect();
            let mut k: Vec<Vec<S>> = normed.iter().map(|x| block.wk.apply(x)).collect();
            let v: Vec<Vec<S>> = normed.iter().map(|x| block.wv.apply(x)).collect();
            for p in 0..n {
                for h in 0..self.spec.n_heads {
                    self.rotate(&mut q[p][h * dh..(h + 1) * dh], p);
                    self.rotate(&mut k[p][h * dh..(h + 1) * dh], p);
                }
            }

            let scale = S::of(1.0 / (dh as f64).sqrt());
            // z[h] is position-major, n * dh
            let mut z: Vec<Vec<S>> = vec![vec![S::zero(); n * dh]; self.spec.n_heads];
            for (h, zh) in z.iter_mut().enumerate() {
                let cols = h * dh..(h + 1) * dh;
                let mut pattern = vec![S::zero(); n * n];
                for i in 0..n {
                    let scores: Vec<S> = (0..=i).map(|j| dot(&q[i][cols.clone()], &k[j][cols.clone()]) * scale).collect();
                    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
                    let exps: Vec<S> = scores.iter().map(|s| (*s - max).exp()).collect();
                    let total: S = exps.iter().copied().sum();
                    for (j, e) in exps.iter().enumerate() {
                        let w = *e / total;
                        pattern[i * n + j] = w;
                        for c in 0..dh {
                            zh[i * dh + c] = zh[i * dh + c] + w * v[j][h * dh + c];
                        }
                    }
                }
                if let Some(acc) = attention.as_deref_mut() {
                    acc.push(AttentionMatrix::new(l, h, n, pattern).expect("softmax rows are stochastic"));
                }
            }

            for iv in hooks {
                match iv.site {
                    ActivationSite::HeadOutput { head, .. } => patch(iv, &mut z[head]),
                    ActivationSite::HeadOutputAt { head, position, .. } => {
                        patch(iv, &mut z[head][position * dh..(position + 1) * dh])
                    }
                    _ => {}
                }
            }
            for (h, zh) in z.iter().enumerate() {
                let site = ActivationSite::HeadOutput { layer: l, head: h };
                if capture.contains(&site) {
                    out.insert(site, zh.clone());
                }
                for p in 0..n {
                    let site = ActivationSite::HeadOutputAt {
                        layer: l,
                        head: h,
                        position: p,
                    };
                    if capture.contains(&site) {
                        out.insert(site, zh[p * dh..(p + 1) * dh].to_vec());
                    }
                }
            }

            for (p, x) in resid.iter_mut().enumerate() {
                let concat: Vec<S> = (0..self.spec.n_heads)
                    .flat_map(|h| z[h][p * dh..(p + 1) * dh].iter().copied())
                    .collect();
                let attn_out = block.wo.apply(&concat);
                for c in 0..d {
                    x[c] = x[c] + attn_out[c];
                }
            }

            for (p, x) in resid.iter_mut().enumerate() {
                let hidden: Vec<S> = block.w_in.apply(&rms_norm(x)).into_iter().map(gelu).collect();
                let mut mlp = block.w_out.apply(&hidden);
                let site = ActivationSite::MlpOut { layer: l, position: p };
                for iv in hooks.iter().filter(|iv| iv.site == site) {
                    patch(iv, &mut mlp);
                }
                if capture.contains(&site) {
                    out.insert(site, mlp.clone());
                }
                for c in 0..d {
                    x[c] = x[c] + mlp[c];
                }
            }
        }

        let last = rms_norm(&resid[n - 1]);
        (self.unembed.apply(&last), out)
    }
}

impl<S: Scalar> HookedModel for ToyModel<S> {
    type Scalar = S;

    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn run_with_capture(&self, prompt: &str, sites: &[ActivationSite]) -> Result<(Vec<S>, ActivationCache<S>)> {
        let ids = self.encode(prompt)?;
        for s in sites {
            s.check_bounds(&self.spec, ids.len())?;
        }
        let wanted: BTreeSet<ActivationSite> = sites.iter().copied().collect();
        Ok(self.forward(&ids, &wanted, &[], &ActivationCache::empty(), None))
    }

    fn run_with_intervention(
        &self,
        prompt: &str,
        interventions: &[Intervention],
        cache: &ActivationCache<S>,
    ) -> Result<Vec<S>> {
        let ids = self.encode(prompt)?;
        self.check_interventions(interventions, cache, ids.len())?;
        Ok(self.forward(&ids, &BTreeSet::new(), interventions, cache, None).0)
    }

    fn attention_patterns(&self, prompt: &str) -> Result<Vec<AttentionMatrix<S>>> {
        let ids = self.encode(prompt)?;
        let mut patterns = Vec::with_capacity(self.spec.n_layers * self.spec.n_heads);
        self.forward(&ids, &BTreeSet::new(), &[], &ActivationCache::empty(), Some(&mut patterns));
        Ok(patterns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROMPT: &str = "A is True, B is False, (¬A or ¬B) is";
    const CORRUPT: &str = "A is True, B is True, (¬A or ¬B) is";

    fn toy() -> ToyModel<f64> {
        build_toy_model(ToyConfig::default()).unwrap()
    }

    #[test]
    fn capture_shapes() {
        let m = toy();
        let n = m.token_count(PROMPT).unwrap();
        let sites = ActivationSite::all_resid_pre(4, n);
        let (logits, cache) = m.run_with_capture(PROMPT, &sites).unwrap();
        assert_eq!(logits.len(), m.spec().vocab_size);
        assert_eq!(cache.len(), 4 * n);
        assert!(cache.iter().all(|(_, v)| v.len() == 16));
        assert!(cache.all_finite());

        let (_, empty) = m.run_with_capture(PROMPT, &[]).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn resid_pre_zero_is_embedding() {
        let m = toy();
        let (_, cache) = m
            .run_with_capture(PROMPT, &[ActivationSite::ResidPre { layer: 0, position: 2 }])
            .unwrap();
        let id = m.tokenizer.id_of(" True").unwrap();
        assert_eq!(cache.get(&ActivationSite::ResidPre { layer: 0, position: 2 }).unwrap(), m.embed.row(id as usize));
    }

    #[test]
    fn deterministic_and_noop() {
        let m = toy();
        let (a, _) = m.run_with_capture(PROMPT, &[]).unwrap();
        let (b, _) = toy().run_with_capture(PROMPT, &[]).unwrap();
        assert_eq!(a, b);
        let c = m.run_with_intervention(PROMPT, &[], &ActivationCache::empty()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn seeds_differ() {
        let other: ToyModel<f64> = build_toy_model(ToyConfig {
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        let (a, _) = toy().run_with_capture(PROMPT, &[]).unwrap();
        let (b, _) = other.run_with_capture(PROMPT, &[]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn exact_restoration_at_layer_zero() {
        let m = toy();
        let site = ActivationSite::ResidPre { layer: 0, position: 6 };
        let (clean, cache) = m.run_with_capture(PROMPT, &[site]).unwrap();
        let patched = m.run_with_intervention(CORRUPT, &[Intervention::replace(site)], &cache).unwrap();
        for (x, y) in clean.iter().zip(&patched) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_ablating_a_layer_is_finite() {
        let m = toy();
        let n = m.token_count(PROMPT).unwrap();
        let ivs: Vec<_> = (0..n)
            .map(|p| Intervention::zero(ActivationSite::MlpOut { layer: 1, position: p }))
            .collect();
        let logits = m.run_with_intervention(PROMPT, &ivs, &ActivationCache::empty()).unwrap();
        assert!(logits.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn intervention_errors() {
        let m = toy();
        let site = ActivationSite::MlpOut { layer: 0, position: 1 };
        let missing = m.run_with_intervention(PROMPT, &[Intervention::replace(site)], &ActivationCache::empty());
        assert!(matches!(missing, Err(Error::MissingCacheEntry(_))));

        let oob = ActivationSite::ResidPre { layer: 9, position: 0 };
        assert!(matches!(m.run_with_capture(PROMPT, &[oob]), Err(Error::SiteOutOfRange(_))));

        let head = ActivationSite::HeadOutput { layer: 0, head: 0 };
        let (_, short_cache) = m.run_with_capture("A is True, A is", &[head]).unwrap();
        let res = m.run_with_intervention(PROMPT, &[Intervention::replace(head)], &short_cache);
        assert!(matches!(res, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let m = toy();
        let pats = m.attention_patterns("A is True, B").unwrap();
        assert_eq!(pats.len(), 8);
        for p in &pats {
            assert_eq!(p.size(), 5);
        }
        assert_eq!(pats, m.attention_patterns("A is True, B").unwrap());
    }

    #[test]
    fn f32_and_f64_agree_roughly() {
        let m32: ToyModel<f32> = build_toy_model(ToyConfig::default()).unwrap();
        let (a, _) = m32.run_with_capture(PROMPT, &[]).unwrap();
        let (b, _) = toy().run_with_capture(PROMPT, &[]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((f64::from(*x) - y).abs() < 1e-3);
        }
    }

    #[test]
    fn model_id_parsing() {
        let cfg = ToyConfig::from_model_id("toy:seed=3,layers=2,heads=4,d_model=16").unwrap();
        assert_eq!((cfg.seed, cfg.n_layers, cfg.n_heads), (3, 2, 4));
        assert_eq!(ToyConfig::from_model_id("toy").unwrap(), ToyConfig::default());
        assert!(matches!(ToyConfig::from_model_id("Qwen/Qwen3-8B"), Err(Error::ModelUnavailable(_))));
        assert!(ToyConfig::from_model_id("toy:depth=3").is_err());
    }
}
