//! Three-pass activation patching: clean capture, corrupt baseline, patched runs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ContrastPair, Region};
use crate::error::{Error, Result};
use crate::model::{ActivationCache, ActivationSite, AnswerTokens, HookedModel, Intervention, InterventionMode};
use crate::scalar::{Precision, Scalar};

/// Guard below which a baseline logit difference is treated as zero in ratios.
pub const RATIO_EPSILON: f64 = 1e-6;

/// `logits[clean answer] - logits[corrupt answer]`.
///
/// Panics if either answer id lies outside `logits`.
pub fn logit_difference<S: Scalar>(logits: &[S], answers: &AnswerTokens, clean_answer: bool) -> S {
    logits[answers.id_for(clean_answer) as usize] - logits[answers.id_for(!clean_answer) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Resid,
    Head,
    Mlp,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Resid => "resid",
            Granularity::Head => "head",
            Granularity::Mlp => "mlp",
        }
    }

    pub fn sites(self, n_layers: usize, n_heads: usize, seq_len: usize) -> Vec<ActivationSite> {
        match self {
            Granularity::Resid => ActivationSite::all_resid_pre(n_layers, seq_len),
            Granularity::Head => ActivationSite::all_head_output(n_layers, n_heads),
            Granularity::Mlp => ActivationSite::all_mlp_out(n_layers, seq_len),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resid" => Ok(Granularity::Resid),
            "head" => Ok(Granularity::Head),
            "mlp" => Ok(Granularity::Mlp),
            _ => Err(Error::Config(format!("unknown granularity {s:?} (resid, head, mlp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    Patch,
    Zero,
}

impl PatchMode {
    pub fn intervention(self) -> InterventionMode {
        match self {
            PatchMode::Patch => InterventionMode::ReplaceFromCache,
            PatchMode::Zero => InterventionMode::ZeroAblate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PatchMode::Patch => "patch",
            PatchMode::Zero => "zero",
        }
    }
}

impl FromStr for PatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(PatchMode::Patch),
            "zero" => Ok(PatchMode::Zero),
            _ => Err(Error::Config(format!("unknown patch mode {s:?} (patch, zero)"))),
        }
    }
}

/// Outcome of one patched run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult<S> {
    pub pair_id: String,
    pub site: ActivationSite,
    pub ld_clean: S,
    pub ld_baseline: S,
    pub ld_patched: S,
    pub dld: S,
}

impl<S: Scalar> PatchResult<S> {
    pub fn new(pair_id: &str, site: ActivationSite, ld_clean: S, ld_baseline: S, ld_patched: S) -> Self {
        PatchResult {
            pair_id: pair_id.to_string(),
            site,
            ld_clean,
            ld_baseline,
            ld_patched,
            dld: ld_patched - ld_baseline,
        }
    }
}

/// Clean and corrupt passes of one pair, with the clean activations a sweep needs.
#[derive(Debug, Clone)]
pub struct Baseline<S> {
    pub pair_id: String,
    pub answers: AnswerTokens,
    pub clean_answer: bool,
    pub ld_clean: S,
    pub ld_baseline: S,
    pub clean_cache: ActivationCache<S>,
    /// Set when the clean or corrupt run does not prefer its own answer.
    pub sign_warning: Option<String>,
}

pub fn run_pair_baseline<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    sites: &[ActivationSite],
) -> Result<Baseline<M::Scalar>> {
    let inner = || -> Result<Baseline<M::Scalar>> {
        let n_clean = model.token_count(&pair.prompt_clean)?;
        let n_corrupt = model.token_count(&pair.prompt_corrupt)?;
        if n_clean != n_corrupt {
            return Err(Error::TokenizationMisaligned {
                pair: pair.id.clone(),
                clean: n_clean,
                corrupt: n_corrupt,
            });
        }
        let answers = model.answer_tokens(pair.value_style)?;
        let (clean_logits, clean_cache) = model.run_with_capture(&pair.prompt_clean, sites)?;
        let (corrupt_logits, _) = model.run_with_capture(&pair.prompt_corrupt, &[])?;
        let ld_clean = logit_difference(&clean_logits, &answers, pair.answer_clean);
        let ld_baseline = logit_difference(&corrupt_logits, &answers, pair.answer_clean);
        let sign_warning = (ld_clean.f64() <= 0.0 || ld_baseline.f64() >= 0.0).then(|| {
            let msg = format!(
                "pair {}: expected ld_clean > 0 > ld_baseline, got {} and {}",
                pair.id, ld_clean, ld_baseline
            );
            warn!("{msg}");
            msg
        });
        Ok(Baseline {
            pair_id: pair.id.clone(),
            answers,
            clean_answer: pair.answer_clean,
            ld_clean,
            ld_baseline,
            clean_cache,
            sign_warning,
        })
    };
    inner().map_err(|e| e.for_pair(&pair.id))
}

/// One patched run of the corrupt prompt.
pub fn patch_site<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    base: &Baseline<M::Scalar>,
    site: ActivationSite,
    mode: InterventionMode,
) -> Result<PatchResult<M::Scalar>> {
    let logits = model.run_with_intervention(&pair.prompt_corrupt, &[Intervention { site, mode }], &base.clean_cache)?;
    let ld = logit_difference(&logits, &base.answers, base.clean_answer);
    Ok(PatchResult::new(&pair.id, site, base.ld_clean, base.ld_baseline, ld))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    PerLayerMaxAbs,
}

/// Dense dLD matrix: rows are layers, columns positions or heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid<S> {
    pub pair_id: String,
    pub granularity: Granularity,
    pub mode: PatchMode,
    pub precision: Precision,
    pub tolerance: f64,
    pub row_axis: String,
    pub col_axis: String,
    pub ld_clean: S,
    pub ld_baseline: S,
    pub normalization: Normalization,
    pub grid: Vec<Vec<S>>,
}

impl<S: Scalar> SweepGrid<S> {
    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.grid[row][col]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization != Normalization::None
    }

    pub fn all_finite(&self) -> bool {
        self.grid.iter().flatten().all(|x| x.is_finite())
    }

    /// Largest absolute cell value.
    pub fn max_abs(&self) -> f64 {
        self.grid.iter().flatten().map(|x| x.f64().abs()).fold(0.0, f64::max)
    }

    pub fn to_f64(&self) -> SweepGrid<f64> {
        SweepGrid {
            pair_id: self.pair_id.clone(),
            granularity: self.granularity,
            mode: self.mode,
            precision: self.precision,
            tolerance: self.tolerance,
            row_axis: self.row_axis.clone(),
            col_axis: self.col_axis.clone(),
            ld_clean: self.ld_clean.f64(),
            ld_baseline: self.ld_baseline.f64(),
            normalization: self.normalization,
            grid: self.grid.iter().map(|r| r.iter().map(|x| x.f64()).collect()).collect(),
        }
    }
}

/// Runs one sweep; every cell is a full forward pass, computed in parallel and placed by index.
pub fn sweep<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    granularity: Granularity,
    mode: PatchMode,
) -> Result<SweepGrid<M::Scalar>> {
    let spec = model.spec();
    let seq_len = model.token_count(&pair.prompt_clean).map_err(|e| e.for_pair(&pair.id))?;
    let sites = granularity.sites(spec.n_layers, spec.n_heads, seq_len);
    let capture: &[ActivationSite] = match mode {
        PatchMode::Patch => &sites,
        PatchMode::Zero => &[],
    };
    let base = run_pair_baseline(pair, model, capture)?;
    sweep_with_baseline(pair, model, &base, granularity, mode)
}

pub fn sweep_with_baseline<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    base: &Baseline<M::Scalar>,
    granularity: Granularity,
    mode: PatchMode,
) -> Result<SweepGrid<M::Scalar>> {
    let spec = model.spec();
    let seq_len = model.token_count(&pair.prompt_clean).map_err(|e| e.for_pair(&pair.id))?;
    let sites = granularity.sites(spec.n_layers, spec.n_heads, seq_len);
    let cols = if granularity == Granularity::Head { spec.n_heads } else { seq_len };
    let cells = sites
        .par_iter()
        .map(|&site| patch_site(pair, model, base, site, mode.intervention()).map(|r| r.dld))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.for_pair(&pair.id))?;
    let grid: Vec<Vec<M::Scalar>> = cells.chunks(cols.max(1)).map(<[_]>::to_vec).collect();
    let grid = if cols == 0 { vec![Vec::new(); spec.n_layers] } else { grid };
    Ok(SweepGrid {
        pair_id: pair.id.clone(),
        granularity,
        mode,
        precision: M::Scalar::PRECISION,
        tolerance: M::Scalar::TOLERANCE,
        row_axis: "layer".into(),
        col_axis: if granularity == Granularity::Head { "head" } else { "position" }.into(),
        ld_clean: base.ld_clean,
        ld_baseline: base.ld_baseline,
        normalization: Normalization::None,
        grid,
    })
}

pub fn sweep_residual<M: HookedModel + ?Sized>(pair: &ContrastPair, model: &M) -> Result<SweepGrid<M::Scalar>> {
    sweep(pair, model, Granularity::Resid, PatchMode::Patch)
}

pub fn sweep_heads<M: HookedModel + ?Sized>(pair: &ContrastPair, model: &M) -> Result<SweepGrid<M::Scalar>> {
    sweep(pair, model, Granularity::Head, PatchMode::Patch)
}

pub fn sweep_mlp<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    mode: PatchMode,
) -> Result<SweepGrid<M::Scalar>> {
    sweep(pair, model, Granularity::Mlp, mode)
}

/// Divides each layer row by its largest absolute value; zero rows stay zero.
pub fn normalize_per_layer<S: Scalar>(grid: &SweepGrid<S>) -> SweepGrid<S> {
    let mut out = grid.clone();
    for row in &mut out.grid {
        let m = row.iter().map(|x| x.abs()).fold(S::zero(), S::max);
        if m > S::zero() {
            row.iter_mut().for_each(|x| *x = *x / m);
        }
    }
    out.normalization = Normalization::PerLayerMaxAbs;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMetric {
    Dld,
    Rld,
}

impl AblationMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationMetric::Dld => "dld",
            AblationMetric::Rld => "rld",
        }
    }
}

impl FromStr for AblationMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dld" => Ok(AblationMetric::Dld),
            "rld" => Ok(AblationMetric::Rld),
            _ => Err(Error::Config(format!("unknown ablation metric {s:?} (dld, rld)"))),
        }
    }
}

/// `|(after - origin) / origin|`, refusing near-zero origins.
pub fn ratio_shift(origin: f64, after: f64) -> Result<f64> {
    if origin.abs() < RATIO_EPSILON {
        return Err(Error::DegenerateBaseline(origin));
    }
    Ok(((after - origin) / origin).abs())
}

/// Unablated logit difference of the clean prompt.
pub fn clean_logit_difference<M: HookedModel + ?Sized>(pair: &ContrastPair, model: &M) -> Result<f64> {
    let answers = model.answer_tokens(pair.value_style)?;
    let (logits, _) = model.run_with_capture(&pair.prompt_clean, &[])?;
    Ok(logit_difference(&logits, &answers, pair.answer_clean).f64())
}

/// Zero-ablates the MLP output over `region` at `layer` (or at every layer when
/// `layer` is `None`) on the clean prompt and scores the shift.
pub fn ablate_region<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    region: Region,
    layer: Option<usize>,
    metric: AblationMetric,
) -> Result<f64> {
    let origin = clean_logit_difference(pair, model).map_err(|e| e.for_pair(&pair.id))?;
    ablate_region_from(pair, model, region, layer, metric, origin)
}

fn ablate_region_from<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    region: Region,
    layer: Option<usize>,
    metric: AblationMetric,
    origin: f64,
) -> Result<f64> {
    let positions = pair.positions_in(region);
    if positions.is_empty() {
        return Ok(0.0);
    }
    let layers: Vec<usize> = match layer {
        Some(l) => vec![l],
        None => (0..model.spec().n_layers).collect(),
    };
    let interventions: Vec<Intervention> = layers
        .iter()
        .flat_map(|&layer| {
            positions
                .iter()
                .map(move |&position| Intervention::zero(ActivationSite::MlpOut { layer, position }))
        })
        .collect();
    let answers = model.answer_tokens(pair.value_style)?;
    let logits = model
        .run_with_intervention(&pair.prompt_clean, &interventions, &ActivationCache::empty())
        .map_err(|e| e.for_pair(&pair.id))?;
    let after = logit_difference(&logits, &answers, pair.answer_clean).f64();
    match metric {
        AblationMetric::Dld => Ok(after - origin),
        AblationMetric::Rld => ratio_shift(origin, after).map_err(|e| e.for_pair(&pair.id)),
    }
}

/// Per-layer region ablation for one pair; degenerate ratios are recorded, not divided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAblation {
    pub pair_id: String,
    pub region: Region,
    pub metric: AblationMetric,
    pub cumulative: bool,
    pub ld_origin: f64,
    /// One value per layer, or a single value in cumulative mode; `None` when degenerate.
    pub values: Vec<Option<f64>>,
    pub degenerate: bool,
}

pub fn ablate_region_profile<M: HookedModel + ?Sized>(
    pair: &ContrastPair,
    model: &M,
    region: Region,
    metric: AblationMetric,
    cumulative: bool,
) -> Result<RegionAblation> {
    let origin = clean_logit_difference(pair, model).map_err(|e| e.for_pair(&pair.id))?;
    let layers: Vec<Option<usize>> = if cumulative {
        vec![None]
    } else {
        (0..model.spec().n_layers).map(Some).collect()
    };
    let values = layers
        .par_iter()
        .map(|&l| match ablate_region_from(pair, model, region, l, metric, origin) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Pair { source, .. }) if matches!(*source, Error::DegenerateBaseline(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = values.iter().any(Option::is_none);
    if degenerate {
        warn!("pair {}: clean logit difference {origin} is degenerate for ratio ablation", pair.id);
    }
    Ok(RegionAblation {
        pair_id: pair.id.clone(),
        region,
        metric,
        cumulative,
        ld_origin: origin,
        values,
        degenerate,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusConfig, Depth, QuotaMode, RuleCategory, VariantSet};
    use crate::model::{build_toy_model, SymbolTokenizer, ToyConfig, ToyModel};

    fn toy() -> ToyModel<f64> {
        build_toy_model(ToyConfig::default()).unwrap()
    }

    fn pairs() -> Vec<ContrastPair> {
        let cfg = CorpusConfig {
            rules: vec![RuleCategory::DeMorgan],
            depths: vec![Depth::OneHop],
            variants: VariantSet::Canonical,
            quota: QuotaMode::Exhaustive,
            ..Default::default()
        };
        generate_corpus(&cfg, &SymbolTokenizer::corpus_default()).unwrap().pairs
    }

    fn answers() -> AnswerTokens {
        AnswerTokens {
            true_id: 0,
            false_id: 1,
            true_form: " True".into(),
            false_form: " False".into(),
        }
    }

    #[test]
    fn logit_difference_orientation() {
        let logits = [5.0_f64, 3.0];
        assert_eq!(logit_difference(&logits, &answers(), true), 2.0);
        assert_eq!(logit_difference(&logits, &answers(), false), -2.0);
        assert_eq!(logit_difference(&[1.0_f64, 1.0], &answers(), true), 0.0);
    }

    #[test]
    fn ratio_arithmetic() {
        assert_eq!(ratio_shift(2.0, 1.0).unwrap(), 0.5);
        assert!(matches!(ratio_shift(1e-9, 1.0), Err(Error::DegenerateBaseline(_))));
    }

    #[test]
    fn normalize_rows() {
        let g = SweepGrid {
            pair_id: "x".into(),
            granularity: Granularity::Resid,
            mode: PatchMode::Patch,
            precision: Precision::F64,
            tolerance: 1e-6,
            row_axis: "layer".into(),
            col_axis: "position".into(),
            ld_clean: 1.0,
            ld_baseline: -1.0,
            normalization: Normalization::None,
            grid: vec![vec![2.0, -4.0, 1.0], vec![0.0, 0.0, 0.0]],
        };
        let n = normalize_per_layer(&g);
        assert_eq!(n.grid, vec![vec![0.5, -1.0, 0.25], vec![0.0, 0.0, 0.0]]);
        assert!(n.is_normalized());
        assert_eq!(normalize_per_layer(&n).grid, n.grid);
    }

    #[test]
    fn residual_exact_restoration_and_causal_zero() {
        let m = toy();
        for p in pairs() {
            let g = sweep_residual(&p, &m).unwrap();
            assert_eq!((g.rows(), g.cols()), (4, p.len()));
            let clean = m.tokenizer().encode(&p.prompt_clean).unwrap();
            let corrupt = m.tokenizer().encode(&p.prompt_corrupt).unwrap();
            let star = clean.iter().zip(&corrupt).position(|(a, b)| a.id != b.id).unwrap();
            assert!((g.get(0, star) - (g.ld_clean - g.ld_baseline)).abs() <= 1e-9);
            for t in 0..star {
                assert!(g.get(0, t).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn sweep_shapes_and_zero_mode() {
        let m = toy();
        let p = &pairs()[0];
        let h = sweep_heads(p, &m).unwrap();
        assert_eq!((h.rows(), h.cols()), (4, 2));
        let z = sweep_mlp(p, &m, PatchMode::Zero).unwrap();
        assert_eq!((z.rows(), z.cols()), (4, p.len()));
        assert!(z.all_finite());
    }

    #[test]
    fn region_ablation() {
        let m = toy();
        let p = &pairs()[0];
        let per_layer = ablate_region_profile(p, &m, Region::FactsRegion, AblationMetric::Dld, false).unwrap();
        assert_eq!(per_layer.values.len(), 4);
        let direct = ablate_region(p, &m, Region::FactsRegion, Some(2), AblationMetric::Dld).unwrap();
        assert_eq!(per_layer.values[2], Some(direct));
        let cum = ablate_region_profile(p, &m, Region::QueryToken, AblationMetric::Rld, true).unwrap();
        assert_eq!(cum.values.len(), 1);
        let mut empty = p.clone();
        empty.annotations.retain(|a| a.region != Region::QueryToken);
        assert_eq!(ablate_region(&empty, &m, Region::QueryToken, Some(0), AblationMetric::Rld).unwrap(), 0.0);
    }

    #[test]
    fn grid_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = sweep_heads(&pairs()[0], &toy()).unwrap();
        let path = dir.path().join("g.json");
        write_json(&path, &g).unwrap();
        let back: SweepGrid<f64> = read_json(&path).unwrap();
        assert_eq!(back, g);
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["pair_id", "granularity", "mode", "precision", "grid", "ld_clean", "ld_baseline", "normalization"] {
            assert!(text.contains(&format!("\"{key}\"")), "{key}");
        }
    }
}
