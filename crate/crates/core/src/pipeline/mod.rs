//! End-to-end orchestration: gen, filter, sweeps, ablations, aggregate, heads, report.
//!
//! Every stage reads its inputs from the run directory, so a skipped stage
//! leaves downstream stages with exactly the files they would have produced.

mod config;
mod figures;
mod manifest;
mod tables;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

pub use config::{AblationConfig, ExperimentConfig, MetricsConfig, ModelConfig, SweepConfig};
pub use figures::{aggregate_svg, bar_chart_svg, head_counts_svg, heatmap_svg};
pub use manifest::{entries_match, file_sha256, FileEntry, RunManifest, StageRecord, MANIFEST_FILE};
pub use tables::{
    ablation_tsv, aggregate_tsv, head_counts_tsv, per_token_tsv, retention_tsv, retrospection_tsv,
    summarize_ablations, write_table, AblationSummaryRow, ABLATION_HEADER, PER_TOKEN_HEADER, RETENTION_HEADER,
    RETROSPECTION_HEADER,
};

use crate::dataset::{
    filter_by_model, generate_corpus, read_pairs_jsonl, seeded_subset, write_pairs_jsonl, ContrastPair, RetentionReport,
};
use crate::error::{Error, Result};
use crate::heads::{count_heads_per_layer, HeadCounts, HeadLabel};
use crate::metrics::{make_layer_groups, mean_abs_dld_by_category, per_token_stage_mean, retrospection_score, AggregateTable};
use crate::model::{build_toy_model, HookedModel, SymbolTokenizer, ToyConfig};
use crate::patch::{ablate_region_profile, read_json, sweep, write_json, Granularity, RegionAblation, SweepGrid};
use crate::scalar::{Precision, Scalar};

/// Environment variable naming the directory searched for non-toy models.
pub const MODEL_CACHE_ENV: &str = "PLMI_MODEL_CACHE";

pub const STAGES: [&str; 7] = ["gen", "filter", "sweeps", "ablations", "aggregate", "heads", "report"];

pub const PAIRS_FILE: &str = "data/pairs.jsonl";
pub const CORPUS_REPORT_FILE: &str = "data/corpus_report.json";
pub const RETAINED_FILE: &str = "data/retained.jsonl";
pub const SELECTED_FILE: &str = "data/selected.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Resolves a model id to a backend. Only the built-in toy transformer is available.
pub fn load_model<S: Scalar>(id: &str) -> Result<Box<dyn HookedModel<Scalar = S>>> {
    if id == "toy" || id.starts_with("toy:") {
        let cfg = ToyConfig::from_model_id(id)?;
        return Ok(Box::new(build_toy_model::<S>(cfg)?));
    }
    let location = std::env::var(MODEL_CACHE_ENV).unwrap_or_else(|_| "<unset>".into());
    warn!("no backend can load {id:?} (model cache: {location})");
    Err(Error::ModelUnavailable(id.to_string()))
}

/// Stages that feed each stage; a stage's inputs are its dependencies' outputs.
fn dependencies(stage: &str) -> &'static [&'static str] {
    match stage {
        "filter" => &["gen"],
        "sweeps" | "ablations" | "heads" => &["filter"],
        "aggregate" => &["filter", "sweeps"],
        "report" => &["filter", "sweeps", "ablations", "aggregate", "heads"],
        _ => &[],
    }
}

fn stage_error(stage: &str, e: Error) -> Error {
    Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

fn sweep_file(pair_id: &str, g: Granularity) -> String {
    format!("results/sweeps/{pair_id}__{g}.json")
}

struct Ctx<'a, S: Scalar> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    hash: String,
    model: Option<Box<dyn HookedModel<Scalar = S>>>,
    warnings: Vec<String>,
}

impl<S: Scalar> Ctx<'_, S> {
    fn model(&mut self) -> Result<&dyn HookedModel<Scalar = S>> {
        if self.model.is_none() {
            self.model = Some(load_model::<S>(&self.cfg.model.id)?);
        }
        Ok(self.model.as_deref().expect("just loaded"))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    fn selected(&self) -> Result<Vec<ContrastPair>> {
        read_pairs_jsonl(&self.path(SELECTED_FILE))
    }
}

fn stage_gen<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let corpus = generate_corpus(&ctx.cfg.corpus_config(), &SymbolTokenizer::corpus_default())?;
    // The generator has already logged these.
    ctx.warnings.extend(corpus.report.warnings.iter().cloned());
    ctx.warnings.extend(corpus.report.style_fallback.iter().cloned());
    write_pairs_jsonl(&ctx.path(PAIRS_FILE), &corpus.pairs)?;
    write_json(&ctx.path(CORPUS_REPORT_FILE), &corpus.report)?;
    Ok(vec![PAIRS_FILE.into(), CORPUS_REPORT_FILE.into()])
}

fn stage_filter<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let pairs = read_pairs_jsonl(&ctx.path(PAIRS_FILE))?;
    let (retained, report) = filter_by_model(&pairs, ctx.model()?)?;
    info!("retained {}/{} pairs ({:.1}%)", report.retained, report.total, 100.0 * report.rate);
    let mut selected = if ctx.cfg.sweeps.force { pairs } else { retained.clone() };
    if let Some(k) = ctx.cfg.sweeps.max_pairs {
        let keep = seeded_subset(selected.len(), k, ctx.cfg.seed);
        selected = keep.into_iter().map(|i| selected[i].clone()).collect();
    }
    if selected.is_empty() {
        ctx.warn("no pairs selected for sweeps".into());
    }
    write_pairs_jsonl(&ctx.path(RETAINED_FILE), &retained)?;
    write_pairs_jsonl(&ctx.path(SELECTED_FILE), &selected)?;
    let [t, j] = write_table(&ctx.path("tables"), "retention", &retention_tsv(&report), &report)?;
    Ok(vec![
        RETAINED_FILE.into(),
        SELECTED_FILE.into(),
        format!("tables/{t}"),
        format!("tables/{j}"),
    ])
}

fn stage_sweeps<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let pairs = ctx.selected()?;
    let mut outputs = Vec::new();
    for p in &pairs {
        for &g in &ctx.cfg.sweeps.granularities {
            let mode = if g == Granularity::Mlp {
                ctx.cfg.sweeps.mlp_mode
            } else {
                crate::patch::PatchMode::Patch
            };
            let grid = sweep(p, ctx.model()?, g, mode)?;
            let rel = sweep_file(&p.id, g);
            write_json(&ctx.path(&rel), &grid)?;
            outputs.push(rel);
        }
    }
    Ok(outputs)
}

fn stage_ablations<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let pairs = ctx.selected()?;
    let ab = ctx.cfg.ablation.clone();
    let mut all = Vec::new();
    let mut outputs = Vec::new();
    for region in &ab.regions {
        let mut per_region = Vec::new();
        for p in &pairs {
            per_region.push(ablate_region_profile(p, ctx.model()?, *region, ab.metric, ab.cumulative)?);
        }
        let n_degenerate = per_region.iter().filter(|r| r.degenerate).count();
        if n_degenerate > 0 {
            ctx.warn(format!("{}: {n_degenerate} pairs have a degenerate clean logit difference", region.slug()));
        }
        let rel = format!("results/ablations/{}.json", region.slug());
        write_json(&ctx.path(&rel), &per_region)?;
        outputs.push(rel);
        all.extend(per_region);
    }
    let rows = summarize_ablations(&all);
    let [t, j] = write_table(&ctx.path("tables"), "ablations", &ablation_tsv(&rows), &rows)?;
    outputs.extend([format!("tables/{t}"), format!("tables/{j}")]);
    Ok(outputs)
}

fn load_resid_grids(dir: &Path, pairs: &[ContrastPair]) -> Result<Vec<(ContrastPair, SweepGrid<f64>)>> {
    let mut out = Vec::new();
    for p in pairs {
        let path = dir.join(sweep_file(&p.id, Granularity::Resid));
        if path.exists() {
            out.push((p.clone(), read_json::<SweepGrid<f64>>(&path)?));
        }
    }
    Ok(out)
}

fn stage_aggregate<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let pairs = ctx.selected()?;
    let grids = load_resid_grids(ctx.dir, &pairs)?;
    if grids.is_empty() {
        ctx.warn("no residual sweeps to aggregate".into());
    }
    let groups = match grids.first() {
        Some((_, g)) => make_layer_groups(g.rows(), ctx.cfg.metrics.scheme)?,
        None => Vec::new(),
    };
    let samples: Vec<(&SweepGrid<f64>, &[crate::dataset::TokenAnnotation])> =
        grids.iter().map(|(p, g)| (g, p.annotations.as_slice())).collect();
    let table = mean_abs_dld_by_category(&samples, &groups)?;
    let retro = retrospection_score(&table, &ctx.cfg.metrics.persistence);
    let per_token = grids
        .iter()
        .map(|(p, g)| Ok((p, per_token_stage_mean(g, &groups)?)))
        .collect::<Result<Vec<_>>>()?;
    let tables = ctx.path("tables");
    let [a, b] = write_table(&tables, "aggregate", &aggregate_tsv(&table), &table)?;
    let [c, d] = write_table(&tables, "retrospection", &retrospection_tsv(&retro), &retro)?;
    let per_token_rows: Vec<(&str, Vec<Vec<f64>>)> = per_token.iter().map(|(p, v)| (p.id.as_str(), v.clone())).collect();
    let [e, f] = write_table(&tables, "per_token_stage", &per_token_tsv(&per_token, &groups), &per_token_rows)?;
    Ok([a, b, c, d, e, f].into_iter().map(|n| format!("tables/{n}")).collect())
}

fn stage_heads<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let pairs = ctx.selected()?;
    let th = ctx.cfg.thresholds;
    let (counts, reports) = if pairs.is_empty() {
        ctx.warn("no pairs for head classification".into());
        let counts = HeadCounts {
            n_prompts: 0,
            n_heads: 0,
            labels: HeadLabel::ALL.to_vec(),
            counts: Vec::new(),
            thresholds: th,
        };
        (counts, Vec::new())
    } else {
        count_heads_per_layer(&pairs, ctx.model()?, &th)?
    };
    let reports_rel = "results/heads/reports.json";
    write_json(&ctx.path(reports_rel), &reports)?;
    let [t, j] = write_table(&ctx.path("tables"), "head_counts", &head_counts_tsv(&counts), &counts)?;
    Ok(vec![reports_rel.into(), format!("tables/{t}"), format!("tables/{j}")])
}

/// Everything the figures are drawn from, as persisted in a run directory.
#[derive(Debug, Clone, Default)]
pub struct RunResults {
    pub pairs: Vec<ContrastPair>,
    pub sweeps: Vec<SweepGrid<f64>>,
    pub ablations: Vec<RegionAblation>,
    pub aggregate: Option<AggregateTable>,
    pub head_counts: Option<HeadCounts>,
    pub retention: Option<RetentionReport>,
}

impl RunResults {
    /// Reads whatever results exist under `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut r = RunResults::default();
        let selected = dir.join(SELECTED_FILE);
        if selected.exists() {
            r.pairs = read_pairs_jsonl(&selected)?;
        }
        for p in &r.pairs {
            for g in [Granularity::Resid, Granularity::Head, Granularity::Mlp] {
                let path = dir.join(sweep_file(&p.id, g));
                if path.exists() {
                    r.sweeps.push(read_json(&path)?);
                }
            }
        }
        let ablation_dir = dir.join("results/ablations");
        if ablation_dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&ablation_dir)
                .map_err(|e| Error::io(&ablation_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for f in files {
                r.ablations.extend(read_json::<Vec<RegionAblation>>(&f)?);
            }
        }
        let opt = |rel: &str| dir.join(rel).exists().then(|| dir.join(rel));
        if let Some(p) = opt("tables/aggregate.json") {
            r.aggregate = Some(read_json(&p)?);
        }
        if let Some(p) = opt("tables/head_counts.json") {
            r.head_counts = Some(read_json(&p)?);
        }
        if let Some(p) = opt("tables/retention.json") {
            r.retention = Some(read_json(&p)?);
        }
        Ok(r)
    }
}

/// Figure files written by [`emit_figures`], relative to the output directory.
#[derive(Debug, Clone, Default)]
pub struct FigureOutput {
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

/// One heatmap per sweep, one bar chart per ablated region, category bars, head-count stacks.
pub fn emit_figures(results: &RunResults, out_dir: &Path, config_hash: &str) -> Result<FigureOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = FigureOutput::default();
    let write = |name: String, svg: String, out: &mut FigureOutput| -> Result<()> {
        let path = out_dir.join(&name);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        out.files.push(name);
        Ok(())
    };
    let tokens = |pair_id: &str| -> Vec<String> {
        results
            .pairs
            .iter()
            .find(|p| p.id == pair_id)
            .map(|p| {
                p.annotations
                    .iter()
                    .map(|a| format!("{}:{}", a.position, a.category))
                    .collect()
            })
            .unwrap_or_default()
    };
    if results.sweeps.is_empty() {
        out.warnings.push("no sweeps to draw".into());
    }
    for g in &results.sweeps {
        let labels = if g.granularity == Granularity::Head {
            (0..g.cols()).map(|h| format!("H{h}")).collect()
        } else {
            tokens(&g.pair_id)
        };
        write(
            format!("sweep_{}__{}.svg", g.pair_id, g.granularity),
            heatmap_svg(g, &labels, config_hash),
            &mut out,
        )?;
    }
    let rows = summarize_ablations(&results.ablations);
    let regions: BTreeSet<&str> = rows.iter().map(|r| r.region.as_str()).collect();
    if regions.is_empty() {
        out.warnings.push("no region ablations to draw".into());
    }
    for region in regions {
        let rs: Vec<&AblationSummaryRow> = rows.iter().filter(|r| r.region == region).collect();
        let labels: Vec<String> = rs.iter().map(|r| format!("L{}", r.layer)).collect();
        let values: Vec<f64> = rs.iter().map(|r| r.mean.unwrap_or(0.0)).collect();
        let title = format!("MLP zero-ablation, {region} ({})", rs[0].metric);
        write(
            format!("ablation_{region}.svg"),
            bar_chart_svg(&title, &labels, &values, &vec![None; values.len()], config_hash),
            &mut out,
        )?;
    }
    match &results.aggregate {
        Some(t) if !t.rows.is_empty() => write("aggregate.svg".into(), aggregate_svg(t, config_hash), &mut out)?,
        _ => {
            out.warnings.push("aggregate table is empty".into());
            let empty = AggregateTable {
                groups: Vec::new(),
                rows: Vec::new(),
            };
            write("aggregate.svg".into(), aggregate_svg(&empty, config_hash), &mut out)?;
        }
    }
    if let Some(c) = &results.head_counts {
        if c.counts.is_empty() {
            out.warnings.push("head counts are empty".into());
        }
        write("head_counts.svg".into(), head_counts_svg(c, config_hash), &mut out)?;
    }
    for w in &out.warnings {
        warn!("{w}");
    }
    Ok(out)
}

fn stage_report<S: Scalar>(ctx: &mut Ctx<S>) -> Result<Vec<String>> {
    let results = RunResults::load(ctx.dir)?;
    let figs = emit_figures(&results, &ctx.path("figures"), &ctx.hash)?;
    for w in figs.warnings {
        ctx.warnings.push(w);
    }
    Ok(figs.files.into_iter().map(|f| format!("figures/{f}")).collect())
}

fn run_stage<S: Scalar>(ctx: &mut Ctx<S>, name: &str) -> Result<Vec<String>> {
    match name {
        "gen" => stage_gen(ctx),
        "filter" => stage_filter(ctx),
        "sweeps" => stage_sweeps(ctx),
        "ablations" => stage_ablations(ctx),
        "aggregate" => stage_aggregate(ctx),
        "heads" => stage_heads(ctx),
        "report" => stage_report(ctx),
        other => Err(Error::Config(format!("unknown stage {other:?}"))),
    }
}

fn versions(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("plmi-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("model".to_string(), cfg.model.id.clone()),
        ("precision".to_string(), cfg.model.precision.to_string()),
    ])
}

/// Runs every stage in order, skipping stages whose inputs and outputs match a
/// previous manifest written under the same config hash.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    match cfg.model.precision {
        Precision::F32 => run_typed::<f32>(cfg),
        Precision::F64 => run_typed::<f64>(cfg),
    }
}

fn run_typed<S: Scalar>(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = cfg.hash();
    let previous = RunManifest::load(dir)
        .ok()
        .flatten()
        .filter(|m| m.config_hash == hash);
    let config_path = dir.join(CONFIG_FILE);
    let config_text = cfg.to_toml_string()?;
    if std::fs::read_to_string(&config_path).ok().as_deref() != Some(config_text.as_str()) {
        std::fs::write(&config_path, &config_text).map_err(|e| Error::io(&config_path, e))?;
    }

    let mut manifest = RunManifest::new(hash.clone(), versions(cfg));
    let mut ctx = Ctx::<S> {
        cfg,
        dir,
        hash,
        model: None,
        warnings: Vec::new(),
    };
    for name in STAGES {
        let inputs: Vec<FileEntry> = dependencies(name)
            .iter()
            .filter_map(|d| manifest.stage(d))
            .flat_map(|s| s.outputs.clone())
            .collect();
        let reusable = previous
            .as_ref()
            .and_then(|p| p.stage(name))
            .filter(|prev| prev.inputs == inputs && entries_match(dir, &prev.outputs));
        if let Some(prev) = reusable {
            info!("stage {name}: unchanged, skipped");
            manifest.stages.push(StageRecord {
                name: name.to_string(),
                seconds: 0.0,
                skipped: true,
                inputs,
                outputs: prev.outputs.clone(),
                warnings: prev.warnings.clone(),
            });
            continue;
        }
        info!("stage {name}: running");
        let start = Instant::now();
        ctx.warnings.clear();
        let result = run_stage(&mut ctx, name).and_then(|files| {
            files
                .iter()
                .map(|f| manifest::entry(dir, f))
                .collect::<Result<Vec<_>>>()
        });
        match result {
            Ok(outputs) => manifest.stages.push(StageRecord {
                name: name.to_string(),
                seconds: start.elapsed().as_secs_f64(),
                skipped: false,
                inputs,
                outputs,
                warnings: std::mem::take(&mut ctx.warnings),
            }),
            Err(e) => {
                manifest.failed_stage = Some(name.to_string());
                manifest.error = Some(e.to_string());
                manifest.files = inventory(dir, &manifest)?;
                manifest.save(dir)?;
                return Err(stage_error(name, e));
            }
        }
    }
    manifest.complete = true;
    manifest.files = inventory(dir, &manifest)?;
    manifest.save(dir)?;
    Ok(manifest)
}

fn inventory(dir: &Path, m: &RunManifest) -> Result<Vec<FileEntry>> {
    let mut files = vec![manifest::entry(dir, CONFIG_FILE)?];
    let mut seen = BTreeSet::new();
    for s in &m.stages {
        for f in &s.outputs {
            if seen.insert(f.path.clone()) {
                files.push(f.clone());
            }
        }
    }
    Ok(files)
}
