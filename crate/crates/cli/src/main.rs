use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use plmi_core::dataset::{
    filter_by_model, generate_corpus, predicts, read_pairs_jsonl, write_pairs_jsonl, ContrastPair, CorpusConfig, Depth,
    FlipMode, QuotaMode, Region, RuleCategory, VariantSet,
};
use plmi_core::heads::{classify_pair, count_heads_per_layer, HeadReport, Thresholds};
use plmi_core::logic::ValueStyle;
use plmi_core::metrics::{
    make_layer_groups, mean_abs_dld_by_category, per_token_stage_mean, retrospection_score, GroupScheme,
    PersistenceOptions,
};
use plmi_core::patch::{
    ablate_region_profile, read_json, sweep, write_json, AblationMetric, Granularity, PatchMode,
    SweepGrid,
};
use plmi_core::pipeline::{
    ablation_tsv, aggregate_tsv, emit_figures, head_counts_tsv, load_model, per_token_tsv, retention_tsv,
    retrospection_tsv, run_pipeline, summarize_ablations, write_table, ExperimentConfig, RunManifest, RunResults,
};
use plmi_core::{Error, HookedModel, Precision, Scalar};

#[derive(Parser)]
#[command(name = "plmi", version, about = "Propositional-logic activation-patching workbench")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model id; `toy` or `toy:seed=..,layers=..,heads=..,d_model=..`.
    #[arg(long, default_value = "toy")]
    model: String,
    #[arg(long, default_value = "f64")]
    precision: Precision,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the contrast-pair corpus as JSON lines.
    Gen(GenArgs),
    /// Keep pairs the model answers correctly on both prompts.
    Filter {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the retention report (TSV and JSON share this stem).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Patch one activation site per cell and write one grid per pair.
    Sweep {
        #[arg(long)]
        granularity: Granularity,
        #[arg(long, default_value = "patch")]
        mode: PatchMode,
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also sweep pairs the model gets wrong.
        #[arg(long)]
        force: bool,
    },
    /// Zero-ablate MLP outputs over one prompt region, layer by layer.
    AblateRegion {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        region: Region,
        #[arg(long, default_value = "rld")]
        metric: AblationMetric,
        /// Ablate all layers at once.
        #[arg(long)]
        cumulative: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce residual sweeps into category-by-stage tables.
    Aggregate {
        #[arg(long)]
        results_dir: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "proportional")]
        groups: GroupScheme,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention-head taxonomy.
    #[command(subcommand)]
    Heads(HeadsCommand),
    /// Redraw figures from a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Run the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_pairs: Option<usize>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Subcommand)]
enum HeadsCommand {
    /// Label every head on each pair's clean prompt.
    Classify {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Overrides such as `split=0.5,trans=0.4`.
        #[arg(long, default_value = "")]
        thresholds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer mean counts of labeled heads.
    Count {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "")]
        thresholds: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenArgs {
    /// Read the corpus section (and seed) of an experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    rules: Option<Vec<RuleCategory>>,
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<Depth>>,
    #[arg(long, value_parser = parse_style)]
    style: Option<ValueStyle>,
    #[arg(long)]
    seed: Option<u64>,
    /// Only the canonical template of each rule.
    #[arg(long)]
    canonical: bool,
    /// Keep every valid pair instead of the quota table.
    #[arg(long)]
    exhaustive: bool,
    /// Corrupt every non-empty subset of free facts.
    #[arg(long)]
    multi_flip: bool,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_style(s: &str) -> std::result::Result<ValueStyle, String> {
    match s {
        "long" => Ok(ValueStyle::Long),
        "short" => Ok(ValueStyle::Short),
        _ => Err(format!("unknown value style {s:?} (long, short)")),
    }
}

fn read_pairs(path: &Path) -> Result<Vec<ContrastPair>> {
    read_pairs_jsonl(path).with_context(|| format!("reading pairs from {}", path.display()))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.corpus_config(),
        None => CorpusConfig::default(),
    };
    if let Some(r) = a.rules {
        cfg.rules = r;
    }
    if let Some(d) = a.depths {
        cfg.depths = d;
    }
    if let Some(s) = a.style {
        cfg.style = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.canonical {
        cfg.variants = VariantSet::Canonical;
    }
    if a.exhaustive {
        cfg.quota = QuotaMode::Exhaustive;
    }
    if a.multi_flip {
        cfg.flip = FlipMode::Multi;
    }
    if a.limit.is_some() {
        cfg.limit = a.limit;
    }
    let corpus = generate_corpus(&cfg, &plmi_core::model::SymbolTokenizer::corpus_default())?;
    write_pairs_jsonl(&a.out, &corpus.pairs)?;
    if let Some(r) = &a.report {
        write_json(r, &corpus.report)?;
    }
    println!(
        "{} pairs ({} one-hop, {} two-hop) -> {}",
        corpus.pairs.len(),
        corpus.report.one_hop,
        corpus.report.two_hop,
        a.out.display()
    );
    Ok(())
}

fn cmd_filter<S: Scalar>(pairs: &Path, model: &str, out: &Path, report: Option<&Path>) -> Result<()> {
    let m = load_model::<S>(model)?;
    let pairs = read_pairs(pairs)?;
    let (kept, rep) = filter_by_model(&pairs, m.as_ref())?;
    write_pairs_jsonl(out, &kept)?;
    if let Some(stem) = report {
        let dir = stem.parent().unwrap_or(Path::new("."));
        let name = stem.file_stem().and_then(|s| s.to_str()).unwrap_or("retention");
        write_table(dir, name, &retention_tsv(&rep), &rep)?;
    }
    println!("retained {}/{} ({:.1}%)", rep.retained, rep.total, 100.0 * rep.rate);
    Ok(())
}

fn retained_or_forced<M: HookedModel + ?Sized>(pairs: Vec<ContrastPair>, m: &M, force: bool) -> Result<Vec<ContrastPair>> {
    if force {
        return Ok(pairs);
    }
    let mut out = Vec::new();
    for p in pairs {
        let ok = predicts(m, &p.prompt_clean, p.answer_clean, &p)? && predicts(m, &p.prompt_corrupt, p.answer_corrupt, &p)?;
        if ok {
            out.push(p);
        } else {
            warn!("skipping {}: not retained by the model (use --force)", p.id);
        }
    }
    Ok(out)
}

fn cmd_sweep<S: Scalar>(
    g: Granularity,
    mode: PatchMode,
    pairs: &Path,
    model: &str,
    out: &Path,
    force: bool,
) -> Result<()> {
    let m = load_model::<S>(model)?;
    let pairs = retained_or_forced(read_pairs(pairs)?, m.as_ref(), force)?;
    for p in &pairs {
        let grid = sweep(p, m.as_ref(), g, mode)?;
        write_json(&out.join(format!("{}__{g}.json", p.id)), &grid)?;
    }
    println!("{} {g} sweeps -> {}", pairs.len(), out.display());
    Ok(())
}

fn cmd_ablate<S: Scalar>(
    pairs: &Path,
    region: Region,
    metric: AblationMetric,
    cumulative: bool,
    model: &str,
    out: &Path,
) -> Result<()> {
    let m = load_model::<S>(model)?;
    let pairs = read_pairs(pairs)?;
    let results = pairs
        .iter()
        .map(|p| ablate_region_profile(p, m.as_ref(), region, metric, cumulative))
        .collect::<plmi_core::Result<Vec<_>>>()?;
    write_json(out, &results)?;
    let rows = summarize_ablations(&results);
    print!("{}", ablation_tsv(&rows));
    Ok(())
}

fn cmd_aggregate(results_dir: &Path, pairs: &Path, scheme: GroupScheme, out: &Path) -> Result<()> {
    let pairs = read_pairs(pairs)?;
    let mut grids: Vec<(ContrastPair, SweepGrid<f64>)> = Vec::new();
    for p in pairs {
        let path = results_dir.join(format!("{}__resid.json", p.id));
        if path.exists() {
            let g: SweepGrid<f64> = read_json(&path)?;
            grids.push((p, g));
        }
    }
    if grids.is_empty() {
        warn!("no residual grids found in {}", results_dir.display());
    }
    let groups = match grids.first() {
        Some((_, g)) => make_layer_groups(g.rows(), scheme)?,
        None => Vec::new(),
    };
    let samples: Vec<_> = grids.iter().map(|(p, g)| (g, p.annotations.as_slice())).collect();
    let table = mean_abs_dld_by_category(&samples, &groups)?;
    let retro = retrospection_score(&table, &PersistenceOptions::default());
    let per_token = grids
        .iter()
        .map(|(p, g)| Ok((p, per_token_stage_mean(g, &groups)?)))
        .collect::<plmi_core::Result<Vec<_>>>()?;
    write_table(out, "aggregate", &aggregate_tsv(&table), &table)?;
    write_table(out, "retrospection", &retrospection_tsv(&retro), &retro)?;
    let rows: Vec<(&str, &Vec<Vec<f64>>)> = per_token.iter().map(|(p, v)| (p.id.as_str(), v)).collect();
    write_table(out, "per_token_stage", &per_token_tsv(&per_token, &groups), &rows)?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn cmd_heads<S: Scalar>(count: bool, pairs: &Path, model: &str, thresholds: &str, out: &Path) -> Result<()> {
    let th = Thresholds::parse_overrides(thresholds)?;
    let m = load_model::<S>(model)?;
    let pairs = read_pairs(pairs)?;
    if count {
        let (counts, _) = count_heads_per_layer(&pairs, m.as_ref(), &th)?;
        write_table(out, "head_counts", &head_counts_tsv(&counts), &counts)?;
        print!("{}", head_counts_tsv(&counts));
    } else {
        let reports = pairs
            .iter()
            .map(|p| classify_pair(p, m.as_ref(), &th))
            .collect::<plmi_core::Result<Vec<HeadReport>>>()?;
        write_json(out, &reports)?;
        println!("{} head reports -> {}", reports.len(), out.display());
    }
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<()> {
    let hash = match RunManifest::load(run_dir)? {
        Some(m) => m.config_hash,
        None => ExperimentConfig::load(&run_dir.join("config.toml"))?.hash(),
    };
    let results = RunResults::load(run_dir)?;
    let figs = emit_figures(&results, &run_dir.join("figures"), &hash)?;
    println!("{} figures -> {}", figs.files.len(), run_dir.join("figures").display());
    Ok(())
}

fn cmd_run(config: Option<&Path>, out: Option<PathBuf>, max_pairs: Option<usize>, force: bool) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if max_pairs.is_some() {
        cfg.sweeps.max_pairs = max_pairs;
    }
    cfg.sweeps.force |= force;
    let manifest = run_pipeline(&cfg)?;
    for s in &manifest.stages {
        let state = if s.skipped { "skipped" } else { "done" };
        info!("{:<10} {state} {:.2}s", s.name, s.seconds);
        println!("{:<10} {state}", s.name);
    }
    println!("manifest -> {}", cfg.output_dir.join("manifest.json").display());
    Ok(())
}

macro_rules! by_precision {
    ($p:expr, $f:ident ( $($arg:expr),* )) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Filter {
            pairs,
            model,
            out,
            report,
        } => by_precision!(model.precision, cmd_filter(&pairs, &model.model, &out, report.as_deref())),
        Command::Sweep {
            granularity,
            mode,
            pairs,
            model,
            out,
            force,
        } => by_precision!(model.precision, cmd_sweep(granularity, mode, &pairs, &model.model, &out, force)),
        Command::AblateRegion {
            pairs,
            region,
            metric,
            cumulative,
            model,
            out,
        } => by_precision!(model.precision, cmd_ablate(&pairs, region, metric, cumulative, &model.model, &out)),
        Command::Aggregate {
            results_dir,
            pairs,
            groups,
            out,
        } => cmd_aggregate(&results_dir, &pairs, groups, &out),
        Command::Heads(HeadsCommand::Classify {
            pairs,
            model,
            thresholds,
            out,
        }) => by_precision!(model.precision, cmd_heads(false, &pairs, &model.model, &thresholds, &out)),
        Command::Heads(HeadsCommand::Count {
            pairs,
            model,
            thresholds,
            out,
        }) => by_precision!(model.precision, cmd_heads(true, &pairs, &model.model, &thresholds, &out)),
        Command::Report { run_dir } => cmd_report(&run_dir),
        Command::Run {
            config,
            out,
            max_pairs,
            force,
        } => cmd_run(config.as_deref(), out, max_pairs, force),
    }
}

/// 2 for configuration problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    fn is_config(e: &Error) -> bool {
        match e {
            Error::Config(_) | Error::LayerGroupScheme { .. } => true,
            Error::Stage { source, .. } | Error::Pair { source, .. } => is_config(source),
            _ => false,
        }
    }
    match err.downcast_ref::<Error>() {
        Some(e) if is_config(e) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
