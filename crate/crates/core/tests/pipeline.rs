use std::path::Path;

use plmi_core::dataset::{Depth, RuleCategory};
use plmi_core::pipeline::{run_pipeline, ExperimentConfig, RunManifest};
use plmi_core::Error;

fn config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.sweeps.force = true;
    cfg.sweeps.max_pairs = Some(2);
    cfg.sweeps.granularities = vec![plmi_core::patch::Granularity::Resid];
    cfg
}

#[test]
fn rerun_skips_every_stage_and_resumes_after_deletion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let first = run_pipeline(&cfg).unwrap();
    assert!(first.complete);
    assert!(first.stages.iter().all(|s| !s.skipped));

    let second = run_pipeline(&cfg).unwrap();
    assert!(second.stages.iter().all(|s| s.skipped));

    std::fs::remove_file(tmp.path().join("tables/aggregate.tsv")).unwrap();
    let third = run_pipeline(&cfg).unwrap();
    let ran: Vec<&str> = third.stages.iter().filter(|s| !s.skipped).map(|s| s.name.as_str()).collect();
    assert!(ran.contains(&"aggregate"), "{ran:?}");
    assert!(!ran.contains(&"gen") && !ran.contains(&"sweeps"), "{ran:?}");
    assert!(tmp.path().join("tables/aggregate.tsv").exists());
    assert!(third.verify(tmp.path()).unwrap().is_empty());
}

#[test]
fn changed_config_invalidates_cached_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    run_pipeline(&cfg).unwrap();
    cfg.seed += 1;
    let again = run_pipeline(&cfg).unwrap();
    assert!(again.stages.iter().all(|s| !s.skipped));
}

#[test]
fn unavailable_model_halts_at_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.model.id = "qwen3-8b".into();
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "filter");
            assert!(matches!(*source, Error::ModelUnavailable(_)), "{source}");
        }
        other => panic!("expected a stage error, got {other:?}"),
    }
    let m = RunManifest::load(tmp.path()).unwrap().unwrap();
    assert!(!m.complete);
    assert_eq!(m.failed_stage.as_deref(), Some("filter"));
    assert!(tmp.path().join("data/pairs.jsonl").exists());
}

#[test]
fn empty_corpus_writes_header_only_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.corpus.rules = vec![RuleCategory::ExcludedMiddle];
    cfg.corpus.depths = vec![Depth::OneHop];
    let m = run_pipeline(&cfg).unwrap();
    assert!(m.complete);
    for t in ["aggregate", "retrospection", "head_counts", "ablations"] {
        let text = std::fs::read_to_string(tmp.path().join(format!("tables/{t}.tsv"))).unwrap();
        assert_eq!(text.lines().count(), 1, "{t}: {text}");
    }
    assert!(m.stages.iter().any(|s| !s.warnings.is_empty()));
}

#[test]
fn config_file_roundtrips_and_rejects_unknown_keys() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back.hash(), cfg.hash());
    assert!(matches!(ExperimentConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
}
