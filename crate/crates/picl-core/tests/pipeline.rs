//! Integration tests for the command pipeline: config handling, file
//! formats, prerequisites, and reproducibility of the CLI-facing layer.

use std::path::PathBuf;

use picl_core::commands::{
    cmd_adapt, cmd_evaluate, cmd_generate, cmd_pretrain, cmd_sweep, load_world, ADAPTED_CKPT,
    DATASET_FILE, PRETRAINED_CKPT, SOURCE_TRIALS_FILE, TARGET_TRIALS_FILE,
};
use picl_core::config::RunConfig;
use picl_core::error::PiclError;

fn tiny_cfg(out: PathBuf) -> RunConfig {
    RunConfig::from_str_with_overrides(
        "seed=11\n\
         world.source_speakers=5\n\
         world.target_speakers=4\n\
         world.utterances_per_speaker=8\n\
         world.input_dim=10\n\
         encoder.hidden_dim=16\n\
         encoder.embedding_dim=8\n\
         pretrain.epochs=4\n\
         adapt.epochs=3\n\
         batch.source=8\n\
         batch.target=8\n\
         trial.max_pairs=40\n\
         sweep.cells=0.5:5\n",
        None,
        Some(out),
    )
    .unwrap()
}

#[test]
fn generate_writes_expected_files_and_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(tmp.path().to_path_buf());
    let summary = cmd_generate(&cfg).unwrap();
    assert_eq!(summary.n_source, 40);
    assert_eq!(summary.n_target, 32);
    // trial.max_pairs caps targets; nontargets sampled to match.
    assert_eq!(summary.n_source_trials, 80);
    assert_eq!(summary.n_target_trials, 80);
    for file in [DATASET_FILE, SOURCE_TRIALS_FILE, TARGET_TRIALS_FILE] {
        assert!(tmp.path().join(file).exists(), "{file} missing");
    }
    // Row count in the trial file equals the configured count.
    let trial_rows = std::fs::read_to_string(tmp.path().join(TARGET_TRIALS_FILE))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .count();
    assert_eq!(trial_rows, summary.n_target_trials);

    let world = load_world(&cfg).unwrap();
    assert_eq!(world.source.len(), 40);
    assert_eq!(world.n_target_speakers, 4);
}

#[test]
fn generate_is_byte_identical_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(tmp.path().join("a"));
    cmd_generate(&cfg).unwrap();
    let first = std::fs::read(tmp.path().join("a").join(DATASET_FILE)).unwrap();
    cmd_generate(&cfg).unwrap();
    let second = std::fs::read(tmp.path().join("a").join(DATASET_FILE)).unwrap();
    assert_eq!(first, second);

    let mut other = tiny_cfg(tmp.path().join("b"));
    other.seed = 12;
    cmd_generate(&other).unwrap();
    let third = std::fs::read(tmp.path().join("b").join(DATASET_FILE)).unwrap();
    assert_ne!(first, third);
    // And the override is itself reproducible.
    cmd_generate(&other).unwrap();
    assert_eq!(
        third,
        std::fs::read(tmp.path().join("b").join(DATASET_FILE)).unwrap()
    );
}

#[test]
fn adapt_without_pretrain_names_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(tmp.path().to_path_buf());
    cmd_generate(&cfg).unwrap();
    let err = cmd_adapt(&cfg).unwrap_err();
    match err {
        PiclError::MissingArtifact { path, .. } => {
            assert!(path.ends_with(PRETRAINED_CKPT), "{path:?}");
        }
        other => panic!("expected MissingArtifact, got {other}"),
    }
}

#[test]
fn pretrain_without_dataset_names_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(tmp.path().to_path_buf());
    let err = cmd_pretrain(&cfg).unwrap_err();
    assert!(matches!(err, PiclError::MissingArtifact { .. }), "{err}");
}

#[test]
fn full_pipeline_reports_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(tmp.path().to_path_buf());
    cmd_generate(&cfg).unwrap();
    let pre_reports = cmd_pretrain(&cfg).unwrap();
    assert_eq!(pre_reports.len(), 4);
    let adapt_reports = cmd_adapt(&cfg).unwrap();
    assert_eq!(adapt_reports.len(), 3);
    assert!(tmp.path().join(ADAPTED_CKPT).exists());
    assert!(tmp.path().join("memory.ckpt").exists());

    // Evaluate the adapted model, then the pretrained one: two comparable
    // reports with EER as a percentage and minDCF to four decimals.
    let summary = cmd_evaluate(&cfg).unwrap();
    let lines = summary.metric_lines();
    for key in [
        "source_eer_pct=",
        "source_min_dcf=",
        "target_eer_pct=",
        "target_min_dcf=",
    ] {
        let line = lines.lines().find(|l| l.starts_with(key)).unwrap();
        let value = line.split('=').nth(1).unwrap();
        assert_eq!(
            value.split('.').nth(1).map(str::len),
            Some(4),
            "expected 4 decimals in {line}"
        );
    }
    let mut cfg_pre = cfg.clone();
    cfg_pre.eval_checkpoint = PRETRAINED_CKPT.into();
    let summary_pre = cmd_evaluate(&cfg_pre).unwrap();
    assert!(tmp.path().join("eval_adapted.txt").exists());
    assert!(tmp.path().join("eval_pretrained.txt").exists());
    assert!(tmp.path().join("scores_target_adapted.txt").exists());
    assert!(summary_pre.source.eer.is_finite());

    // Report files carry the effective-config echo for provenance.
    let report = std::fs::read_to_string(tmp.path().join("eval_adapted.txt")).unwrap();
    assert!(report.starts_with("#picl-report v1\n"));
    assert!(report.contains("# loss.tau=0.05\n"));
    assert!(report.contains("# seed=11\n"));

    // Score export format: enroll,test,score,label.
    let scores = std::fs::read_to_string(tmp.path().join("scores_target_adapted.txt")).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next(), Some("enroll,test,score,label"));
    let row = lines.next().unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 4);
    fields[2].parse::<f64>().unwrap();
    assert!(fields[3] == "target" || fields[3] == "nontarget");
}

#[test]
fn checkpoint_cadence_writes_intermediate_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(tmp.path().to_path_buf());
    cfg.checkpoint_every_epochs = 2;
    cmd_generate(&cfg).unwrap();
    cmd_pretrain(&cfg).unwrap();
    cmd_adapt(&cfg).unwrap();
    assert!(tmp.path().join("adapted_epoch1.ckpt").exists());
    assert!(tmp.path().join("memory_epoch1.ckpt").exists());
}

#[test]
fn sweep_row_count_matches_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(tmp.path().to_path_buf());
    cfg.sweep_cells = vec![(0.2, 0.0), (0.5, 0.0), (0.5, 5.0)];
    cmd_generate(&cfg).unwrap();
    let rows = cmd_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let data_rows = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("m,"))
        .count();
    assert_eq!(data_rows, 3);
    assert!(csv.contains("m,lambda,eer_pct,min_dcf"));
}

#[test]
fn table_shaped_default_grid_has_six_rows() {
    let cfg = RunConfig::from_str_with_overrides("seed=1\n", None, None).unwrap();
    assert_eq!(cfg.sweep_cells.len(), 6);
    assert_eq!(cfg.sweep_cells[0], (0.2, 0.0));
    assert_eq!(cfg.sweep_cells[4], (0.5, 5.0));
}

#[test]
fn dataset_trial_references_validated_on_load() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(tmp.path().to_path_buf());
    cmd_generate(&cfg).unwrap();
    // Corrupt the trial file with an out-of-range reference.
    let trials_path = tmp.path().join(TARGET_TRIALS_FILE);
    let mut text = std::fs::read_to_string(&trials_path).unwrap();
    text.push_str("9999,0,target\n");
    std::fs::write(&trials_path, text).unwrap();
    assert!(matches!(load_world(&cfg), Err(PiclError::Parse(_))));
}
