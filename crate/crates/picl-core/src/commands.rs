//! The five pipeline commands behind the CLI: generate, pretrain, adapt,
//! evaluate, sweep. Each command is resumable from its on-disk inputs and
//! writes deterministic artifacts under the configured output directory,
//! so a rerun with the same config and seed is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{
    dataset_to_string, generate_world, load_dataset, load_trials, trials_to_string, SpeakerWorld,
};
use crate::error::{PiclError, Result};
use crate::eval::{eer, min_dcf, score_trials_detailed, ScoredTrial};
use crate::trainer::{self, TrialMetrics};

pub const DATASET_FILE: &str = "dataset.txt";
pub const SOURCE_TRIALS_FILE: &str = "source_trials.txt";
pub const TARGET_TRIALS_FILE: &str = "target_trials.txt";
pub const PRETRAINED_CKPT: &str = "pretrained.ckpt";
pub const ADAPTED_CKPT: &str = "adapted.ckpt";
pub const MEMORY_CKPT: &str = "memory.ckpt";

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub n_source: usize,
    pub n_target: usize,
    pub n_source_trials: usize,
    pub n_target_trials: usize,
}

/// Generate the synthetic world and write dataset + trial files.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let world = generate_world(&cfg.world_spec())?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(
        cfg.out_dir.join(DATASET_FILE),
        dataset_to_string(&world.source, &world.target),
    )?;
    fs::write(
        cfg.out_dir.join(SOURCE_TRIALS_FILE),
        trials_to_string(&world.source_trials),
    )?;
    fs::write(
        cfg.out_dir.join(TARGET_TRIALS_FILE),
        trials_to_string(&world.target_trials),
    )?;

    let summary = GenerateSummary {
        n_source: world.source.len(),
        n_target: world.target.len(),
        n_source_trials: world.source_trials.len(),
        n_target_trials: world.target_trials.len(),
    };
    let mut report = cfg.echo_header();
    let _ = writeln!(report, "n_source_utterances={}", summary.n_source);
    let _ = writeln!(report, "n_target_utterances={}", summary.n_target);
    let _ = writeln!(report, "n_source_trials={}", summary.n_source_trials);
    let _ = writeln!(report, "n_target_trials={}", summary.n_target_trials);
    fs::write(cfg.out_dir.join("generate_report.txt"), report)?;
    Ok(summary)
}

/// Reload a generated world from the output directory.
pub fn load_world(cfg: &RunConfig) -> Result<SpeakerWorld> {
    let (source, target) = load_dataset(&cfg.out_dir.join(DATASET_FILE))?;
    let source_trials = load_trials(&cfg.out_dir.join(SOURCE_TRIALS_FILE))?;
    let target_trials = load_trials(&cfg.out_dir.join(TARGET_TRIALS_FILE))?;
    let input_dim = source
        .first()
        .or(target.first())
        .map(|u| u.features.dim())
        .ok_or_else(|| PiclError::Parse("dataset holds no utterances".into()))?;
    let n_source_speakers = source.iter().map(|u| u.speaker + 1).max().unwrap_or(0);
    let n_target_speakers = target.iter().map(|u| u.speaker + 1).max().unwrap_or(0);
    for (trials, pool, name) in [
        (&source_trials, &source, "source"),
        (&target_trials, &target, "target"),
    ] {
        for t in trials.iter() {
            if t.enroll >= pool.len() || t.test >= pool.len() {
                return Err(PiclError::Parse(format!(
                    "{name} trial references utterance beyond the {name} set"
                )));
            }
        }
    }
    Ok(SpeakerWorld {
        input_dim,
        n_source_speakers,
        n_target_speakers,
        source,
        target,
        source_trials,
        target_trials,
    })
}

fn write_training_report(
    cfg: &RunConfig,
    file: &str,
    reports: &[trainer::EpochReport],
) -> Result<()> {
    let mut text = cfg.echo_header();
    for r in reports {
        text.push_str(&r.record_line());
        text.push('\n');
    }
    fs::write(cfg.out_dir.join(file), text)?;
    Ok(())
}

/// Pretrain on the source set; writes `pretrained.ckpt`.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<Vec<trainer::EpochReport>> {
    let world = load_world(cfg)?;
    let (model, head, reports) = trainer::pretrain(&world, cfg)?;
    for r in &reports {
        eprintln!("pretrain {}", r.console_line());
    }
    checkpoint::save_model(&cfg.out_dir.join(PRETRAINED_CKPT), &model, &head, cfg.seed)?;
    write_training_report(cfg, "pretrain_report.txt", &reports)?;
    Ok(reports)
}

/// Adapt the pretrained model to the target set; writes `adapted.ckpt` and
/// the final memory snapshot.
pub fn cmd_adapt(cfg: &RunConfig) -> Result<Vec<trainer::EpochReport>> {
    let world = load_world(cfg)?;
    let (model, head, _) = checkpoint::load_model(&cfg.out_dir.join(PRETRAINED_CKPT))?;

    let out_dir = cfg.out_dir.clone();
    let every = cfg.checkpoint_every_epochs;
    let seed = cfg.seed;
    let mut hook = move |epoch: usize,
                         model: &crate::encoder::EncoderModel,
                         head: &crate::encoder::AamHead,
                         memory: &crate::memory::HybridMemory|
          -> Result<()> {
        if every > 0 && (epoch + 1) % every == 0 {
            checkpoint::save_model(
                &out_dir.join(format!("adapted_epoch{epoch}.ckpt")),
                model,
                head,
                seed,
            )?;
            checkpoint::save_memory(
                &out_dir.join(format!("memory_epoch{epoch}.ckpt")),
                memory,
                seed,
            )?;
        }
        Ok(())
    };
    let (model, head, memory, reports) = trainer::adapt(model, head, &world, cfg, Some(&mut hook))?;
    for r in &reports {
        eprintln!("adapt {}", r.console_line());
    }
    checkpoint::save_model(&cfg.out_dir.join(ADAPTED_CKPT), &model, &head, cfg.seed)?;
    checkpoint::save_memory(&cfg.out_dir.join(MEMORY_CKPT), &memory, cfg.seed)?;
    write_training_report(cfg, "adapt_report.txt", &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub source: TrialMetrics,
    pub target: TrialMetrics,
}

impl EvalSummary {
    /// Metric lines with EER as a percentage and minDCF, both to four
    /// decimal places.
    pub fn metric_lines(&self) -> String {
        format!(
            "source_eer_pct={:.4}\nsource_min_dcf={:.4}\ntarget_eer_pct={:.4}\ntarget_min_dcf={:.4}\n",
            self.source.eer * 100.0,
            self.source.min_dcf,
            self.target.eer * 100.0,
            self.target.min_dcf,
        )
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "trials    eer(%)    minDCF");
        let _ = writeln!(
            out,
            "source    {:>7.4}   {:>7.4}",
            self.source.eer * 100.0,
            self.source.min_dcf
        );
        let _ = writeln!(
            out,
            "target    {:>7.4}   {:>7.4}",
            self.target.eer * 100.0,
            self.target.min_dcf
        );
        out
    }
}

fn scores_to_string(rows: &[ScoredTrial]) -> String {
    let mut out = String::from("enroll,test,score,label\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.enroll,
            r.test,
            r.score,
            if r.is_target { "target" } else { "nontarget" }
        );
    }
    out
}

/// Evaluate the configured checkpoint on both trial lists; writes a
/// metrics report and exportable score files.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    let world = load_world(cfg)?;
    let ckpt_path = {
        let p = Path::new(&cfg.eval_checkpoint);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            cfg.out_dir.join(p)
        }
    };
    let (model, _, _) = checkpoint::load_model(&ckpt_path)?;

    let (source_set, source_rows) =
        score_trials_detailed(&model, &world.source, &world.source_trials)?;
    let (target_set, target_rows) =
        score_trials_detailed(&model, &world.target, &world.target_trials)?;
    let dcf = cfg.dcf_params();
    let (source_eer, source_eer_th) = eer(&source_set)?;
    let (source_dcf, source_dcf_th) = min_dcf(&source_set, &dcf)?;
    let (target_eer, target_eer_th) = eer(&target_set)?;
    let (target_dcf, target_dcf_th) = min_dcf(&target_set, &dcf)?;
    let summary = EvalSummary {
        checkpoint: ckpt_path.clone(),
        source: TrialMetrics {
            eer: source_eer,
            eer_threshold: source_eer_th,
            min_dcf: source_dcf,
            dcf_threshold: source_dcf_th,
        },
        target: TrialMetrics {
            eer: target_eer,
            eer_threshold: target_eer_th,
            min_dcf: target_dcf,
            dcf_threshold: target_dcf_th,
        },
    };

    let stem = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let mut report = cfg.echo_header();
    report.push_str(&summary.metric_lines());
    report.push_str(&summary.table());
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(format!("eval_{stem}.txt")), report)?;
    fs::write(
        cfg.out_dir.join(format!("scores_source_{stem}.txt")),
        scores_to_string(&source_rows),
    )?;
    fs::write(
        cfg.out_dir.join(format!("scores_target_{stem}.txt")),
        scores_to_string(&target_rows),
    )?;
    Ok(summary)
}

/// Run the momentum/lambda ablation grid; writes `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<trainer::SweepRow>> {
    let world = load_world(cfg)?;
    let rows = trainer::sweep(&world, cfg)?;
    let mut csv = String::new();
    for (k, v) in cfg.effective_entries() {
        let _ = writeln!(csv, "# {k}={v}");
    }
    csv.push_str("m,lambda,eer_pct,min_dcf\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.4},{:.4}",
            row.momentum,
            row.lambda,
            row.target_eer * 100.0,
            row.target_min_dcf
        );
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("sweep.csv"), csv)?;
    Ok(rows)
}
