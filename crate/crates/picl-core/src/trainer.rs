//! Two-stage training: source pretraining with the margin classification
//! loss, then per-epoch iterative adaptation — cluster the target memory,
//! train on the combined objective, and apply the momentum memory updates.
//!
//! Step order within a batch is fixed: forward → loss → backward →
//! optimizer step → source prototype updates → target instance updates.
//! Memory updates use the embeddings computed by that batch's forward pass
//! (pre-step), so the loss is a pure function of pre-step state.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::clustering::{cluster_target, cluster_target_with_points, PseudoLabels};
use crate::config::{ClusterSource, RunConfig};
use crate::data::{
    adapt_epoch_batches, make_view, pretrain_epoch_batches, SpeakerWorld, Utterance,
};
use crate::encoder::{AamHead, EncoderGradients, EncoderModel, LrSchedule, SgdOptimizer};
use crate::error::{PiclError, Result};
use crate::eval::{eer, min_dcf, score_trials};
use crate::linalg::Vector;
use crate::losses::{combined_loss, SourceTerm, TargetTerm};
use crate::memory::HybridMemory;
use crate::rng;

/// Per-epoch training diagnostics. `wall_secs` is console-only: persisted
/// reports must be byte-identical across reruns, so timing never reaches
/// them.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_l_s: f64,
    pub mean_l_p: f64,
    pub mean_l_i: f64,
    pub mean_total: f64,
    pub n_clusters: usize,
    pub n_outliers: usize,
    /// Majority-vote purity of pseudo labels against the hidden ground
    /// truth; diagnostic only, absent during pretraining.
    pub purity: Option<f64>,
    pub wall_secs: f64,
}

impl EpochReport {
    /// Deterministic line persisted in report files.
    pub fn record_line(&self) -> String {
        format!(
            "epoch={} l_s={:.6} l_p={:.6} l_i={:.6} total={:.6} n_clusters={} n_outliers={} purity={}",
            self.epoch,
            self.mean_l_s,
            self.mean_l_p,
            self.mean_l_i,
            self.mean_total,
            self.n_clusters,
            self.n_outliers,
            self.purity.map_or("na".to_string(), |p| format!("{p:.4}")),
        )
    }

    /// Console line; includes wall time.
    pub fn console_line(&self) -> String {
        format!("{} wall_secs={:.2}", self.record_line(), self.wall_secs)
    }

    pub fn is_finite(&self) -> bool {
        self.mean_l_s.is_finite()
            && self.mean_l_p.is_finite()
            && self.mean_l_i.is_finite()
            && self.mean_total.is_finite()
    }
}

fn source_class_count(source: &[Utterance]) -> Result<usize> {
    let n = source
        .iter()
        .map(|u| u.speaker + 1)
        .max()
        .ok_or_else(|| PiclError::Config("empty source train set".into()))?;
    Ok(n)
}

fn pretrain_margin(cfg: &RunConfig, epoch: usize) -> f64 {
    // Linear ramp 0 → aam.margin across pretraining epochs.
    if cfg.pretrain_epochs <= 1 {
        return cfg.aam_margin;
    }
    cfg.aam_margin * epoch as f64 / (cfg.pretrain_epochs - 1) as f64
}

/// Pretrain the encoder and classification head on the labeled source set.
pub fn pretrain(
    world: &SpeakerWorld,
    cfg: &RunConfig,
) -> Result<(EncoderModel, AamHead, Vec<EpochReport>)> {
    cfg.validate()?;
    let n_classes = source_class_count(&world.source)?;
    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut model = EncoderModel::init(&cfg.encoder_config(), &mut init_rng)?;
    let mut head = AamHead::init(
        n_classes,
        cfg.encoder_embedding_dim,
        cfg.aam_scale,
        &mut init_rng,
    )?;
    let mut reports = Vec::new();
    if cfg.pretrain_epochs == 0 {
        return Ok((model, head, reports));
    }

    let n_source = world.source.len();
    let batches_per_epoch = n_source.div_ceil(cfg.batch_source);
    let schedule = LrSchedule::new(
        cfg.optimizer_lr_start,
        cfg.optimizer_lr_end,
        cfg.pretrain_epochs * batches_per_epoch,
    )?;
    let mut opt = SgdOptimizer::new(schedule, cfg.optimizer_momentum)?;
    let mut batch_rng = rng::stream(cfg.seed, "batch.pretrain");
    let mut augment_rng = rng::stream(cfg.seed, "augment.pretrain");
    let augment_cfg = cfg.augment_config();
    let mut t = 0usize;

    for epoch in 0..cfg.pretrain_epochs {
        let started = Instant::now();
        head.set_margin(pretrain_margin(cfg, epoch))?;
        let mut l_s_sum = 0.0;
        let mut n_items = 0usize;
        for batch in pretrain_epoch_batches(n_source, cfg.batch_source, &mut batch_rng) {
            let weight = 1.0 / batch.source.len() as f64;
            let mut grads = EncoderGradients::zeros(&cfg.encoder_config());
            let mut head_grads =
                crate::linalg::Matrix::zeros(head.weights.rows(), head.weights.cols());
            for &i in &batch.source {
                let utt = &world.source[i];
                let input = if cfg.pretrain_augment {
                    make_view(utt, &augment_cfg, &mut augment_rng).features
                } else {
                    utt.features.clone()
                };
                let (embedding, tape) = model.forward(&input)?;
                let out = head.loss(&embedding, utt.speaker)?;
                l_s_sum += out.loss;
                n_items += 1;
                grads.accumulate(&model.backward(&tape, &out.grad_embedding.scale(weight))?);
                for (acc, g) in head_grads
                    .as_mut_slice()
                    .iter_mut()
                    .zip(out.grad_weights.as_slice())
                {
                    *acc += weight * g;
                }
            }
            opt.step(&mut model, &mut head, &grads, &head_grads, t)?;
            t += 1;
        }
        let mean_l_s = l_s_sum / n_items as f64;
        let report = EpochReport {
            epoch,
            mean_l_s,
            mean_l_p: 0.0,
            mean_l_i: 0.0,
            mean_total: mean_l_s,
            n_clusters: 0,
            n_outliers: 0,
            purity: None,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if !report.is_finite() {
            return Err(PiclError::Divergence(format!(
                "non-finite pretraining loss at epoch {epoch}"
            )));
        }
        reports.push(report);
    }
    Ok((model, head, reports))
}

/// Observer invoked after each adaptation epoch (checkpoint cadence).
pub type EpochHook<'a> =
    &'a mut dyn FnMut(usize, &EncoderModel, &AamHead, &HybridMemory) -> Result<()>;

/// Adapt a pretrained model to the unlabeled target set.
pub fn adapt(
    mut model: EncoderModel,
    mut head: AamHead,
    world: &SpeakerWorld,
    cfg: &RunConfig,
    mut epoch_hook: Option<EpochHook<'_>>,
) -> Result<(EncoderModel, AamHead, HybridMemory, Vec<EpochReport>)> {
    cfg.validate()?;
    if world.target.is_empty() {
        return Err(PiclError::Config("empty target adapt set".into()));
    }
    head.set_margin(cfg.aam_margin)?; // fixed margin during adaptation
    if cfg.adapt_reinit_head {
        let n_classes = head.n_classes();
        let mut rng = rng::stream(cfg.seed, "adapt.head");
        head = AamHead::init(n_classes, cfg.encoder_embedding_dim, cfg.aam_scale, &mut rng)?;
        head.set_margin(cfg.aam_margin)?;
    }

    // Extract embeddings with the pretrained encoder and fill the memory.
    let source_embeddings: Vec<Vector> = world
        .source
        .iter()
        .map(|u| model.embed(&u.features))
        .collect::<Result<_>>()?;
    let source_labels: Vec<usize> = world.source.iter().map(|u| u.speaker).collect();
    let target_embeddings: Vec<Vector> = world
        .target
        .iter()
        .map(|u| model.embed(&u.features))
        .collect::<Result<_>>()?;
    let mut memory = HybridMemory::initialize(
        &source_embeddings,
        &source_labels,
        source_class_count(&world.source)?,
        target_embeddings,
        cfg.memory_momentum_source,
        cfg.memory_momentum_target,
        cfg.memory_renormalize,
    )?;

    let mut reports = Vec::new();
    if cfg.adapt_epochs == 0 {
        return Ok((model, head, memory, reports));
    }

    let n_source = world.source.len();
    let n_target = world.target.len();
    let batches_per_epoch = n_target.div_ceil(cfg.batch_target);
    // Desk-scale adaptation runs orders of magnitude fewer steps than a
    // corpus-scale stage; the stage-specific start keeps the integrated
    // movement meaningful.
    let lr_start = if cfg.adapt_lr_start > 0.0 {
        cfg.adapt_lr_start
    } else {
        cfg.optimizer_lr_start
    };
    let schedule = LrSchedule::new(
        lr_start,
        cfg.optimizer_lr_end.min(lr_start),
        cfg.adapt_epochs * batches_per_epoch,
    )?;
    let mut opt = SgdOptimizer::new(schedule, cfg.optimizer_momentum)?;
    let mut batch_rng = rng::stream(cfg.seed, "batch.adapt");
    let mut augment_rng = rng::stream(cfg.seed, "augment");
    let loss_cfg = cfg.loss_config();
    let dbscan_params = cfg.dbscan_params();
    let mut t = 0usize;

    for epoch in 0..cfg.adapt_epochs {
        let started = Instant::now();

        // (a) cluster the target instances and fix pseudo labels for the
        // epoch. Cluster prototypes are recomputed from the live memory
        // every batch below.
        let (pseudo, _) = match cfg.cluster_source {
            ClusterSource::Memory => cluster_target(&memory, &dbscan_params)?,
            ClusterSource::Reextract => {
                let points: Vec<Vector> = world
                    .target
                    .iter()
                    .map(|u| model.embed(&u.features))
                    .collect::<Result<_>>()?;
                cluster_target_with_points(&memory, &points, &dbscan_params)?
            }
        };
        if pseudo.n_clusters == 1 {
            eprintln!("warning: epoch {epoch}: clustering collapsed to a single cluster");
        }

        // (b) iterate batches.
        let mut sums = LossSums::default();
        for batch in adapt_epoch_batches(
            n_source,
            n_target,
            cfg.batch_source,
            cfg.batch_target,
            &mut batch_rng,
        )? {
            t = run_adapt_batch(
                &batch,
                world,
                &pseudo,
                &mut model,
                &mut head,
                &mut memory,
                &mut opt,
                &loss_cfg,
                cfg,
                &mut augment_rng,
                &mut sums,
                t,
            )?;
        }

        let report = EpochReport {
            epoch,
            mean_l_s: sums.l_s / sums.source_items as f64,
            mean_l_p: sums.l_p / sums.batches as f64,
            mean_l_i: sums.l_i / sums.target_items as f64,
            mean_total: sums.total / sums.batches as f64,
            n_clusters: pseudo.n_clusters,
            n_outliers: pseudo.n_outliers_promoted,
            purity: Some(pseudo_label_purity(&pseudo, &world.target)),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if !report.is_finite() {
            return Err(PiclError::Divergence(format!(
                "non-finite adaptation loss at epoch {epoch}"
            )));
        }
        if let Some(hook) = epoch_hook.as_mut() {
            hook(epoch, &model, &head, &memory)?;
        }
        reports.push(report);
    }
    Ok((model, head, memory, reports))
}

#[derive(Default)]
struct LossSums {
    l_s: f64,
    l_p: f64,
    l_i: f64,
    total: f64,
    source_items: usize,
    target_items: usize,
    batches: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_adapt_batch(
    batch: &crate::data::Batch,
    world: &SpeakerWorld,
    pseudo: &PseudoLabels,
    model: &mut EncoderModel,
    head: &mut AamHead,
    memory: &mut HybridMemory,
    opt: &mut SgdOptimizer,
    loss_cfg: &crate::losses::LossConfig,
    cfg: &RunConfig,
    augment_rng: &mut ChaCha8Rng,
    sums: &mut LossSums,
    t: usize,
) -> Result<usize> {
    let augment_cfg = cfg.augment_config();

    let mut source_terms = Vec::with_capacity(batch.source.len());
    let mut source_tapes = Vec::with_capacity(batch.source.len());
    let mut source_view_tapes = Vec::with_capacity(batch.source.len());
    for &i in &batch.source {
        let utt = &world.source[i];
        let (embedding, tape) = model.forward(&utt.features)?;
        let view_embedding = if loss_cfg.instance_on_source {
            let view = make_view(utt, &augment_cfg, augment_rng);
            let (ve, vt) = model.forward(&view.features)?;
            source_view_tapes.push(Some(vt));
            Some(ve)
        } else {
            source_view_tapes.push(None);
            None
        };
        source_terms.push(SourceTerm {
            embedding,
            label: utt.speaker,
            view_embedding,
        });
        source_tapes.push(tape);
    }

    let mut target_terms = Vec::with_capacity(batch.target.len());
    let mut target_tapes = Vec::with_capacity(batch.target.len());
    let mut view_tapes = Vec::with_capacity(batch.target.len());
    for &i in &batch.target {
        let utt = &world.target[i];
        let (embedding, tape) = model.forward(&utt.features)?;
        let view = make_view(utt, &augment_cfg, augment_rng);
        let (view_embedding, view_tape) = model.forward(&view.features)?;
        target_terms.push(TargetTerm {
            embedding,
            view_embedding,
            pseudo_label: pseudo.labels[i],
        });
        target_tapes.push(tape);
        view_tapes.push(view_tape);
    }

    // Prototypes reflect the memory as of this batch.
    let prototypes = memory.compute_cluster_prototypes(&pseudo.labels)?;
    let out = combined_loss(
        head,
        Some((&*memory, &prototypes)),
        &source_terms,
        &target_terms,
        loss_cfg,
    )?;

    let mut grads = EncoderGradients::zeros(&cfg.encoder_config());
    for (tape, grad) in source_tapes.iter().zip(&out.source_grads) {
        grads.accumulate(&model.backward(tape, grad)?);
    }
    for (tape, grad) in source_view_tapes.iter().zip(&out.source_view_grads) {
        if let (Some(tape), Some(grad)) = (tape, grad) {
            grads.accumulate(&model.backward(tape, grad)?);
        }
    }
    for (tape, grad) in target_tapes.iter().zip(&out.target_grads) {
        grads.accumulate(&model.backward(tape, grad)?);
    }
    for (tape, grad) in view_tapes.iter().zip(&out.target_view_grads) {
        grads.accumulate(&model.backward(tape, grad)?);
    }

    opt.step(model, head, &grads, &out.head_grads, t)?;

    // Memory updates, after the optimizer step, using this batch's
    // pre-step embeddings: class prototypes first, then instances.
    let n_classes = memory.n_source_classes();
    let mut by_class: Vec<Vec<Vector>> = vec![Vec::new(); n_classes];
    for term in &source_terms {
        by_class[term.label].push(term.embedding.clone());
    }
    for (k, class_embeddings) in by_class.iter().enumerate() {
        memory.update_source_prototype(k, class_embeddings)?;
    }
    for (&i, term) in batch.target.iter().zip(&target_terms) {
        memory.update_target_instance(i, &term.embedding)?;
    }

    sums.l_s += out.l_s * source_terms.len() as f64;
    sums.l_p += out.l_p;
    sums.l_i += out.l_i * target_terms.len() as f64;
    sums.total += out.total;
    sums.source_items += source_terms.len();
    sums.target_items += target_terms.len();
    sums.batches += 1;
    Ok(t + 1)
}

/// Majority-vote purity of the pseudo labels against hidden speaker ids.
fn pseudo_label_purity(pseudo: &PseudoLabels, target: &[Utterance]) -> f64 {
    let n_speakers = target.iter().map(|u| u.speaker + 1).max().unwrap_or(0);
    let mut counts = vec![vec![0usize; n_speakers]; pseudo.n_clusters];
    for (label, utt) in pseudo.labels.iter().zip(target) {
        counts[*label][utt.speaker] += 1;
    }
    let majority: usize = counts
        .iter()
        .map(|c| c.iter().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / target.len() as f64
}

/// Verification metrics of a model on one trial list.
#[derive(Debug, Clone, Copy)]
pub struct TrialMetrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
}

pub fn evaluate_on(
    model: &EncoderModel,
    utterances: &[Utterance],
    trials: &[crate::data::Trial],
    cfg: &RunConfig,
) -> Result<TrialMetrics> {
    let scored = score_trials(model, utterances, trials)?;
    let (eer_value, eer_threshold) = eer(&scored)?;
    let (dcf_value, dcf_threshold) = min_dcf(&scored, &cfg.dcf_params())?;
    Ok(TrialMetrics {
        eer: eer_value,
        eer_threshold,
        min_dcf: dcf_value,
        dcf_threshold,
    })
}

/// One ablation grid cell result.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub momentum: f64,
    pub lambda: f64,
    pub target_eer: f64,
    pub target_min_dcf: f64,
}

/// Run the momentum/lambda grid: one shared pretraining, then one
/// adaptation and evaluation per cell.
pub fn sweep(world: &SpeakerWorld, cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let (model, head, _) = pretrain(world, cfg)?;
    let mut rows = Vec::with_capacity(cfg.sweep_cells.len());
    for &(momentum, lambda) in &cfg.sweep_cells {
        let mut cell_cfg = cfg.clone();
        cell_cfg.memory_momentum_source = momentum;
        cell_cfg.memory_momentum_target = momentum;
        cell_cfg.loss_lambda = lambda;
        cell_cfg.validate()?;
        let (adapted, _, _, _) = adapt(model.clone(), head.clone(), world, &cell_cfg, None)?;
        let metrics = evaluate_on(&adapted, &world.target, &world.target_trials, &cell_cfg)?;
        rows.push(SweepRow {
            momentum,
            lambda,
            target_eer: metrics.eer,
            target_min_dcf: metrics.min_dcf,
        });
    }
    Ok(rows)
}
