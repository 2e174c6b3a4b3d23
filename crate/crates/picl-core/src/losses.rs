//! The three training loss components and their analytic gradients:
//! prototype contrastive loss, instance contrastive loss, and the combined
//! objective `L = L_s + L_p + λ·L_i`.
//!
//! Prototypes are non-parametric memory: gradients never flow into them
//! (they are updated by the momentum rules instead, and letting backprop
//! touch them would double-count updates). Gradients with respect to
//! embeddings exclude the final-normalization Jacobian — the encoder
//! backward owns that factor.

use crate::encoder::AamHead;
use crate::error::{PiclError, Result};
use crate::linalg::{Matrix, Vector};
use crate::memory::{ClusterPrototypes, HybridMemory};

/// Temperature and instance-loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    /// Apply the instance loss to source items too (off by default: its
    /// purpose is target robustness).
    pub instance_on_source: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.05,
            lambda: 5.0,
            instance_on_source: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(PiclError::Config(format!("tau {} must be > 0", self.tau)));
        }
        if !(self.lambda >= 0.0) {
            return Err(PiclError::Config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Which prototype is the positive for a query embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositiveRef {
    SourceClass(usize),
    TargetCluster(usize),
}

/// Softmax cross-entropy of the query against every prototype in the
/// hybrid memory (source class prototypes followed by target cluster
/// prototypes) at temperature `tau`.
///
/// Returns the loss and its gradient with respect to the query embedding.
pub fn prototype_loss(
    f: &Vector,
    positive: PositiveRef,
    memory: &HybridMemory,
    clusters: &ClusterPrototypes,
    cfg: &LossConfig,
) -> Result<(f64, Vector)> {
    cfg.validate()?;
    let n_s = memory.n_source_classes();
    let n_c = clusters.n_clusters();
    if n_s + n_c == 0 {
        return Err(PiclError::ContractViolation(
            "prototype loss with no prototypes".into(),
        ));
    }
    let positive_index = match positive {
        PositiveRef::SourceClass(k) => {
            if k >= n_s {
                return Err(PiclError::ContractViolation(format!(
                    "positive source class {k} out of range ({n_s})"
                )));
            }
            k
        }
        PositiveRef::TargetCluster(j) => {
            if j >= n_c {
                return Err(PiclError::ContractViolation(format!(
                    "positive target cluster {j} out of range ({n_c})"
                )));
            }
            n_s + j
        }
    };

    let prototypes = memory
        .source_prototypes()
        .iter()
        .chain(clusters.prototypes.iter());
    let mut logits = Vec::with_capacity(n_s + n_c);
    for z in prototypes.clone() {
        if z.dim() != f.dim() {
            return Err(PiclError::ShapeMismatch(format!(
                "prototype dim {} vs embedding dim {}",
                z.dim(),
                f.dim()
            )));
        }
        let sim: f64 = z.0.iter().zip(&f.0).map(|(a, b)| a * b).sum();
        logits.push(sim / cfg.tau);
    }

    // Max-subtracted softmax keeps the exponentials bounded at small tau.
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|l| (l - max_logit).exp()).sum();
    let loss = max_logit + sum_exp.ln() - logits[positive_index];

    let mut grad = Vector::zeros(f.dim());
    for (k, z) in prototypes.enumerate() {
        let p = (logits[k] - max_logit).exp() / sum_exp;
        let residual = p - if k == positive_index { 1.0 } else { 0.0 };
        let coeff = residual / cfg.tau;
        for (g, zj) in grad.0.iter_mut().zip(&z.0) {
            *g += coeff * zj;
        }
    }
    Ok((loss, grad))
}

/// `L_i = 1 − ⟨f, f'⟩` between two views of the same instance, with
/// gradients `−f'` and `−f`. Both views carry gradient (no asymmetric
/// stop-gradient).
pub fn instance_loss(f: &Vector, f_prime: &Vector) -> Result<(f64, Vector, Vector)> {
    if f.dim() != f_prime.dim() {
        return Err(PiclError::ShapeMismatch(format!(
            "view dims {} vs {}",
            f.dim(),
            f_prime.dim()
        )));
    }
    let sim: f64 = f.0.iter().zip(&f_prime.0).map(|(a, b)| a * b).sum();
    let loss = 1.0 - sim;
    let grad_f = f_prime.scale(-1.0);
    let grad_f_prime = f.scale(-1.0);
    Ok((loss, grad_f, grad_f_prime))
}

/// One source item in a batch: embedding, class label, and (only when the
/// instance loss is extended to source items) an augmented-view embedding.
#[derive(Debug, Clone)]
pub struct SourceTerm {
    pub embedding: Vector,
    pub label: usize,
    pub view_embedding: Option<Vector>,
}

/// One target item in a batch: fresh embedding, pseudo label, and the
/// embedding of an augmented view of the same utterance.
#[derive(Debug, Clone)]
pub struct TargetTerm {
    pub embedding: Vector,
    pub view_embedding: Vector,
    pub pseudo_label: usize,
}

/// Combined loss value and per-embedding gradients for one batch.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub total: f64,
    pub l_s: f64,
    pub l_p: f64,
    pub l_i: f64,
    /// d total / d f for each source item.
    pub source_grads: Vec<Vector>,
    /// d total / d f for each source item's view (only when the instance
    /// loss covers source items).
    pub source_view_grads: Vec<Option<Vector>>,
    /// d total / d f for each target item (un-augmented view).
    pub target_grads: Vec<Vector>,
    /// d total / d f' for each target item's augmented view.
    pub target_view_grads: Vec<Vector>,
    /// d total / d head weights, from the source classification term.
    pub head_grads: Matrix,
}

/// `L = L_s + L_p + λ·L_i` over a batch.
///
/// Each component is averaged, not summed, so `λ` keeps its meaning across
/// batch sizes: `L_s` over source items, `L_p` over all items with a
/// prototype positive, `L_i` over view pairs. `memory_ctx` is `None`
/// during pretraining, where no prototypes exist yet and the loss
/// degenerates to `L_s`.
pub fn combined_loss(
    head: &AamHead,
    memory_ctx: Option<(&HybridMemory, &ClusterPrototypes)>,
    source: &[SourceTerm],
    target: &[TargetTerm],
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(PiclError::Config(
            "batch has no source items; the source classification loss is undefined".into(),
        ));
    }
    if !target.is_empty() && memory_ctx.is_none() {
        return Err(PiclError::ContractViolation(
            "target items require a hybrid memory and cluster prototypes".into(),
        ));
    }

    let emb_dim = source[0].embedding.dim();
    let b_s = source.len();
    let b_t = target.len();
    let n_items = b_s + b_t;

    let mut source_grads = vec![Vector::zeros(emb_dim); b_s];
    let mut source_view_grads: Vec<Option<Vector>> = vec![None; b_s];
    let mut target_grads = vec![Vector::zeros(emb_dim); b_t];
    let mut target_view_grads = vec![Vector::zeros(emb_dim); b_t];
    let mut head_grads = Matrix::zeros(head.weights.rows(), head.weights.cols());

    // L_s: classification of source items.
    let mut l_s_sum = 0.0;
    let w_s = 1.0 / b_s as f64;
    for (i, item) in source.iter().enumerate() {
        let out = head.loss(&item.embedding, item.label)?;
        l_s_sum += out.loss;
        for (g, gs) in source_grads[i].0.iter_mut().zip(&out.grad_embedding.0) {
            *g += w_s * gs;
        }
        for (acc, g) in head_grads
            .as_mut_slice()
            .iter_mut()
            .zip(out.grad_weights.as_slice())
        {
            *acc += w_s * g;
        }
    }
    let l_s = l_s_sum * w_s;

    // L_p: every item against all prototypes from both domains.
    let mut l_p = 0.0;
    if let Some((memory, clusters)) = memory_ctx {
        let w_p = 1.0 / n_items as f64;
        let mut l_p_sum = 0.0;
        for (i, item) in source.iter().enumerate() {
            let (lp, grad) = prototype_loss(
                &item.embedding,
                PositiveRef::SourceClass(item.label),
                memory,
                clusters,
                cfg,
            )?;
            l_p_sum += lp;
            for (g, gp) in source_grads[i].0.iter_mut().zip(&grad.0) {
                *g += w_p * gp;
            }
        }
        for (j, item) in target.iter().enumerate() {
            let (lp, grad) = prototype_loss(
                &item.embedding,
                PositiveRef::TargetCluster(item.pseudo_label),
                memory,
                clusters,
                cfg,
            )?;
            l_p_sum += lp;
            for (g, gp) in target_grads[j].0.iter_mut().zip(&grad.0) {
                *g += w_p * gp;
            }
        }
        l_p = l_p_sum * w_p;
    }

    // L_i: view pairs (target items; source too when configured).
    let mut n_pairs = target.len();
    if cfg.instance_on_source {
        n_pairs += source.iter().filter(|s| s.view_embedding.is_some()).count();
    }
    let mut l_i = 0.0;
    if n_pairs > 0 {
        let w_i = 1.0 / n_pairs as f64;
        let mut l_i_sum = 0.0;
        for (j, item) in target.iter().enumerate() {
            let (li, gf, gfp) = instance_loss(&item.embedding, &item.view_embedding)?;
            l_i_sum += li;
            for (g, gi) in target_grads[j].0.iter_mut().zip(&gf.0) {
                *g += cfg.lambda * w_i * gi;
            }
            for (g, gi) in target_view_grads[j].0.iter_mut().zip(&gfp.0) {
                *g += cfg.lambda * w_i * gi;
            }
        }
        if cfg.instance_on_source {
            for (i, item) in source.iter().enumerate() {
                let Some(view) = &item.view_embedding else { continue };
                let (li, gf, gfp) = instance_loss(&item.embedding, view)?;
                l_i_sum += li;
                for (g, gi) in source_grads[i].0.iter_mut().zip(&gf.0) {
                    *g += cfg.lambda * w_i * gi;
                }
                let slot = source_view_grads[i]
                    .get_or_insert_with(|| Vector::zeros(emb_dim));
                for (g, gi) in slot.0.iter_mut().zip(&gfp.0) {
                    *g += cfg.lambda * w_i * gi;
                }
            }
        }
        l_i = l_i_sum * w_i;
    }

    Ok(CombinedLoss {
        total: l_s + l_p + cfg.lambda * l_i,
        l_s,
        l_p,
        l_i,
        source_grads,
        source_view_grads,
        target_grads,
        target_view_grads,
        head_grads,
    })
}
