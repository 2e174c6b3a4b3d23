//! Finite-difference scaffolding: flatten parameters, perturb one at a
//! time, and compare analytic gradients with central differences.

use picl_core::encoder::{AamHead, EncoderModel};
use picl_core::error::Result;
use picl_core::linalg::Vector;
use picl_core::losses::{
    combined_loss, instance_loss, prototype_loss, LossConfig, PositiveRef, SourceTerm, TargetTerm,
};
use picl_core::memory::{ClusterPrototypes, HybridMemory};

/// Which scalar objective the check differentiates.
#[derive(Debug, Clone, Copy)]
pub enum GradTarget {
    Aam { label: usize },
    Prototype { positive: PositiveRef },
    Instance,
    Combined { label: usize, cluster: usize },
}

impl GradTarget {
    /// Scalar loss through the full encoder for the current parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_value(
        &self,
        model: &EncoderModel,
        head: &AamHead,
        memory: &HybridMemory,
        clusters: &ClusterPrototypes,
        x: &Vector,
        x_view: &Vector,
        cfg: &LossConfig,
    ) -> Result<f64> {
        match *self {
            GradTarget::Aam { label } => {
                let (f, _) = model.forward(x)?;
                Ok(head.loss(&f, label)?.loss)
            }
            GradTarget::Prototype { positive } => {
                let (f, _) = model.forward(x)?;
                Ok(prototype_loss(&f, positive, memory, clusters, cfg)?.0)
            }
            GradTarget::Instance => {
                let (f, _) = model.forward(x)?;
                let (f_view, _) = model.forward(x_view)?;
                Ok(instance_loss(&f, &f_view)?.0)
            }
            GradTarget::Combined { label, cluster } => {
                let (f_src, _) = model.forward(x)?;
                let (f_tgt, _) = model.forward(x_view)?;
                let (f_tgt_view, _) = model.forward(x)?;
                let source = vec![SourceTerm {
                    embedding: f_src,
                    label,
                    view_embedding: None,
                }];
                let target = vec![TargetTerm {
                    embedding: f_tgt,
                    view_embedding: f_tgt_view,
                    pseudo_label: cluster,
                }];
                let out =
                    combined_loss(head, Some((memory, clusters)), &source, &target, cfg)?;
                Ok(out.total)
            }
        }
    }

    /// Analytic gradient for every flattened parameter, via the encoder
    /// backward pass and the heads' weight gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn analytic_gradients(
        &self,
        model: &EncoderModel,
        head: &AamHead,
        memory: &HybridMemory,
        clusters: &ClusterPrototypes,
        x: &Vector,
        x_view: &Vector,
        cfg: &LossConfig,
    ) -> Result<Vec<f64>> {
        let zero_head = || vec![0.0; head.weights.rows() * head.weights.cols()];
        let (enc, head_grads) = match *self {
            GradTarget::Aam { label } => {
                let (f, tape) = model.forward(x)?;
                let out = head.loss(&f, label)?;
                let enc = model.backward(&tape, &out.grad_embedding)?;
                (enc, out.grad_weights.as_slice().to_vec())
            }
            GradTarget::Prototype { positive } => {
                let (f, tape) = model.forward(x)?;
                let (_, grad) = prototype_loss(&f, positive, memory, clusters, cfg)?;
                (model.backward(&tape, &grad)?, zero_head())
            }
            GradTarget::Instance => {
                let (f, tape) = model.forward(x)?;
                let (f_view, tape_view) = model.forward(x_view)?;
                let (_, gf, gfv) = instance_loss(&f, &f_view)?;
                let mut enc = model.backward(&tape, &gf)?;
                enc.accumulate(&model.backward(&tape_view, &gfv)?);
                (enc, zero_head())
            }
            GradTarget::Combined { label, cluster } => {
                let (f_src, tape_src) = model.forward(x)?;
                let (f_tgt, tape_tgt) = model.forward(x_view)?;
                let (f_tgt_view, tape_tgt_view) = model.forward(x)?;
                let source = vec![SourceTerm {
                    embedding: f_src,
                    label,
                    view_embedding: None,
                }];
                let target = vec![TargetTerm {
                    embedding: f_tgt,
                    view_embedding: f_tgt_view,
                    pseudo_label: cluster,
                }];
                let out =
                    combined_loss(head, Some((memory, clusters)), &source, &target, cfg)?;
                let mut enc = model.backward(&tape_src, &out.source_grads[0])?;
                enc.accumulate(&model.backward(&tape_tgt, &out.target_grads[0])?);
                enc.accumulate(&model.backward(&tape_tgt_view, &out.target_view_grads[0])?);
                (enc, out.head_grads.as_slice().to_vec())
            }
        };
        let mut flat = Vec::new();
        flat.extend_from_slice(enc.w1.as_slice());
        flat.extend_from_slice(enc.b1.as_slice());
        flat.extend_from_slice(enc.w2.as_slice());
        flat.extend_from_slice(enc.b2.as_slice());
        flat.extend_from_slice(enc.w3.as_slice());
        flat.extend_from_slice(enc.b3.as_slice());
        flat.extend_from_slice(&head_grads);
        Ok(flat)
    }
}

/// Flattened parameter vector in the same order the gradients use.
pub fn flatten_params(model: &EncoderModel, head: &AamHead) -> Vec<f64> {
    let mut flat = Vec::new();
    flat.extend_from_slice(model.w1.as_slice());
    flat.extend_from_slice(model.b1.as_slice());
    flat.extend_from_slice(model.w2.as_slice());
    flat.extend_from_slice(model.b2.as_slice());
    flat.extend_from_slice(model.w3.as_slice());
    flat.extend_from_slice(model.b3.as_slice());
    flat.extend_from_slice(head.weights.as_slice());
    flat
}

/// Copy of the model/head with flattened parameter `idx` shifted by
/// `delta`.
pub fn perturbed(
    model: &EncoderModel,
    head: &AamHead,
    idx: usize,
    delta: f64,
) -> (EncoderModel, AamHead) {
    let mut model = model.clone();
    let mut head = head.clone();
    let mut remaining = idx;
    {
        let segments: [&mut [f64]; 7] = [
            model.w1.as_mut_slice(),
            &mut model.b1.0,
            model.w2.as_mut_slice(),
            &mut model.b2.0,
            model.w3.as_mut_slice(),
            &mut model.b3.0,
            head.weights.as_mut_slice(),
        ];
        let mut hit = false;
        for seg in segments {
            if remaining < seg.len() {
                seg[remaining] += delta;
                hit = true;
                break;
            }
            remaining -= seg.len();
        }
        assert!(hit, "parameter index {idx} out of range");
    }
    (model, head)
}

/// Relative error with a floor that absorbs central-difference noise on
/// near-zero derivatives.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-4)
}
