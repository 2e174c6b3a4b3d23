//! MLP embedding extractor with an additive-angular-margin softmax head.
//!
//! The network is `D_in → H → H → D_emb` with ReLU hidden activations and a
//! final L2 normalization, so every consumer sees unit embeddings. Backward
//! is exact reverse mode, including the Jacobian of the normalization layer
//! `∂(u/‖u‖)/∂u = (I − ffᵀ)/‖u‖`. Training uses plain SGD with an
//! exponentially decaying learning rate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{PiclError, Result};
use crate::linalg::{l2_normalize, Matrix, Vector};

/// Shape of the embedding extractor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(PiclError::Config("encoder dims must be positive".into()));
        }
        Ok(())
    }
}

/// Two-hidden-layer MLP with a normalized embedding output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub w1: Matrix, // H × D_in
    pub b1: Vector, // H
    pub w2: Matrix, // H × H
    pub b2: Vector, // H
    pub w3: Matrix, // D_emb × H
    pub b3: Vector, // D_emb
}

/// Activation record from one forward pass; everything backward needs.
#[derive(Debug, Clone)]
pub struct Tape {
    x: Vector,
    z1: Vector,
    h1: Vector,
    z2: Vector,
    h2: Vector,
    embedding: Vector,
    pre_norm: f64,
}

/// Per-parameter gradients matching [`EncoderModel`] shapes.
#[derive(Debug, Clone)]
pub struct EncoderGradients {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    pub w3: Matrix,
    pub b3: Vector,
}

impl EncoderGradients {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        EncoderGradients {
            w1: Matrix::zeros(cfg.hidden_dim, cfg.input_dim),
            b1: Vector::zeros(cfg.hidden_dim),
            w2: Matrix::zeros(cfg.hidden_dim, cfg.hidden_dim),
            b2: Vector::zeros(cfg.hidden_dim),
            w3: Matrix::zeros(cfg.embedding_dim, cfg.hidden_dim),
            b3: Vector::zeros(cfg.embedding_dim),
        }
    }

    pub fn accumulate(&mut self, other: &EncoderGradients) {
        add_mat(&mut self.w1, &other.w1);
        add_vec(&mut self.b1, &other.b1);
        add_mat(&mut self.w2, &other.w2);
        add_vec(&mut self.b2, &other.b2);
        add_mat(&mut self.w3, &other.w3);
        add_vec(&mut self.b3, &other.b3);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.b1.is_finite()
            && self.w2.is_finite()
            && self.b2.is_finite()
            && self.w3.is_finite()
            && self.b3.is_finite()
    }
}

fn add_mat(dst: &mut Matrix, src: &Matrix) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s;
    }
}

fn add_vec(dst: &mut Vector, src: &Vector) {
    for (d, s) in dst.0.iter_mut().zip(&src.0) {
        *d += s;
    }
}

impl EncoderModel {
    /// He-style Gaussian initialization.
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let gauss = |rows: usize, cols: usize, std: f64, rng: &mut R| {
            let mut m = Matrix::zeros(rows, cols);
            for v in m.as_mut_slice() {
                let n: f64 = rng.sample(StandardNormal);
                *v = n * std;
            }
            m
        };
        let (d, h, e) = (cfg.input_dim, cfg.hidden_dim, cfg.embedding_dim);
        Ok(EncoderModel {
            w1: gauss(h, d, (2.0 / d as f64).sqrt(), rng),
            b1: Vector::zeros(h),
            w2: gauss(h, h, (2.0 / h as f64).sqrt(), rng),
            b2: Vector::zeros(h),
            w3: gauss(e, h, (1.0 / h as f64).sqrt(), rng),
            b3: Vector::zeros(e),
        })
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.w1.cols(),
            hidden_dim: self.w1.rows(),
            embedding_dim: self.w3.rows(),
        }
    }

    /// Forward pass. Returns the unit-norm embedding and the activation
    /// record needed for an exact backward pass.
    pub fn forward(&self, x: &Vector) -> Result<(Vector, Tape)> {
        if x.dim() != self.w1.cols() {
            return Err(PiclError::ShapeMismatch(format!(
                "encoder input dim {} expected {}",
                x.dim(),
                self.w1.cols()
            )));
        }
        let mut z1 = self.w1.matvec(x)?;
        for (z, b) in z1.0.iter_mut().zip(&self.b1.0) {
            *z += b;
        }
        let h1 = relu(&z1);
        let mut z2 = self.w2.matvec(&h1)?;
        for (z, b) in z2.0.iter_mut().zip(&self.b2.0) {
            *z += b;
        }
        let h2 = relu(&z2);
        let mut u = self.w3.matvec(&h2)?;
        for (z, b) in u.0.iter_mut().zip(&self.b3.0) {
            *z += b;
        }
        let pre_norm = u.norm();
        let embedding = l2_normalize(&u)?;
        Ok((
            embedding.clone(),
            Tape {
                x: x.clone(),
                z1,
                h1,
                z2,
                h2,
                embedding,
                pre_norm,
            },
        ))
    }

    /// Embedding only, for inference paths that never backpropagate.
    pub fn embed(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    /// Exact reverse-mode gradients for one sample given `∂L/∂f` (the
    /// gradient with respect to the unit embedding).
    pub fn backward(&self, tape: &Tape, grad_embedding: &Vector) -> Result<EncoderGradients> {
        let cfg = self.config();
        if grad_embedding.dim() != cfg.embedding_dim {
            return Err(PiclError::ShapeMismatch(format!(
                "upstream gradient dim {} expected {}",
                grad_embedding.dim(),
                cfg.embedding_dim
            )));
        }
        if tape.x.dim() != cfg.input_dim
            || tape.h1.dim() != cfg.hidden_dim
            || tape.h2.dim() != cfg.hidden_dim
            || tape.embedding.dim() != cfg.embedding_dim
        {
            return Err(PiclError::ContractViolation(
                "tape does not match this model's shapes".into(),
            ));
        }

        // Through f = u/‖u‖:  g_u = (g − (f·g) f)/‖u‖.
        let f = &tape.embedding;
        let fg: f64 = f.0.iter().zip(&grad_embedding.0).map(|(a, b)| a * b).sum();
        let mut gu = Vector::zeros(cfg.embedding_dim);
        for i in 0..cfg.embedding_dim {
            gu.0[i] = (grad_embedding[i] - fg * f[i]) / tape.pre_norm;
        }

        let mut grads = EncoderGradients::zeros(&cfg);
        grads.w3.add_outer(1.0, &gu, &tape.h2)?;
        grads.b3 = gu.clone();
        let gh2 = self.w3.matvec_t(&gu)?;
        let gz2 = relu_backward(&gh2, &tape.z2);
        grads.w2.add_outer(1.0, &gz2, &tape.h1)?;
        grads.b2 = gz2.clone();
        let gh1 = self.w2.matvec_t(&gz2)?;
        let gz1 = relu_backward(&gh1, &tape.z1);
        grads.w1.add_outer(1.0, &gz1, &tape.x)?;
        grads.b1 = gz1;
        Ok(grads)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.b1.is_finite()
            && self.w2.is_finite()
            && self.b2.is_finite()
            && self.w3.is_finite()
            && self.b3.is_finite()
    }
}

fn relu(v: &Vector) -> Vector {
    Vector(v.0.iter().map(|x| x.max(0.0)).collect())
}

fn relu_backward(upstream: &Vector, pre_activation: &Vector) -> Vector {
    Vector(
        upstream
            .0
            .iter()
            .zip(&pre_activation.0)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect(),
    )
}

/// Additive-angular-margin softmax head over the source classes.
///
/// Class rows are kept unit-norm (re-normalized after every optimizer
/// step), so row·embedding is the cosine of the class angle.
#[derive(Debug, Clone, PartialEq)]
pub struct AamHead {
    pub weights: Matrix, // n_classes × D_emb
    pub scale: f64,
    pub margin: f64,
}

/// Loss value plus gradients with respect to the embedding and the head.
#[derive(Debug, Clone)]
pub struct AamLossOutput {
    pub loss: f64,
    pub grad_embedding: Vector,
    pub grad_weights: Matrix,
}

impl AamHead {
    pub fn init<R: Rng>(
        n_classes: usize,
        embedding_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(PiclError::Config("AAM head needs at least one class".into()));
        }
        if !(scale > 0.0) {
            return Err(PiclError::Config("AAM scale must be positive".into()));
        }
        let mut weights = Matrix::zeros(n_classes, embedding_dim);
        for k in 0..n_classes {
            loop {
                let row: Vec<f64> = (0..embedding_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if let Ok(unit) = l2_normalize(&Vector(row)) {
                    weights.row_mut(k).copy_from_slice(unit.as_slice());
                    break;
                }
            }
        }
        Ok(AamHead {
            weights,
            scale,
            margin: 0.0,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn set_margin(&mut self, margin: f64) -> Result<()> {
        if !(0.0..=0.5).contains(&margin) {
            return Err(PiclError::Config(format!(
                "AAM margin {margin} outside [0, 0.5]"
            )));
        }
        self.margin = margin;
        Ok(())
    }

    /// Re-normalize every class row; projection step applied after each
    /// optimizer update.
    pub fn renormalize_rows(&mut self) -> Result<()> {
        for k in 0..self.weights.rows() {
            let row = Vector(self.weights.row(k).to_vec());
            let unit = l2_normalize(&row)?;
            self.weights.row_mut(k).copy_from_slice(unit.as_slice());
        }
        Ok(())
    }

    /// Margin cross-entropy over `s·cosθ` logits, with the margin added to
    /// the label class angle. Returns exact gradients for the embedding
    /// (normalization Jacobian excluded — the encoder backward owns it) and
    /// for the head rows.
    pub fn loss(&self, embedding: &Vector, label: usize) -> Result<AamLossOutput> {
        let n = self.n_classes();
        if label >= n {
            return Err(PiclError::ContractViolation(format!(
                "label {label} out of range ({n} classes)"
            )));
        }
        if embedding.dim() != self.weights.cols() {
            return Err(PiclError::ShapeMismatch(format!(
                "embedding dim {} expected {}",
                embedding.dim(),
                self.weights.cols()
            )));
        }

        // cosθ_k = ⟨w_k, f⟩ / ‖w_k‖ with f unit by the encoder contract.
        let mut row_norms = vec![0.0; n];
        let mut cosines = vec![0.0; n];
        for k in 0..n {
            let row = self.weights.row(k);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > crate::linalg::NORM_EPS) {
                return Err(PiclError::DegenerateInput(format!(
                    "AAM class row {k} has zero norm"
                )));
            }
            row_norms[k] = norm;
            cosines[k] =
                row.iter().zip(embedding.as_slice()).map(|(w, f)| w * f).sum::<f64>() / norm;
        }

        let cos_y = cosines[label];
        let sin_y = (1.0 - cos_y * cos_y).max(0.0).sqrt();
        let (cos_m, sin_m) = (self.margin.cos(), self.margin.sin());
        // cos(θ_y + m) via the angle-addition identity.
        let phi = cos_y * cos_m - sin_y * sin_m;

        let mut logits: Vec<f64> = cosines.iter().map(|c| self.scale * c).collect();
        logits[label] = self.scale * phi;

        let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max_logit).exp()).sum();
        let log_z = max_logit + sum_exp.ln();
        let loss = log_z - logits[label];
        let probs: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp() / sum_exp).collect();

        // dlogit_y/dcosθ_y diverges as sinθ→0; clamp keeps gradients finite
        // at the measure-zero boundary.
        let dphi_dcos = cos_m + sin_m * cos_y / sin_y.max(1e-12);

        let mut grad_embedding = Vector::zeros(embedding.dim());
        let mut grad_weights = Matrix::zeros(n, embedding.dim());
        for k in 0..n {
            let residual = probs[k] - if k == label { 1.0 } else { 0.0 };
            let dlogit_dcos = if k == label {
                self.scale * dphi_dcos
            } else {
                self.scale
            };
            let coeff = residual * dlogit_dcos;
            let row = self.weights.row(k);
            let inv_norm = 1.0 / row_norms[k];
            // dcos/df = w_k/‖w_k‖ ; dcos/dw_k = (f − cosθ_k·ŵ_k)/‖w_k‖.
            for j in 0..embedding.dim() {
                let w_hat = row[j] * inv_norm;
                grad_embedding.0[j] += coeff * w_hat;
                grad_weights.row_mut(k)[j] = coeff * (embedding[j] - cosines[k] * w_hat) * inv_norm;
            }
        }

        Ok(AamLossOutput {
            loss,
            grad_embedding,
            grad_weights,
        })
    }
}

/// Exponential learning-rate schedule `lr(t) = lr0 · (lr1/lr0)^(t/T)`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(lr_start: f64, lr_end: f64, total_steps: usize) -> Result<Self> {
        if !(lr_start > 0.0) || !(lr_end > 0.0) || lr_end > lr_start {
            return Err(PiclError::Config(format!(
                "invalid lr schedule: {lr_start} → {lr_end}"
            )));
        }
        Ok(LrSchedule {
            lr_start,
            lr_end,
            total_steps,
        })
    }

    pub fn lr(&self, t: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr_start;
        }
        let frac = t as f64 / self.total_steps as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

/// SGD over the encoder and head parameters. Momentum defaults to 0 (plain
/// SGD); a positive value enables classical momentum buffers.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub schedule: LrSchedule,
    pub momentum: f64,
    velocity: Option<(EncoderGradients, Matrix)>,
}

impl SgdOptimizer {
    pub fn new(schedule: LrSchedule, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(PiclError::Config(format!(
                "momentum {momentum} outside [0, 1)"
            )));
        }
        Ok(SgdOptimizer {
            schedule,
            momentum,
            velocity: None,
        })
    }

    /// `p ← p − lr(t)·g` for every parameter, then re-normalize the AAM
    /// class rows. Non-finite gradients abort with a divergence error.
    pub fn step(
        &mut self,
        model: &mut EncoderModel,
        head: &mut AamHead,
        grads: &EncoderGradients,
        head_grads: &Matrix,
        t: usize,
    ) -> Result<()> {
        if !grads.is_finite() || !head_grads.is_finite() {
            return Err(PiclError::Divergence(format!(
                "non-finite gradients at step {t}"
            )));
        }
        let lr = self.schedule.lr(t);
        if self.momentum > 0.0 {
            let cfg = model.config();
            let (vel, head_vel) = self.velocity.get_or_insert_with(|| {
                (
                    EncoderGradients::zeros(&cfg),
                    Matrix::zeros(head.weights.rows(), head.weights.cols()),
                )
            });
            update_with_momentum(vel, head_vel, grads, head_grads, self.momentum);
            apply_update(model, head, vel, head_vel, lr)?;
        } else {
            apply_update(model, head, grads, head_grads, lr)?;
        }
        head.renormalize_rows()?;
        if !model.is_finite() || !head.weights.is_finite() {
            return Err(PiclError::Divergence(format!(
                "non-finite parameters after step {t}"
            )));
        }
        Ok(())
    }
}

fn update_with_momentum(
    vel: &mut EncoderGradients,
    head_vel: &mut Matrix,
    grads: &EncoderGradients,
    head_grads: &Matrix,
    momentum: f64,
) {
    let mix_mat = |v: &mut Matrix, g: &Matrix| {
        for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *vi = momentum * *vi + gi;
        }
    };
    let mix_vec = |v: &mut Vector, g: &Vector| {
        for (vi, gi) in v.0.iter_mut().zip(&g.0) {
            *vi = momentum * *vi + gi;
        }
    };
    mix_mat(&mut vel.w1, &grads.w1);
    mix_vec(&mut vel.b1, &grads.b1);
    mix_mat(&mut vel.w2, &grads.w2);
    mix_vec(&mut vel.b2, &grads.b2);
    mix_mat(&mut vel.w3, &grads.w3);
    mix_vec(&mut vel.b3, &grads.b3);
    mix_mat(head_vel, head_grads);
}

fn apply_update(
    model: &mut EncoderModel,
    head: &mut AamHead,
    grads: &EncoderGradients,
    head_grads: &Matrix,
    lr: f64,
) -> Result<()> {
    let sub_mat = |p: &mut Matrix, g: &Matrix| {
        for (pi, gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *pi -= lr * gi;
        }
    };
    let sub_vec = |p: &mut Vector, g: &Vector| {
        for (pi, gi) in p.0.iter_mut().zip(&g.0) {
            *pi -= lr * gi;
        }
    };
    sub_mat(&mut model.w1, &grads.w1);
    sub_vec(&mut model.b1, &grads.b1);
    sub_mat(&mut model.w2, &grads.w2);
    sub_vec(&mut model.b2, &grads.b2);
    sub_mat(&mut model.w3, &grads.w3);
    sub_vec(&mut model.b3, &grads.b3);
    sub_mat(&mut head.weights, head_grads);
    Ok(())
}
