//! Synthetic domain-shift dataset generation, feature-space view
//! augmentation, batch assembly, and the dataset/trial text formats.
//!
//! The target domain is the source generative process pushed through a
//! fixed random transform: an orthogonal rotation (disjoint random planes,
//! one configurable angle), a bias shift, and additive noise. Speaker
//! identity sets are disjoint between the domains.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{PiclError, Result};
use crate::linalg::{l2_normalize, Matrix, Vector};
use crate::rng;

pub const DATASET_HEADER: &str = "#picl-dataset v1";
pub const TRIALS_HEADER: &str = "#picl-trials v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One feature vector with its provenance. `instance` is the stable
/// within-domain index; for target utterances it is the hybrid-memory slot.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub features: Vector,
    pub speaker: usize,
    pub domain: Domain,
    pub instance: usize,
}

/// A scored-later verification trial between two utterances of one domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub enroll: usize,
    pub test: usize,
    pub is_target: bool,
}

/// Generation parameters for a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub n_source_speakers: usize,
    pub n_target_speakers: usize,
    pub utterances_per_speaker: usize,
    pub input_dim: usize,
    /// Within-speaker Gaussian spread.
    pub sigma_within: f64,
    /// Per-plane rotation angle (radians) of the domain transform.
    pub rotation_angle: f64,
    /// Norm of the domain bias vector.
    pub bias_scale: f64,
    /// Additive noise applied to target samples, drawn inside a fixed
    /// random subspace of dimension `noise_subspace_dim` (session/channel
    /// axes unseen during pretraining). Zero dimension means isotropic.
    pub sigma_domain: f64,
    /// Dimension of the fixed target noise subspace (0 = isotropic noise).
    pub noise_subspace_dim: usize,
    /// Per-coordinate masking probability applied to target samples
    /// (channel/band-loss style mismatch).
    pub dropout_domain: f64,
    /// Maximum allowed cosine between any two speaker mean directions;
    /// keeps synthetic identities distinct (1.0 disables the constraint).
    pub max_mean_cosine: f64,
    /// Pair up target speakers at this mean cosine (confusable-identity
    /// pairs stressing global score calibration; 0 disables).
    pub confusable_cos: f64,
    /// Cap on within-speaker trial pairs per domain (0 = all pairs).
    pub max_trial_pairs: usize,
    pub seed: u64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_target_speakers < 2 {
            return Err(PiclError::Config(
                "need at least 2 target speakers to form trials".into(),
            ));
        }
        if self.n_source_speakers < 2 {
            return Err(PiclError::Config(
                "need at least 2 source speakers to form trials".into(),
            ));
        }
        if self.utterances_per_speaker == 0 || self.input_dim == 0 {
            return Err(PiclError::Config(
                "utterances per speaker and input dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_domain) {
            return Err(PiclError::Config(
                "world.dropout must be in [0, 1)".into(),
            ));
        }
        if self.noise_subspace_dim > self.input_dim {
            return Err(PiclError::Config(format!(
                "world.noise_dims {} exceeds input dim {}",
                self.noise_subspace_dim, self.input_dim
            )));
        }
        for (name, v) in [
            ("world.sigma_within", self.sigma_within),
            ("world.sigma_domain", self.sigma_domain),
            ("world.bias_scale", self.bias_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(PiclError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.rotation_angle.is_finite() {
            return Err(PiclError::Config("world.rotation_angle must be finite".into()));
        }
        if !(self.max_mean_cosine > 0.0 && self.max_mean_cosine <= 1.0) {
            return Err(PiclError::Config(
                "world.max_mean_cosine must be in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.confusable_cos) {
            return Err(PiclError::Config(
                "world.confusable_cos must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// A generated world: labeled source train set, target adapt set (labels
/// retained for diagnostics only), and per-domain trial lists.
#[derive(Debug, Clone)]
pub struct SpeakerWorld {
    pub input_dim: usize,
    pub n_source_speakers: usize,
    pub n_target_speakers: usize,
    pub source: Vec<Utterance>,
    pub target: Vec<Utterance>,
    pub source_trials: Vec<Trial>,
    pub target_trials: Vec<Trial>,
}

/// Fixed per-world domain transform: x ↦ mask ∘ (R·x + b) + σ·n, with a
/// fresh mask and noise draw per sample.
struct DomainTransform {
    rotation: Matrix,
    bias: Vector,
    sigma: f64,
    /// Orthonormal rows spanning the noise subspace; empty = isotropic.
    noise_axes: Vec<Vector>,
    dropout: f64,
}

impl DomainTransform {
    fn sample(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = spec.input_dim;
        // Orthogonal rotation from disjoint random coordinate planes, each
        // rotated by the same configured angle. Zero angle is exactly the
        // identity.
        let mut rotation = Matrix::identity(d);
        if spec.rotation_angle != 0.0 {
            let mut order: Vec<usize> = (0..d).collect();
            order.shuffle(rng);
            let (sin, cos) = spec.rotation_angle.sin_cos();
            for pair in order.chunks_exact(2) {
                let (a, b) = (pair[0], pair[1]);
                let mut plane = Matrix::identity(d);
                plane.set(a, a, cos);
                plane.set(a, b, -sin);
                plane.set(b, a, sin);
                plane.set(b, b, cos);
                rotation = plane.matmul(&rotation)?;
            }
        }
        let bias = if spec.bias_scale > 0.0 {
            let raw: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            l2_normalize(&Vector(raw))?.scale(spec.bias_scale)
        } else {
            // Consume the same number of draws so bias_scale=0 only zeroes
            // the shift without reshuffling downstream randomness.
            for _ in 0..d {
                let _: f64 = rng.sample(StandardNormal);
            }
            Vector::zeros(d)
        };
        // Gram-Schmidt over Gaussian draws gives a random orthonormal
        // frame for the noise subspace.
        let mut noise_axes: Vec<Vector> = Vec::with_capacity(spec.noise_subspace_dim);
        while noise_axes.len() < spec.noise_subspace_dim {
            let mut v: Vec<f64> =
                (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for axis in &noise_axes {
                let proj: f64 = axis.0.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ai) in v.iter_mut().zip(&axis.0) {
                    *vi -= proj * ai;
                }
            }
            if let Ok(unit) = l2_normalize(&Vector(v)) {
                noise_axes.push(unit);
            }
        }
        Ok(DomainTransform {
            rotation,
            bias,
            sigma: spec.sigma_domain,
            noise_axes,
            dropout: spec.dropout_domain,
        })
    }

    fn apply(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Result<Vector> {
        let mut y = self.rotation.matvec(x)?;
        for (yi, bi) in y.0.iter_mut().zip(&self.bias.0) {
            *yi += bi;
        }
        for yi in y.0.iter_mut() {
            let kept = rng.random::<f64>() >= self.dropout;
            if !kept {
                *yi = 0.0;
            }
        }
        if self.noise_axes.is_empty() {
            for yi in y.0.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *yi += self.sigma * n;
            }
        } else {
            for axis in &self.noise_axes {
                let n: f64 = rng.sample(StandardNormal);
                for (yi, ai) in y.0.iter_mut().zip(&axis.0) {
                    *yi += self.sigma * n * ai;
                }
            }
        }
        Ok(y)
    }
}

/// Deterministically generate a world from its spec.
pub fn generate_world(spec: &WorldSpec) -> Result<SpeakerWorld> {
    spec.validate()?;
    let mut world_rng = rng::stream(spec.seed, "world");
    let d = spec.input_dim;

    // Rejection-sample speaker means so no two identities (across both
    // domains) are closer than the configured cosine.
    let n_speakers = spec.n_source_speakers + spec.n_target_speakers;
    let mut means: Vec<Vector> = Vec::with_capacity(n_speakers);
    let mut attempts = 0usize;
    while means.len() < n_speakers {
        attempts += 1;
        if attempts > 1000 * n_speakers {
            return Err(PiclError::Config(format!(
                "cannot place {n_speakers} speaker means with max cosine {} in dim {d}",
                spec.max_mean_cosine
            )));
        }
        let raw: Vec<f64> = (0..d).map(|_| world_rng.sample::<f64, _>(StandardNormal)).collect();
        let candidate = l2_normalize(&Vector(raw))?;
        let separated = means.iter().all(|m| {
            let cos: f64 = m.0.iter().zip(&candidate.0).map(|(a, b)| a * b).sum();
            cos <= spec.max_mean_cosine
        });
        if separated {
            means.push(candidate);
        }
    }
    let mut target_means = means.split_off(spec.n_source_speakers);
    let source_means = means;
    if spec.confusable_cos > 0.0 {
        // Re-shape target identities into confusable pairs: every second
        // mean is tilted toward its predecessor at the configured cosine.
        let delta = (1.0 / (spec.confusable_cos * spec.confusable_cos) - 1.0).sqrt();
        for pair_second in (1..target_means.len()).step_by(2) {
            let anchor = target_means[pair_second - 1].clone();
            let raw = target_means[pair_second].clone();
            let proj: f64 = anchor.0.iter().zip(&raw.0).map(|(a, b)| a * b).sum();
            let mut ortho: Vec<f64> =
                raw.0.iter().zip(&anchor.0).map(|(r, a)| r - proj * a).collect();
            let norm = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue; // collinear draw; keep the sampled mean
            }
            for o in ortho.iter_mut() {
                *o /= norm;
            }
            let tilted: Vec<f64> = anchor
                .0
                .iter()
                .zip(&ortho)
                .map(|(a, o)| a + delta * o)
                .collect();
            target_means[pair_second] = l2_normalize(&Vector(tilted))?;
        }
    }

    let transform = DomainTransform::sample(spec, &mut world_rng)?;

    let draw = |mean: &Vector, rng: &mut ChaCha8Rng| -> Vector {
        Vector(
            mean.0
                .iter()
                .map(|m| m + spec.sigma_within * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    };

    let mut source = Vec::with_capacity(spec.n_source_speakers * spec.utterances_per_speaker);
    for (speaker, mean) in source_means.iter().enumerate() {
        for _ in 0..spec.utterances_per_speaker {
            let features = draw(mean, &mut world_rng);
            source.push(Utterance {
                features,
                speaker,
                domain: Domain::Source,
                instance: source.len(),
            });
        }
    }
    let mut target = Vec::with_capacity(spec.n_target_speakers * spec.utterances_per_speaker);
    for (speaker, mean) in target_means.iter().enumerate() {
        for _ in 0..spec.utterances_per_speaker {
            let clean = draw(mean, &mut world_rng);
            let features = transform.apply(&clean, &mut world_rng)?;
            target.push(Utterance {
                features,
                speaker,
                domain: Domain::Target,
                instance: target.len(),
            });
        }
    }

    let mut trial_rng = rng::stream(spec.seed, "trials");
    let source_trials = build_trials(&source, spec.max_trial_pairs, &mut trial_rng)?;
    let target_trials = build_trials(&target, spec.max_trial_pairs, &mut trial_rng)?;

    Ok(SpeakerWorld {
        input_dim: d,
        n_source_speakers: spec.n_source_speakers,
        n_target_speakers: spec.n_target_speakers,
        source,
        target,
        source_trials,
        target_trials,
    })
}

/// All within-speaker pairs as targets (optionally capped), plus an
/// equal-sized sample of cross-speaker pairs as nontargets.
fn build_trials(
    utterances: &[Utterance],
    max_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trial>> {
    let n = utterances.len();
    let mut within: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if utterances[i].speaker == utterances[j].speaker {
                within.push((i, j));
            }
        }
    }
    if within.is_empty() {
        return Err(PiclError::Config(
            "no within-speaker pairs available for trials".into(),
        ));
    }
    if max_pairs > 0 && within.len() > max_pairs {
        within.shuffle(rng);
        within.truncate(max_pairs);
        within.sort_unstable();
    }

    let n_nontarget = within.len();
    let mut cross: Vec<(usize, usize)> = Vec::with_capacity(n_nontarget);
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut attempts = 0usize;
    while cross.len() < n_nontarget {
        attempts += 1;
        if attempts > 1000 * n_nontarget {
            return Err(PiclError::Config(
                "unable to sample enough cross-speaker trial pairs".into(),
            ));
        }
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || utterances[i].speaker == utterances[j].speaker {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if seen.insert(key) {
            cross.push(key);
        }
    }
    cross.sort_unstable();

    let mut trials = Vec::with_capacity(within.len() + cross.len());
    trials.extend(within.into_iter().map(|(enroll, test)| Trial {
        enroll,
        test,
        is_target: true,
    }));
    trials.extend(cross.into_iter().map(|(enroll, test)| Trial {
        enroll,
        test,
        is_target: false,
    }));
    Ok(trials)
}

/// Feature-space view augmentation: Gaussian noise, a scalar scale jitter,
/// and coordinate dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub sigma: f64,
    /// Jitter half-width `a`: scale drawn from [1−a, 1+a].
    pub scale_jitter: f64,
    pub dropout_prob: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(PiclError::Config("augment.sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(PiclError::Config("augment.scale_jitter must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(PiclError::Config("augment.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Draw an augmented view of an utterance. The original is untouched; each
/// call draws independently from the augmentation distribution.
pub fn make_view(x: &Utterance, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Utterance {
    // The identity configuration must reproduce the features exactly, so
    // the perturbations are written to vanish term-by-term at zero.
    let scale = 1.0 + cfg.scale_jitter * rng.random_range(-1.0..=1.0);
    let features = Vector(
        x.features
            .0
            .iter()
            .map(|v| {
                let noise: f64 = rng.sample(StandardNormal);
                let kept = rng.random::<f64>() >= cfg.dropout_prob;
                if kept {
                    (v + cfg.sigma * noise) * scale
                } else {
                    0.0
                }
            })
            .collect(),
    );
    Utterance {
        features,
        speaker: x.speaker,
        domain: x.domain,
        instance: x.instance,
    }
}

/// Index composition of one training batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Batch plan for one pretraining epoch: the shuffled source pool split
/// into chunks of `b_s` (every item exactly once).
pub fn pretrain_epoch_batches(n_source: usize, b_s: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..n_source).collect();
    order.shuffle(rng);
    order
        .chunks(b_s.max(1))
        .map(|chunk| Batch {
            source: chunk.to_vec(),
            target: Vec::new(),
        })
        .collect()
}

/// Batch plan for one adaptation epoch. Target indices partition the epoch
/// (each instance appears exactly once, so each `v_i` gets exactly one
/// momentum update); source items are drawn without replacement until the
/// pool is exhausted, then the pool reshuffles.
pub fn adapt_epoch_batches(
    n_source: usize,
    n_target: usize,
    b_s: usize,
    b_t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>> {
    if b_s == 0 {
        return Err(PiclError::Config(
            "batch.source must be positive in adaptation (the source classification loss needs source items)"
                .into(),
        ));
    }
    if b_t == 0 {
        return Err(PiclError::Config("batch.target must be positive".into()));
    }
    let mut target_order: Vec<usize> = (0..n_target).collect();
    target_order.shuffle(rng);

    let mut source_deck: Vec<usize> = (0..n_source).collect();
    source_deck.shuffle(rng);
    let mut deck_pos = 0usize;

    let mut batches = Vec::new();
    for chunk in target_order.chunks(b_t) {
        let mut source = Vec::with_capacity(b_s);
        for _ in 0..b_s.min(n_source) {
            if deck_pos == source_deck.len() {
                source_deck.shuffle(rng);
                deck_pos = 0;
            }
            source.push(source_deck[deck_pos]);
            deck_pos += 1;
        }
        batches.push(Batch {
            source,
            target: chunk.to_vec(),
        });
    }
    Ok(batches)
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

/// Serialize utterances: one `domain,speaker,instance,f_0,...,f_{D-1}`
/// record per line. Floats use shortest round-trip decimal, so reading the
/// file back reproduces every bit.
pub fn dataset_to_string(source: &[Utterance], target: &[Utterance]) -> String {
    let mut out = String::new();
    out.push_str(DATASET_HEADER);
    out.push('\n');
    for u in source.iter().chain(target) {
        let _ = write!(out, "{},{},{}", u.domain.as_str(), u.speaker, u.instance);
        for v in &u.features.0 {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == DATASET_HEADER => {}
        other => {
            return Err(PiclError::Parse(format!(
                "bad dataset header: {:?} (expected {DATASET_HEADER})",
                other.unwrap_or("")
            )))
        }
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let domain = match parts.next() {
            Some("source") => Domain::Source,
            Some("target") => Domain::Target,
            other => {
                return Err(PiclError::Parse(format!(
                    "line {}: bad domain {:?}",
                    lineno + 2,
                    other.unwrap_or("")
                )))
            }
        };
        let speaker: usize = parse_field(parts.next(), "speaker", lineno)?;
        let instance: usize = parse_field(parts.next(), "instance", lineno)?;
        let features: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| PiclError::Parse(format!("line {}: {e}", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        if features.is_empty() || features.iter().any(|f| !f.is_finite()) {
            return Err(PiclError::Parse(format!(
                "line {}: empty or non-finite features",
                lineno + 2
            )));
        }
        let utt = Utterance {
            features: Vector(features),
            speaker,
            domain,
            instance,
        };
        match domain {
            Domain::Source => source.push(utt),
            Domain::Target => target.push(utt),
        }
    }
    for (name, list) in [("source", &source), ("target", &target)] {
        let dim = list.first().map(|u| u.features.dim());
        if list.iter().any(|u| Some(u.features.dim()) != dim) {
            return Err(PiclError::Parse(format!("{name} feature dims differ")));
        }
        for (i, u) in list.iter().enumerate() {
            if u.instance != i {
                return Err(PiclError::Parse(format!(
                    "{name} instance indices not sequential at row {i}"
                )));
            }
        }
    }
    Ok((source, target))
}

fn parse_field(field: Option<&str>, name: &str, lineno: usize) -> Result<usize> {
    field
        .ok_or_else(|| PiclError::Parse(format!("line {}: missing {name}", lineno + 2)))?
        .parse::<usize>()
        .map_err(|e| PiclError::Parse(format!("line {}: {name}: {e}", lineno + 2)))
}

/// Serialize trials: `enroll_index,test_index,target|nontarget` per line.
pub fn trials_to_string(trials: &[Trial]) -> String {
    let mut out = String::new();
    out.push_str(TRIALS_HEADER);
    out.push('\n');
    for t in trials {
        let _ = writeln!(
            out,
            "{},{},{}",
            t.enroll,
            t.test,
            if t.is_target { "target" } else { "nontarget" }
        );
    }
    out
}

pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRIALS_HEADER => {}
        other => {
            return Err(PiclError::Parse(format!(
                "bad trials header: {:?} (expected {TRIALS_HEADER})",
                other.unwrap_or("")
            )))
        }
    }
    let mut trials = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(PiclError::Parse(format!(
                "line {}: expected 3 fields",
                lineno + 2
            )));
        }
        let enroll = parse_field(Some(parts[0]), "enroll", lineno)?;
        let test = parse_field(Some(parts[1]), "test", lineno)?;
        let is_target = match parts[2] {
            "target" => true,
            "nontarget" => false,
            other => {
                return Err(PiclError::Parse(format!(
                    "line {}: bad label {other:?}",
                    lineno + 2
                )))
            }
        };
        trials.push(Trial {
            enroll,
            test,
            is_target,
        });
    }
    Ok(trials)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let text = std::fs::read_to_string(path).map_err(|_| PiclError::MissingArtifact {
        path: path.to_path_buf(),
        hint: "run `picl generate` first".into(),
    })?;
    parse_dataset(&text)
}

pub fn load_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path).map_err(|_| PiclError::MissingArtifact {
        path: path.to_path_buf(),
        hint: "run `picl generate` first".into(),
    })?;
    parse_trials(&text)
}
