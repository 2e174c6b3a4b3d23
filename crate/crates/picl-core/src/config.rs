//! Run configuration: one flat key=value file with dotted section keys.
//!
//! Every key has a default except `seed`, which must be pinned either in
//! the file or by `--seed`. Unknown keys are rejected so typos fail loudly.
//! The effective (defaults-merged) configuration is echoed into every
//! report for provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::clustering::DbscanParams;
use crate::data::{AugmentConfig, WorldSpec};
use crate::encoder::EncoderConfig;
use crate::error::{PiclError, Result};
use crate::eval::DcfParams;
use crate::losses::LossConfig;

/// Where clustering reads its points from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterSource {
    /// The memory's momentum-smoothed instance embeddings (default).
    Memory,
    /// Freshly re-extracted embeddings of the adapt set.
    Reextract,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub world_source_speakers: usize,
    pub world_target_speakers: usize,
    pub world_utterances_per_speaker: usize,
    pub world_input_dim: usize,
    pub world_sigma_within: f64,
    pub world_rotation_angle: f64,
    pub world_bias_scale: f64,
    pub world_sigma_domain: f64,
    pub world_noise_dims: usize,
    pub world_dropout: f64,
    pub world_max_mean_cosine: f64,
    pub world_confusable_cos: f64,
    pub trial_max_pairs: usize,

    pub encoder_hidden_dim: usize,
    pub encoder_embedding_dim: usize,
    pub aam_scale: f64,
    pub aam_margin: f64,

    pub optimizer_lr_start: f64,
    pub optimizer_lr_end: f64,
    pub optimizer_momentum: f64,
    /// Adaptation-stage schedule start; compensates the far smaller step
    /// budget of desk-scale adaptation runs (0 = inherit optimizer.lr_start).
    pub adapt_lr_start: f64,

    pub pretrain_epochs: usize,
    /// Train on augmented copies of the source items during pretraining,
    /// mirroring augmented-corpus training; makes the encoder
    /// noise-invariant before adaptation.
    pub pretrain_augment: bool,
    pub adapt_epochs: usize,
    pub batch_source: usize,
    pub batch_target: usize,

    pub loss_tau: f64,
    pub loss_lambda: f64,
    pub loss_instance_on_source: bool,

    pub augment_sigma: f64,
    pub augment_scale_jitter: f64,
    pub augment_dropout: f64,

    pub cluster_eps: f64,
    pub cluster_min_pts: usize,
    pub cluster_source: ClusterSource,

    pub memory_momentum_source: f64,
    pub memory_momentum_target: f64,
    pub memory_renormalize: bool,

    pub adapt_reinit_head: bool,
    pub checkpoint_every_epochs: usize,

    pub dcf_c_fr: f64,
    pub dcf_c_fa: f64,
    pub dcf_p_target: f64,
    pub eval_checkpoint: String,

    pub sweep_cells: Vec<(f64, f64)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0, // placeholder; `seed` is a required key
            out_dir: PathBuf::from("runs/default"),
            world_source_speakers: 20,
            world_target_speakers: 15,
            world_utterances_per_speaker: 50,
            world_input_dim: 20,
            world_sigma_within: 0.1,
            world_rotation_angle: 0.4,
            world_bias_scale: 0.3,
            world_sigma_domain: 0.02,
            world_noise_dims: 0,
            world_dropout: 0.4,
            world_max_mean_cosine: 0.35,
            world_confusable_cos: 0.6,
            trial_max_pairs: 0,
            encoder_hidden_dim: 128,
            encoder_embedding_dim: 64,
            aam_scale: 32.0,
            aam_margin: 0.2,
            optimizer_lr_start: 1e-3,
            optimizer_lr_end: 1e-5,
            optimizer_momentum: 0.0,
            adapt_lr_start: 1e-2,
            pretrain_epochs: 40,
            pretrain_augment: false,
            adapt_epochs: 80,
            batch_source: 16,
            batch_target: 16,
            loss_tau: 0.05,
            loss_lambda: 5.0,
            loss_instance_on_source: false,
            augment_sigma: 0.05,
            augment_scale_jitter: 0.1,
            augment_dropout: 0.25,
            cluster_eps: 0.07,
            cluster_min_pts: 6,
            cluster_source: ClusterSource::Memory,
            memory_momentum_source: 0.2,
            memory_momentum_target: 0.2,
            memory_renormalize: true,
            adapt_reinit_head: false,
            checkpoint_every_epochs: 0,
            dcf_c_fr: 10.0,
            dcf_c_fa: 1.0,
            dcf_p_target: 0.01,
            eval_checkpoint: "adapted.ckpt".into(),
            sweep_cells: vec![
                (0.2, 0.0),
                (0.5, 0.0),
                (0.8, 0.0),
                (0.5, 1.0),
                (0.5, 5.0),
                (0.5, 10.0),
            ],
        }
    }
}

impl RunConfig {
    /// Parse a config file and merge it over the defaults. `seed` must be
    /// present in the file unless `seed_override` supplies it.
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| PiclError::MissingArtifact {
            path: path.to_path_buf(),
            hint: "config file not found".into(),
        })?;
        Self::from_str_with_overrides(&text, seed_override, out_override)
    }

    pub fn from_str_with_overrides(
        text: &str,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seed_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PiclError::Config(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key == "seed" {
                seed_seen = true;
            }
            cfg.set(key, value)?;
        }
        if let Some(seed) = seed_override {
            cfg.seed = seed;
            seed_seen = true;
        }
        if !seed_seen {
            return Err(PiclError::Config(
                "missing required key: seed (set it in the config or pass --seed)".into(),
            ));
        }
        if let Some(out) = out_override {
            cfg.out_dir = out;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one dotted key from its text value. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| PiclError::Config(format!("key {key}: {e}")))
        }
        let parse_bool = |value: &str| -> Result<bool> {
            match value {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                other => Err(PiclError::Config(format!(
                    "key {key}: expected true|false, got {other:?}"
                ))),
            }
        };
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out.dir" => self.out_dir = PathBuf::from(value),
            "world.source_speakers" => self.world_source_speakers = parse(key, value)?,
            "world.target_speakers" => self.world_target_speakers = parse(key, value)?,
            "world.utterances_per_speaker" => {
                self.world_utterances_per_speaker = parse(key, value)?
            }
            "world.input_dim" => self.world_input_dim = parse(key, value)?,
            "world.sigma_within" => self.world_sigma_within = parse(key, value)?,
            "world.rotation_angle" => self.world_rotation_angle = parse(key, value)?,
            "world.bias_scale" => self.world_bias_scale = parse(key, value)?,
            "world.sigma_domain" => self.world_sigma_domain = parse(key, value)?,
            "world.noise_dims" => self.world_noise_dims = parse(key, value)?,
            "world.dropout" => self.world_dropout = parse(key, value)?,
            "world.max_mean_cosine" => self.world_max_mean_cosine = parse(key, value)?,
            "world.confusable_cos" => self.world_confusable_cos = parse(key, value)?,
            "trial.max_pairs" => self.trial_max_pairs = parse(key, value)?,
            "encoder.hidden_dim" => self.encoder_hidden_dim = parse(key, value)?,
            "encoder.embedding_dim" => self.encoder_embedding_dim = parse(key, value)?,
            "aam.scale" => self.aam_scale = parse(key, value)?,
            "aam.margin" => self.aam_margin = parse(key, value)?,
            "optimizer.lr_start" => self.optimizer_lr_start = parse(key, value)?,
            "optimizer.lr_end" => self.optimizer_lr_end = parse(key, value)?,
            "optimizer.momentum" => self.optimizer_momentum = parse(key, value)?,
            "adapt.lr_start" => self.adapt_lr_start = parse(key, value)?,
            "pretrain.epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain.augment" => self.pretrain_augment = parse_bool(value)?,
            "adapt.epochs" => self.adapt_epochs = parse(key, value)?,
            "batch.source" => self.batch_source = parse(key, value)?,
            "batch.target" => self.batch_target = parse(key, value)?,
            "loss.tau" => self.loss_tau = parse(key, value)?,
            "loss.lambda" => self.loss_lambda = parse(key, value)?,
            "loss.instance_on_source" => self.loss_instance_on_source = parse_bool(value)?,
            "augment.sigma" => self.augment_sigma = parse(key, value)?,
            "augment.scale_jitter" => self.augment_scale_jitter = parse(key, value)?,
            "augment.dropout" => self.augment_dropout = parse(key, value)?,
            "cluster.eps" => self.cluster_eps = parse(key, value)?,
            "cluster.min_pts" => self.cluster_min_pts = parse(key, value)?,
            "cluster.source" => {
                self.cluster_source = match value {
                    "memory" => ClusterSource::Memory,
                    "reextract" => ClusterSource::Reextract,
                    other => {
                        return Err(PiclError::Config(format!(
                            "key cluster.source: expected memory|reextract, got {other:?}"
                        )))
                    }
                }
            }
            "memory.momentum_source" => self.memory_momentum_source = parse(key, value)?,
            "memory.momentum_target" => self.memory_momentum_target = parse(key, value)?,
            "memory.renormalize" => self.memory_renormalize = parse_bool(value)?,
            "adapt.reinit_head" => self.adapt_reinit_head = parse_bool(value)?,
            "checkpoint.every_epochs" => self.checkpoint_every_epochs = parse(key, value)?,
            "dcf.c_fr" => self.dcf_c_fr = parse(key, value)?,
            "dcf.c_fa" => self.dcf_c_fa = parse(key, value)?,
            "dcf.p_target" => self.dcf_p_target = parse(key, value)?,
            "eval.checkpoint" => self.eval_checkpoint = value.to_string(),
            "sweep.cells" => self.sweep_cells = parse_sweep_cells(value)?,
            other => {
                return Err(PiclError::Config(format!("unknown config key: {other}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.world_spec().validate()?;
        self.encoder_config().validate()?;
        self.loss_config().validate()?;
        self.augment_config().validate()?;
        self.dbscan_params().validate()?;
        self.dcf_params().validate()?;
        if !(0.0..=0.5).contains(&self.aam_margin) {
            return Err(PiclError::Config(format!(
                "aam.margin {} outside [0, 0.5]",
                self.aam_margin
            )));
        }
        if !(self.aam_scale > 0.0) {
            return Err(PiclError::Config("aam.scale must be positive".into()));
        }
        for (name, m) in [
            ("memory.momentum_source", self.memory_momentum_source),
            ("memory.momentum_target", self.memory_momentum_target),
        ] {
            if !(0.0..=1.0).contains(&m) {
                return Err(PiclError::Config(format!("{name} {m} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.optimizer_momentum) {
            return Err(PiclError::Config(format!(
                "optimizer.momentum {} outside [0, 1)",
                self.optimizer_momentum
            )));
        }
        if !(self.optimizer_lr_start > 0.0)
            || !(self.optimizer_lr_end > 0.0)
            || self.optimizer_lr_end > self.optimizer_lr_start
        {
            return Err(PiclError::Config(format!(
                "learning-rate schedule must decay: {} → {}",
                self.optimizer_lr_start, self.optimizer_lr_end
            )));
        }
        if self.adapt_lr_start != 0.0
            && (!(self.adapt_lr_start > 0.0) || self.optimizer_lr_end > self.adapt_lr_start)
        {
            return Err(PiclError::Config(format!(
                "adapt.lr_start {} must be 0 (inherit) or >= optimizer.lr_end",
                self.adapt_lr_start
            )));
        }
        if self.batch_source == 0 {
            return Err(PiclError::Config(
                "batch.source must be positive (the source classification loss needs source items)"
                    .into(),
            ));
        }
        if self.batch_target == 0 {
            return Err(PiclError::Config("batch.target must be positive".into()));
        }
        if self.sweep_cells.is_empty() {
            return Err(PiclError::Config("sweep.cells must be non-empty".into()));
        }
        for (m, l) in &self.sweep_cells {
            if !(0.0..=1.0).contains(m) || !(*l >= 0.0) {
                return Err(PiclError::Config(format!(
                    "sweep cell ({m}, {l}) out of range"
                )));
            }
        }
        Ok(())
    }

    // -- typed sub-configs ---------------------------------------------------

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            n_source_speakers: self.world_source_speakers,
            n_target_speakers: self.world_target_speakers,
            utterances_per_speaker: self.world_utterances_per_speaker,
            input_dim: self.world_input_dim,
            sigma_within: self.world_sigma_within,
            rotation_angle: self.world_rotation_angle,
            bias_scale: self.world_bias_scale,
            sigma_domain: self.world_sigma_domain,
            noise_subspace_dim: self.world_noise_dims,
            dropout_domain: self.world_dropout,
            max_mean_cosine: self.world_max_mean_cosine,
            confusable_cos: self.world_confusable_cos,
            max_trial_pairs: self.trial_max_pairs,
            seed: self.seed,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.world_input_dim,
            hidden_dim: self.encoder_hidden_dim,
            embedding_dim: self.encoder_embedding_dim,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.loss_tau,
            lambda: self.loss_lambda,
            instance_on_source: self.loss_instance_on_source,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            sigma: self.augment_sigma,
            scale_jitter: self.augment_scale_jitter,
            dropout_prob: self.augment_dropout,
        }
    }

    pub fn dbscan_params(&self) -> DbscanParams {
        DbscanParams {
            eps: self.cluster_eps,
            min_pts: self.cluster_min_pts,
        }
    }

    pub fn dcf_params(&self) -> DcfParams {
        DcfParams {
            c_fr: self.dcf_c_fr,
            c_fa: self.dcf_c_fa,
            p_target: self.dcf_p_target,
        }
    }

    /// Sorted `(key, value)` pairs of the effective configuration.
    pub fn effective_entries(&self) -> Vec<(String, String)> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("out.dir", self.out_dir.display().to_string());
        put("world.source_speakers", self.world_source_speakers.to_string());
        put("world.target_speakers", self.world_target_speakers.to_string());
        put(
            "world.utterances_per_speaker",
            self.world_utterances_per_speaker.to_string(),
        );
        put("world.input_dim", self.world_input_dim.to_string());
        put("world.sigma_within", self.world_sigma_within.to_string());
        put("world.rotation_angle", self.world_rotation_angle.to_string());
        put("world.bias_scale", self.world_bias_scale.to_string());
        put("world.sigma_domain", self.world_sigma_domain.to_string());
        put("world.noise_dims", self.world_noise_dims.to_string());
        put("world.dropout", self.world_dropout.to_string());
        put("world.max_mean_cosine", self.world_max_mean_cosine.to_string());
        put("world.confusable_cos", self.world_confusable_cos.to_string());
        put("trial.max_pairs", self.trial_max_pairs.to_string());
        put("encoder.hidden_dim", self.encoder_hidden_dim.to_string());
        put("encoder.embedding_dim", self.encoder_embedding_dim.to_string());
        put("aam.scale", self.aam_scale.to_string());
        put("aam.margin", self.aam_margin.to_string());
        put("optimizer.lr_start", self.optimizer_lr_start.to_string());
        put("optimizer.lr_end", self.optimizer_lr_end.to_string());
        put("optimizer.momentum", self.optimizer_momentum.to_string());
        put("adapt.lr_start", self.adapt_lr_start.to_string());
        put("pretrain.epochs", self.pretrain_epochs.to_string());
        put("pretrain.augment", self.pretrain_augment.to_string());
        put("adapt.epochs", self.adapt_epochs.to_string());
        put("batch.source", self.batch_source.to_string());
        put("batch.target", self.batch_target.to_string());
        put("loss.tau", self.loss_tau.to_string());
        put("loss.lambda", self.loss_lambda.to_string());
        put(
            "loss.instance_on_source",
            self.loss_instance_on_source.to_string(),
        );
        put("augment.sigma", self.augment_sigma.to_string());
        put("augment.scale_jitter", self.augment_scale_jitter.to_string());
        put("augment.dropout", self.augment_dropout.to_string());
        put("cluster.eps", self.cluster_eps.to_string());
        put("cluster.min_pts", self.cluster_min_pts.to_string());
        put(
            "cluster.source",
            match self.cluster_source {
                ClusterSource::Memory => "memory".to_string(),
                ClusterSource::Reextract => "reextract".to_string(),
            },
        );
        put(
            "memory.momentum_source",
            self.memory_momentum_source.to_string(),
        );
        put(
            "memory.momentum_target",
            self.memory_momentum_target.to_string(),
        );
        put("memory.renormalize", self.memory_renormalize.to_string());
        put("adapt.reinit_head", self.adapt_reinit_head.to_string());
        put(
            "checkpoint.every_epochs",
            self.checkpoint_every_epochs.to_string(),
        );
        put("dcf.c_fr", self.dcf_c_fr.to_string());
        put("dcf.c_fa", self.dcf_c_fa.to_string());
        put("dcf.p_target", self.dcf_p_target.to_string());
        put("eval.checkpoint", self.eval_checkpoint.clone());
        put(
            "sweep.cells",
            self.sweep_cells
                .iter()
                .map(|(m, l)| format!("{m}:{l}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        map.into_iter().collect()
    }

    /// The `# key=value` provenance header prefixed to every report file.
    pub fn echo_header(&self) -> String {
        let mut out = String::from("#picl-report v1\n");
        for (k, v) in self.effective_entries() {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out
    }
}

fn parse_sweep_cells(value: &str) -> Result<Vec<(f64, f64)>> {
    let mut cells = Vec::new();
    for cell in value.split(',') {
        let cell = cell.trim();
        if cell.is_empty() {
            continue;
        }
        let Some((m, l)) = cell.split_once(':') else {
            return Err(PiclError::Config(format!(
                "sweep.cells: expected m:lambda, got {cell:?}"
            )));
        };
        let m: f64 = m
            .trim()
            .parse()
            .map_err(|e| PiclError::Config(format!("sweep.cells m: {e}")))?;
        let l: f64 = l
            .trim()
            .parse()
            .map_err(|e| PiclError::Config(format!("sweep.cells lambda: {e}")))?;
        cells.push((m, l));
    }
    if cells.is_empty() {
        return Err(PiclError::Config("sweep.cells is empty".into()));
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_needs_only_seed() {
        let cfg = RunConfig::from_str_with_overrides("seed=42\n", None, None).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.loss_tau, 0.05);
        assert_eq!(cfg.loss_lambda, 5.0);
        assert_eq!(cfg.memory_momentum_source, 0.2);
        assert_eq!(cfg.aam_scale, 32.0);
    }

    #[test]
    fn missing_seed_is_named_in_the_error() {
        let err = RunConfig::from_str_with_overrides("loss.tau=0.1\n", None, None).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn seed_override_substitutes_for_the_key() {
        let cfg = RunConfig::from_str_with_overrides("loss.tau=0.1\n", Some(7), None).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.loss_tau, 0.1);
    }

    #[test]
    fn unknown_key_rejected() {
        let err =
            RunConfig::from_str_with_overrides("seed=1\nloss.taus=0.1\n", None, None).unwrap_err();
        assert!(err.to_string().contains("loss.taus"), "{err}");
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# a comment\n\nseed=3\n  loss.lambda = 2.5 \n";
        let cfg = RunConfig::from_str_with_overrides(text, None, None).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.loss_lambda, 2.5);
    }

    #[test]
    fn out_of_range_values_rejected() {
        for bad in [
            "seed=1\nloss.tau=0\n",
            "seed=1\ncluster.eps=2.5\n",
            "seed=1\ncluster.min_pts=0\n",
            "seed=1\nmemory.momentum_source=1.5\n",
            "seed=1\naam.margin=0.9\n",
            "seed=1\noptimizer.lr_start=1e-6\n", // below lr_end default
            "seed=1\nworld.target_speakers=1\n",
            "seed=1\nbatch.source=0\n",
            "seed=1\naugment.dropout=1.0\n",
        ] {
            assert!(
                RunConfig::from_str_with_overrides(bad, None, None).is_err(),
                "expected rejection: {bad}"
            );
        }
    }

    #[test]
    fn sweep_cells_parse_table_shape() {
        let cfg = RunConfig::from_str_with_overrides("seed=1\n", None, None).unwrap();
        assert_eq!(cfg.sweep_cells.len(), 6);
        let cfg = RunConfig::from_str_with_overrides(
            "seed=1\nsweep.cells=0.5:5\n",
            None,
            None,
        )
        .unwrap();
        assert_eq!(cfg.sweep_cells, vec![(0.5, 5.0)]);
    }

    #[test]
    fn echo_header_is_sorted_and_complete() {
        let cfg = RunConfig::from_str_with_overrides("seed=9\n", None, None).unwrap();
        let header = cfg.echo_header();
        assert!(header.contains("# seed=9\n"));
        assert!(header.contains("# loss.tau=0.05\n"));
        let keys: Vec<&str> = header
            .lines()
            .skip(1)
            .map(|l| l.trim_start_matches("# ").split('=').next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }
}
