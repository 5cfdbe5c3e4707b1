//! One flat run configuration shared by every command, so a whole
//! experiment (gen, pretrain, train, eval) reproduces from a single file.

use crate::error::{Error, Result};
use crate::synth::CorpusSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which embedding the evaluation metrics are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Metrics on the recalled conditioning embedding itself.
    Embedding,
    /// Metrics on probe-extracted embeddings of decoded output frames.
    Output,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Embedding => "embedding",
            EvalMode::Output => "output",
        }
    }
}

fn d_n_train_speakers() -> usize {
    20
}
fn d_n_holdout_speakers() -> usize {
    12
}
fn d_images_per_speaker() -> usize {
    20
}
fn d_utterances_per_speaker() -> usize {
    20
}
fn d_latent_dim() -> usize {
    8
}
fn d_embedding_dim() -> usize {
    16
}
fn d_sigma() -> f64 {
    0.05
}
fn d_frames() -> usize {
    32
}
fn d_content_dim() -> usize {
    8
}
fn d_seed() -> u64 {
    1
}
fn d_lambda1() -> f64 {
    1.0
}
fn d_lambda2() -> f64 {
    10.0
}
fn d_lambda3() -> f64 {
    0.2
}
fn d_steps() -> usize {
    2000
}
fn d_batch_pairs() -> usize {
    8
}
fn d_peak_lr() -> f64 {
    2.5e-4
}
fn d_warmup_steps() -> usize {
    300
}
fn d_decay_points() -> Vec<usize> {
    vec![800, 1200, 1600]
}
fn d_pretrain_steps() -> usize {
    2000
}
fn d_pretrain_peak_lr() -> f64 {
    1e-3
}
fn d_n_slots() -> usize {
    32
}
fn d_temperature() -> f64 {
    0.1
}
fn d_true() -> bool {
    true
}
fn d_false() -> bool {
    false
}
fn d_hidden_dim() -> usize {
    32
}
fn d_output_dim() -> usize {
    16
}
fn d_eval_mode() -> EvalMode {
    EvalMode::Embedding
}
fn d_shr_shuffles() -> usize {
    500
}
fn d_sdr_shuffles() -> usize {
    100
}
fn d_eval_targets() -> usize {
    8
}
fn d_eval_sources() -> usize {
    4
}
fn d_eval_utterances() -> usize {
    6
}
fn d_eval_images() -> usize {
    3
}

/// Flat experiment configuration: corpus shape, both training phases,
/// and the evaluation protocol. Unknown keys are rejected; every output
/// document echoes the effective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Corpus shape (mirrors CorpusSpec).
    #[serde(default = "d_n_train_speakers")]
    pub n_train_speakers: usize,
    #[serde(default = "d_n_holdout_speakers")]
    pub n_holdout_speakers: usize,
    #[serde(default = "d_images_per_speaker")]
    pub images_per_speaker: usize,
    #[serde(default = "d_utterances_per_speaker")]
    pub utterances_per_speaker: usize,
    #[serde(default = "d_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "d_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "d_sigma")]
    pub sigma_face: f64,
    #[serde(default = "d_sigma")]
    pub sigma_voice: f64,
    #[serde(default = "d_frames")]
    pub frames: usize,
    #[serde(default = "d_content_dim")]
    pub content_dim: usize,
    /// Base seed; derived streams (corpus, phases, eval) fork from it.
    #[serde(default = "d_seed")]
    pub seed: u64,

    // Memory module.
    #[serde(default = "d_n_slots")]
    pub n_slots: usize,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_true")]
    pub detach_voice_weights: bool,

    // Conversion-phase optimization.
    #[serde(default = "d_lambda1")]
    pub lambda1: f64,
    #[serde(default = "d_lambda2")]
    pub lambda2: f64,
    #[serde(default = "d_lambda3")]
    pub lambda3: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_batch_pairs")]
    pub batch_pairs: usize,
    #[serde(default = "d_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "d_warmup_steps")]
    pub warmup_steps: usize,
    #[serde(default = "d_decay_points")]
    pub decay_points: Vec<usize>,
    #[serde(default)]
    pub train_seed: Option<u64>,

    // Pretraining phase.
    #[serde(default = "d_pretrain_steps")]
    pub pretrain_steps: usize,
    #[serde(default = "d_pretrain_peak_lr")]
    pub pretrain_peak_lr: f64,
    #[serde(default = "d_warmup_steps")]
    pub pretrain_warmup_steps: usize,
    #[serde(default = "d_decay_points")]
    pub pretrain_decay_points: Vec<usize>,

    // Decoder shape.
    #[serde(default = "d_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "d_output_dim")]
    pub output_dim: usize,

    // Ablations and gradient-flow switches.
    #[serde(default = "d_false")]
    pub no_inter: bool,
    #[serde(default = "d_false")]
    pub no_mfva: bool,
    #[serde(default = "d_false")]
    pub no_pretrain: bool,
    #[serde(default = "d_false")]
    pub inter_updates_decoder: bool,

    // Evaluation protocol.
    #[serde(default = "d_eval_mode")]
    pub eval_mode: EvalMode,
    #[serde(default = "d_shr_shuffles")]
    pub shr_shuffles: usize,
    #[serde(default = "d_sdr_shuffles")]
    pub sdr_shuffles: usize,
    #[serde(default = "d_eval_targets")]
    pub eval_targets: usize,
    #[serde(default = "d_eval_sources")]
    pub eval_sources: usize,
    #[serde(default = "d_eval_utterances")]
    pub eval_utterances: usize,
    #[serde(default = "d_eval_images")]
    pub eval_images: usize,
    #[serde(default)]
    pub eval_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty object fills every default")
    }
}

impl RunConfig {
    /// Loads and validates a config file. Parse failures (including
    /// unknown keys) are configuration errors, not I/O errors.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// The corpus-shape fields as a CorpusSpec.
    pub fn to_corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_train_speakers: self.n_train_speakers,
            n_holdout_speakers: self.n_holdout_speakers,
            images_per_speaker: self.images_per_speaker,
            utterances_per_speaker: self.utterances_per_speaker,
            latent_dim: self.latent_dim,
            embedding_dim: self.embedding_dim,
            sigma_face: self.sigma_face,
            sigma_voice: self.sigma_voice,
            frames: self.frames,
            content_dim: self.content_dim,
            seed: self.seed,
        }
    }

    /// Overwrites the corpus-shape fields from a loaded corpus spec, so
    /// echoed configs reflect the corpus actually used.
    pub fn apply_corpus_spec(&mut self, spec: &CorpusSpec) {
        self.n_train_speakers = spec.n_train_speakers;
        self.n_holdout_speakers = spec.n_holdout_speakers;
        self.images_per_speaker = spec.images_per_speaker;
        self.utterances_per_speaker = spec.utterances_per_speaker;
        self.latent_dim = spec.latent_dim;
        self.embedding_dim = spec.embedding_dim;
        self.sigma_face = spec.sigma_face;
        self.sigma_voice = spec.sigma_voice;
        self.frames = spec.frames;
        self.content_dim = spec.content_dim;
        self.seed = spec.seed;
    }

    /// Seed for the conversion training phase (base seed unless pinned).
    pub fn resolved_train_seed(&self) -> u64 {
        self.train_seed.unwrap_or(self.seed)
    }

    /// Seed for evaluation shuffles (base seed unless pinned).
    pub fn resolved_eval_seed(&self) -> u64 {
        self.eval_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.to_corpus_spec().validate()?;
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::config(name, "must be finite and nonnegative"));
            }
        }
        for (name, value) in [
            ("peak_lr", self.peak_lr),
            ("pretrain_peak_lr", self.pretrain_peak_lr),
            ("temperature", self.temperature),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::config(name, "must be finite and positive"));
            }
        }
        for (name, value) in [
            ("batch_pairs", self.batch_pairs),
            ("n_slots", self.n_slots),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
            ("shr_shuffles", self.shr_shuffles),
            ("sdr_shuffles", self.sdr_shuffles),
            ("eval_targets", self.eval_targets),
            ("eval_sources", self.eval_sources),
            ("eval_utterances", self.eval_utterances),
            ("eval_images", self.eval_images),
        ] {
            if value == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        for (name, points) in [
            ("decay_points", &self.decay_points),
            ("pretrain_decay_points", &self.pretrain_decay_points),
        ] {
            if points.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(name, "must be strictly increasing"));
            }
        }
        if self.eval_targets + self.eval_sources > self.n_holdout_speakers {
            return Err(Error::config(
                "eval_targets",
                format!(
                    "eval_targets + eval_sources = {} exceeds n_holdout_speakers = {}",
                    self.eval_targets + self.eval_sources,
                    self.n_holdout_speakers
                ),
            ));
        }
        if self.eval_utterances > self.utterances_per_speaker {
            return Err(Error::config(
                "eval_utterances",
                format!(
                    "{} exceeds utterances_per_speaker = {}",
                    self.eval_utterances, self.utterances_per_speaker
                ),
            ));
        }
        if self.eval_images > self.images_per_speaker {
            return Err(Error::config(
                "eval_images",
                format!(
                    "{} exceeds images_per_speaker = {}",
                    self.eval_images, self.images_per_speaker
                ),
            ));
        }
        Ok(())
    }
}
