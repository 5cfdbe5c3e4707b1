//! Two-phase training: decoder pretraining against a frozen ground-truth
//! renderer, then the conversion phase with mixed intra/inter-speaker
//! supervision over the memory module (or an affine ablation).

use crate::config::RunConfig;
use crate::decoder::{DecoderDoc, DecoderGrads, ToyDecoder};
use crate::error::{Error, Result};
use crate::mfva::{BankKind, MemoryBank, MfvaDoc, MfvaModule};
use crate::numerics::{recon_loss_and_grad, Matrix};
use crate::rng::{derive_seed, tags, SplitMix64};
use crate::synth::SyntheticCorpus;
use serde::{Deserialize, Serialize};

/// Learning-rate floor that warmup starts from.
pub const LR_FLOOR: f64 = 1e-6;
/// Model document format tag.
pub const MODEL_FORMAT: &str = "memalign-model";
/// Model document schema version.
pub const MODEL_VERSION: u32 = 1;

/// Piecewise schedule: linear warmup from `LR_FLOOR` to `peak` over
/// `warmup` steps, then `peak` halved once per decay point at or below
/// the current step.
pub fn learning_rate(step: usize, peak: f64, warmup: usize, decay_points: &[usize]) -> f64 {
    if step < warmup {
        return LR_FLOOR + (peak - LR_FLOOR) * step as f64 / warmup as f64;
    }
    let halvings = decay_points.iter().filter(|&&p| p <= step).count();
    peak * 0.5f64.powi(halvings as i32)
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim_mismatch(
                "adam parameter/gradient vectors",
                params.len().max(grads.len()),
                self.m.len(),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// The trainable map from a face embedding to the decoder's conditioning
/// vector: the memory module, or a plain affine projection for the
/// `no_mfva` ablation.
#[derive(Debug, Clone)]
pub enum Conditioner {
    Mfva(MfvaModule),
    /// cond = weight * h + bias, with `weight` dim x dim row-major.
    FaceProjection { weight: Matrix, bias: Vec<f64> },
}

/// Forward-pass state a `Conditioner` needs for its backward pass.
pub enum CondCache {
    Mfva(crate::mfva::FaceRecallCache),
    FaceProjection,
}

impl Conditioner {
    /// Memory conditioner with banks drawn from `seed` and shape and
    /// temperature taken from the config.
    pub fn init_mfva(config: &RunConfig, dim: usize, seed: u64) -> Result<Self> {
        let mut module = MfvaModule::init(config.n_slots, dim, seed)?;
        if !(config.temperature > 0.0) || !config.temperature.is_finite() {
            return Err(Error::config("temperature", "must be finite and positive"));
        }
        module.temperature = config.temperature;
        module.detach_voice_weights = config.detach_voice_weights;
        Ok(Conditioner::Mfva(module))
    }

    /// Affine conditioner: weight entries N(0, 1/dim) row-major, zero bias.
    pub fn init_projection(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding_dim", "must be at least 1"));
        }
        let mut rng = SplitMix64::new(seed);
        let std = (1.0 / dim as f64).sqrt();
        let values: Vec<f64> = (0..dim * dim).map(|_| std * rng.next_normal()).collect();
        Ok(Conditioner::FaceProjection {
            weight: Matrix::new(dim, dim, values)?,
            bias: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Conditioner::Mfva(module) => module.dim(),
            Conditioner::FaceProjection { bias, .. } => bias.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Conditioner::Mfva(module) => 2 * module.n_slots() * module.dim(),
            Conditioner::FaceProjection { weight, bias } => {
                weight.rows() * weight.cols() + bias.len()
            }
        }
    }

    /// Flattening order: voice-value bank then face-key bank (memory), or
    /// weight then bias (projection), everything row-major.
    pub fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            Conditioner::Mfva(module) => {
                out.extend_from_slice(module.voice_value.slots().values());
                out.extend_from_slice(module.face_key.slots().values());
            }
            Conditioner::FaceProjection { weight, bias } => {
                out.extend_from_slice(weight.values());
                out.extend_from_slice(bias);
            }
        }
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim_mismatch(
                "conditioner flat parameters",
                flat.len(),
                self.param_count(),
            ));
        }
        match self {
            Conditioner::Mfva(module) => {
                let half = flat.len() / 2;
                module
                    .voice_value
                    .slots_mut()
                    .values_mut()
                    .copy_from_slice(&flat[..half]);
                module
                    .face_key
                    .slots_mut()
                    .values_mut()
                    .copy_from_slice(&flat[half..]);
            }
            Conditioner::FaceProjection { weight, bias } => {
                let nw = weight.rows() * weight.cols();
                weight.values_mut().copy_from_slice(&flat[..nw]);
                bias.copy_from_slice(&flat[nw..]);
            }
        }
        Ok(())
    }

    /// Maps a face embedding to the conditioning vector, keeping what the
    /// backward pass needs.
    pub fn condition_cached(&self, face: &[f64]) -> Result<(Vec<f64>, CondCache)> {
        match self {
            Conditioner::Mfva(module) => {
                let (recall, cache) = module.recall_face_cached(face)?;
                Ok((recall.embedding, CondCache::Mfva(cache)))
            }
            Conditioner::FaceProjection { weight, bias } => {
                if face.len() != weight.cols() {
                    return Err(Error::dim_mismatch(
                        "projection input",
                        face.len(),
                        weight.cols(),
                    ));
                }
                let cond: Vec<f64> = (0..weight.rows())
                    .map(|i| {
                        bias[i]
                            + weight
                                .row(i)
                                .iter()
                                .zip(face)
                                .map(|(w, x)| w * x)
                                .sum::<f64>()
                    })
                    .collect();
                Ok((cond, CondCache::FaceProjection))
            }
        }
    }

    /// Convenience forward pass without a cache.
    pub fn condition(&self, face: &[f64]) -> Result<Vec<f64>> {
        Ok(self.condition_cached(face)?.0)
    }

    /// Accumulates d(loss)/d(params) into `flat` (layout of
    /// `append_params`) given `upstream = d(loss)/d(cond)`.
    pub fn backward_accumulate(
        &self,
        face: &[f64],
        cache: &CondCache,
        upstream: &[f64],
        flat: &mut [f64],
    ) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim_mismatch(
                "conditioner gradient buffer",
                flat.len(),
                self.param_count(),
            ));
        }
        match (self, cache) {
            (Conditioner::Mfva(module), CondCache::Mfva(recall_cache)) => {
                let half = flat.len() / 2;
                let (vv, fk) = flat.split_at_mut(half);
                module.recall_face_accumulate_grads(face, recall_cache, upstream, vv, fk)
            }
            (Conditioner::FaceProjection { weight, .. }, CondCache::FaceProjection) => {
                let d_out = weight.rows();
                let d_in = weight.cols();
                if upstream.len() != d_out {
                    return Err(Error::dim_mismatch(
                        "projection upstream",
                        upstream.len(),
                        d_out,
                    ));
                }
                let (dw, db) = flat.split_at_mut(d_out * d_in);
                for i in 0..d_out {
                    for j in 0..d_in {
                        dw[i * d_in + j] += upstream[i] * face[j];
                    }
                    db[i] += upstream[i];
                }
                Ok(())
            }
            _ => Err(Error::Validation(
                "conditioner cache kind does not match conditioner".into(),
            )),
        }
    }
}

/// One step's loss breakdown. `store`, `align`, `intra`, `inter` are the
/// raw per-pair means; `total` is the lambda-weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossComponents {
    pub total: f64,
    pub store: f64,
    pub align: f64,
    pub intra: f64,
    pub inter: f64,
}

/// Gradient accumulator covering the conditioner and the decoder.
pub struct GradBuffer {
    pub cond: Vec<f64>,
    pub dec: DecoderGrads,
}

impl GradBuffer {
    pub fn zeros(conditioner: &Conditioner, decoder: &ToyDecoder) -> Self {
        GradBuffer {
            cond: vec![0.0; conditioner.param_count()],
            dec: DecoderGrads::zeros(decoder),
        }
    }

    pub fn reset(&mut self) {
        self.cond.fill(0.0);
        self.dec.w1.values_mut().fill(0.0);
        self.dec.b1.fill(0.0);
        self.dec.w2.values_mut().fill(0.0);
        self.dec.b2.fill(0.0);
        self.dec.cond.fill(0.0);
    }

    /// Flat order: conditioner params, then decoder params.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.cond);
        ToyDecoder::append_grads(&self.dec, out);
    }
}

fn add_decoder_param_grads(into: &mut DecoderGrads, from: &DecoderGrads) {
    for (a, b) in into.w1.values_mut().iter_mut().zip(from.w1.values()) {
        *a += b;
    }
    for (a, b) in into.b1.iter_mut().zip(&from.b1) {
        *a += b;
    }
    for (a, b) in into.w2.values_mut().iter_mut().zip(from.w2.values()) {
        *a += b;
    }
    for (a, b) in into.b2.iter_mut().zip(&from.b2) {
        *a += b;
    }
}

/// Intra-speaker reconstruction: decode the speaker's own content
/// conditioned on their recalled face embedding and match the renderer
/// target. Gradients (scaled by `scale`) flow into the conditioner and
/// the decoder. Returns the raw unscaled loss.
pub fn intra_loss_and_grad(
    conditioner: &Conditioner,
    decoder: &ToyDecoder,
    content: &Matrix,
    pitch: &[f64],
    face: &[f64],
    target: &Matrix,
    scale: f64,
    grads: &mut GradBuffer,
) -> Result<f64> {
    let (cond, cache) = conditioner.condition_cached(face)?;
    let (out, dec_cache) = decoder.decode_cached(content, &cond, pitch)?;
    let (loss, dout) = recon_loss_and_grad(out.values(), target.values())?;
    let upstream = Matrix::new(
        out.rows(),
        out.cols(),
        dout.iter().map(|g| g * scale).collect(),
    )?;
    let mut local = DecoderGrads::zeros(decoder);
    decoder.backward_accumulate(&dec_cache, &upstream, &mut local)?;
    add_decoder_param_grads(&mut grads.dec, &local);
    conditioner.backward_accumulate(face, &cache, &local.cond, &mut grads.cond)?;
    Ok(loss)
}

/// Inter-speaker (pseudo-parallel) supervision: the conversion conditioned
/// on the target's true voice embedding is a constant target for the same
/// conversion conditioned on the recalled face embedding. Gradients
/// (scaled by `scale`) flow into the conditioner only, unless
/// `updates_decoder` also opens the decoder's face-path parameters.
/// Returns the raw unscaled loss.
#[allow(clippy::too_many_arguments)]
pub fn inter_loss_and_grad(
    conditioner: &Conditioner,
    decoder: &ToyDecoder,
    source_speaker: u32,
    target_speaker: u32,
    content: &Matrix,
    pitch: &[f64],
    target_face: &[f64],
    target_voice: &[f64],
    updates_decoder: bool,
    scale: f64,
    grads: &mut GradBuffer,
) -> Result<f64> {
    if source_speaker == target_speaker {
        return Err(Error::Validation(format!(
            "inter-speaker pair needs two distinct speakers, got {source_speaker} twice"
        )));
    }
    let speech_target = decoder.decode(content, target_voice, pitch)?;
    let (cond, cache) = conditioner.condition_cached(target_face)?;
    let (out, dec_cache) = decoder.decode_cached(content, &cond, pitch)?;
    let (loss, dout) = recon_loss_and_grad(out.values(), speech_target.values())?;
    let upstream = Matrix::new(
        out.rows(),
        out.cols(),
        dout.iter().map(|g| g * scale).collect(),
    )?;
    let mut local = DecoderGrads::zeros(decoder);
    decoder.backward_accumulate(&dec_cache, &upstream, &mut local)?;
    if updates_decoder {
        add_decoder_param_grads(&mut grads.dec, &local);
    }
    conditioner.backward_accumulate(target_face, &cache, &local.cond, &mut grads.cond)?;
    Ok(loss)
}

/// Store and alignment losses for one (voice, face) feature pair,
/// accumulated into the memory region of the gradient buffer at the given
/// scales. Returns the raw (store, align) losses; the projection ablation
/// has no memory, so both are zero there.
pub fn store_align_accumulate(
    conditioner: &Conditioner,
    voice: &[f64],
    face: &[f64],
    store_scale: f64,
    align_scale: f64,
    grads: &mut GradBuffer,
) -> Result<(f64, f64)> {
    let Conditioner::Mfva(module) = conditioner else {
        return Ok((0.0, 0.0));
    };
    let half = grads.cond.len() / 2;
    let store = module.store_loss(voice)?;
    for (g, s) in grads.cond[..half].iter_mut().zip(store.voice_value_grad.values()) {
        *g += store_scale * s;
    }
    let align = module.align_loss(voice, face)?;
    for (g, s) in grads.cond[half..].iter_mut().zip(align.face_key_grad.values()) {
        *g += align_scale * s;
    }
    if let Some(vv) = &align.voice_value_grad {
        for (g, s) in grads.cond[..half].iter_mut().zip(vv.values()) {
            *g += align_scale * s;
        }
    }
    Ok((store.loss, align.loss))
}

/// The frozen ground-truth renderer: a decoder of the configured shape
/// drawn deterministically from the corpus seed. Its outputs play the role
/// of real recordings for both phases and for the output-mode probe.
pub fn ground_truth_renderer(corpus: &SyntheticCorpus, config: &RunConfig) -> Result<ToyDecoder> {
    ToyDecoder::init(
        corpus.spec.content_dim,
        corpus.spec.embedding_dim,
        config.hidden_dim,
        config.output_dim,
        derive_seed(corpus.spec.seed, tags::RENDERER),
    )
}

/// Renderer targets for every utterance of every speaker, indexed
/// [speaker index][utterance index]. Each target conditions the renderer
/// on that utterance's own voice embedding.
pub fn render_targets(corpus: &SyntheticCorpus, renderer: &ToyDecoder) -> Result<Vec<Vec<Matrix>>> {
    corpus
        .speakers
        .iter()
        .map(|speaker| {
            speaker
                .utterances
                .iter()
                .zip(&speaker.voices)
                .map(|(utterance, voice)| {
                    renderer.decode(&utterance.content, voice, &utterance.pitch)
                })
                .collect()
        })
        .collect()
}

/// Result of the pretraining phase.
pub struct PretrainOutcome {
    pub decoder: ToyDecoder,
    pub loss_curve: Vec<LossComponents>,
    pub final_losses: Option<LossComponents>,
}

/// Result of the conversion training phase.
pub struct TrainOutcome {
    pub conditioner: Conditioner,
    pub decoder: ToyDecoder,
    pub loss_curve: Vec<LossComponents>,
    pub final_losses: Option<LossComponents>,
}

fn check_finite_loss(loss: f64, phase: &str, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite {phase} loss {loss} at step {step}"
        )));
    }
    Ok(())
}

/// Phase 1: trains the decoder to reproduce the renderer's targets when
/// conditioned on each utterance's true voice embedding. Per step,
/// `batch_pairs` samples are drawn as (speaker index, utterance index)
/// pairs from one stream seeded by `seed ^ tags::PRETRAIN`; the decoder
/// initializes from `seed ^ tags::DECODER_INIT`.
pub fn pretrain(corpus: &SyntheticCorpus, config: &RunConfig) -> Result<PretrainOutcome> {
    let n_train = corpus.train_speakers().len();
    if n_train == 0 {
        return Err(Error::Validation("training corpus has no speakers".into()));
    }
    let renderer = ground_truth_renderer(corpus, config)?;
    let targets = render_targets(corpus, &renderer)?;
    let mut decoder = ToyDecoder::init(
        corpus.spec.content_dim,
        corpus.spec.embedding_dim,
        config.hidden_dim,
        config.output_dim,
        derive_seed(config.seed, tags::DECODER_INIT),
    )?;
    let mut rng = SplitMix64::new(derive_seed(config.seed, tags::PRETRAIN));
    let mut adam = Adam::new(decoder.param_count());
    let mut flat = Vec::with_capacity(decoder.param_count());
    let mut grads = DecoderGrads::zeros(&decoder);
    let mut loss_curve = Vec::with_capacity(config.pretrain_steps);
    let batch = config.batch_pairs;
    for step in 0..config.pretrain_steps {
        grads.w1.values_mut().fill(0.0);
        grads.b1.fill(0.0);
        grads.w2.values_mut().fill(0.0);
        grads.b2.fill(0.0);
        grads.cond.fill(0.0);
        let mut mean_loss = 0.0;
        for _ in 0..batch {
            let speaker = rng.next_below(n_train);
            let utterance = rng.next_below(corpus.spec.utterances_per_speaker);
            let data = &corpus.speakers[speaker];
            let features = &data.utterances[utterance];
            let (out, cache) =
                decoder.decode_cached(&features.content, &data.voices[utterance], &features.pitch)?;
            let (loss, dout) =
                recon_loss_and_grad(out.values(), targets[speaker][utterance].values())?;
            mean_loss += loss / batch as f64;
            let upstream = Matrix::new(
                out.rows(),
                out.cols(),
                dout.iter().map(|g| g / batch as f64).collect(),
            )?;
            decoder.backward_accumulate(&cache, &upstream, &mut grads)?;
        }
        check_finite_loss(mean_loss, "pretraining", step)?;
        let lr = learning_rate(
            step,
            config.pretrain_peak_lr,
            config.pretrain_warmup_steps,
            &config.pretrain_decay_points,
        );
        flat.clear();
        decoder.append_params(&mut flat);
        let mut grad_flat = Vec::with_capacity(flat.len());
        ToyDecoder::append_grads(&grads, &mut grad_flat);
        adam.step(&mut flat, &grad_flat, lr)?;
        decoder.set_params(&flat)?;
        loss_curve.push(LossComponents {
            total: mean_loss,
            store: 0.0,
            align: 0.0,
            intra: mean_loss,
            inter: 0.0,
        });
    }
    let final_losses = loss_curve.last().copied();
    Ok(PretrainOutcome {
        decoder,
        loss_curve,
        final_losses,
    })
}

/// Phase 2: trains the conditioner (and decoder) with the mixed
/// objective. Per step, `batch_pairs` speaker pairs are drawn from one
/// stream seeded by `train_seed ^ tags::TRAIN` in the order: source index
/// A, distinct target index B (offset draw), A's utterance, A's face
/// image, B's utterance, B's face image. Per pair the total is
/// `lambda1 * store + lambda2 * align + intra + lambda3 * inter`, with
/// store/align averaged over A and B.
pub fn fit(
    corpus: &SyntheticCorpus,
    config: &RunConfig,
    pretrained: Option<&ToyDecoder>,
) -> Result<TrainOutcome> {
    let n_train = corpus.train_speakers().len();
    if n_train < 2 {
        return Err(Error::Validation(format!(
            "conversion training needs at least 2 training speakers, got {n_train}"
        )));
    }
    let renderer = ground_truth_renderer(corpus, config)?;
    let targets = render_targets(corpus, &renderer)?;
    let mut decoder = match pretrained {
        Some(d) => d.clone(),
        None => ToyDecoder::init(
            corpus.spec.content_dim,
            corpus.spec.embedding_dim,
            config.hidden_dim,
            config.output_dim,
            derive_seed(config.seed, tags::DECODER_INIT),
        )?,
    };
    if decoder.content_dim() != corpus.spec.content_dim
        || decoder.cond_dim() != corpus.spec.embedding_dim
    {
        return Err(Error::dim_mismatch(
            "pretrained decoder input shape vs corpus",
            decoder.content_dim() + decoder.cond_dim(),
            corpus.spec.content_dim + corpus.spec.embedding_dim,
        ));
    }
    let train_seed = config.resolved_train_seed();
    let mut conditioner = if config.no_mfva {
        Conditioner::init_projection(
            corpus.spec.embedding_dim,
            derive_seed(train_seed, tags::PROJ_INIT),
        )?
    } else {
        Conditioner::init_mfva(
            config,
            corpus.spec.embedding_dim,
            derive_seed(train_seed, tags::MFVA_INIT),
        )?
    };
    let mut rng = SplitMix64::new(derive_seed(train_seed, tags::TRAIN));
    let n_cond = conditioner.param_count();
    let n_total = n_cond + decoder.param_count();
    let mut adam = Adam::new(n_total);
    let mut grads = GradBuffer::zeros(&conditioner, &decoder);
    let mut flat = Vec::with_capacity(n_total);
    let mut grad_flat = Vec::with_capacity(n_total);
    let mut loss_curve = Vec::with_capacity(config.steps);
    let batch = config.batch_pairs;
    let pair_scale = 1.0 / batch as f64;
    for step in 0..config.steps {
        grads.reset();
        let mut components = LossComponents {
            total: 0.0,
            store: 0.0,
            align: 0.0,
            intra: 0.0,
            inter: 0.0,
        };
        for _ in 0..batch {
            let a = rng.next_below(n_train);
            let b = (a + 1 + rng.next_below(n_train - 1)) % n_train;
            let u_a = rng.next_below(corpus.spec.utterances_per_speaker);
            let e_a = rng.next_below(corpus.spec.images_per_speaker);
            let u_b = rng.next_below(corpus.spec.utterances_per_speaker);
            let e_b = rng.next_below(corpus.spec.images_per_speaker);
            let data_a = &corpus.speakers[a];
            let data_b = &corpus.speakers[b];
            let features_a = &data_a.utterances[u_a];

            let intra = intra_loss_and_grad(
                &conditioner,
                &decoder,
                &features_a.content,
                &features_a.pitch,
                &data_a.faces[e_a],
                &targets[a][u_a],
                pair_scale,
                &mut grads,
            )?;
            components.intra += intra * pair_scale;

            if !config.no_inter {
                let inter = inter_loss_and_grad(
                    &conditioner,
                    &decoder,
                    data_a.latent.speaker_id,
                    data_b.latent.speaker_id,
                    &features_a.content,
                    &features_a.pitch,
                    &data_b.faces[e_b],
                    &data_b.voices[u_b],
                    config.inter_updates_decoder,
                    config.lambda3 * pair_scale,
                    &mut grads,
                )?;
                components.inter += inter * pair_scale;
            }

            let (store_a, align_a) = store_align_accumulate(
                &conditioner,
                &data_a.voices[u_a],
                &data_a.faces[e_a],
                config.lambda1 * 0.5 * pair_scale,
                config.lambda2 * 0.5 * pair_scale,
                &mut grads,
            )?;
            let (store_b, align_b) = store_align_accumulate(
                &conditioner,
                &data_b.voices[u_b],
                &data_b.faces[e_b],
                config.lambda1 * 0.5 * pair_scale,
                config.lambda2 * 0.5 * pair_scale,
                &mut grads,
            )?;
            components.store += 0.5 * (store_a + store_b) * pair_scale;
            components.align += 0.5 * (align_a + align_b) * pair_scale;
        }
        components.total = config.lambda1 * components.store
            + config.lambda2 * components.align
            + components.intra
            + config.lambda3 * components.inter;
        check_finite_loss(components.total, "training", step)?;
        let lr = learning_rate(step, config.peak_lr, config.warmup_steps, &config.decay_points);
        flat.clear();
        conditioner.append_params(&mut flat);
        decoder.append_params(&mut flat);
        grads.flatten_into(&mut grad_flat);
        adam.step(&mut flat, &grad_flat, lr)?;
        conditioner.set_params(&flat[..n_cond])?;
        decoder.set_params(&flat[n_cond..])?;
        loss_curve.push(components);
    }
    let final_losses = loss_curve.last().copied();
    Ok(TrainOutcome {
        conditioner,
        decoder,
        loss_curve,
        final_losses,
    })
}

/// Maximum relative gradient errors observed by `gradient_check_suite`.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub configs_per_loss: usize,
    pub max_store: f64,
    pub max_align: f64,
    pub max_intra: f64,
    pub max_inter: f64,
}

impl GradCheckReport {
    pub fn max_overall(&self) -> f64 {
        self.max_store
            .max(self.max_align)
            .max(self.max_intra)
            .max(self.max_inter)
    }
}

/// Compares every analytic gradient against central finite differences on
/// randomized shapes, banks, decoders, and features. Detached quantities
/// (voice-side weights under detachment, the inter speech target, the
/// decoder when it is closed to inter updates) are baked at the base
/// parameters inside the probe closures, matching the training semantics.
pub fn gradient_check_suite(seed: u64, eps: f64, configs_per_loss: usize) -> Result<GradCheckReport> {
    use crate::numerics::{finite_difference_gradient, l2_relative_error};
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config("eps", "must be finite and positive"));
    }
    if configs_per_loss == 0 {
        return Err(Error::config("configs", "must be at least 1"));
    }
    let mut rng = SplitMix64::new(derive_seed(seed, tags::GRADCHECK));
    let mut report = GradCheckReport {
        configs_per_loss,
        max_store: 0.0,
        max_align: 0.0,
        max_intra: 0.0,
        max_inter: 0.0,
    };

    for case in 0..configs_per_loss {
        let n = 2 + rng.next_below(6);
        let d = 2 + rng.next_below(4);
        let tau = 0.05 + 1.5 * rng.next_f64();
        let detach = rng.next_below(2) == 0;
        let d_c = 1 + rng.next_below(3);
        let hidden = 2 + rng.next_below(4);
        let d_x = 1 + rng.next_below(3);
        let frames = 1 + rng.next_below(3);
        let use_projection = case % 4 == 3;
        let updates_decoder = rng.next_below(2) == 0;

        let mut bank_values = |count: usize| -> Vec<f64> {
            (0..count).map(|_| rng.next_normal()).collect()
        };
        let module = MfvaModule::new(
            MemoryBank::new(BankKind::VoiceValue, Matrix::new(n, d, bank_values(n * d))?)?,
            MemoryBank::new(BankKind::FaceKey, Matrix::new(n, d, bank_values(n * d))?)?,
            tau,
            detach,
        )?;
        let voice: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let face: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();

        // Store loss: gradient over the voice-value bank.
        {
            let analytic = module.store_loss(&voice)?;
            let base = module.voice_value.slots().values().to_vec();
            let probe = |flat: &[f64]| {
                let mut m = module.clone();
                m.voice_value.slots_mut().values_mut().copy_from_slice(flat);
                Ok(m.store_loss(&voice)?.loss)
            };
            let numeric = finite_difference_gradient(probe, &base, eps)?;
            let rel = l2_relative_error(analytic.voice_value_grad.values(), &numeric);
            report.max_store = report.max_store.max(rel);
        }

        // Alignment loss: face keys always; voice values only when the
        // voice side is attached (detached weights are baked as constants).
        {
            let analytic = module.align_loss(&voice, &face)?;
            let mut analytic_flat = Vec::new();
            let mut base = Vec::new();
            if !detach {
                analytic_flat
                    .extend_from_slice(analytic.voice_value_grad.as_ref().unwrap().values());
                base.extend_from_slice(module.voice_value.slots().values());
            }
            analytic_flat.extend_from_slice(analytic.face_key_grad.values());
            base.extend_from_slice(module.face_key.slots().values());
            let n_vv = if detach { 0 } else { n * d };
            let probe = |flat: &[f64]| {
                let mut m = module.clone();
                if !detach {
                    m.voice_value
                        .slots_mut()
                        .values_mut()
                        .copy_from_slice(&flat[..n_vv]);
                }
                m.face_key
                    .slots_mut()
                    .values_mut()
                    .copy_from_slice(&flat[n_vv..]);
                Ok(m.align_loss(&voice, &face)?.loss)
            };
            let numeric = finite_difference_gradient(probe, &base, eps)?;
            let rel = l2_relative_error(&analytic_flat, &numeric);
            report.max_align = report.max_align.max(rel);
        }

        // Shared decoder-path ingredients.
        let conditioner = if use_projection {
            Conditioner::init_projection(d, rng.next_u64())?
        } else {
            Conditioner::Mfva(module.clone())
        };
        let decoder = ToyDecoder::init(d_c, d, hidden, d_x, rng.next_u64())?;
        let content = Matrix::new(
            frames,
            d_c,
            (0..frames * d_c).map(|_| rng.next_normal()).collect(),
        )?;
        let pitch: Vec<f64> = (0..frames).map(|_| rng.next_normal()).collect();
        let target = Matrix::new(
            frames,
            d_x,
            (0..frames * d_x).map(|_| rng.next_normal()).collect(),
        )?;
        let n_cond = conditioner.param_count();
        let n_dec = decoder.param_count();

        // Intra loss: gradient over conditioner and decoder jointly.
        {
            let mut grads = GradBuffer::zeros(&conditioner, &decoder);
            intra_loss_and_grad(
                &conditioner,
                &decoder,
                &content,
                &pitch,
                &face,
                &target,
                1.0,
                &mut grads,
            )?;
            let mut analytic = Vec::with_capacity(n_cond + n_dec);
            grads.flatten_into(&mut analytic);
            let mut base = Vec::with_capacity(n_cond + n_dec);
            conditioner.append_params(&mut base);
            decoder.append_params(&mut base);
            let probe = |flat: &[f64]| {
                let mut c = conditioner.clone();
                let mut dec = decoder.clone();
                c.set_params(&flat[..n_cond])?;
                dec.set_params(&flat[n_cond..])?;
                let cond = c.condition(&face)?;
                let out = dec.decode(&content, &cond, &pitch)?;
                Ok(recon_loss_and_grad(out.values(), target.values())?.0)
            };
            let numeric = finite_difference_gradient(probe, &base, eps)?;
            let rel = l2_relative_error(&analytic, &numeric);
            report.max_intra = report.max_intra.max(rel);
        }

        // Inter loss: the speech target is baked at the base parameters;
        // the decoder block is probed only when it receives updates.
        {
            let mut grads = GradBuffer::zeros(&conditioner, &decoder);
            inter_loss_and_grad(
                &conditioner,
                &decoder,
                0,
                1,
                &content,
                &pitch,
                &face,
                &voice,
                updates_decoder,
                1.0,
                &mut grads,
            )?;
            let speech_target = decoder.decode(&content, &voice, &pitch)?;
            let mut analytic = grads.cond.clone();
            let mut base = Vec::new();
            conditioner.append_params(&mut base);
            if updates_decoder {
                ToyDecoder::append_grads(&grads.dec, &mut analytic);
                decoder.append_params(&mut base);
            }
            let probe = |flat: &[f64]| {
                let mut c = conditioner.clone();
                c.set_params(&flat[..n_cond])?;
                let mut dec = decoder.clone();
                if updates_decoder {
                    dec.set_params(&flat[n_cond..])?;
                }
                let cond = c.condition(&face)?;
                let out = dec.decode(&content, &cond, &pitch)?;
                Ok(recon_loss_and_grad(out.values(), speech_target.values())?.0)
            };
            let numeric = finite_difference_gradient(probe, &base, eps)?;
            let rel = l2_relative_error(&analytic, &numeric);
            report.max_inter = report.max_inter.max(rel);
        }
    }
    Ok(report)
}

/// Serialized affine face projection (the `no_mfva` conditioner).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceProjectionDoc {
    pub dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized trained model: format header, effective config echo, phase
/// metadata, the conditioner (exactly one variant after the conversion
/// phase, neither after pretraining), and the decoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub format: String,
    pub version: u32,
    pub phase: String,
    pub run_config: RunConfig,
    pub steps_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_losses: Option<LossComponents>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfva: Option<MfvaDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_proj: Option<FaceProjectionDoc>,
    pub decoder: DecoderDoc,
}

impl ModelDoc {
    pub fn for_pretrain(config: &RunConfig, outcome: &PretrainOutcome) -> ModelDoc {
        ModelDoc {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            phase: "pretrain".to_string(),
            run_config: config.clone(),
            steps_completed: config.pretrain_steps,
            final_losses: outcome.final_losses,
            mfva: None,
            face_proj: None,
            decoder: outcome.decoder.to_doc(),
        }
    }

    pub fn for_train(config: &RunConfig, outcome: &TrainOutcome) -> ModelDoc {
        let (mfva, face_proj) = match &outcome.conditioner {
            Conditioner::Mfva(module) => (Some(module.to_doc()), None),
            Conditioner::FaceProjection { weight, bias } => (
                None,
                Some(FaceProjectionDoc {
                    dim: bias.len(),
                    weight: weight.values().to_vec(),
                    bias: bias.clone(),
                }),
            ),
        };
        ModelDoc {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            phase: "train".to_string(),
            run_config: config.clone(),
            steps_completed: config.steps,
            final_losses: outcome.final_losses,
            mfva,
            face_proj,
            decoder: outcome.decoder.to_doc(),
        }
    }

    pub fn validate_header(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model document: format {:?} version {}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    /// Reconstructs the conditioner; `None` for a pretraining-only model.
    pub fn conditioner(&self) -> Result<Option<Conditioner>> {
        match (&self.mfva, &self.face_proj) {
            (Some(_), Some(_)) => Err(Error::Validation(
                "model document has both a memory module and a face projection".into(),
            )),
            (Some(doc), None) => Ok(Some(Conditioner::Mfva(MfvaModule::from_doc(doc)?))),
            (None, Some(doc)) => Ok(Some(Conditioner::FaceProjection {
                weight: Matrix::new(doc.dim, doc.dim, doc.weight.clone())?,
                bias: doc.bias.clone(),
            })),
            (None, None) => Ok(None),
        }
    }

    pub fn decoder(&self) -> Result<ToyDecoder> {
        ToyDecoder::from_doc(&self.decoder)
    }

    pub fn load(path: &std::path::Path) -> Result<ModelDoc> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDoc = serde_json::from_str(&text).map_err(|e| {
            Error::Validation(format!("{}: invalid model document: {e}", path.display()))
        })?;
        doc.validate_header()?;
        Ok(doc)
    }
}
