//! Paired key-value slot memories bridging face and voice embeddings:
//! attention-based recall for both modalities, the store and alignment
//! losses with hand-derived gradients, and slot-weight interpolation.
//!
//! Keys on the face side come from the face-key bank; recalled embeddings
//! are always combinations of voice-value slots, so any face query is
//! squeezed through the voice-slot convex hull.

use crate::error::{Error, Result};
use crate::numerics::{
    cosine_similarity, cosine_similarity_with_grad, dot, kl_divergence, mse_loss, softmax,
    softmax_backward, Matrix, WeightVector,
};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

/// Full-scale profile slot count; the desk-scale test profile uses 32.
pub const REFERENCE_SLOTS: usize = 96;
/// Full-scale profile embedding dimension; the desk-scale profile uses 16.
pub const REFERENCE_DIM: usize = 256;

/// Which of the two banks a slot matrix plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    VoiceValue,
    FaceKey,
}

/// N x D matrix of trainable slots tagged with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub kind: BankKind,
    slots: Matrix,
}

impl MemoryBank {
    pub fn new(kind: BankKind, slots: Matrix) -> Result<Self> {
        if slots.rows() == 0 || slots.cols() == 0 {
            return Err(Error::config(
                "memory_bank",
                format!("needs at least one {}x{} slot", slots.rows(), slots.cols()),
            ));
        }
        Ok(MemoryBank { kind, slots })
    }

    pub fn n_slots(&self) -> usize {
        self.slots.rows()
    }

    pub fn dim(&self) -> usize {
        self.slots.cols()
    }

    pub fn slots(&self) -> &Matrix {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut Matrix {
        &mut self.slots
    }
}

/// Attention weights over a bank: cosine similarity of the query against
/// every slot, then temperature softmax over the slot index.
pub fn attention_weights(
    query: &[f64],
    bank: &MemoryBank,
    temperature: f64,
) -> Result<WeightVector> {
    let cos = slot_cosines(query, bank)?;
    softmax(&cos, temperature)
}

fn slot_cosines(query: &[f64], bank: &MemoryBank) -> Result<Vec<f64>> {
    if query.len() != bank.dim() {
        return Err(Error::dim_mismatch(
            "attention query vs bank slot",
            query.len(),
            bank.dim(),
        ));
    }
    (0..bank.n_slots())
        .map(|i| cosine_similarity(query, bank.slots.row(i)))
        .collect()
}

/// Result of a recall: the simplex weights used and the voice-space
/// embedding they combine to. embedding = voice_value^T * weights always.
#[derive(Debug, Clone)]
pub struct RecallResult {
    pub weights: WeightVector,
    pub embedding: Vec<f64>,
}

/// Store loss value and its gradient with respect to the voice-value bank.
#[derive(Debug, Clone)]
pub struct StoreLoss {
    pub loss: f64,
    pub voice_value_grad: Matrix,
}

/// Alignment loss value and gradients. The voice-side gradient is only
/// present when the module does not detach the voice weights.
#[derive(Debug, Clone)]
pub struct AlignLoss {
    pub loss: f64,
    pub face_key_grad: Matrix,
    pub voice_value_grad: Option<Matrix>,
}

/// Weights and per-slot cosine scores kept from a face recall so the
/// backward pass does not repeat the forward work.
#[derive(Debug, Clone)]
pub struct FaceRecallCache {
    pub weights: WeightVector,
}

/// The alignment module: a voice-value bank and a face-key bank of equal
/// shape plus the shared attention temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct MfvaModule {
    pub voice_value: MemoryBank,
    pub face_key: MemoryBank,
    pub temperature: f64,
    /// When true (the default), the alignment loss treats the voice-side
    /// weights as a constant target and sends no gradient into the voice
    /// bank, so the face side chases the voice side and never the reverse.
    pub detach_voice_weights: bool,
}

impl MfvaModule {
    pub fn new(
        voice_value: MemoryBank,
        face_key: MemoryBank,
        temperature: f64,
        detach_voice_weights: bool,
    ) -> Result<Self> {
        if voice_value.n_slots() != face_key.n_slots() {
            return Err(Error::dim_mismatch(
                "voice-value vs face-key slot count",
                voice_value.n_slots(),
                face_key.n_slots(),
            ));
        }
        if voice_value.dim() != face_key.dim() {
            return Err(Error::dim_mismatch(
                "voice-value vs face-key slot dimension",
                voice_value.dim(),
                face_key.dim(),
            ));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::config(
                "temperature",
                format!("must be a positive finite real, got {temperature}"),
            ));
        }
        Ok(MfvaModule {
            voice_value,
            face_key,
            temperature,
            detach_voice_weights,
        })
    }

    /// Fresh module with both banks drawn i.i.d. Gaussian at per-entry
    /// variance 1/dim (expected squared slot norm 1) and no normalization;
    /// cosine attention is scale-invariant anyway. Stream order: every
    /// voice-value entry row-major, then every face-key entry row-major.
    /// Temperature starts at 1.0 and the voice side starts detached.
    pub fn init(n_slots: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_slots == 0 {
            return Err(Error::config("n_slots", "must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        let std = (1.0 / dim as f64).sqrt();
        let mut rng = SplitMix64::new(seed);
        let mut draw_bank = |kind: BankKind| -> Result<MemoryBank> {
            let mut values = vec![0.0; n_slots * dim];
            for v in values.iter_mut() {
                *v = rng.next_normal() * std;
            }
            MemoryBank::new(kind, Matrix::new(n_slots, dim, values)?)
        };
        let voice_value = draw_bank(BankKind::VoiceValue)?;
        let face_key = draw_bank(BankKind::FaceKey)?;
        MfvaModule::new(voice_value, face_key, 1.0, true)
    }

    pub fn n_slots(&self) -> usize {
        self.voice_value.n_slots()
    }

    pub fn dim(&self) -> usize {
        self.voice_value.dim()
    }

    /// voice_value^T * weights.
    pub fn combine(&self, weights: &WeightVector) -> Result<Vec<f64>> {
        if weights.len() != self.n_slots() {
            return Err(Error::dim_mismatch(
                "weights vs slot count",
                weights.len(),
                self.n_slots(),
            ));
        }
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (i, &w) in weights.as_slice().iter().enumerate() {
            let row = self.voice_value.slots().row(i);
            for k in 0..d {
                out[k] += w * row[k];
            }
        }
        Ok(out)
    }

    /// Speaker-side recall: address the voice-value bank with a speaker
    /// embedding and combine its own slots.
    pub fn recall_speaker(&self, s: &[f64]) -> Result<RecallResult> {
        let weights = attention_weights(s, &self.voice_value, self.temperature)?;
        let embedding = self.combine(&weights)?;
        Ok(RecallResult { weights, embedding })
    }

    /// Face-side recall: address the face-key bank with a face embedding,
    /// combine voice-value slots.
    pub fn recall_face(&self, h: &[f64]) -> Result<RecallResult> {
        let weights = attention_weights(h, &self.face_key, self.temperature)?;
        let embedding = self.combine(&weights)?;
        Ok(RecallResult { weights, embedding })
    }

    /// recall_face plus the cache its backward pass needs.
    pub fn recall_face_cached(&self, h: &[f64]) -> Result<(RecallResult, FaceRecallCache)> {
        let recall = self.recall_face(h)?;
        let cache = FaceRecallCache {
            weights: recall.weights.clone(),
        };
        Ok((recall, cache))
    }

    /// Accumulates d(upstream . recalled_embedding)/d(banks) into flat
    /// row-major N*D buffers: the value path into the voice bank, the
    /// attention path through softmax and cosine into the face bank.
    pub fn recall_face_accumulate_grads(
        &self,
        h: &[f64],
        cache: &FaceRecallCache,
        upstream: &[f64],
        voice_value_grad: &mut [f64],
        face_key_grad: &mut [f64],
    ) -> Result<()> {
        let n = self.n_slots();
        let d = self.dim();
        if upstream.len() != d {
            return Err(Error::dim_mismatch("recall upstream", upstream.len(), d));
        }
        let w = cache.weights.as_slice();
        // Value path: embedding = sum_i w_i m_i.
        for i in 0..n {
            let base = i * d;
            for k in 0..d {
                voice_value_grad[base + k] += w[i] * upstream[k];
            }
        }
        // Attention path: u_i = upstream . m_i, back through softmax, then
        // through the cosine score of h against each face key.
        let u: Vec<f64> = (0..n)
            .map(|i| dot(upstream, self.voice_value.slots().row(i)))
            .collect();
        let v = softmax_backward(&u, &cache.weights, self.temperature);
        for i in 0..n {
            let (_, dcos) = cosine_similarity_with_grad(h, self.face_key.slots().row(i))?;
            let base = i * d;
            for k in 0..d {
                face_key_grad[base + k] += v[i] * dcos[k];
            }
        }
        Ok(())
    }

    /// MSE between a speaker embedding and its own recall, with the
    /// gradient flowing through both the value combination and the
    /// attention weights of the voice-value bank.
    pub fn store_loss(&self, s: &[f64]) -> Result<StoreLoss> {
        let recall = self.recall_speaker(s)?;
        let loss = mse_loss(&recall.embedding, s)?;
        let n = self.n_slots();
        let d = self.dim();
        let dd = d as f64;
        let upstream: Vec<f64> = recall
            .embedding
            .iter()
            .zip(s)
            .map(|(r, t)| 2.0 * (r - t) / dd)
            .collect();
        let mut grad = Matrix::zeros(n, d);
        let w = recall.weights.as_slice();
        for i in 0..n {
            let row = grad.row_mut(i);
            for k in 0..d {
                row[k] += w[i] * upstream[k];
            }
        }
        let u: Vec<f64> = (0..n)
            .map(|i| dot(&upstream, self.voice_value.slots().row(i)))
            .collect();
        let v = softmax_backward(&u, &recall.weights, self.temperature);
        for i in 0..n {
            let (_, dcos) = cosine_similarity_with_grad(s, self.voice_value.slots().row(i))?;
            let row = grad.row_mut(i);
            for k in 0..d {
                row[k] += v[i] * dcos[k];
            }
        }
        Ok(StoreLoss {
            loss,
            voice_value_grad: grad,
        })
    }

    /// KL divergence from the voice-side weight distribution to the
    /// face-side one. The face-key gradient uses the closed form
    /// (w_face - w_voice) / temperature at the score level; the voice-side
    /// gradient exists only when detach_voice_weights is false.
    pub fn align_loss(&self, s: &[f64], h: &[f64]) -> Result<AlignLoss> {
        let w_voice = attention_weights(s, &self.voice_value, self.temperature)?;
        let w_face = attention_weights(h, &self.face_key, self.temperature)?;
        let loss = kl_divergence(&w_voice, &w_face)?;
        let n = self.n_slots();
        let d = self.dim();
        let tau = self.temperature;

        let mut face_key_grad = Matrix::zeros(n, d);
        for i in 0..n {
            let v = (w_face.as_slice()[i] - w_voice.as_slice()[i]) / tau;
            let (_, dcos) = cosine_similarity_with_grad(h, self.face_key.slots().row(i))?;
            let row = face_key_grad.row_mut(i);
            for k in 0..d {
                row[k] += v * dcos[k];
            }
        }

        let voice_value_grad = if self.detach_voice_weights {
            None
        } else {
            let mut grad = Matrix::zeros(n, d);
            for i in 0..n {
                let wv = w_voice.as_slice()[i];
                let wf = w_face.as_slice()[i];
                let v = wv * ((wv.ln() - wf.ln()) - loss) / tau;
                let (_, dcos) =
                    cosine_similarity_with_grad(s, self.voice_value.slots().row(i))?;
                let row = grad.row_mut(i);
                for k in 0..d {
                    row[k] += v * dcos[k];
                }
            }
            Some(grad)
        };

        Ok(AlignLoss {
            loss,
            face_key_grad,
            voice_value_grad,
        })
    }

    /// Convex blend (1-alpha) wA + alpha wB of two weight vectors, combined
    /// through the voice-value bank. Stays on the simplex by construction.
    pub fn interpolate_recall(
        &self,
        wa: &WeightVector,
        wb: &WeightVector,
        alpha: f64,
    ) -> Result<RecallResult> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Validation(format!(
                "interpolation alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if wa.len() != self.n_slots() || wb.len() != self.n_slots() {
            return Err(Error::dim_mismatch(
                "interpolation weights vs slot count",
                wa.len().max(wb.len()),
                self.n_slots(),
            ));
        }
        let blended: Vec<f64> = wa
            .as_slice()
            .iter()
            .zip(wb.as_slice())
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        let weights = WeightVector::new(blended)?;
        let embedding = self.combine(&weights)?;
        Ok(RecallResult { weights, embedding })
    }

    pub fn to_doc(&self) -> MfvaDoc {
        MfvaDoc {
            n_slots: self.n_slots(),
            dim: self.dim(),
            temperature: self.temperature,
            detach_voice_weights: self.detach_voice_weights,
            voice_value: self.voice_value.slots().values().to_vec(),
            face_key: self.face_key.slots().values().to_vec(),
        }
    }

    pub fn from_doc(doc: &MfvaDoc) -> Result<Self> {
        let voice = MemoryBank::new(
            BankKind::VoiceValue,
            Matrix::new(doc.n_slots, doc.dim, doc.voice_value.clone())?,
        )?;
        let face = MemoryBank::new(
            BankKind::FaceKey,
            Matrix::new(doc.n_slots, doc.dim, doc.face_key.clone())?,
        )?;
        MfvaModule::new(voice, face, doc.temperature, doc.detach_voice_weights)
    }
}

/// Serialized module: shape, temperature, flags, then both banks row-major.
/// Round-trips reproduce recall outputs exactly (values are 64-bit reals in
/// shortest round-trip decimal form).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfvaDoc {
    pub n_slots: usize,
    pub dim: usize,
    pub temperature: f64,
    pub detach_voice_weights: bool,
    pub voice_value: Vec<f64>,
    pub face_key: Vec<f64>,
}
