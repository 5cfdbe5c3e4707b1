//! Objective evaluation: the conversion harness over held-out speakers,
//! homogeneity (SHR, SHO), diversity (SDR, SDO), gender accuracy, and the
//! least-squares speaker probe for output-mode extraction.

use crate::config::{EvalMode, RunConfig};
use crate::decoder::ToyDecoder;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Matrix};
use crate::rng::{derive_seed, tags, SplitMix64};
use crate::synth::{SpeakerData, SyntheticCorpus};
use crate::trainer::{ground_truth_renderer, render_targets, Conditioner};
use crate::util::{parallel_map_indexed, thread_cap_from_env};
use serde::{Deserialize, Serialize};

/// Ridge strength for the speaker probe's normal equations.
pub const PROBE_RIDGE: f64 = 1e-8;
/// Report document format tag.
pub const REPORT_FORMAT: &str = "memalign-eval-report";
/// Report document schema version.
pub const REPORT_VERSION: u32 = 1;

/// One conversion: a held-out source utterance re-rendered toward a
/// held-out target speaker via one of their face images.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRecord {
    pub source_speaker_id: u32,
    pub source_utterance_id: u32,
    pub target_speaker_id: u32,
    pub target_face_entity_id: u32,
    pub embedding: Vec<f64>,
}

/// Cosine between two record embeddings; bitwise-equal embeddings compare
/// to exactly 1 (the algebraic value) instead of accumulating sqrt
/// rounding, which the identical-embedding metric fixed points rely on.
pub fn pair_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a == b {
        return Ok(1.0);
    }
    cosine_similarity(a, b)
}

/// Mean over the rows of a frame matrix.
pub fn mean_pool(frames: &Matrix) -> Vec<f64> {
    let mut pooled = vec![0.0; frames.cols()];
    for r in 0..frames.rows() {
        for (p, v) in pooled.iter_mut().zip(frames.row(r)) {
            *p += v;
        }
    }
    let n = frames.rows() as f64;
    for p in pooled.iter_mut() {
        *p /= n;
    }
    pooled
}

/// Mean of a speaker's voice embeddings.
pub fn voice_centroid(speaker: &SpeakerData) -> Vec<f64> {
    let dim = speaker.voices[0].len();
    let mut centroid = vec![0.0; dim];
    for voice in &speaker.voices {
        for (c, v) in centroid.iter_mut().zip(voice) {
            *c += v;
        }
    }
    let n = speaker.voices.len() as f64;
    for c in centroid.iter_mut() {
        *c /= n;
    }
    centroid
}

/// Affine map from mean-pooled output frames to voice-embedding space,
/// fit by ridge least squares; the desk-scale stand-in for a pretrained
/// speaker-embedding extractor.
#[derive(Debug, Clone)]
pub struct SpeakerProbe {
    /// (input_dim + 1) x output_dim; the last row is the bias.
    coefficients: Matrix,
    /// Mean squared fit residual per output coordinate.
    pub residual: f64,
}

/// Solves G x = b for symmetric positive definite G via Cholesky,
/// consuming G as workspace. `b` holds one right-hand side per column.
fn cholesky_solve(g: &mut Matrix, b: &Matrix) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n || b.rows() != n {
        return Err(Error::dim_mismatch("cholesky system", g.cols(), n));
    }
    // In-place lower factor: g becomes L (upper part stays stale).
    for j in 0..n {
        let mut diag = g.row(j)[j];
        for k in 0..j {
            diag -= g.row(j)[k] * g.row(j)[k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Numeric(
                "probe normal equations are not positive definite".into(),
            ));
        }
        let ljj = diag.sqrt();
        g.row_mut(j)[j] = ljj;
        for i in j + 1..n {
            let mut v = g.row(i)[j];
            for k in 0..j {
                v -= g.row(i)[k] * g.row(j)[k];
            }
            g.row_mut(i)[j] = v / ljj;
        }
    }
    // Forward then back substitution per right-hand-side column.
    let cols = b.cols();
    let mut x = b.clone();
    for c in 0..cols {
        for i in 0..n {
            let mut v = x.row(i)[c];
            for k in 0..i {
                v -= g.row(i)[k] * x.row(k)[c];
            }
            x.row_mut(i)[c] = v / g.row(i)[i];
        }
        for i in (0..n).rev() {
            let mut v = x.row(i)[c];
            for k in i + 1..n {
                v -= g.row(k)[i] * x.row(k)[c];
            }
            x.row_mut(i)[c] = v / g.row(i)[i];
        }
    }
    Ok(x)
}

impl SpeakerProbe {
    /// Fits the probe on (pooled frames, voice embedding) pairs. Needs
    /// more samples than input coordinates plus one.
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<SpeakerProbe> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Validation(format!(
                "probe fit needs matching nonempty sample sets, got {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let d_in = inputs[0].len();
        let d_out = targets[0].len();
        let n = inputs.len();
        let cols = d_in + 1;
        if n <= cols {
            return Err(Error::Validation(format!(
                "probe fit needs more than {cols} samples for {d_in} input coordinates, got {n}"
            )));
        }
        // Normal equations G = A^T A + ridge I, B = A^T Y with the bias
        // column appended to A.
        let mut g = Matrix::zeros(cols, cols);
        let mut b = Matrix::zeros(cols, d_out);
        let augmented = |x: &[f64], i: usize| if i < d_in { x[i] } else { 1.0 };
        for (x, y) in inputs.iter().zip(targets) {
            if x.len() != d_in || y.len() != d_out {
                return Err(Error::Validation(
                    "probe fit samples have inconsistent dimensions".into(),
                ));
            }
            for i in 0..cols {
                let xi = augmented(x, i);
                for j in 0..cols {
                    g.row_mut(i)[j] += xi * augmented(x, j);
                }
                for j in 0..d_out {
                    b.row_mut(i)[j] += xi * y[j];
                }
            }
        }
        for i in 0..cols {
            g.row_mut(i)[i] += PROBE_RIDGE;
        }
        let coefficients = cholesky_solve(&mut g, &b)?;
        let probe = SpeakerProbe {
            coefficients,
            residual: 0.0,
        };
        let mut residual = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let predicted = probe.apply(x)?;
            residual += predicted
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
        }
        residual /= (n * d_out) as f64;
        Ok(SpeakerProbe {
            residual,
            ..probe
        })
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        let d_in = self.coefficients.rows() - 1;
        if input.len() != d_in {
            return Err(Error::dim_mismatch("probe input", input.len(), d_in));
        }
        let d_out = self.coefficients.cols();
        let mut out = self.coefficients.row(d_in).to_vec();
        for (i, x) in input.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.coefficients.row(i)) {
                *o += x * c;
            }
        }
        let _ = d_out;
        Ok(out)
    }
}

/// The evaluation split over held-out speakers: the first
/// `eval_targets` are conversion targets, the next `eval_sources` are
/// sources.
#[derive(Debug)]
pub struct EvalSplit<'a> {
    pub targets: &'a [SpeakerData],
    pub sources: &'a [SpeakerData],
}

pub fn eval_split<'a>(corpus: &'a SyntheticCorpus, config: &RunConfig) -> Result<EvalSplit<'a>> {
    let holdout = corpus.holdout_speakers();
    if config.eval_targets + config.eval_sources > holdout.len() {
        return Err(Error::config(
            "eval_targets",
            format!(
                "eval_targets + eval_sources = {} exceeds {} holdout speakers",
                config.eval_targets + config.eval_sources,
                holdout.len()
            ),
        ));
    }
    let targets = &holdout[..config.eval_targets];
    let sources = &holdout[config.eval_targets..config.eval_targets + config.eval_sources];
    for gender in [0u8, 1u8] {
        let count = targets.iter().filter(|s| s.latent.gender == gender).count();
        if count < 2 {
            return Err(Error::Validation(format!(
                "evaluation needs at least 2 target speakers of each gender, gender {gender} has {count}"
            )));
        }
    }
    if sources.is_empty() {
        return Err(Error::Validation(
            "evaluation needs at least 1 source speaker".into(),
        ));
    }
    Ok(EvalSplit { targets, sources })
}

/// Conversion records plus the probe residual when output mode fit one.
pub struct ConversionOutcome {
    pub records: Vec<ConversionRecord>,
    pub probe_residual: Option<f64>,
}

/// Runs every (source, utterance, target, face image) conversion in that
/// nesting order. Embedding mode extracts the conditioner's output
/// directly; output mode decodes the source utterance under the recalled
/// conditioning and probes the mean-pooled frames.
pub fn convert_all(
    corpus: &SyntheticCorpus,
    config: &RunConfig,
    conditioner: &Conditioner,
    decoder: &ToyDecoder,
) -> Result<ConversionOutcome> {
    let split = eval_split(corpus, config)?;
    if config.eval_utterances > corpus.spec.utterances_per_speaker {
        return Err(Error::config(
            "eval_utterances",
            format!(
                "{} exceeds utterances_per_speaker = {}",
                config.eval_utterances, corpus.spec.utterances_per_speaker
            ),
        ));
    }
    if config.eval_images > corpus.spec.images_per_speaker {
        return Err(Error::config(
            "eval_images",
            format!(
                "{} exceeds images_per_speaker = {}",
                config.eval_images, corpus.spec.images_per_speaker
            ),
        ));
    }
    let probe = match config.eval_mode {
        EvalMode::Embedding => None,
        EvalMode::Output => {
            let renderer = ground_truth_renderer(corpus, config)?;
            let targets = render_targets(corpus, &renderer)?;
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            for (idx, speaker) in corpus.train_speakers().iter().enumerate() {
                for (u, voice) in speaker.voices.iter().enumerate() {
                    inputs.push(mean_pool(&targets[idx][u]));
                    outputs.push(voice.clone());
                }
            }
            Some(SpeakerProbe::fit(&inputs, &outputs)?)
        }
    };
    // Target conditioning depends only on (target, image); hoist it.
    let mut conditionings = Vec::with_capacity(split.targets.len());
    for target in split.targets {
        let mut per_image = Vec::with_capacity(config.eval_images);
        for image in 0..config.eval_images {
            per_image.push(conditioner.condition(&target.faces[image])?);
        }
        conditionings.push(per_image);
    }
    let mut records = Vec::with_capacity(
        split.sources.len() * config.eval_utterances * split.targets.len() * config.eval_images,
    );
    for source in split.sources {
        for utterance in 0..config.eval_utterances {
            for (t, target) in split.targets.iter().enumerate() {
                for image in 0..config.eval_images {
                    let cond = &conditionings[t][image];
                    let embedding = match &probe {
                        None => cond.clone(),
                        Some(probe) => {
                            let features = &source.utterances[utterance];
                            let frames =
                                decoder.decode(&features.content, cond, &features.pitch)?;
                            probe.apply(&mean_pool(&frames))?
                        }
                    };
                    records.push(ConversionRecord {
                        source_speaker_id: source.latent.speaker_id,
                        source_utterance_id: utterance as u32,
                        target_speaker_id: target.latent.speaker_id,
                        target_face_entity_id: image as u32,
                        embedding,
                    });
                }
            }
        }
    }
    Ok(ConversionOutcome {
        probe_residual: probe.map(|p| p.residual),
        records,
    })
}

/// A shuffle-based metric value plus the speakers that had to be skipped.
pub struct ShuffledMetric {
    pub value: f64,
    pub excluded_speakers: Vec<u32>,
}

fn group_indices_by<F: Fn(&ConversionRecord) -> u32>(
    records: &[ConversionRecord],
    key: F,
) -> Vec<(u32, Vec<usize>)> {
    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let k = key(record);
        match groups.binary_search_by_key(&k, |(g, _)| *g) {
            Ok(pos) => groups[pos].1.push(i),
            Err(pos) => groups.insert(pos, (k, vec![i])),
        }
    }
    groups
}

/// Speaker homogeneity by random matching: per shuffle and per target
/// speaker, pair each conversion with its image under a uniform random
/// permutation, discard self-pairs and same-face-entity pairs, and average
/// cosine over the kept pairs; the score is the mean over all nonempty
/// (shuffle, speaker) cells. Shuffle seeds are drawn upfront from
/// `seed ^ tags::SHR`, so the value is independent of thread count.
pub fn shr(records: &[ConversionRecord], n_shuffles: usize, seed: u64) -> Result<ShuffledMetric> {
    shuffle_metric(
        records,
        n_shuffles,
        derive_seed(seed, tags::SHR),
        |record| record.target_speaker_id,
        |a, b| a.target_face_entity_id != b.target_face_entity_id,
        "SHR",
    )
}

/// Speaker diversity by random matching: per shuffle and per source
/// speaker, pair conversions under a random permutation and keep only
/// cross-target pairs. Shuffle seeds come from `seed ^ tags::SDR`.
pub fn sdr(records: &[ConversionRecord], n_shuffles: usize, seed: u64) -> Result<ShuffledMetric> {
    shuffle_metric(
        records,
        n_shuffles,
        derive_seed(seed, tags::SDR),
        |record| record.source_speaker_id,
        |a, b| a.target_speaker_id != b.target_speaker_id,
        "SDR",
    )
}

fn shuffle_metric(
    records: &[ConversionRecord],
    n_shuffles: usize,
    stream_seed: u64,
    group_key: fn(&ConversionRecord) -> u32,
    admissible: fn(&ConversionRecord, &ConversionRecord) -> bool,
    name: &str,
) -> Result<ShuffledMetric> {
    if n_shuffles == 0 {
        return Err(Error::config("shuffles", "must be at least 1"));
    }
    let groups = group_indices_by(records, group_key);
    let mut excluded = Vec::new();
    let kept: Vec<&(u32, Vec<usize>)> = groups
        .iter()
        .filter(|(id, indices)| {
            if indices.len() < 2 {
                excluded.push(*id);
                false
            } else {
                true
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Validation(format!(
            "{name} has no group with at least 2 records"
        )));
    }
    let mut seed_rng = SplitMix64::new(stream_seed);
    let shuffle_seeds: Vec<u64> = (0..n_shuffles).map(|_| seed_rng.next_u64()).collect();
    let threads = thread_cap_from_env()?;
    // Each shuffle yields (sum of cell means, cell count); the final
    // reduction runs in shuffle order regardless of parallelism.
    let per_shuffle: Vec<Result<(f64, usize)>> =
        parallel_map_indexed(n_shuffles, threads, |s| {
            let mut rng = SplitMix64::new(shuffle_seeds[s]);
            let mut sum = 0.0;
            let mut cells = 0;
            for (_, indices) in kept.iter() {
                let mut permuted: Vec<usize> = indices.clone();
                rng.shuffle(&mut permuted);
                let mut cell_sum = 0.0;
                let mut cell_count = 0usize;
                for (i, &j) in indices.iter().zip(&permuted) {
                    if *i == j {
                        continue;
                    }
                    let a = &records[*i];
                    let b = &records[j];
                    if !admissible(a, b) {
                        continue;
                    }
                    cell_sum += pair_cosine(&a.embedding, &b.embedding)?;
                    cell_count += 1;
                }
                if cell_count > 0 {
                    sum += cell_sum / cell_count as f64;
                    cells += 1;
                }
            }
            Ok((sum, cells))
        });
    let mut total = 0.0;
    let mut cells = 0usize;
    for outcome in per_shuffle {
        let (sum, count) = outcome?;
        total += sum;
        cells += count;
    }
    if cells == 0 {
        return Err(Error::Validation(format!(
            "{name} kept no admissible pair in any shuffle"
        )));
    }
    Ok(ShuffledMetric {
        value: total / cells as f64,
        excluded_speakers: excluded,
    })
}

/// One-to-one speaker homogeneity: over every (source utterance, target
/// speaker) group, every unordered pair of records with distinct face
/// entities, pooled into one global mean cosine.
pub fn sho(records: &[ConversionRecord]) -> Result<f64> {
    pooled_pair_mean(records, sho_pairs(records)?)
}

/// One-to-one speaker diversity: over every source utterance, every
/// unordered pair of its conversions with distinct target speakers,
/// pooled into one global mean cosine.
pub fn sdo(records: &[ConversionRecord]) -> Result<f64> {
    let n_targets = {
        let mut ids: Vec<u32> = records.iter().map(|r| r.target_speaker_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if n_targets < 2 {
        return Err(Error::Validation(format!(
            "SDO needs at least 2 target speakers, got {n_targets}"
        )));
    }
    pooled_pair_mean(records, sdo_pairs(records))
}

/// Unordered admissible index pairs for SHO, grouped by
/// (source speaker, source utterance, target speaker).
pub fn sho_pairs(records: &[ConversionRecord]) -> Result<Vec<(usize, usize)>> {
    let mut by_group: Vec<((u32, u32, u32), Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let key = (r.source_speaker_id, r.source_utterance_id, r.target_speaker_id);
        match by_group.binary_search_by_key(&key, |(k, _)| *k) {
            Ok(pos) => by_group[pos].1.push(i),
            Err(pos) => by_group.insert(pos, (key, vec![i])),
        }
    }
    let mut pairs = Vec::new();
    for (_, indices) in &by_group {
        for (a_pos, &a) in indices.iter().enumerate() {
            for &b in &indices[a_pos + 1..] {
                if records[a].target_face_entity_id != records[b].target_face_entity_id {
                    pairs.push((a, b));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Validation(
            "SHO has no pair of conversions with distinct face entities".into(),
        ));
    }
    Ok(pairs)
}

/// Unordered admissible index pairs for SDO, grouped by source utterance.
pub fn sdo_pairs(records: &[ConversionRecord]) -> Vec<(usize, usize)> {
    let mut by_utterance: Vec<((u32, u32), Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let key = (r.source_speaker_id, r.source_utterance_id);
        match by_utterance.binary_search_by_key(&key, |(k, _)| *k) {
            Ok(pos) => by_utterance[pos].1.push(i),
            Err(pos) => by_utterance.insert(pos, (key, vec![i])),
        }
    }
    let mut pairs = Vec::new();
    for (_, indices) in &by_utterance {
        for (a_pos, &a) in indices.iter().enumerate() {
            for &b in &indices[a_pos + 1..] {
                if records[a].target_speaker_id != records[b].target_speaker_id {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs
}

fn pooled_pair_mean(records: &[ConversionRecord], pairs: Vec<(usize, usize)>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("metric has no admissible pair".into()));
    }
    let mut sum = 0.0;
    for (a, b) in &pairs {
        sum += pair_cosine(&records[*a].embedding, &records[*b].embedding)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Per-target one-to-one homogeneity rows for the report table.
pub fn per_target_homogeneity(records: &[ConversionRecord]) -> Result<Vec<PerTargetHomogeneity>> {
    let pairs = sho_pairs(records)?;
    let mut rows: Vec<(u32, f64, usize)> = Vec::new();
    for (a, b) in pairs {
        let id = records[a].target_speaker_id;
        let cos = pair_cosine(&records[a].embedding, &records[b].embedding)?;
        match rows.binary_search_by_key(&id, |(k, _, _)| *k) {
            Ok(pos) => {
                rows[pos].1 += cos;
                rows[pos].2 += 1;
            }
            Err(pos) => rows.insert(pos, (id, cos, 1)),
        }
    }
    Ok(rows
        .into_iter()
        .map(|(target_speaker_id, sum, count)| PerTargetHomogeneity {
            target_speaker_id,
            sho: sum / count as f64,
            n_pairs: count,
        })
        .collect())
}

/// Gender accuracy: classify every conversion embedding by the nearest
/// (in cosine) per-gender centroid of the training voice embeddings and
/// score agreement with the target speaker's gender.
pub fn gender_accuracy(records: &[ConversionRecord], corpus: &SyntheticCorpus) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("gender accuracy needs records".into()));
    }
    let dim = corpus.spec.embedding_dim;
    let mut centroids = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for speaker in corpus.train_speakers() {
        let g = speaker.latent.gender as usize;
        for voice in &speaker.voices {
            for (c, v) in centroids[g].iter_mut().zip(voice) {
                *c += v;
            }
            counts[g] += 1;
        }
    }
    for g in 0..2 {
        if counts[g] == 0 {
            return Err(Error::Validation(format!(
                "gender {g} has no training voice embeddings"
            )));
        }
        for c in centroids[g].iter_mut() {
            *c /= counts[g] as f64;
        }
    }
    let mut correct = 0usize;
    for record in records {
        let c0 = cosine_similarity(&record.embedding, &centroids[0])?;
        let c1 = cosine_similarity(&record.embedding, &centroids[1])?;
        let predicted = if c1 > c0 { 1u8 } else { 0u8 };
        let target = corpus.speaker(record.target_speaker_id)?.latent.gender;
        if predicted == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Per-target row of the homogeneity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerTargetHomogeneity {
    pub target_speaker_id: u32,
    pub sho: f64,
    pub n_pairs: usize,
}

/// The full evaluation document. Field order is the serialization order,
/// so identical inputs serialize byte-identically; absent metrics omit
/// their keys entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub mode: EvalMode,
    pub n_conversions: usize,
    pub shr: f64,
    pub sho: f64,
    pub sdr: f64,
    pub sdo: f64,
    pub ga: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_residual: Option<f64>,
    pub per_target_homogeneity: Vec<PerTargetHomogeneity>,
    pub run_config: RunConfig,
}

/// Report, the conversion records behind it, and operator-facing
/// warnings (excluded speakers).
pub struct EvalOutcome {
    pub report: EvalReport,
    pub records: Vec<ConversionRecord>,
    pub warnings: Vec<String>,
}

/// Converts the holdout split and computes every metric.
pub fn evaluate(
    corpus: &SyntheticCorpus,
    config: &RunConfig,
    conditioner: &Conditioner,
    decoder: &ToyDecoder,
) -> Result<EvalOutcome> {
    let conversion = convert_all(corpus, config, conditioner, decoder)?;
    let records = &conversion.records[..];
    let eval_seed = config.resolved_eval_seed();
    let shr_outcome = shr(records, config.shr_shuffles, eval_seed)?;
    let sdr_outcome = sdr(records, config.sdr_shuffles, eval_seed)?;
    let mut warnings = Vec::new();
    for id in &shr_outcome.excluded_speakers {
        warnings.push(format!(
            "target speaker {id} has fewer than 2 conversions; excluded from SHR"
        ));
    }
    for id in &sdr_outcome.excluded_speakers {
        warnings.push(format!(
            "source speaker {id} has fewer than 2 conversions; excluded from SDR"
        ));
    }
    let report = EvalReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        mode: config.eval_mode,
        n_conversions: records.len(),
        shr: shr_outcome.value,
        sho: sho(records)?,
        sdr: sdr_outcome.value,
        sdo: sdo(records)?,
        ga: gender_accuracy(records, corpus)?,
        probe_residual: conversion.probe_residual,
        per_target_homogeneity: per_target_homogeneity(records)?,
        run_config: config.clone(),
    };
    Ok(EvalOutcome {
        report,
        records: conversion.records,
        warnings,
    })
}

/// Serializes a report deterministically and writes it atomically.
pub fn emit_report(report: &EvalReport, path: &std::path::Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Validation(format!("report serialization failed: {e}")))?;
    text.push('\n');
    crate::util::atomic_write(path, text.as_bytes())
}
