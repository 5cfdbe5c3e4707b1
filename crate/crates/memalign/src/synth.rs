//! Deterministic synthetic corpus generator: shared speaker latents with a
//! dedicated gender coordinate, linear mixing maps into face and voice
//! embedding spaces with per-modality noise, and per-utterance content and
//! z-normalized pitch features. Also the 2-D PCA projection emitter.
//!
//! The face/voice relation here is a shared-latent linear model. That is an
//! assumption of the generator, not a property of any real encoder pair;
//! everything downstream treats the embeddings as opaque.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

/// Scale factor of the gender-carrying latent coordinate relative to the
/// identity coordinates inside the mixing maps. Large enough that gender is
/// linearly separable by a wide margin even at the maximum supported noise.
pub const GENDER_GAIN: f64 = 4.0;

/// Target L2 norm of noiseless embeddings; the mixing-map column scales are
/// solved from this so embeddings stay at a magnitude that trains well from
/// unit-variance slot initializations.
pub const EMBEDDING_NORM: f64 = 1.5;

/// Corpus shape and noise parameters. Serialized as a flat JSON object with
/// exactly these field names; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_train_speakers: usize,
    pub n_holdout_speakers: usize,
    pub images_per_speaker: usize,
    pub utterances_per_speaker: usize,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub sigma_face: f64,
    pub sigma_voice: f64,
    pub frames: usize,
    pub content_dim: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_train_speakers: 20,
            n_holdout_speakers: 12,
            images_per_speaker: 20,
            utterances_per_speaker: 20,
            latent_dim: 8,
            embedding_dim: 16,
            sigma_face: 0.05,
            sigma_voice: 0.05,
            frames: 32,
            content_dim: 8,
            seed: 1,
        }
    }
}

impl CorpusSpec {
    /// Checks every count and noise level; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train_speakers", self.n_train_speakers),
            ("n_holdout_speakers", self.n_holdout_speakers),
            ("images_per_speaker", self.images_per_speaker),
            ("utterances_per_speaker", self.utterances_per_speaker),
            ("latent_dim", self.latent_dim),
            ("embedding_dim", self.embedding_dim),
            ("content_dim", self.content_dim),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.frames < 2 {
            return Err(Error::config(
                "frames",
                "pitch z-normalization needs at least 2 frames",
            ));
        }
        for (name, value) in [("sigma_face", self.sigma_face), ("sigma_voice", self.sigma_voice)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::config(
                    name,
                    format!("must be a finite nonnegative real, got {value}"),
                ));
            }
        }
        Ok(())
    }

    pub fn total_speakers(&self) -> usize {
        self.n_train_speakers + self.n_holdout_speakers
    }
}

/// Latent identity underlying both modalities of one speaker. z[0] is the
/// gender coordinate: +1 for gender 1, -1 for gender 0; the remaining
/// coordinates are i.i.d. standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLatent {
    pub speaker_id: u32,
    pub gender: u8,
    pub z: Vec<f64>,
}

/// Per-utterance frame features: content frames and a per-utterance
/// z-normalized pitch track (mean 0, population variance 1).
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub speaker_id: u32,
    pub utterance_id: u32,
    /// frames x content_dim.
    pub content: Matrix,
    pub pitch: Vec<f64>,
}

/// One speaker's generated data. faces[e] pairs with image entity e;
/// voices[u] and utterances[u] both belong to utterance entity u.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerData {
    pub latent: SpeakerLatent,
    pub faces: Vec<Vec<f64>>,
    pub voices: Vec<Vec<f64>>,
    pub utterances: Vec<UtteranceFeatures>,
}

/// Fully generated corpus. Speakers are ordered by id: training speakers
/// 0..n_train_speakers, then holdout speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    pub speakers: Vec<SpeakerData>,
}

impl SyntheticCorpus {
    pub fn train_speakers(&self) -> &[SpeakerData] {
        &self.speakers[..self.spec.n_train_speakers]
    }

    pub fn holdout_speakers(&self) -> &[SpeakerData] {
        &self.speakers[self.spec.n_train_speakers..]
    }

    pub fn speaker(&self, speaker_id: u32) -> Result<&SpeakerData> {
        self.speakers
            .get(speaker_id as usize)
            .filter(|s| s.latent.speaker_id == speaker_id)
            .ok_or_else(|| Error::Validation(format!("unknown speaker id {speaker_id}")))
    }
}

/// Per-column standard deviation of the mixing maps: column 0 (gender)
/// carries GENDER_GAIN times the scale of the identity columns, and the
/// overall scale is solved so that E||W z||^2 = EMBEDDING_NORM^2.
fn mixing_column_stds(embedding_dim: usize, latent_dim: usize) -> (f64, f64) {
    let d = embedding_dim as f64;
    let k = latent_dim as f64;
    let base = EMBEDDING_NORM / (d * (GENDER_GAIN * GENDER_GAIN + (k - 1.0))).sqrt();
    (GENDER_GAIN * base, base)
}

fn draw_mixing_map(rng: &mut SplitMix64, embedding_dim: usize, latent_dim: usize) -> Matrix {
    let (gender_std, base_std) = mixing_column_stds(embedding_dim, latent_dim);
    let mut values = vec![0.0; embedding_dim * latent_dim];
    for r in 0..embedding_dim {
        for c in 0..latent_dim {
            let std = if c == 0 { gender_std } else { base_std };
            values[r * latent_dim + c] = rng.next_normal() * std;
        }
    }
    Matrix::new(embedding_dim, latent_dim, values).expect("finite by construction")
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| crate::numerics::dot(m.row(r), v)).collect()
}

/// Generates the corpus from a single SplitMix64 stream seeded with
/// spec.seed. Draw order, which is part of the reproducibility contract:
/// the face mixing map row-major, the voice mixing map row-major, then per
/// speaker in id order: the latent identity coordinates z[1..], then per
/// image the D noise normals, then per utterance the D voice noise normals,
/// the frames x content_dim content normals row-major, and the raw pitch
/// normals. Noise normals are always drawn, even at sigma 0. Genders
/// alternate starting at 0, so an odd speaker count leaves the extra
/// speaker on gender 0.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let d = spec.embedding_dim;
    let k = spec.latent_dim;
    let w_face = draw_mixing_map(&mut rng, d, k);
    let w_voice = draw_mixing_map(&mut rng, d, k);

    let mut speakers = Vec::with_capacity(spec.total_speakers());
    for idx in 0..spec.total_speakers() {
        let gender = (idx % 2) as u8;
        let mut z = vec![0.0; k];
        z[0] = if gender == 1 { 1.0 } else { -1.0 };
        for coord in z.iter_mut().skip(1) {
            *coord = rng.next_normal();
        }
        let latent = SpeakerLatent {
            speaker_id: idx as u32,
            gender,
            z,
        };
        let clean_face = mat_vec(&w_face, &latent.z);
        let clean_voice = mat_vec(&w_voice, &latent.z);

        let mut faces = Vec::with_capacity(spec.images_per_speaker);
        for _ in 0..spec.images_per_speaker {
            let mut h = clean_face.clone();
            for value in h.iter_mut() {
                *value += spec.sigma_face * rng.next_normal();
            }
            faces.push(h);
        }

        let mut voices = Vec::with_capacity(spec.utterances_per_speaker);
        let mut utterances = Vec::with_capacity(spec.utterances_per_speaker);
        for u in 0..spec.utterances_per_speaker {
            let mut s = clean_voice.clone();
            for value in s.iter_mut() {
                *value += spec.sigma_voice * rng.next_normal();
            }
            voices.push(s);

            let mut content = vec![0.0; spec.frames * spec.content_dim];
            rng.fill_normal(&mut content);
            let mut pitch = vec![0.0; spec.frames];
            rng.fill_normal(&mut pitch);
            z_normalize(&mut pitch);
            utterances.push(UtteranceFeatures {
                speaker_id: idx as u32,
                utterance_id: u as u32,
                content: Matrix::new(spec.frames, spec.content_dim, content)?,
                pitch,
            });
        }

        speakers.push(SpeakerData {
            latent,
            faces,
            voices,
            utterances,
        });
    }

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        speakers,
    })
}

/// In-place z-normalization to mean 0 and population variance 1.
fn z_normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// Mean-centered projection of the input vectors onto their top two
/// principal directions, found by power iteration with deflation
/// (tolerance 1e-9, at most 1000 iterations per direction). Each direction
/// is oriented so its first nonzero coordinate is positive. Degenerate
/// inputs (identical points) project to zeros.
pub fn pca_project_2d(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if vectors.len() < 2 {
        return Err(Error::Validation(format!(
            "pca projection needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::dim_mismatch("pca input vectors", bad.len(), d));
    }
    let n = vectors.len();
    let mut means = vec![0.0; d];
    for v in vectors {
        for j in 0..d {
            means[j] += v[j];
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&means).map(|(x, m)| x - m).collect())
        .collect();

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(2);
    for _ in 0..2 {
        match principal_direction(&centered, d) {
            Some(dir) => {
                // Deflate: remove the found component from every row before
                // searching for the next direction.
                for row in centered.iter_mut() {
                    let proj = crate::numerics::dot(row, &dir);
                    for j in 0..d {
                        row[j] -= proj * dir[j];
                    }
                }
                directions.push(dir);
            }
            None => directions.push(vec![0.0; d]),
        }
    }

    Ok(vectors
        .iter()
        .map(|v| {
            let c: Vec<f64> = v.iter().zip(&means).map(|(x, m)| x - m).collect();
            [
                crate::numerics::dot(&c, &directions[0]),
                crate::numerics::dot(&c, &directions[1]),
            ]
        })
        .collect())
}

/// Dominant eigenvector of the scatter matrix of the given centered rows,
/// or None when the rows are numerically zero.
fn principal_direction(rows: &[Vec<f64>], d: usize) -> Option<Vec<f64>> {
    let scatter_norm: f64 = rows
        .iter()
        .map(|r| crate::numerics::dot(r, r))
        .sum::<f64>();
    if scatter_norm < 1e-24 {
        return None;
    }
    // Deterministic start vector from a fixed internal stream.
    let mut rng = SplitMix64::new(0x7063_6131); // "pca1"
    let mut v: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
    normalize(&mut v)?;
    let mut prev_align = 0.0;
    for _ in 0..1000 {
        // w = S v with S = sum_r r r^T, applied row-wise.
        let mut w = vec![0.0; d];
        for row in rows {
            let proj = crate::numerics::dot(row, &v);
            for j in 0..d {
                w[j] += proj * row[j];
            }
        }
        if normalize(&mut w).is_none() {
            return None;
        }
        let align = crate::numerics::dot(&w, &v).abs();
        v = w;
        if (align - 1.0).abs() < 1e-9 && (align - prev_align).abs() < 1e-12 {
            break;
        }
        prev_align = align;
    }
    // Sign convention: first nonzero coordinate positive.
    if let Some(first) = v.iter().find(|x| **x != 0.0) {
        if *first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
    Some(v)
}

fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = crate::numerics::l2_norm(v);
    if norm < 1e-150 {
        return None;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_similarity;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_train_speakers: 4,
            n_holdout_speakers: 3,
            images_per_speaker: 3,
            utterances_per_speaker: 3,
            latent_dim: 5,
            embedding_dim: 8,
            sigma_face: 0.05,
            sigma_voice: 0.05,
            frames: 16,
            content_dim: 4,
            seed: 11,
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let spec = small_spec();
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cardinalities_and_split() {
        let mut spec = small_spec();
        spec.n_train_speakers = 10;
        spec.n_holdout_speakers = 12;
        let c = generate_corpus(&spec).unwrap();
        assert_eq!(c.speakers.len(), 22);
        assert_eq!(c.train_speakers().len(), 10);
        assert_eq!(c.holdout_speakers().len(), 12);
        let train_ids: Vec<u32> = c.train_speakers().iter().map(|s| s.latent.speaker_id).collect();
        let holdout_ids: Vec<u32> =
            c.holdout_speakers().iter().map(|s| s.latent.speaker_id).collect();
        assert!(train_ids.iter().all(|id| !holdout_ids.contains(id)));
        for s in &c.speakers {
            assert_eq!(s.faces.len(), spec.images_per_speaker);
            assert_eq!(s.voices.len(), spec.utterances_per_speaker);
            assert_eq!(s.utterances.len(), spec.utterances_per_speaker);
        }
    }

    #[test]
    fn genders_alternate_and_mark_latent() {
        let c = generate_corpus(&small_spec()).unwrap();
        for (i, s) in c.speakers.iter().enumerate() {
            assert_eq!(s.latent.gender, (i % 2) as u8);
            let expected = if s.latent.gender == 1 { 1.0 } else { -1.0 };
            assert_eq!(s.latent.z[0], expected);
        }
        let zeros = c.speakers.iter().filter(|s| s.latent.gender == 0).count();
        let ones = c.speakers.iter().filter(|s| s.latent.gender == 1).count();
        assert_eq!(zeros, 4);
        assert_eq!(ones, 3);
    }

    #[test]
    fn noiseless_embeddings_are_identical_per_speaker() {
        let mut spec = small_spec();
        spec.sigma_face = 0.0;
        spec.sigma_voice = 0.0;
        let c = generate_corpus(&spec).unwrap();
        for s in &c.speakers {
            for f in &s.faces {
                assert_eq!(f, &s.faces[0]);
            }
            for v in &s.voices {
                assert_eq!(v, &s.voices[0]);
                assert!(
                    (cosine_similarity(v, &s.voices[0]).unwrap() - 1.0).abs() <= 1e-12
                );
            }
        }
        // Distinct latents: cross-speaker voice cosine strictly below 1.
        for a in &c.speakers {
            for b in &c.speakers {
                if a.latent.speaker_id != b.latent.speaker_id {
                    let cos = cosine_similarity(&a.voices[0], &b.voices[0]).unwrap();
                    assert!(cos.abs() < 1.0);
                }
            }
        }
    }

    #[test]
    fn pitch_is_z_normalized() {
        let c = generate_corpus(&small_spec()).unwrap();
        for s in &c.speakers {
            for u in &s.utterances {
                let n = u.pitch.len() as f64;
                let mean = u.pitch.iter().sum::<f64>() / n;
                let var = u.pitch.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
                assert!(mean.abs() <= 1e-9, "mean {mean}");
                assert!((var - 1.0).abs() <= 1e-6, "var {var}");
                assert_eq!(u.pitch.len(), c.spec.frames);
                assert_eq!(u.content.rows(), c.spec.frames);
                assert_eq!(u.content.cols(), c.spec.content_dim);
            }
        }
    }

    #[test]
    fn embedding_norms_near_target() {
        let mut spec = CorpusSpec::default();
        spec.sigma_face = 0.0;
        spec.sigma_voice = 0.0;
        spec.n_train_speakers = 40;
        let c = generate_corpus(&spec).unwrap();
        let mean_norm: f64 = c
            .speakers
            .iter()
            .map(|s| crate::numerics::l2_norm(&s.voices[0]))
            .sum::<f64>()
            / c.speakers.len() as f64;
        assert!(
            (mean_norm - EMBEDDING_NORM).abs() < 0.5,
            "mean norm {mean_norm}"
        );
    }

    #[test]
    fn gender_centroid_classifier_is_well_posed() {
        // sigma at the documented ceiling, dimension at the documented floor.
        for seed in [1u64, 2, 3] {
            let spec = CorpusSpec {
                n_train_speakers: 24,
                n_holdout_speakers: 8,
                images_per_speaker: 4,
                utterances_per_speaker: 8,
                latent_dim: 8,
                embedding_dim: 8,
                sigma_face: 0.1,
                sigma_voice: 0.1,
                frames: 8,
                content_dim: 4,
                seed,
            };
            let c = generate_corpus(&spec).unwrap();
            let mut centroids = [vec![0.0; 8], vec![0.0; 8]];
            let mut counts = [0usize; 2];
            for s in &c.speakers {
                for v in &s.voices {
                    let g = s.latent.gender as usize;
                    for (acc, value) in centroids[g].iter_mut().zip(v) {
                        *acc += value;
                    }
                    counts[g] += 1;
                }
            }
            for g in 0..2 {
                for value in centroids[g].iter_mut() {
                    *value /= counts[g] as f64;
                }
            }
            let mut correct = 0usize;
            let mut total = 0usize;
            for s in &c.speakers {
                for v in &s.voices {
                    let c0 = cosine_similarity(v, &centroids[0]).unwrap();
                    let c1 = cosine_similarity(v, &centroids[1]).unwrap();
                    let predicted = if c1 > c0 { 1 } else { 0 };
                    correct += usize::from(predicted == s.latent.gender as usize);
                    total += 1;
                }
            }
            let accuracy = correct as f64 / total as f64;
            assert!(accuracy >= 0.99, "seed {seed}: accuracy {accuracy}");
        }
    }

    #[test]
    fn spec_validation_names_fields() {
        let mut spec = small_spec();
        spec.sigma_face = -0.5;
        let err = generate_corpus(&spec).unwrap_err();
        assert!(err.to_string().contains("sigma_face"));
        assert_eq!(err.exit_code(), 1);
        let mut spec = small_spec();
        spec.frames = 1;
        assert!(generate_corpus(&spec).unwrap_err().to_string().contains("frames"));
        let mut spec = small_spec();
        spec.latent_dim = 0;
        assert!(generate_corpus(&spec).unwrap_err().to_string().contains("latent_dim"));
    }

    #[test]
    fn corpus_spec_json_round_trip_rejects_unknown_keys() {
        let spec = CorpusSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        let back: CorpusSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        let with_extra = json.replace('}', ",\"bogus\":1}");
        let err = serde_json::from_str::<CorpusSpec>(&with_extra).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn pca_recovers_planar_structure() {
        // Points living in the plane of coordinates 2 and 5 of an 8-D space.
        let mut rng = SplitMix64::new(17);
        let mut points = Vec::new();
        for _ in 0..40 {
            let a = rng.next_normal() * 3.0;
            let b = rng.next_normal();
            let mut v = vec![0.0; 8];
            v[2] = a;
            v[5] = b;
            points.push(v);
        }
        let proj = pca_project_2d(&points).unwrap();
        for (i, pi) in points.iter().enumerate() {
            for (j, pj) in points.iter().enumerate() {
                let d_orig = {
                    let diff: Vec<f64> = pi.iter().zip(pj).map(|(a, b)| a - b).collect();
                    crate::numerics::l2_norm(&diff)
                };
                let dx = proj[i][0] - proj[j][0];
                let dy = proj[i][1] - proj[j][1];
                let d_proj = (dx * dx + dy * dy).sqrt();
                assert!((d_orig - d_proj).abs() < 1e-6, "{i} {j}: {d_orig} vs {d_proj}");
            }
        }
    }

    #[test]
    fn pca_identical_points_project_to_zero() {
        let points = vec![vec![1.0, 2.0, 3.0]; 5];
        let proj = pca_project_2d(&points).unwrap();
        for p in proj {
            assert_eq!(p, [0.0, 0.0]);
        }
        assert!(pca_project_2d(&[vec![1.0]]).is_err());
    }

    #[test]
    fn pca_first_axis_separates_two_clusters() {
        let mut rng = SplitMix64::new(23);
        let mut points = Vec::new();
        for i in 0..60 {
            let offset = if i % 2 == 0 { 5.0 } else { -5.0 };
            let mut v: Vec<f64> = (0..6).map(|_| rng.next_normal() * 0.3).collect();
            v[3] += offset;
            points.push(v);
        }
        let proj = pca_project_2d(&points).unwrap();
        // Silhouette-style check: every even point's x sits on one side.
        let side = proj[0][0].signum();
        for (i, p) in proj.iter().enumerate() {
            let expected = if i % 2 == 0 { side } else { -side };
            assert_eq!(p[0].signum(), expected, "point {i} at {}", p[0]);
        }
    }
}
