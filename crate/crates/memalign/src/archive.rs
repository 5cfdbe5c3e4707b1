//! Bit-exact binary container for embedding records (magic "XMEB"): a
//! 16-byte little-endian header (magic, version, record count, dimension)
//! followed by fixed-size records of speaker id, entity id, modality,
//! gender bit, a zero reserved word, and the vector as IEEE-754 binary32.
//! Vectors are stored in 32-bit; all internal math upcasts to 64-bit.

use crate::error::{Error, Result};
use crate::synth::SyntheticCorpus;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"XMEB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const RECORD_FIXED_LEN: usize = 12;

/// Embedding modality stored in one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Voice = 0,
    Face = 1,
}

/// One embedding with its provenance: speaker, entity (image or utterance
/// index), modality, and the speaker's gender bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub speaker_id: u32,
    pub entity_id: u32,
    pub modality: Modality,
    pub attribute: u8,
    pub vector: Vec<f64>,
}

/// Serializes records into the archive byte layout. All records must share
/// one dimension. Vector values are narrowed to f32.
pub fn encode_records(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    for (i, r) in records.iter().enumerate() {
        if r.vector.len() != dim {
            return Err(Error::dim_mismatch(
                &format!("record {i} vector vs archive dimension"),
                r.vector.len(),
                dim,
            ));
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (RECORD_FIXED_LEN + 4 * dim));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.speaker_id.to_le_bytes());
        out.extend_from_slice(&r.entity_id.to_le_bytes());
        out.push(r.modality as u8);
        out.push(r.attribute);
        out.extend_from_slice(&0u16.to_le_bytes());
        for &v in &r.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses archive bytes, validating the full format. Errors name the byte
/// offset of the violation; `path` only labels messages.
pub fn decode_records(bytes: &[u8], path: &str) -> Result<Vec<EmbeddingRecord>> {
    let fail = |offset: u64, detail: String| Error::ArchiveFormat {
        path: path.to_string(),
        offset,
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len() as u64,
            format!("truncated header, {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(fail(
            0,
            format!("bad magic {:02x?}, expected \"XMEB\"", &bytes[0..4]),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let record_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let record_len = RECORD_FIXED_LEN + 4 * dim;
    let expected_len = HEADER_LEN + record_count * record_len;
    if bytes.len() < expected_len {
        return Err(fail(
            bytes.len() as u64,
            format!(
                "truncated records, {} of {expected_len} bytes for {record_count} records of dimension {dim}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > expected_len {
        return Err(fail(
            expected_len as u64,
            format!("{} trailing bytes after the last record", bytes.len() - expected_len),
        ));
    }

    let mut records = Vec::with_capacity(record_count);
    for r in 0..record_count {
        let base = HEADER_LEN + r * record_len;
        let speaker_id = u32::from_le_bytes(bytes[base..base + 4].try_into().unwrap());
        let entity_id = u32::from_le_bytes(bytes[base + 4..base + 8].try_into().unwrap());
        let modality = match bytes[base + 8] {
            0 => Modality::Voice,
            1 => Modality::Face,
            other => {
                return Err(fail(
                    (base + 8) as u64,
                    format!("invalid modality byte {other}, expected 0 or 1"),
                ))
            }
        };
        let attribute = bytes[base + 9];
        let reserved = u16::from_le_bytes(bytes[base + 10..base + 12].try_into().unwrap());
        if reserved != 0 {
            return Err(fail(
                (base + 10) as u64,
                format!("reserved word must be 0, got {reserved}"),
            ));
        }
        let mut vector = Vec::with_capacity(dim);
        for k in 0..dim {
            let off = base + RECORD_FIXED_LEN + 4 * k;
            let bits = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !bits.is_finite() {
                return Err(fail(
                    off as u64,
                    format!("non-finite vector value in record {r}"),
                ));
            }
            vector.push(bits as f64);
        }
        records.push(EmbeddingRecord {
            speaker_id,
            entity_id,
            modality,
            attribute,
            vector,
        });
    }
    Ok(records)
}

/// Writes records to a file atomically (temp sibling plus rename).
pub fn write_archive(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    let bytes = encode_records(records)?;
    crate::util::atomic_write(path, &bytes)
}

/// Reads and fully validates an archive file.
pub fn read_archive(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes, &path.display().to_string())
}

/// Face records of a corpus, speakers in id order, entities in index order.
pub fn face_records(corpus: &SyntheticCorpus) -> Vec<EmbeddingRecord> {
    corpus
        .speakers
        .iter()
        .flat_map(|s| {
            s.faces.iter().enumerate().map(move |(e, h)| EmbeddingRecord {
                speaker_id: s.latent.speaker_id,
                entity_id: e as u32,
                modality: Modality::Face,
                attribute: s.latent.gender,
                vector: h.clone(),
            })
        })
        .collect()
}

/// Voice records of a corpus, one per utterance, same ordering rules.
pub fn voice_records(corpus: &SyntheticCorpus) -> Vec<EmbeddingRecord> {
    corpus
        .speakers
        .iter()
        .flat_map(|s| {
            s.voices.iter().enumerate().map(move |(u, v)| EmbeddingRecord {
                speaker_id: s.latent.speaker_id,
                entity_id: u as u32,
                modality: Modality::Voice,
                attribute: s.latent.gender,
                vector: v.clone(),
            })
        })
        .collect()
}
