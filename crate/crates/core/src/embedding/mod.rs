//! Embedding providers: the encoder that turns captions and image
//! references into vectors.
//!
//! Three backends ship with the crate:
//!
//! * [`ToyProvider`]: a deterministic hashed bag-of-words embedder for tests
//!   and synthetic studies.
//! * [`PrecomputedProvider`]: serves image vectors from a shard's
//!   `<stem>.image.emb` sidecar.
//! * [`RemoteProvider`]: batches requests to an HTTP embedding service.
//!
//! Text and image vectors may come from different providers (masked text
//! can never be precomputed upstream), see [`Providers`].

pub mod mock;
pub mod remote;

use thiserror::Error;

use crate::datamodel::Shard;

pub use remote::{batch_embed_remote, RemoteConfig, RemoteProvider};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("remote embedding service unavailable after {attempts} attempt(s): {last_error}")]
    RemoteUnavailable {
        attempts: usize,
        last_error: String,
        first_input: usize,
    },
    #[error("expected vectors of dim {expected}, got {got}")]
    DimMismatch {
        expected: usize,
        got: usize,
        index: Option<usize>,
    },
    #[error("malformed response from embedding service: {message}")]
    ProtocolError { message: String, first_input: usize },
    #[error("no image embedding for row {row}")]
    MissingImageEmbedding { row: usize },
    #[error("sample at row {row} has no image url")]
    MissingImageRef { row: usize },
    #[error("provider does not support {0}")]
    Unsupported(&'static str),
}

impl EmbedError {
    /// Index of the (first) input the error refers to, when known.
    pub fn input_index(&self) -> Option<usize> {
        match self {
            EmbedError::RemoteUnavailable { first_input, .. }
            | EmbedError::ProtocolError { first_input, .. } => Some(*first_input),
            EmbedError::DimMismatch { index, .. } => *index,
            EmbedError::MissingImageEmbedding { row } | EmbedError::MissingImageRef { row } => {
                Some(*row)
            }
            EmbedError::Unsupported(_) => None,
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            EmbedError::RemoteUnavailable { .. } | EmbedError::ProtocolError { .. }
        )
    }
}

/// Result of embedding one caption. Whitespace-only text has no vector.
#[derive(Debug, Clone, PartialEq)]
pub enum TextVector {
    Vector(Vec<f32>),
    Empty,
}

impl TextVector {
    pub fn as_slice(&self) -> Option<&[f32]> {
        match self {
            TextVector::Vector(v) => Some(v),
            TextVector::Empty => None,
        }
    }

    pub fn into_vec(self) -> Option<Vec<f32>> {
        match self {
            TextVector::Vector(v) => Some(v),
            TextVector::Empty => None,
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One entry per input, in input order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<TextVector>, EmbedError>;

    /// Image vectors for the given shard rows, in the given order.
    fn embed_images(&self, shard: &Shard, rows: &[usize]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<TextVector, EmbedError> {
    Ok(provider
        .embed_texts(&[text])?
        .pop()
        .expect("one output per input"))
}

pub fn embed_image(
    provider: &dyn EmbeddingProvider,
    shard: &Shard,
    row: usize,
) -> Result<Vec<f32>, EmbedError> {
    Ok(provider
        .embed_images(shard, &[row])?
        .pop()
        .expect("one output per input"))
}

/// A text provider paired with an image provider of the same dim.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub text: &'a dyn EmbeddingProvider,
    pub image: &'a dyn EmbeddingProvider,
}

impl<'a> Providers<'a> {
    pub fn new(
        text: &'a dyn EmbeddingProvider,
        image: &'a dyn EmbeddingProvider,
    ) -> Result<Self, EmbedError> {
        if text.dim() != image.dim() {
            return Err(EmbedError::DimMismatch {
                expected: text.dim(),
                got: image.dim(),
                index: None,
            });
        }
        Ok(Providers { text, image })
    }

    pub fn single(provider: &'a dyn EmbeddingProvider) -> Self {
        Providers {
            text: provider,
            image: provider,
        }
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the concatenation of `parts`.
pub fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// splitmix64 finalizer; spreads FNV output across all 64 bits.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn signed_slot(hash: u64, dim: usize) -> (usize, f64) {
    let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
    ((hash % dim as u64) as usize, sign)
}

fn normalize(acc: &[f64]) -> Option<Vec<f32>> {
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(acc.iter().map(|v| (v / norm) as f32).collect())
}

/// Deterministic hashed bag-of-words embedding.
///
/// Lowercases, splits on whitespace, and for each token adds ±1 at slot
/// `h mod dim` where `h` is FNV-1a of the seed (u64 little-endian) followed
/// by the token's UTF-8 bytes; bit 63 of `h` set means −1. The sum is
/// L2-normalized. Text with no tokens is [`TextVector::Empty`].
///
/// If the tokens cancel to an all-zero sum, the vector is instead a signed
/// one-hot keyed by the sorted token list, so non-empty text always has a
/// unit vector.
pub fn toy_embed(text: &str, dim: usize, seed: u64) -> TextVector {
    assert!(dim >= 1, "toy embedding dim must be positive");
    let lowered = text.to_lowercase();
    let seed_bytes = seed.to_le_bytes();
    let mut acc = vec![0f64; dim];
    let mut tokens = 0usize;
    for token in lowered.split_whitespace() {
        let (slot, sign) = signed_slot(fnv1a64(&[&seed_bytes, token.as_bytes()]), dim);
        acc[slot] += sign;
        tokens += 1;
    }
    if tokens == 0 {
        return TextVector::Empty;
    }
    if let Some(v) = normalize(&acc) {
        return TextVector::Vector(v);
    }
    let mut sorted: Vec<&str> = lowered.split_whitespace().collect();
    sorted.sort_unstable();
    let key = sorted.join(" ");
    let (slot, sign) = signed_slot(fnv1a64(&[&seed_bytes, b"\0cancel\0", key.as_bytes()]), dim);
    acc[slot] = sign;
    TextVector::Vector(normalize(&acc).expect("one-hot is non-zero"))
}

/// Keyed pseudo-random unit vector for a uid, used when no image vector is
/// stored.
pub fn toy_image_vector(uid: &str, dim: usize, seed: u64) -> Vec<f32> {
    let seed_bytes = seed.to_le_bytes();
    let acc: Vec<f64> = (0..dim as u64)
        .map(|i| {
            let h = mix64(fnv1a64(&[
                &seed_bytes,
                b"\0image\0",
                uid.as_bytes(),
                &i.to_le_bytes(),
            ]));
            // Top 53 bits to [-1, 1).
            (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    normalize(&acc).unwrap_or_else(|| {
        let mut v = vec![0f32; dim];
        v[0] = 1.0;
        v
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyProvider {
    pub dim: usize,
    pub seed: u64,
}

impl ToyProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "toy embedding dim must be positive");
        ToyProvider { dim, seed }
    }
}

impl EmbeddingProvider for ToyProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<TextVector>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| toy_embed(t, self.dim, self.seed))
            .collect())
    }

    /// Uses the stored image row when the shard has one, otherwise a keyed
    /// hash of the uid.
    fn embed_images(&self, shard: &Shard, rows: &[usize]) -> Result<Vec<Vec<f32>>, EmbedError> {
        match shard.image_embeddings() {
            Some(m) => {
                if m.dim() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        got: m.dim(),
                        index: None,
                    });
                }
                rows.iter()
                    .map(|&r| {
                        m.row(r)
                            .map(<[f32]>::to_vec)
                            .ok_or(EmbedError::MissingImageEmbedding { row: r })
                    })
                    .collect()
            }
            None => rows
                .iter()
                .map(|&r| {
                    let s = shard
                        .samples()
                        .get(r)
                        .ok_or(EmbedError::MissingImageEmbedding { row: r })?;
                    Ok(toy_image_vector(&s.uid, self.dim, self.seed))
                })
                .collect(),
        }
    }
}

/// Image vectors straight from the shard's image sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrecomputedProvider {
    pub dim: usize,
}

impl EmbeddingProvider for PrecomputedProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, _texts: &[&str]) -> Result<Vec<TextVector>, EmbedError> {
        Err(EmbedError::Unsupported(
            "text embedding from precomputed sidecars",
        ))
    }

    fn embed_images(&self, shard: &Shard, rows: &[usize]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let Some(m) = shard.image_embeddings() else {
            return Err(EmbedError::MissingImageEmbedding {
                row: rows.first().copied().unwrap_or(0),
            });
        };
        if m.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: m.dim(),
                index: None,
            });
        }
        rows.iter()
            .map(|&r| {
                m.row(r)
                    .map(<[f32]>::to_vec)
                    .ok_or(EmbedError::MissingImageEmbedding { row: r })
            })
            .collect()
    }
}
