//! Utterance encoders and the exponential-decay conversation embedding.
//!
//! A history `(U_1, .., U_n)` is turned into one query vector by encoding every
//! utterance independently and summing the embeddings with weights
//! `w_i = exp(-lambda * i) / sum_j exp(-lambda * j)`, where `i = 1` is the most
//! recent utterance. The sum is L2-normalized so that inner-product search over
//! the index is cosine similarity.

use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_lambda, DialogueHistory, Utterance};

/// Tolerance on the Euclidean norm of a normalized embedding.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A dense, finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding {
    values: Vec<f32>,
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding has zero dimensions"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("embedding component {i} is not finite")));
        }
        Ok(Embedding { values })
    }

    /// Normalizes a higher-precision vector and stores it at f32.
    pub fn from_f64_normalized(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::invalid("embedding is not finite"));
        }
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        Embedding::new(values.iter().map(|v| (v / norm) as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn normalized(&self) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|&v| f64::from(v)).collect();
        Embedding::from_f64_normalized(&values)
    }

    /// Inner product, accumulated in f64.
    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(dot(&self.values, &other.values))
    }

    /// Cosine similarity; zero-norm inputs compare as 0.
    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        let d = self.dot(other)?;
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((d / denom).clamp(-1.0, 1.0))
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Identity and output dimension of an encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    id: String,
    dim: usize,
}

impl EncoderDescriptor {
    pub fn new(id: impl Into<String>, dim: usize) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("encoder id is empty"));
        }
        if dim == 0 {
            return Err(Error::invalid("encoder dimension must be positive"));
        }
        Ok(EncoderDescriptor { id, dim })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Maps text to fixed-length vectors.
///
/// Implementations must be callable concurrently. The returned vectors are
/// checked against the descriptor by [`encode`] and [`encode_all`].
pub trait Encoder: Send + Sync {
    fn descriptor(&self) -> &EncoderDescriptor;

    /// Encodes a batch, preserving order.
    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

impl<E: Encoder + ?Sized> Encoder for std::sync::Arc<E> {
    fn descriptor(&self) -> &EncoderDescriptor {
        (**self).descriptor()
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        (**self).encode_texts(texts)
    }
}

/// Encodes one utterance and checks the result against the encoder's declared dimension.
pub fn encode(utterance: &Utterance, encoder: &dyn Encoder) -> Result<Embedding> {
    let mut out = encode_all(std::slice::from_ref(utterance), encoder)?;
    Ok(out.pop().expect("one embedding per utterance"))
}

pub fn encode_all(utterances: &[Utterance], encoder: &dyn Encoder) -> Result<Vec<Embedding>> {
    let texts: Vec<&str> = utterances.iter().map(Utterance::text).collect();
    encode_checked(&texts, encoder)
}

pub(crate) fn encode_checked(texts: &[&str], encoder: &dyn Encoder) -> Result<Vec<Embedding>> {
    let dim = encoder.descriptor().dim();
    let raw = encoder.encode_texts(texts)?;
    if raw.len() != texts.len() {
        return Err(Error::EncoderUnavailable(format!(
            "encoder returned {} embeddings for {} texts",
            raw.len(),
            texts.len()
        )));
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            Embedding::new(v)
        })
        .collect()
}

/// Normalized exponential-decay weights for a history of `n` utterances.
///
/// Index 0 of the result belongs to the most recent utterance. Weights are
/// computed relative to the largest term, so the sum never overflows; for
/// large `lambda * n` the oldest weights underflow in linear form while the
/// log form stays exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayWeights {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl DecayWeights {
    pub fn new(n: usize, lambda: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        validate_lambda(lambda)?;
        // exp(-lambda * i) / sum_j exp(-lambda * j) == exp(-lambda * (i - 1)) / sum_j exp(-lambda * (j - 1))
        let exponents: Vec<f64> = (0..n).map(|i| -lambda * i as f64).collect();
        let sum: f64 = exponents.iter().map(|e| e.exp()).sum();
        let log_sum = sum.ln();
        let weights = exponents.iter().map(|e| e.exp() / sum).collect();
        let log_weights = exponents.iter().map(|e| e - log_sum).collect();
        Ok(DecayWeights { weights, log_weights })
    }

    /// Linear weights, most recent utterance first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Natural log of each weight, most recent utterance first.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

/// Shorthand for `DecayWeights::new(n, lambda)?.into_vec()`.
pub fn decay_weights(n: usize, lambda: f64) -> Result<Vec<f64>> {
    Ok(DecayWeights::new(n, lambda)?.into_vec())
}

/// Weighted sum of per-utterance embeddings (oldest first), normalized.
pub fn combine(embeddings: &[Embedding], lambda: f64) -> Result<Embedding> {
    let weights = decay_weights(embeddings.len(), lambda)?;
    let dim = embeddings[0].dim();
    let mut sum = vec![0.0f64; dim];
    for (w, e) in weights.iter().zip(embeddings.iter().rev()) {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.dim(),
            });
        }
        for (acc, &v) in sum.iter_mut().zip(e.as_slice()) {
            *acc += w * f64::from(v);
        }
    }
    Embedding::from_f64_normalized(&sum)
}

/// Conversation embedding of `history`: decay-weighted sum of utterance embeddings, normalized.
pub fn aggregate(history: &DialogueHistory, lambda: f64, encoder: &dyn Encoder) -> Result<Embedding> {
    validate_lambda(lambda)?;
    let embeddings = encode_all(history.utterances(), encoder)?;
    combine(&embeddings, lambda)
}

/// Deterministic bag-of-hashed-tokens encoder for hermetic runs and tests.
///
/// Tokens are lowercase whitespace-separated words; each is hashed with the seed
/// to a bucket and a sign, counts are accumulated and the vector normalized.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    descriptor: EncoderDescriptor,
    seed: u64,
}

impl ReferenceEncoder {
    pub const MIN_DIM: usize = 8;
    const ID_PREFIX: &'static str = "reference-bow";

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < Self::MIN_DIM {
            return Err(Error::invalid(format!(
                "reference encoder needs dim >= {}, got {dim}",
                Self::MIN_DIM
            )));
        }
        let descriptor = EncoderDescriptor::new(format!("{}-d{dim}-s{seed}", Self::ID_PREFIX), dim)?;
        Ok(ReferenceEncoder { descriptor, seed })
    }

    /// Rebuilds an encoder from the id it reports, e.g. `reference-bow-d64-s7`.
    pub fn from_id(id: &str) -> Option<Self> {
        let rest = id.strip_prefix(Self::ID_PREFIX)?.strip_prefix("-d")?;
        let (dim, seed) = rest.split_once("-s")?;
        Self::new(dim.parse().ok()?, seed.parse().ok()?).ok()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encode_text(&self, text: &str) -> Vec<f32> {
        let dim = self.descriptor.dim();
        let mut counts = vec![0.0f64; dim];
        let lower = text.to_lowercase();
        for token in lower.split_whitespace() {
            let h = seeded_hash(self.seed, token.as_bytes());
            let bucket = (h % dim as u64) as usize;
            counts[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        if counts.iter().all(|&c| c == 0.0) {
            // Tokens cancelled out (or there were none): fall back to a one-hot of the whole text.
            let h = seeded_hash(self.seed ^ 0x9e37_79b9_7f4a_7c15, lower.as_bytes());
            counts[(h % dim as u64) as usize] = 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        counts.iter().map(|c| (c / norm) as f32).collect()
    }
}

impl Encoder for ReferenceEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.encode_text(t)).collect())
    }
}

/// `Utterance`-level entry point of the reference encoder.
pub fn reference_encode(utterance: &Utterance, dim: usize, seed: u64) -> Result<Embedding> {
    let enc = ReferenceEncoder::new(dim, seed)?;
    Embedding::new(enc.encode_text(utterance.text()))
}

/// FNV-1a over seed then bytes, finished with the splitmix64 mixer.
fn seeded_hash(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Wraps an encoder with an exact-text memo so shared history prefixes are encoded once.
pub struct MemoizingEncoder<E> {
    inner: E,
    capacity: usize,
    memo: Mutex<HashMap<String, Vec<f32>>>,
}

impl<E: Encoder> MemoizingEncoder<E> {
    pub fn new(inner: E, capacity: usize) -> Self {
        MemoizingEncoder {
            inner,
            capacity,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn memo_len(&self) -> usize {
        self.memo.lock().len()
    }
}

impl<E: Encoder> Encoder for MemoizingEncoder<E> {
    fn descriptor(&self) -> &EncoderDescriptor {
        self.inner.descriptor()
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let mut out: Vec<Option<Vec<f32>>> = {
            let memo = self.memo.lock();
            texts.iter().map(|t| memo.get(*t).cloned()).collect()
        };
        let missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !missing.is_empty() {
            let fresh = self.inner.encode_texts(&missing)?;
            if fresh.len() != missing.len() {
                return Err(Error::EncoderUnavailable(format!(
                    "encoder returned {} embeddings for {} texts",
                    fresh.len(),
                    missing.len()
                )));
            }
            let mut memo = self.memo.lock();
            // Simple bound: drop everything once full.
            if memo.len() + fresh.len() > self.capacity {
                memo.clear();
            }
            let mut fresh = fresh.into_iter();
            for (slot, text) in out.iter_mut().zip(texts) {
                if slot.is_none() {
                    let v = fresh.next().expect("counted above");
                    if memo.len() < self.capacity {
                        memo.insert((*text).to_owned(), v.clone());
                    }
                    *slot = Some(v);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}
