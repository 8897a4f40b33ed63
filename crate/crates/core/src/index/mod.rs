//! Append-only store of conversation embeddings with exact top-k search.

mod snapshot;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};

pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Stores with at least this many entries are scanned in parallel.
const PARALLEL_SCAN_MIN: usize = 32 * 1024;
const SCAN_CHUNK: usize = 4096;

/// Where a cached response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    Seeded,
    Generated,
}

impl EntrySource {
    fn to_byte(self) -> u8 {
        match self {
            EntrySource::Seeded => 0,
            EntrySource::Generated => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EntrySource::Seeded),
            1 => Some(EntrySource::Generated),
            _ => None,
        }
    }
}

/// A stored response with the conversation embedding it is keyed by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: u64,
    pub embedding: Embedding,
    pub response_text: String,
    pub audio_ref: Option<String>,
    pub source: EntrySource,
    /// Unix seconds.
    pub created_at: i64,
}

/// Entry contents before the store assigns an id.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    pub embedding: Embedding,
    pub response_text: String,
    pub audio_ref: Option<String>,
    pub source: EntrySource,
    /// Defaults to the current time.
    pub created_at: Option<i64>,
}

impl NewEntry {
    pub fn new(embedding: Embedding, response_text: impl Into<String>, source: EntrySource) -> Self {
        NewEntry {
            embedding,
            response_text: response_text.into(),
            audio_ref: None,
            source,
            created_at: None,
        }
    }

    pub fn with_audio_ref(mut self, audio_ref: impl Into<String>) -> Self {
        self.audio_ref = Some(audio_ref.into());
        self
    }

    pub fn with_created_at(mut self, unix_secs: i64) -> Self {
        self.created_at = Some(unix_secs);
        self
    }
}

/// One search result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub entry_id: u64,
    /// Inner product of the (unit) query and entry vectors.
    pub similarity: f64,
    /// 1-based position in the result list.
    pub rank: usize,
}

/// Store-wide metadata recorded in snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub dim: usize,
    /// Decay used to build every stored embedding.
    pub lambda: f64,
    pub encoder_id: String,
}

#[derive(Debug, Clone)]
struct Record {
    id: u64,
    response_text: String,
    audio_ref: Option<String>,
    source: EntrySource,
    created_at: i64,
}

#[derive(Debug, Clone, Default)]
struct Inner {
    /// Row-major `len * dim` matrix.
    vectors: Vec<f32>,
    records: Vec<Record>,
    next_id: u64,
}

/// Exact inner-product index over unit vectors.
///
/// Readers run concurrently; `append` takes the write lock, so every search
/// sees a consistent prefix of the store.
#[derive(Debug)]
pub struct VectorStore {
    meta: StoreMeta,
    inner: RwLock<Inner>,
}

#[derive(Clone, Copy)]
struct Scored {
    similarity: f64,
    id: u64,
}

impl Scored {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

fn top_k_scan(query: &[f32], vectors: &[f32], records: &[Record], dim: usize, k: usize) -> Vec<Scored> {
    // Max-heap on rank order: the root is the worst of the current top k.
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (row, rec) in vectors.chunks_exact(dim).zip(records) {
        let s = Scored {
            // +0.0 folds -0.0 so equal similarities always tie-break by id.
            similarity: dot(query, row) + 0.0,
            id: rec.id,
        };
        if heap.len() < k {
            heap.push(s);
        } else if let Some(worst) = heap.peek() {
            if s < *worst {
                heap.pop();
                heap.push(s);
            }
        }
    }
    heap.into_sorted_vec()
}

pub(crate) fn now_unix() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

impl VectorStore {
    pub fn new(dim: usize, lambda: f64, encoder_id: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("store dimension must be positive"));
        }
        crate::types::validate_lambda(lambda)?;
        Ok(VectorStore {
            meta: StoreMeta {
                dim,
                lambda,
                encoder_id: encoder_id.into(),
            },
            inner: RwLock::new(Inner::default()),
        })
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Deep copy with identical ids, sharing nothing with `self`.
    pub fn fork(&self) -> Self {
        VectorStore {
            meta: self.meta.clone(),
            inner: RwLock::new(self.inner.read().clone()),
        }
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.meta.dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.dim,
                actual,
            });
        }
        Ok(())
    }

    /// Appends an entry and returns its id. Visible to every later search.
    pub fn append(&self, entry: NewEntry) -> Result<u64> {
        Ok(self.append_batch(vec![entry])?[0])
    }

    /// Appends all entries under one write lock; ids are consecutive.
    pub fn append_batch(&self, entries: Vec<NewEntry>) -> Result<Vec<u64>> {
        for e in &entries {
            self.check_dim(e.embedding.dim())?;
            if !e.embedding.is_normalized() {
                return Err(Error::invalid(format!(
                    "entry embedding norm {} is not 1",
                    e.embedding.norm()
                )));
            }
            if e.response_text.trim().is_empty() {
                return Err(Error::invalid("response text is empty"));
            }
        }
        let now = now_unix();
        let mut inner = self.inner.write();
        let mut ids = Vec::with_capacity(entries.len());
        for e in entries {
            let id = inner.next_id;
            inner.next_id += 1;
            inner.vectors.extend_from_slice(e.embedding.as_slice());
            inner.records.push(Record {
                id,
                response_text: e.response_text,
                audio_ref: e.audio_ref.filter(|a| !a.is_empty()),
                source: e.source,
                created_at: e.created_at.unwrap_or(now),
            });
            ids.push(id);
        }
        Ok(ids)
    }

    /// Exact top-`k` by inner product; ties go to the lower id.
    ///
    /// Returns `min(k, len)` hits; an empty store yields an empty list.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.check_dim(query.dim())?;
        let dim = self.meta.dim;
        let q = query.as_slice();
        let inner = self.inner.read();
        let n = inner.records.len();
        let top = if n >= PARALLEL_SCAN_MIN {
            let mut merged: Vec<Scored> = inner
                .vectors
                .par_chunks(SCAN_CHUNK * dim)
                .zip(inner.records.par_chunks(SCAN_CHUNK))
                .flat_map_iter(|(vecs, recs)| top_k_scan(q, vecs, recs, dim, k))
                .collect();
            merged.sort_unstable();
            merged.truncate(k);
            merged
        } else {
            top_k_scan(q, &inner.vectors, &inner.records, dim, k)
        };
        Ok(top
            .into_iter()
            .enumerate()
            .map(|(i, s)| SearchHit {
                entry_id: s.id,
                similarity: s.similarity,
                rank: i + 1,
            })
            .collect())
    }

    fn position(inner: &Inner, id: u64) -> Option<usize> {
        inner.records.binary_search_by_key(&id, |r| r.id).ok()
    }

    pub fn get(&self, id: u64) -> Option<CacheEntry> {
        let inner = self.inner.read();
        let pos = Self::position(&inner, id)?;
        Some(Self::entry_at(&inner, self.meta.dim, pos))
    }

    pub fn response_text(&self, id: u64) -> Option<String> {
        let inner = self.inner.read();
        Self::position(&inner, id).map(|p| inner.records[p].response_text.clone())
    }

    /// Response texts for a list of hits, in hit order.
    pub fn responses_for(&self, hits: &[SearchHit]) -> Vec<String> {
        let inner = self.inner.read();
        hits.iter()
            .filter_map(|h| Self::position(&inner, h.entry_id))
            .map(|p| inner.records[p].response_text.clone())
            .collect()
    }

    fn entry_at(inner: &Inner, dim: usize, pos: usize) -> CacheEntry {
        let r = &inner.records[pos];
        let values = inner.vectors[pos * dim..(pos + 1) * dim].to_vec();
        CacheEntry {
            id: r.id,
            embedding: Embedding::new(values).expect("stored embeddings are finite"),
            response_text: r.response_text.clone(),
            audio_ref: r.audio_ref.clone(),
            source: r.source,
            created_at: r.created_at,
        }
    }

    /// Copies every entry out, in id order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        let inner = self.inner.read();
        (0..inner.records.len())
            .map(|p| Self::entry_at(&inner, self.meta.dim, p))
            .collect()
    }

    /// Number of entries per source.
    pub fn source_counts(&self) -> (usize, usize) {
        let inner = self.inner.read();
        let seeded = inner.records.iter().filter(|r| r.source == EntrySource::Seeded).count();
        (seeded, inner.records.len() - seeded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(values: Vec<f64>) -> Embedding {
        Embedding::from_f64_normalized(&values).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        unit((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Full sort over every entry, independent of the heap scan.
    fn oracle(store: &VectorStore, q: &Embedding, k: usize) -> Vec<(u64, f64)> {
        let mut all: Vec<(u64, f64)> = store
            .entries()
            .iter()
            .map(|e| {
                let s: f64 = e
                    .embedding
                    .as_slice()
                    .iter()
                    .zip(q.as_slice())
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum();
                (e.id, s)
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn self_similarity_is_one() {
        let store = VectorStore::new(4, 0.5, "t").unwrap();
        let v = unit(vec![1.0, 2.0, 3.0, 4.0]);
        let id = store
            .append(NewEntry::new(v.clone(), "r", EntrySource::Seeded))
            .unwrap();
        assert_eq!(id, 0);
        assert_eq!(store.len(), 1);
        let hits = store.search(&v, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entry_id, id);
        assert_eq!(hits[0].rank, 1);
        assert_abs_diff_eq!(hits[0].similarity, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let store = VectorStore::new(3, 0.5, "t").unwrap();
        let v = unit(vec![0.0, 1.0, 1.0]);
        store
            .append(NewEntry::new(unit(vec![1.0, 0.0, 0.0]), "x", EntrySource::Seeded))
            .unwrap();
        store
            .append(NewEntry::new(v.clone(), "a", EntrySource::Seeded))
            .unwrap();
        store
            .append(NewEntry::new(v.clone(), "b", EntrySource::Seeded))
            .unwrap();
        let hits = store.search(&v, 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.entry_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(hits[0].similarity, hits[1].similarity);
    }

    #[test]
    fn empty_store_returns_nothing() {
        let store = VectorStore::new(3, 0.5, "t").unwrap();
        assert!(store.search(&unit(vec![1.0, 0.0, 0.0]), 5).unwrap().is_empty());
    }

    #[test]
    fn result_length_is_min_k_len() {
        let store = VectorStore::new(3, 0.5, "t").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            store
                .append(NewEntry::new(random_unit(&mut rng, 3), "r", EntrySource::Seeded))
                .unwrap();
        }
        assert_eq!(store.search(&random_unit(&mut rng, 3), 10).unwrap().len(), 3);
        assert!(store.search(&random_unit(&mut rng, 3), 0).is_err());
    }

    #[test]
    fn dimension_checks() {
        let store = VectorStore::new(3, 0.5, "t").unwrap();
        let bad = unit(vec![1.0, 0.0]);
        assert!(matches!(
            store.append(NewEntry::new(bad.clone(), "r", EntrySource::Seeded)),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
        assert!(matches!(store.search(&bad, 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_unnormalized_and_empty_text() {
        let store = VectorStore::new(2, 0.5, "t").unwrap();
        let raw = Embedding::new(vec![3.0, 4.0]).unwrap();
        assert!(store.append(NewEntry::new(raw, "r", EntrySource::Seeded)).is_err());
        assert!(store
            .append(NewEntry::new(unit(vec![1.0, 0.0]), "  ", EntrySource::Seeded))
            .is_err());
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let store = VectorStore::new(32, 0.5, "t").unwrap();
        for i in 0..1000 {
            store
                .append(NewEntry::new(
                    random_unit(&mut rng, 32),
                    format!("r{i}"),
                    EntrySource::Seeded,
                ))
                .unwrap();
        }
        for _ in 0..20 {
            let q = random_unit(&mut rng, 32);
            let got: Vec<(u64, f64)> = store
                .search(&q, 5)
                .unwrap()
                .iter()
                .map(|h| (h.entry_id, h.similarity))
                .collect();
            assert_eq!(got, oracle(&store, &q, 5));
        }
    }

    #[test]
    fn parallel_scan_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let store = VectorStore::new(8, 0.5, "t").unwrap();
        let dup = random_unit(&mut rng, 8);
        let mut batch = Vec::new();
        for i in 0..(PARALLEL_SCAN_MIN + 1000) {
            let e = if i % 5000 == 17 {
                dup.clone()
            } else {
                random_unit(&mut rng, 8)
            };
            batch.push(NewEntry::new(e, "r", EntrySource::Seeded));
        }
        store.append_batch(batch).unwrap();
        for q in [dup.clone(), random_unit(&mut rng, 8)] {
            let got: Vec<(u64, f64)> = store
                .search(&q, 7)
                .unwrap()
                .iter()
                .map(|h| (h.entry_id, h.similarity))
                .collect();
            assert_eq!(got, oracle(&store, &q, 7));
        }
    }

    #[test]
    fn fork_is_independent() {
        let store = VectorStore::new(2, 0.5, "t").unwrap();
        store
            .append(NewEntry::new(unit(vec![1.0, 0.0]), "a", EntrySource::Seeded))
            .unwrap();
        let fork = store.fork();
        fork.append(NewEntry::new(unit(vec![0.0, 1.0]), "b", EntrySource::Generated))
            .unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(fork.len(), 2);
        assert_eq!(fork.source_counts(), (1, 1));
    }

    #[test]
    fn empty_audio_ref_means_absent() {
        let store = VectorStore::new(2, 0.5, "t").unwrap();
        let id = store
            .append(NewEntry::new(unit(vec![1.0, 0.0]), "a", EntrySource::Seeded).with_audio_ref(""))
            .unwrap();
        assert_eq!(store.get(id).unwrap().audio_ref, None);
        assert!(store.get(99).is_none());
    }
}
