//! Cache seeding, test-split replay and prefetch simulation.

use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::report::{LatencyReport, PrefetchReport, RankReport, RequestLog};
use crate::embedding::{aggregate, Encoder};
use crate::engine::{CacheEngine, Outcome, RespondOptions, RespondTrace};
use crate::error::{Error, Result};
use crate::gate::Evaluator;
use crate::generator::Generator;
use crate::index::{EntrySource, NewEntry, VectorStore};
use crate::latency::{expected_latency, ComponentLatency, LatencyStats, RankDistribution};
use crate::types::{DialogueHistory, EngineConfig, PromptResponsePair, Utterance};

const SEED_CHUNK: usize = 1024;

/// Appends one seeded entry per pair, keyed by the aggregate of its history.
///
/// Uses the store's decay. Not idempotent: seeding twice stores every pair twice.
pub fn seed(pairs: &[PromptResponsePair], store: &VectorStore, encoder: &dyn Encoder) -> Result<usize> {
    let desc = encoder.descriptor();
    if desc.dim() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: desc.dim(),
        });
    }
    if desc.id() != store.meta().encoder_id {
        return Err(Error::invalid(format!(
            "store expects encoder {:?}, got {:?}",
            store.meta().encoder_id,
            desc.id()
        )));
    }
    let lambda = store.meta().lambda;
    for chunk in pairs.chunks(SEED_CHUNK) {
        let entries = chunk
            .par_iter()
            .map(|p| {
                let s = aggregate(&p.history, lambda, encoder)?;
                Ok(NewEntry::new(s, p.response.text(), EntrySource::Seeded))
            })
            .collect::<Result<Vec<_>>>()?;
        store.append_batch(entries)?;
    }
    Ok(pairs.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayOptions {
    /// Do not append generated responses on a miss.
    pub frozen_cache: bool,
    /// Keep wall-clock fields in the report and log.
    pub include_timings: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            frozen_cache: true,
            include_timings: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub report: RankReport,
    pub log: Vec<RequestLog>,
}

pub fn history_hash(history: &DialogueHistory) -> String {
    let mut h = Sha256::new();
    for t in history.texts() {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Answers every test history with the engine and tallies candidate ranks.
///
/// Frozen-cache runs are parallel across requests; growing-cache runs are
/// sequential so ids and outcomes stay order-deterministic. Nothing is
/// reported unless every request succeeds.
pub fn replay(
    test_pairs: &[PromptResponsePair],
    engine: &CacheEngine,
    options: &ReplayOptions,
) -> Result<ReplayOutput> {
    replay_histories(test_pairs, |p| Ok(p.history.clone()), engine, options)
}

fn replay_histories<F>(
    test_pairs: &[PromptResponsePair],
    prepare: F,
    engine: &CacheEngine,
    options: &ReplayOptions,
) -> Result<ReplayOutput>
where
    F: Fn(&PromptResponsePair) -> Result<DialogueHistory> + Sync,
{
    if test_pairs.is_empty() {
        return Err(Error::invalid("replay needs at least one test pair"));
    }
    let respond_opts = RespondOptions {
        append_on_miss: !options.frozen_cache,
        ..RespondOptions::default()
    };
    let store_size_before = engine.store().len();
    let run = |pair: &PromptResponsePair| -> Result<(DialogueHistory, RespondTrace)> {
        let history = prepare(pair)?;
        let trace = engine.respond_traced(&history, &respond_opts)?;
        Ok((history, trace))
    };
    let traces: Vec<(DialogueHistory, RespondTrace)> = if options.frozen_cache {
        test_pairs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        test_pairs.iter().map(run).collect::<Result<_>>()?
    };
    let threshold = engine.config().threshold();
    let log: Vec<RequestLog> = traces
        .iter()
        .zip(test_pairs)
        .enumerate()
        .map(|(index, ((history, trace), pair))| {
            let r = &trace.response;
            RequestLog {
                index,
                history_hash: history_hash(history),
                history: history.texts().map(str::to_owned).collect(),
                reference_response: pair.response.text().to_owned(),
                response_text: r.response_text.clone(),
                outcome: r.outcome,
                candidate_rank: r.candidate_rank,
                similarity: r.similarity,
                coherence: r.coherence.map(f64::from),
                evals_used: r.evals_used,
                candidates_above_threshold: trace.scores.iter().filter(|s| s.passes(threshold)).count(),
                timings: options.include_timings.then_some(r.timings),
            }
        })
        .collect();
    let mut report = tally(engine, &log, &traces, options.frozen_cache, store_size_before)?;
    if !options.include_timings {
        report.strip_timings();
    }
    Ok(ReplayOutput { report, log })
}

fn tally(
    engine: &CacheEngine,
    log: &[RequestLog],
    traces: &[(DialogueHistory, RespondTrace)],
    frozen_cache: bool,
    store_size_before: usize,
) -> Result<RankReport> {
    let config = engine.config();
    let k = config.k();
    let mut rank_counts = vec![0u64; k];
    let mut miss_count = 0u64;
    for rec in log {
        match (rec.outcome, rec.candidate_rank) {
            (Outcome::Hit, Some(r)) => rank_counts[r - 1] += 1,
            _ => miss_count += 1,
        }
    }
    let dist = RankDistribution::from_counts(&rank_counts, miss_count)?;
    let timings: Vec<_> = traces.iter().map(|(_, t)| t.response.timings).collect();
    let col = |f: fn(&crate::engine::TimingBreakdown) -> f64| -> Vec<f64> { timings.iter().map(f).collect() };
    let encode = LatencyStats::from_samples(&col(|t| t.encode_ms)).expect("non-empty");
    let search = LatencyStats::from_samples(&col(|t| t.search_ms)).expect("non-empty");
    let eval = LatencyStats::from_samples(&col(|t| t.eval_ms)).expect("non-empty");
    let total = LatencyStats::from_samples(&col(|t| t.total_ms)).expect("non-empty");
    let evals: u64 = log.iter().map(|r| r.evals_used as u64).sum();
    let eval_sum: f64 = timings.iter().map(|t| t.eval_ms).sum();
    let eval_per_candidate_ms = if evals == 0 { 0.0 } else { eval_sum / evals as f64 };
    let average = expected_latency(
        &dist,
        ComponentLatency::new(encode.mean, search.mean, eval_per_candidate_ms)?,
    );
    Ok(RankReport {
        lambda: config.lambda(),
        threshold: config.threshold(),
        k,
        encoder_id: engine.encoder().descriptor().id().to_owned(),
        evaluator_id: engine.evaluator().descriptor().id().to_owned(),
        frozen_cache,
        total_requests: log.len() as u64,
        rank_counts,
        miss_count,
        rank_proportions: dist.ranks().to_vec(),
        miss_proportion: dist.miss(),
        hit_rate: dist.hit_rate(),
        candidates_evaluated: evals,
        candidates_above_threshold: log.iter().map(|r| r.candidates_above_threshold as u64).sum(),
        store_size_before,
        store_size_after: engine.store().len(),
        average_latency_ms: Some(average),
        latency: Some(LatencyReport {
            encode,
            search,
            eval,
            eval_per_candidate_ms,
            total,
        }),
    })
}

/// Keeps the first `ceil(split * W)` whitespace words of the last utterance.
///
/// `split == 1.0` (or any split that keeps every word) returns the history unchanged.
pub fn truncate_last_utterance(history: &DialogueHistory, split: f64) -> Result<DialogueHistory> {
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::invalid(format!("split must lie in (0, 1], got {split}")));
    }
    let last = history.last();
    let words: Vec<&str> = last.words().collect();
    // The epsilon absorbs binary rounding of decimal splits (0.7 * 10 must give 7, not 8).
    let keep = ((split * words.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    if keep >= words.len() {
        return Ok(history.clone());
    }
    let mut u = Utterance::new(words[..keep].join(" "))?;
    if let Some(s) = last.speaker_index() {
        u = u.with_speaker(s);
    }
    Ok(history.with_last(u))
}

/// Replays the split once per truncation level, truncating the last utterance
/// for both retrieval and evaluation.
///
/// Each level starts from the same cache state: growing-cache runs work on a
/// fork of the engine's store.
pub fn prefetch_replay(
    test_pairs: &[PromptResponsePair],
    engine: &CacheEngine,
    splits: &[f64],
    options: &ReplayOptions,
) -> Result<Vec<PrefetchReport>> {
    for &s in splits {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid(format!("split must lie in (0, 1], got {s}")));
        }
    }
    splits
        .iter()
        .map(|&split| {
            let forked;
            let e = if options.frozen_cache {
                engine
            } else {
                forked = engine.fork();
                &forked
            };
            let out = replay_histories(test_pairs, |p| truncate_last_utterance(&p.history, split), e, options)?;
            Ok(PrefetchReport {
                split,
                report: out.report,
            })
        })
        .collect()
}

/// Components shared by every point of a decay sweep.
pub struct SweepComponents {
    pub encoder: Arc<dyn Encoder>,
    pub evaluator: Arc<dyn Evaluator>,
    pub generator: Arc<dyn Generator>,
    pub k: usize,
    pub threshold: f64,
}

/// Default decay grid.
pub const LAMBDA_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Seeds a fresh store per decay value and replays the test split against it.
pub fn lambda_sweep(
    train_pairs: &[PromptResponsePair],
    test_pairs: &[PromptResponsePair],
    lambdas: &[f64],
    components: &SweepComponents,
    options: &ReplayOptions,
) -> Result<Vec<RankReport>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let enc = components.encoder.descriptor();
            let store = Arc::new(VectorStore::new(enc.dim(), lambda, enc.id())?);
            seed(train_pairs, &store, components.encoder.as_ref())?;
            let config = EngineConfig::new(lambda, components.k, components.threshold, enc.id(), "")?;
            let engine = CacheEngine::new(
                config,
                store,
                components.encoder.clone(),
                components.evaluator.clone(),
                components.generator.clone(),
            )?;
            Ok(replay(test_pairs, &engine, options)?.report)
        })
        .collect()
}
