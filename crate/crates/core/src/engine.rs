//! The response cache: aggregate, search, gate, and on a miss generate and append.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{aggregate, Encoder};
use crate::error::{Error, Result};
use crate::gate::{gate, CoherenceScore, Evaluator, GateOutcome, GateStrategy};
use crate::generator::Generator;
use crate::index::{EntrySource, NewEntry, SearchHit, VectorStore};
use crate::types::{validate_threshold, DialogueHistory, EngineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Hit,
    Miss,
}

/// Wall-clock stage timings in milliseconds.
///
/// `total_ms` runs from request start to the gate decision and so excludes
/// generation, matching how average latency is accounted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub encode_ms: f64,
    pub search_ms: f64,
    pub eval_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generate_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineResponse {
    pub response_text: String,
    pub outcome: Outcome,
    pub candidate_rank: Option<usize>,
    pub coherence: Option<CoherenceScore>,
    /// Similarity of the returned candidate on a hit; of the top candidate on a miss.
    pub similarity: Option<f64>,
    pub evals_used: usize,
    /// True on a miss: the caller may play a filler while the new response is produced.
    pub filler_recommended: bool,
    pub timings: TimingBreakdown,
}

impl EngineResponse {
    pub fn is_hit(&self) -> bool {
        self.outcome == Outcome::Hit
    }
}

/// Everything observed while answering one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RespondTrace {
    pub response: EngineResponse,
    /// Retrieved candidates with raw similarity scores, in rank order.
    pub hits: Vec<SearchHit>,
    /// Coherence scores computed by the gate, in rank order.
    pub scores: Vec<CoherenceScore>,
    /// Id of the entry appended on a miss, if any.
    pub appended_id: Option<u64>,
}

/// Per-request overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RespondOptions {
    pub k: Option<usize>,
    pub threshold: Option<f64>,
    /// Store generated responses on a miss. Off for frozen-cache replay.
    pub append_on_miss: bool,
}

impl Default for RespondOptions {
    fn default() -> Self {
        RespondOptions {
            k: None,
            threshold: None,
            append_on_miss: true,
        }
    }
}

impl RespondOptions {
    pub fn frozen() -> Self {
        RespondOptions {
            append_on_miss: false,
            ..Self::default()
        }
    }
}

/// Response cache over a shared store and model components.
///
/// `respond` may be called concurrently; appends on a miss are serialized by
/// the store's writer lock.
pub struct CacheEngine {
    config: EngineConfig,
    strategy: GateStrategy,
    store: Arc<VectorStore>,
    encoder: Arc<dyn Encoder>,
    evaluator: Arc<dyn Evaluator>,
    generator: Arc<dyn Generator>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl CacheEngine {
    /// Checks that the store was built with this encoder and decay.
    pub fn new(
        config: EngineConfig,
        store: Arc<VectorStore>,
        encoder: Arc<dyn Encoder>,
        evaluator: Arc<dyn Evaluator>,
        generator: Arc<dyn Generator>,
    ) -> Result<Self> {
        let enc = encoder.descriptor();
        if store.dim() != enc.dim() {
            return Err(Error::DimensionMismatch {
                expected: store.dim(),
                actual: enc.dim(),
            });
        }
        if store.meta().encoder_id != enc.id() {
            return Err(Error::invalid(format!(
                "store was built with encoder {:?}, engine uses {:?}",
                store.meta().encoder_id,
                enc.id()
            )));
        }
        if !config.encoder_id().is_empty() && config.encoder_id() != enc.id() {
            return Err(Error::invalid(format!(
                "config names encoder {:?}, engine uses {:?}",
                config.encoder_id(),
                enc.id()
            )));
        }
        if !config.evaluator_id().is_empty() && config.evaluator_id() != evaluator.descriptor().id() {
            return Err(Error::invalid(format!(
                "config names evaluator {:?}, engine uses {:?}",
                config.evaluator_id(),
                evaluator.descriptor().id()
            )));
        }
        if store.meta().lambda != config.lambda() {
            return Err(Error::invalid(format!(
                "store was built with lambda {}, config has {}",
                store.meta().lambda,
                config.lambda()
            )));
        }
        Ok(CacheEngine {
            config,
            strategy: GateStrategy::default(),
            store,
            encoder,
            evaluator,
            generator,
        })
    }

    pub fn with_strategy(mut self, strategy: GateStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<VectorStore> {
        &self.store
    }

    pub fn encoder(&self) -> &Arc<dyn Encoder> {
        &self.encoder
    }

    pub fn evaluator(&self) -> &Arc<dyn Evaluator> {
        &self.evaluator
    }

    /// Same components over a deep copy of the store.
    pub fn fork(&self) -> Self {
        CacheEngine {
            config: self.config.clone(),
            strategy: self.strategy,
            store: Arc::new(self.store.fork()),
            encoder: self.encoder.clone(),
            evaluator: self.evaluator.clone(),
            generator: self.generator.clone(),
        }
    }

    pub fn respond(&self, history: &DialogueHistory) -> Result<EngineResponse> {
        Ok(self.respond_traced(history, &RespondOptions::default())?.response)
    }

    pub fn respond_with(&self, history: &DialogueHistory, options: &RespondOptions) -> Result<EngineResponse> {
        Ok(self.respond_traced(history, options)?.response)
    }

    pub fn respond_traced(&self, history: &DialogueHistory, options: &RespondOptions) -> Result<RespondTrace> {
        let k = options.k.unwrap_or(self.config.k());
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let threshold = options.threshold.unwrap_or(self.config.threshold());
        validate_threshold(threshold)?;

        let start = Instant::now();
        let query = aggregate(history, self.config.lambda(), self.encoder.as_ref())?;
        let encode_ms = ms_since(start);

        let t = Instant::now();
        // search() already caps the result at the store size.
        let hits = self.store.search(&query, k)?;
        let candidates = self.store.responses_for(&hits);
        let search_ms = ms_since(t);

        let t = Instant::now();
        let outcome = gate(history, &candidates, threshold, self.evaluator.as_ref(), self.strategy)?;
        let eval_ms = ms_since(t);
        let total_ms = ms_since(start);

        let mut timings = TimingBreakdown {
            encode_ms,
            search_ms,
            eval_ms,
            generate_ms: None,
            total_ms,
        };

        match outcome {
            GateOutcome::Hit {
                rank,
                response,
                score,
                evals_used,
                scores,
            } => Ok(RespondTrace {
                response: EngineResponse {
                    response_text: response,
                    outcome: Outcome::Hit,
                    candidate_rank: Some(rank),
                    coherence: Some(score),
                    similarity: Some(hits[rank - 1].similarity),
                    evals_used,
                    filler_recommended: false,
                    timings,
                },
                hits,
                scores,
                appended_id: None,
            }),
            GateOutcome::Miss { evals_used, scores } => {
                let t = Instant::now();
                let text = self.generator.generate(history).map_err(|e| match e {
                    Error::GeneratorFailure(_) => e,
                    other => Error::GeneratorFailure(other.to_string()),
                })?;
                if text.trim().is_empty() {
                    return Err(Error::GeneratorFailure("generator returned empty text".into()));
                }
                timings.generate_ms = Some(ms_since(t));
                let appended_id = if options.append_on_miss {
                    Some(
                        self.store
                            .append(NewEntry::new(query, text.clone(), EntrySource::Generated))?,
                    )
                } else {
                    None
                };
                Ok(RespondTrace {
                    response: EngineResponse {
                        response_text: text,
                        outcome: Outcome::Miss,
                        candidate_rank: None,
                        coherence: None,
                        similarity: hits.first().map(|h| h.similarity),
                        evals_used,
                        filler_recommended: true,
                        timings,
                    },
                    hits,
                    scores,
                    appended_id,
                })
            }
        }
    }
}
