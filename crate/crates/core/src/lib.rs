//! Semantic response cache for dialogue systems.
//!
//! A dialogue history is embedded as an exponential-decay weighted sum of its
//! utterance embeddings, the nearest cached conversations are retrieved by
//! cosine similarity, and their responses are checked in rank order by a
//! coherence evaluator. The first response scoring above the threshold is
//! returned; when none passes, a new response is generated and cached.
//!
//! ```
//! use std::sync::Arc;
//! use dialogue_cache::{
//!     CacheEngine, DialogueHistory, EchoGenerator, Encoder, EngineConfig, Outcome,
//!     ReferenceEncoder, SimilarityProxyEvaluator, VectorStore,
//! };
//!
//! let encoder: Arc<dyn Encoder> = Arc::new(ReferenceEncoder::new(64, 7).unwrap());
//! let store = Arc::new(VectorStore::new(64, 0.5, encoder.descriptor().id()).unwrap());
//! let evaluator = Arc::new(SimilarityProxyEvaluator::new(encoder.clone(), 0.5).unwrap());
//! let engine = CacheEngine::new(
//!     EngineConfig::with_ids("", ""),
//!     store,
//!     encoder,
//!     evaluator,
//!     Arc::new(EchoGenerator::new()),
//! )
//! .unwrap();
//!
//! let history = DialogueHistory::from_texts(["Hi"]).unwrap();
//! assert_eq!(engine.respond(&history).unwrap().outcome, Outcome::Miss);
//! assert_eq!(engine.respond(&history).unwrap().outcome, Outcome::Hit);
//! ```

pub mod embedding;
pub mod engine;
pub mod error;
pub mod gate;
pub mod generator;
pub mod harness;
pub mod index;
pub mod latency;
pub mod remote;
pub mod types;

pub use embedding::{
    aggregate, combine, decay_weights, encode, encode_all, reference_encode, DecayWeights, Embedding, Encoder,
    EncoderDescriptor, MemoizingEncoder, ReferenceEncoder,
};
pub use engine::{CacheEngine, EngineResponse, Outcome, RespondOptions, RespondTrace, TimingBreakdown};
pub use error::{Error, Result};
pub use gate::{
    evaluate, evaluate_batch, gate, CoherenceScore, EvalItem, Evaluator, EvaluatorDescriptor, GateOutcome,
    GateStrategy, SimilarityProxyEvaluator, TableEvaluator, DEFAULT_COHERENCE_QUESTION,
};
pub use generator::{EchoGenerator, Generator};
pub use index::{CacheEntry, EntrySource, NewEntry, SearchHit, StoreMeta, VectorStore};
pub use latency::{expected_latency, ComponentLatency, LatencyStats, RankDistribution};
pub use types::{DialogueHistory, EngineConfig, PromptResponsePair, Utterance, EOU_TOKEN};
