//! Corpus ingestion, cache seeding, replay and prefetch simulation.

pub mod corpus;
pub mod replay;
pub mod report;
pub mod synthetic;

pub use corpus::{
    extract_all_pairs, extract_pairs, format_corpus, parse_corpus, parse_corpus_str, Conversation, Split,
};
pub use replay::{
    history_hash, lambda_sweep, prefetch_replay, replay, seed, truncate_last_utterance, ReplayOptions, ReplayOutput,
    SweepComponents, LAMBDA_GRID,
};
pub use report::{prefetch_table, read_log, write_log, LatencyReport, PrefetchReport, RankReport, RequestLog};
pub use synthetic::synthetic_corpus;
