//! Coherence evaluators and the first-pass threshold gate.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{aggregate, encode_checked, Encoder};
use crate::error::{Error, Result};
use crate::types::{validate_lambda, validate_threshold, DialogueHistory};

/// Boolean question posed to UniEval-class coherence evaluators.
pub const DEFAULT_COHERENCE_QUESTION: &str = "question: Is this a coherent response given the dialogue history?";

/// A coherence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CoherenceScore(f64);

impl CoherenceScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::ScoreOutOfRange(value));
        }
        Ok(CoherenceScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Strictly above the threshold; equality does not pass.
    pub fn passes(self, threshold: f64) -> bool {
        self.0 > threshold
    }
}

impl TryFrom<f64> for CoherenceScore {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        CoherenceScore::new(v)
    }
}

impl From<CoherenceScore> for f64 {
    fn from(s: CoherenceScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorDescriptor {
    id: String,
    question: String,
}

impl EvaluatorDescriptor {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        Self::with_question(id, DEFAULT_COHERENCE_QUESTION)
    }

    pub fn with_question(id: impl Into<String>, question: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("evaluator id is empty"));
        }
        Ok(EvaluatorDescriptor {
            id,
            question: question.into(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn question(&self) -> &str {
        &self.question
    }
}

/// One (history, response) pair to score.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub history: &'a DialogueHistory,
    pub response: &'a str,
}

/// Scores how well a response fits a dialogue history.
///
/// Raw scores are range-checked by [`evaluate`] and [`gate`], so
/// implementations may pass through whatever their model returns.
pub trait Evaluator: Send + Sync {
    fn descriptor(&self) -> &EvaluatorDescriptor;

    /// Scores a batch, preserving order.
    fn score_batch(&self, items: &[EvalItem<'_>]) -> Result<Vec<f64>>;
}

impl<E: Evaluator + ?Sized> Evaluator for Arc<E> {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        (**self).descriptor()
    }

    fn score_batch(&self, items: &[EvalItem<'_>]) -> Result<Vec<f64>> {
        (**self).score_batch(items)
    }
}

pub fn evaluate(history: &DialogueHistory, response: &str, evaluator: &dyn Evaluator) -> Result<CoherenceScore> {
    let mut scores = evaluate_batch(&[EvalItem { history, response }], evaluator)?;
    Ok(scores.pop().expect("one score per item"))
}

pub fn evaluate_batch(items: &[EvalItem<'_>], evaluator: &dyn Evaluator) -> Result<Vec<CoherenceScore>> {
    if items.iter().any(|i| i.response.trim().is_empty()) {
        return Err(Error::invalid("response to evaluate is empty"));
    }
    let raw = evaluator.score_batch(items)?;
    if raw.len() != items.len() {
        return Err(Error::EvaluatorUnavailable(format!(
            "evaluator returned {} scores for {} items",
            raw.len(),
            items.len()
        )));
    }
    raw.into_iter().map(CoherenceScore::new).collect()
}

/// How candidates are gated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStrategy {
    /// Evaluate in rank order, one at a time, and stop at the first pass.
    #[default]
    FirstPass,
    /// Score every candidate in one batch and take the best passing one
    /// (earlier rank wins ties).
    RerankAll,
}

/// Result of gating a candidate list.
#[derive(Debug, Clone, PartialEq)]
pub enum GateOutcome {
    Hit {
        /// 1-based rank of the accepted candidate.
        rank: usize,
        response: String,
        score: CoherenceScore,
        evals_used: usize,
        /// Every score computed, in rank order.
        scores: Vec<CoherenceScore>,
    },
    Miss {
        evals_used: usize,
        scores: Vec<CoherenceScore>,
    },
}

impl GateOutcome {
    pub fn is_hit(&self) -> bool {
        matches!(self, GateOutcome::Hit { .. })
    }

    pub fn evals_used(&self) -> usize {
        match self {
            GateOutcome::Hit { evals_used, .. } | GateOutcome::Miss { evals_used, .. } => *evals_used,
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            GateOutcome::Hit { rank, .. } => Some(*rank),
            GateOutcome::Miss { .. } => None,
        }
    }

    pub fn scores(&self) -> &[CoherenceScore] {
        match self {
            GateOutcome::Hit { scores, .. } | GateOutcome::Miss { scores, .. } => scores,
        }
    }
}

/// Accepts the first candidate (in rank order) whose score is strictly above `threshold`.
///
/// An evaluator failure aborts the gate with [`Error::Gate`]; it is never
/// treated as a miss.
pub fn gate<S: AsRef<str>>(
    history: &DialogueHistory,
    candidates: &[S],
    threshold: f64,
    evaluator: &dyn Evaluator,
    strategy: GateStrategy,
) -> Result<GateOutcome> {
    validate_threshold(threshold)?;
    match strategy {
        GateStrategy::FirstPass => {
            let mut scores = Vec::with_capacity(candidates.len());
            for (i, candidate) in candidates.iter().enumerate() {
                let response = candidate.as_ref();
                let score = evaluate(history, response, evaluator).map_err(|e| Error::Gate {
                    rank: i + 1,
                    source: Box::new(e),
                })?;
                scores.push(score);
                if score.passes(threshold) {
                    return Ok(GateOutcome::Hit {
                        rank: i + 1,
                        response: response.to_owned(),
                        score,
                        evals_used: i + 1,
                        scores,
                    });
                }
            }
            Ok(GateOutcome::Miss {
                evals_used: candidates.len(),
                scores,
            })
        }
        GateStrategy::RerankAll => {
            if candidates.is_empty() {
                return Ok(GateOutcome::Miss {
                    evals_used: 0,
                    scores: Vec::new(),
                });
            }
            let items: Vec<EvalItem<'_>> = candidates
                .iter()
                .map(|c| EvalItem {
                    history,
                    response: c.as_ref(),
                })
                .collect();
            let scores = evaluate_batch(&items, evaluator).map_err(|e| Error::Gate {
                rank: 1,
                source: Box::new(e),
            })?;
            let best = scores.iter().enumerate().filter(|(_, s)| s.passes(threshold)).fold(
                None::<(usize, CoherenceScore)>,
                |best, (i, &s)| match best {
                    Some((_, b)) if b.value() >= s.value() => best,
                    _ => Some((i, s)),
                },
            );
            Ok(match best {
                Some((i, score)) => GateOutcome::Hit {
                    rank: i + 1,
                    response: candidates[i].as_ref().to_owned(),
                    score,
                    evals_used: candidates.len(),
                    scores,
                },
                None => GateOutcome::Miss {
                    evals_used: candidates.len(),
                    scores,
                },
            })
        }
    }
}

/// Table-driven evaluator for tests. Counts every item it scores.
///
/// Lookup order: exact (history, response), then response alone, then the default.
pub struct TableEvaluator {
    descriptor: EvaluatorDescriptor,
    exact: HashMap<(Vec<String>, String), f64>,
    by_response: HashMap<String, f64>,
    failing: Vec<String>,
    default: f64,
    calls: AtomicUsize,
}

impl TableEvaluator {
    pub fn new(default: f64) -> Self {
        TableEvaluator {
            descriptor: EvaluatorDescriptor::new("table").expect("static id"),
            exact: HashMap::new(),
            by_response: HashMap::new(),
            failing: Vec::new(),
            default,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_score(mut self, history: &DialogueHistory, response: &str, score: f64) -> Self {
        self.exact.insert(
            (history.texts().map(str::to_owned).collect(), response.to_owned()),
            score,
        );
        self
    }

    pub fn with_response_score(mut self, response: &str, score: f64) -> Self {
        self.by_response.insert(response.to_owned(), score);
        self
    }

    /// Makes scoring `response` fail as if the evaluator were unreachable.
    pub fn failing_on(mut self, response: &str) -> Self {
        self.failing.push(response.to_owned());
        self
    }

    /// Number of items scored so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl Evaluator for TableEvaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, items: &[EvalItem<'_>]) -> Result<Vec<f64>> {
        items
            .iter()
            .map(|item| {
                self.calls.fetch_add(1, Ordering::SeqCst);
                if self.failing.iter().any(|f| f == item.response) {
                    return Err(Error::EvaluatorUnavailable("table evaluator failure".into()));
                }
                let key = (
                    item.history.texts().map(str::to_owned).collect::<Vec<_>>(),
                    item.response.to_owned(),
                );
                Ok(self
                    .exact
                    .get(&key)
                    .or_else(|| self.by_response.get(item.response))
                    .copied()
                    .unwrap_or(self.default))
            })
            .collect()
    }
}

/// Scores a response by `max(0, cos(aggregate(history), encode(response)))`.
pub struct SimilarityProxyEvaluator {
    descriptor: EvaluatorDescriptor,
    encoder: Arc<dyn Encoder>,
    lambda: f64,
}

impl SimilarityProxyEvaluator {
    pub fn new(encoder: Arc<dyn Encoder>, lambda: f64) -> Result<Self> {
        validate_lambda(lambda)?;
        let descriptor = EvaluatorDescriptor::new(format!("similarity-proxy[{}]", encoder.descriptor().id()))?;
        Ok(SimilarityProxyEvaluator {
            descriptor,
            encoder,
            lambda,
        })
    }
}

impl Evaluator for SimilarityProxyEvaluator {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn score_batch(&self, items: &[EvalItem<'_>]) -> Result<Vec<f64>> {
        let responses: Vec<&str> = items.iter().map(|i| i.response).collect();
        let encoded = encode_checked(&responses, self.encoder.as_ref())?;
        items
            .iter()
            .zip(encoded)
            .map(|(item, r)| {
                let s = aggregate(item.history, self.lambda, self.encoder.as_ref())?;
                Ok(s.cosine(&r)?.clamp(0.0, 1.0))
            })
            .collect()
    }
}
