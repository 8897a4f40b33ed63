//! Dialogue data model shared by the rest of the crate.
//!
//! Every constructor validates its invariants eagerly, so a value that
//! exists is a value that is well formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between utterances in the line-oriented corpus format.
pub const EOU_TOKEN: &str = "__eou__";

/// One turn of dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "UtteranceRepr", into = "UtteranceRepr")]
pub struct Utterance {
    text: String,
    speaker_index: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRepr {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speaker_index: Option<u8>,
}

impl TryFrom<UtteranceRepr> for Utterance {
    type Error = Error;

    fn try_from(r: UtteranceRepr) -> Result<Self> {
        let u = Utterance::new(r.text)?;
        Ok(match r.speaker_index {
            Some(s) => u.with_speaker(s),
            None => u,
        })
    }
}

impl From<Utterance> for UtteranceRepr {
    fn from(u: Utterance) -> Self {
        UtteranceRepr {
            text: u.text,
            speaker_index: u.speaker_index,
        }
    }
}

impl Utterance {
    /// Trims `text` and rejects it if empty or if it contains the separator token.
    pub fn new(text: impl AsRef<str>) -> Result<Self> {
        let trimmed = text.as_ref().trim();
        if trimmed.is_empty() {
            return Err(Error::invalid("utterance is empty"));
        }
        if trimmed.contains(EOU_TOKEN) {
            return Err(Error::invalid("utterance contains the end-of-utterance token"));
        }
        Ok(Utterance {
            text: trimmed.to_owned(),
            speaker_index: None,
        })
    }

    pub fn with_speaker(mut self, speaker_index: u8) -> Self {
        self.speaker_index = Some(speaker_index);
        self
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn speaker_index(&self) -> Option<u8> {
        self.speaker_index
    }

    /// Whitespace-delimited words.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

impl std::fmt::Display for Utterance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

/// Ordered, non-empty sequence of utterances forming a prompt context.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Utterance>", into = "Vec<Utterance>")]
pub struct DialogueHistory {
    utterances: Vec<Utterance>,
}

impl TryFrom<Vec<Utterance>> for DialogueHistory {
    type Error = Error;

    fn try_from(v: Vec<Utterance>) -> Result<Self> {
        DialogueHistory::new(v)
    }
}

impl From<DialogueHistory> for Vec<Utterance> {
    fn from(h: DialogueHistory) -> Self {
        h.utterances
    }
}

impl DialogueHistory {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::invalid("dialogue history is empty"));
        }
        Ok(DialogueHistory { utterances })
    }

    /// Builds a history from raw strings, validating each one.
    pub fn from_texts<I, S>(texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let utterances = texts.into_iter().map(Utterance::new).collect::<Result<Vec<_>>>()?;
        Self::new(utterances)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> &Utterance {
        self.utterances.last().expect("history is non-empty")
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(Utterance::text)
    }

    /// Replaces the final utterance, keeping the rest untouched.
    pub fn with_last(&self, last: Utterance) -> Self {
        let mut utterances = self.utterances.clone();
        *utterances.last_mut().expect("history is non-empty") = last;
        DialogueHistory { utterances }
    }
}

/// A dialogue history and the utterance that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResponsePair {
    pub history: DialogueHistory,
    pub response: Utterance,
}

/// Parameters of the response cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EngineConfigRepr", into = "EngineConfigRepr")]
pub struct EngineConfig {
    lambda: f64,
    k: usize,
    threshold: f64,
    encoder_id: String,
    evaluator_id: String,
}

#[derive(Serialize, Deserialize)]
struct EngineConfigRepr {
    #[serde(default = "default_lambda")]
    lambda: f64,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default)]
    encoder_id: String,
    #[serde(default)]
    evaluator_id: String,
}

fn default_lambda() -> f64 {
    EngineConfig::DEFAULT_LAMBDA
}

fn default_k() -> usize {
    EngineConfig::DEFAULT_K
}

fn default_threshold() -> f64 {
    EngineConfig::DEFAULT_THRESHOLD
}

impl TryFrom<EngineConfigRepr> for EngineConfig {
    type Error = Error;

    fn try_from(r: EngineConfigRepr) -> Result<Self> {
        EngineConfig::new(r.lambda, r.k, r.threshold, r.encoder_id, r.evaluator_id)
    }
}

impl From<EngineConfig> for EngineConfigRepr {
    fn from(c: EngineConfig) -> Self {
        EngineConfigRepr {
            lambda: c.lambda,
            k: c.k,
            threshold: c.threshold,
            encoder_id: c.encoder_id,
            evaluator_id: c.evaluator_id,
        }
    }
}

impl EngineConfig {
    pub const DEFAULT_LAMBDA: f64 = 0.5;
    pub const DEFAULT_K: usize = 5;
    pub const DEFAULT_THRESHOLD: f64 = 0.9;

    pub fn new(
        lambda: f64,
        k: usize,
        threshold: f64,
        encoder_id: impl Into<String>,
        evaluator_id: impl Into<String>,
    ) -> Result<Self> {
        validate_lambda(lambda)?;
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        validate_threshold(threshold)?;
        Ok(EngineConfig {
            lambda,
            k,
            threshold,
            encoder_id: encoder_id.into(),
            evaluator_id: evaluator_id.into(),
        })
    }

    /// Defaults (lambda 0.5, k 5, threshold 0.9) for the given model identities.
    pub fn with_ids(encoder_id: impl Into<String>, evaluator_id: impl Into<String>) -> Self {
        Self::new(
            Self::DEFAULT_LAMBDA,
            Self::DEFAULT_K,
            Self::DEFAULT_THRESHOLD,
            encoder_id,
            evaluator_id,
        )
        .expect("defaults are valid")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn evaluator_id(&self) -> &str {
        &self.evaluator_id
    }

    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.k = k;
        Ok(())
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        validate_threshold(threshold)?;
        self.threshold = threshold;
        Ok(())
    }
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

pub(crate) fn validate_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    Ok(())
}
