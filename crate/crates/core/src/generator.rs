//! Fresh-response generators used on a cache miss.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::Result;
use crate::types::DialogueHistory;

/// Produces a new response for a history. Must return non-empty text.
pub trait Generator: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, history: &DialogueHistory) -> Result<String>;
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn generate(&self, history: &DialogueHistory) -> Result<String> {
        (**self).generate(history)
    }
}

/// Deterministic generator that fills a template from the history.
///
/// Placeholders: `{last}` is the final utterance, `{turns}` the history length.
pub struct EchoGenerator {
    template: String,
    calls: AtomicUsize,
}

impl EchoGenerator {
    pub const DEFAULT_TEMPLATE: &'static str = "{last}";

    pub fn new() -> Self {
        Self::with_template(Self::DEFAULT_TEMPLATE)
    }

    pub fn with_template(template: impl Into<String>) -> Self {
        EchoGenerator {
            template: template.into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for EchoGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl Generator for EchoGenerator {
    fn id(&self) -> &str {
        "echo"
    }

    fn generate(&self, history: &DialogueHistory) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self
            .template
            .replace("{last}", history.last().text())
            .replace("{turns}", &history.len().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_fills_template() {
        let h = DialogueHistory::from_texts(["a", "b c"]).unwrap();
        assert_eq!(EchoGenerator::new().generate(&h).unwrap(), "b c");
        let g = EchoGenerator::with_template("[{turns}] {last}");
        assert_eq!(g.generate(&h).unwrap(), "[2] b c");
        assert_eq!(g.call_count(), 1);
    }
}
