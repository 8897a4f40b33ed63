//! Line-oriented dialogue corpora and prompt-response pair extraction.
//!
//! One conversation per line, utterances separated by `__eou__`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DialogueHistory, PromptResponsePair, Utterance, EOU_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    utterances: Vec<Utterance>,
    split: Split,
}

impl Conversation {
    pub fn new(utterances: Vec<Utterance>, split: Split) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::invalid("conversation has no utterances"));
        }
        Ok(Conversation { utterances, split })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn split(&self) -> Split {
        self.split
    }
}

/// Parses one corpus line; `None` when the line holds no utterances.
pub fn parse_line(line: &str, split: Split) -> Option<Conversation> {
    let utterances: Vec<Utterance> = line
        .split(EOU_TOKEN)
        .filter_map(|seg| Utterance::new(seg).ok())
        .enumerate()
        .map(|(i, u)| u.with_speaker((i % 2) as u8))
        .collect();
    Conversation::new(utterances, split).ok()
}

pub fn parse_corpus_str(text: &str, split: Split) -> Vec<Conversation> {
    text.lines().filter_map(|l| parse_line(l, split)).collect()
}

/// Reads a corpus file. Blank lines are skipped; invalid UTF-8 is reported with its 1-based line.
pub fn parse_corpus(path: impl AsRef<Path>, split: Split) -> Result<Vec<Conversation>> {
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(line).map_err(|_| Error::Encoding { line: i + 1 })?;
        if let Some(c) = parse_line(line, split) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Writes conversations back to the line format.
pub fn format_corpus(conversations: &[Conversation]) -> String {
    let mut out = String::new();
    for c in conversations {
        for u in c.utterances() {
            out.push_str(u.text());
            out.push(' ');
            out.push_str(EOU_TOKEN);
            out.push(' ');
        }
        out.pop();
        out.push('\n');
    }
    out
}

/// `m - 1` pairs for an `m`-utterance conversation: pair `j` is `(U_1..U_j, U_{j+1})`.
pub fn extract_pairs(conversation: &Conversation) -> Vec<PromptResponsePair> {
    let u = conversation.utterances();
    (1..u.len())
        .map(|j| PromptResponsePair {
            history: DialogueHistory::new(u[..j].to_vec()).expect("j >= 1"),
            response: u[j].clone(),
        })
        .collect()
}

pub fn extract_all_pairs(conversations: &[Conversation]) -> Vec<PromptResponsePair> {
    conversations.iter().flat_map(extract_pairs).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_drops_trailing_segment() {
        let c = parse_line("Hi ! __eou__ Hello . __eou__", Split::Train).unwrap();
        let texts: Vec<&str> = c.utterances().iter().map(Utterance::text).collect();
        assert_eq!(texts, vec!["Hi !", "Hello ."]);
        assert_eq!(c.utterances()[1].speaker_index(), Some(1));
    }

    #[test]
    fn blank_lines_skipped() {
        let convs = parse_corpus_str("\n  \na __eou__ b __eou__\n__eou__\r\n", Split::Test);
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].split(), Split::Test);
    }

    #[test]
    fn crlf_is_trimmed() {
        let convs = parse_corpus_str("a __eou__ b __eou__\r\n", Split::Train);
        assert_eq!(convs[0].utterances()[1].text(), "b");
    }

    #[test]
    fn pair_counts() {
        let three = parse_line("a __eou__ b __eou__ c __eou__", Split::Train).unwrap();
        let pairs = extract_pairs(&three);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].history.len(), 1);
        assert_eq!(pairs[0].response.text(), "b");
        assert_eq!(pairs[1].history.texts().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(pairs[1].response.text(), "c");
        let one = parse_line("lonely __eou__", Split::Train).unwrap();
        assert!(extract_pairs(&one).is_empty());
    }

    #[test]
    fn bad_utf8_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, b"a __eou__ b __eou__\n\xff\xfe __eou__\n").unwrap();
        assert!(matches!(
            parse_corpus(&p, Split::Train),
            Err(Error::Encoding { line: 2 })
        ));
    }

    #[test]
    fn format_round_trips() {
        let text = "a b __eou__ c __eou__\nd __eou__\n";
        let convs = parse_corpus_str(text, Split::Train);
        assert_eq!(format_corpus(&convs), "a b __eou__ c __eou__\nd __eou__\n");
    }
}
