//! Target-sentence selection: question exclusion and stop-word stripping.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// A turn of a dialogue eligible to be replaced by an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSentence {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub raw_text: String,
    pub query_tokens: Vec<String>,
}

impl CandidateSentence {
    /// `"dialogue_id#turn_index"`, the key sentence embeddings are stored under.
    pub fn key(&self) -> String {
        candidate_key(&self.dialogue_id, self.turn_index)
    }
}

pub fn candidate_key(dialogue_id: &str, turn_index: usize) -> String {
    format!("{dialogue_id}#{turn_index}")
}

/// Set of lowercase tokens removed from similarity queries.
///
/// Entries go through [`tokenize`] when added, so a contraction such as
/// `don't` contributes the fragments `don` and `t`, which is what the
/// tokenizer produces from running text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopList {
    entries: usize,
    tokens: HashSet<String>,
}

impl StopList {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries = 0;
        let mut tokens = HashSet::new();
        for w in words {
            entries += 1;
            tokens.extend(tokenize(w.as_ref()));
        }
        Self { entries, tokens }
    }

    /// One token per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Ok(Self::parse(text.trim_start_matches('\u{feff}')))
    }

    pub fn empty() -> Self {
        Self::from_words(std::iter::empty::<&str>())
    }

    /// Number of list entries this was built from (not the token count).
    pub fn entry_count(&self) -> usize {
        self.entries
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

impl Default for StopList {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

/// True iff the trimmed text ends with `?`.
pub fn is_question(text: &str) -> bool {
    text.trim_end().ends_with('?')
}

/// Lowercase tokens split on maximal runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn strip_stopwords(tokens: &[String], stoplist: &StopList) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !stoplist.contains(t))
        .cloned()
        .collect()
}

/// Candidate targets of one dialogue: every non-first, non-question turn whose
/// stop-word-stripped token list is non-empty.
pub fn extract_candidates(dialogue: &Dialogue, stoplist: &StopList) -> Vec<CandidateSentence> {
    dialogue
        .turns
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, turn)| !is_question(&turn.text))
        .filter_map(|(idx, turn)| {
            let query_tokens = strip_stopwords(&tokenize(&turn.text), stoplist);
            (!query_tokens.is_empty()).then(|| CandidateSentence {
                dialogue_id: dialogue.dialogue_id.clone(),
                turn_index: idx,
                raw_text: turn.text.clone(),
                query_tokens,
            })
        })
        .collect()
}
