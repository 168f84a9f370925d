use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Span;

/// Coarse part-of-speech tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Det,
    Adj,
    Noun,
    Other,
}

/// Closed-vocabulary tag lexicon.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    tags: BTreeMap<String, Tag>,
}

impl Lexicon {
    pub fn new(tags: BTreeMap<String, Tag>) -> Self {
        Self { tags }
    }

    pub fn insert(&mut self, word: impl Into<String>, tag: Tag) {
        self.tags.insert(word.into(), tag);
    }

    pub fn tag(&self, word: &str) -> Option<Tag> {
        self.tags.get(word).copied()
    }

    pub fn words_with(&self, tag: Tag) -> impl Iterator<Item = &str> {
        self.tags.iter().filter(move |(_, t)| **t == tag).map(|(w, _)| w.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tags).expect("string map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunking {
    pub phrases: Vec<Span>,
    /// Tokens missing from the lexicon; each breaks any phrase in progress.
    pub unknown: usize,
}

/// Maximal, non-overlapping `DET? ADJ* NOUN+` spans, scanned left to right.
pub fn extract_noun_phrases(tokens: &[String], lexicon: &Lexicon) -> Chunking {
    let tags: Vec<Tag> = tokens.iter().map(|t| lexicon.tag(t).unwrap_or(Tag::Other)).collect();
    let unknown = tokens.iter().filter(|t| lexicon.tag(t).is_none()).count();
    let mut phrases = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let mut j = i;
        if tags[j] == Tag::Det {
            j += 1;
        }
        while j < tags.len() && tags[j] == Tag::Adj {
            j += 1;
        }
        let nouns_start = j;
        while j < tags.len() && tags[j] == Tag::Noun {
            j += 1;
        }
        if j > nouns_start {
            phrases.push(Span::new(i, j));
            i = j;
        } else {
            i += 1;
        }
    }
    Chunking { phrases, unknown }
}
