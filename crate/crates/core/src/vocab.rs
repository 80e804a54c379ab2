//! Closed whitespace-token vocabulary with a fixed special-token inventory.
//!
//! Special tokens are registered before any corpus tokens so their ids are
//! stable across corpora built from the same ontology: ten segment
//! delimiters (start/end for user, belief, db, act, response), four db-count
//! buckets, act-type tokens, then domain and placeholder tokens from the
//! ontology.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = usize;

/// The five per-turn segments of a dialog turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    User,
    Belief,
    Db,
    Act,
    Response,
}

impl Segment {
    pub const ALL: [Segment; 5] = [
        Segment::User,
        Segment::Belief,
        Segment::Db,
        Segment::Act,
        Segment::Response,
    ];

    pub fn open_token(self) -> &'static str {
        match self {
            Segment::User => "<sou>",
            Segment::Belief => "<sob>",
            Segment::Db => "<sod>",
            Segment::Act => "<soa>",
            Segment::Response => "<sor>",
        }
    }

    pub fn close_token(self) -> &'static str {
        match self {
            Segment::User => "<eou>",
            Segment::Belief => "<eob>",
            Segment::Db => "<eod>",
            Segment::Act => "<eoa>",
            Segment::Response => "<eor>",
        }
    }
}

pub const DB_BUCKET_TOKENS: [&str; 4] = ["[db_0]", "[db_1]", "[db_2]", "[db_3]"];
pub const ACT_TYPE_TOKENS: [&str; 5] = ["[inform]", "[request]", "[select]", "[bye]", "[reqmore]"];
pub const GENERAL_DOMAIN: &str = "[general]";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is out of range (vocabulary size {1})")]
    UnknownId(TokenId, usize),
}

/// Bidirectional token <-> id map over a closed vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from special tokens plus corpus words.
    ///
    /// `domains` and `placeholders` come from the ontology; `words` is the
    /// remaining surface vocabulary (values, template words, slot names) and
    /// is deduplicated and sorted so the mapping is deterministic.
    pub fn build<S: AsRef<str>>(domains: &[S], placeholders: &[S], words: &[S]) -> Self {
        let mut tokens: Vec<String> = Vec::new();
        for seg in Segment::ALL {
            tokens.push(seg.open_token().to_string());
            tokens.push(seg.close_token().to_string());
        }
        tokens.extend(DB_BUCKET_TOKENS.iter().map(|t| t.to_string()));
        tokens.extend(ACT_TYPE_TOKENS.iter().map(|t| t.to_string()));
        tokens.push(GENERAL_DOMAIN.to_string());
        for d in domains {
            tokens.push(d.as_ref().to_string());
        }
        for p in placeholders {
            tokens.push(p.as_ref().to_string());
        }
        let mut rest: Vec<String> = words
            .iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !tokens.contains(w))
            .collect();
        rest.sort();
        rest.dedup();
        tokens.extend(rest);
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Rebuilds the token index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<TokenId, VocabError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| VocabError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Result<&str, VocabError> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(VocabError::UnknownId(id, self.tokens.len()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Whitespace-tokenizes `text` into ids; every token must be known.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let parts: Result<Vec<&str>, _> = ids.iter().map(|&id| self.token(id)).collect();
        Ok(parts?.join(" "))
    }

    pub fn open_id(&self, seg: Segment) -> TokenId {
        self.id(seg.open_token()).expect("delimiters are always registered")
    }

    pub fn close_id(&self, seg: Segment) -> TokenId {
        self.id(seg.close_token()).expect("delimiters are always registered")
    }

    pub fn db_bucket_id(&self, bucket: usize) -> TokenId {
        self.id(DB_BUCKET_TOKENS[bucket.min(3)])
            .expect("db buckets are always registered")
    }
}

/// Maps a db match count onto its bucket token index: 0, 1, 2-3, >3.
pub fn db_bucket(count: usize) -> usize {
    match count {
        0 => 0,
        1 => 1,
        2 | 3 => 2,
        _ => 3,
    }
}
