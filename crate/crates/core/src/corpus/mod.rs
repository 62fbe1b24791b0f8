//! Corpus handling: tokenization, vocabulary, TF-IDF candidate mining and
//! assembly of fixed-size ⟨document, claim, label⟩ training tuples.
//!
//! File formats (JSON lines, one object per line):
//! - corpus:  `{"id": "...", "text": "..."}`
//! - claims:  `{"id": "...", "text": "...", "relevant_doc_ids": ["...", ...]}`
//! - dataset: `{"claim_id": "...", "candidates": [id x C], "labels": [0|1 x C]}`

mod dataset;
mod tfidf;

pub use dataset::{assemble_dataset, coverage_stats, split_claims, CandidateSet, Split, SplitSpec};
pub use tfidf::{build_tfidf_index, mine_candidates, TfidfIndex};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CorpusError {
    /// Corpus has no documents (or only empty ones where content is required).
    EmptyCorpus,
    /// Not enough documents to build candidate sets of the requested size.
    InsufficientCorpus { corpus: usize, c: usize },
    /// A claim annotates a relevant document that is not in the corpus.
    UnknownRelevantDoc { claim_id: String, doc_id: String },
    /// A claim has no relevant documents.
    NoPositives { claim_id: String },
    /// Requested more mined candidates than the corpus holds.
    KTooLarge { k: usize, corpus: usize },
    /// Split sizes exceed the number of claims.
    Oversubscribed { requested: usize, available: usize },
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::EmptyCorpus => write!(f, "corpus is empty"),
            CorpusError::InsufficientCorpus { corpus, c } => {
                write!(f, "corpus has {corpus} documents, fewer than C={c}")
            }
            CorpusError::UnknownRelevantDoc { claim_id, doc_id } => {
                write!(f, "claim {claim_id}: relevant document {doc_id} not in corpus")
            }
            CorpusError::NoPositives { claim_id } => {
                write!(f, "claim {claim_id} has no relevant documents")
            }
            CorpusError::KTooLarge { k, corpus } => {
                write!(f, "k={k} exceeds corpus size {corpus}")
            }
            CorpusError::Oversubscribed { requested, available } => {
                write!(f, "split sizes sum to {requested} but only {available} claims exist")
            }
        }
    }
}

impl std::error::Error for CorpusError {}

/// A corpus document. `tokens` holds vocabulary ids and is filled by
/// [`attach_tokens`]; it is not part of the file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(skip)]
    pub tokens: Vec<usize>,
}

/// A claim with its gold relevant documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    pub relevant_doc_ids: Vec<String>,
    #[serde(skip)]
    pub tokens: Vec<usize>,
}

/// Lowercases and splits on runs of non-alphanumeric characters.
/// Empty tokens are dropped; the result is deterministic.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token-to-id mapping with reserved PAD=0 and UNK=1 entries.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from texts in first-seen token order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: vec!["<pad>".to_owned(), "<unk>".to_owned()],
        };
        for text in texts {
            for token in tokenize(text) {
                vocab.intern(token);
            }
        }
        vocab
    }

    fn intern(&mut self, token: String) -> usize {
        if let Some(&id) = self.token_to_id.get(&token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.clone());
        self.token_to_id.insert(token, id);
        id
    }

    /// Id for a token; unknown tokens map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Total entries including PAD and UNK.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK always present
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Fills `tokens` on documents and claims from a shared vocabulary.
pub fn attach_tokens(docs: &mut [Document], claims: &mut [Claim], vocab: &Vocabulary) {
    for d in docs.iter_mut() {
        d.tokens = vocab.ids(&d.text);
    }
    for c in claims.iter_mut() {
        c.tokens = vocab.ids(&c.text);
    }
}

/// Validates claim annotations against the corpus: ids must exist and every
/// claim needs at least one relevant document.
pub fn validate_claims(claims: &[Claim], docs: &[Document]) -> Result<(), CorpusError> {
    let ids: std::collections::HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    for claim in claims {
        if claim.relevant_doc_ids.is_empty() {
            return Err(CorpusError::NoPositives { claim_id: claim.id.clone() });
        }
        for doc_id in &claim.relevant_doc_ids {
            if !ids.contains(doc_id.as_str()) {
                return Err(CorpusError::UnknownRelevantDoc {
                    claim_id: claim.id.clone(),
                    doc_id: doc_id.clone(),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_empty_is_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_lowercases_and_splits_on_non_alphanumeric() {
        assert_eq!(tokenize("The FEVER task."), vec!["the", "fever", "task"]);
        assert_eq!(tokenize("C=10"), vec!["c", "10"]);
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
    }

    #[test]
    fn vocabulary_reserves_pad_and_unk() {
        let vocab = Vocabulary::build(["alpha beta", "beta gamma"]);
        assert_eq!(vocab.id("alpha"), 2);
        assert_eq!(vocab.id("beta"), 3);
        assert_eq!(vocab.id("gamma"), 4);
        assert_eq!(vocab.id("delta"), UNK_ID);
        assert_eq!(vocab.token(PAD_ID), Some("<pad>"));
        assert_eq!(vocab.token(UNK_ID), Some("<unk>"));
        assert_eq!(vocab.len(), 5);
    }
}
