//! Cached teacher logits, one vector per claim, aligned with that claim's
//! candidate order. File format: JSON lines `{"claim_id": ..., "logits": [...]}`.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::corpus::CandidateSet;
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::models::Model;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    claim_id: String,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TeacherLogitCache {
    entries: HashMap<String, Vec<f64>>,
    /// Order of first insertion, so files round-trip byte-identically.
    order: Vec<String>,
    /// Checkpoint digest of the teacher that produced the logits.
    pub checkpoint_hash: Option<String>,
}

impl TeacherLogitCache {
    pub fn insert(&mut self, claim_id: String, logits: Vec<f64>) {
        if !self.entries.contains_key(&claim_id) {
            self.order.push(claim_id.clone());
        }
        self.entries.insert(claim_id, logits);
    }

    pub fn get(&self, claim_id: &str) -> Option<&[f64]> {
        self.entries.get(claim_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Verifies that every claim in `sets` has a logit vector of matching length.
    pub fn check_alignment(&self, sets: &[CandidateSet]) -> Result<(), DistillError> {
        for set in sets {
            match self.get(&set.claim_id) {
                None => {
                    return Err(DistillError::Cache {
                        detail: format!("no cached logits for claim {}", set.claim_id),
                    })
                }
                Some(logits) if logits.len() != set.candidates.len() => {
                    return Err(DistillError::Alignment {
                        detail: format!(
                            "claim {}: {} cached logits for {} candidates",
                            set.claim_id,
                            logits.len(),
                            set.candidates.len()
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DistillError> {
        let lines: Vec<CacheLine> = self
            .order
            .iter()
            .map(|id| CacheLine { claim_id: id.clone(), logits: self.entries[id].clone() })
            .collect();
        write_jsonl(path, &lines)
            .map_err(|e| DistillError::Cache { detail: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, DistillError> {
        let lines: Vec<CacheLine> =
            read_jsonl(path).map_err(|e| DistillError::Cache { detail: e.to_string() })?;
        let mut cache = TeacherLogitCache::default();
        for line in lines {
            cache.insert(line.claim_id, line.logits);
        }
        Ok(cache)
    }
}

/// Scores every candidate of every claim with the given model (normally the
/// trained teacher). Claims fan out across threads read-only; output order
/// and values are deterministic.
pub fn score_teacher(
    model: &Model,
    sets: &[CandidateSet],
    claim_tokens: &HashMap<String, Vec<usize>>,
    doc_tokens: &HashMap<String, Vec<usize>>,
) -> Result<TeacherLogitCache, DistillError> {
    let scored: Result<Vec<(String, Vec<f64>)>, DistillError> = sets
        .par_iter()
        .map(|set| {
            let claim = claim_tokens.get(&set.claim_id).ok_or_else(|| {
                DistillError::Alignment {
                    detail: format!("claim {} has no tokens", set.claim_id),
                }
            })?;
            let docs: Vec<&[usize]> = set
                .candidates
                .iter()
                .map(|id| {
                    doc_tokens.get(id).map(Vec::as_slice).ok_or_else(|| {
                        DistillError::Alignment {
                            detail: format!("candidate document {id} not in corpus"),
                        }
                    })
                })
                .collect::<Result<_, _>>()?;
            let logits = model.score_candidates(claim, &docs)?;
            Ok((set.claim_id.clone(), logits))
        })
        .collect();

    let mut cache = TeacherLogitCache::default();
    for (claim_id, logits) in scored? {
        cache.insert(claim_id, logits);
    }
    Ok(cache)
}
