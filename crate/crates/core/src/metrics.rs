//! Ranking metrics: recall at k (micro and macro), R(1), and normalized DCG.
//!
//! All metrics are reported ×100. R(1) is micro recall at 1. DCG uses binary
//! gains with log2(j+1) position discounts, normalized per claim by the
//! ideal list and averaged over claims.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::CandidateSet;

#[derive(Debug)]
pub enum MetricsError {
    /// No claims to evaluate.
    Empty,
    /// k exceeds the candidate-list length.
    KTooLarge { k: usize, c: usize },
    /// A claim is missing scores, or score/candidate lengths disagree.
    Alignment { claim_id: String, detail: String },
    /// A claim has no relevant candidate.
    NoPositives { claim_id: String },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::Empty => write!(f, "no claims to evaluate"),
            MetricsError::KTooLarge { k, c } => write!(f, "k={k} exceeds list length C={c}"),
            MetricsError::Alignment { claim_id, detail } => {
                write!(f, "claim {claim_id}: {detail}")
            }
            MetricsError::NoPositives { claim_id } => {
                write!(f, "claim {claim_id} has no relevant candidate")
            }
        }
    }
}

impl std::error::Error for MetricsError {}

/// One claim's candidates sorted by descending score, ties by ascending
/// document id. `relevance[j]` flags whether the document at rank j is gold.
#[derive(Debug, Clone)]
pub struct RankedClaim {
    pub claim_id: String,
    pub ranked_doc_ids: Vec<String>,
    pub relevance: Vec<u8>,
}

impl RankedClaim {
    /// Ranks a candidate set under per-candidate scores.
    pub fn from_scores(set: &CandidateSet, scores: &[f64]) -> Result<Self, MetricsError> {
        if scores.len() != set.candidates.len() {
            return Err(MetricsError::Alignment {
                claim_id: set.claim_id.clone(),
                detail: format!("{} scores for {} candidates", scores.len(), set.candidates.len()),
            });
        }
        if set.positives() == 0 {
            return Err(MetricsError::NoPositives { claim_id: set.claim_id.clone() });
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then_with(|| set.candidates[a].cmp(&set.candidates[b]))
        });
        Ok(RankedClaim {
            claim_id: set.claim_id.clone(),
            ranked_doc_ids: order.iter().map(|&i| set.candidates[i].clone()).collect(),
            relevance: order.iter().map(|&i| set.labels[i]).collect(),
        })
    }

    pub fn positives(&self) -> usize {
        self.relevance.iter().map(|&r| r as usize).sum()
    }

    fn hits_at(&self, k: usize) -> usize {
        self.relevance[..k].iter().map(|&r| r as usize).sum()
    }
}

fn check(ranked: &[RankedClaim], k: usize) -> Result<(), MetricsError> {
    if ranked.is_empty() {
        return Err(MetricsError::Empty);
    }
    for claim in ranked {
        if k > claim.relevance.len() {
            return Err(MetricsError::KTooLarge { k, c: claim.relevance.len() });
        }
        if claim.positives() == 0 {
            return Err(MetricsError::NoPositives { claim_id: claim.claim_id.clone() });
        }
    }
    Ok(())
}

/// `100 * mean_i(hits_i(k) / c_i)`: per-claim recall averaged over claims.
pub fn recall_macro(ranked: &[RankedClaim], k: usize) -> Result<f64, MetricsError> {
    check(ranked, k)?;
    let sum: f64 =
        ranked.iter().map(|r| r.hits_at(k) as f64 / r.positives() as f64).sum();
    Ok(100.0 * sum / ranked.len() as f64)
}

/// `100 * sum_i(hits_i(k)) / sum_i(c_i)`: recall over pooled positives.
pub fn recall_micro(ranked: &[RankedClaim], k: usize) -> Result<f64, MetricsError> {
    check(ranked, k)?;
    let hits: usize = ranked.iter().map(|r| r.hits_at(k)).sum();
    let positives: usize = ranked.iter().map(|r| r.positives()).sum();
    Ok(100.0 * hits as f64 / positives as f64)
}

/// Mean per-claim normalized DCG ×100 over the full candidate list, with
/// binary gains and log2(j+1) discounts (j is the 1-based rank).
pub fn dcg(ranked: &[RankedClaim]) -> Result<f64, MetricsError> {
    check(ranked, 0)?;
    let mut total = 0.0;
    for claim in ranked {
        let gain: f64 = claim
            .relevance
            .iter()
            .enumerate()
            .map(|(j0, &r)| r as f64 / ((j0 + 2) as f64).log2())
            .sum();
        let ideal: f64 =
            (0..claim.positives()).map(|j0| 1.0 / ((j0 + 2) as f64).log2()).sum();
        total += gain / ideal;
    }
    Ok(100.0 * total / ranked.len() as f64)
}

/// The per-run metric bundle reported by every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub r_at_1: f64,
    pub recall_micro_3: f64,
    pub recall_macro_3: f64,
    pub recall_micro_5: f64,
    pub recall_macro_5: f64,
    pub dcg: f64,
    pub claims: usize,
}

impl RankingReport {
    /// Renders the six metrics as one aligned table row.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<16} {:>7.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>7.2}",
            self.r_at_1,
            self.recall_micro_3,
            self.recall_macro_3,
            self.recall_micro_5,
            self.recall_macro_5,
            self.dcg
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:>7} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "run", "R(1)", "Rmi(3)", "Rma(3)", "Rmi(5)", "Rma(5)", "DCG"
        )
    }
}

/// Per-claim scores keyed by claim id; alignment follows the dataset file.
pub type ScoreMap = HashMap<String, Vec<f64>>;

/// Ranks every candidate set under `scores` and assembles the full report.
pub fn evaluate(sets: &[CandidateSet], scores: &ScoreMap) -> Result<RankingReport, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut ranked = Vec::with_capacity(sets.len());
    for set in sets {
        let claim_scores = scores.get(&set.claim_id).ok_or_else(|| MetricsError::Alignment {
            claim_id: set.claim_id.clone(),
            detail: "no scores for claim".into(),
        })?;
        ranked.push(RankedClaim::from_scores(set, claim_scores)?);
    }
    report_for(&ranked)
}

/// Report over already-ranked claims. Recall at k > C is clamped to k = C so
/// short candidate lists still evaluate (k is 3 and 5 in the report).
pub fn report_for(ranked: &[RankedClaim]) -> Result<RankingReport, MetricsError> {
    let c = ranked.iter().map(|r| r.relevance.len()).min().ok_or(MetricsError::Empty)?;
    let k3 = 3.min(c);
    let k5 = 5.min(c);
    Ok(RankingReport {
        r_at_1: recall_micro(ranked, 1.min(c))?,
        recall_micro_3: recall_micro(ranked, k3)?,
        recall_macro_3: recall_macro(ranked, k3)?,
        recall_micro_5: recall_micro(ranked, k5)?,
        recall_macro_5: recall_macro(ranked, k5)?,
        dcg: dcg(ranked)?,
        claims: ranked.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(relevance: &[u8]) -> RankedClaim {
        RankedClaim {
            claim_id: "c".into(),
            ranked_doc_ids: (0..relevance.len()).map(|i| format!("d{i}")).collect(),
            relevance: relevance.to_vec(),
        }
    }

    #[test]
    fn perfect_ranking_scores_100_everywhere() {
        let claims = vec![ranked(&[1, 0, 0, 0]), ranked(&[1, 1, 0, 0])];
        assert_eq!(recall_macro(&claims, 3).unwrap(), 100.0);
        assert_eq!(recall_micro(&claims, 3).unwrap(), 100.0);
        assert_eq!(dcg(&claims).unwrap(), 100.0);
    }

    #[test]
    fn micro_and_macro_disagree_on_uneven_positive_counts() {
        // Claim 1: c=1, hit in top-k. Claim 2: c=2, one hit in top-k.
        let claims = vec![ranked(&[1, 0, 0, 0]), ranked(&[1, 0, 0, 1])];
        let k = 2;
        assert_eq!(recall_macro(&claims, k).unwrap(), 75.0);
        let micro = recall_micro(&claims, k).unwrap();
        assert!((micro - 100.0 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn micro_equals_macro_when_positive_counts_match() {
        let claims = vec![ranked(&[1, 0, 1, 0]), ranked(&[0, 1, 0, 1])];
        for k in 1..=4 {
            let mi = recall_micro(&claims, k).unwrap();
            let ma = recall_macro(&claims, k).unwrap();
            assert!((mi - ma).abs() < 1e-12);
        }
    }

    #[test]
    fn dcg_single_positive_at_rank_two() {
        let claims = vec![ranked(&[0, 1, 0])];
        let expected = 100.0 / 3f64.log2();
        assert!((dcg(&claims).unwrap() - expected).abs() < 1e-9);
        assert!((dcg(&claims).unwrap() - 63.092975).abs() < 1e-6);
    }

    #[test]
    fn ties_rank_by_ascending_doc_id() {
        let set = CandidateSet {
            claim_id: "c".into(),
            candidates: vec!["z".into(), "a".into(), "m".into()],
            labels: vec![1, 0, 0],
            teacher_logits: None,
        };
        let ranked = RankedClaim::from_scores(&set, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(ranked.ranked_doc_ids, vec!["a", "m", "z"]);
        assert_eq!(ranked.relevance, vec![0, 0, 1]);
    }

    #[test]
    fn empty_claim_set_is_an_error() {
        assert!(matches!(recall_micro(&[], 1), Err(MetricsError::Empty)));
        assert!(matches!(dcg(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn k_beyond_list_length_is_an_error() {
        let claims = vec![ranked(&[1, 0])];
        assert!(matches!(recall_macro(&claims, 3), Err(MetricsError::KTooLarge { .. })));
    }

    #[test]
    fn missing_scores_are_an_alignment_error() {
        let sets = vec![CandidateSet {
            claim_id: "c".into(),
            candidates: vec!["a".into()],
            labels: vec![1],
            teacher_logits: None,
        }];
        let err = evaluate(&sets, &ScoreMap::new());
        assert!(matches!(err, Err(MetricsError::Alignment { .. })));
    }

    #[test]
    fn oracle_scores_give_all_100() {
        let sets: Vec<CandidateSet> = (0..4)
            .map(|i| CandidateSet {
                claim_id: format!("c{i}"),
                candidates: (0..6).map(|j| format!("d{j}")).collect(),
                labels: vec![0, 1, 0, 0, 1, 0],
                teacher_logits: None,
            })
            .collect();
        let scores: ScoreMap = sets
            .iter()
            .map(|s| {
                (s.claim_id.clone(), s.labels.iter().map(|&l| l as f64).collect::<Vec<f64>>())
            })
            .collect();
        let report = evaluate(&sets, &scores).unwrap();
        assert_eq!(report.r_at_1, 50.0); // 1 of 2 positives can sit at rank 1
        assert_eq!(report.recall_micro_3, 100.0);
        assert_eq!(report.recall_macro_5, 100.0);
        assert_eq!(report.dcg, 100.0);
        assert_eq!(report.claims, 4);
    }
}
