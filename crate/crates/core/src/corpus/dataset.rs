//! Candidate-set assembly, mining coverage and claim splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mine_candidates, Claim, CorpusError, TfidfIndex};

/// One claim with exactly C candidate documents and binary labels.
/// `teacher_logits`, when present, aligns with `candidates`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub claim_id: String,
    pub candidates: Vec<String>,
    pub labels: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub teacher_logits: Option<Vec<f64>>,
}

impl CandidateSet {
    pub fn positives(&self) -> usize {
        self.labels.iter().map(|&l| l as usize).sum()
    }
}

/// Builds one CandidateSet per claim.
///
/// Construction per claim: rank the whole corpus by TF-IDF cosine (ties by
/// ascending id). Gold positives always enter the set; if a claim has more
/// than C positives only the C most-similar are kept. Positives inside the
/// mined top-C window stay at their mined positions, the remaining slots are
/// filled by the highest-ranked non-gold documents in mined order, and
/// positives the miner missed are appended at the end.
pub fn assemble_dataset(
    claims: &[Claim],
    index: &TfidfIndex,
    c: usize,
) -> Result<Vec<CandidateSet>, CorpusError> {
    if c == 0 || index.doc_count() < c {
        return Err(CorpusError::InsufficientCorpus { corpus: index.doc_count(), c });
    }
    claims.iter().map(|claim| assemble_one(claim, index, c)).collect()
}

fn assemble_one(claim: &Claim, index: &TfidfIndex, c: usize) -> Result<CandidateSet, CorpusError> {
    if claim.relevant_doc_ids.is_empty() {
        return Err(CorpusError::NoPositives { claim_id: claim.id.clone() });
    }
    let ranking = mine_candidates(claim, index, index.doc_count())?;
    let is_gold = |id: &str| claim.relevant_doc_ids.iter().any(|g| g == id);
    for gold in &claim.relevant_doc_ids {
        if !ranking.iter().any(|(id, _)| id == gold) {
            return Err(CorpusError::UnknownRelevantDoc {
                claim_id: claim.id.clone(),
                doc_id: gold.clone(),
            });
        }
    }

    // Positives in ranking order; truncate to the C most similar if needed.
    let mut positives: Vec<&str> =
        ranking.iter().map(|(id, _)| id.as_str()).filter(|id| is_gold(id)).collect();
    positives.truncate(c);
    let negatives_needed = c - positives.len();

    let window = &ranking[..c];
    let mut candidates: Vec<String> = Vec::with_capacity(c);
    let mut negatives_taken = 0;
    for (id, _) in window {
        if positives.contains(&id.as_str()) {
            candidates.push(id.clone());
        } else if negatives_taken < negatives_needed {
            candidates.push(id.clone());
            negatives_taken += 1;
        }
    }
    // Positives the top-C window missed go at the end, in ranking order.
    for id in &positives {
        if !window.iter().any(|(w, _)| w == id) {
            candidates.push((*id).to_owned());
        }
    }
    debug_assert_eq!(candidates.len(), c);

    let labels: Vec<u8> = candidates.iter().map(|id| u8::from(is_gold(id))).collect();
    Ok(CandidateSet { claim_id: claim.id.clone(), candidates, labels, teacher_logits: None })
}

/// For each C, the percentage of claims whose gold positives all fall inside
/// the mined top-C ranking. Nondecreasing in C.
pub fn coverage_stats(
    claims: &[Claim],
    index: &TfidfIndex,
    c_values: &[usize],
) -> Result<Vec<(usize, f64)>, CorpusError> {
    let mut covered = vec![0usize; c_values.len()];
    for claim in claims {
        let ranking = mine_candidates(claim, index, index.doc_count())?;
        // Worst (deepest) rank over this claim's gold documents.
        let mut deepest = 0usize;
        for gold in &claim.relevant_doc_ids {
            match ranking.iter().position(|(id, _)| id == gold) {
                Some(pos) => deepest = deepest.max(pos + 1),
                None => {
                    return Err(CorpusError::UnknownRelevantDoc {
                        claim_id: claim.id.clone(),
                        doc_id: gold.clone(),
                    })
                }
            }
        }
        for (slot, &c) in c_values.iter().enumerate() {
            if deepest <= c {
                covered[slot] += 1;
            }
        }
    }
    let n = claims.len().max(1) as f64;
    Ok(c_values
        .iter()
        .zip(covered)
        .map(|(&c, hits)| (c, 100.0 * hits as f64 / n))
        .collect())
}

/// Target split sizes. [`SplitSpec::paper_ratio`] scales the reference
/// 145000/20000/10000 proportions down to `n` claims.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn paper_ratio(n: usize) -> Self {
        let train = n * 145_000 / 175_000;
        let dev = n * 20_000 / 175_000;
        let test = n - train - dev;
        SplitSpec { train, dev, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

/// Claim-id partitions produced by [`split_claims`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic seeded partition of the claims into train/dev/test.
pub fn split_claims(claims: &[Claim], spec: &SplitSpec, seed: u64) -> Result<Split, CorpusError> {
    if spec.total() > claims.len() {
        return Err(CorpusError::Oversubscribed {
            requested: spec.total(),
            available: claims.len(),
        });
    }
    let mut ids: Vec<String> = claims.iter().map(|c| c.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let dev_start = spec.train;
    let test_start = spec.train + spec.dev;
    Ok(Split {
        train: ids[..spec.train].to_vec(),
        dev: ids[dev_start..test_start].to_vec(),
        test: ids[test_start..test_start + spec.test].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_tfidf_index, Document};

    fn doc(id: &str, text: &str) -> Document {
        Document { id: id.into(), text: text.into(), tokens: Vec::new() }
    }

    fn claim(id: &str, text: &str, gold: &[&str]) -> Claim {
        Claim {
            id: id.into(),
            text: text.into(),
            relevant_doc_ids: gold.iter().map(|s| s.to_string()).collect(),
            tokens: Vec::new(),
        }
    }

    fn toy_index() -> TfidfIndex {
        build_tfidf_index(&[
            doc("d1", "solar power panels energy grid"),
            doc("d2", "solar power plants energy output"),
            doc("d3", "solar eclipse power outage report"),
            doc("d4", "wind turbines produce energy"),
            doc("d5", "ocean currents and tides"),
        ])
        .unwrap()
    }

    #[test]
    fn forced_single_candidate_is_the_positive() {
        let docs = vec![doc("a", "alpha"), doc("b", "beta")];
        let index = build_tfidf_index(&docs).unwrap();
        let claims = vec![claim("c1", "beta", &["b"])];
        let sets = assemble_dataset(&claims, &index, 1).unwrap();
        assert_eq!(sets[0].candidates, vec!["b"]);
        assert_eq!(sets[0].labels, vec![1]);
    }

    #[test]
    fn gold_ranked_third_sits_at_position_three() {
        // Claim wording overlaps d1/d2 more strongly than the gold d3.
        let index = toy_index();
        let claims = vec![claim("c1", "solar power energy", &["d3"])];
        let ranked = mine_candidates(&claims[0], &index, 5).unwrap();
        let gold_rank = ranked.iter().position(|(id, _)| id == "d3").unwrap();
        assert_eq!(gold_rank, 2, "fixture should rank gold third, got {ranked:?}");

        let sets = assemble_dataset(&claims, &index, 3).unwrap();
        let expected: Vec<String> = ranked[..3].iter().map(|(id, _)| id.clone()).collect();
        assert_eq!(sets[0].candidates, expected);
        assert_eq!(sets[0].labels, vec![0, 0, 1]);
    }

    #[test]
    fn two_positives_fill_with_negatives_no_duplicates() {
        let index = toy_index();
        let claims = vec![claim("c1", "solar power", &["d1", "d5"])];
        let sets = assemble_dataset(&claims, &index, 5).unwrap();
        let set = &sets[0];
        assert_eq!(set.candidates.len(), 5);
        assert_eq!(set.positives(), 2);
        let mut unique = set.candidates.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 5);
        // Both positives are labeled where they landed.
        for (cand, &label) in set.candidates.iter().zip(&set.labels) {
            assert_eq!(label == 1, cand == "d1" || cand == "d5");
        }
    }

    #[test]
    fn unmined_positive_is_appended_at_the_end() {
        let index = toy_index();
        // d5 shares no vocabulary with the claim: it cannot enter the top-2
        // window on merit, so it is appended.
        let claims = vec![claim("c1", "solar power energy", &["d5"])];
        let sets = assemble_dataset(&claims, &index, 2).unwrap();
        assert_eq!(sets[0].candidates.last().unwrap(), "d5");
        assert_eq!(sets[0].labels, vec![0, 1]);
    }

    #[test]
    fn corpus_smaller_than_c_is_an_error() {
        let docs = vec![doc("a", "alpha")];
        let index = build_tfidf_index(&docs).unwrap();
        let claims = vec![claim("c1", "alpha", &["a"])];
        assert!(matches!(
            assemble_dataset(&claims, &index, 2),
            Err(CorpusError::InsufficientCorpus { .. })
        ));
    }

    #[test]
    fn coverage_is_nondecreasing_and_saturates() {
        let index = toy_index();
        let claims = vec![
            claim("c1", "solar power energy", &["d3"]),
            claim("c2", "wind energy", &["d4"]),
            claim("c3", "ocean tides", &["d5"]),
        ];
        let stats = coverage_stats(&claims, &index, &[1, 2, 3, 4, 5]).unwrap();
        for pair in stats.windows(2) {
            assert!(pair[1].1 >= pair[0].1);
        }
        assert_eq!(stats.last().unwrap().1, 100.0);
    }

    #[test]
    fn paper_ratio_on_175_claims_is_145_20_10() {
        let spec = SplitSpec::paper_ratio(175);
        assert_eq!((spec.train, spec.dev, spec.test), (145, 20, 10));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let claims: Vec<Claim> =
            (0..30).map(|i| claim(&format!("c{i}"), "text", &["d"])).collect();
        let spec = SplitSpec { train: 20, dev: 6, test: 4 };
        let a = split_claims(&claims, &spec, 7).unwrap();
        let b = split_claims(&claims, &spec, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.test, b.test);

        let mut all: Vec<&String> = a.train.iter().chain(&a.dev).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let claims: Vec<Claim> = (0..5).map(|i| claim(&format!("c{i}"), "t", &["d"])).collect();
        let spec = SplitSpec { train: 5, dev: 0, test: 0 };
        let split = split_claims(&claims, &spec, 0).unwrap();
        assert_eq!(split.train.len(), 5);
        assert!(split.dev.is_empty() && split.test.is_empty());
    }

    #[test]
    fn oversubscribed_split_is_an_error() {
        let claims: Vec<Claim> = (0..3).map(|i| claim(&format!("c{i}"), "t", &["d"])).collect();
        let spec = SplitSpec { train: 3, dev: 1, test: 0 };
        assert!(matches!(
            split_claims(&claims, &spec, 0),
            Err(CorpusError::Oversubscribed { .. })
        ));
    }
}
