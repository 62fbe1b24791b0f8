//! Exact TF-IDF cosine retrieval over unigrams and bigrams.
//!
//! Weighting: raw term frequency times `idf(term) = ln((1+D)/(1+df)) + 1`
//! with `D` the corpus size. Scoring and ranking are exact; ties break by
//! ascending document id.

use std::collections::HashMap;

use super::{tokenize, Claim, CorpusError, Document};

/// Sparse TF-IDF vectors for every corpus document.
#[derive(Debug, Clone)]
pub struct TfidfIndex {
    term_ids: HashMap<Term, usize>,
    idf: Vec<f64>,
    docs: Vec<DocVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Term {
    Uni(String),
    Bi(String, String),
}

#[derive(Debug, Clone)]
struct DocVector {
    id: String,
    /// (term id, tf*idf), sorted by term id.
    weights: Vec<(usize, f64)>,
    norm: f64,
}

fn terms_of(text: &str) -> Vec<Term> {
    let tokens = tokenize(text);
    let mut terms = Vec::with_capacity(tokens.len() * 2);
    for w in tokens.windows(2) {
        terms.push(Term::Bi(w[0].clone(), w[1].clone()));
    }
    for t in tokens {
        terms.push(Term::Uni(t));
    }
    terms
}

/// Accumulates raw term counts into a sparted-by-term-id sparse vector.
fn count_terms(terms: Vec<Term>, term_ids: &HashMap<Term, usize>) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for term in terms {
        if let Some(&id) = term_ids.get(&term) {
            *counts.entry(id).or_insert(0.0) += 1.0;
        }
    }
    let mut out: Vec<(usize, f64)> = counts.into_iter().collect();
    out.sort_unstable_by_key(|&(id, _)| id);
    out
}

fn weigh(counts: &mut [(usize, f64)], idf: &[f64]) -> f64 {
    let mut norm_sq = 0.0;
    for (id, w) in counts.iter_mut() {
        *w *= idf[*id];
        norm_sq += *w * *w;
    }
    norm_sq.sqrt()
}

/// Dot product of two term-id-sorted sparse vectors.
fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut dot = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Builds the index over unigram and bigram terms of every document.
pub fn build_tfidf_index(docs: &[Document]) -> Result<TfidfIndex, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    // Assign term ids in first-seen order and count document frequencies.
    let mut term_ids: HashMap<Term, usize> = HashMap::new();
    let mut df: Vec<usize> = Vec::new();
    let mut per_doc_terms: Vec<Vec<Term>> = Vec::with_capacity(docs.len());
    for doc in docs {
        let terms = terms_of(&doc.text);
        let mut seen: Vec<usize> = Vec::new();
        for term in &terms {
            let next = term_ids.len();
            let id = *term_ids.entry(term.clone()).or_insert(next);
            if id == df.len() {
                df.push(0);
            }
            if !seen.contains(&id) {
                seen.push(id);
                df[id] += 1;
            }
        }
        per_doc_terms.push(terms);
    }
    if term_ids.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let d = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&n| ((1.0 + d) / (1.0 + n as f64)).ln() + 1.0).collect();

    let mut vectors = Vec::with_capacity(docs.len());
    for (doc, terms) in docs.iter().zip(per_doc_terms) {
        let mut weights = count_terms(terms, &term_ids);
        let norm = weigh(&mut weights, &idf);
        vectors.push(DocVector { id: doc.id.clone(), weights, norm });
    }
    Ok(TfidfIndex { term_ids, idf, docs: vectors })
}

impl TfidfIndex {
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    /// TF-IDF vector of arbitrary text over the indexed term space.
    /// Terms absent from the corpus are dropped.
    fn vectorize(&self, text: &str) -> (Vec<(usize, f64)>, f64) {
        let mut weights = count_terms(terms_of(text), &self.term_ids);
        let norm = weigh(&mut weights, &self.idf);
        (weights, norm)
    }

    /// Cosine similarity between two indexed documents (by position).
    pub fn doc_cosine(&self, a: usize, b: usize) -> f64 {
        let (va, vb) = (&self.docs[a], &self.docs[b]);
        if va.norm == 0.0 || vb.norm == 0.0 {
            return 0.0;
        }
        sparse_dot(&va.weights, &vb.weights) / (va.norm * vb.norm)
    }

    /// Cosine of `text` against every document, in corpus order.
    pub fn scores_for_text(&self, text: &str) -> Vec<f64> {
        let (query, qnorm) = self.vectorize(text);
        self.docs
            .iter()
            .map(|doc| {
                if qnorm == 0.0 || doc.norm == 0.0 {
                    0.0
                } else {
                    sparse_dot(&query, &doc.weights) / (qnorm * doc.norm)
                }
            })
            .collect()
    }

    pub fn doc_id(&self, position: usize) -> &str {
        &self.docs[position].id
    }
}

/// Ranks the `k` nearest documents to a claim by TF-IDF cosine, exactly.
/// Ties (including the all-zero-score case of a claim with no indexed
/// vocabulary) break by ascending document id.
pub fn mine_candidates(
    claim: &Claim,
    index: &TfidfIndex,
    k: usize,
) -> Result<Vec<(String, f64)>, CorpusError> {
    if k > index.doc_count() {
        return Err(CorpusError::KTooLarge { k, corpus: index.doc_count() });
    }
    let scores = index.scores_for_text(&claim.text);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| index.docs[a].id.cmp(&index.docs[b].id))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (index.docs[i].id.clone(), scores[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document { id: id.into(), text: text.into(), tokens: Vec::new() }
    }

    fn claim(text: &str) -> Claim {
        Claim {
            id: "c".into(),
            text: text.into(),
            relevant_doc_ids: vec!["d0".into()],
            tokens: Vec::new(),
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let docs = vec![doc("d0", "alpha beta gamma alpha")];
        let index = build_tfidf_index(&docs).unwrap();
        assert!((index.doc_cosine(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_documents_are_orthogonal() {
        let docs = vec![doc("d0", "alpha beta"), doc("d1", "gamma delta")];
        let index = build_tfidf_index(&docs).unwrap();
        assert_eq!(index.doc_cosine(0, 1), 0.0);
    }

    #[test]
    fn all_empty_corpus_is_an_error() {
        let docs = vec![doc("d0", ""), doc("d1", "  .  ")];
        assert!(matches!(build_tfidf_index(&docs), Err(CorpusError::EmptyCorpus)));
        assert!(matches!(build_tfidf_index(&[]), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn identical_claim_ranks_its_document_first_with_cosine_one() {
        let docs = vec![
            doc("a", "solar panels convert light"),
            doc("b", "wind turbines convert motion"),
            doc("c", "rivers carry sediment"),
        ];
        let index = build_tfidf_index(&docs).unwrap();
        let ranked = mine_candidates(&claim("wind turbines convert motion"), &index, 3).unwrap();
        assert_eq!(ranked[0].0, "b");
        assert!((ranked[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_claim_falls_back_to_id_order() {
        let docs = vec![doc("z", "alpha"), doc("a", "beta"), doc("m", "gamma")];
        let index = build_tfidf_index(&docs).unwrap();
        let ranked = mine_candidates(&claim("zzz qqq"), &index, 3).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["a", "m", "z"]);
        assert!(ranked.iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn k_larger_than_corpus_is_an_error() {
        let docs = vec![doc("d0", "alpha")];
        let index = build_tfidf_index(&docs).unwrap();
        assert!(matches!(
            mine_candidates(&claim("alpha"), &index, 2),
            Err(CorpusError::KTooLarge { .. })
        ));
    }
}
