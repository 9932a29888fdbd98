//! Exact similarity search used to seed every search tree: top-k retrieval
//! under Tanimoto and cosine similarity, merged into one candidate pool.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{Fingerprint, Molecule};

/// Hits kept per metric when building the candidate pool.
pub const RETRIEVAL_DEPTH: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("tanimoto is undefined for two empty fingerprints")]
    BothEmpty,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("molecule has no embedding")]
    MissingEmbedding,
    #[error("unknown molecule id {0:?}")]
    UnknownMolecule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tanimoto,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub molecule_id: String,
    pub score: f64,
    pub metric: Metric,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopK {
    pub hits: Vec<RankedHit>,
    /// Pairs that could not be scored (missing embedding, zero norm, ...).
    pub skipped: usize,
}

pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, SimilarityError> {
    if a.n_bits() != b.n_bits() {
        return Err(SimilarityError::WidthMismatch(a.n_bits(), b.n_bits()));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words().iter().zip(b.words()) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Err(SimilarityError::BothEmpty);
    }
    Ok(inter as f64 / union as f64)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn score(query: &Molecule, other: &Molecule, metric: Metric) -> Result<f64, SimilarityError> {
    match metric {
        Metric::Tanimoto => tanimoto(&query.fingerprint, &other.fingerprint),
        Metric::Cosine => match (&query.embedding, &other.embedding) {
            (Some(a), Some(b)) => cosine(a, b),
            _ => Err(SimilarityError::MissingEmbedding),
        },
    }
}

/// The `k` molecules most similar to `query`, excluding the query itself.
/// Ordered by score descending, ties by id ascending.
pub fn top_k(query: &Molecule, corpus: &Corpus, metric: Metric, k: usize) -> TopK {
    let mut skipped = 0;
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(corpus.molecules().len());
    for m in corpus.molecules() {
        if m.id == query.id {
            continue;
        }
        match score(query, m, metric) {
            Ok(s) => scored.push((s, &m.id)),
            Err(_) => skipped += 1,
        }
    }
    let by_rank = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
    if scored.len() > k && k > 0 {
        scored.select_nth_unstable_by(k - 1, by_rank);
    }
    scored.truncate(k);
    scored.sort_unstable_by(by_rank);
    if skipped > 0 {
        log::debug!(
            "{metric:?} top-k for {}: skipped {skipped} unscorable pairs",
            query.id
        );
    }
    TopK {
        hits: scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, id))| RankedHit {
                molecule_id: id.to_string(),
                score,
                metric,
                rank: i + 1,
            })
            .collect(),
        skipped,
    }
}

/// Union of the Tanimoto and cosine top-10 lists.
pub fn retrieve_candidates(query: &Molecule, corpus: &Corpus) -> BTreeSet<String> {
    [Metric::Tanimoto, Metric::Cosine]
        .into_iter()
        .flat_map(|metric| top_k(query, corpus, metric, RETRIEVAL_DEPTH).hits)
        .map(|h| h.molecule_id)
        .collect()
}

/// Proteins with a positive interaction with any of `candidates`.
pub fn candidate_proteins<'a, I>(
    candidates: I,
    corpus: &Corpus,
) -> Result<BTreeSet<String>, SimilarityError>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut out = BTreeSet::new();
    for id in candidates {
        if corpus.molecule(id).is_none() {
            return Err(SimilarityError::UnknownMolecule(id.clone()));
        }
        out.extend(corpus.proteins_of(id).iter().cloned());
    }
    Ok(out)
}

/// One line of the ranked-hit debug output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub query_id: String,
    pub metric: Metric,
    pub rank: usize,
    pub molecule_id: String,
    pub score: f64,
}

pub fn hit_records(query: &Molecule, corpus: &Corpus) -> Vec<HitRecord> {
    [Metric::Tanimoto, Metric::Cosine]
        .into_iter()
        .flat_map(|metric| top_k(query, corpus, metric, RETRIEVAL_DEPTH).hits)
        .map(|h| HitRecord {
            query_id: query.id.clone(),
            metric: h.metric,
            rank: h.rank,
            molecule_id: h.molecule_id,
            score: h.score,
        })
        .collect()
}
