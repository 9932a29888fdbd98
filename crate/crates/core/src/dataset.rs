//! Builds problem instances from a raw interaction corpus.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, MAX_CANDIDATE_MOLECULES, MAX_GROUND_TRUTH, MAX_GROUND_TRUTH_PERCENT, MIN_GROUND_TRUTH,
};
use crate::model::{BaselineInstance, ProblemInstance};
use crate::similarity::{candidate_proteins, retrieve_candidates};

/// Inclusive bounds applied while building instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderRules {
    pub min_query_proteins: usize,
    pub max_query_proteins: usize,
    pub min_candidate_proteins: usize,
    pub max_candidate_proteins: usize,
    pub max_candidate_molecules: usize,
    pub min_ground_truth: usize,
    pub max_ground_truth: usize,
    /// Integer percentage of the candidate proteins the ground truth may cover.
    pub max_ground_truth_percent: usize,
}

impl Default for BuilderRules {
    fn default() -> Self {
        Self {
            min_query_proteins: 2,
            max_query_proteins: 10,
            min_candidate_proteins: 2,
            max_candidate_proteins: 4,
            max_candidate_molecules: MAX_CANDIDATE_MOLECULES,
            min_ground_truth: MIN_GROUND_TRUTH,
            max_ground_truth: MAX_GROUND_TRUTH,
            max_ground_truth_percent: MAX_GROUND_TRUTH_PERCENT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    QueryProteinCount,
    NoCandidates,
    TooManyCandidates,
    GroundTruthSize,
    GroundTruthShare,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub queries: usize,
    pub accepted: usize,
    /// Every rejected query counts once, under the first rule it broke.
    pub rejected: BTreeMap<Rejection, usize>,
    /// Retrieved candidates removed for their protein count, over accepted and rejected queries.
    pub dropped_candidates: usize,
}

impl BuildReport {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Instance for one query molecule, or the first rule it breaks.
/// Also returns how many retrieved candidates were dropped.
pub fn build_instance(
    query_id: &str,
    corpus: &Corpus,
    rules: &BuilderRules,
) -> (Result<ProblemInstance, Rejection>, usize) {
    let in_range = |n: usize, lo: usize, hi: usize| (lo..=hi).contains(&n);
    let query_proteins = corpus.proteins_of(query_id);
    if !in_range(
        query_proteins.len(),
        rules.min_query_proteins,
        rules.max_query_proteins,
    ) {
        return (Err(Rejection::QueryProteinCount), 0);
    }
    let query = corpus.molecule(query_id).expect("query from corpus");
    let retrieved = retrieve_candidates(query, corpus);
    let n_retrieved = retrieved.len();
    let candidates: BTreeSet<String> = retrieved
        .into_iter()
        .filter(|m| {
            in_range(
                corpus.proteins_of(m).len(),
                rules.min_candidate_proteins,
                rules.max_candidate_proteins,
            )
        })
        .collect();
    let dropped = n_retrieved - candidates.len();
    if candidates.is_empty() {
        return (Err(Rejection::NoCandidates), dropped);
    }
    if candidates.len() > rules.max_candidate_molecules {
        return (Err(Rejection::TooManyCandidates), dropped);
    }
    let pool =
        candidate_proteins(candidates.iter(), corpus).expect("candidates come from the corpus");
    let ground_truth: BTreeSet<String> = pool.intersection(query_proteins).cloned().collect();
    let gt = ground_truth.len();
    if !in_range(gt, rules.min_ground_truth, rules.max_ground_truth) {
        return (Err(Rejection::GroundTruthSize), dropped);
    }
    if gt * 100 > rules.max_ground_truth_percent * pool.len() {
        return (Err(Rejection::GroundTruthShare), dropped);
    }
    (
        Ok(ProblemInstance {
            query_molecule_id: query_id.to_string(),
            candidate_molecule_ids: candidates,
            candidate_protein_ids: pool,
            ground_truth_protein_ids: ground_truth,
        }),
        dropped,
    )
}

/// Try every corpus molecule as a query, in id order.
pub fn build_instances(
    corpus: &Corpus,
    rules: &BuilderRules,
) -> (Vec<ProblemInstance>, BuildReport) {
    let mut ids: Vec<&str> = corpus.molecules().iter().map(|m| m.id.as_str()).collect();
    ids.sort_unstable();
    let mut report = BuildReport {
        queries: ids.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for id in ids {
        let (outcome, dropped) = build_instance(id, corpus, rules);
        report.dropped_candidates += dropped;
        match outcome {
            Ok(instance) => {
                report.accepted += 1;
                out.push(instance);
            }
            Err(rule) => *report.rejected.entry(rule).or_default() += 1,
        }
    }
    (out, report)
}

pub fn build_baseline_dataset(instances: &[ProblemInstance]) -> Vec<BaselineInstance> {
    instances
        .iter()
        .map(|i| BaselineInstance {
            query_molecule_id: i.query_molecule_id.clone(),
            candidate_protein_ids: i.candidate_protein_ids.clone(),
            ground_truth_protein_ids: i.ground_truth_protein_ids.clone(),
        })
        .collect()
}
