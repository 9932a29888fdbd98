//! Recall of ranked answers against ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TopkMode;
use crate::mcts::{RankedAnswer, SearchResult};
use crate::model::ProblemInstance;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("no results to evaluate")]
    NoResults,
    #[error("results and instances do not match: {0}")]
    IdMismatch(String),
}

/// Number of answers kept for an instance with `gt_count` true targets.
pub fn topk_size(gt_count: usize, mode: TopkMode) -> usize {
    match mode {
        TopkMode::Gt => gt_count,
        TopkMode::GtPlus3 => gt_count + 3,
    }
}

/// The first K ranked proteins; fewer when the ranking is shorter.
pub fn topk_select(ranked: &[RankedAnswer], gt_count: usize, mode: TopkMode) -> BTreeSet<String> {
    ranked
        .iter()
        .take(topk_size(gt_count, mode))
        .map(|a| a.protein_id.clone())
        .collect()
}

pub fn recall(
    predicted: &BTreeSet<String>,
    ground_truth: &BTreeSet<String>,
) -> Result<f64, EvalError> {
    if ground_truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let hits = predicted.intersection(ground_truth).count();
    Ok(hits as f64 / ground_truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: String,
    pub gt_size: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub hits: usize,
    pub recall: f64,
    pub tokens: u64,
    pub rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub topk_mode: TopkMode,
    pub instances: usize,
    pub mean_recall: f64,
    pub total_tokens: u64,
    pub rollouts: usize,
    pub rows: Vec<InstanceRow>,
}

impl Report {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Recall per instance and its mean. Every instance needs exactly one result
/// and every result an instance, matched by query molecule id.
pub fn evaluate_run(
    results: &[SearchResult],
    instances: &[ProblemInstance],
    mode: TopkMode,
) -> Result<Report, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoResults);
    }
    let mut by_id: BTreeMap<&str, &SearchResult> = BTreeMap::new();
    for r in results {
        if by_id.insert(&r.query_molecule_id, r).is_some() {
            return Err(EvalError::IdMismatch(format!(
                "duplicate result for {}",
                r.query_molecule_id
            )));
        }
    }
    let mut rows = Vec::with_capacity(instances.len());
    let mut seen = BTreeSet::new();
    for inst in instances {
        let id = inst.query_molecule_id.as_str();
        if !seen.insert(id) {
            return Err(EvalError::IdMismatch(format!("duplicate instance {id}")));
        }
        let r = by_id
            .get(id)
            .ok_or_else(|| EvalError::IdMismatch(format!("no result for instance {id}")))?;
        let gt = &inst.ground_truth_protein_ids;
        let predicted = topk_select(&r.ranked_answers, gt.len(), mode);
        rows.push(InstanceRow {
            instance_id: id.to_string(),
            gt_size: gt.len(),
            k: topk_size(gt.len(), mode),
            hits: predicted.intersection(gt).count(),
            recall: recall(&predicted, gt)?,
            tokens: r.total_tokens,
            rollouts: r.rollout_outcomes.len(),
        });
    }
    if let Some(extra) = by_id.keys().find(|k| !seen.contains(*k)) {
        return Err(EvalError::IdMismatch(format!(
            "result {extra} has no instance"
        )));
    }
    let mean_recall = rows.iter().map(|r| r.recall).sum::<f64>() / rows.len() as f64;
    Ok(Report {
        topk_mode: mode,
        instances: rows.len(),
        mean_recall,
        total_tokens: rows.iter().map(|r| r.tokens).sum(),
        rollouts: rows.iter().map(|r| r.rollouts).sum(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn ranked(xs: &[&str]) -> Vec<RankedAnswer> {
        xs.iter()
            .enumerate()
            .map(|(i, p)| RankedAnswer {
                protein_id: p.to_string(),
                aggregate_score: (xs.len() - i) as f64,
                support_count: 1,
            })
            .collect()
    }

    fn result(q: &str, answers: &[&str]) -> SearchResult {
        SearchResult {
            query_molecule_id: q.into(),
            method: "mcts".into(),
            rollouts_requested: 2,
            rollout_outcomes: vec![],
            ranked_answers: ranked(answers),
            total_tokens: 10,
            prompt_tokens: 6,
            completion_tokens: 4,
            agent_calls: 3,
            aborted: None,
        }
    }

    fn instance(q: &str, gt: &[&str]) -> ProblemInstance {
        ProblemInstance {
            query_molecule_id: q.into(),
            candidate_molecule_ids: ids(&["M"]),
            candidate_protein_ids: ids(&["A", "B", "C", "D", "E"]),
            ground_truth_protein_ids: ids(gt),
        }
    }

    #[test]
    fn prefix_and_clamp() {
        let r = ranked(&["A", "B", "C", "D", "E"]);
        assert_eq!(topk_select(&r, 2, TopkMode::Gt), ids(&["A", "B"]));
        assert_eq!(topk_select(&r, 4, TopkMode::GtPlus3).len(), 5);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall(&ids(&["A", "B", "C"]), &ids(&["A", "B"])), Ok(1.0));
        assert_eq!(recall(&ids(&["X"]), &ids(&["A"])), Ok(0.0));
        assert_eq!(
            recall(&ids(&["A", "C", "X"]), &ids(&["A", "B", "C", "D"])),
            Ok(0.5)
        );
        assert_eq!(
            recall(&ids(&["A"]), &ids(&[])),
            Err(EvalError::EmptyGroundTruth)
        );
    }

    #[test]
    fn mean_over_instances() {
        let report = evaluate_run(
            &[result("Q1", &["A"]), result("Q2", &["B"])],
            &[instance("Q1", &["A"]), instance("Q2", &["A"])],
            TopkMode::Gt,
        )
        .unwrap();
        assert_eq!(report.mean_recall, 0.5);
        assert_eq!(report.total_tokens, 20);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next(),
            Some("instance_id,gt_size,K,hits,recall,tokens,rollouts")
        );
        assert_eq!(text.lines().nth(1), Some("Q1,1,1,1,1.0,10,0"));
    }

    #[test]
    fn mismatches_are_errors() {
        assert_eq!(
            evaluate_run(&[], &[instance("Q1", &["A"])], TopkMode::Gt),
            Err(EvalError::NoResults)
        );
        assert!(matches!(
            evaluate_run(
                &[result("Q2", &["A"])],
                &[instance("Q1", &["A"])],
                TopkMode::Gt
            ),
            Err(EvalError::IdMismatch(_))
        ));
        assert!(matches!(
            evaluate_run(
                &[result("Q1", &["A"]), result("Q2", &["A"])],
                &[instance("Q1", &["A"])],
                TopkMode::Gt
            ),
            Err(EvalError::IdMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn wider_selection_never_lowers_recall(
            order in Just(vec!["A", "B", "C", "D", "E", "F"]).prop_shuffle(),
            take in 1usize..6,
            gt in proptest::sample::subsequence(vec!["A", "B", "C", "D", "E", "F"], 1..5),
        ) {
            let r = ranked(&order[..take]);
            let gt = ids(&gt);
            let narrow = recall(&topk_select(&r, gt.len(), TopkMode::Gt), &gt).unwrap();
            let wide = recall(&topk_select(&r, gt.len(), TopkMode::GtPlus3), &gt).unwrap();
            prop_assert!((0.0..=1.0).contains(&narrow));
            prop_assert!(wide >= narrow);
        }
    }
}
