//! One-prompt target ranking without search, as a point of comparison.

use serde::{Deserialize, Serialize};

use crate::mcts::{RankedAnswer, SearchResult};
use crate::model::BaselineInstance;
use crate::pipeline::{Action, AgentEnv, PipelineError};
use crate::runtime::{parse_id_list, sample, TokenUsage};
use crate::trace::{ActionRecord, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleShotMode {
    /// SMILES and the candidate list only.
    Baseline,
    /// Adds molecule profiles, pockets and literature.
    Enhanced,
}

impl SingleShotMode {
    pub fn name(self) -> &'static str {
        match self {
            SingleShotMode::Baseline => "baseline",
            SingleShotMode::Enhanced => "enhanced",
        }
    }
}

/// Ask once for a ranked list of proteins from the instance's candidates.
/// Parsed ids keep their order and score `(m - i) / m` for position `i` of `m`.
pub fn run_single_shot(
    instance: &BaselineInstance,
    env: &AgentEnv<'_>,
    mode: SingleShotMode,
) -> Result<(SearchResult, Vec<TraceRecord>), PipelineError> {
    let prompt = env.single_shot_prompt(
        &instance.query_molecule_id,
        &instance.candidate_protein_ids,
        mode == SingleShotMode::Enhanced,
    )?;
    let response = sample(env.backend, &prompt.request(env.config, 1))?;
    let text = &response.texts[0];
    let ids = parse_id_list(text, &instance.candidate_protein_ids);
    let m = ids.len();
    let ranked_answers: Vec<RankedAnswer> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| RankedAnswer {
            protein_id: id.clone(),
            aggregate_score: (m - i) as f64 / m as f64,
            support_count: 1,
        })
        .collect();
    let usage = TokenUsage::from(&response);
    let record = ActionRecord {
        rollout: 0,
        node_id: 0,
        action: Action::ProteinSelection,
        template_id: Some(prompt.template_id.to_string()),
        prompt_hash: Some(prompt.hash()),
        raw_responses: response.texts.clone(),
        parsed: vec![serde_json::json!(ids)],
        fallbacks: vec![],
        children: vec![],
        agent_calls: 1,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
    };
    let result = SearchResult {
        query_molecule_id: instance.query_molecule_id.clone(),
        method: mode.name().into(),
        rollouts_requested: 0,
        rollout_outcomes: vec![],
        ranked_answers,
        total_tokens: usage.total(),
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        agent_calls: 1,
        aborted: None,
    };
    Ok((result, vec![TraceRecord::Action(record)]))
}
