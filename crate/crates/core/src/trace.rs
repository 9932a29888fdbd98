//! Per-rollout audit records, one JSON object per line.

use serde::{Deserialize, Serialize};

use crate::pipeline::{Action, Expansion, Fallback};
use crate::reward::{RewardBreakdown, RewardEvaluation};
use crate::runtime::TokenUsage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Action(ActionRecord),
    Reward(RewardRecord),
}

impl TraceRecord {
    pub fn usage(&self) -> TokenUsage {
        let (prompt_tokens, completion_tokens) = match self {
            TraceRecord::Action(a) => (a.prompt_tokens, a.completion_tokens),
            TraceRecord::Reward(r) => (r.prompt_tokens, r.completion_tokens),
        };
        TokenUsage {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn agent_calls(&self) -> usize {
        match self {
            TraceRecord::Action(a) => a.agent_calls,
            TraceRecord::Reward(r) => r.agent_calls,
        }
    }
}

/// One expansion: the prompt sent, what came back, and the children made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub rollout: usize,
    /// Node whose children were created.
    pub node_id: usize,
    pub action: Action,
    pub template_id: Option<String>,
    pub prompt_hash: Option<String>,
    pub raw_responses: Vec<String>,
    pub parsed: Vec<serde_json::Value>,
    pub fallbacks: Vec<Fallback>,
    pub children: Vec<usize>,
    pub agent_calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ActionRecord {
    pub fn from_expansion(
        rollout: usize,
        node_id: usize,
        e: &Expansion,
        children: Vec<usize>,
    ) -> Self {
        Self {
            rollout,
            node_id,
            action: e.action,
            template_id: e.template_id.map(str::to_string),
            prompt_hash: e.prompt_hash.clone(),
            raw_responses: e.raw_responses.clone(),
            parsed: e.children.iter().map(|c| c.parsed.clone()).collect(),
            fallbacks: e.children.iter().filter_map(|c| c.fallback).collect(),
            children,
            agent_calls: e.agent_calls,
            prompt_tokens: e.usage.prompt_tokens,
            completion_tokens: e.usage.completion_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub rollout: usize,
    /// Terminal node the reward was computed at.
    pub node_id: usize,
    pub breakdown: RewardBreakdown,
    pub relative_prompt_hash: String,
    pub absolute_prompt_hash: Option<String>,
    pub relative_responses: Vec<String>,
    pub absolute_responses: Vec<String>,
    pub fallbacks: Vec<Fallback>,
    pub agent_calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl RewardRecord {
    pub fn new(rollout: usize, node_id: usize, e: RewardEvaluation) -> Self {
        let fallbacks = if e.breakdown.no_parseable_selection {
            vec![Fallback::NoParseableSelection]
        } else {
            vec![]
        };
        Self {
            rollout,
            node_id,
            breakdown: e.breakdown,
            relative_prompt_hash: e.relative_prompt_hash,
            absolute_prompt_hash: e.absolute_prompt_hash,
            relative_responses: e.relative_responses,
            absolute_responses: e.absolute_responses,
            fallbacks,
            agent_calls: e.agent_calls,
            prompt_tokens: e.usage.prompt_tokens,
            completion_tokens: e.usage.completion_tokens,
        }
    }
}
