//! Terminal rewards: self-consistency of the decision agent (relative),
//! yes/no interaction judgements (absolute), and their combination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RewardMode;
use crate::pipeline::{AgentEnv, PipelineError, Prompt, SearchContext};
use crate::runtime::{parse_id_list, parse_yes_no, sample, TokenUsage, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward input {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Everything that went into one terminal reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub p_star: String,
    pub selection_counts: BTreeMap<String, usize>,
    pub yes_count: usize,
    pub k: usize,
    pub r_relative: f64,
    pub r_absolute: f64,
    pub r_final: f64,
    /// No re-query named a pool protein; `p_star` is the path's selection.
    pub no_parseable_selection: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeOutcome {
    pub p_star: String,
    pub r_relative: f64,
    pub selection_counts: BTreeMap<String, usize>,
    pub fallback: bool,
}

/// Modal selection and its share of the parseable selections. Ties go to
/// the smallest id. With nothing parseable, `path_selection` wins with reward 0.
pub fn relative_from_selections(
    selections: &[Option<String>],
    path_selection: &str,
) -> RelativeOutcome {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in selections.iter().flatten() {
        *counts.entry(s.clone()).or_default() += 1;
    }
    let parsed: usize = counts.values().sum();
    // BTreeMap iterates ids ascending, so the first maximum is the tie winner
    let best = counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (id, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((id, c)),
        })
        .map(|(id, c)| (id.clone(), c));
    match best {
        Some((p_star, c)) => RelativeOutcome {
            p_star,
            r_relative: c as f64 / parsed as f64,
            selection_counts: counts,
            fallback: false,
        },
        None => RelativeOutcome {
            p_star: path_selection.to_string(),
            r_relative: 0.0,
            selection_counts: counts,
            fallback: true,
        },
    }
}

/// Share of affirmative verdicts; indeterminate answers count against.
pub fn absolute_from_verdicts(verdicts: &[Verdict]) -> (f64, usize) {
    if verdicts.is_empty() {
        return (0.0, 0);
    }
    let yes = verdicts.iter().filter(|&&v| v == Verdict::Yes).count();
    (yes as f64 / verdicts.len() as f64, yes)
}

pub fn final_reward(
    r_relative: f64,
    r_absolute: f64,
    mode: RewardMode,
) -> Result<f64, RewardError> {
    for r in [r_relative, r_absolute] {
        if !(0.0..=1.0).contains(&r) {
            return Err(RewardError::OutOfRange(r));
        }
    }
    Ok(match mode {
        RewardMode::Combined => (r_relative + r_absolute) / 2.0,
        RewardMode::RelativeOnly => r_relative,
    })
}

/// Raw material of one reward computation, kept for the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEvaluation {
    pub breakdown: RewardBreakdown,
    pub relative_prompt_hash: String,
    pub absolute_prompt_hash: Option<String>,
    pub relative_responses: Vec<String>,
    pub absolute_responses: Vec<String>,
    pub agent_calls: usize,
    pub usage: TokenUsage,
}

/// Responses, request count and token usage of a reward query.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSamples {
    pub texts: Vec<String>,
    pub calls: usize,
    pub usage: TokenUsage,
}

/// `k` answers to one prompt, as a single `n = k` request or as `k` requests.
fn draw_k(env: &AgentEnv<'_>, prompt: &Prompt, k: usize) -> Result<RewardSamples, PipelineError> {
    let mut out = RewardSamples {
        texts: Vec::with_capacity(k),
        calls: 0,
        usage: TokenUsage::default(),
    };
    if env.config.batched_rewards {
        let r = sample(env.backend, &prompt.request(env.config, k))?;
        out.usage += TokenUsage::from(&r);
        out.texts = r.texts;
        out.calls = 1;
    } else {
        for j in 0..k {
            let r = sample(env.backend, &prompt.request(env.config, 1).with_offset(j))?;
            out.usage += TokenUsage::from(&r);
            out.texts.extend(r.texts);
            out.calls += 1;
        }
    }
    Ok(out)
}

/// Re-ask the decision agent `k` times and score the modal answer.
pub fn relative_reward(
    env: &AgentEnv<'_>,
    ctx: &SearchContext,
) -> Result<(RelativeOutcome, Prompt, RewardSamples), PipelineError> {
    let prompt = env.decision_prompt(ctx)?;
    let pool = ctx.selection_pool(env.config.selection_pool);
    let drawn = draw_k(env, &prompt, env.config.k_samples)?;
    let selections: Vec<Option<String>> = drawn
        .texts
        .iter()
        .map(|t| parse_id_list(t, pool).into_iter().next())
        .collect();
    let path_selection = ctx
        .selected_protein
        .clone()
        .unwrap_or_else(|| pool.iter().next().cloned().unwrap_or_default());
    let outcome = relative_from_selections(&selections, &path_selection);
    Ok((outcome, prompt, drawn))
}

/// Ask `k` times whether `p_star` interacts with the query molecule.
pub fn absolute_reward(
    env: &AgentEnv<'_>,
    ctx: &SearchContext,
    p_star: &str,
) -> Result<((f64, usize), Prompt, RewardSamples), PipelineError> {
    let prompt = env.judgement_prompt(ctx, p_star)?;
    let drawn = draw_k(env, &prompt, env.config.k_samples)?;
    let verdicts: Vec<Verdict> = drawn
        .texts
        .iter()
        .map(|t| parse_yes_no(t, &env.config.lexicon))
        .collect();
    Ok((absolute_from_verdicts(&verdicts), prompt, drawn))
}

/// Full reward at a terminal context. Relative-only mode skips the yes/no
/// queries and reports an absolute reward of 0.
pub fn evaluate_terminal(
    env: &AgentEnv<'_>,
    ctx: &SearchContext,
) -> Result<RewardEvaluation, PipelineError> {
    let k = env.config.k_samples;
    let (rel, rel_prompt, rel_drawn) = relative_reward(env, ctx)?;
    let mut usage = rel_drawn.usage;
    let mut calls = rel_drawn.calls;
    let (r_absolute, yes_count, abs_hash, abs_texts) = match env.config.reward_mode {
        RewardMode::Combined => {
            let ((r, yes), prompt, drawn) = absolute_reward(env, ctx, &rel.p_star)?;
            usage += drawn.usage;
            calls += drawn.calls;
            (r, yes, Some(prompt.hash()), drawn.texts)
        }
        RewardMode::RelativeOnly => (0.0, 0, None, Vec::new()),
    };
    let r_final = final_reward(rel.r_relative, r_absolute, env.config.reward_mode)
        .expect("rewards are frequencies");
    Ok(RewardEvaluation {
        breakdown: RewardBreakdown {
            p_star: rel.p_star,
            selection_counts: rel.selection_counts,
            yes_count,
            k,
            r_relative: rel.r_relative,
            r_absolute,
            r_final,
            no_parseable_selection: rel.fallback,
        },
        relative_prompt_hash: rel_prompt.hash(),
        absolute_prompt_hash: abs_hash,
        relative_responses: rel_drawn.texts,
        absolute_responses: abs_texts,
        agent_calls: calls,
        usage,
    })
}
