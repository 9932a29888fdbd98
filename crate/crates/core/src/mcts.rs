//! Monte Carlo tree search over the agent pipeline.
//!
//! Each rollout selects a leaf by UCT, expands and randomly descends until an
//! end node exists on the path, scores the terminal context, and adds the
//! reward to every node on the path. Answers from all rollouts are ranked by
//! summed reward.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ProblemInstance;
use crate::pipeline::{Action, ActionSequence, AgentEnv, PipelineError, SearchContext};
use crate::reward::evaluate_terminal;
use crate::runtime::TokenUsage;
use crate::trace::{ActionRecord, RewardRecord, TraceRecord};

/// `w / n + c * sqrt(ln(parent_visits) / n)`, or +infinity for an unvisited node.
pub fn uct_score(w: f64, n: u64, parent_visits: u64, c: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let n = n as f64;
    w / n + c * ((parent_visits.max(1) as f64).ln() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub node_id: usize,
    pub action: Action,
    pub parent: Option<usize>,
    pub context: SearchContext,
    pub visits: u64,
    pub total_reward: f64,
    pub children: Vec<usize>,
    pub creation_index: usize,
}

/// Arena of nodes; a node's id is its creation index.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    sequence: ActionSequence,
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("path is empty or does not start at the root")]
    NotFromRoot,
    #[error("node {child} is not a child of {parent}")]
    BrokenPath { parent: usize, child: usize },
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("{0:?} cannot follow {1:?}")]
    WrongAction(Action, Action),
}

impl SearchTree {
    pub fn new(root: SearchContext, sequence: ActionSequence) -> Self {
        Self {
            nodes: vec![SearchNode {
                node_id: 0,
                action: Action::Root,
                parent: None,
                context: root,
                visits: 0,
                total_reward: 0.0,
                children: vec![],
                creation_index: 0,
            }],
            sequence,
        }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> Option<&SearchNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sequence(&self) -> &ActionSequence {
        &self.sequence
    }

    pub fn add_child(
        &mut self,
        parent: usize,
        action: Action,
        context: SearchContext,
    ) -> Result<usize, TreeError> {
        let p = self
            .nodes
            .get(parent)
            .ok_or(TreeError::UnknownNode(parent))?;
        if self.sequence.next(p.action) != Some(action) {
            return Err(TreeError::WrongAction(action, p.action));
        }
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            node_id: id,
            action,
            parent: Some(parent),
            context,
            visits: 0,
            total_reward: 0.0,
            children: vec![],
            creation_index: id,
        });
        self.nodes[parent].children.push(id);
        Ok(id)
    }

    /// Child with the highest UCT score. Children are stored in creation
    /// order and only a strictly higher score displaces the current best, so
    /// ties and unvisited nodes resolve to the earliest created.
    pub fn best_child(&self, id: usize, c: f64) -> Option<usize> {
        let node = &self.nodes[id];
        let mut best: Option<(usize, f64)> = None;
        for &child in &node.children {
            let ch = &self.nodes[child];
            let s = uct_score(ch.total_reward, ch.visits, node.visits, c);
            match best {
                Some((_, b)) if s.partial_cmp(&b) != Some(Ordering::Greater) => {}
                _ => best = Some((child, s)),
            }
        }
        best.map(|(child, _)| child)
    }

    /// Path from the root to the leaf reached by repeated UCT descent.
    pub fn select_leaf(&self, c: f64) -> Vec<usize> {
        let mut path = vec![0];
        let mut cur = 0;
        while self.nodes[cur].action != Action::End {
            match self.best_child(cur, c) {
                Some(next) => {
                    path.push(next);
                    cur = next;
                }
                None => break,
            }
        }
        path
    }

    pub fn backpropagate(&mut self, path: &[usize], reward: f64) -> Result<(), TreeError> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(TreeError::RewardOutOfRange(reward));
        }
        if path.first() != Some(&0) {
            return Err(TreeError::NotFromRoot);
        }
        for pair in path.windows(2) {
            let parent = self
                .nodes
                .get(pair[0])
                .ok_or(TreeError::UnknownNode(pair[0]))?;
            if !parent.children.contains(&pair[1]) {
                return Err(TreeError::BrokenPath {
                    parent: pair[0],
                    child: pair[1],
                });
            }
        }
        for &id in path {
            let n = &mut self.nodes[id];
            n.visits += 1;
            n.total_reward += reward;
        }
        Ok(())
    }

    /// Checks visit and reward bookkeeping; returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        const EPS: f64 = 1e-9;
        for n in &self.nodes {
            if n.total_reward < -EPS || n.total_reward > n.visits as f64 + EPS {
                return Err(format!(
                    "node {}: W={} outside [0, n={}]",
                    n.node_id, n.total_reward, n.visits
                ));
            }
            if n.action == Action::End && !n.children.is_empty() {
                return Err(format!("end node {} has children", n.node_id));
            }
            if !n.children.is_empty() {
                let sum: u64 = n.children.iter().map(|&c| self.nodes[c].visits).sum();
                if sum != n.visits {
                    return Err(format!(
                        "node {}: n={} but children sum to {}",
                        n.node_id, n.visits, sum
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            nodes: self
                .nodes
                .iter()
                .map(|n| SnapshotNode {
                    node_id: n.node_id,
                    action: n.action,
                    parent: n.parent,
                    visits: n.visits,
                    total_reward: n.total_reward,
                    creation_index: n.creation_index,
                    children: n.children.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub node_id: usize,
    pub action: Action,
    pub parent: Option<usize>,
    pub visits: u64,
    pub total_reward: f64,
    pub creation_index: usize,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<SnapshotNode>,
}

impl TreeSnapshot {
    pub fn root_visits(&self) -> u64 {
        self.nodes.first().map_or(0, |n| n.visits)
    }

    /// Child count of every node carrying `action`.
    pub fn child_counts(&self, action: Action) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.action == action)
            .map(|n| n.children.len())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub rollout: usize,
    pub path: Vec<usize>,
    /// Protein chosen along the path.
    pub selected_protein: String,
    pub p_star: String,
    pub r_relative: f64,
    pub r_absolute: f64,
    pub r_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub protein_id: String,
    pub aggregate_score: f64,
    pub support_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query_molecule_id: String,
    pub method: String,
    pub rollouts_requested: usize,
    pub rollout_outcomes: Vec<RolloutOutcome>,
    pub ranked_answers: Vec<RankedAnswer>,
    pub total_tokens: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub agent_calls: usize,
    /// Set when a backend failure stopped the run early.
    pub aborted: Option<String>,
}

/// Summed final reward per `p*`, best first. Ties fall to support, then id.
pub fn aggregate_answers(outcomes: &[RolloutOutcome]) -> Vec<RankedAnswer> {
    let mut by_id: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = by_id.entry(&o.p_star).or_default();
        e.0 += o.r_final;
        e.1 += 1;
    }
    let mut ranked: Vec<RankedAnswer> = by_id
        .into_iter()
        .map(|(id, (score, support))| RankedAnswer {
            protein_id: id.to_string(),
            aggregate_score: score,
            support_count: support,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.aggregate_score
            .total_cmp(&a.aggregate_score)
            .then(b.support_count.cmp(&a.support_count))
            .then_with(|| a.protein_id.cmp(&b.protein_id))
    });
    ranked
}

/// Everything a search produced.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub result: SearchResult,
    pub tree: SearchTree,
    /// Trace records grouped by rollout.
    pub traces: Vec<Vec<TraceRecord>>,
}

/// A run stopped by a backend failure, with what was done before it.
#[derive(Debug, Error)]
#[error("search for {} aborted: {error}", partial.result.query_molecule_id)]
pub struct SearchAbort {
    pub error: PipelineError,
    pub partial: Box<SearchRun>,
}

/// Generator for the simulation policy, distinct per query molecule.
pub fn simulation_rng(seed: u64, query_molecule_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"simulation");
    h.update(seed.to_le_bytes());
    h.update(query_molecule_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Create the children of `node`. Returns their ids and the trace record.
pub fn expand(
    tree: &mut SearchTree,
    node: usize,
    env: &AgentEnv<'_>,
    rollout: usize,
) -> Result<(Vec<usize>, ActionRecord), PipelineError> {
    let parent = tree.node(node).expect("node exists");
    let action = parent.action;
    let next = tree
        .sequence()
        .next(action)
        .ok_or(PipelineError::NotExpandable(action))?;
    let want = env.config.branching.for_action(next);
    let expansion = env.expand(
        next,
        &parent.context.clone(),
        want,
        env.config.distinct_batches,
    )?;
    let mut ids = Vec::with_capacity(expansion.children.len());
    for child in &expansion.children {
        ids.push(
            tree.add_child(node, next, child.context.clone())
                .expect("successor action"),
        );
    }
    let record = ActionRecord::from_expansion(rollout, node, &expansion, ids.clone());
    Ok((ids, record))
}

/// Expand and descend at random from `leaf` until an end node is reached.
/// Returns the nodes below `leaf` on the way down.
pub fn simulate(
    tree: &mut SearchTree,
    leaf: usize,
    env: &AgentEnv<'_>,
    rng: &mut ChaCha8Rng,
    rollout: usize,
    trace: &mut Vec<TraceRecord>,
) -> Result<Vec<usize>, PipelineError> {
    let mut path = Vec::new();
    let mut cur = leaf;
    while tree.nodes[cur].action != Action::End {
        let (children, record) = expand(tree, cur, env, rollout)?;
        trace.push(TraceRecord::Action(record));
        cur = children[rng.random_range(0..children.len())];
        path.push(cur);
    }
    Ok(path)
}

/// Search for the target proteins of `instance`'s query molecule.
pub fn run_search(
    instance: &ProblemInstance,
    env: &AgentEnv<'_>,
) -> Result<SearchRun, SearchAbort> {
    let cfg = env.config;
    let mut tree = SearchTree::new(
        SearchContext::root(instance),
        ActionSequence::new(cfg.ablation),
    );
    let mut rng = simulation_rng(cfg.seed, &instance.query_molecule_id);
    let mut outcomes = Vec::with_capacity(cfg.rollouts);
    let mut traces = Vec::with_capacity(cfg.rollouts);
    let mut failure = None;
    for rollout in 0..cfg.rollouts {
        let mut trace = Vec::new();
        let step = rollout_once(&mut tree, env, &mut rng, rollout, &mut trace);
        traces.push(trace);
        match step {
            Ok(outcome) => outcomes.push(outcome),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let mut usage = TokenUsage::default();
    let mut calls = 0;
    for r in traces.iter().flatten() {
        usage += r.usage();
        calls += r.agent_calls();
    }
    let run = SearchRun {
        result: SearchResult {
            query_molecule_id: instance.query_molecule_id.clone(),
            method: "mcts".into(),
            rollouts_requested: cfg.rollouts,
            ranked_answers: aggregate_answers(&outcomes),
            rollout_outcomes: outcomes,
            total_tokens: usage.total(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            agent_calls: calls,
            aborted: failure.as_ref().map(|e| e.to_string()),
        },
        tree,
        traces,
    };
    match failure {
        None => Ok(run),
        Some(error) => Err(SearchAbort {
            error,
            partial: Box::new(run),
        }),
    }
}

fn rollout_once(
    tree: &mut SearchTree,
    env: &AgentEnv<'_>,
    rng: &mut ChaCha8Rng,
    rollout: usize,
    trace: &mut Vec<TraceRecord>,
) -> Result<RolloutOutcome, PipelineError> {
    let mut path = tree.select_leaf(env.config.exploration_c);
    let leaf = *path.last().expect("path holds the root");
    path.extend(simulate(tree, leaf, env, rng, rollout, trace)?);
    let terminal = *path.last().expect("nonempty");
    let ctx = tree.nodes[terminal].context.clone();
    let evaluation = evaluate_terminal(env, &ctx)?;
    let b = &evaluation.breakdown;
    let outcome = RolloutOutcome {
        rollout,
        path: path.clone(),
        selected_protein: ctx.selected_protein.clone().unwrap_or_default(),
        p_star: b.p_star.clone(),
        r_relative: b.r_relative,
        r_absolute: b.r_absolute,
        r_final: b.r_final,
    };
    tree.backpropagate(&path, b.r_final)
        .expect("path built from the tree");
    trace.push(TraceRecord::Reward(RewardRecord::new(
        rollout, terminal, evaluation,
    )));
    Ok(outcome)
}
