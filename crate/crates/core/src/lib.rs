//! Target search for a query molecule: similarity retrieval, an agent
//! pipeline driven by Monte Carlo tree search, self-consistency rewards,
//! dataset construction and recall evaluation.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod evaluation;
pub mod jsonl;
pub mod mcts;
pub mod model;
pub mod pipeline;
pub mod reward;
pub mod runtime;
pub mod similarity;
pub mod single_shot;
pub mod trace;

#[cfg(test)]
mod testutil;

pub use config::{Ablation, Branching, RewardMode, SearchConfig, SelectionPool, TopkMode};
pub use corpus::{load_corpus, validate_instance, Corpus, CorpusError, InstanceRule, Violation};
pub use dataset::{build_baseline_dataset, build_instances, BuildReport, BuilderRules, Rejection};
pub use evaluation::{evaluate_run, recall, topk_select, EvalError, Report};
pub use jsonl::{JsonlError, Strictness};
pub use mcts::{
    aggregate_answers, run_search, uct_score, RankedAnswer, RolloutOutcome, SearchAbort,
    SearchResult, SearchRun, SearchTree, TreeSnapshot,
};
pub use model::{
    BaselineInstance, Fingerprint, InteractionRecord, LiteratureRef, Molecule, PhyschemProfile,
    PocketDescriptor, ProblemInstance, Protein, Residue, StructuralProfile,
};
pub use pipeline::{Action, ActionSequence, AgentEnv, PipelineError, SearchContext};
pub use reward::{final_reward, RewardBreakdown};
pub use runtime::{Backend, BackendError, HttpBackend, MockBackend, ScriptedBackend, TemplateSet};
pub use single_shot::{run_single_shot, SingleShotMode};
pub use trace::TraceRecord;
