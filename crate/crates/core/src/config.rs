use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Action;
use crate::runtime::YesNoLexicon;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("rollouts must be at least 1")]
    ZeroRollouts,
    #[error("k_samples must be at least 1")]
    ZeroSamples,
    #[error("temperature must be finite and >= 0, got {0}")]
    Temperature(f64),
    #[error("exploration constant must be finite and >= 0, got {0}")]
    Exploration(f64),
    #[error("branching for {0:?} must be positive")]
    ZeroBranching(Action),
    #[error("branching for the end action is fixed at 1, got {0}")]
    EndBranching(usize),
    #[error("distinct_batches must be at least 1")]
    ZeroBatches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Combined,
    RelativeOnly,
}

/// Which protein set the decision agent chooses from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPool {
    /// Proteins of the selected reference molecules.
    Reference,
    /// Every candidate protein.
    Candidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopkMode {
    Gt,
    GtPlus3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub enable_molecule_analysis: bool,
    pub enable_interaction_analysis: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            enable_molecule_analysis: true,
            enable_interaction_analysis: true,
        }
    }
}

/// Children generated per expansion, keyed by the action of the children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Branching {
    pub molecule_analysis: usize,
    pub molecule_selection: usize,
    pub interaction_analysis: usize,
    pub protein_selection: usize,
    pub end: usize,
}

impl Default for Branching {
    fn default() -> Self {
        Self {
            molecule_analysis: 4,
            molecule_selection: 4,
            interaction_analysis: 4,
            protein_selection: 1,
            end: 1,
        }
    }
}

impl Branching {
    pub fn for_action(&self, action: Action) -> usize {
        match action {
            Action::Root => 1,
            Action::MoleculeAnalysis => self.molecule_analysis,
            Action::MoleculeSelection => self.molecule_selection,
            Action::InteractionAnalysis => self.interaction_analysis,
            Action::ProteinSelection => self.protein_selection,
            Action::End => self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub rollouts: usize,
    pub temperature: f64,
    /// Samples drawn for each of the relative and absolute rewards.
    pub k_samples: usize,
    pub exploration_c: f64,
    pub branching: Branching,
    pub seed: u64,
    pub reward_mode: RewardMode,
    pub ablation: Ablation,
    pub selection_pool: SelectionPool,
    pub topk_mode: TopkMode,
    /// Sampling rounds allowed when collecting distinct answers for one expansion.
    pub distinct_batches: usize,
    /// Draw the k reward samples in a single `n = k` request instead of k requests.
    pub batched_rewards: bool,
    /// Literature snippets shown per protein.
    pub literature_per_protein: usize,
    pub max_tokens: Option<u32>,
    pub lexicon: YesNoLexicon,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rollouts: 12,
            temperature: 0.8,
            k_samples: 4,
            exploration_c: std::f64::consts::SQRT_2,
            branching: Branching::default(),
            seed: 0,
            reward_mode: RewardMode::Combined,
            ablation: Ablation::default(),
            selection_pool: SelectionPool::Reference,
            topk_mode: TopkMode::Gt,
            distinct_batches: 3,
            batched_rewards: true,
            literature_per_protein: 2,
            max_tokens: None,
            lexicon: YesNoLexicon::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rollouts == 0 {
            return Err(ConfigError::ZeroRollouts);
        }
        if self.k_samples == 0 {
            return Err(ConfigError::ZeroSamples);
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if self.exploration_c < 0.0 || !self.exploration_c.is_finite() {
            return Err(ConfigError::Exploration(self.exploration_c));
        }
        if self.branching.end != 1 {
            return Err(ConfigError::EndBranching(self.branching.end));
        }
        for action in [
            Action::MoleculeAnalysis,
            Action::MoleculeSelection,
            Action::InteractionAnalysis,
            Action::ProteinSelection,
        ] {
            if self.branching.for_action(action) == 0 {
                return Err(ConfigError::ZeroBranching(action));
            }
        }
        if self.distinct_batches == 0 {
            return Err(ConfigError::ZeroBatches);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = SearchConfig::default();
        assert_eq!(c.rollouts, 12);
        assert_eq!(c.temperature, 0.8);
        assert_eq!(c.k_samples, 4);
        assert_eq!(
            [4, 4, 4, 1, 1],
            [
                c.branching.molecule_analysis,
                c.branching.molecule_selection,
                c.branching.interaction_analysis,
                c.branching.protein_selection,
                c.branching.end
            ]
        );
        assert!(c.validate().is_ok());
    }

    #[test]
    fn end_branching_is_pinned() {
        let mut c = SearchConfig::default();
        c.branching.end = 2;
        assert_eq!(c.validate(), Err(ConfigError::EndBranching(2)));
        c.branching.end = 1;
        c.rollouts = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroRollouts));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: SearchConfig =
            serde_json::from_str(r#"{"rollouts": 3, "reward_mode": "relative_only"}"#).unwrap();
        assert_eq!(c.rollouts, 3);
        assert_eq!(c.reward_mode, RewardMode::RelativeOnly);
        assert_eq!(c.k_samples, 4);
    }
}
