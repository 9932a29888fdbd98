//! The agent actions that move a search context one step down the pipeline:
//! molecule analysis, reference-molecule selection, interaction analysis,
//! protein selection, and the terminal end action.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Ablation, SearchConfig, SelectionPool};
use crate::corpus::Corpus;
use crate::model::{
    Molecule, PhyschemProfile, PocketDescriptor, ProblemInstance, Protein, StructuralProfile,
};
use crate::runtime::{
    parse_id_list, sample_distinct, Backend, BackendError, PromptMessage, ResponseHint,
    SamplingRequest, TemplateError, TemplateSet, TokenUsage,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unknown molecule id {0:?}")]
    UnknownMolecule(String),
    #[error("unknown protein id {0:?}")]
    UnknownProtein(String),
    #[error("protein selection pool is empty")]
    EmptyPool,
    #[error("{0:?} produced no usable completion")]
    EmptyCompletion(Action),
    #[error("{0:?} nodes cannot be expanded")]
    NotExpandable(Action),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Root,
    #[serde(rename = "A2")]
    MoleculeAnalysis,
    #[serde(rename = "A3")]
    MoleculeSelection,
    #[serde(rename = "A4")]
    InteractionAnalysis,
    #[serde(rename = "A5")]
    ProteinSelection,
    #[serde(rename = "A6")]
    End,
}

impl Action {
    pub fn template_id(self) -> Option<&'static str> {
        match self {
            Action::MoleculeAnalysis => Some("molecule_analysis"),
            Action::MoleculeSelection => Some("molecule_selection"),
            Action::InteractionAnalysis => Some("interaction_analysis"),
            Action::ProteinSelection => Some("protein_selection"),
            Action::Root | Action::End => None,
        }
    }
}

/// Fixed order in which actions follow one another, with ablated actions
/// spliced out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSequence {
    steps: Vec<Action>,
}

impl ActionSequence {
    pub fn new(ablation: Ablation) -> Self {
        let mut steps = vec![Action::Root];
        if ablation.enable_molecule_analysis {
            steps.push(Action::MoleculeAnalysis);
        }
        steps.push(Action::MoleculeSelection);
        if ablation.enable_interaction_analysis {
            steps.push(Action::InteractionAnalysis);
        }
        steps.push(Action::ProteinSelection);
        steps.push(Action::End);
        Self { steps }
    }

    pub fn next(&self, action: Action) -> Option<Action> {
        let pos = self.steps.iter().position(|&a| a == action)?;
        self.steps.get(pos + 1).copied()
    }

    pub fn steps(&self) -> &[Action] {
        &self.steps
    }

    /// Action levels below the root.
    pub fn depth(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Everything known at one point of a reasoning path. Fields are only ever
/// filled in going down the tree, never changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchContext {
    pub query_molecule_id: String,
    pub molecule_report: Option<String>,
    pub candidate_molecules: BTreeSet<String>,
    pub reference_molecules: Option<BTreeSet<String>>,
    pub candidate_proteins: BTreeSet<String>,
    pub reference_proteins: Option<BTreeSet<String>>,
    pub interaction_report: Option<String>,
    pub selected_protein: Option<String>,
}

impl SearchContext {
    pub fn root(instance: &ProblemInstance) -> Self {
        Self::from_pools(
            &instance.query_molecule_id,
            instance.candidate_molecule_ids.clone(),
            instance.candidate_protein_ids.clone(),
        )
    }

    pub fn from_pools(
        query_molecule_id: &str,
        candidate_molecules: BTreeSet<String>,
        candidate_proteins: BTreeSet<String>,
    ) -> Self {
        Self {
            query_molecule_id: query_molecule_id.to_string(),
            molecule_report: None,
            candidate_molecules,
            reference_molecules: None,
            candidate_proteins,
            reference_proteins: None,
            interaction_report: None,
            selected_protein: None,
        }
    }

    /// Proteins the decision agent may choose from.
    pub fn selection_pool(&self, pool: SelectionPool) -> &BTreeSet<String> {
        match (pool, &self.reference_proteins) {
            (SelectionPool::Reference, Some(reference)) => reference,
            _ => &self.candidate_proteins,
        }
    }

    /// Proteins whose pockets and literature feed the interaction analysis.
    pub fn evidence_proteins(&self) -> &BTreeSet<String> {
        self.reference_proteins
            .as_ref()
            .unwrap_or(&self.candidate_proteins)
    }

    pub fn evidence_molecules(&self) -> &BTreeSet<String> {
        self.reference_molecules
            .as_ref()
            .unwrap_or(&self.candidate_molecules)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// No candidate id parsed from the selection answer; every candidate kept.
    AllCandidatesKept,
    /// No pool id parsed from the decision answer; smallest id chosen.
    SmallestPoolId,
    /// No reward sample named a pool protein.
    NoParseableSelection,
}

/// Child context produced from one completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub context: SearchContext,
    pub parsed: serde_json::Value,
    pub fallback: Option<Fallback>,
}

/// Outcome of a standalone reference-molecule selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeSelection {
    pub reference_molecules: BTreeSet<String>,
    pub reference_proteins: BTreeSet<String>,
    pub fallback: Option<Fallback>,
}

/// Shared dependencies of every agent call.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub corpus: &'a Corpus,
    pub backend: &'a dyn Backend,
    pub templates: &'a TemplateSet,
    pub config: &'a SearchConfig,
}

/// A rendered prompt ready to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub template_id: &'static str,
    pub messages: Vec<PromptMessage>,
    pub hint: ResponseHint,
}

impl Prompt {
    pub fn hash(&self) -> String {
        prompt_hash(&self.messages)
    }

    pub fn request(&self, config: &SearchConfig, n: usize) -> SamplingRequest {
        SamplingRequest::new(self.messages.clone(), config.temperature, n)
            .with_hint(self.hint.clone())
            .with_max_tokens(config.max_tokens)
    }
}

pub fn prompt_hash(messages: &[PromptMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Result of expanding one node: the child contexts plus what was sent and received.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub action: Action,
    pub children: Vec<Applied>,
    pub template_id: Option<&'static str>,
    pub prompt_hash: Option<String>,
    pub raw_responses: Vec<String>,
    pub agent_calls: usize,
    pub usage: TokenUsage,
}

// ---------------------------------------------------------------------------
// text blocks

pub fn format_structural(s: &StructuralProfile) -> String {
    let groups = if s.functional_groups.is_empty() {
        "none".to_string()
    } else {
        s.functional_groups.join(", ")
    };
    let scaffold = if s.scaffold.is_empty() {
        "none (acyclic)"
    } else {
        &s.scaffold
    };
    format!(
        "- Chiral centers: {}\n- Scaffold: {}\n- Functional groups: {}",
        s.chiral_center_count, scaffold, groups
    )
}

pub fn format_physchem(p: &PhyschemProfile) -> String {
    format!(
        "- Molecular weight: {:.2} Da\n- logP: {:.2}\n- Polar surface area: {:.2} A^2\n\
         - H-bond donors: {}\n- H-bond acceptors: {}\n- Rotatable bonds: {}\n- Heavy atoms: {}",
        p.molecular_weight, p.logp, p.psa, p.hbd, p.hba, p.rotatable_bonds, p.heavy_atoms
    )
}

fn inline_profile(m: &Molecule) -> String {
    let s = &m.structural;
    let p = &m.physchem;
    let groups = if s.functional_groups.is_empty() {
        "none".to_string()
    } else {
        s.functional_groups.join(", ")
    };
    format!(
        "chiral centers {}, scaffold {}, groups [{}]; MW {:.2}, logP {:.2}, PSA {:.2}, HBD {}, HBA {}, RotB {}, heavy atoms {}",
        s.chiral_center_count,
        if s.scaffold.is_empty() { "none" } else { &s.scaffold },
        groups,
        p.molecular_weight,
        p.logp,
        p.psa,
        p.hbd,
        p.hba,
        p.rotatable_bonds,
        p.heavy_atoms
    )
}

/// One pocket as a single prose paragraph.
pub fn format_pocket_description(pocket: &PocketDescriptor, protein: &Protein) -> String {
    let residues: Vec<String> = pocket
        .residues
        .iter()
        .map(|r| format!("{}{} (chain {})", r.name, r.number, r.chain))
        .collect();
    let mut out = format!(
        "Binding pocket {} of {} ({}) is lined by {}.",
        pocket.pocket_label,
        protein.name,
        protein.id,
        residues.join(", ")
    );
    if !pocket.interaction_types.is_empty() {
        let _ = write!(
            out,
            " Observed ligand contacts: {}.",
            pocket.interaction_types.join(", ")
        );
    }
    if let Some(notes) = pocket.geometry_notes.as_deref().filter(|n| !n.is_empty()) {
        let _ = write!(out, " {}", notes.trim());
    }
    out
}

fn pocket_paragraphs(protein: &Protein) -> String {
    if protein.pockets.is_empty() {
        return format!(
            "No binding pocket data is available for {} ({}).",
            protein.name, protein.id
        );
    }
    protein
        .pockets
        .iter()
        .map(|p| format_pocket_description(p, protein))
        .collect::<Vec<_>>()
        .join("\n")
}

fn literature_lines(protein: &Protein, budget: usize) -> String {
    if protein.literature.is_empty() || budget == 0 {
        return format!(
            "No literature is available for {} ({}).",
            protein.name, protein.id
        );
    }
    protein
        .literature
        .iter()
        .take(budget)
        .map(|l| format!("[{}] {}: {}", l.source_id, l.title, l.abstract_text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn protein_line(protein: &Protein) -> String {
    format!(
        "{} ({}; pocket type: {})",
        protein.id, protein.name, protein.pocket_type
    )
}

impl<'a> AgentEnv<'a> {
    fn molecule(&self, id: &str) -> Result<&'a Molecule, PipelineError> {
        self.corpus
            .molecule(id)
            .ok_or_else(|| PipelineError::UnknownMolecule(id.to_string()))
    }

    fn protein(&self, id: &str) -> Result<&'a Protein, PipelineError> {
        self.corpus
            .protein(id)
            .ok_or_else(|| PipelineError::UnknownProtein(id.to_string()))
    }

    fn render(
        &self,
        template_id: &'static str,
        bindings: BTreeMap<String, String>,
        hint: ResponseHint,
    ) -> Result<Prompt, PipelineError> {
        Ok(Prompt {
            template_id,
            messages: self.templates.render_prompt(template_id, &bindings)?,
            hint,
        })
    }

    fn query_bindings(
        &self,
        ctx: &SearchContext,
    ) -> Result<BTreeMap<String, String>, PipelineError> {
        let q = self.molecule(&ctx.query_molecule_id)?;
        let mut b = BTreeMap::new();
        b.insert("query_id".into(), q.id.clone());
        b.insert("smiles".into(), q.smiles.clone());
        b.insert(
            "molecule_report".into(),
            ctx.molecule_report
                .as_deref()
                .map(|r| format!("\nMolecule analysis:\n{r}\n"))
                .unwrap_or_default(),
        );
        Ok(b)
    }

    fn molecule_list(&self, ids: &BTreeSet<String>) -> Result<String, PipelineError> {
        let mut lines = Vec::with_capacity(ids.len());
        for id in ids {
            let m = self.molecule(id)?;
            lines.push(format!("- {}: {}", m.id, m.smiles));
        }
        Ok(lines.join("\n"))
    }

    /// Pocket paragraphs and literature for every protein in `ids`.
    fn protein_evidence(&self, ids: &BTreeSet<String>) -> Result<String, PipelineError> {
        let mut blocks = Vec::with_capacity(ids.len());
        for id in ids {
            let p = self.protein(id)?;
            blocks.push(format!(
                "Protein {}\n{}\nLiterature:\n{}",
                protein_line(p),
                pocket_paragraphs(p),
                literature_lines(p, self.config.literature_per_protein)
            ));
        }
        Ok(blocks.join("\n\n"))
    }

    fn protein_pool_line(&self, ids: &BTreeSet<String>) -> Result<String, PipelineError> {
        let mut parts = Vec::with_capacity(ids.len());
        for id in ids {
            parts.push(protein_line(self.protein(id)?));
        }
        Ok(parts.join("; "))
    }

    /// Prompt that produces the children of a node whose children carry `action`.
    pub fn prompt_for(&self, action: Action, ctx: &SearchContext) -> Result<Prompt, PipelineError> {
        match action {
            Action::MoleculeAnalysis => {
                let q = self.molecule(&ctx.query_molecule_id)?;
                let mut b = self.query_bindings(ctx)?;
                b.insert("structural".into(), format_structural(&q.structural));
                b.insert("physchem".into(), format_physchem(&q.physchem));
                self.render("molecule_analysis", b, ResponseHint::FreeText)
            }
            Action::MoleculeSelection => {
                let q = self.molecule(&ctx.query_molecule_id)?;
                let mut b = self.query_bindings(ctx)?;
                b.insert(
                    "query_profile".into(),
                    format!("Query profile: {}", inline_profile(q)),
                );
                let mut lines = Vec::new();
                for id in &ctx.candidate_molecules {
                    let m = self.molecule(id)?;
                    lines.push(format!(
                        "- {} | SMILES {} | {}",
                        m.id,
                        m.smiles,
                        inline_profile(m)
                    ));
                }
                b.insert("candidates".into(), lines.join("\n"));
                let options = ctx.candidate_molecules.iter().cloned().collect();
                self.render("molecule_selection", b, ResponseHint::Subset(options))
            }
            Action::InteractionAnalysis => {
                let mut b = self.query_bindings(ctx)?;
                b.insert(
                    "reference_molecules".into(),
                    self.molecule_list(ctx.evidence_molecules())?,
                );
                b.insert(
                    "protein_evidence".into(),
                    self.protein_evidence(ctx.evidence_proteins())?,
                );
                self.render("interaction_analysis", b, ResponseHint::FreeText)
            }
            Action::ProteinSelection => self.decision_prompt(ctx),
            Action::Root | Action::End => Err(PipelineError::NotExpandable(action)),
        }
    }

    /// The decision agent's question. Reused verbatim for the
    /// self-consistency re-queries.
    pub fn decision_prompt(&self, ctx: &SearchContext) -> Result<Prompt, PipelineError> {
        let pool = ctx.selection_pool(self.config.selection_pool);
        if pool.is_empty() {
            return Err(PipelineError::EmptyPool);
        }
        let mut b = self.query_bindings(ctx)?;
        b.insert(
            "reference_molecules".into(),
            self.molecule_list(ctx.evidence_molecules())?,
        );
        b.insert("protein_pool".into(), self.protein_pool_line(pool)?);
        let analysed = ctx.interaction_report.is_some();
        let pockets = if analysed {
            let mut paragraphs = Vec::new();
            for id in pool {
                paragraphs.push(pocket_paragraphs(self.protein(id)?));
            }
            format!("\nBinding pocket evidence:\n{}\n", paragraphs.join("\n"))
        } else {
            String::new()
        };
        b.insert("pocket_evidence".into(), pockets);
        b.insert(
            "interaction_report".into(),
            ctx.interaction_report
                .as_deref()
                .map(|r| format!("\nInteraction analysis:\n{r}\n"))
                .unwrap_or_default(),
        );
        let options = pool.iter().cloned().collect();
        self.render("protein_selection", b, ResponseHint::Choice(options))
    }

    /// One-off ranking question over `pool`, without the tree. The enhanced
    /// form adds the query's profiles and every protein's pockets and literature.
    pub fn single_shot_prompt(
        &self,
        query_molecule_id: &str,
        pool: &BTreeSet<String>,
        enhanced: bool,
    ) -> Result<Prompt, PipelineError> {
        if pool.is_empty() {
            return Err(PipelineError::EmptyPool);
        }
        let q = self.molecule(query_molecule_id)?;
        let mut b = BTreeMap::new();
        b.insert("smiles".into(), q.smiles.clone());
        b.insert("protein_pool".into(), self.protein_pool_line(pool)?);
        let options = pool.iter().cloned().collect();
        if enhanced {
            b.insert(
                "query_profile".into(),
                format!("Query profile: {}", inline_profile(q)),
            );
            b.insert("protein_evidence".into(), self.protein_evidence(pool)?);
            self.render("enhanced_selection", b, ResponseHint::Subset(options))
        } else {
            self.render("baseline_selection", b, ResponseHint::Subset(options))
        }
    }

    /// Yes/no question on whether `protein_id` interacts with the query.
    pub fn judgement_prompt(
        &self,
        ctx: &SearchContext,
        protein_id: &str,
    ) -> Result<Prompt, PipelineError> {
        let p = self.protein(protein_id)?;
        let mut b = self.query_bindings(ctx)?;
        b.insert("protein".into(), protein_line(p));
        b.insert(
            "pocket_evidence".into(),
            format!("Binding pocket evidence:\n{}", pocket_paragraphs(p)),
        );
        b.insert(
            "literature".into(),
            format!(
                "Literature:\n{}",
                literature_lines(p, self.config.literature_per_protein)
            ),
        );
        self.render("interaction_judgement", b, ResponseHint::YesNo)
    }

    /// Child context for `action` built from one completion.
    pub fn apply(
        &self,
        action: Action,
        ctx: &SearchContext,
        text: &str,
    ) -> Result<Applied, PipelineError> {
        let mut child = ctx.clone();
        let mut fallback = None;
        let parsed = match action {
            Action::MoleculeAnalysis => {
                child.molecule_report = Some(text.trim().to_string());
                json!(text.trim())
            }
            Action::MoleculeSelection => {
                let mut chosen: BTreeSet<String> = parse_id_list(text, &ctx.candidate_molecules)
                    .into_iter()
                    .collect();
                if chosen.is_empty() {
                    chosen = ctx.candidate_molecules.clone();
                    fallback = Some(Fallback::AllCandidatesKept);
                }
                let mut reference_proteins = BTreeSet::new();
                for m in &chosen {
                    reference_proteins.extend(
                        self.corpus
                            .proteins_of(m)
                            .intersection(&ctx.candidate_proteins)
                            .cloned(),
                    );
                }
                let parsed = json!({
                    "reference_molecules": chosen,
                    "reference_proteins": reference_proteins,
                });
                child.reference_molecules = Some(chosen);
                child.reference_proteins = Some(reference_proteins);
                parsed
            }
            Action::InteractionAnalysis => {
                child.interaction_report = Some(text.trim().to_string());
                json!(text.trim())
            }
            Action::ProteinSelection => {
                let pool = ctx.selection_pool(self.config.selection_pool);
                let selected = match parse_id_list(text, pool).into_iter().next() {
                    Some(id) => id,
                    None => {
                        fallback = Some(Fallback::SmallestPoolId);
                        pool.iter()
                            .next()
                            .cloned()
                            .ok_or(PipelineError::EmptyPool)?
                    }
                };
                child.selected_protein = Some(selected.clone());
                json!(selected)
            }
            Action::End => serde_json::Value::Null,
            Action::Root => return Err(PipelineError::NotExpandable(action)),
        };
        Ok(Applied {
            context: child,
            parsed,
            fallback,
        })
    }

    /// Sample up to `want` distinct answers for `action` and turn each into a child context.
    pub fn expand(
        &self,
        action: Action,
        ctx: &SearchContext,
        want: usize,
        max_batches: usize,
    ) -> Result<Expansion, PipelineError> {
        if action == Action::End {
            return Ok(Expansion {
                action,
                children: vec![self.apply(action, ctx, "")?],
                template_id: None,
                prompt_hash: None,
                raw_responses: vec![],
                agent_calls: 0,
                usage: TokenUsage::default(),
            });
        }
        let prompt = self.prompt_for(action, ctx)?;
        let samples = sample_distinct(
            self.backend,
            &prompt.request(self.config, want),
            want,
            max_batches,
        )?;
        if samples.texts.is_empty() {
            return Err(PipelineError::EmptyCompletion(action));
        }
        let children = samples
            .texts
            .iter()
            .map(|t| self.apply(action, ctx, t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Expansion {
            action,
            children,
            template_id: Some(prompt.template_id),
            prompt_hash: Some(prompt.hash()),
            raw_responses: samples.raw,
            agent_calls: samples.calls,
            usage: samples.usage,
        })
    }

    fn single(&self, action: Action, ctx: &SearchContext) -> Result<Applied, PipelineError> {
        // one completion, one retry when it comes back empty
        let mut e = self.expand(action, ctx, 1, 2)?;
        Ok(e.children.remove(0))
    }

    /// Natural-language report on the query molecule's profiles.
    pub fn molecule_analysis(&self, ctx: &SearchContext) -> Result<String, PipelineError> {
        Ok(self
            .single(Action::MoleculeAnalysis, ctx)?
            .context
            .molecule_report
            .expect("set by apply"))
    }

    /// Reference molecules and the candidate proteins they interact with.
    pub fn molecule_selection(
        &self,
        ctx: &SearchContext,
    ) -> Result<MoleculeSelection, PipelineError> {
        let a = self.single(Action::MoleculeSelection, ctx)?;
        Ok(MoleculeSelection {
            reference_molecules: a.context.reference_molecules.expect("set by apply"),
            reference_proteins: a.context.reference_proteins.expect("set by apply"),
            fallback: a.fallback,
        })
    }

    pub fn interaction_analysis(&self, ctx: &SearchContext) -> Result<String, PipelineError> {
        Ok(self
            .single(Action::InteractionAnalysis, ctx)?
            .context
            .interaction_report
            .expect("set by apply"))
    }

    pub fn protein_selection(
        &self,
        ctx: &SearchContext,
    ) -> Result<(String, Option<Fallback>), PipelineError> {
        let a = self.single(Action::ProteinSelection, ctx)?;
        Ok((
            a.context.selected_protein.expect("set by apply"),
            a.fallback,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InteractionRecord, LiteratureRef, Residue};
    use crate::runtime::{MockBackend, ScriptedBackend};
    use crate::testutil::{molecule, protein};

    fn pocket(label: &str, residues: &[(&str, i32)], kinds: &[&str]) -> PocketDescriptor {
        PocketDescriptor {
            pocket_label: label.into(),
            residues: residues
                .iter()
                .map(|&(name, number)| Residue {
                    name: name.into(),
                    number,
                    chain: "A".into(),
                })
                .collect(),
            interaction_types: kinds.iter().map(|s| s.to_string()).collect(),
            geometry_notes: None,
        }
    }

    fn corpus() -> Corpus {
        let mut ms = vec![molecule("Q", &[1, 2])];
        for i in 1..=4 {
            ms.push(molecule(&format!("M{i}"), &[i]));
        }
        let mut p1 = protein("P1");
        p1.pockets
            .push(pocket("site-1", &[("ASP", 86)], &["hydrogen-bond"]));
        p1.literature.push(LiteratureRef {
            source_id: "123".into(),
            title: "A study".into(),
            abstract_text: "Binding data.".into(),
        });
        let mut p2 = protein("P2");
        p2.pockets.push(pocket(
            "site-2",
            &[("PHE", 90), ("LEU", 12)],
            &["hydrophobic"],
        ));
        let p3 = protein("P3");
        let links = [
            ("M1", "P1"),
            ("M1", "P2"),
            ("M2", "P2"),
            ("M3", "P3"),
            ("M4", "P3"),
            ("Q", "P1"),
        ];
        Corpus::new(
            ms,
            vec![p1, p2, p3],
            links
                .iter()
                .map(|&(m, p)| InteractionRecord {
                    molecule_id: m.into(),
                    protein_id: p.into(),
                    label: true,
                })
                .collect(),
        )
        .unwrap()
    }

    fn root() -> SearchContext {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        SearchContext::from_pools(
            "Q",
            set(&["M1", "M2", "M3", "M4"]),
            set(&["P1", "P2", "P3"]),
        )
    }

    fn env<'a>(
        c: &'a Corpus,
        b: &'a dyn Backend,
        t: &'a TemplateSet,
        cfg: &'a SearchConfig,
    ) -> AgentEnv<'a> {
        AgentEnv {
            corpus: c,
            backend: b,
            templates: t,
            config: cfg,
        }
    }

    #[test]
    fn sequence_splices_ablated_actions() {
        let full = ActionSequence::new(Ablation::default());
        assert_eq!(full.depth(), 5);
        assert_eq!(full.next(Action::Root), Some(Action::MoleculeAnalysis));
        assert_eq!(full.next(Action::End), None);
        let none = ActionSequence::new(Ablation {
            enable_molecule_analysis: false,
            enable_interaction_analysis: false,
        });
        assert_eq!(
            none.steps(),
            [
                Action::Root,
                Action::MoleculeSelection,
                Action::ProteinSelection,
                Action::End
            ]
        );
    }

    #[test]
    fn pocket_paragraph_mentions_residue_once() {
        let c = corpus();
        let p = c.protein("P1").unwrap();
        let text = format_pocket_description(&p.pockets[0], p);
        assert_eq!(text.matches("ASP86").count(), 1);
        assert_eq!(text.matches("hydrogen").count(), 1);
        assert!(!text.contains('\n'));
    }

    #[test]
    fn pocket_paragraph_without_interaction_types_has_no_contact_clause() {
        let c = corpus();
        let p = c.protein("P1").unwrap();
        let bare = pocket("s", &[("GLY", 1)], &[]);
        assert!(!format_pocket_description(&bare, p).contains("contacts"));
        let a = format_pocket_description(&pocket("a", &[("GLY", 1)], &[]), p);
        let b = format_pocket_description(&pocket("b", &[("GLY", 2)], &[]), p);
        let joined = [a.clone(), b.clone()].join("\n");
        assert!(joined.find(&a).unwrap() < joined.find(&b).unwrap());
    }

    #[test]
    fn scripted_report_is_stored_verbatim() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = ScriptedBackend::from_replies(["Report: lipophilic scaffold"]);
        let e = env(&c, &b, &t, &cfg);
        assert_eq!(
            e.molecule_analysis(&root()).unwrap(),
            "Report: lipophilic scaffold"
        );
    }

    #[test]
    fn empty_report_is_retried_once_then_fails() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = ScriptedBackend::from_replies(["", "second try"]);
        assert_eq!(
            env(&c, &b, &t, &cfg).molecule_analysis(&root()).unwrap(),
            "second try"
        );
        let b = ScriptedBackend::from_replies(["", "  "]);
        assert!(matches!(
            env(&c, &b, &t, &cfg).molecule_analysis(&root()),
            Err(PipelineError::EmptyCompletion(Action::MoleculeAnalysis))
        ));
    }

    #[test]
    fn molecule_selection_derives_reference_proteins() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = ScriptedBackend::from_replies(["Keep M1 and M3; drop the rest."]);
        let MoleculeSelection {
            reference_molecules: mrm,
            reference_proteins: prp,
            fallback: fb,
        } = env(&c, &b, &t, &cfg).molecule_selection(&root()).unwrap();
        assert_eq!(mrm.iter().collect::<Vec<_>>(), ["M1", "M3"]);
        // oracle: scan of interactions for M1 and M3, restricted to the candidates
        let mut expected = BTreeSet::new();
        for rec in c.interactions() {
            if rec.label && (rec.molecule_id == "M1" || rec.molecule_id == "M3") {
                expected.insert(rec.protein_id.clone());
            }
        }
        assert_eq!(prp, expected);
        assert_eq!(fb, None);
    }

    #[test]
    fn unparseable_selection_keeps_all_candidates() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = ScriptedBackend::from_replies(["none of them look useful"]);
        let MoleculeSelection {
            reference_molecules: mrm,
            reference_proteins: prp,
            fallback: fb,
        } = env(&c, &b, &t, &cfg).molecule_selection(&root()).unwrap();
        assert_eq!(mrm, root().candidate_molecules);
        assert_eq!(prp, root().candidate_proteins);
        assert_eq!(fb, Some(Fallback::AllCandidatesKept));
    }

    #[test]
    fn protein_selection_parses_or_falls_back() {
        let (c, t) = (corpus(), TemplateSet::builtin());
        let cfg = SearchConfig {
            selection_pool: SelectionPool::Candidates,
            ..Default::default()
        };
        let mut ctx = root();
        ctx.candidate_proteins = ["P3", "P2"].iter().map(|s| s.to_string()).collect();
        let b = ScriptedBackend::from_replies(["P2 binds best", "no idea", "P1 maybe"]);
        let e = env(&c, &b, &t, &cfg);
        assert_eq!(e.protein_selection(&ctx).unwrap(), ("P2".to_string(), None));
        assert_eq!(
            e.protein_selection(&ctx).unwrap(),
            ("P2".to_string(), Some(Fallback::SmallestPoolId))
        );
        // P1 is outside the pool
        assert_eq!(
            e.protein_selection(&ctx).unwrap(),
            ("P2".to_string(), Some(Fallback::SmallestPoolId))
        );
    }

    #[test]
    fn reference_pool_is_used_by_default() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let mut ctx = root();
        ctx.reference_molecules = Some(["M3".to_string()].into());
        ctx.reference_proteins = Some(["P3".to_string()].into());
        let b = ScriptedBackend::from_replies(["P1 is best"]);
        let (ps, fb) = env(&c, &b, &t, &cfg).protein_selection(&ctx).unwrap();
        assert_eq!((ps.as_str(), fb), ("P3", Some(Fallback::SmallestPoolId)));
    }

    #[test]
    fn mock_protein_selection_is_deterministic() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let mut ctx = root();
        ctx.reference_proteins = Some(["P1", "P2", "P3"].iter().map(|s| s.to_string()).collect());
        let first = env(&c, &MockBackend::new(9), &t, &cfg)
            .protein_selection(&ctx)
            .unwrap();
        for _ in 0..3 {
            assert_eq!(
                env(&c, &MockBackend::new(9), &t, &cfg)
                    .protein_selection(&ctx)
                    .unwrap(),
                first
            );
        }
    }

    #[test]
    fn interaction_prompt_has_one_paragraph_per_pocket() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = MockBackend::new(1);
        let mut ctx = root();
        ctx.reference_molecules = Some(["M1".to_string()].into());
        ctx.reference_proteins = Some(["P1", "P2"].iter().map(|s| s.to_string()).collect());
        let prompt = env(&c, &b, &t, &cfg)
            .prompt_for(Action::InteractionAnalysis, &ctx)
            .unwrap();
        let user = &prompt.messages.last().unwrap().content;
        let paragraphs = user
            .lines()
            .filter(|l| l.starts_with("Binding pocket "))
            .count();
        assert_eq!(paragraphs, 2);
        assert!(user.contains("[123] A study"));
    }

    #[test]
    fn protein_without_pockets_or_literature_still_analysed() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let mut ctx = root();
        ctx.reference_molecules = Some(["M3".to_string()].into());
        ctx.reference_proteins = Some(["P3".to_string()].into());
        let b = MockBackend::new(2);
        let e = env(&c, &b, &t, &cfg);
        let prompt = e.prompt_for(Action::InteractionAnalysis, &ctx).unwrap();
        let user = &prompt.messages.last().unwrap().content;
        assert!(user.contains("No binding pocket data is available"));
        assert!(user.contains("No literature is available"));
        assert!(!e.interaction_analysis(&ctx).unwrap().is_empty());
    }

    #[test]
    fn decision_prompt_omits_missing_sections() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = MockBackend::new(2);
        let e = env(&c, &b, &t, &cfg);
        let mut ctx = root();
        ctx.reference_molecules = Some(["M1".to_string()].into());
        ctx.reference_proteins = Some(["P1", "P2"].iter().map(|s| s.to_string()).collect());
        let bare = e
            .decision_prompt(&ctx)
            .unwrap()
            .messages
            .last()
            .unwrap()
            .content
            .clone();
        assert!(!bare.contains("Molecule analysis"));
        assert!(!bare.contains("Interaction analysis"));
        assert!(!bare.contains("Binding pocket"));
        ctx.molecule_report = Some("R".into());
        ctx.interaction_report = Some("I".into());
        let full = e
            .decision_prompt(&ctx)
            .unwrap()
            .messages
            .last()
            .unwrap()
            .content
            .clone();
        assert!(full.contains("Molecule analysis:\nR"));
        assert!(full.contains("Interaction analysis:\nI"));
    }

    #[test]
    fn end_expansion_calls_no_agent() {
        let (c, t, cfg) = (corpus(), TemplateSet::builtin(), SearchConfig::default());
        let b = ScriptedBackend::from_replies(Vec::<String>::new());
        let e = env(&c, &b, &t, &cfg)
            .expand(Action::End, &root(), 1, 3)
            .unwrap();
        assert_eq!(e.agent_calls, 0);
        assert_eq!(e.children.len(), 1);
        assert_eq!(e.children[0].context, root());
    }
}
