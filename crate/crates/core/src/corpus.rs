//! In-memory corpus of molecules, proteins and their interactions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::jsonl::{read_jsonl, read_jsonl_checked, JsonlError, Strictness};
use crate::model::{InteractionRecord, Molecule, ProblemInstance, Protein};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("interaction {index} references unknown {kind} id {id:?}")]
    DanglingId {
        index: usize,
        kind: &'static str,
        id: String,
    },
    #[error("molecule {id:?}: {what} is {actual}, corpus uses {expected}")]
    Dimension {
        id: String,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

impl CorpusError {
    pub fn is_io(&self) -> bool {
        matches!(self, CorpusError::Jsonl(e) if e.is_io())
    }
}

/// Immutable after construction; share it by reference across workers.
#[derive(Debug, Clone)]
pub struct Corpus {
    molecules: Vec<Molecule>,
    proteins: Vec<Protein>,
    interactions: Vec<InteractionRecord>,
    molecule_index: HashMap<String, usize>,
    protein_index: HashMap<String, usize>,
    molecule_proteins: BTreeMap<String, BTreeSet<String>>,
    protein_molecules: BTreeMap<String, BTreeSet<String>>,
    n_bits: Option<usize>,
    embedding_dim: Option<usize>,
}

static EMPTY: BTreeSet<String> = BTreeSet::new();

impl Corpus {
    pub fn new(
        molecules: Vec<Molecule>,
        proteins: Vec<Protein>,
        interactions: Vec<InteractionRecord>,
    ) -> Result<Self, CorpusError> {
        let mut molecule_index = HashMap::with_capacity(molecules.len());
        let mut n_bits = None;
        let mut embedding_dim = None;
        for (i, m) in molecules.iter().enumerate() {
            if molecule_index.insert(m.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    kind: "molecule",
                    id: m.id.clone(),
                });
            }
            check_uniform(
                &mut n_bits,
                m.fingerprint.n_bits(),
                &m.id,
                "fingerprint width",
            )?;
            if let Some(e) = &m.embedding {
                check_uniform(&mut embedding_dim, e.len(), &m.id, "embedding dimension")?;
            }
        }
        let mut protein_index = HashMap::with_capacity(proteins.len());
        for (i, p) in proteins.iter().enumerate() {
            if protein_index.insert(p.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    kind: "protein",
                    id: p.id.clone(),
                });
            }
        }
        let mut molecule_proteins: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut protein_molecules: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (index, rec) in interactions.iter().enumerate() {
            if !molecule_index.contains_key(&rec.molecule_id) {
                return Err(CorpusError::DanglingId {
                    index,
                    kind: "molecule",
                    id: rec.molecule_id.clone(),
                });
            }
            if !protein_index.contains_key(&rec.protein_id) {
                return Err(CorpusError::DanglingId {
                    index,
                    kind: "protein",
                    id: rec.protein_id.clone(),
                });
            }
            if rec.label {
                molecule_proteins
                    .entry(rec.molecule_id.clone())
                    .or_default()
                    .insert(rec.protein_id.clone());
                protein_molecules
                    .entry(rec.protein_id.clone())
                    .or_default()
                    .insert(rec.molecule_id.clone());
            }
        }
        Ok(Self {
            molecules,
            proteins,
            interactions,
            molecule_index,
            protein_index,
            molecule_proteins,
            protein_molecules,
            n_bits,
            embedding_dim,
        })
    }

    pub fn molecules(&self) -> &[Molecule] {
        &self.molecules
    }

    pub fn proteins(&self) -> &[Protein] {
        &self.proteins
    }

    pub fn interactions(&self) -> &[InteractionRecord] {
        &self.interactions
    }

    pub fn molecule(&self, id: &str) -> Option<&Molecule> {
        self.molecule_index.get(id).map(|&i| &self.molecules[i])
    }

    pub fn protein(&self, id: &str) -> Option<&Protein> {
        self.protein_index.get(id).map(|&i| &self.proteins[i])
    }

    /// Proteins with a positive interaction with `molecule_id`.
    pub fn proteins_of(&self, molecule_id: &str) -> &BTreeSet<String> {
        self.molecule_proteins.get(molecule_id).unwrap_or(&EMPTY)
    }

    /// Molecules with a positive interaction with `protein_id`.
    pub fn molecules_of(&self, protein_id: &str) -> &BTreeSet<String> {
        self.protein_molecules.get(protein_id).unwrap_or(&EMPTY)
    }

    pub fn molecule_protein_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.molecule_proteins
    }

    pub fn protein_molecule_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.protein_molecules
    }

    pub fn fingerprint_bits(&self) -> Option<usize> {
        self.n_bits
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }
}

fn check_uniform(
    slot: &mut Option<usize>,
    actual: usize,
    id: &str,
    what: &'static str,
) -> Result<(), CorpusError> {
    match *slot {
        None => {
            *slot = Some(actual);
            Ok(())
        }
        Some(expected) if expected == actual => Ok(()),
        Some(expected) => Err(CorpusError::Dimension {
            id: id.to_string(),
            what,
            expected,
            actual,
        }),
    }
}

pub fn load_corpus(
    molecules_path: &Path,
    proteins_path: &Path,
    interactions_path: &Path,
    strictness: Strictness,
) -> Result<Corpus, CorpusError> {
    let molecules = read_jsonl_checked(molecules_path, strictness, Molecule::check)?;
    let proteins = read_jsonl_checked(proteins_path, strictness, Protein::check)?;
    let interactions = read_jsonl(interactions_path, strictness)?;
    Corpus::new(molecules, proteins, interactions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceRule {
    UnknownQuery,
    UnknownCandidateMolecule,
    UnknownCandidateProtein,
    QueryAmongCandidates,
    TooManyCandidates,
    GroundTruthOutsideCandidates,
    GroundTruthSize,
    GroundTruthFraction,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub rule: InstanceRule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.rule, self.message)
    }
}

pub const MAX_CANDIDATE_MOLECULES: usize = 15;
pub const MIN_GROUND_TRUTH: usize = 1;
pub const MAX_GROUND_TRUTH: usize = 5;
/// Ground truth may cover at most this percentage of the candidate proteins.
pub const MAX_GROUND_TRUTH_PERCENT: usize = 70;

pub fn validate_instance(instance: &ProblemInstance, corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, message: String| out.push(Violation { rule, message });
    let q = &instance.query_molecule_id;
    if corpus.molecule(q).is_none() {
        push(
            InstanceRule::UnknownQuery,
            format!("query molecule {q:?} not in corpus"),
        );
    }
    for m in &instance.candidate_molecule_ids {
        if corpus.molecule(m).is_none() {
            push(
                InstanceRule::UnknownCandidateMolecule,
                format!("candidate molecule {m:?} not in corpus"),
            );
        }
    }
    for p in &instance.candidate_protein_ids {
        if corpus.protein(p).is_none() {
            push(
                InstanceRule::UnknownCandidateProtein,
                format!("candidate protein {p:?} not in corpus"),
            );
        }
    }
    if instance.candidate_molecule_ids.contains(q) {
        push(
            InstanceRule::QueryAmongCandidates,
            format!("query molecule {q:?} is listed as a candidate"),
        );
    }
    let n_cm = instance.candidate_molecule_ids.len();
    if n_cm > MAX_CANDIDATE_MOLECULES {
        push(
            InstanceRule::TooManyCandidates,
            format!("{n_cm} candidate molecules exceed the limit of {MAX_CANDIDATE_MOLECULES}"),
        );
    }
    let outside: Vec<&String> = instance
        .ground_truth_protein_ids
        .difference(&instance.candidate_protein_ids)
        .collect();
    if !outside.is_empty() {
        push(
            InstanceRule::GroundTruthOutsideCandidates,
            format!("ground truth proteins {outside:?} are not candidates"),
        );
    }
    let gt = instance.ground_truth_protein_ids.len();
    if !(MIN_GROUND_TRUTH..=MAX_GROUND_TRUTH).contains(&gt) {
        push(
            InstanceRule::GroundTruthSize,
            format!(
                "ground truth size {gt} is not between {MIN_GROUND_TRUTH} and {MAX_GROUND_TRUTH}"
            ),
        );
    }
    let n_cp = instance.candidate_protein_ids.len();
    if gt * 100 > MAX_GROUND_TRUTH_PERCENT * n_cp {
        push(
            InstanceRule::GroundTruthFraction,
            format!(
                "ground truth size {gt} exceeds {MAX_GROUND_TRUTH_PERCENT}% of {n_cp} candidate proteins"
            ),
        );
    }
    out
}
