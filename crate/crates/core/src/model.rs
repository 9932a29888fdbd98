//! Domain records shared by every stage of the search, and their on-disk
//! JSONL shapes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FINGERPRINT_BITS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("fingerprint width must be positive")]
    ZeroWidth,
    #[error("hex string has {actual} digits, expected {expected} for {n_bits} bits")]
    HexLength {
        n_bits: usize,
        expected: usize,
        actual: usize,
    },
    #[error("fingerprint hex must be lowercase [0-9a-f], found {0:?}")]
    BadDigit(char),
    #[error("bits set beyond declared width {0}")]
    PaddingBits(usize),
    #[error("bit index {index} out of range for width {n_bits}")]
    OutOfRange { index: usize, n_bits: usize },
}

/// Fixed-width bit vector. Bit `i` carries weight `2^i`; the hex encoding
/// writes the resulting integer most-significant nibble first, zero padded
/// to `ceil(n_bits / 4)` digits.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    n_bits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(n_bits: usize) -> Result<Self, FingerprintError> {
        if n_bits == 0 {
            return Err(FingerprintError::ZeroWidth);
        }
        Ok(Self {
            n_bits,
            words: vec![0; n_bits.div_ceil(64)],
        })
    }

    pub fn from_bits<I>(n_bits: usize, bits: I) -> Result<Self, FingerprintError>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut fp = Self::zeros(n_bits)?;
        for index in bits {
            fp.set(index)?;
        }
        Ok(fp)
    }

    pub fn set(&mut self, index: usize) -> Result<(), FingerprintError> {
        if index >= self.n_bits {
            return Err(FingerprintError::OutOfRange {
                index,
                n_bits: self.n_bits,
            });
        }
        self.words[index / 64] |= 1u64 << (index % 64);
        Ok(())
    }

    pub fn get(&self, index: usize) -> bool {
        index < self.n_bits && self.words[index / 64] >> (index % 64) & 1 == 1
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_bits).filter(|&i| self.get(i))
    }

    pub fn to_hex(&self) -> String {
        let digits = self.n_bits.div_ceil(4);
        let mut out = String::with_capacity(digits);
        for d in (0..digits).rev() {
            let bit = d * 4;
            let nibble = (self.words[bit / 64] >> (bit % 64)) & 0xf;
            out.push(char::from_digit(nibble as u32, 16).unwrap());
        }
        out
    }

    pub fn from_hex(n_bits: usize, hex: &str) -> Result<Self, FingerprintError> {
        let mut fp = Self::zeros(n_bits)?;
        let expected = n_bits.div_ceil(4);
        if hex.len() != expected {
            return Err(FingerprintError::HexLength {
                n_bits,
                expected,
                actual: hex.len(),
            });
        }
        for (pos, c) in hex.chars().enumerate() {
            let nibble = match c {
                '0'..='9' | 'a'..='f' => c.to_digit(16).unwrap() as u64,
                other => return Err(FingerprintError::BadDigit(other)),
            };
            let bit = (expected - 1 - pos) * 4;
            if bit + 4 > n_bits && nibble >> (n_bits - bit) != 0 {
                return Err(FingerprintError::PaddingBits(n_bits));
            }
            fp.words[bit / 64] |= nibble << (bit % 64);
        }
        Ok(fp)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({}:{})", self.n_bits, self.to_hex())
    }
}

#[derive(Serialize, Deserialize)]
struct FingerprintRepr {
    n_bits: usize,
    hex: String,
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FingerprintRepr {
            n_bits: self.n_bits,
            hex: self.to_hex(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = FingerprintRepr::deserialize(deserializer)?;
        Fingerprint::from_hex(repr.n_bits, &repr.hex).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralProfile {
    pub chiral_center_count: u32,
    pub scaffold: String,
    pub functional_groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyschemProfile {
    /// Daltons.
    pub molecular_weight: f64,
    pub logp: f64,
    /// Square angstroms.
    pub psa: f64,
    pub hbd: u32,
    pub hba: u32,
    pub rotatable_bonds: u32,
    pub heavy_atoms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub id: String,
    pub smiles: String,
    pub fingerprint: Fingerprint,
    /// Precomputed embedding; molecules without one are skipped by the
    /// cosine channel.
    pub embedding: Option<Vec<f64>>,
    pub structural: StructuralProfile,
    pub physchem: PhyschemProfile,
}

impl Molecule {
    /// Record-level invariants that do not depend on the rest of the corpus.
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("molecule id is empty".into());
        }
        if self.smiles.is_empty() {
            return Err(format!("molecule {}: smiles is empty", self.id));
        }
        if self
            .structural
            .functional_groups
            .iter()
            .any(String::is_empty)
        {
            return Err(format!(
                "molecule {}: empty functional group label",
                self.id
            ));
        }
        let p = &self.physchem;
        if p.molecular_weight <= 0.0 || !p.molecular_weight.is_finite() {
            return Err(format!(
                "molecule {}: molecular_weight must be > 0",
                self.id
            ));
        }
        if p.psa < 0.0 || !p.psa.is_finite() {
            return Err(format!("molecule {}: psa must be >= 0", self.id));
        }
        if !p.logp.is_finite() {
            return Err(format!("molecule {}: logp must be finite", self.id));
        }
        if let Some(e) = &self.embedding {
            if e.iter().any(|x| !x.is_finite()) {
                return Err(format!("molecule {}: non-finite embedding value", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Residue {
    pub name: String,
    pub number: i32,
    pub chain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PocketDescriptor {
    pub pocket_label: String,
    pub residues: Vec<Residue>,
    pub interaction_types: Vec<String>,
    pub geometry_notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteratureRef {
    pub source_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protein {
    pub id: String,
    pub pdb_id: Option<String>,
    pub name: String,
    pub pocket_type: String,
    pub pockets: Vec<PocketDescriptor>,
    pub literature: Vec<LiteratureRef>,
}

impl Protein {
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("protein id is empty".into());
        }
        for pocket in &self.pockets {
            if pocket.residues.is_empty() {
                return Err(format!(
                    "protein {}: pocket {:?} has no residues",
                    self.id, pocket.pocket_label
                ));
            }
        }
        if self.literature.iter().any(|l| l.source_id.is_empty()) {
            return Err(format!(
                "protein {}: literature entry without source_id",
                self.id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub molecule_id: String,
    pub protein_id: String,
    pub label: bool,
}

/// One query molecule with its candidate pools. Id sets are ordered so
/// they serialize as sorted arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub query_molecule_id: String,
    pub candidate_molecule_ids: BTreeSet<String>,
    pub candidate_protein_ids: BTreeSet<String>,
    pub ground_truth_protein_ids: BTreeSet<String>,
}

/// A problem instance with the candidate molecules removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineInstance {
    pub query_molecule_id: String,
    pub candidate_protein_ids: BTreeSet<String>,
    pub ground_truth_protein_ids: BTreeSet<String>,
}
