use crate::model::{Fingerprint, Molecule, PhyschemProfile, Protein, StructuralProfile};

pub fn molecule(id: &str, bits: &[usize]) -> Molecule {
    Molecule {
        id: id.into(),
        smiles: "C".into(),
        fingerprint: Fingerprint::from_bits(64, bits.iter().copied()).unwrap(),
        embedding: None,
        structural: StructuralProfile {
            chiral_center_count: 0,
            scaffold: "c1ccccc1".into(),
            functional_groups: vec![],
        },
        physchem: PhyschemProfile {
            molecular_weight: 100.0,
            logp: 1.0,
            psa: 10.0,
            hbd: 0,
            hba: 1,
            rotatable_bonds: 0,
            heavy_atoms: 7,
        },
    }
}

pub fn protein(id: &str) -> Protein {
    Protein {
        id: id.into(),
        pdb_id: None,
        name: format!("protein {id}"),
        pocket_type: "orthosteric".into(),
        pockets: vec![],
        literature: vec![],
    }
}
