//! Structure-file ingestion: XYZ, SDF (V2000 subset) and PDB (ATOM subset).

mod pdb;
mod sdf;
pub mod vocab;
mod xyz;

pub use pdb::parse_pdb_subset;
pub use sdf::parse_sdf_subset;
pub use vocab::{position_code, residue_block_code, Element, MoleculeKind};
pub use xyz::{parse_xyz, parse_xyz_frames, write_xyz};

use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
}

impl ParseError {
    pub(crate) fn at(line: usize, message: impl Into<String>) -> Self {
        Self::Syntax { line, message: message.into() }
    }

    /// 1-based line number of the offending input, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Syntax { line, .. } => Some(*line),
            Self::Unsupported(_) => None,
        }
    }
}

/// A molecule as read from a file. Coordinates are in Å.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMolecule {
    pub title: String,
    pub elements: Vec<Element>,
    pub coords: Vec<Vec3>,
    /// Present only when the source format carries connectivity.
    pub bonds: Option<Vec<(usize, usize)>>,
    pub kind: MoleculeKind,
}

impl RawMolecule {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProteinAtom {
    pub name: String,
    pub element: Element,
    pub coords: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Residue {
    pub name: String,
    pub seq: i32,
    pub insertion: char,
    pub atoms: Vec<ProteinAtom>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub id: char,
    pub residues: Vec<Residue>,
}

/// Chains in order of first appearance; residues in file order within each chain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawProtein {
    pub chains: Vec<Chain>,
}

impl RawProtein {
    pub fn residue_count(&self) -> usize {
        self.chains.iter().map(|c| c.residues.len()).sum()
    }

    pub fn atom_count(&self) -> usize {
        self.chains.iter().flat_map(|c| &c.residues).map(|r| r.atoms.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.atom_count() == 0
    }
}

/// Either input domain, ready for graph construction.
#[derive(Clone, Debug, PartialEq)]
pub enum RawStructure {
    Molecule(RawMolecule),
    Protein(RawProtein),
}

pub(crate) fn parse_coord(field: &str, line: usize, axis: &str) -> Result<f64, ParseError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| ParseError::at(line, format!("unparseable {axis} coordinate {:?}", field.trim())))?;
    if !v.is_finite() {
        return Err(ParseError::at(line, format!("non-finite {axis} coordinate")));
    }
    Ok(v)
}
