//! Index spaces for atom types, block types and in-block position codes.
//!
//! | vocabulary | indices | meaning |
//! |------------|---------|---------|
//! | atom       | 0–2     | `<pad>`, `<mask>`, `<global>` |
//! |            | 3–120   | elements H..Og |
//! | block      | 0–3     | `<pad>`, `<mask>`, `<unk>`, `<global>` |
//! |            | 4–23    | the 20 standard amino acids |
//! |            | 24–141  | elements H..Og |
//! | position   | 0–2     | `<pad>`, `<mask>`, `<global>` |
//! |            | 3–12    | protein atom positions N, CA, C, O, β, γ, δ, ε, ζ, η |
//! |            | 13      | `<sml>`, any atom of a small molecule |

use std::fmt;

pub const ATOM_VOCAB_SIZE: usize = 121;
pub const BLOCK_VOCAB_SIZE: usize = 142;
pub const POSITION_VOCAB_SIZE: usize = 14;

pub const ATOM_PAD: u16 = 0;
pub const ATOM_MASK: u16 = 1;
pub const ATOM_GLOBAL: u16 = 2;

pub const BLOCK_PAD: u16 = 0;
pub const BLOCK_MASK: u16 = 1;
pub const BLOCK_UNK: u16 = 2;
pub const BLOCK_GLOBAL: u16 = 3;

pub const POS_PAD: u16 = 0;
pub const POS_MASK: u16 = 1;
pub const POS_GLOBAL: u16 = 2;
pub const POS_N: u16 = 3;
pub const POS_CA: u16 = 4;
pub const POS_C: u16 = 5;
pub const POS_O: u16 = 6;
/// β; γ..η follow consecutively up to 12.
pub const POS_BETA: u16 = 7;
pub const POS_LAST_PROTEIN: u16 = 12;
pub const POS_SMALL_MOLECULE: u16 = 13;

const ELEMENT_BASE_ATOM: u16 = 3;
const AMINO_ACID_BASE: u16 = 4;
const ELEMENT_BASE_BLOCK: u16 = 24;

const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce",
    "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir",
    "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc",
    "Lv", "Ts", "Og",
];

pub const AMINO_ACIDS: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET", "PHE", "PRO", "SER",
    "THR", "TRP", "TYR", "VAL",
];

/// A chemical element identified by atomic number (1..=118).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);

    pub fn from_atomic_number(z: u8) -> Option<Self> {
        (1..=118).contains(&z).then_some(Self(z))
    }

    /// Case-insensitive symbol lookup (`"CL"`, `"cl"` and `"Cl"` all match).
    pub fn from_symbol(symbol: &str) -> Option<Self> {
        let s = symbol.trim();
        SYMBOLS
            .iter()
            .position(|e| e.eq_ignore_ascii_case(s))
            .map(|i| Self(i as u8 + 1))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize - 1]
    }

    pub fn is_hydrogen(self) -> bool {
        self.0 == 1
    }

    pub fn atom_code(self) -> u16 {
        ELEMENT_BASE_ATOM + self.0 as u16 - 1
    }

    pub fn block_code(self) -> u16 {
        ELEMENT_BASE_BLOCK + self.0 as u16 - 1
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoleculeKind {
    SmallMolecule,
    Protein,
}

/// Block code for a residue name; anything outside the 20 standard amino acids is `<unk>`.
pub fn residue_block_code(name: &str) -> u16 {
    let name = name.trim();
    AMINO_ACIDS
        .iter()
        .position(|aa| aa.eq_ignore_ascii_case(name))
        .map_or(BLOCK_UNK, |i| AMINO_ACID_BASE + i as u16)
}

/// Position code of an atom within its block.
///
/// Protein backbone atoms map N→3, CA→4, C→5, O→6. Side-chain atoms use the
/// remoteness letter after the element letter (B, G, D, E, Z, H → 7..12);
/// anything else lands in the last bucket, 12.
pub fn position_code(atom_name: &str, kind: MoleculeKind) -> u16 {
    if kind == MoleculeKind::SmallMolecule {
        return POS_SMALL_MOLECULE;
    }
    let name = atom_name.trim().trim_start_matches(|c: char| c.is_ascii_digit());
    match name {
        "N" => return POS_N,
        "CA" => return POS_CA,
        "C" => return POS_C,
        "O" => return POS_O,
        _ => {}
    }
    let remoteness = name.chars().nth(1).map(|c| c.to_ascii_uppercase());
    match remoteness {
        Some('B') => POS_BETA,
        Some('G') => POS_BETA + 1,
        Some('D') => POS_BETA + 2,
        Some('E') => POS_BETA + 3,
        Some('Z') => POS_BETA + 4,
        Some('H') => POS_BETA + 5,
        _ => POS_LAST_PROTEIN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_ranges() {
        assert_eq!(SYMBOLS.len(), 118);
        let first = Element::from_atomic_number(1).unwrap();
        let last = Element::from_atomic_number(118).unwrap();
        assert_eq!(first.atom_code(), 3);
        assert_eq!(last.atom_code() as usize, ATOM_VOCAB_SIZE - 1);
        assert_eq!(first.block_code(), 24);
        assert_eq!(last.block_code() as usize, BLOCK_VOCAB_SIZE - 1);
        assert_eq!(residue_block_code("ALA"), 4);
        assert_eq!(residue_block_code("VAL"), 23);
        assert_eq!(POS_SMALL_MOLECULE as usize, POSITION_VOCAB_SIZE - 1);
        assert!(Element::from_atomic_number(0).is_none());
        assert!(Element::from_atomic_number(119).is_none());
    }

    #[test]
    fn symbols_are_case_insensitive() {
        assert_eq!(Element::from_symbol("CL").unwrap().symbol(), "Cl");
        assert_eq!(Element::from_symbol("o").unwrap(), Element::O);
        assert!(Element::from_symbol("Xx").is_none());
    }

    #[test]
    fn unknown_residue_is_unk() {
        assert_eq!(residue_block_code("XYZ"), BLOCK_UNK);
        assert_eq!(BLOCK_UNK, 2);
    }

    #[test]
    fn position_codes() {
        assert_eq!(position_code("CA", MoleculeKind::Protein), 4);
        assert_eq!(position_code("N", MoleculeKind::Protein), 3);
        assert_eq!(position_code("C", MoleculeKind::Protein), 5);
        assert_eq!(position_code("O", MoleculeKind::Protein), 6);
        assert_eq!(position_code("anything", MoleculeKind::SmallMolecule), 13);
        let cb = position_code("CB", MoleculeKind::Protein);
        let cg = position_code("CG", MoleculeKind::Protein);
        assert_ne!(cb, cg);
        assert_eq!(position_code("NE2", MoleculeKind::Protein), 10);
        assert_eq!(position_code("1HB", MoleculeKind::Protein), 7);
        assert_eq!(position_code("OXT", MoleculeKind::Protein), 12);
        assert_eq!(position_code("H", MoleculeKind::Protein), 12);
    }

    #[test]
    fn codes_never_special() {
        for z in 1..=118u8 {
            let e = Element::from_atomic_number(z).unwrap();
            assert!(e.atom_code() > ATOM_GLOBAL);
            assert!(e.block_code() > BLOCK_GLOBAL);
        }
        for name in ["N", "CA", "C", "O", "CB", "OG1", "HZ3", "X"] {
            let p = position_code(name, MoleculeKind::Protein);
            assert!((POS_N..=POS_LAST_PROTEIN).contains(&p));
            assert!(p != POS_PAD && p != POS_MASK && p != POS_GLOBAL);
        }
    }
}
