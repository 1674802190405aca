//! Block-enhanced molecular graphs: block assignment, typed edges, batching and shards.

mod batch;
mod build;
mod shard;

pub use batch::{batch, unbatch, GraphBatch};
pub use build::{
    assign_blocks_protein, assign_blocks_small, block_distance, block_distances, build_graph, classify_edges,
    random_residue_segment, segment_graph, HYDROGEN_ATTACH_RADIUS,
};
pub use shard::{read_shard, write_shard, SHARD_MAGIC, SHARD_VERSION};

use crate::molio::{ParseError, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("empty structure: no atoms to build a graph from")]
    Empty,
    #[error("atom {atom}: {message}")]
    Structural { atom: usize, message: String },
    #[error("graph with {size} atoms exceeds the batch capacity of {cap}")]
    Capacity { size: usize, cap: usize },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("invalid thresholds: need 0 < topo ({topo}) < max ({max})")]
    Thresholds { topo: f64, max: f64 },
    #[error("shard format: {0}")]
    Format(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Distance cutoffs in Å for typing inter-block edges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub topo: f64,
    pub max: f64,
}

impl Thresholds {
    pub fn new(topo: f64, max: f64) -> Result<Self> {
        if !(topo > 0.0 && topo < max && max.is_finite()) {
            return Err(GraphError::Thresholds { topo, max });
        }
        Ok(Self { topo, max })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { topo: 1.6, max: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    SmallMolecule,
    Protein,
}

impl Domain {
    pub fn as_u8(self) -> u8 {
        match self {
            Domain::SmallMolecule => 0,
            Domain::Protein => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Domain::SmallMolecule),
            1 => Some(Domain::Protein),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::SmallMolecule => "small-molecule",
            Domain::Protein => "protein",
        }
    }
}

pub const EDGE_INTRA: u8 = 0;
pub const EDGE_TOPO: u8 = 1;
pub const EDGE_SPATIAL: u8 = 2;
pub const EDGE_KINDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: u8,
}

/// Atoms grouped into blocks, with typed edges.
///
/// `block_chain` records which chain each block came from (all zero for small
/// molecules) so that residue windows can be cut after preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct MolGraph {
    pub domain: Domain,
    pub atom_code: Vec<u16>,
    pub pos_code: Vec<u16>,
    pub block_of: Vec<usize>,
    pub block_code: Vec<u16>,
    pub block_chain: Vec<u16>,
    pub coords: Vec<Vec3>,
    pub edges: Vec<Edge>,
}

impl MolGraph {
    pub fn n_atoms(&self) -> usize {
        self.atom_code.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_code.len()
    }

    /// Atom indices of each block, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        block_members(&self.block_of, self.n_blocks())
    }

    /// Block code of each atom's block.
    pub fn atom_block_code(&self) -> Vec<u16> {
        self.block_of.iter().map(|&m| self.block_code[m]).collect()
    }

    /// Same atoms and blocks at new coordinates, with edges re-typed.
    pub fn with_coords(&self, coords: Vec<Vec3>, thresholds: Thresholds) -> MolGraph {
        assert_eq!(coords.len(), self.n_atoms(), "coordinate count must match atom count");
        let mut g = MolGraph { coords, edges: Vec::new(), ..self.clone() };
        g.edges = classify_edges(&g.coords, &g.block_of, g.n_blocks(), thresholds);
        g
    }

    /// Atom relabeling: new atom `k` is old atom `perm[k]`. Blocks keep their ids.
    pub fn permute_atoms(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.n_atoms());
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| Edge { src: inverse[e.src], dst: inverse[e.dst], kind: e.kind })
            .collect();
        edges.sort();
        MolGraph {
            domain: self.domain,
            atom_code: perm.iter().map(|&o| self.atom_code[o]).collect(),
            pos_code: perm.iter().map(|&o| self.pos_code[o]).collect(),
            block_of: perm.iter().map(|&o| self.block_of[o]).collect(),
            block_code: self.block_code.clone(),
            block_chain: self.block_chain.clone(),
            coords: perm.iter().map(|&o| self.coords[o]).collect(),
            edges,
        }
    }

    /// Checks every structural invariant; used on shard load and in tests.
    pub fn validate(&self, thresholds: Thresholds) -> Result<()> {
        let n = self.n_atoms();
        let m = self.n_blocks();
        let bad = |msg: String| Err(GraphError::Invalid(msg));
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if self.pos_code.len() != n || self.block_of.len() != n || self.coords.len() != n {
            return bad("per-atom arrays differ in length".into());
        }
        if self.block_chain.len() != m {
            return bad("block chain ids do not match block count".into());
        }
        let mut seen = vec![false; m];
        for &b in &self.block_of {
            if b >= m {
                return bad(format!("block id {b} out of range {m}"));
            }
            seen[b] = true;
        }
        if seen.iter().any(|s| !s) {
            return bad("block ids do not cover 0..M contiguously".into());
        }
        if self.coords.iter().flatten().any(|c| !c.is_finite()) {
            return bad("non-finite coordinate".into());
        }
        let mut set = std::collections::HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.src >= n || e.dst >= n || e.src == e.dst || e.kind as usize >= EDGE_KINDS {
                return bad(format!("malformed edge {e:?}"));
            }
            set.insert((e.src, e.dst, e.kind));
        }
        for e in &self.edges {
            if !set.contains(&(e.dst, e.src, e.kind)) {
                return bad(format!("edge {e:?} lacks its reverse"));
            }
        }
        let expected = classify_edges(&self.coords, &self.block_of, m, thresholds);
        if expected.len() != self.edges.len() || expected.iter().any(|e| !set.contains(&(e.src, e.dst, e.kind))) {
            return bad("edge list disagrees with the block distances".into());
        }
        Ok(())
    }
}

pub(crate) fn block_members(block_of: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); m];
    for (i, &b) in block_of.iter().enumerate() {
        members[b].push(i);
    }
    members
}

pub(crate) fn dist(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
