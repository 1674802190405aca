use super::{Domain, Edge, GraphError, MolGraph, Result};
use crate::molio::vocab::{ATOM_PAD, BLOCK_PAD, POS_PAD};
use crate::molio::Vec3;

/// Graphs padded to a shared `n_max`; graph `b` owns rows `b*n_max..b*n_max + sizes[b]`.
///
/// Padded rows carry `<pad>` codes, zero coordinates and block id 0, and never
/// appear in `edges`. Blocks are numbered globally: graph `b` owns
/// `block_offsets[b]..block_offsets[b+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub n_max: usize,
    pub sizes: Vec<usize>,
    pub domains: Vec<Domain>,
    pub mask: Vec<bool>,
    pub atom_code: Vec<u16>,
    pub pos_code: Vec<u16>,
    pub atom_block_code: Vec<u16>,
    pub block_of: Vec<usize>,
    pub coords: Vec<Vec3>,
    pub block_offsets: Vec<usize>,
    pub block_code: Vec<u16>,
    pub block_chain: Vec<u16>,
    pub edges: Vec<Edge>,
}

impl GraphBatch {
    pub fn n_graphs(&self) -> usize {
        self.sizes.len()
    }

    /// Total padded rows, `n_graphs * n_max`.
    pub fn rows(&self) -> usize {
        self.mask.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_code.len()
    }

    pub fn real_atoms(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Padded row indices of real atoms, graph-major.
    pub fn real_rows(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&r| self.mask[r]).collect()
    }

    pub fn from_graphs(graphs: &[MolGraph]) -> GraphBatch {
        let n_max = graphs.iter().map(MolGraph::n_atoms).max().unwrap_or(0);
        Self::padded(graphs, n_max)
    }

    /// Pads to an explicit `n_max`, which must cover the largest graph.
    pub fn padded(graphs: &[MolGraph], n_max: usize) -> GraphBatch {
        let rows = graphs.len() * n_max;
        let mut out = GraphBatch {
            n_max,
            sizes: Vec::with_capacity(graphs.len()),
            domains: Vec::with_capacity(graphs.len()),
            mask: vec![false; rows],
            atom_code: vec![ATOM_PAD; rows],
            pos_code: vec![POS_PAD; rows],
            atom_block_code: vec![BLOCK_PAD; rows],
            block_of: vec![0; rows],
            coords: vec![[0.0; 3]; rows],
            block_offsets: vec![0],
            block_code: Vec::new(),
            block_chain: Vec::new(),
            edges: Vec::new(),
        };
        for (b, g) in graphs.iter().enumerate() {
            assert!(g.n_atoms() <= n_max, "graph larger than the padded width");
            let base = b * n_max;
            let block_base = out.block_code.len();
            for i in 0..g.n_atoms() {
                let r = base + i;
                out.mask[r] = true;
                out.atom_code[r] = g.atom_code[i];
                out.pos_code[r] = g.pos_code[i];
                out.atom_block_code[r] = g.block_code[g.block_of[i]];
                out.block_of[r] = block_base + g.block_of[i];
                out.coords[r] = g.coords[i];
            }
            out.edges.extend(g.edges.iter().map(|e| Edge { src: base + e.src, dst: base + e.dst, kind: e.kind }));
            out.block_code.extend(&g.block_code);
            out.block_chain.extend(&g.block_chain);
            out.block_offsets.push(out.block_code.len());
            out.sizes.push(g.n_atoms());
            out.domains.push(g.domain);
        }
        out
    }

    /// Recovers graph `b` exactly as it went in.
    pub fn graph(&self, b: usize) -> MolGraph {
        let base = b * self.n_max;
        let n = self.sizes[b];
        let (b0, b1) = (self.block_offsets[b], self.block_offsets[b + 1]);
        let rows = base..base + n;
        MolGraph {
            domain: self.domains[b],
            atom_code: self.atom_code[rows.clone()].to_vec(),
            pos_code: self.pos_code[rows.clone()].to_vec(),
            block_of: self.block_of[rows.clone()].iter().map(|&m| m - b0).collect(),
            block_code: self.block_code[b0..b1].to_vec(),
            block_chain: self.block_chain[b0..b1].to_vec(),
            coords: self.coords[rows].to_vec(),
            edges: self
                .edges
                .iter()
                .filter(|e| e.src >= base && e.src < base + self.n_max)
                .map(|e| Edge { src: e.src - base, dst: e.dst - base, kind: e.kind })
                .collect(),
        }
    }
}

/// Greedy packing in input order; a batch closes when the next graph would exceed `max_vertices`.
pub fn batch(graphs: &[MolGraph], max_vertices: usize) -> Result<Vec<GraphBatch>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut total = 0;
    for (i, g) in graphs.iter().enumerate() {
        let n = g.n_atoms();
        if n > max_vertices {
            return Err(GraphError::Capacity { size: n, cap: max_vertices });
        }
        if total + n > max_vertices {
            out.push(GraphBatch::from_graphs(&graphs[start..i]));
            start = i;
            total = 0;
        }
        total += n;
    }
    if start < graphs.len() {
        out.push(GraphBatch::from_graphs(&graphs[start..]));
    }
    Ok(out)
}

pub fn unbatch(batches: &[GraphBatch]) -> Vec<MolGraph> {
    batches.iter().flat_map(|bt| (0..bt.n_graphs()).map(move |b| bt.graph(b))).collect()
}
