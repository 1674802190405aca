use super::{dist, Domain, Edge, GraphError, MolGraph, Result, Thresholds, EDGE_INTRA, EDGE_SPATIAL, EDGE_TOPO};
use crate::molio::vocab::POS_SMALL_MOLECULE;
use crate::molio::{position_code, residue_block_code, Chain, MoleculeKind, RawMolecule, RawProtein, RawStructure, Vec3};
use rand::Rng;

/// Bondless inputs attach each hydrogen to the nearest heavy atom within this radius (Å).
pub const HYDROGEN_ATTACH_RADIUS: f64 = 1.3;

/// One block per heavy atom, numbered in file order; hydrogens join a bonded heavy atom.
///
/// With bonds, a hydrogen joins its lowest-index heavy neighbour. Without
/// bonds it joins the nearest heavy atom within [`HYDROGEN_ATTACH_RADIUS`].
pub fn assign_blocks_small(mol: &RawMolecule) -> Result<(Vec<usize>, Vec<u16>)> {
    let n = mol.len();
    let mut block_of = vec![usize::MAX; n];
    let mut block_code = Vec::new();
    for (i, e) in mol.elements.iter().enumerate() {
        if !e.is_hydrogen() {
            block_of[i] = block_code.len();
            block_code.push(e.block_code());
        }
    }
    let neighbours = mol.bonds.as_ref().map(|bonds| {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in bonds {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    });
    for i in 0..n {
        if !mol.elements[i].is_hydrogen() {
            continue;
        }
        let host = match &neighbours {
            Some(adj) => adj[i].iter().copied().filter(|&j| !mol.elements[j].is_hydrogen()).min(),
            None => (0..n)
                .filter(|&j| !mol.elements[j].is_hydrogen())
                .map(|j| (dist(&mol.coords[i], &mol.coords[j]), j))
                .filter(|&(d, _)| d <= HYDROGEN_ATTACH_RADIUS)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, j)| j),
        };
        let host = host.ok_or_else(|| GraphError::Structural {
            atom: i,
            message: if neighbours.is_some() {
                "hydrogen is not bonded to any heavy atom".into()
            } else {
                format!("hydrogen has no heavy atom within {HYDROGEN_ATTACH_RADIUS} Å")
            },
        })?;
        block_of[i] = block_of[host];
    }
    Ok((block_of, block_code))
}

/// One block per residue in chain order; atoms are numbered chain, residue, then file order.
pub fn assign_blocks_protein(prot: &RawProtein) -> (Vec<usize>, Vec<u16>) {
    let mut block_of = Vec::new();
    let mut block_code = Vec::new();
    for residue in prot.chains.iter().flat_map(|c| &c.residues) {
        let b = block_code.len();
        block_code.push(residue_block_code(&residue.name));
        block_of.extend(std::iter::repeat_n(b, residue.atoms.len()));
    }
    (block_of, block_code)
}

/// Minimum atom-pair distance between two blocks given their member lists.
pub fn block_distance(coords: &[Vec3], members: &[Vec<usize>], mi: usize, mj: usize) -> f64 {
    if mi == mj {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for &a in &members[mi] {
        for &b in &members[mj] {
            best = best.min(dist(&coords[a], &coords[b]));
        }
    }
    best
}

/// Symmetric M×M matrix of block distances, row-major.
pub fn block_distances(coords: &[Vec3], block_of: &[usize], m: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; m * m];
    for i in 0..m {
        d[i * m + i] = 0.0;
    }
    for a in 0..coords.len() {
        for b in a + 1..coords.len() {
            let (ma, mb) = (block_of[a], block_of[b]);
            if ma != mb {
                let r = dist(&coords[a], &coords[b]);
                if r < d[ma * m + mb] {
                    d[ma * m + mb] = r;
                    d[mb * m + ma] = r;
                }
            }
        }
    }
    d
}

/// Typed directed edges for every atom pair, both directions, sorted by (src, dst).
pub fn classify_edges(coords: &[Vec3], block_of: &[usize], m: usize, t: Thresholds) -> Vec<Edge> {
    let bd = block_distances(coords, block_of, m);
    let n = coords.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (mi, mj) = (block_of[i], block_of[j]);
            let kind = if mi == mj {
                EDGE_INTRA
            } else {
                let d = bd[mi * m + mj];
                if d <= t.topo {
                    EDGE_TOPO
                } else if d <= t.max {
                    EDGE_SPATIAL
                } else {
                    continue;
                }
            };
            edges.push(Edge { src: i, dst: j, kind });
        }
    }
    edges
}

pub fn build_graph(raw: &RawStructure, thresholds: Thresholds) -> Result<MolGraph> {
    let g = match raw {
        RawStructure::Molecule(mol) => {
            if mol.is_empty() {
                return Err(GraphError::Empty);
            }
            let (block_of, block_code) = assign_blocks_small(mol)?;
            MolGraph {
                domain: Domain::SmallMolecule,
                atom_code: mol.elements.iter().map(|e| e.atom_code()).collect(),
                pos_code: vec![POS_SMALL_MOLECULE; mol.len()],
                block_chain: vec![0; block_code.len()],
                block_of,
                block_code,
                coords: mol.coords.clone(),
                edges: Vec::new(),
            }
        }
        RawStructure::Protein(prot) => {
            if prot.is_empty() {
                return Err(GraphError::Empty);
            }
            let nonempty = RawProtein {
                chains: prot
                    .chains
                    .iter()
                    .map(|c| Chain {
                        id: c.id,
                        residues: c.residues.iter().filter(|r| !r.atoms.is_empty()).cloned().collect(),
                    })
                    .collect(),
            };
            let (block_of, block_code) = assign_blocks_protein(&nonempty);
            let mut block_chain = Vec::with_capacity(block_code.len());
            let mut atoms = Vec::new();
            for (ci, chain) in nonempty.chains.iter().enumerate() {
                for residue in &chain.residues {
                    block_chain.push(ci as u16);
                    atoms.extend(&residue.atoms);
                }
            }
            MolGraph {
                domain: Domain::Protein,
                atom_code: atoms.iter().map(|a| a.element.atom_code()).collect(),
                pos_code: atoms.iter().map(|a| position_code(&a.name, MoleculeKind::Protein)).collect(),
                block_of,
                block_code,
                block_chain,
                coords: atoms.iter().map(|a| a.coords).collect(),
                edges: Vec::new(),
            }
        }
    };
    let edges = classify_edges(&g.coords, &g.block_of, g.n_blocks(), thresholds);
    Ok(MolGraph { edges, ..g })
}

/// Windows of `k` consecutive residues: (chain, start) for every chain long enough.
fn windows(chain_lengths: &[usize], k: usize) -> Vec<(usize, usize)> {
    chain_lengths
        .iter()
        .enumerate()
        .flat_map(|(c, &len)| (0..(len + 1).saturating_sub(k)).map(move |s| (c, s)))
        .collect()
}

/// `k` consecutive residues of one chain, the window drawn uniformly over all chains.
/// Returns the whole protein when no chain has `k` residues.
pub fn random_residue_segment<R: Rng + ?Sized>(prot: &RawProtein, k: usize, rng: &mut R) -> RawProtein {
    let lengths: Vec<usize> = prot.chains.iter().map(|c| c.residues.len()).collect();
    let all = windows(&lengths, k);
    if k == 0 || all.is_empty() {
        return prot.clone();
    }
    let (c, s) = all[rng.random_range(0..all.len())];
    let chain = &prot.chains[c];
    RawProtein { chains: vec![Chain { id: chain.id, residues: chain.residues[s..s + k].to_vec() }] }
}

/// Graph-level counterpart of [`random_residue_segment`] for preprocessed proteins.
///
/// Small molecules and proteins without a long enough chain are returned unchanged.
pub fn segment_graph<R: Rng + ?Sized>(g: &MolGraph, k: usize, thresholds: Thresholds, rng: &mut R) -> MolGraph {
    if g.domain != Domain::Protein || k == 0 {
        return g.clone();
    }
    // Blocks of one chain are contiguous in preprocessed proteins.
    let mut starts: Vec<(u16, usize, usize)> = Vec::new();
    for (b, &c) in g.block_chain.iter().enumerate() {
        match starts.last_mut() {
            Some((lc, _, len)) if *lc == c => *len += 1,
            _ => starts.push((c, b, 1)),
        }
    }
    let lengths: Vec<usize> = starts.iter().map(|s| s.2).collect();
    let all = windows(&lengths, k);
    if all.is_empty() {
        return g.clone();
    }
    let (c, s) = all[rng.random_range(0..all.len())];
    let first = starts[c].1 + s;
    let keep: Vec<usize> = (0..g.n_atoms()).filter(|&i| (first..first + k).contains(&g.block_of[i])).collect();
    let sub = MolGraph {
        domain: g.domain,
        atom_code: keep.iter().map(|&i| g.atom_code[i]).collect(),
        pos_code: keep.iter().map(|&i| g.pos_code[i]).collect(),
        block_of: keep.iter().map(|&i| g.block_of[i] - first).collect(),
        block_code: g.block_code[first..first + k].to_vec(),
        block_chain: g.block_chain[first..first + k].to_vec(),
        coords: keep.iter().map(|&i| g.coords[i]).collect(),
        edges: Vec::new(),
    };
    let edges = classify_edges(&sub.coords, &sub.block_of, k, thresholds);
    MolGraph { edges, ..sub }
}
