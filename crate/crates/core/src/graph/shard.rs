//! `EPTG` shards: little-endian binary graph collections.
//!
//! ```text
//! magic "EPTG" | version u16 | graph count u32
//! per graph: domain u8 | N u32 | M u32
//!            atom_code [N]u16 | pos_code [N]u16 | block_of [N]u32
//!            block_code [M]u16 | block_chain [M]u16 | coords [3N]f64
//!            E u32 | edges [E](u32 src, u32 dst, u8 kind)
//! ```

use super::{Domain, Edge, GraphError, MolGraph, Result, EDGE_KINDS};
use crate::molio::vocab::{ATOM_VOCAB_SIZE, BLOCK_VOCAB_SIZE, POSITION_VOCAB_SIZE};
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use std::io::{ErrorKind, Read, Write};

pub const SHARD_MAGIC: &[u8; 4] = b"EPTG";
pub const SHARD_VERSION: u16 = 1;

pub fn write_shard<W: Write>(mut w: W, graphs: &[MolGraph]) -> Result<()> {
    w.write_all(SHARD_MAGIC)?;
    w.write_u16::<LE>(SHARD_VERSION)?;
    w.write_u32::<LE>(count(graphs.len())?)?;
    for g in graphs {
        w.write_u8(g.domain.as_u8())?;
        w.write_u32::<LE>(count(g.n_atoms())?)?;
        w.write_u32::<LE>(count(g.n_blocks())?)?;
        for &c in g.atom_code.iter().chain(&g.pos_code) {
            w.write_u16::<LE>(c)?;
        }
        for &b in &g.block_of {
            w.write_u32::<LE>(count(b)?)?;
        }
        for &c in g.block_code.iter().chain(&g.block_chain) {
            w.write_u16::<LE>(c)?;
        }
        for &x in g.coords.iter().flatten() {
            w.write_f64::<LE>(x)?;
        }
        w.write_u32::<LE>(count(g.edges.len())?)?;
        for e in &g.edges {
            w.write_u32::<LE>(count(e.src)?)?;
            w.write_u32::<LE>(count(e.dst)?)?;
            w.write_u8(e.kind)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn count(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| GraphError::Format(format!("{v} does not fit in u32")))
}

fn truncated(e: std::io::Error) -> GraphError {
    if e.kind() == ErrorKind::UnexpectedEof {
        GraphError::Format("truncated shard".into())
    } else {
        GraphError::Io(e)
    }
}

fn codes<R: Read>(r: &mut R, n: usize, limit: usize, what: &str) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let c = r.read_u16::<LE>().map_err(truncated)?;
        if c as usize >= limit {
            return Err(GraphError::Format(format!("{what} {c} outside vocabulary of {limit}")));
        }
        out.push(c);
    }
    Ok(out)
}

pub fn read_shard<R: Read>(mut r: R) -> Result<Vec<MolGraph>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != SHARD_MAGIC {
        return Err(GraphError::Format(format!("bad magic {magic:?}, expected \"EPTG\"")));
    }
    let version = r.read_u16::<LE>().map_err(truncated)?;
    if version != SHARD_VERSION {
        return Err(GraphError::Format(format!("unsupported shard version {version}")));
    }
    let n_graphs = r.read_u32::<LE>().map_err(truncated)? as usize;
    let mut graphs = Vec::with_capacity(n_graphs.min(1 << 16));
    for gi in 0..n_graphs {
        let dom = r.read_u8().map_err(truncated)?;
        let domain = Domain::from_u8(dom).ok_or_else(|| GraphError::Format(format!("graph {gi}: domain tag {dom}")))?;
        let n = r.read_u32::<LE>().map_err(truncated)? as usize;
        let m = r.read_u32::<LE>().map_err(truncated)? as usize;
        let atom_code = codes(&mut r, n, ATOM_VOCAB_SIZE, "atom code")?;
        let pos_code = codes(&mut r, n, POSITION_VOCAB_SIZE, "position code")?;
        let mut block_of = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let b = r.read_u32::<LE>().map_err(truncated)? as usize;
            if b >= m {
                return Err(GraphError::Format(format!("graph {gi}: block id {b} of {m}")));
            }
            block_of.push(b);
        }
        let block_code = codes(&mut r, m, BLOCK_VOCAB_SIZE, "block code")?;
        let block_chain = codes(&mut r, m, u16::MAX as usize + 1, "chain id")?;
        let mut coords = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let mut c = [0.0; 3];
            for x in &mut c {
                *x = r.read_f64::<LE>().map_err(truncated)?;
            }
            coords.push(c);
        }
        let n_edges = r.read_u32::<LE>().map_err(truncated)? as usize;
        let mut edges = Vec::with_capacity(n_edges.min(1 << 22));
        for _ in 0..n_edges {
            let src = r.read_u32::<LE>().map_err(truncated)? as usize;
            let dst = r.read_u32::<LE>().map_err(truncated)? as usize;
            let kind = r.read_u8().map_err(truncated)?;
            if src >= n || dst >= n || kind as usize >= EDGE_KINDS {
                return Err(GraphError::Format(format!("graph {gi}: malformed edge ({src}, {dst}, {kind})")));
            }
            edges.push(Edge { src, dst, kind });
        }
        graphs.push(MolGraph { domain, atom_code, pos_code, block_of, block_code, block_chain, coords, edges });
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Thresholds};
    use crate::molio::{parse_xyz, RawStructure};

    fn sample() -> Vec<MolGraph> {
        let xyz = "4\n\nC 0 0 0\nO 1.2 0 0\nH -0.5 0.9 0\nH -0.5 -0.9 0\n";
        let g = build_graph(&RawStructure::Molecule(parse_xyz(xyz).unwrap()), Thresholds::default()).unwrap();
        vec![g.clone(), g]
    }

    #[test]
    fn round_trip() {
        let gs = sample();
        let mut buf = Vec::new();
        write_shard(&mut buf, &gs).unwrap();
        assert_eq!(&buf[..4], b"EPTG");
        assert_eq!(read_shard(&buf[..]).unwrap(), gs);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        write_shard(&mut buf, &sample()).unwrap();
        for cut in [0, 3, 7, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(read_shard(&buf[..cut]), Err(GraphError::Format(_))), "cut at {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_shard(&bad[..]).is_err());
        let mut bad_version = buf;
        bad_version[4] = 9;
        assert!(read_shard(&bad_version[..]).is_err());
    }
}
