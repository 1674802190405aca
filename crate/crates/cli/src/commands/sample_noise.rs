use std::fmt::Write as _;
use std::fs;

use ept_core::denoise::perturb_graph;
use ept_core::graph::build_graph;
use ept_core::train::stream_rng;
use ept_core::{Element, IgSo3Table, RawStructure, Thresholds, Vec3};

use crate::args::SampleNoiseArgs;
use crate::failure::{data, usage, Classify, Result};
use crate::output::{prepare, read_structures, resolve_seed, Manifest};

pub const FRAMES: &str = "frames.xyz";
pub const TARGETS: &str = "targets.csv";
pub const TARGETS_HEADER: &str = "frame,kind,index,x,y,z";

fn elements(s: &RawStructure) -> Vec<Element> {
    match s {
        RawStructure::Molecule(m) => m.elements.clone(),
        RawStructure::Protein(p) => p.chains.iter().flat_map(|c| &c.residues).flat_map(|r| &r.atoms).map(|a| a.element).collect(),
    }
}

/// Frames keep full precision (shortest round-trip text) so rigidity survives the file.
fn push_frame(out: &mut String, title: &str, elements: &[Element], coords: &[Vec3]) {
    let _ = writeln!(out, "{}\n{title}", coords.len());
    for (e, c) in elements.iter().zip(coords) {
        let _ = writeln!(out, "{} {} {} {}", e.symbol(), c[0], c[1], c[2]);
    }
}

fn push_rows(out: &mut String, frame: u64, kind: &str, rows: Option<&Vec<Vec3>>) {
    for (i, v) in rows.into_iter().flatten().enumerate() {
        let _ = writeln!(out, "{frame},{kind},{i},{},{},{}", v[0], v[1], v[2]);
    }
}

pub fn run(a: SampleNoiseArgs) -> Result<()> {
    if !(a.sigma_t >= 0.0 && a.sigma_t.is_finite()) || !(a.sigma_r >= 0.0 && a.sigma_r.is_finite()) {
        return Err(usage("noise scales must be finite and non-negative"));
    }
    let seed = resolve_seed(a.seed, 0)?;
    let structures = read_structures(&a.input).map_err(|e| data(format!("{}: {e}", a.input.display())))?;
    let [structure] = structures.as_slice() else {
        return Err(data(format!("{} holds {} structures; expected one", a.input.display(), structures.len())));
    };
    let graph = build_graph(structure, Thresholds::default()).data_err(format!("building graph of {}", a.input.display()))?;
    let elements = elements(structure);
    let table = if a.sigma_r > 0.0 { Some(IgSo3Table::build_auto(a.sigma_r).usage_err("rotation noise")?) } else { None };
    prepare(&a.out, |n| n == FRAMES || n == TARGETS, false)?;

    let mut frames = String::new();
    let mut targets = format!("{TARGETS_HEADER}\n");
    for k in 0..a.n {
        let s = perturb_graph(&graph, a.mode, a.sigma_t, table.as_ref(), &mut stream_rng(seed, k));
        let title = format!("frame {k} mode {} sigma_t {} sigma_r {}", a.mode.name(), a.sigma_t, s.sigma_r);
        push_frame(&mut frames, &title, &elements, &s.perturbed);
        push_rows(&mut targets, k, "eps_atom", s.eps_atom.as_ref());
        push_rows(&mut targets, k, "eps_block", s.eps_block.as_ref());
        push_rows(&mut targets, k, "omega", s.omega.as_ref());
        push_rows(&mut targets, k, "score", s.score.as_ref());
    }
    let out = &a.out.out;
    fs::write(out.join(FRAMES), frames).data_err("writing frames")?;
    fs::write(out.join(TARGETS), targets).data_err("writing targets")?;
    Manifest::new("sample-noise", seed, std::slice::from_ref(&a.input)).write(out)?;
    println!("{} frames of {} atoms in {} blocks", a.n, graph.n_atoms(), graph.n_blocks());
    Ok(())
}
