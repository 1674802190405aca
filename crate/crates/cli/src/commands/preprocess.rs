use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use ept_core::graph::{build_graph, write_shard, EDGE_KINDS};
use ept_core::{Domain, MolGraph, Thresholds};
use rayon::prelude::*;

use crate::args::PreprocessArgs;
use crate::failure::{data, Classify, Result};
use crate::output::{expand, prepare, read_structures, Manifest};

fn is_shard(name: &str) -> bool {
    name.starts_with("shard-") && name.ends_with(".eptg")
}

pub fn run(a: PreprocessArgs) -> Result<()> {
    let thresholds = Thresholds::new(a.delta_topo, a.delta_max).usage_err("invalid thresholds")?;
    let inputs = expand(&a.inputs)?;
    if inputs.is_empty() {
        return Err(data("no inputs: no file matches the given patterns"));
    }
    prepare(&a.out, is_shard, false)?;

    // Files parse in parallel; results keep input order so shards are reproducible.
    let results: Vec<(PathBuf, std::result::Result<Vec<MolGraph>, String>)> = inputs
        .par_iter()
        .map(|p| {
            let graphs = read_structures(p).and_then(|structures| {
                structures.iter().map(|s| build_graph(s, thresholds).map_err(|e| e.to_string())).collect()
            });
            (p.clone(), graphs)
        })
        .collect();
    let mut graphs = Vec::new();
    let mut failed = 0;
    for (path, r) in results {
        match r {
            Ok(g) => graphs.extend(g),
            Err(e) => {
                failed += 1;
                eprintln!("skipped {}: {e}", path.display());
            }
        }
    }
    if graphs.is_empty() {
        return Err(data(format!("all {failed} input files failed to parse")));
    }

    let mut written = Vec::new();
    for (k, chunk) in graphs.chunks(a.shard_size as usize).enumerate() {
        let path = a.out.out.join(format!("shard-{k:05}.eptg"));
        let f = fs::File::create(&path).data_err(format!("creating {}", path.display()))?;
        write_shard(BufWriter::new(f), chunk).data_err(format!("writing {}", path.display()))?;
        written.push(path);
    }
    print_stats(&graphs, failed, written.len());
    Manifest::new("preprocess", 0, &inputs).write(&a.out.out)
}

fn print_stats(graphs: &[MolGraph], failed: usize, shards: usize) {
    let small = graphs.iter().filter(|g| g.domain == Domain::SmallMolecule).count();
    println!("graphs {} (small molecules {small}, proteins {}), failed files {failed}, shards {shards}", graphs.len(), graphs.len() - small);
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kinds = [0usize; EDGE_KINDS];
    for g in graphs {
        for m in g.members() {
            *sizes.entry(m.len()).or_default() += 1;
        }
        for e in &g.edges {
            kinds[usize::from(e.kind)] += 1;
        }
    }
    let hist: Vec<String> = sizes.iter().map(|(s, n)| format!("{s}:{n}")).collect();
    println!("block sizes {}", hist.join(" "));
    println!("edge types 0:{} 1:{} 2:{}", kinds[0], kinds[1], kinds[2]);
}
