use ept_core::denoise::NoiseMode;
use ept_core::graph::{build_graph, read_shard, write_shard};
use ept_core::molio::{parse_pdb_subset, parse_xyz};
use ept_core::train::{load_checkpoint, MetricsWriter, METRICS_HEADER};
use ept_core::{ModelConfig, MolGraph, RawStructure, RunConfig, Thresholds, TrainConfig, Trainer};

const WATER: &str = "3\nwater\nO 0.0 0.0 0.117\nH 0.0 0.757 -0.469\nH 0.0 -0.757 -0.469\n";
const METHANE: &str = "5\nmethane\nC 0 0 0\nH 0.629 0.629 0.629\nH -0.629 -0.629 0.629\nH -0.629 0.629 -0.629\nH 0.629 -0.629 -0.629\n";
const DIPEPTIDE: &str = "\
ATOM      1  N   GLY A   1       0.000   0.000   0.000  1.00  0.00           N
ATOM      2  CA  GLY A   1       1.458   0.000   0.000  1.00  0.00           C
ATOM      3  C   GLY A   1       2.009   1.420   0.000  1.00  0.00           C
ATOM      4  O   GLY A   1       1.250   2.390   0.000  1.00  0.00           O
ATOM      5  N   ALA A   2       3.332   1.536   0.000  1.00  0.00           N
ATOM      6  CA  ALA A   2       3.970   2.846   0.000  1.00  0.00           C
ATOM      7  C   ALA A   2       5.486   2.705   0.000  1.00  0.00           C
ATOM      8  O   ALA A   2       6.008   1.597   0.000  1.00  0.00           O
ATOM      9  CB  ALA A   2       3.500   3.650   1.220  1.00  0.00           C
END
";

fn dataset() -> Vec<MolGraph> {
    let t = Thresholds::default();
    let mut out: Vec<MolGraph> = [WATER, METHANE]
        .iter()
        .map(|s| build_graph(&RawStructure::Molecule(parse_xyz(s).unwrap()), t).unwrap())
        .collect();
    out.push(build_graph(&RawStructure::Protein(parse_pdb_subset(DIPEPTIDE).unwrap()), t).unwrap());
    out
}

fn config(mode: NoiseMode, seed: u64) -> RunConfig {
    let train = TrainConfig {
        epochs: 3,
        max_vertices: 40,
        sigma_t: 0.3,
        sigma_r: 0.3,
        mode,
        seed,
        ..TrainConfig::default()
    };
    RunConfig { model: ModelConfig::tiny(), train }
}

fn losses(graphs: &[MolGraph], mode: NoiseMode, seed: u64) -> Vec<u64> {
    let refs: Vec<&MolGraph> = graphs.iter().collect();
    let mut t = Trainer::new(config(mode, seed)).unwrap();
    let summaries = t.pretrain(&refs, None, |_, _| Ok(())).unwrap();
    summaries.iter().flat_map(|s| s.steps.iter().map(|m| m.loss.to_bits())).collect()
}

#[test]
fn parsed_structures_survive_a_shard_and_train_in_every_mode() {
    let graphs = dataset();
    assert_eq!(graphs[2].n_blocks(), 2);
    let mut bytes = Vec::new();
    write_shard(&mut bytes, &graphs).unwrap();
    let back = read_shard(bytes.as_slice()).unwrap();
    assert_eq!(back, graphs);
    for mode in [NoiseMode::Atom, NoiseMode::BlockT, NoiseMode::BlockC] {
        let bits = losses(&back, mode, 3);
        assert!(!bits.is_empty());
        assert!(bits.iter().all(|b| f64::from_bits(*b).is_finite()), "{mode:?}");
    }
}

#[test]
fn training_is_a_function_of_the_seed() {
    let graphs = dataset();
    assert_eq!(losses(&graphs, NoiseMode::BlockC, 1), losses(&graphs, NoiseMode::BlockC, 1));
    assert_ne!(losses(&graphs, NoiseMode::BlockC, 1), losses(&graphs, NoiseMode::BlockC, 2));
}

#[test]
fn metrics_and_checkpoints_follow_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let graphs = dataset();
    let refs: Vec<&MolGraph> = graphs.iter().collect();
    let mut t = Trainer::new(config(NoiseMode::BlockC, 4)).unwrap();
    let path = dir.path().join("metrics.csv");
    let mut writer = MetricsWriter::open(&path).unwrap();
    let ck = dir.path().join("last.ept");
    t.pretrain(&refs, Some(&mut writer), |tr, _| {
        ept_core::train::save_checkpoint(&ck, &tr.checkpoint())
    })
    .unwrap();
    writer.flush().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count() as u64, t.step());
    let restored = load_checkpoint(&ck).unwrap();
    assert_eq!(restored.optimizer.step, t.step());
    assert_eq!(restored.epochs_done, 3);
    assert_eq!(restored.params, t.params);
}
