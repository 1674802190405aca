//! Shared fixtures for the criterion benchmarks under `benches/`.

use ept_core::graph::GraphBatch;
use ept_core::train::stream_rng;
use ept_core::verify::toy::toy_graphs;
use ept_core::{ModelConfig, ModelParams, MolGraph};

pub const SEED: u64 = 11;

/// `count` toy molecules under the thresholds of `cfg`.
pub fn toy_set(cfg: &ModelConfig, count: usize) -> Vec<MolGraph> {
    toy_graphs(count, SEED, cfg.thresholds())
}

/// One padded batch of `count` toy molecules.
pub fn toy_batch(cfg: &ModelConfig, count: usize) -> GraphBatch {
    GraphBatch::from_graphs(&toy_set(cfg, count))
}

pub fn params(cfg: &ModelConfig) -> ModelParams {
    ModelParams::init(cfg, &mut stream_rng(SEED, u64::MAX))
}
