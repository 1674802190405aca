//! The equivariant transformer: embedding, attention and FFN layers, force and pooled heads.
//!
//! Row layouts: scalars `H` are `R×h`; vectors `V` are `3R×h` with row
//! `3·atom + component`, so `V·W` mixes channels without touching components.

pub mod attention;
mod net;
mod params;

pub use attention::{AttentionGeometry, AttentionKernel, KernelFaults, ScratchMeter};
pub use net::{
    force_head, forward, pooled_head, rbf_expand, FeatureState, FeatureVars, ForwardOptions, ModelFaults, PoolMode,
    Prediction,
};
pub use params::{BoundParams, ModelParams};

use serde::{Deserialize, Serialize};

use crate::graph::Thresholds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub h: usize,
    pub h_ffn: usize,
    pub h_edge: usize,
    pub h_rbf: usize,
    pub layers: usize,
    pub heads: usize,
    pub delta_topo: f64,
    pub delta_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { h: 512, h_ffn: 512, h_edge: 64, h_rbf: 64, layers: 6, heads: 8, delta_topo: 1.6, delta_max: 10.0 }
    }
}

impl ModelConfig {
    /// Small profile for CPU runs and the verification suite.
    pub fn desk() -> Self {
        Self { h: 64, h_ffn: 64, h_edge: 16, h_rbf: 16, layers: 3, heads: 4, ..Self::default() }
    }

    /// Minimal profile for exhaustive per-entry gradient checks.
    pub fn tiny() -> Self {
        Self { h: 8, h_ffn: 8, h_edge: 4, h_rbf: 4, layers: 2, heads: 2, ..Self::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.h / self.heads
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { topo: self.delta_topo, max: self.delta_max }
    }

    pub fn validate(&self) -> Result<(), String> {
        let dims = [("h", self.h), ("h_ffn", self.h_ffn), ("h_edge", self.h_edge), ("h_rbf", self.h_rbf), ("heads", self.heads)];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(format!("model.{name} must be positive"));
        }
        if self.h % self.heads != 0 {
            return Err(format!("model.h ({}) must be divisible by model.heads ({})", self.h, self.heads));
        }
        if self.h_rbf < 2 {
            return Err("model.h_rbf must be at least 2".into());
        }
        Thresholds::new(self.delta_topo, self.delta_max).map_err(|e| e.to_string())?;
        Ok(())
    }
}
