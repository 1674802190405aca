//! Equivariant full-atom transformer with block-level denoising pretraining.

pub mod autodiff;
pub mod denoise;
pub mod graph;
pub mod model;
pub mod molio;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{CustomOp, Gradients, Tape, Var};
pub use tensor::{Tensor, TensorError};
pub use graph::{Domain, Edge, GraphBatch, GraphError, MolGraph, Thresholds};
pub use molio::{Element, MoleculeKind, ParseError, RawMolecule, RawProtein, RawStructure, Vec3};
pub use model::{ModelConfig, ModelParams};
pub use denoise::{IgSo3Table, NoiseMode, NoiseSample};
pub use train::{RunConfig, TrainConfig, TrainError, Trainer};
