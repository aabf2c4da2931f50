//! Dual-task road segmentation: an area branch and an edge branch joined by
//! feature bridges, with cross-layer graph fusion on the area decoder.

pub mod ablation;
pub mod blocks;
pub mod cgm;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fbm;
pub mod gradcheck;
pub mod graph;
pub mod heatmap;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use blocks::{BlockKind, BlockSpec, ResidualBlock};
pub use cgm::{p_map, Cgm, CgmVariant, DecoderStrategy, EncoderStrategy};
pub use error::{Error, Result};
pub use fbm::{q_map, BridgeSite, Fbm, FbmVariant};
pub use graph::{Graph, Var};
pub use network::{attach_side_branch, detach_side_branch, Network, NetworkConfig, Placement, Prediction};
pub use nn::{Ctx, Mode};
pub use params::ParamStore;
pub use tensor::{FeatureMap, Tensor};
