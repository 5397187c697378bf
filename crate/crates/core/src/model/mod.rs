//! Network architecture: configuration, parameter layout, blocks and the
//! two-stage forward pass.

pub mod blocks;
mod config;
pub mod layout;
mod network;
mod weights;

pub use blocks::{attdrn_block, ddirb_block, feature_extractor, se_block};
pub use config::{ArchConfig, BlockMode};
pub use network::{dehaze, draco_forward, DracoOutput};
pub use weights::{DracoWeights, ParamVars};
