//! Spectral mixing blocks, hierarchical stages and the classifier.

mod block;
mod config;
mod cost;
mod network;
mod params;
mod tensor;

pub use block::{
    apply_masks, block_backward, block_forward, dsm_mix, dsm_mix_backward, BlockCache, MixCache,
    SpectralContext,
};
pub use config::{MaskMode, ModelConfig, SpectrumLength, StageShape, VARIANTS};
pub use cost::{block_cost, ceil_log2, count_params_flops, BlockCost, CostEntry, CostReport};
pub use network::{patch_embed, patch_merge, Model, Tape};
pub use params::{
    BlockParams, LayerNormParams, Linear, ModelParams, ParamKind, ParamMut, ParamRef, StageParams,
};
pub use tensor::TokenTensor;
