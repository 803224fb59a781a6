//! Dual-branch patch tokenizer: false-color and spectral cubes become
//! token grids, fused per patch by a learnable gate.

mod embed;
mod gate;
mod inflate;
mod patches;

pub use embed::{embed_patches, TokenGrid};
pub use gate::{
    alpha_content_t, alpha_positional_t, compute_alpha, fuse_tokens, fuse_tokens_t, FusionParams,
    GateParams,
};
pub use inflate::inflate_embedding;
pub use patches::{extract_patches, PatchSet};
