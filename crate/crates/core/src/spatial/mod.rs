//! Depth-aware refinement: linear-increasing depth bins, the expectation
//! head, the foreground-weighted depth loss, depth positional embeddings,
//! pyramid averaging and the depth cross-attention fusion block.

mod adapter;
mod bins;
mod field;
mod pe;
mod pyramid;

pub use adapter::{box_region_mask, fuse_depth, DepthBranch, DepthContext, DepthOutput, FusionBlock};
pub use bins::{depth_expectation, discretize_depth, lid_bins, DepthBins, DEFAULT_D_MAX, DEFAULT_D_MIN};
pub use field::{foreground_mask, weighted_depth_loss, weighted_depth_loss_var, DepthField};
pub use pe::{depth_pe, DepthPeTable, DEFAULT_PE_ENTRIES};
pub use pyramid::{bilinear_matrix, pyramid_average, pyramid_average_var, FeatureGrid};
