//! Three-level feature pyramids: a toy backbone and the FPN, PAFPN and
//! HAFPN necks.

pub mod backbone;
pub mod levels;
pub mod model;
pub mod neck;

pub use backbone::{toy_backbone, Backbone, IMAGE_CHANNELS};
pub use levels::{FeatureLevels, LEVEL_NAMES};
pub use model::PyramidModel;
pub use neck::{
    fpn_fuse, hafpn_fuse, pafpn_fuse, AttentionBlock, AttentionMode, BottomUp, MergeMode, Neck, NeckCache, NeckConfig,
    Placement, Variant,
};
