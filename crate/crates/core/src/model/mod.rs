//! The hand-segmentation sub-network and the occlusion-prediction network.

mod blocks;
mod config;
mod net;

pub use blocks::{
    confidence_map, conv_block, de_block, de_enhance, de_weight_field, gc_block, gc_block_parts, Conv,
    ConvBlock, DeBlock, GcBlock, Head, Norm,
};
pub use config::{NetworkConfig, ENCODER_BLOCKS};
pub use net::{
    init_params, occ_forward, seg_forward, sigmoid, DecoderBlock, LogitsPyramid, Networks, OcclusionNet,
    PyramidVars, SegNet,
};
pub use crate::nn::{ParameterSet, Tensor as FeatureMap};
