//! Network layouts for the supervised CNN and the two convolutional autoencoders.

use crate::error::{Error, Result};
use crate::nn::{Activation, GraphBuilder, ModelGraph, OddExtent};

pub const CNN_TAG: &str = "cnn";
pub const KD_CAE_TAG: &str = "kd-cae";
pub const NI_CAE_TAG: &str = "ni-cae";

pub const CNN_BLOCKS: usize = 5;
pub const NI_CAE_FILTERS: [usize; 5] = [128, 64, 16, 8, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    /// `(C, H, W)`.
    pub input: [usize; 3],
    pub filters: usize,
    pub hidden_units: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input: [3, 200, 200],
            filters: 16,
            hidden_units: 64,
        }
    }
}

/// Five `conv 3x3 -> relu -> maxpool 2x2` blocks, then a relu hidden layer
/// and one sigmoid unit. Pooling floors odd extents (200 -> 100 -> 50 -> 25 -> 12 -> 6).
pub fn build_cnn(config: &CnnConfig, seed: u64) -> Result<ModelGraph> {
    if config.filters == 0 || config.hidden_units == 0 {
        return Err(Error::invalid("build_cnn", "filters and hidden units must be positive"));
    }
    let mut b = GraphBuilder::new(config.input);
    for _ in 0..CNN_BLOCKS {
        b = b
            .conv(config.filters, 3, 1, 1)?
            .act(Activation::Relu)?
            .maxpool(2, OddExtent::Truncate)?;
    }
    let b = b
        .flatten()?
        .dense(config.hidden_units)?
        .act(Activation::Relu)?
        .dense(1)?
        .act(Activation::Sigmoid)?;
    ModelGraph::from_builder(CNN_TAG, b, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdCaeConfig {
    pub channels: usize,
    /// Square input extent; must be a multiple of 16.
    pub size: usize,
    /// Filter counts of the three encoder stages.
    pub filters: [usize; 3],
}

impl Default for KdCaeConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            size: 128,
            filters: [32, 64, 128],
        }
    }
}

/// Six weighted layers per side. The encoder alternates stride-1 and
/// stride-2 3x3 convolutions (four halvings, 128 -> 8); the decoder mirrors
/// it with 4x4 stride-2 transpose convolutions and a final sigmoid conv.
/// The latent code is the last encoder activation (`filters[2] x size/16 x size/16`).
pub fn build_kd_cae(config: &KdCaeConfig, seed: u64) -> Result<ModelGraph> {
    let [f1, f2, f3] = config.filters;
    if config.size == 0 || config.size % 16 != 0 {
        return Err(Error::invalid("build_kd_cae", format!("input size {} is not a multiple of 16", config.size)));
    }
    if !matches!(config.channels, 1 | 3) || config.filters.contains(&0) {
        return Err(Error::invalid("build_kd_cae", "channels must be 1 or 3 and filters positive"));
    }
    let relu = Activation::Relu;
    let b = GraphBuilder::new([config.channels, config.size, config.size])
        .conv(f1, 3, 1, 1)?
        .act(relu)?
        .conv(f1, 3, 2, 1)?
        .act(relu)?
        .conv(f2, 3, 2, 1)?
        .act(relu)?
        .conv(f2, 3, 1, 1)?
        .act(relu)?
        .conv(f3, 3, 2, 1)?
        .act(relu)?
        .conv(f3, 3, 2, 1)?
        .act(relu)?
        .mark_latent()
        .conv_transpose(f3, 4, 2, 1)?
        .act(relu)?
        .conv_transpose(f2, 4, 2, 1)?
        .act(relu)?
        .conv(f2, 3, 1, 1)?
        .act(relu)?
        .conv_transpose(f1, 4, 2, 1)?
        .act(relu)?
        .conv_transpose(f1, 4, 2, 1)?
        .act(relu)?
        .conv(config.channels, 3, 1, 1)?
        .act(Activation::Sigmoid)?;
    ModelGraph::from_builder(KD_CAE_TAG, b, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiCaeConfig {
    pub channels: usize,
    /// Square input extent; must be a multiple of 32.
    pub size: usize,
    pub filters: [usize; 5],
    pub bottleneck: usize,
}

impl Default for NiCaeConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            size: 128,
            filters: NI_CAE_FILTERS,
            bottleneck: 512,
        }
    }
}

/// Encoder: five `conv 3x3 -> relu -> maxpool 2x2` stages. The flattened
/// code passes a dense bottleneck (the latent) and a second dense layer that
/// restores the pre-flatten shape. The decoder walks the filter list backwards
/// with 2x2 stride-2 transpose convolutions and ends in a 1x1 sigmoid conv.
pub fn build_ni_cae(config: &NiCaeConfig, seed: u64) -> Result<ModelGraph> {
    if config.size == 0 || config.size % 32 != 0 {
        return Err(Error::invalid("build_ni_cae", format!("input size {} is not a multiple of 32", config.size)));
    }
    if !matches!(config.channels, 1 | 3) || config.filters.contains(&0) || config.bottleneck == 0 {
        return Err(Error::invalid("build_ni_cae", "channels must be 1 or 3, filters and bottleneck positive"));
    }
    let relu = Activation::Relu;
    let mut b = GraphBuilder::new([config.channels, config.size, config.size]);
    for &f in &config.filters {
        b = b.conv(f, 3, 1, 1)?.act(relu)?.maxpool(2, OddExtent::Error)?;
    }
    let code_shape = b.shape();
    let code_len: usize = code_shape.iter().product();
    b = b
        .flatten()?
        .dense(config.bottleneck)?
        .act(relu)?
        .mark_latent()
        .dense(code_len)?
        .act(relu)?
        .reshape(code_shape)?;
    for &f in config.filters.iter().rev() {
        b = b.conv_transpose(f, 2, 2, 0)?.act(relu)?;
    }
    let b = b.conv(config.channels, 1, 1, 0)?.act(Activation::Sigmoid)?;
    ModelGraph::from_builder(NI_CAE_TAG, b, seed)
}
