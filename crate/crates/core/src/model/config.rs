use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Architecture hyperparameters shared by the segmentation and occlusion networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub class_count: usize,
    /// Output widths of the five stride-2 encoder blocks.
    pub encoder_channels: Vec<usize>,
    pub gn_groups: usize,
    pub leaky_slope: f32,
    /// Decoder blocks (1-based) that open with a global-context block.
    pub gc_decoder_blocks: BTreeSet<usize>,
    /// Decoder blocks (1-based) whose deep-supervision head is emitted in the pyramid.
    pub aux_head_blocks: BTreeSet<usize>,
    /// Bottleneck reduction inside the global-context transform.
    pub gc_ratio: usize,
    /// Encoder widths of the hand-segmentation sub-network.
    pub seg_channels: Vec<usize>,
    /// Standard deviation of the Gaussian used for every convolution weight.
    pub init_std: f32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 6,
            class_count: 3,
            encoder_channels: vec![16, 32, 64, 96, 128],
            gn_groups: 8,
            leaky_slope: 0.1,
            gc_decoder_blocks: [1, 2, 3].into_iter().collect(),
            aux_head_blocks: [1, 2, 3, 4].into_iter().collect(),
            gc_ratio: 4,
            seg_channels: vec![8, 16, 32],
            init_std: 0.1,
        }
    }
}

pub const ENCODER_BLOCKS: usize = 5;

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(config("in_channels must be positive"));
        }
        if self.class_count != 3 {
            return Err(config(format!(
                "class_count must be 3 (background, object, hand), got {}",
                self.class_count
            )));
        }
        if self.encoder_channels.len() != ENCODER_BLOCKS {
            return Err(config(format!(
                "encoder_channels needs {ENCODER_BLOCKS} entries, got {}",
                self.encoder_channels.len()
            )));
        }
        if self.seg_channels.is_empty() {
            return Err(config("seg_channels must not be empty"));
        }
        if self.gn_groups == 0 {
            return Err(config("gn_groups must be positive"));
        }
        for &c in self.encoder_channels.iter().chain(&self.seg_channels) {
            if c == 0 {
                return Err(config("channel widths must be positive"));
            }
            if c % self.gn_groups != 0 {
                return Err(config(format!(
                    "gn_groups={} does not divide channel count {c}",
                    self.gn_groups
                )));
            }
        }
        if let Some(&b) = self.gc_decoder_blocks.iter().find(|&&b| !(1..=5).contains(&b)) {
            return Err(config(format!("gc_decoder_blocks entry {b} outside 1..=5")));
        }
        if let Some(&b) = self.aux_head_blocks.iter().find(|&&b| !(1..=4).contains(&b)) {
            return Err(config(format!("aux_head_blocks entry {b} outside 1..=4")));
        }
        if self.gc_ratio == 0 {
            return Err(config("gc_ratio must be positive"));
        }
        for &b in &self.gc_decoder_blocks {
            // GC runs on the upsampled input of decoder block b, i.e. the previous block's width.
            let width = self.decoder_input_channels(b);
            if width < self.gc_ratio {
                return Err(config(format!(
                    "gc_ratio={} exceeds width {width} of decoder block {b}",
                    self.gc_ratio
                )));
            }
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(config("init_std must be positive and finite"));
        }
        if !self.leaky_slope.is_finite() {
            return Err(config("leaky_slope must be finite"));
        }
        Ok(())
    }

    /// Output width of decoder block `b` (1-based): mirrors the encoder, the last two share e1's width.
    pub fn decoder_channels(&self, b: usize) -> usize {
        let e = &self.encoder_channels;
        match b {
            1..=4 => e[4 - b],
            _ => e[0],
        }
    }

    /// Width entering decoder block `b`.
    pub fn decoder_input_channels(&self, b: usize) -> usize {
        if b == 1 {
            self.encoder_channels[ENCODER_BLOCKS - 1]
        } else {
            self.decoder_channels(b - 1)
        }
    }

    /// Width of the skip feature merged in decoder block `b`; block 5 merges the raw input.
    pub fn skip_channels(&self, b: usize) -> usize {
        match b {
            1..=4 => self.encoder_channels[4 - b],
            _ => self.in_channels,
        }
    }

    /// Inputs must be divisible by `2^5`.
    pub fn size_multiple(&self) -> usize {
        1 << ENCODER_BLOCKS
    }
}
