//! Fractional cross-attention feature machinery: patch embedding, the
//! four-branch fractional Fourier feature extractor, bidirectional
//! cross-attention, the assembled dual-stream block and level transitions.
//!
//! Everything here is forward-only. Weights live in a [`WeightSet`] keyed by
//! name; the `*_layout` functions give the exact tensor shapes each operation
//! expects and [`WeightSet::audit`] checks a set against them.

mod attention;
mod block;
mod extract;
mod layers;
mod weights;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, Dims};

pub use attention::{cross_attention, cross_attention_with_probs, AttentionWeights};
pub use block::{fca_block, level_chain, level_down, level_up, patch_embed};
pub use extract::{extract_branches, frft_feature_extract, BranchOutputs, BRANCH_ORDERS};
pub use layers::{conv3d, gelu, layer_norm, linear};
pub use weights::{
    attention_layout, block_layout, branch_param_formula, count_branch_params, count_flops, extractor_layout,
    level_down_layout, level_up_layout, parse_ratio, patch_embed_layout, AuditRow, BranchCounts, Layout,
    Tensor, WeightSet, BRANCH_PARAM_FACTORS,
};

/// Spatially arranged features, layout `(z, y, x, c)` with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    level: usize,
    dims: Dims,
    channels: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(level: usize, dims: Dims, channels: usize, data: Vec<f64>) -> Result<Self> {
        crate::volume::check_dims(dims)?;
        if channels == 0 {
            return Err(Error::Shape("token grid needs at least one channel".into()));
        }
        let expected = voxel_count(dims) * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "token grid {dims:?}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            level,
            dims,
            channels,
            data,
        })
    }

    pub fn zeros(level: usize, dims: Dims, channels: usize) -> Result<Self> {
        Self::new(level, dims, channels, vec![0.0; voxel_count(dims) * channels])
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of tokens `D * H * W`.
    pub fn n_tokens(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// `(level, D, H, W, C)`.
    pub fn shape(&self) -> (usize, Dims, usize) {
        (self.level, self.dims, self.channels)
    }

    fn same_shape(&self, other: &TokenGrid) -> Result<()> {
        if self.dims != other.dims || self.channels != other.channels {
            return Err(Error::Shape(format!(
                "token grids differ: {:?}x{} vs {:?}x{}",
                self.dims, self.channels, other.dims, other.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchEmbedConfig {
    /// `(P_z, P_y, P_x)`.
    pub patch: [usize; 3],
    pub embed_dim: usize,
    pub bias: bool,
}

impl Default for PatchEmbedConfig {
    fn default() -> Self {
        Self {
            patch: [4, 4, 4],
            embed_dim: 48,
            bias: false,
        }
    }
}

impl PatchEmbedConfig {
    pub fn patch_volume(&self) -> usize {
        self.patch.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcaConfig {
    /// Channel coefficient `alpha` in `(0, 1]`.
    pub channel_coeff: Ratio<u64>,
    pub heads: usize,
    pub levels: usize,
    pub blocks_per_level: Vec<usize>,
    pub spatial_kernel: usize,
    pub spectral_kernel: usize,
    pub mlp_ratio: usize,
}

impl Default for FcaConfig {
    fn default() -> Self {
        Self {
            channel_coeff: Ratio::from_integer(1),
            heads: 4,
            levels: 3,
            blocks_per_level: vec![2, 2, 2],
            spatial_kernel: 3,
            spectral_kernel: 1,
            mlp_ratio: 4,
        }
    }
}

impl FcaConfig {
    /// Channels each branch processes, `alpha * C`; must be a positive integer.
    pub fn branch_channels(&self, channels: usize) -> Result<usize> {
        let a = self.channel_coeff;
        if *a.numer() == 0 || a > Ratio::from_integer(1) {
            return Err(Error::Config(format!(
                "channel coefficient {a} must lie in (0, 1]"
            )));
        }
        let split = a * Ratio::from_integer(channels as u64);
        if !split.is_integer() || split.to_integer() == 0 {
            return Err(Error::Config(format!(
                "alpha * C = {a} * {channels} is not a positive integer"
            )));
        }
        Ok(split.to_integer() as usize)
    }

    pub fn validate_for(&self, channels: usize) -> Result<()> {
        self.branch_channels(channels)?;
        if self.heads == 0 || channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels {channels} not divisible by {} heads",
                self.heads
            )));
        }
        if self.spatial_kernel % 2 == 0 || self.spectral_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        if self.blocks_per_level.len() != self.levels {
            return Err(Error::Config(format!(
                "{} block counts for {} levels",
                self.blocks_per_level.len(),
                self.levels
            )));
        }
        Ok(())
    }
}
