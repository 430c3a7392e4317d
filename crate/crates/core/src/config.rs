use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Feature extractor used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Seeded hierarchical conv network driving the full architecture.
    #[default]
    Toy,
    /// Weight-free colour features; memory matching alone transfers masks.
    Analytic,
}

impl std::str::FromStr for EncoderMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "toy" => Ok(Self::Toy),
            "analytic" => Ok(Self::Analytic),
            other => Err(format!("unknown encoder mode `{other}` (expected toy|analytic)")),
        }
    }
}

/// Layer widths of the toy network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels of the stride-4 feature map.
    pub c4: usize,
    /// Channels of the stride-8 feature map.
    pub c8: usize,
    /// Stride-16 embedding width, shared by image, mask and object features.
    pub embed_dim: usize,
    /// Pixel-memory key width.
    pub key_dim: usize,
    /// Object queries per object (even).
    pub num_queries: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub decoder_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c4: 32,
            c8: 48,
            embed_dim: 64,
            key_dim: 32,
            num_queries: 8,
            layers: 3,
            heads: 2,
            ffn_mult: 2,
            decoder_dim: 32,
        }
    }
}

impl ModelConfig {
    /// Mask-encoder output width used by the reference model.
    pub const REFERENCE_EMBED_DIM: usize = 256;

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.c4 >= 1 && self.c8 >= 1 && self.embed_dim >= 1 && self.key_dim >= 1,
            Contract,
            "model widths must be >= 1"
        );
        ensure!(
            self.num_queries >= 2 && self.num_queries.is_multiple_of(2),
            Contract,
            "num_queries must be even and >= 2, got {}",
            self.num_queries
        );
        ensure!(
            self.heads >= 1 && self.embed_dim.is_multiple_of(self.heads),
            Contract,
            "embed_dim {} not divisible by heads {}",
            self.embed_dim,
            self.heads
        );
        ensure!(
            self.ffn_mult >= 1 && self.decoder_dim >= 1,
            Contract,
            "ffn_mult and decoder_dim must be >= 1"
        );
        Ok(())
    }
}
