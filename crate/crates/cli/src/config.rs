//! JSON run configuration; command-line flags override file values.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vos_core::memory::{route_hyperparams, MemoryConfig};
use vos_core::{EncoderMode, ModelConfig, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_mem_frames: Option<usize>,
    pub min_mem_frames: Option<usize>,
    pub top_k: Option<usize>,
    pub model: ModelConfig,
    pub encoder: EncoderMode,
    pub seed: u64,
    pub scales: Vec<Scale>,
    pub flip: bool,
    /// One fusion weight per TTA variant; all ones when absent.
    pub weights: Option<Vec<f32>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_mem_frames: None,
            min_mem_frames: None,
            top_k: None,
            model: ModelConfig::default(),
            encoder: EncoderMode::Toy,
            seed: 0,
            scales: vec![Scale::Native],
            flip: false,
            weights: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn variant_count(&self) -> usize {
        self.scales.len() * if self.flip { 2 } else { 1 }
    }

    /// `None` keeps length-based routing; otherwise the routed values are
    /// patched with whichever keys were given.
    pub fn memory_for(&self, num_frames: usize) -> Result<Option<MemoryConfig>> {
        if self.max_mem_frames.is_none() && self.min_mem_frames.is_none() && self.top_k.is_none() {
            return Ok(None);
        }
        let base = route_hyperparams(num_frames);
        let cfg = MemoryConfig::new(
            self.max_mem_frames.unwrap_or(base.max_mem_frames),
            self.min_mem_frames.unwrap_or(base.min_mem_frames),
            self.top_k.unwrap_or(base.top_k),
        )?;
        Ok(Some(cfg))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        anyhow::ensure!(!self.scales.is_empty(), "at least one scale is required");
        if let Some(w) = &self.weights {
            anyhow::ensure!(
                w.len() == self.variant_count(),
                "{} fusion weights given for {} variants",
                w.len(),
                self.variant_count()
            );
        }
        self.memory_for(1)?;
        self.memory_for(1000)?;
        Ok(())
    }
}
