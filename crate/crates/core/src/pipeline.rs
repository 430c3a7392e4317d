//! Streaming per-video inference.
//!
//! Frame 0 is copied from the annotation and stored as permanent memory. Every
//! later frame is encoded once, reads pixel memory, is refined by the object
//! transformer, decoded, and then written back to memory (followed by
//! eviction).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{EncoderMode, ModelConfig};
use crate::decoder::{logits_to_label_map, Decoder, DecoderWeights};
use crate::encoders::{mask_to_stride4, Encoder, FramePyramid};
use crate::error::{ensure, Result};
use crate::fusion::{fuse_pixel, invert_variant, make_variants, Scale, SegmentationResult};
use crate::init::{stream, Init};
use crate::memory::{
    apply_attention, attention_rows, route_hyperparams, MemoryBank, MemoryConfig, MemoryFrame,
    ObjectId, ReadoutProjection,
};
use crate::numerics::{avg_pool, Tensor};
use crate::object_memory::{object_features, object_summary, PoolingWindows};
use crate::par;
use crate::transformer::{self, TransformerParams};

/// Sharpness of analytic colour matching in key space.
const ANALYTIC_KEY_GAIN: f32 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub encoder: EncoderMode,
    pub seed: u64,
    /// Overrides length-based routing when set.
    pub memory: Option<MemoryConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            encoder: EncoderMode::Toy,
            seed: 0,
            memory: None,
        }
    }
}

/// One video to segment from its first-frame annotation.
#[derive(Debug, Clone)]
pub struct VideoTask {
    pub video_id: String,
    /// `H x W x 3` RGB in `[0, 1]`.
    pub frames: Vec<Tensor>,
    /// First-frame label map (`H * W`), ids `1..=K`, background 0.
    pub annotation: Vec<u8>,
}

impl VideoTask {
    /// Validates extents and returns the object ids `1..=K`.
    pub fn object_ids(&self) -> Result<Vec<ObjectId>> {
        ensure!(!self.frames.is_empty(), Contract, "video {} has no frames", self.video_id);
        let (h, w, c) = self.frames[0].dims3()?;
        ensure!(c == 3, Contract, "video {}: frames must be RGB", self.video_id);
        for (t, f) in self.frames.iter().enumerate() {
            ensure!(
                f.shape() == [h, w, 3],
                Contract,
                "video {}: frame {t} is {:?}, frame 0 is {h}x{w}x3",
                self.video_id,
                f.shape()
            );
        }
        ensure!(
            self.annotation.len() == h * w,
            Contract,
            "video {}: annotation has {} pixels, frames are {h}x{w}",
            self.video_id,
            self.annotation.len()
        );
        let max = self.annotation.iter().copied().max().unwrap_or(0);
        ensure!(max >= 1, Contract, "video {}: annotation has no objects", self.video_id);
        let mut present = vec![false; max as usize + 1];
        self.annotation.iter().for_each(|&l| present[l as usize] = true);
        ensure!(
            present[1..].iter().all(|&p| p),
            Contract,
            "video {}: object ids must be contiguous 1..={max}",
            self.video_id
        );
        Ok((1..=max).collect())
    }
}

/// Bank occupancy after one insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryStep {
    pub frame_index: usize,
    pub transient_before_evict: usize,
    pub transient_after_evict: usize,
    pub frames_after_evict: usize,
}

#[derive(Debug, Clone)]
pub struct VideoRun {
    pub results: Vec<SegmentationResult>,
    pub memory: MemoryConfig,
    pub memory_trace: Vec<MemoryStep>,
    pub final_bank_indices: Vec<usize>,
}

enum KeyEncoder {
    Linear(Tensor),
    /// `q = g (c, 1)`, `k = (2c, -|c|^2)`: dot product ranks memory cells by
    /// colour distance.
    Analytic,
}

impl KeyEncoder {
    fn memory_keys(&self, f16: &Tensor) -> Result<Tensor> {
        match self {
            Self::Linear(w) => crate::numerics::linear(f16, w, None),
            Self::Analytic => {
                let p = f16.shape()[0];
                Ok(Tensor::from_fn(&[p, 4], |i| {
                    let c = f16.row(i / 4);
                    match i % 4 {
                        3 => -c.iter().map(|v| v * v).sum::<f32>(),
                        ch => 2.0 * c[ch],
                    }
                }))
            }
        }
    }

    fn query_keys(&self, f16: &Tensor) -> Result<Tensor> {
        match self {
            Self::Linear(_) => self.memory_keys(f16),
            Self::Analytic => {
                let p = f16.shape()[0];
                Ok(Tensor::from_fn(&[p, 4], |i| match i % 4 {
                    3 => ANALYTIC_KEY_GAIN,
                    ch => ANALYTIC_KEY_GAIN * f16.row(i / 4)[ch],
                }))
            }
        }
    }
}

/// All seeded components of one model instance.
pub struct Segmenter {
    config: PipelineConfig,
    encoder: Encoder,
    keys: KeyEncoder,
    readout: ReadoutProjection,
    queries: Tensor,
    transformer: TransformerParams,
    decoder: Decoder,
    windows: PoolingWindows,
}

impl Segmenter {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.model.validate()?;
        if let Some(m) = &config.memory {
            m.validate()?;
        }
        let cfg = &config.model;
        let seed = config.seed;
        let encoder = Encoder::new(config.encoder, cfg, seed);
        let windows = PoolingWindows::seeded(cfg.num_queries, seed)?;
        let segmenter = match config.encoder {
            EncoderMode::Toy => {
                let c = cfg.embed_dim;
                let key_w = Init::new(seed, stream::KEY_PROJECTION).fan_in(&[c, cfg.key_dim], c);
                let mut init = Init::new(seed, stream::READOUT);
                let readout = ReadoutProjection::Linear {
                    weight: init.fan_in(&[2 * c, c], 2 * c),
                    bias: init.uniform(&[c], 0.02),
                };
                let queries = Init::new(seed, stream::QUERIES).uniform(&[cfg.num_queries, c], 1.0);
                Self {
                    keys: KeyEncoder::Linear(key_w),
                    readout,
                    queries,
                    transformer: TransformerParams::seeded(cfg, seed),
                    decoder: Decoder::Toy(DecoderWeights::seeded(cfg, seed)),
                    encoder,
                    windows,
                    config,
                }
            }
            EncoderMode::Analytic => {
                let cv = encoder.value_dim();
                Self {
                    keys: KeyEncoder::Analytic,
                    readout: ReadoutProjection::AttendedOnly,
                    queries: Tensor::zeros(&[cfg.num_queries, cv]),
                    transformer: TransformerParams::identity(1),
                    decoder: Decoder::Analytic,
                    encoder,
                    windows,
                    config,
                }
            }
        };
        Ok(segmenter)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn memory_config(&self, num_frames: usize) -> MemoryConfig {
        self.config
            .memory
            .unwrap_or_else(|| route_hyperparams(num_frames))
    }

    fn flat16(pyr: &FramePyramid) -> Result<Tensor> {
        let (gh, gw, c) = pyr.f16.dims3()?;
        pyr.f16.clone().reshape(&[gh * gw, c])
    }

    fn memory_frame(
        &self,
        pyr: &FramePyramid,
        f16: &Tensor,
        result: &SegmentationResult,
    ) -> Result<MemoryFrame> {
        let (gh, gw) = pyr.grid16();
        let mut objects = BTreeMap::new();
        for (&id, plane) in result.object_ids.iter().zip(&result.probabilities) {
            let soft = Tensor::new(vec![result.height, result.width, 1], plane.clone())?;
            let m4 = mask_to_stride4(&soft)?;
            let fused = self.encoder.encode_mask(Some(&m4), &pyr.f16)?;
            let cv = fused.shape()[2];
            let values = fused.reshape(&[gh * gw, cv])?;
            let masks = self.windows.derive(&avg_pool(&m4, 4)?)?;
            objects.insert(id, object_features(values, &masks)?);
        }
        MemoryFrame::new(pyr.frame_index, self.keys.memory_keys(f16)?, objects)
    }

    fn segment_frame(
        &self,
        bank: &MemoryBank,
        pyr: &FramePyramid,
        f16: &Tensor,
        ids: &[ObjectId],
        cfg: &MemoryConfig,
    ) -> Result<SegmentationResult> {
        let rows = attention_rows(bank, &self.keys.query_keys(f16)?, cfg.top_k)?;
        let logits = ids
            .iter()
            .map(|&id| {
                let attended = apply_attention(bank, &rows, id)?;
                let r0 = self.readout.apply(&attended, f16)?;
                let s = object_summary(bank, id)?;
                let rl = transformer::forward(&r0, &self.queries, &s, &self.transformer)?;
                self.decoder.decode(&rl, pyr)
            })
            .collect::<Result<Vec<_>>>()?;
        logits_to_label_map(&logits, ids)
    }

    pub fn run_video(&self, task: &VideoTask) -> Result<Vec<SegmentationResult>> {
        Ok(self.run_video_traced(task)?.results)
    }

    pub fn run_video_traced(&self, task: &VideoTask) -> Result<VideoRun> {
        let ids = task.object_ids()?;
        let cfg = self.memory_config(task.frames.len());
        let (h, w, _) = task.frames[0].dims3()?;
        let mut bank = MemoryBank::new();
        let mut results = Vec::with_capacity(task.frames.len());
        let mut trace = Vec::with_capacity(task.frames.len());

        let pyr = self.encoder.encode_image(&task.frames[0], 0)?;
        let f16 = Self::flat16(&pyr)?;
        let first = SegmentationResult::from_labels(h, w, &task.annotation, ids.clone())?
            .with_meta(&task.video_id, "", 0);
        bank.add_frame(self.memory_frame(&pyr, &f16, &first)?, true)?;
        results.push(first);

        for (t, frame) in task.frames.iter().enumerate().skip(1) {
            let pyr = self.encoder.encode_image(frame, t)?;
            let f16 = Self::flat16(&pyr)?;
            let result = self
                .segment_frame(&bank, &pyr, &f16, &ids, &cfg)?
                .with_meta(&task.video_id, "", t);
            bank.add_frame(self.memory_frame(&pyr, &f16, &result)?, false)?;
            let before = bank.transient_count();
            bank.evict(&cfg);
            trace.push(MemoryStep {
                frame_index: t,
                transient_before_evict: before,
                transient_after_evict: bank.transient_count(),
                frames_after_evict: bank.len(),
            });
            results.push(result);
        }
        Ok(VideoRun {
            results,
            memory: cfg,
            memory_trace: trace,
            final_bank_indices: bank.frame_indices(),
        })
    }

    /// Runs every `(scale, flip)` variant, maps results back to native
    /// resolution and fuses them per frame. `weights` defaults to all ones.
    pub fn run_video_with_tta(
        &self,
        task: &VideoTask,
        scales: &[Scale],
        flip: bool,
        weights: Option<&[f32]>,
    ) -> Result<Vec<SegmentationResult>> {
        let ids = task.object_ids()?;
        let variants = make_variants(&task.frames, scales, flip)?;
        let weights = match weights {
            Some(w) => {
                ensure!(
                    w.len() == variants.len(),
                    Contract,
                    "{} fusion weights for {} variants",
                    w.len(),
                    variants.len()
                );
                w.to_vec()
            }
            None => vec![1.0; variants.len()],
        };
        let per_variant = par::map_tasks(&variants, |(desc, frames)| -> Result<_> {
            let sub = VideoTask {
                video_id: task.video_id.clone(),
                frames: frames.clone(),
                annotation: desc.apply_labels(&task.annotation)?,
            };
            self.run_video(&sub)?
                .iter()
                .map(|r| invert_variant(r, desc))
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let (h, w, _) = task.frames[0].dims3()?;
        let mut fused = Vec::with_capacity(task.frames.len());
        fused.push(
            SegmentationResult::from_labels(h, w, &task.annotation, ids)?
                .with_meta(&task.video_id, "", 0),
        );
        for t in 1..task.frames.len() {
            let frame_results: Vec<SegmentationResult> =
                per_variant.iter().map(|v| v[t].clone()).collect();
            fused.push(fuse_pixel(&frame_results, &weights)?);
        }
        Ok(fused)
    }
}

/// Convenience wrapper building a fresh model for one video.
pub fn run_video(task: &VideoTask, config: &PipelineConfig) -> Result<Vec<SegmentationResult>> {
    Segmenter::new(config.clone())?.run_video(task)
}
