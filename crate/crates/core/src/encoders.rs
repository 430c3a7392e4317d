//! Streaming image encoder and per-object mask encoder.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::config::{EncoderMode, ModelConfig};
use crate::error::{ensure, Error, Result};
use crate::init::{stream, Init};
use crate::numerics::{self, avg_pool, conv2d, gelu, layer_norm, pad_to_multiple, Tensor};

/// Input extents are padded up to a multiple of this before encoding.
pub const ENCODER_STRIDE: usize = 16;
pub(crate) const LN_EPS: f32 = 1e-5;

/// Mask-path channel widths ahead of the final 1x1 projection.
pub const MASK_STAGE_CHANNELS: [usize; 2] = [4, 16];

/// Analytic mode: stride-16 features are mean RGB.
pub const ANALYTIC_EMBED_DIM: usize = 3;
/// Analytic mode: per-cell `[rgb*m, m, rgb*(1-m), 1-m]`.
pub const ANALYTIC_VALUE_DIM: usize = 8;

/// Multiscale features of one (padded) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePyramid {
    pub f4: Tensor,
    pub f8: Tensor,
    pub f16: Tensor,
    pub frame_index: usize,
    /// Unpadded input extents `(H, W)`.
    pub input_extent: (usize, usize),
}

impl FramePyramid {
    pub fn padded_extent(&self) -> (usize, usize) {
        (self.f4.shape()[0] * 4, self.f4.shape()[1] * 4)
    }

    pub fn grid16(&self) -> (usize, usize) {
        (self.f16.shape()[0], self.f16.shape()[1])
    }
}

/// Layer-norm affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl Norm {
    pub fn identity(c: usize) -> Self {
        Self {
            gain: Tensor::filled(&[c], 1.0),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gain, &self.bias, LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub(crate) fn seeded(
        init: &mut Init,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            kernel: init.fan_in(&[k, k, cin, cout], k * k * cin),
            bias: init.uniform(&[cout], 0.05),
            stride,
            padding,
        }
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.kernel, &self.bias, self.stride, self.padding)
    }

    pub(crate) fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub(crate) fn zero(&mut self) {
        self.kernel.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }
}

/// Stride-4 stem followed by two stride-2 stages.
#[derive(Debug, Clone)]
pub struct ImageEncoderWeights {
    pub(crate) stem: Conv,
    pub(crate) stem_norm: Norm,
    pub(crate) down8: Conv,
    pub(crate) norm8: Norm,
    pub(crate) down16: Conv,
    pub(crate) refine16: Conv,
    pub(crate) norm16: Norm,
}

/// conv 2x2/2 -> GELU -> LN -> conv 2x2/2 -> GELU -> LN -> conv 1x1.
#[derive(Debug, Clone)]
pub struct MaskEncoderWeights {
    pub(crate) down1: Conv,
    pub(crate) norm1: Norm,
    pub(crate) down2: Conv,
    pub(crate) norm2: Norm,
    pub(crate) project: Conv,
}

impl MaskEncoderWeights {
    /// Channel count after each stage, starting from the 1-channel mask.
    pub fn channel_progression(&self) -> [usize; 4] {
        [
            self.down1.kernel.shape()[2],
            self.down1.out_channels(),
            self.down2.out_channels(),
            self.project.out_channels(),
        ]
    }

    /// Zeroes every conv weight and bias and every norm gain and bias.
    pub fn zero_out(&mut self) {
        self.down1.zero();
        self.down2.zero();
        self.project.zero();
        for n in [&mut self.norm1, &mut self.norm2] {
            n.gain.data_mut().fill(0.0);
            n.bias.data_mut().fill(0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub image: ImageEncoderWeights,
    pub mask: MaskEncoderWeights,
    /// Added to the image embedding when an object has no mask.
    pub no_mask_embedding: Tensor,
    pub rng_seed: u64,
}

impl EncoderWeights {
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Self {
        let mut init = Init::new(seed, stream::IMAGE_ENCODER);
        let c = cfg.embed_dim;
        let image = ImageEncoderWeights {
            stem: Conv::seeded(&mut init, 4, 3, cfg.c4, 4, 0),
            stem_norm: Norm::identity(cfg.c4),
            down8: Conv::seeded(&mut init, 2, cfg.c4, cfg.c8, 2, 0),
            norm8: Norm::identity(cfg.c8),
            down16: Conv::seeded(&mut init, 2, cfg.c8, c, 2, 0),
            refine16: Conv::seeded(&mut init, 3, c, c, 1, 1),
            norm16: Norm::identity(c),
        };
        let mut init = Init::new(seed, stream::MASK_ENCODER);
        let [s1, s2] = MASK_STAGE_CHANNELS;
        let mask = MaskEncoderWeights {
            down1: Conv::seeded(&mut init, 2, 1, s1, 2, 0),
            norm1: Norm::identity(s1),
            down2: Conv::seeded(&mut init, 2, s1, s2, 2, 0),
            norm2: Norm::identity(s2),
            project: Conv::seeded(&mut init, 1, s2, c, 1, 0),
        };
        let no_mask_embedding = init.uniform(&[c], 0.5);
        Self {
            image,
            mask,
            no_mask_embedding,
            rng_seed: seed,
        }
    }
}

/// Intermediate maps of one mask encoding.
#[derive(Debug, Clone)]
pub struct MaskEncoding {
    /// After the first stride-2 stage (`H/8 x W/8 x 4`).
    pub stage1: Option<Tensor>,
    /// After the second stride-2 stage (`H/16 x W/16 x 16`).
    pub stage2: Option<Tensor>,
    /// Fused embedding (`H/16 x W/16 x C'`).
    pub fused: Tensor,
}

/// Encoder pair plus a call counter for the once-per-frame contract.
#[derive(Debug)]
pub struct Encoder {
    mode: EncoderMode,
    weights: Option<EncoderWeights>,
    image_calls: AtomicUsize,
}

impl Encoder {
    pub fn new(mode: EncoderMode, cfg: &ModelConfig, seed: u64) -> Self {
        let weights = match mode {
            EncoderMode::Toy => Some(EncoderWeights::seeded(cfg, seed)),
            EncoderMode::Analytic => None,
        };
        Self::with_weights(mode, weights)
    }

    pub fn from_weights(weights: EncoderWeights) -> Self {
        Self::with_weights(EncoderMode::Toy, Some(weights))
    }

    fn with_weights(mode: EncoderMode, weights: Option<EncoderWeights>) -> Self {
        Self {
            mode,
            weights,
            image_calls: AtomicUsize::new(0),
        }
    }

    pub fn mode(&self) -> EncoderMode {
        self.mode
    }

    pub fn weights(&self) -> Option<&EncoderWeights> {
        self.weights.as_ref()
    }

    /// Number of `encode_image` calls so far.
    pub fn image_calls(&self) -> usize {
        self.image_calls.load(Ordering::Relaxed)
    }

    /// Width of the stride-16 image embedding.
    pub fn embed_dim(&self) -> usize {
        match &self.weights {
            Some(w) => w.no_mask_embedding.len(),
            None => ANALYTIC_EMBED_DIM,
        }
    }

    /// Width of the fused mask embedding stored as memory values.
    pub fn value_dim(&self) -> usize {
        match &self.weights {
            Some(w) => w.no_mask_embedding.len(),
            None => ANALYTIC_VALUE_DIM,
        }
    }

    pub fn encode_image(&self, frame: &Tensor, frame_index: usize) -> Result<FramePyramid> {
        let (h, w, c) = frame.dims3()?;
        ensure!(c == 3, Contract, "encode_image expects RGB input, got {c} channels");
        self.image_calls.fetch_add(1, Ordering::Relaxed);
        let padded = pad_to_multiple(frame, ENCODER_STRIDE)?;
        let (f4, f8, f16) = match &self.weights {
            Some(wt) => encode_toy(&padded, &wt.image)?,
            None => encode_analytic(&padded)?,
        };
        Ok(FramePyramid {
            f4,
            f8,
            f16,
            frame_index,
            input_extent: (h, w),
        })
    }

    /// Fuses one object's stride-4 soft mask into the stride-16 embedding.
    pub fn encode_mask(&self, mask: Option<&Tensor>, image_f16: &Tensor) -> Result<Tensor> {
        Ok(self.encode_mask_traced(mask, image_f16)?.fused)
    }

    pub fn encode_mask_traced(
        &self,
        mask: Option<&Tensor>,
        image_f16: &Tensor,
    ) -> Result<MaskEncoding> {
        let (gh, gw, _) = image_f16.dims3()?;
        if let Some(m) = mask {
            let (mh, mw, mc) = m.dims3()?;
            ensure!(
                mc == 1 && mh == gh * 4 && mw == gw * 4,
                Contract,
                "mask must be {}x{}x1 for a {gh}x{gw} stride-16 grid, got {mh}x{mw}x{mc}",
                gh * 4,
                gw * 4
            );
        }
        match &self.weights {
            Some(wt) => encode_mask_toy(mask, image_f16, wt),
            None => encode_mask_analytic(mask, image_f16),
        }
    }
}

fn gelu_norm(x: Tensor, norm: &Norm) -> Result<Tensor> {
    norm.apply(&gelu(&x))
}

fn encode_toy(x: &Tensor, w: &ImageEncoderWeights) -> Result<(Tensor, Tensor, Tensor)> {
    let f4 = gelu_norm(w.stem.apply(x)?, &w.stem_norm)?;
    let f8 = gelu_norm(w.down8.apply(&f4)?, &w.norm8)?;
    let t = gelu(&w.down16.apply(&f8)?);
    let refined = gelu(&w.refine16.apply(&t)?);
    let f16 = w.norm16.apply(&t.add(&refined)?)?;
    Ok((f4, f8, f16))
}

/// f4 holds every pixel's RGB (space-to-depth), f8/f16 are mean RGB.
fn encode_analytic(x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (h, w, _) = x.dims3()?;
    let (h4, w4) = (h / 4, w / 4);
    let mut f4 = Tensor::zeros(&[h4, w4, 48]);
    let d = f4.data_mut();
    for y in 0..h {
        for xx in 0..w {
            let base = ((y / 4) * w4 + xx / 4) * 48 + ((y % 4) * 4 + xx % 4) * 3;
            for ch in 0..3 {
                d[base + ch] = x.at3(y, xx, ch);
            }
        }
    }
    Ok((f4, avg_pool(x, 8)?, avg_pool(x, 16)?))
}

fn encode_mask_toy(
    mask: Option<&Tensor>,
    image_f16: &Tensor,
    w: &EncoderWeights,
) -> Result<MaskEncoding> {
    let (gh, gw, c) = image_f16.dims3()?;
    ensure!(
        c == w.no_mask_embedding.len(),
        Shape,
        "image embedding has {c} channels, mask encoder emits {}",
        w.no_mask_embedding.len()
    );
    let Some(m) = mask else {
        let emb = w.no_mask_embedding.data();
        let mut fused = image_f16.clone();
        for px in fused.data_mut().chunks_mut(c) {
            px.iter_mut().zip(emb).for_each(|(v, e)| *v += e);
        }
        return Ok(MaskEncoding {
            stage1: None,
            stage2: None,
            fused,
        });
    };
    let mw = &w.mask;
    let stage1 = gelu_norm(mw.down1.apply(m)?, &mw.norm1)?;
    let stage2 = gelu_norm(mw.down2.apply(&stage1)?, &mw.norm2)?;
    let projected = mw.project.apply(&stage2)?;
    debug_assert_eq!(projected.shape(), &[gh, gw, c]);
    let fused = projected.add(image_f16)?;
    Ok(MaskEncoding {
        stage1: Some(stage1),
        stage2: Some(stage2),
        fused,
    })
}

fn encode_mask_analytic(mask: Option<&Tensor>, image_f16: &Tensor) -> Result<MaskEncoding> {
    let (gh, gw, c) = image_f16.dims3()?;
    if c != ANALYTIC_EMBED_DIM {
        return Err(Error::Shape(format!(
            "analytic mask encoding expects RGB cells, got {c} channels"
        )));
    }
    // an absent mask is treated as all-background
    let coverage = match mask {
        Some(m) => avg_pool(m, 4)?,
        None => Tensor::zeros(&[gh, gw, 1]),
    };
    let mut fused = Tensor::zeros(&[gh, gw, ANALYTIC_VALUE_DIM]);
    for (i, out) in fused.data_mut().chunks_mut(ANALYTIC_VALUE_DIM).enumerate() {
        let m = coverage.data()[i];
        let rgb = &image_f16.data()[i * 3..i * 3 + 3];
        for ch in 0..3 {
            out[ch] = rgb[ch] * m;
            out[4 + ch] = rgb[ch] * (1.0 - m);
        }
        out[3] = m;
        out[7] = 1.0 - m;
    }
    Ok(MaskEncoding {
        stage1: None,
        stage2: None,
        fused,
    })
}

/// Resamples a full-resolution soft mask to the stride-4 grid of its padded frame.
pub fn mask_to_stride4(mask: &Tensor) -> Result<Tensor> {
    avg_pool(&numerics::pad_to_multiple(mask, ENCODER_STRIDE)?, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            c4: 32,
            c8: 48,
            embed_dim: 64,
            ..ModelConfig::default()
        }
    }

    fn frame(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[h, w, 3], |i| ((i * 37) % 101) as f32 / 100.0)
    }

    #[test]
    fn pyramid_extents_follow_strides() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 7);
        let p = enc.encode_image(&frame(64, 64), 0).unwrap();
        assert_eq!(p.f4.shape(), &[16, 16, 32]);
        assert_eq!(p.f8.shape(), &[8, 8, 48]);
        assert_eq!(p.f16.shape(), &[4, 4, 64]);
    }

    #[test]
    fn odd_extents_are_padded_to_sixteen() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 7);
        let p = enc.encode_image(&frame(50, 33), 3).unwrap();
        assert_eq!(p.padded_extent(), (64, 48));
        assert_eq!(p.f16.shape(), &[4, 3, 64]);
        assert_eq!(p.input_extent, (50, 33));
        assert_eq!(p.frame_index, 3);
    }

    #[test]
    fn encoding_is_deterministic_and_counted() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 7);
        let f = frame(32, 48);
        let a = enc.encode_image(&f, 0).unwrap();
        let b = enc.encode_image(&f, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(enc.image_calls(), 2);
        let other = Encoder::new(EncoderMode::Toy, &toy_cfg(), 7);
        assert_eq!(other.encode_image(&f, 0).unwrap(), a);
    }

    #[test]
    fn non_rgb_input_is_rejected() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 7);
        assert!(matches!(
            enc.encode_image(&Tensor::zeros(&[16, 16, 1]), 0),
            Err(Error::Contract(_))
        ));
        assert_eq!(enc.image_calls(), 0);
    }

    #[test]
    fn constant_frame_gives_spatially_constant_interior_features() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 11);
        let p = enc
            .encode_image(&Tensor::filled(&[96, 96, 3], 0.4), 0)
            .unwrap();
        for map in [&p.f4, &p.f8, &p.f16] {
            let (h, w, c) = map.dims3().unwrap();
            // 3x3 refinement sees the zero border, so skip the outer ring
            let reference: Vec<f32> = (0..c).map(|ch| map.at3(1, 1, ch)).collect();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    for ch in 0..c {
                        assert_eq!(map.at3(y, x, ch), reference[ch], "({y},{x},{ch})");
                    }
                }
            }
        }
    }

    #[test]
    fn mask_encoder_channel_progression() {
        for embed_dim in [16, 64, ModelConfig::REFERENCE_EMBED_DIM] {
            let cfg = ModelConfig {
                embed_dim,
                ..ModelConfig::default()
            };
            let w = EncoderWeights::seeded(&cfg, 1);
            assert_eq!(w.mask.channel_progression(), [1, 4, 16, embed_dim]);
        }
    }

    #[test]
    fn reference_scale_stage_shapes() {
        let cfg = ModelConfig {
            embed_dim: 256,
            c4: 8,
            c8: 8,
            heads: 1,
            ..ModelConfig::default()
        };
        let enc = Encoder::new(EncoderMode::Toy, &cfg, 3);
        let mask = Tensor::filled(&[64, 64, 1], 0.3);
        let f16 = Tensor::zeros(&[16, 16, 256]);
        let t = enc.encode_mask_traced(Some(&mask), &f16).unwrap();
        assert_eq!(t.stage1.unwrap().shape(), &[32, 32, 4]);
        assert_eq!(t.stage2.unwrap().shape(), &[16, 16, 16]);
        assert_eq!(t.fused.shape(), &[16, 16, 256]);
    }

    #[test]
    fn zeroed_mask_path_returns_image_embedding() {
        let cfg = toy_cfg();
        let mut w = EncoderWeights::seeded(&cfg, 5);
        w.mask.zero_out();
        let enc = Encoder::from_weights(w);
        let f16 = Tensor::from_fn(&[4, 4, 64], |i| (i as f32).sin());
        let mask = Tensor::from_fn(&[16, 16, 1], |i| (i % 3) as f32 / 2.0);
        assert_eq!(enc.encode_mask(Some(&mask), &f16).unwrap(), f16);
    }

    #[test]
    fn absent_mask_adds_no_mask_embedding() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 5);
        let f16 = Tensor::from_fn(&[3, 2, 64], |i| (i as f32 * 0.1).cos());
        let out = enc.encode_mask(None, &f16).unwrap();
        let emb = enc.weights().unwrap().no_mask_embedding.data();
        for p in 0..6 {
            for c in 0..64 {
                assert_eq!(out.data()[p * 64 + c], f16.data()[p * 64 + c] + emb[c]);
            }
        }
        let zero_mask = Tensor::zeros(&[12, 8, 1]);
        assert_ne!(enc.encode_mask(Some(&zero_mask), &f16).unwrap(), out);
    }

    #[test]
    fn mask_extent_mismatch_is_rejected() {
        let enc = Encoder::new(EncoderMode::Toy, &toy_cfg(), 5);
        let f16 = Tensor::zeros(&[4, 4, 64]);
        let bad = Tensor::zeros(&[15, 16, 1]);
        assert!(matches!(
            enc.encode_mask(Some(&bad), &f16),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn analytic_features_are_colours() {
        let enc = Encoder::new(EncoderMode::Analytic, &ModelConfig::default(), 0);
        let mut f = Tensor::filled(&[32, 32, 3], 0.1);
        f.data_mut()[(5 * 32 + 6) * 3] = 0.9;
        let p = enc.encode_image(&f, 0).unwrap();
        assert_eq!(p.f16.shape(), &[2, 2, 3]);
        assert_eq!(p.f4.shape(), &[8, 8, 48]);
        assert_eq!(p.f4.at3(1, 1, (4 + 2) * 3), 0.9);
        let m = Tensor::filled(&[8, 8, 1], 1.0);
        let v = enc.encode_mask(Some(&m), &p.f16).unwrap();
        assert_eq!(v.shape(), &[2, 2, ANALYTIC_VALUE_DIM]);
        assert_eq!(v.row(0)[3], 1.0);
        assert_eq!(v.row(0)[7], 0.0);
    }
}
