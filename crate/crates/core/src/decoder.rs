//! Readout decoding to full-resolution object logits, and multi-object
//! aggregation into label maps.

use crate::config::ModelConfig;
use crate::encoders::{Conv, FramePyramid};
use crate::error::{ensure, Error, Result};
use crate::fusion::SegmentationResult;
use crate::init::{stream, Init};
use crate::memory::ObjectId;
use crate::numerics::{bilinear_resize, crop, gelu, softmax_in_place, Tensor};

/// Logit scale of the analytic colour decoder.
const ANALYTIC_GAIN: f32 = 20.0;
/// Minimum attended mask mass for a colour prototype to count.
const ANALYTIC_MIN_MASS: f32 = 1e-6;

#[derive(Debug, Clone)]
pub struct DecoderWeights {
    pub(crate) conv16: Conv,
    pub(crate) skip8: Conv,
    pub(crate) conv8: Conv,
    pub(crate) skip4: Conv,
    pub(crate) head: Conv,
}

impl DecoderWeights {
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Self {
        let mut init = Init::new(seed, stream::DECODER);
        let d = cfg.decoder_dim;
        Self {
            conv16: Conv::seeded(&mut init, 3, cfg.embed_dim, d, 1, 1),
            skip8: Conv::seeded(&mut init, 1, cfg.c8, d, 1, 0),
            conv8: Conv::seeded(&mut init, 3, d, d, 1, 1),
            skip4: Conv::seeded(&mut init, 1, cfg.c4, d, 1, 0),
            head: Conv::seeded(&mut init, 1, d, 1, 1, 0),
        }
    }

    /// Zeroes both skip projections so only the readout path remains.
    pub fn zero_skips(&mut self) {
        self.skip8.zero();
        self.skip4.zero();
    }
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Toy(DecoderWeights),
    /// Per-pixel colour comparison against attended object/background
    /// prototypes; expects analytic readouts and pyramids.
    Analytic,
}

impl Decoder {
    /// Object logits at the unpadded input resolution (`H x W x 1`).
    pub fn decode(&self, readout: &Tensor, pyramid: &FramePyramid) -> Result<Tensor> {
        let (gh, gw) = pyramid.grid16();
        let (p, c) = readout.dims2()?;
        ensure!(
            p == gh * gw,
            Contract,
            "readout has {p} positions, pyramid grid is {gh}x{gw}"
        );
        let r16 = readout.clone().reshape(&[gh, gw, c])?;
        let full = match self {
            Self::Toy(w) => decode_toy(&r16, pyramid, w)?,
            Self::Analytic => decode_analytic(&r16, pyramid)?,
        };
        let (h, w) = pyramid.input_extent;
        crop(&full, h, w)
    }
}

fn decode_toy(r16: &Tensor, pyr: &FramePyramid, w: &DecoderWeights) -> Result<Tensor> {
    let (h8, w8, _) = pyr.f8.dims3()?;
    let (h4, w4, _) = pyr.f4.dims3()?;
    let x = gelu(&w.conv16.apply(r16)?);
    let x = bilinear_resize(&x, h8, w8)?.add(&w.skip8.apply(&pyr.f8)?)?;
    let x = gelu(&w.conv8.apply(&x)?);
    let x = bilinear_resize(&x, h4, w4)?.add(&w.skip4.apply(&pyr.f4)?)?;
    let logits4 = w.head.apply(&x)?;
    let (ph, pw) = pyr.padded_extent();
    bilinear_resize(&logits4, ph, pw)
}

fn prototype(sum: &[f32], mass: f32) -> Option<[f32; 3]> {
    (mass > ANALYTIC_MIN_MASS).then(|| [sum[0] / mass, sum[1] / mass, sum[2] / mass])
}

fn dist2(a: &[f32], b: &[f32; 3]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sums the attended evidence over each cell's 3x3 neighbourhood, so a cell
/// the object only grazes still sees its colour.
fn neighbourhood_evidence(r16: &Tensor) -> Result<Tensor> {
    let (gh, gw, c) = r16.dims3()?;
    let mut out = Tensor::zeros(&[gh, gw, c]);
    let data = out.data_mut();
    for y in 0..gh {
        for x in 0..gw {
            let acc = &mut data[(y * gw + x) * c..(y * gw + x + 1) * c];
            for yy in y.saturating_sub(1)..(y + 2).min(gh) {
                for xx in x.saturating_sub(1)..(x + 2).min(gw) {
                    let src = &r16.data()[(yy * gw + xx) * c..(yy * gw + xx + 1) * c];
                    acc.iter_mut().zip(src).for_each(|(a, s)| *a += s);
                }
            }
        }
    }
    Ok(out)
}

fn decode_analytic(r16: &Tensor, pyr: &FramePyramid) -> Result<Tensor> {
    let (gh, gw, c) = r16.dims3()?;
    let (_, w4, c4) = pyr.f4.dims3()?;
    if c != crate::encoders::ANALYTIC_VALUE_DIM || c4 != 48 {
        return Err(Error::Shape(format!(
            "analytic decoding needs 8-channel readouts and 48-channel f4, got {c}/{c4}"
        )));
    }
    let evidence = neighbourhood_evidence(r16)?;
    let (ph, pw) = (gh * 16, gw * 16);
    let mut out = Tensor::zeros(&[ph, pw, 1]);
    let data = out.data_mut();
    for y in 0..ph {
        for x in 0..pw {
            let cell = evidence.row(y / 16);
            let cell = &cell[(x / 16) * c..(x / 16 + 1) * c];
            let base = ((y / 4) * w4 + x / 4) * 48 + ((y % 4) * 4 + x % 4) * 3;
            let rgb = &pyr.f4.data()[base..base + 3];
            let obj = prototype(&cell[0..3], cell[3]);
            let bg = prototype(&cell[4..7], cell[7]);
            data[y * pw + x] = match (obj, bg) {
                (None, _) => -ANALYTIC_GAIN,
                (Some(_), None) => ANALYTIC_GAIN,
                (Some(o), Some(b)) => ANALYTIC_GAIN * (dist2(rgb, &b) - dist2(rgb, &o)),
            };
        }
    }
    Ok(out)
}

/// Per-pixel softmax over `[background = 0, object logits...]`.
pub fn logits_to_label_map(
    per_object_logits: &[Tensor],
    object_ids: &[ObjectId],
) -> Result<SegmentationResult> {
    ensure!(
        per_object_logits.len() == object_ids.len() && !object_ids.is_empty(),
        Contract,
        "{} logit maps for {} object ids",
        per_object_logits.len(),
        object_ids.len()
    );
    let mut order: Vec<usize> = (0..object_ids.len()).collect();
    order.sort_by_key(|&i| object_ids[i]);
    ensure!(
        order.windows(2).all(|w| object_ids[w[0]] != object_ids[w[1]]),
        Contract,
        "duplicate object ids in {object_ids:?}"
    );
    ensure!(
        object_ids.iter().all(|&id| id != 0),
        Contract,
        "object id 0 is reserved for background"
    );
    let (h, w, _) = per_object_logits[0].dims3()?;
    for l in per_object_logits {
        ensure!(
            l.shape() == [h, w, 1],
            Contract,
            "logit maps must all be {h}x{w}x1, got {:?}",
            l.shape()
        );
    }
    let k = object_ids.len();
    let mut planes = vec![vec![0.0f32; h * w]; k];
    let mut scratch = vec![0.0f32; k + 1];
    for i in 0..h * w {
        scratch[0] = 0.0;
        for (slot, &o) in order.iter().enumerate() {
            scratch[slot + 1] = per_object_logits[o].data()[i];
        }
        softmax_in_place(&mut scratch);
        for slot in 0..k {
            planes[slot][i] = scratch[slot + 1];
        }
    }
    let ids: Vec<ObjectId> = order.iter().map(|&i| object_ids[i]).collect();
    SegmentationResult::from_probabilities(h, w, ids, planes)
}
