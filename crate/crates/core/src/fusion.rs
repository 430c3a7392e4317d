//! Test-time augmentation and multi-level fusion.
//!
//! Pixel level: soft voting, i.e. a weighted mean of per-object probabilities
//! followed by argmax. Video level: per video, the run with the best J&F in
//! its score log wins.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::memory::ObjectId;
use crate::numerics::{bilinear_resize, hflip, Tensor};

/// Per-frame segmentation: label map plus per-object probability planes.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub video_id: String,
    pub run_id: String,
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    /// Ascending, never 0.
    pub object_ids: Vec<ObjectId>,
    /// One `H*W` plane per object, in `object_ids` order.
    pub probabilities: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
}

/// Argmax over `[background, objects...]`, where background is
/// `1 - sum(objects)`; ties go to the lower label.
pub fn label_at(object_ids: &[ObjectId], probs: impl Iterator<Item = f32> + Clone) -> u8 {
    let bg = 1.0 - probs.clone().sum::<f32>();
    let mut best = (bg, 0u8);
    for (p, &id) in probs.zip(object_ids) {
        if p > best.0 {
            best = (p, id);
        }
    }
    best.1
}

impl SegmentationResult {
    pub fn from_probabilities(
        height: usize,
        width: usize,
        object_ids: Vec<ObjectId>,
        probabilities: Vec<Vec<f32>>,
    ) -> Result<Self> {
        ensure!(
            object_ids.windows(2).all(|w| w[0] < w[1]) && !object_ids.contains(&0),
            Contract,
            "object ids must be strictly ascending and non-zero: {object_ids:?}"
        );
        ensure!(
            probabilities.len() == object_ids.len()
                && probabilities.iter().all(|p| p.len() == height * width),
            Shape,
            "expected {} planes of {}x{}",
            object_ids.len(),
            height,
            width
        );
        let mut r = Self {
            video_id: String::new(),
            run_id: String::new(),
            frame_index: 0,
            height,
            width,
            object_ids,
            probabilities,
            labels: Vec::new(),
        };
        r.relabel();
        Ok(r)
    }

    /// One-hot probabilities from a label map.
    pub fn from_labels(
        height: usize,
        width: usize,
        labels: &[u8],
        object_ids: Vec<ObjectId>,
    ) -> Result<Self> {
        ensure!(
            labels.len() == height * width,
            Shape,
            "label map has {} pixels, expected {}",
            labels.len(),
            height * width
        );
        let planes = object_ids
            .iter()
            .map(|&id| labels.iter().map(|&l| f32::from(l == id)).collect())
            .collect();
        let mut r = Self::from_probabilities(height, width, object_ids, planes)?;
        // keep the given labels verbatim, including ids outside the object set
        r.labels = labels.to_vec();
        Ok(r)
    }

    pub fn with_meta(mut self, video_id: &str, run_id: &str, frame_index: usize) -> Self {
        self.video_id = video_id.to_owned();
        self.run_id = run_id.to_owned();
        self.frame_index = frame_index;
        self
    }

    pub fn background(&self, pixel: usize) -> f32 {
        1.0 - self.probabilities.iter().map(|p| p[pixel]).sum::<f32>()
    }

    pub fn relabel(&mut self) {
        let n = self.height * self.width;
        let planes = &self.probabilities;
        self.labels = (0..n)
            .map(|i| label_at(&self.object_ids, planes.iter().map(move |p| p[i])))
            .collect();
    }

    /// Probability plane of one object, if present.
    pub fn plane(&self, id: ObjectId) -> Option<&[f32]> {
        self.object_ids
            .iter()
            .position(|&o| o == id)
            .map(|i| self.probabilities[i].as_slice())
    }

    /// `H x W x (K+1)` stack with background first.
    fn stacked(&self) -> Tensor {
        let k = self.object_ids.len();
        let n = self.height * self.width;
        let mut t = Tensor::zeros(&[self.height, self.width, k + 1]);
        for (i, px) in t.data_mut().chunks_mut(k + 1).enumerate().take(n) {
            px[0] = self.background(i);
            for (j, plane) in self.probabilities.iter().enumerate() {
                px[j + 1] = plane[i];
            }
        }
        t
    }
}

/// TTA scale: either the native resolution or a shorter-side target.
///
/// Serialized as the string `"native"` or a bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Native,
    ShorterSide(usize),
}

impl Serialize for Scale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Native => s.serialize_str("native"),
            Self::ShorterSide(v) => s.serialize_u64(*v as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => n.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "native" => Ok(Self::Native),
            n => match n.parse::<usize>() {
                Ok(v) if v >= 4 => Ok(Self::ShorterSide(v)),
                _ => Err(format!("invalid scale `{n}` (expected `native` or an integer >= 4)")),
            },
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Native => f.write_str("native"),
            Self::ShorterSide(v) => write!(f, "{v}"),
        }
    }
}

/// The four shorter-side scales of the multi-scale recipe.
pub const REFERENCE_SCALES: [Scale; 4] = [
    Scale::ShorterSide(480),
    Scale::ShorterSide(660),
    Scale::ShorterSide(800),
    Scale::ShorterSide(1000),
];

fn round_to_4(v: f64) -> usize {
    ((v / 4.0).round() as usize * 4).max(4)
}

/// Output extents for a scale: shorter side hits the target, aspect kept,
/// both sides rounded to the nearest multiple of 4.
pub fn target_size(h: usize, w: usize, scale: Scale) -> (usize, usize) {
    match scale {
        Scale::Native => (h, w),
        Scale::ShorterSide(s) => {
            let short = h.min(w) as f64;
            let s = s as f64;
            let (th, tw) = (h as f64 * s / short, w as f64 * s / short);
            (round_to_4(th), round_to_4(tw))
        }
    }
}

/// How one augmented copy of a video was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariantDescriptor {
    pub scale: Scale,
    pub flip: bool,
    pub native: (usize, usize),
    pub size: (usize, usize),
}

impl VariantDescriptor {
    pub fn new(native: (usize, usize), scale: Scale, flip: bool) -> Self {
        Self {
            scale,
            flip,
            native,
            size: target_size(native.0, native.1, scale),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip && self.size == self.native
    }

    pub fn apply_frame(&self, frame: &Tensor) -> Result<Tensor> {
        let (h, w, _) = frame.dims3()?;
        ensure!(
            (h, w) == self.native,
            Contract,
            "frame is {h}x{w}, variant expects {:?}",
            self.native
        );
        let mut out = bilinear_resize(frame, self.size.0, self.size.1)?;
        if self.flip {
            out = hflip(&out)?;
        }
        Ok(out)
    }

    /// Nearest-neighbour resample (half-pixel centres) then optional flip.
    pub fn apply_labels(&self, labels: &[u8]) -> Result<Vec<u8>> {
        let (h, w) = self.native;
        let (oh, ow) = self.size;
        ensure!(
            labels.len() == h * w,
            Shape,
            "label map has {} pixels, expected {h}x{w}",
            labels.len()
        );
        let nearest = |d: usize, src: usize, dst: usize| {
            (((d as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1)
        };
        let mut out = vec![0u8; oh * ow];
        for y in 0..oh {
            let sy = nearest(y, h, oh);
            for x in 0..ow {
                let sx = nearest(x, w, ow);
                let dx = if self.flip { ow - 1 - x } else { x };
                out[y * ow + dx] = labels[sy * w + sx];
            }
        }
        Ok(out)
    }
}

/// One variant per `(scale, flip)` pair, scale-major, unflipped first.
pub fn make_variants(
    frames: &[Tensor],
    scales: &[Scale],
    flip: bool,
) -> Result<Vec<(VariantDescriptor, Vec<Tensor>)>> {
    ensure!(!scales.is_empty(), Contract, "at least one scale is required");
    ensure!(!frames.is_empty(), Contract, "video has no frames");
    let (h, w, _) = frames[0].dims3()?;
    let flips: &[bool] = if flip { &[false, true] } else { &[false] };
    let mut out = Vec::with_capacity(scales.len() * flips.len());
    for &scale in scales {
        for &f in flips {
            let desc = VariantDescriptor::new((h, w), scale, f);
            let transformed = frames
                .iter()
                .map(|fr| desc.apply_frame(fr))
                .collect::<Result<Vec<_>>>()?;
            out.push((desc, transformed));
        }
    }
    Ok(out)
}

/// Maps a variant's result back to native resolution.
pub fn invert_variant(
    result: &SegmentationResult,
    desc: &VariantDescriptor,
) -> Result<SegmentationResult> {
    ensure!(
        (result.height, result.width) == desc.size,
        Contract,
        "result is {}x{}, descriptor produced {:?}",
        result.height,
        result.width,
        desc.size
    );
    if desc.is_identity() {
        return Ok(result.clone());
    }
    let mut stack = result.stacked();
    if desc.flip {
        stack = hflip(&stack)?;
    }
    let resized = desc.size != desc.native;
    if resized {
        stack = bilinear_resize(&stack, desc.native.0, desc.native.1)?;
    }
    let (h, w) = desc.native;
    let k = result.object_ids.len();
    let mut planes = vec![vec![0.0f32; h * w]; k];
    for (i, px) in stack.data().chunks(k + 1).enumerate() {
        let norm = if resized { px.iter().sum::<f32>() } else { 1.0 };
        for j in 0..k {
            planes[j][i] = if resized { px[j + 1] / norm } else { px[j + 1] };
        }
    }
    let out = SegmentationResult::from_probabilities(h, w, result.object_ids.clone(), planes)?;
    Ok(out.with_meta(&result.video_id, &result.run_id, result.frame_index))
}

/// Weighted soft voting of results for the same frame.
///
/// Zero-weight results are ignored. The mean is taken relative to the first
/// remaining result, so agreeing inputs reproduce it exactly.
pub fn fuse_pixel(results: &[SegmentationResult], weights: &[f32]) -> Result<SegmentationResult> {
    ensure!(!results.is_empty(), Contract, "nothing to fuse");
    ensure!(
        results.len() == weights.len(),
        Contract,
        "{} results but {} weights",
        results.len(),
        weights.len()
    );
    ensure!(
        weights.iter().all(|w| w.is_finite() && *w >= 0.0),
        Contract,
        "fusion weights must be finite and non-negative"
    );
    let first = &results[0];
    for r in results {
        ensure!(
            r.object_ids == first.object_ids,
            Contract,
            "object sets differ: {:?} vs {:?} (video {}, frame {})",
            r.object_ids,
            first.object_ids,
            first.video_id,
            first.frame_index
        );
        ensure!(
            (r.height, r.width) == (first.height, first.width),
            Contract,
            "extents differ: {}x{} vs {}x{}",
            r.height,
            r.width,
            first.height,
            first.width
        );
    }
    let kept: Vec<(&SegmentationResult, f32)> = results
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(r, &w)| (r, w))
        .collect();
    let total: f32 = kept.iter().map(|(_, w)| w).sum();
    ensure!(total > 0.0, Contract, "fusion weights are all zero");
    let reference = kept[0].0;
    let n = first.height * first.width;
    let planes = (0..first.object_ids.len())
        .map(|k| {
            (0..n)
                .map(|i| {
                    let base = reference.probabilities[k][i];
                    let delta: f32 = kept
                        .iter()
                        .map(|(r, w)| (w / total) * (r.probabilities[k][i] - base))
                        .sum();
                    base + delta
                })
                .collect()
        })
        .collect();
    let fused = SegmentationResult::from_probabilities(
        first.height,
        first.width,
        first.object_ids.clone(),
        planes,
    )?;
    Ok(fused.with_meta(&first.video_id, &first.run_id, first.frame_index))
}

/// Per-video scores of one run, on a 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalScore {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLog {
    pub run_id: String,
    pub videos: Vec<VideoScore>,
    /// Mean of the per-video scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GlobalScore>,
}

impl ScoreLog {
    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            for (name, x) in [("J", v.j), ("F", v.f), ("JF", v.jf)] {
                ensure!(
                    (0.0..=100.0).contains(&x),
                    Contract,
                    "run {}: video {} has {name} = {x} outside [0, 100]",
                    self.run_id,
                    v.video_id
                );
            }
            ensure!(
                (v.jf - (v.j + v.f) / 2.0).abs() <= 1e-6,
                Contract,
                "run {}: video {} has JF {} != (J+F)/2",
                self.run_id,
                v.video_id,
                v.jf
            );
        }
        Ok(())
    }

    pub fn score(&self, video_id: &str) -> Option<&VideoScore> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }
}

/// Chooses, per video, the run with the highest J&F (lowest run id on ties).
pub fn fuse_video(logs: &[ScoreLog]) -> Result<BTreeMap<String, String>> {
    ensure!(!logs.is_empty(), Contract, "no score logs given");
    let mut seen = BTreeSet::new();
    for log in logs {
        log.validate()?;
        ensure!(
            seen.insert(log.run_id.as_str()),
            Contract,
            "duplicate run id {}",
            log.run_id
        );
    }
    let videos: BTreeSet<&str> = logs
        .iter()
        .flat_map(|l| l.videos.iter().map(|v| v.video_id.as_str()))
        .collect();
    let mut selection = BTreeMap::new();
    for video in videos {
        let mut best: Option<(f64, &str)> = None;
        for log in logs {
            let score = log.score(video).ok_or_else(|| {
                Error::Contract(format!("run {} has no score for video {video}", log.run_id))
            })?;
            let better = match best {
                None => true,
                Some((s, id)) => {
                    score.jf > s || (score.jf == s && log.run_id.as_str() < id)
                }
            };
            if better {
                best = Some((score.jf, &log.run_id));
            }
        }
        let (_, run) = best.expect("at least one log");
        selection.insert(video.to_owned(), run.to_owned());
    }
    Ok(selection)
}

/// Assembles the final per-video outputs from the chosen runs.
pub fn select_outputs<T: Clone>(
    selection: &BTreeMap<String, String>,
    per_run: &BTreeMap<String, BTreeMap<String, T>>,
) -> Result<BTreeMap<String, T>> {
    selection
        .iter()
        .map(|(video, run)| {
            per_run
                .get(run)
                .and_then(|outputs| outputs.get(video))
                .cloned()
                .map(|o| (video.clone(), o))
                .ok_or_else(|| {
                    Error::Contract(format!("run {run} has no output for video {video}"))
                })
        })
        .collect()
}
