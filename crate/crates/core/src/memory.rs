//! Pixel memory: per-frame keys, per-object values, top-k readout and eviction.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{ensure, Error, Result};
use crate::numerics::{linear, softmax_in_place, Tensor};
use crate::par;

pub type ObjectId = u8;

/// Videos with at least this many frames use the long-video settings.
pub const LONG_VIDEO_THRESHOLD: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct MemoryConfig {
    pub max_mem_frames: usize,
    pub min_mem_frames: usize,
    pub top_k: usize,
}

impl MemoryConfig {
    pub const SHORT_VIDEO: Self = Self {
        max_mem_frames: 15,
        min_mem_frames: 14,
        top_k: 30,
    };
    pub const LONG_VIDEO: Self = Self {
        max_mem_frames: 45,
        min_mem_frames: 40,
        top_k: 40,
    };

    pub fn new(max_mem_frames: usize, min_mem_frames: usize, top_k: usize) -> Result<Self> {
        let cfg = Self {
            max_mem_frames,
            min_mem_frames,
            top_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            1 <= self.min_mem_frames && self.min_mem_frames <= self.max_mem_frames,
            Contract,
            "need 1 <= min_mem_frames ({}) <= max_mem_frames ({})",
            self.min_mem_frames,
            self.max_mem_frames
        );
        ensure!(self.top_k >= 1, Contract, "top_k must be >= 1");
        Ok(())
    }
}

/// Picks memory settings from the video length.
pub fn route_hyperparams(num_frames: usize) -> MemoryConfig {
    if num_frames < LONG_VIDEO_THRESHOLD {
        MemoryConfig::SHORT_VIDEO
    } else {
        MemoryConfig::LONG_VIDEO
    }
}

/// One object's contribution to a memory frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeatures {
    /// `P x Cv` fused mask/image embedding.
    pub values: Tensor,
    /// `N x Cv` mask-pooled sums of `values`.
    pub pooled_sums: Tensor,
    /// `N` total pooling-mask mass per query slot.
    pub pooled_weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryFrame {
    pub frame_index: usize,
    /// `P x Ck`, stride-16 grid flattened row-major.
    pub keys: Tensor,
    pub objects: BTreeMap<ObjectId, ObjectFeatures>,
}

impl MemoryFrame {
    pub fn new(
        frame_index: usize,
        keys: Tensor,
        objects: BTreeMap<ObjectId, ObjectFeatures>,
    ) -> Result<Self> {
        let (p, _) = keys.dims2()?;
        for (id, obj) in &objects {
            let (vp, _) = obj.values.dims2()?;
            ensure!(
                vp == p,
                Shape,
                "object {id}: values have {vp} rows, keys have {p}"
            );
            ensure!(
                obj.pooled_sums.shape()[0] == obj.pooled_weights.len(),
                Shape,
                "object {id}: pooled sums/weights disagree on N"
            );
        }
        Ok(Self {
            frame_index,
            keys,
            objects,
        })
    }

    pub fn positions(&self) -> usize {
        self.keys.shape()[0]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    frames: Vec<MemoryFrame>,
    permanent_count: usize,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> &[MemoryFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn permanent_count(&self) -> usize {
        self.permanent_count
    }

    pub fn transient_count(&self) -> usize {
        self.frames.len() - self.permanent_count
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }

    /// Total memory positions across all frames.
    pub fn positions(&self) -> usize {
        self.frames.iter().map(MemoryFrame::positions).sum()
    }

    pub fn add_frame(&mut self, frame: MemoryFrame, permanent: bool) -> Result<()> {
        if let Some(last) = self.frames.last() {
            ensure!(
                frame.frame_index > last.frame_index,
                Contract,
                "memory frame {} does not follow stored frame {}",
                frame.frame_index,
                last.frame_index
            );
            if let Some(first) = self.frames.first() {
                ensure!(
                    frame.keys.shape()[1] == first.keys.shape()[1],
                    Shape,
                    "key width {} differs from bank key width {}",
                    frame.keys.shape()[1],
                    first.keys.shape()[1]
                );
            }
        }
        if permanent {
            ensure!(
                self.transient_count() == 0,
                Contract,
                "permanent frames may only be inserted before transient ones"
            );
            self.permanent_count += 1;
        }
        self.frames.push(frame);
        Ok(())
    }

    /// FIFO over transient frames: once above `max_mem_frames`, trims back to
    /// `min_mem_frames`. Returns how many frames were dropped.
    pub fn evict(&mut self, cfg: &MemoryConfig) -> usize {
        let transient = self.transient_count();
        if transient <= cfg.max_mem_frames {
            return 0;
        }
        let drop = transient - cfg.min_mem_frames;
        let start = self.permanent_count;
        self.frames.drain(start..start + drop);
        drop
    }

    fn key_width(&self) -> Result<usize> {
        self.frames
            .first()
            .map(|f| f.keys.shape()[1])
            .ok_or_else(|| Error::Contract("read from an empty memory bank".into()))
    }
}

/// Kept attention for one query row: `(memory position, weight)` in
/// ascending position order.
pub type AttentionRow = Vec<(usize, f32)>;

/// Orders affinities high-to-low, lower position first on ties.
fn rank(a: &(f32, usize), b: &(f32, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top-k softmax attention of every query row over all memory positions.
///
/// Affinity is the scaled dot product `q.k / sqrt(Ck)`.
pub fn attention_rows(
    bank: &MemoryBank,
    query_keys: &Tensor,
    top_k: usize,
) -> Result<Vec<AttentionRow>> {
    let ck = bank.key_width()?;
    let (p, qk) = query_keys.dims2()?;
    ensure!(qk == ck, Shape, "query keys have width {qk}, memory keys {ck}");
    ensure!(top_k >= 1, Contract, "top_k must be >= 1");
    let m_total = bank.positions();
    let scale = 1.0 / (ck as f32).sqrt();
    Ok(par::map_range(p, |row| {
        let q = query_keys.row(row);
        let mut scored = Vec::with_capacity(m_total);
        for frame in &bank.frames {
            let offset = scored.len();
            for (j, k) in frame.keys.data().chunks_exact(ck).enumerate() {
                let dot: f32 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                scored.push((dot * scale, offset + j));
            }
        }
        if top_k < scored.len() {
            scored.select_nth_unstable_by(top_k - 1, rank);
            scored.truncate(top_k);
        }
        scored.sort_unstable_by_key(|&(_, i)| i);
        let mut weights: Vec<f32> = scored.iter().map(|&(a, _)| a).collect();
        softmax_in_place(&mut weights);
        scored
            .iter()
            .zip(weights)
            .map(|(&(_, i), w)| (i, w))
            .collect()
    }))
}

/// Concatenated values of `object_id` across the bank, borrowed per frame.
fn object_values(bank: &MemoryBank, object_id: ObjectId) -> Result<Vec<&Tensor>> {
    bank.frames
        .iter()
        .map(|f| {
            f.objects
                .get(&object_id)
                .map(|o| &o.values)
                .ok_or_else(|| {
                    Error::Contract(format!(
                        "memory frame {} has no entry for object {object_id}",
                        f.frame_index
                    ))
                })
        })
        .collect()
}

/// Weighted sum of memory values under precomputed attention rows.
pub fn apply_attention(
    bank: &MemoryBank,
    rows: &[AttentionRow],
    object_id: ObjectId,
) -> Result<Tensor> {
    let values = object_values(bank, object_id)?;
    let cv = values[0].shape()[1];
    let mut lookup = Vec::with_capacity(bank.positions());
    for v in &values {
        lookup.extend(v.data().chunks_exact(cv));
    }
    let mut out = Tensor::zeros(&[rows.len().max(1), cv]);
    par::for_each_row(out.data_mut(), cv, |r, acc| {
        for &(m, w) in &rows[r] {
            for (a, v) in acc.iter_mut().zip(lookup[m]) {
                *a += w * v;
            }
        }
    });
    Ok(out)
}

/// Maps `concat(attended value, query embedding)` to the pixel readout.
#[derive(Debug, Clone)]
pub enum ReadoutProjection {
    Linear { weight: Tensor, bias: Tensor },
    /// Passes the attended value through unchanged.
    AttendedOnly,
}

impl ReadoutProjection {
    pub fn apply(&self, attended: &Tensor, query_f16: &Tensor) -> Result<Tensor> {
        match self {
            Self::AttendedOnly => Ok(attended.clone()),
            Self::Linear { weight, bias } => {
                let (p, cv) = attended.dims2()?;
                let (qp, ce) = query_f16.dims2()?;
                ensure!(
                    p == qp,
                    Shape,
                    "readout: {p} attended rows vs {qp} query rows"
                );
                let mut cat = Tensor::zeros(&[p, cv + ce]);
                for (i, row) in cat.data_mut().chunks_mut(cv + ce).enumerate() {
                    row[..cv].copy_from_slice(attended.row(i));
                    row[cv..].copy_from_slice(query_f16.row(i));
                }
                linear(&cat, weight, Some(bias))
            }
        }
    }
}

/// Pixel readout `R0` of one object for the query frame.
pub fn read_memory(
    bank: &MemoryBank,
    query_keys: &Tensor,
    object_id: ObjectId,
    query_f16: &Tensor,
    cfg: &MemoryConfig,
    projection: &ReadoutProjection,
) -> Result<Tensor> {
    let rows = attention_rows(bank, query_keys, cfg.top_k)?;
    let attended = apply_attention(bank, &rows, object_id)?;
    projection.apply(&attended, query_f16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(index: usize) -> MemoryFrame {
        frame_with(index, Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 3]))
    }

    fn frame_with(index: usize, keys: Tensor, values: Tensor) -> MemoryFrame {
        let objects = BTreeMap::from([(
            1,
            ObjectFeatures {
                values,
                pooled_sums: Tensor::zeros(&[2, 3]),
                pooled_weights: vec![0.0; 2],
            },
        )]);
        MemoryFrame::new(index, keys, objects).unwrap()
    }

    #[test]
    fn routing_follows_video_length() {
        assert_eq!(route_hyperparams(150), MemoryConfig::new(15, 14, 30).unwrap());
        assert_eq!(route_hyperparams(250), MemoryConfig::new(45, 40, 40).unwrap());
        assert_eq!(route_hyperparams(199), MemoryConfig::SHORT_VIDEO);
        assert_eq!(route_hyperparams(200), MemoryConfig::LONG_VIDEO);
        assert_eq!(route_hyperparams(1), MemoryConfig::SHORT_VIDEO);
    }

    #[test]
    fn config_validation() {
        assert!(MemoryConfig::new(3, 4, 1).is_err());
        assert!(MemoryConfig::new(3, 0, 1).is_err());
        assert!(MemoryConfig::new(3, 3, 0).is_err());
    }

    #[test]
    fn add_frame_ordering() {
        let mut bank = MemoryBank::new();
        bank.add_frame(frame(0), true).unwrap();
        assert_eq!((bank.len(), bank.permanent_count()), (1, 1));
        bank.add_frame(frame(1), false).unwrap();
        assert_eq!(bank.frame_indices(), vec![0, 1]);
        assert!(matches!(
            bank.add_frame(frame(1), false),
            Err(Error::Contract(_))
        ));
        assert!(bank.add_frame(frame(5), true).is_err());
    }

    #[test]
    fn eviction_examples() {
        let cfg = MemoryConfig::new(15, 14, 1).unwrap();
        let mut bank = MemoryBank::new();
        bank.add_frame(frame(0), true).unwrap();
        for i in 1..=15 {
            bank.add_frame(frame(i), false).unwrap();
        }
        assert_eq!(bank.evict(&cfg), 0);
        assert_eq!(bank.transient_count(), 15);
        bank.add_frame(frame(16), false).unwrap();
        assert_eq!(bank.evict(&cfg), 2);
        assert_eq!(bank.transient_count(), 14);
        assert_eq!(bank.frame_indices()[..3], [0, 3, 4]);
    }

    #[test]
    fn empty_bank_read_is_contract_error() {
        let bank = MemoryBank::new();
        let q = Tensor::zeros(&[4, 2]);
        assert!(matches!(
            attention_rows(&bank, &q, 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_memory_position_gets_full_weight() {
        let mut bank = MemoryBank::new();
        let values = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        bank.add_frame(frame_with(0, Tensor::filled(&[1, 2], 0.3), values.clone()), true)
            .unwrap();
        let q = Tensor::from_fn(&[5, 2], |i| i as f32 - 2.0);
        let rows = attention_rows(&bank, &q, 4).unwrap();
        assert!(rows.iter().all(|r| r == &vec![(0, 1.0)]));
        let v = apply_attention(&bank, &rows, 1).unwrap();
        for p in 0..5 {
            assert_eq!(v.row(p), values.data());
        }
    }

    #[test]
    fn ties_prefer_lower_positions() {
        let mut bank = MemoryBank::new();
        bank.add_frame(
            frame_with(0, Tensor::filled(&[4, 2], 1.0), Tensor::zeros(&[4, 3])),
            true,
        )
        .unwrap();
        let rows = attention_rows(&bank, &Tensor::filled(&[1, 2], 1.0), 2).unwrap();
        assert_eq!(rows[0].iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn projection_concatenates_attended_and_query() {
        let w = Tensor::new(vec![3, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let proj = ReadoutProjection::Linear {
            weight: w,
            bias: Tensor::filled(&[1], 0.5),
        };
        let att = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let q = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(proj.apply(&att, &q).unwrap().data(), &[321.5]);
    }

    proptest! {
        #[test]
        fn eviction_keeps_bounds_and_permanent_prefix(
            max in 1usize..12, gap in 0usize..6, steps in 1usize..80,
        ) {
            let min = max.saturating_sub(gap).max(1);
            let cfg = MemoryConfig::new(max, min, 1).unwrap();
            let mut bank = MemoryBank::new();
            bank.add_frame(frame(0), true).unwrap();
            for t in 1..=steps {
                bank.add_frame(frame(t), false).unwrap();
                let fired = bank.evict(&cfg) > 0;
                prop_assert_eq!(bank.frames()[0].frame_index, 0);
                prop_assert!(bank.transient_count() <= max);
                if fired {
                    prop_assert_eq!(bank.transient_count(), min);
                }
                let idx = bank.frame_indices();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
