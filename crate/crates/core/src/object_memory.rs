//! Object memory: compact per-object summaries built by mask pooling.

use crate::error::{ensure, Error, Result};
use crate::init::{stream, Init};
use crate::memory::{MemoryBank, ObjectFeatures, ObjectId};
use crate::numerics::Tensor;

/// Floor on pooling mass; rows below it pool to the zero vector.
pub const POOL_EPS: f32 = 1e-7;
const WINDOW_SIGMA: f32 = 0.35;

/// `N x P` pooling masks with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingMasks(pub Tensor);

/// `S[q] = sum_i W[q,i] U[i] / max(sum_i W[q,i], eps)`.
pub fn mask_pool(features: &Tensor, masks: &Tensor) -> Result<Tensor> {
    let (sums, weights) = pooled_statistics(features, masks)?;
    Ok(normalize_pooled(&sums, &weights))
}

/// Unnormalized pooling sums and per-row mask mass.
pub fn pooled_statistics(features: &Tensor, masks: &Tensor) -> Result<(Tensor, Vec<f32>)> {
    let (m, c) = features.dims2()?;
    let (n, wm) = masks.dims2()?;
    ensure!(
        wm == m,
        Contract,
        "pooling masks cover {wm} positions, features have {m}"
    );
    let mut sums = Tensor::zeros(&[n, c]);
    let mut weights = vec![0.0f32; n];
    let mut acc = vec![0.0f64; c];
    for (q, (out, mass)) in sums
        .data_mut()
        .chunks_mut(c)
        .zip(weights.iter_mut())
        .enumerate()
    {
        acc.fill(0.0);
        let mut total = 0.0f64;
        for (i, &w) in masks.row(q).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            total += f64::from(w);
            for (a, &u) in acc.iter_mut().zip(features.row(i)) {
                *a += f64::from(w) * f64::from(u);
            }
        }
        *mass = total as f32;
        out.iter_mut().zip(&acc).for_each(|(o, &a)| *o = a as f32);
    }
    Ok((sums, weights))
}

fn normalize_pooled(sums: &Tensor, weights: &[f32]) -> Tensor {
    let mut out = sums.clone();
    let c = sums.shape()[1];
    for (row, &mass) in out.data_mut().chunks_mut(c).zip(weights) {
        if mass < POOL_EPS {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= mass);
        }
    }
    out
}

/// `N/2` fixed Gaussian windows over normalized grid coordinates.
#[derive(Debug, Clone)]
pub struct PoolingWindows {
    centers: Vec<(f32, f32)>,
}

impl PoolingWindows {
    pub fn seeded(num_queries: usize, seed: u64) -> Result<Self> {
        ensure!(
            num_queries >= 2 && num_queries.is_multiple_of(2),
            Contract,
            "number of pooling masks must be even and >= 2, got {num_queries}"
        );
        let mut init = Init::new(seed, stream::POOLING_WINDOWS);
        let centers = (0..num_queries / 2)
            .map(|_| (init.unit(), init.unit()))
            .collect();
        Ok(Self { centers })
    }

    pub fn num_masks(&self) -> usize {
        self.centers.len() * 2
    }

    /// Window `j` sampled at every cell centre of an `h x w` grid, in `(0, 1]`.
    pub fn window(&self, j: usize, h: usize, w: usize) -> Vec<f32> {
        let (cy, cx) = self.centers[j];
        let denom = 2.0 * WINDOW_SIGMA * WINDOW_SIGMA;
        (0..h * w)
            .map(|i| {
                let y = ((i / w) as f32 + 0.5) / h as f32;
                let x = ((i % w) as f32 + 0.5) / w as f32;
                (-((y - cy).powi(2) + (x - cx).powi(2)) / denom).exp()
            })
            .collect()
    }

    /// Foreground rows (mask x window) first, then background rows.
    pub fn derive(&self, soft_mask: &Tensor) -> Result<PoolingMasks> {
        let (h, w) = match soft_mask.shape() {
            [h, w] | [h, w, 1] => (*h, *w),
            s => return Err(Error::Shape(format!("soft mask must be h x w, got {s:?}"))),
        };
        let half = self.centers.len();
        let p = h * w;
        let mut out = Tensor::zeros(&[2 * half, p]);
        let m = soft_mask.data();
        for j in 0..half {
            let win = self.window(j, h, w);
            let data = out.data_mut();
            for i in 0..p {
                let mi = m[i].clamp(0.0, 1.0);
                data[j * p + i] = mi * win[i];
                data[(half + j) * p + i] = (1.0 - mi) * win[i];
            }
        }
        Ok(PoolingMasks(out))
    }
}

/// Per-frame statistics stored alongside one object's memory values.
pub fn object_features(values: Tensor, masks: &PoolingMasks) -> Result<ObjectFeatures> {
    let (pooled_sums, pooled_weights) = pooled_statistics(&values, &masks.0)?;
    Ok(ObjectFeatures {
        values,
        pooled_sums,
        pooled_weights,
    })
}

/// Object memory `S` over every frame currently in the bank.
pub fn object_summary(bank: &MemoryBank, object_id: ObjectId) -> Result<Tensor> {
    let mut sums: Option<Tensor> = None;
    let mut weights: Vec<f32> = Vec::new();
    for frame in bank.frames() {
        let Some(obj) = frame.objects.get(&object_id) else {
            continue;
        };
        match &mut sums {
            None => {
                sums = Some(obj.pooled_sums.clone());
                weights = obj.pooled_weights.clone();
            }
            Some(acc) => {
                ensure!(
                    acc.shape() == obj.pooled_sums.shape(),
                    Shape,
                    "pooled statistics change shape at frame {}",
                    frame.frame_index
                );
                acc.data_mut()
                    .iter_mut()
                    .zip(obj.pooled_sums.data())
                    .for_each(|(a, b)| *a += b);
                weights
                    .iter_mut()
                    .zip(&obj.pooled_weights)
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    let sums = sums.ok_or_else(|| {
        Error::Contract(format!("object {object_id} has no statistics in memory"))
    })?;
    Ok(normalize_pooled(&sums, &weights))
}
