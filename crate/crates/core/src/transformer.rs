//! Object transformer: object queries and pixel readout attend to each other.
//!
//! Each block runs, in order:
//! 1. queries cross-attend to the readout, then residual and layer norm;
//! 2. the readout cross-attends to the updated queries, then residual and norm;
//! 3. a per-stream feed-forward net, then residual and norm.
//!
//! No positional encoding is applied to the readout. Reductions over readout
//! positions use an order-independent sum, so permuting readout rows permutes
//! the output rows bit-for-bit.

use crate::config::ModelConfig;
use crate::encoders::Norm;
use crate::error::{ensure, Result};
use crate::init::{stream, Init};
use crate::numerics::{canonical_sum, gelu, linear, softmax_in_place, Tensor};
use crate::par;

/// Multi-head cross-attention projections, all `C x C`.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub query_attn: CrossAttention,
    pub query_norm1: Norm,
    pub readout_attn: CrossAttention,
    pub readout_norm1: Norm,
    pub query_ffn: FeedForward,
    pub query_norm2: Norm,
    pub readout_ffn: FeedForward,
    pub readout_norm2: Norm,
}

#[derive(Debug, Clone)]
pub struct TransformerParams {
    pub blocks: Vec<BlockWeights>,
    pub heads: usize,
}

impl CrossAttention {
    fn seeded(init: &mut Init, c: usize) -> Self {
        let mut w = || init.fan_in(&[c, c], c);
        let (wq, wk, wv, wo) = (w(), w(), w(), w());
        Self {
            wq,
            bq: init.uniform(&[c], 0.02),
            wk,
            bk: init.uniform(&[c], 0.02),
            wv,
            bv: init.uniform(&[c], 0.02),
            wo,
            bo: init.uniform(&[c], 0.02),
        }
    }

    fn width(&self) -> usize {
        self.wq.shape()[0]
    }
}

impl FeedForward {
    fn seeded(init: &mut Init, c: usize, mult: usize) -> Self {
        let hidden = c * mult;
        Self {
            w1: init.fan_in(&[c, hidden], c),
            b1: init.uniform(&[hidden], 0.02),
            w2: init.fan_in(&[hidden, c], hidden),
            b2: init.uniform(&[c], 0.02),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let h = gelu(&linear(x, &self.w1, Some(&self.b1))?);
        linear(&h, &self.w2, Some(&self.b2))
    }
}

impl TransformerParams {
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Self {
        Self::seeded_with(
            cfg.layers,
            cfg.embed_dim,
            cfg.heads,
            cfg.ffn_mult,
            seed,
        )
    }

    pub fn seeded_with(layers: usize, c: usize, heads: usize, ffn_mult: usize, seed: u64) -> Self {
        let mut init = Init::new(seed, stream::TRANSFORMER);
        let blocks = (0..layers)
            .map(|_| BlockWeights {
                query_attn: CrossAttention::seeded(&mut init, c),
                query_norm1: Norm::identity(c),
                readout_attn: CrossAttention::seeded(&mut init, c),
                readout_norm1: Norm::identity(c),
                query_ffn: FeedForward::seeded(&mut init, c, ffn_mult),
                query_norm2: Norm::identity(c),
                readout_ffn: FeedForward::seeded(&mut init, c, ffn_mult),
                readout_norm2: Norm::identity(c),
            })
            .collect();
        Self { blocks, heads }
    }

    /// Identity when there are no blocks.
    pub fn identity(heads: usize) -> Self {
        Self {
            blocks: Vec::new(),
            heads,
        }
    }
}

/// Softmax whose normalizer is an order-independent sum.
fn softmax_canonical(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    row.iter_mut().for_each(|v| *v = (*v - max).exp());
    let mut terms = row.to_vec();
    let sum = canonical_sum(&mut terms);
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Attention of `queries` (rows of the output) over `context` rows.
///
/// With `canonical` set, sums over context rows ignore their order. When
/// `probe` is given, the per-head attention matrices (`rows x context`) are
/// appended to it.
pub fn cross_attention(
    queries: &Tensor,
    context: &Tensor,
    w: &CrossAttention,
    heads: usize,
    canonical: bool,
    probe: Option<&mut Vec<Tensor>>,
) -> Result<Tensor> {
    let (n, c) = queries.dims2()?;
    let (p, cc) = context.dims2()?;
    ensure!(
        c == cc && c == w.width(),
        Shape,
        "attention widths disagree: queries {c}, context {cc}, weights {}",
        w.width()
    );
    ensure!(
        heads >= 1 && c % heads == 0,
        Contract,
        "width {c} not divisible by {heads} heads"
    );
    let dh = c / heads;
    let q = linear(queries, &w.wq, Some(&w.bq))?;
    let k = linear(context, &w.wk, Some(&w.bk))?;
    let v = linear(context, &w.wv, Some(&w.bv))?;
    let scale = 1.0 / (dh as f32).sqrt();

    // per (row, head): probabilities over context
    let probs: Vec<Vec<f32>> = par::map_range(n * heads, |idx| {
        let (row, h) = (idx / heads, idx % heads);
        let qh = &q.row(row)[h * dh..(h + 1) * dh];
        let mut scores: Vec<f32> = (0..p)
            .map(|j| {
                let kh = &k.row(j)[h * dh..(h + 1) * dh];
                qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale
            })
            .collect();
        if canonical {
            softmax_canonical(&mut scores);
        } else {
            softmax_in_place(&mut scores);
        }
        scores
    });

    let mut mixed = Tensor::zeros(&[n, c]);
    par::for_each_row(mixed.data_mut(), c, |row, out| {
        let mut terms = vec![0.0f32; p];
        for h in 0..heads {
            let a = &probs[row * heads + h];
            for d in 0..dh {
                let ch = h * dh + d;
                if canonical {
                    for (j, t) in terms.iter_mut().enumerate() {
                        *t = a[j] * v.row(j)[ch];
                    }
                    out[ch] = canonical_sum(&mut terms);
                } else {
                    out[ch] = (0..p).map(|j| a[j] * v.row(j)[ch]).sum();
                }
            }
        }
    });

    if let Some(sink) = probe {
        for h in 0..heads {
            let data = (0..n)
                .flat_map(|row| probs[row * heads + h].iter().copied())
                .collect();
            sink.push(Tensor::new(vec![n, p], data)?);
        }
    }
    linear(&mixed, &w.wo, Some(&w.bo))
}

/// `X0 = X + S`.
pub fn init_queries(queries: &Tensor, object_memory: &Tensor) -> Result<Tensor> {
    ensure!(
        queries.shape() == object_memory.shape(),
        Contract,
        "queries {:?} and object memory {:?} differ in shape",
        queries.shape(),
        object_memory.shape()
    );
    queries.add(object_memory)
}

/// Attention matrices recorded by [`block_probed`].
#[derive(Debug, Default, Clone)]
pub struct BlockProbe {
    /// Per head, `N x P`: queries over readout positions.
    pub query_to_readout: Vec<Tensor>,
    /// Per head, `P x N`: readout positions over queries.
    pub readout_to_query: Vec<Tensor>,
}

pub fn block(
    queries: &Tensor,
    readout: &Tensor,
    w: &BlockWeights,
    heads: usize,
) -> Result<(Tensor, Tensor)> {
    block_inner(queries, readout, w, heads, None)
}

pub fn block_probed(
    queries: &Tensor,
    readout: &Tensor,
    w: &BlockWeights,
    heads: usize,
) -> Result<(Tensor, Tensor, BlockProbe)> {
    let mut probe = BlockProbe::default();
    let (x, r) = block_inner(queries, readout, w, heads, Some(&mut probe))?;
    Ok((x, r, probe))
}

fn block_inner(
    queries: &Tensor,
    readout: &Tensor,
    w: &BlockWeights,
    heads: usize,
    mut probe: Option<&mut BlockProbe>,
) -> Result<(Tensor, Tensor)> {
    let attn = cross_attention(
        queries,
        readout,
        &w.query_attn,
        heads,
        true,
        probe.as_mut().map(|p| &mut p.query_to_readout),
    )?;
    let x1 = w.query_norm1.apply(&queries.add(&attn)?)?;
    let attn = cross_attention(
        readout,
        &x1,
        &w.readout_attn,
        heads,
        false,
        probe.as_mut().map(|p| &mut p.readout_to_query),
    )?;
    let r1 = w.readout_norm1.apply(&readout.add(&attn)?)?;
    let x2 = w.query_norm2.apply(&x1.add(&w.query_ffn.apply(&x1)?)?)?;
    let r2 = w.readout_norm2.apply(&r1.add(&w.readout_ffn.apply(&r1)?)?)?;
    Ok((x2, r2))
}

/// Runs every block and returns `(X_L, R_L)`.
pub fn forward_both(
    readout: &Tensor,
    queries: &Tensor,
    object_memory: &Tensor,
    params: &TransformerParams,
) -> Result<(Tensor, Tensor)> {
    let mut x = init_queries(queries, object_memory)?;
    let mut r = readout.clone();
    for b in &params.blocks {
        (x, r) = block(&x, &r, b, params.heads)?;
    }
    Ok((x, r))
}

/// Final readout `R_L`; the updated queries are discarded.
pub fn forward(
    readout: &Tensor,
    queries: &Tensor,
    object_memory: &Tensor,
    params: &TransformerParams,
) -> Result<Tensor> {
    Ok(forward_both(readout, queries, object_memory, params)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_queries_cases() {
        let x = Tensor::from_fn(&[3, 4], |i| i as f32 * 0.5);
        let s = Tensor::from_fn(&[3, 4], |i| (i as f32).sin());
        assert_eq!(init_queries(&x, &Tensor::zeros(&[3, 4])).unwrap(), x);
        assert_eq!(init_queries(&Tensor::zeros(&[3, 4]), &s).unwrap(), s);
        let x0 = init_queries(&x, &s).unwrap();
        for i in 0..12 {
            assert_eq!(x0.data()[i], x.data()[i] + s.data()[i]);
        }
        assert!(init_queries(&x, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn zero_layers_is_identity() {
        let r0 = Tensor::from_fn(&[5, 4], |i| i as f32);
        let x = Tensor::zeros(&[2, 4]);
        let out = forward(&r0, &x, &x, &TransformerParams::identity(1)).unwrap();
        assert_eq!(out, r0);
    }

    #[test]
    fn singleton_readout_gets_full_attention() {
        let p = TransformerParams::seeded_with(1, 4, 2, 2, 3);
        let x = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.3).cos());
        let r = Tensor::from_fn(&[1, 4], |i| i as f32 - 1.5);
        let (_, _, probe) = block_probed(&x, &r, &p.blocks[0], 2).unwrap();
        assert_eq!(probe.query_to_readout.len(), 2);
        for head in &probe.query_to_readout {
            assert!(head.data().iter().all(|&a| a == 1.0));
        }
    }
}
