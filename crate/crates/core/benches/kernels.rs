//! Hot kernels and a small end-to-end TTA run.
//!
//! With the default `parallel` feature every benchmark runs twice: on the
//! global rayon pool and inside a one-thread pool. Building with
//! `--no-default-features` gives the plain sequential code path for
//! comparison.

use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use vos_core::fusion::Scale;
use vos_core::memory::{attention_rows, apply_attention, MemoryBank, MemoryFrame, ObjectFeatures};
use vos_core::numerics::conv2d;
use vos_core::{EncoderMode, ModelConfig, PipelineConfig, Segmenter, Tensor, VideoTask};

fn pseudo(shape: &[usize], salt: usize) -> Tensor {
    Tensor::from_fn(shape, |i| (((i * 2654435761 + salt) % 1009) as f32 / 504.5) - 1.0)
}

fn bank(frames: usize, positions: usize, ck: usize, cv: usize) -> MemoryBank {
    let mut bank = MemoryBank::new();
    for t in 0..frames {
        let obj = ObjectFeatures {
            values: pseudo(&[positions, cv], t + 1),
            pooled_sums: Tensor::zeros(&[2, cv]),
            pooled_weights: vec![0.0; 2],
        };
        let frame =
            MemoryFrame::new(t, pseudo(&[positions, ck], t), BTreeMap::from([(1, obj)])).unwrap();
        bank.add_frame(frame, t == 0).unwrap();
    }
    bank
}

fn video(frames: usize, h: usize, w: usize) -> VideoTask {
    VideoTask {
        video_id: "bench".into(),
        frames: (0..frames)
            .map(|t| Tensor::from_fn(&[h, w, 3], |i| ((i * 7 + t * 13) % 256) as f32 / 255.0))
            .collect(),
        annotation: (0..h * w).map(|i| u8::from((i / w) * 2 < h && (i % w) * 2 < w)).collect(),
    }
}

fn small_model() -> PipelineConfig {
    PipelineConfig {
        model: ModelConfig {
            c4: 16,
            c8: 24,
            embed_dim: 32,
            key_dim: 16,
            num_queries: 8,
            layers: 2,
            heads: 2,
            ffn_mult: 2,
            decoder_dim: 16,
        },
        encoder: EncoderMode::Toy,
        seed: 0,
        memory: None,
    }
}

/// Runs `f` on the default pool and, when rayon is enabled, on one thread.
fn both_pools(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    let label = if vos_core::par::is_parallel() { "rayon" } else { "sequential" };
    g.bench_function(BenchmarkId::new(label, "default"), |b| b.iter(&mut f));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("rayon", "1-thread"), |b| {
            pool.install(|| b.iter(&mut f))
        });
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let x = pseudo(&[64, 64, 32], 1);
    let k = pseudo(&[3, 3, 32, 32], 2);
    let bias = Tensor::zeros(&[32]);
    both_pools(c, "conv2d_3x3_64x64x32", || {
        black_box(conv2d(&x, &k, &bias, 1, 1).unwrap());
    });
}

fn readout(c: &mut Criterion) {
    let bank = bank(15, 300, 32, 64);
    let q = pseudo(&[300, 32], 9);
    both_pools(c, "topk_readout_15x300", || {
        let rows = attention_rows(&bank, &q, 30).unwrap();
        black_box(apply_attention(&bank, &rows, 1).unwrap());
    });
}

fn tta(c: &mut Criterion) {
    let task = video(3, 64, 96);
    let seg = Segmenter::new(small_model()).unwrap();
    let scales = [Scale::Native, Scale::ShorterSide(96)];
    both_pools(c, "tta_4_variants_3_frames", || {
        black_box(seg.run_video_with_tta(&task, &scales, true, None).unwrap());
    });
}

criterion_group!(benches, conv, readout, tta);
criterion_main!(benches);
