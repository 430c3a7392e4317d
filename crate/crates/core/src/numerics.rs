//! Dense f32 tensor substrate.
//!
//! Images are channels-last (`H x W x C`), matrices are `rows x cols`, and all
//! data is row-major. Accumulation is f32 throughout.

use crate::error::{ensure, Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        ensure!(
            !shape.is_empty() && shape.len() <= 4,
            Shape,
            "rank must be 1..=4, got {}",
            shape.len()
        );
        ensure!(
            shape.iter().all(|&e| e >= 1),
            Shape,
            "all extents must be >= 1, got {shape:?}"
        );
        let n: usize = shape.iter().product();
        ensure!(
            n == data.len(),
            Shape,
            "shape {shape:?} implies {n} elements, got {}",
            data.len()
        );
        Ok(Self { shape, data })
    }

    /// Panics on a zero extent; callers construct shapes from validated inputs.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 4 && shape.iter().all(|&e| e >= 1),
            "invalid tensor shape {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// `(H, W, C)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected rank-3 HxWxC, got {:?}",
                self.shape
            ))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!(
                "expected rank-2 matrix, got {:?}",
                self.shape
            ))),
        }
    }

    /// Row `i` of the tensor viewed as `shape[0] x rest`.
    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn at3(&self, y: usize, x: usize, c: usize) -> f32 {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        ensure!(
            self.shape == other.shape,
            Shape,
            "add: {:?} vs {:?}",
            self.shape,
            other.shape
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// 2-D convolution with symmetric zero padding.
///
/// `input` is `H x W x Cin`, `kernel` is `kh x kw x Cin x Cout`, `bias` has
/// `Cout` entries.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (h, w, cin) = input.dims3()?;
    let (kh, kw, kcin, cout) = match kernel.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::Shape(format!(
                "conv2d kernel must be kh x kw x Cin x Cout, got {:?}",
                kernel.shape
            )))
        }
    };
    ensure!(
        kcin == cin,
        Contract,
        "conv2d: input has {cin} channels, kernel expects {kcin}"
    );
    ensure!(
        bias.len() == cout,
        Shape,
        "conv2d: bias has {} entries, expected {cout}",
        bias.len()
    );
    ensure!(stride >= 1, Contract, "conv2d: stride must be positive");
    ensure!(
        kh <= h + 2 * padding && kw <= w + 2 * padding,
        Contract,
        "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
        h + 2 * padding,
        w + 2 * padding
    );
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor::zeros(&[oh, ow, cout]);
    let (x, k, b) = (&input.data, &kernel.data, &bias.data);
    par::for_each_row(&mut out.data, ow * cout, |oy, row| {
        for ox in 0..ow {
            let acc = &mut row[ox * cout..(ox + 1) * cout];
            acc.copy_from_slice(b);
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &x[(iy as usize * w + ix as usize) * cin..][..cin];
                    let kbase = (ky * kw + kx) * cin * cout;
                    for (ci, &xv) in px.iter().enumerate() {
                        let krow = &k[kbase + ci * cout..][..cout];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF taken from `erf`.
pub fn gelu_scalar(x: f32) -> f32 {
    let x64 = x as f64;
    (x64 * 0.5 * (1.0 + libm::erf(x64 / std::f64::consts::SQRT_2))) as f32
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = gelu_scalar(*v));
    out
}

/// Layer normalization over the last (channel) axis.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
    let c = *x.shape.last().expect("rank >= 1");
    ensure!(
        gain.len() == c && bias.len() == c,
        Shape,
        "layer_norm: gain/bias must have {c} entries, got {}/{}",
        gain.len(),
        bias.len()
    );
    let mut out = x.clone();
    let (g, b) = (&gain.data, &bias.data);
    par::for_each_row(&mut out.data, c, |_, row| layer_norm_row(row, g, b, eps));
    Ok(out)
}

pub(crate) fn layer_norm_row(row: &mut [f32], gain: &[f32], bias: &[f32], eps: f32) {
    let n = row.len() as f32;
    // shifted by the first element so a constant row has exactly zero spread
    let pivot = row[0];
    let mean = pivot + row.iter().map(|v| v - pivot).sum::<f32>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
        *v = (*v - mean) * inv * g + b;
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax applied independently to every row (last axis).
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    ensure!(!x.is_empty(), Contract, "softmax of an empty row");
    let c = *x.shape.last().expect("rank >= 1");
    let mut out = x.clone();
    par::for_each_row(&mut out.data, c, |_, row| softmax_in_place(row));
    Ok(out)
}

/// Half-pixel-center source coordinate, clamped to the valid sample range.
fn source_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (src - i0 as f64) as f32)
}

/// Channelwise bilinear resampling with half-pixel centers.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    ensure!(
        out_h >= 1 && out_w >= 1,
        Contract,
        "bilinear_resize: target extents must be >= 1"
    );
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let cols: Vec<_> = (0..out_w).map(|ox| source_taps(ox, w, out_w)).collect();
    let mut out = Tensor::zeros(&[out_h, out_w, c]);
    let src = &x.data;
    par::for_each_row(&mut out.data, out_w * c, |oy, row| {
        let (y0, y1, fy) = source_taps(oy, h, out_h);
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let at = |y: usize, xx: usize| src[(y * w + xx) * c + ch];
                // a + f(b - a) keeps constants exact
                let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
                let bot = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
                row[ox * c + ch] = top + fy * (bot - top);
            }
        }
    });
    Ok(out)
}

/// Reverses column order of an `H x W x C` tensor.
pub fn hflip(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let mut out = x.clone();
    for y in 0..h {
        for xx in 0..w {
            let s = (y * w + (w - 1 - xx)) * c;
            let d = (y * w + xx) * c;
            out.data[d..d + c].copy_from_slice(&x.data[s..s + c]);
        }
    }
    Ok(out)
}

/// `x (N x Cin) * weight (Cin x Cout) + bias`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, cin) = x.dims2()?;
    let (wcin, cout) = weight.dims2()?;
    ensure!(
        cin == wcin,
        Shape,
        "linear: input width {cin} vs weight rows {wcin}"
    );
    if let Some(b) = bias {
        ensure!(b.len() == cout, Shape, "linear: bias must have {cout} entries");
    }
    let mut out = Tensor::zeros(&[n, cout]);
    let (xd, wd) = (&x.data, &weight.data);
    par::for_each_row(&mut out.data, cout, |i, row| {
        if let Some(b) = bias {
            row.copy_from_slice(&b.data);
        }
        for (k, &xv) in xd[i * cin..(i + 1) * cin].iter().enumerate() {
            for (o, &wv) in row.iter_mut().zip(&wd[k * cout..(k + 1) * cout]) {
                *o += xv * wv;
            }
        }
    });
    Ok(out)
}

/// Mean pooling over non-overlapping `k x k` windows; extents must divide.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    ensure!(
        k >= 1 && h % k == 0 && w % k == 0,
        Contract,
        "avg_pool: {h}x{w} not divisible by {k}"
    );
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f32;
    let mut out = Tensor::zeros(&[oh, ow, c]);
    par::for_each_row(&mut out.data, ow * c, |oy, row| {
        for ox in 0..ow {
            let acc = &mut row[ox * c..(ox + 1) * c];
            for y in oy * k..(oy + 1) * k {
                for xx in ox * k..(ox + 1) * k {
                    for (a, v) in acc.iter_mut().zip(&x.data[(y * w + xx) * c..][..c]) {
                        *a += v;
                    }
                }
            }
            acc.iter_mut().for_each(|a| *a *= inv);
        }
    });
    Ok(out)
}

/// Zero-pads bottom and right edges so both extents are multiples of `m`.
pub fn pad_to_multiple(x: &Tensor, m: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[ph, pw, c]);
    for y in 0..h {
        out.data[y * pw * c..(y * pw + w) * c].copy_from_slice(&x.data[y * w * c..(y + 1) * w * c]);
    }
    Ok(out)
}

/// Top-left `h x w` window.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (xh, xw, c) = x.dims3()?;
    ensure!(
        h >= 1 && w >= 1 && h <= xh && w <= xw,
        Contract,
        "crop {h}x{w} out of {xh}x{xw}"
    );
    if (h, w) == (xh, xw) {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    for y in 0..h {
        out.data[y * w * c..(y + 1) * w * c].copy_from_slice(&x.data[y * xw * c..(y * xw + w) * c]);
    }
    Ok(out)
}

/// Order-independent f32 sum: terms are added in ascending `total_cmp` order.
pub(crate) fn canonical_sum(terms: &mut [f32]) -> f32 {
    terms.sort_unstable_by(f32::total_cmp);
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn conv_scaling_kernel() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 4.]);
        let k = t(&[1, 1, 1, 1], &[2.]);
        let y = conv2d(&x, &k, &t(&[1], &[0.]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn conv_stride_two_extents() {
        let x = Tensor::filled(&[64, 64, 1], 0.5);
        let k = Tensor::filled(&[2, 2, 1, 4], 0.1);
        let y = conv2d(&x, &k, &Tensor::zeros(&[4]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[32, 32, 4]);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 4.]);
        let k = Tensor::filled(&[2, 2, 1, 1], 1.0);
        let y = conv2d(&x, &k, &t(&[1], &[0.]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[1. + 2. + 3. + 4.]);
    }

    #[test]
    fn conv_channel_mismatch_is_contract_error() {
        let x = Tensor::zeros(&[4, 4, 3]);
        let k = Tensor::zeros(&[1, 1, 2, 1]);
        assert!(matches!(
            conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn conv_matches_direct_loop_with_padding() {
        let x = Tensor::from_fn(&[5, 4, 2], |i| ((i * 7) % 11) as f32 - 5.0);
        let k = Tensor::from_fn(&[3, 3, 2, 3], |i| ((i * 5) % 7) as f32 * 0.25 - 0.5);
        let b = t(&[3], &[0.1, -0.2, 0.3]);
        let y = conv2d(&x, &k, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 2, 3]);
        for oy in 0..3 {
            for ox in 0..2 {
                for co in 0..3 {
                    let mut acc = b.data()[co] as f64;
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let iy = oy as i64 * 2 + ky - 1;
                            let ix = ox as i64 * 2 + kx - 1;
                            if !(0..5).contains(&iy) || !(0..4).contains(&ix) {
                                continue;
                            }
                            for ci in 0..2 {
                                let xv = x.at3(iy as usize, ix as usize, ci) as f64;
                                let kv = k.data()
                                    [((ky as usize * 3 + kx as usize) * 2 + ci) * 3 + co]
                                    as f64;
                                acc += xv * kv;
                            }
                        }
                    }
                    assert!((y.at3(oy, ox, co) as f64 - acc).abs() < 1e-4);
                }
            }
        }
    }

    /// Phi(x) via composite Simpson quadrature of the Gaussian pdf on [0, |x|].
    fn gaussian_cdf_quadrature(x: f64) -> f64 {
        let n = 2000;
        let a = x.abs();
        let h = a / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(0.0) + pdf(a);
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let half = s * h / 3.0;
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        let oracle = gaussian_cdf_quadrature(1.0);
        assert!((oracle - 0.841345).abs() < 1e-5);
        assert!((gelu_scalar(1.0) as f64 - oracle).abs() < 1e-5);
    }

    #[test]
    fn gelu_matches_quadrature_oracle_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-6.0..6.0);
            let want = x * gaussian_cdf_quadrature(x);
            let got = gelu_scalar(x as f32) as f64;
            assert!((got - want).abs() < 1e-5, "x={x} got={got} want={want}");
        }
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::filled(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let constant = Tensor::filled(&[3, 3], 0.1);
        let y = layer_norm(&constant, &Tensor::filled(&[3], 1.0), &Tensor::zeros(&[3]), 1e-5)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let y = layer_norm(&t(&[1, 2], &[1., -1.]), &ones, &zeros, 0.0).unwrap();
        assert_eq!(y.data(), &[1., -1.]);

        let bias = t(&[2], &[0.3, -0.7]);
        let y = layer_norm(&t(&[2, 2], &[5., 2., -1., 9.]), &zeros, &bias, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.3, -0.7, 0.3, -0.7]);
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&t(&[2], &[0., 0.])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&t(&[1], &[123.4])).unwrap();
        assert_eq!(y.data(), &[1.0]);
        let y = softmax(&t(&[2], &[1f32.ln(), 3f32.ln()])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-6 && (y.data()[1] - 0.75).abs() < 1e-6);
    }

    /// Half-pixel-center bilinear sample, straight from the definition.
    fn bilinear_oracle_1d(v: &[f64], out_len: usize) -> Vec<f64> {
        let n = v.len();
        (0..out_len)
            .map(|i| {
                let s = ((i as f64 + 0.5) * n as f64 / out_len as f64 - 0.5)
                    .max(0.0)
                    .min((n - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                v[lo] * (1.0 - (s - lo as f64)) + v[hi] * (s - lo as f64)
            })
            .collect()
    }

    #[test]
    fn bilinear_cases() {
        let x = Tensor::from_fn(&[3, 5, 2], |i| i as f32 * 0.3);
        assert_eq!(bilinear_resize(&x, 3, 5).unwrap(), x);

        let c = Tensor::filled(&[3, 7, 2], 0.37);
        let y = bilinear_resize(&c, 11, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.37));

        let col = t(&[2, 1, 1], &[0., 1.]);
        let y = bilinear_resize(&col, 4, 1).unwrap();
        let want = bilinear_oracle_1d(&[0.0, 1.0], 4);
        assert_eq!(want, vec![0.0, 0.25, 0.75, 1.0]);
        for (g, w) in y.data().iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-6);
        }
    }

    #[test]
    fn hflip_cases() {
        let row = t(&[1, 2, 1], &[3., 8.]);
        assert_eq!(hflip(&row).unwrap().data(), &[8., 3.]);
        let col = t(&[3, 1, 2], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(hflip(&col).unwrap(), col);
    }

    #[test]
    fn pad_and_crop_round_trip() {
        let x = Tensor::from_fn(&[5, 7, 2], |i| i as f32);
        let p = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p.shape(), &[8, 8, 2]);
        assert_eq!(p.at3(6, 6, 1), 0.0);
        assert_eq!(crop(&p, 5, 7).unwrap(), x);
    }

    #[test]
    fn avg_pool_means_blocks() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 6.]);
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[3.0]);
        assert!(avg_pool(&Tensor::zeros(&[3, 2, 1]), 2).is_err());
    }

    proptest! {
        #[test]
        fn conv_output_extent_formula(
            h in 1usize..12, w in 1usize..12, k in 1usize..5,
            stride in 1usize..4, pad in 0usize..3,
        ) {
            prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
            let x = Tensor::filled(&[h, w, 2], 1.0);
            let kern = Tensor::filled(&[k, k, 2, 3], 0.5);
            let y = conv2d(&x, &kern, &Tensor::zeros(&[3]), stride, pad).unwrap();
            prop_assert_eq!(
                y.shape(),
                &[(h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1, 3]
            );
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            row in proptest::collection::vec(-20f32..20.0, 1..16),
            shift in -50f32..50.0,
        ) {
            let n = row.len();
            let a = softmax(&Tensor::new(vec![n], row.clone()).unwrap()).unwrap();
            let shifted: Vec<f32> = row.iter().map(|v| v + shift).collect();
            let b = softmax(&Tensor::new(vec![n], shifted).unwrap()).unwrap();
            let s: f32 = a.data().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(a.data().iter().all(|&v| v > 0.0));
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn resize_there_and_back(
            h in 1usize..9, w in 1usize..9, oh in 1usize..17, ow in 1usize..17,
            value in -3f32..3.0, seed in 0u64..1000,
        ) {
            let c = Tensor::filled(&[h, w, 1], value);
            let back = bilinear_resize(&bilinear_resize(&c, oh, ow).unwrap(), h, w).unwrap();
            prop_assert!(back.data().iter().all(|&v| v == value));

            // Shrinking first can drop whole rows, so the smoothing bound is
            // only checked for round trips that enlarge first.
            let (oh, ow) = (oh.max(h), ow.max(w));
            let r = Tensor::from_fn(&[h, w, 1], |i| ((i as u64 * 2654435761 + seed) % 1000) as f32 / 1000.0);
            let lo = r.data().iter().copied().fold(f32::INFINITY, f32::min);
            let hi = r.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let back = bilinear_resize(&bilinear_resize(&r, oh, ow).unwrap(), h, w).unwrap();
            for (a, b) in r.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 0.5 * (hi - lo) + 1e-6);
            }
        }

        #[test]
        fn hflip_is_an_involution(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in 0u32..100) {
            let x = Tensor::from_fn(&[h, w, c], |i| (i as u32 * 31 + seed) as f32 * 0.1);
            let y = hflip(&hflip(&x).unwrap()).unwrap();
            prop_assert_eq!(
                x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
