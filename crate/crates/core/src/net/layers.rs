//! Trainable layers with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements per chunk.
const COL_BUFFER_LIMIT: usize = 1 << 21;

/// Trainable array with its accumulated gradient.
///
/// The gradient buffer is allocated on first backward pass, so inference-only
/// models carry no gradient memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> Param<T> {
    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            value: vec![v; shape.iter().product()],
            grad: Vec::new(),
            shape: shape.to_vec(),
        }
    }

    /// Logical dimensions; conv weights are `[ky, kx, in, out]`.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn cast<U: Real>(&self) -> Param<U> {
        Param {
            value: self.value.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
            grad: Vec::new(),
            shape: self.shape.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output size and leading pad of one spatial axis.
pub(crate) fn conv_axis(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

/// 2-D convolution, weights stored `[ky][kx][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::filled(&[kernel, kernel, in_channels, out_channels], T::zero()),
            bias: Param::filled(&[out_channels], T::zero()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn init_he<R: Rng>(&mut self, rng: &mut R) {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut self.weight.value {
            *w = T::from_f64_lossy(normal.sample(rng));
        }
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub(crate) fn geometry(&self, h: usize, w: usize) -> Option<ConvGeometry> {
        let (out_h, pad_top) = conv_axis(h, self.kernel, self.stride, self.padding)?;
        let (out_w, pad_left) = conv_axis(w, self.kernel, self.stride, self.padding)?;
        Some(ConvGeometry {
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<ConvGeometry> {
        if x.channels() != self.in_channels {
            return Err(Error::invalid(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        self.geometry(x.height(), x.width()).ok_or_else(|| {
            Error::invalid(format!(
                "{}x{} input is smaller than the {}x{} valid kernel",
                x.height(),
                x.width(),
                self.kernel,
                self.kernel
            ))
        })
    }

    /// Number of (batch, output-row) pairs processed per im2col chunk.
    fn rows_per_chunk(&self, g: &ConvGeometry) -> usize {
        let per_row = g.out_w * self.fan_in();
        (COL_BUFFER_LIMIT / per_row.max(1)).max(1)
    }

    /// Fills `cols` with patches for flattened output rows `row0..row0 + rows`.
    fn im2col(&self, x: &Tensor<T>, g: &ConvGeometry, row0: usize, rows: usize, cols: &mut [T]) {
        let [_, h, w, cin] = x.shape();
        let k = self.kernel;
        let kdim = self.fan_in();
        let src = x.data();
        for r in 0..rows {
            let (n, oy) = ((row0 + r) / g.out_h, (row0 + r) % g.out_h);
            for ox in 0..g.out_w {
                let dst = &mut cols[(r * g.out_w + ox) * kdim..][..kdim];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                    let row_dst = &mut dst[ky * k * cin..(ky + 1) * k * cin];
                    if iy < 0 || iy >= h as isize {
                        row_dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                        let cell = &mut row_dst[kx * cin..(kx + 1) * cin];
                        if ix < 0 || ix >= w as isize {
                            cell.iter_mut().for_each(|v| *v = T::zero());
                        } else {
                            let base = ((n * h + iy as usize) * w + ix as usize) * cin;
                            cell.copy_from_slice(&src[base..base + cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, dx: &mut Tensor<T>, g: &ConvGeometry, row0: usize, rows: usize, cols: &[T]) {
        let [_, h, w, cin] = dx.shape();
        let k = self.kernel;
        let kdim = self.fan_in();
        let dst = dx.data_mut();
        for r in 0..rows {
            let (n, oy) = ((row0 + r) / g.out_h, (row0 + r) % g.out_h);
            for ox in 0..g.out_w {
                let src = &cols[(r * g.out_w + ox) * kdim..][..kdim];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let base = ((n * h + iy as usize) * w + ix as usize) * cin;
                        let cell = &src[(ky * k + kx) * cin..][..cin];
                        for (d, &s) in dst[base..base + cin].iter_mut().zip(cell) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.check_input(x)?;
        let n = x.batch();
        let cout = self.out_channels;
        let mut y = Tensor::zeros([n, g.out_h, g.out_w, cout]);
        let total_rows = n * g.out_h;
        let kdim = self.fan_in();
        if self.is_pointwise() {
            gemm(false, false, total_rows * g.out_w, cout, kdim, x.data(), &self.weight.value, T::zero(), y.data_mut());
        } else {
            let chunk = self.rows_per_chunk(&g);
            let mut cols = vec![T::zero(); chunk.min(total_rows) * g.out_w * kdim];
            let mut row0 = 0;
            while row0 < total_rows {
                let rows = chunk.min(total_rows - row0);
                let m = rows * g.out_w;
                self.im2col(x, &g, row0, rows, &mut cols);
                let out = &mut y.data_mut()[row0 * g.out_w * cout..][..m * cout];
                gemm(false, false, m, cout, kdim, &cols, &self.weight.value, T::zero(), out);
                row0 += rows;
            }
        }
        for px in y.data_mut().chunks_exact_mut(cout) {
            for (v, &b) in px.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients; returns the input gradient when requested.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        let g = self.check_input(x)?;
        let n = x.batch();
        let cout = self.out_channels;
        if dy.shape() != [n, g.out_h, g.out_w, cout] {
            return Err(Error::invalid(format!(
                "convolution gradient shape {:?} does not match output [{n}, {}, {}, {cout}]",
                dy.shape(),
                g.out_h,
                g.out_w
            )));
        }
        {
            let db = self.bias.grad_mut();
            for px in dy.data().chunks_exact(cout) {
                for (d, &v) in db.iter_mut().zip(px) {
                    *d += v;
                }
            }
        }
        let kdim = self.fan_in();
        let total_rows = n * g.out_h;
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        if self.is_pointwise() {
            let m = total_rows * g.out_w;
            self.weight.grad_mut();
            gemm(true, false, kdim, cout, m, x.data(), dy.data(), T::one(), &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                gemm(false, true, m, kdim, cout, dy.data(), &self.weight.value, T::zero(), dx.data_mut());
            }
            return Ok(dx);
        }
        let chunk = self.rows_per_chunk(&g);
        let mut cols = vec![T::zero(); chunk.min(total_rows) * g.out_w * kdim];
        let mut dcols = if need_dx { cols.clone() } else { Vec::new() };
        self.weight.grad_mut();
        let mut row0 = 0;
        while row0 < total_rows {
            let rows = chunk.min(total_rows - row0);
            let m = rows * g.out_w;
            let dy_chunk = &dy.data()[row0 * g.out_w * cout..][..m * cout];
            self.im2col(x, &g, row0, rows, &mut cols);
            gemm(true, false, kdim, cout, m, &cols, dy_chunk, T::one(), &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                gemm(false, true, m, kdim, cout, dy_chunk, &self.weight.value, T::zero(), &mut dcols);
                self.col2im_add(dx, &g, row0, rows, &dcols);
            }
            row0 += rows;
        }
        Ok(dx)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Per-channel batch normalization with learnable scale and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved activations for the batch-norm backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-3;

    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::filled(&[channels], T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::invalid(format!(
                "batch norm expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let eps = T::from_f64_lossy(self.eps);
        let (scale, shift): (Vec<T>, Vec<T>) = (0..self.channels)
            .map(|c| {
                let s = self.gamma.value[c] / (self.running_var[c] + eps).sqrt();
                (s, self.beta.value[c] - self.running_mean[c] * s)
            })
            .unzip();
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(self.channels) {
            for c in 0..self.channels {
                px[c] = px[c] * scale[c] + shift[c];
            }
        }
        Ok(y)
    }

    /// Normalizes with batch statistics and folds them into the running averages.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        self.check(x)?;
        let c = self.channels;
        let count = x.len() / c.max(1);
        if count == 0 {
            return Err(Error::EmptyInput("batch norm over an empty batch".into()));
        }
        let inv_count = T::one() / T::from_usize(count).unwrap();
        let mut mean = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_count);
        let mut var = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for ch in 0..c {
                let d = px[ch] - mean[ch];
                var[ch] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v *= inv_count);
        let eps = T::from_f64_lossy(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.clone();
        for px in xhat.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = (px[ch] - mean[ch]) * inv_std[ch];
            }
        }
        let mut y = xhat.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = px[ch] * self.gamma.value[ch] + self.beta.value[ch];
            }
        }
        let m = T::from_f64_lossy(self.momentum);
        for ch in 0..c {
            self.running_mean[ch] = m * self.running_mean[ch] + (T::one() - m) * mean[ch];
            self.running_var[ch] = m * self.running_var[ch] + (T::one() - m) * var[ch];
        }
        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let c = self.channels;
        let count = dy.len() / c;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (g, xh) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += g[ch];
                sum_dy_xhat[ch] += g[ch] * xh[ch];
            }
        }
        for (d, &s) in self.beta.grad_mut().iter_mut().zip(&sum_dy) {
            *d += s;
        }
        for (d, &s) in self.gamma.grad_mut().iter_mut().zip(&sum_dy_xhat) {
            *d += s;
        }
        let inv_count = T::one() / T::from_usize(count).unwrap();
        // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
        let coef: Vec<T> = (0..c).map(|ch| self.gamma.value[ch] * cache.inv_std[ch]).collect();
        let mean_dy: Vec<T> = sum_dy.iter().map(|&s| s * inv_count).collect();
        let mean_dyx: Vec<T> = sum_dy_xhat.iter().map(|&s| s * inv_count).collect();
        let mut dx = dy.clone();
        for (g, xh) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                g[ch] = coef[ch] * (g[ch] - mean_dy[ch] - xh[ch] * mean_dyx[ch]);
            }
        }
        dx
    }

    pub fn parameter_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub(crate) fn cast<U: Real>(&self) -> BatchNorm<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap())).collect();
        BatchNorm {
            channels: self.channels,
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

/// Parametric ReLU with one learnable negative slope per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu<T> {
    pub alpha: Param<T>,
}

impl<T: Real> PRelu<T> {
    pub const INITIAL_SLOPE: f64 = 0.25;

    pub fn new(channels: usize) -> Self {
        Self {
            alpha: Param::filled(&[channels], T::from_f64_lossy(Self::INITIAL_SLOPE)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.alpha.len();
        if x.channels() != c {
            return Err(Error::invalid(format!("prelu expects {c} channels, got {}", x.channels())));
        }
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for (v, &a) in px.iter_mut().zip(&self.alpha.value) {
                if *v <= T::zero() {
                    *v = *v * a;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let c = self.alpha.len();
        let mut dx = dy.clone();
        let alpha = self.alpha.value.clone();
        let da = self.alpha.grad_mut();
        for (g, xv) in dx.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
            for ch in 0..c {
                if xv[ch] <= T::zero() {
                    da[ch] += g[ch] * xv[ch];
                    g[ch] *= alpha[ch];
                }
            }
        }
        dx
    }

    pub(crate) fn cast<U: Real>(&self) -> PRelu<U> {
        PRelu {
            alpha: self.alpha.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_geometry() {
        assert_eq!(conv_axis(256, 3, 1, Padding::Same), Some((256, 1)));
        assert_eq!(conv_axis(256, 3, 2, Padding::Same), Some((128, 0)));
        assert_eq!(conv_axis(255, 3, 2, Padding::Same), Some((128, 1)));
        assert_eq!(conv_axis(256, 1, 2, Padding::Same), Some((128, 0)));
        assert_eq!(conv_axis(520, 10, 2, Padding::Valid), Some((256, 0)));
        assert_eq!(conv_axis(64, 5, 1, Padding::Valid), Some((60, 0)));
        assert_eq!(conv_axis(2, 3, 1, Padding::Valid), None);
    }

    /// Direct nested-loop convolution used as an oracle for the im2col path.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let g = conv.geometry(x.height(), x.width()).unwrap();
        let [n, h, w, cin] = x.shape();
        let k = conv.kernel;
        let mut y = Tensor::zeros([n, g.out_h, g.out_w, conv.out_channels]);
        for b in 0..n {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    for co in 0..conv.out_channels {
                        let mut acc = conv.bias.value[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - g.pad_top as isize;
                                let ix = (ox * conv.stride + kx) as isize - g.pad_left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.at(b, iy as usize, ix as usize, ci)
                                        * conv.weight.value[((ky * k + kx) * cin + ci) * conv.out_channels + co];
                                }
                            }
                        }
                        let i = y.index(b, oy, ox, co);
                        y.data_mut()[i] = acc;
                    }
                }
            }
        }
        y
    }

    fn filled_tensor(shape: [usize; 4], seed: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + seed) * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let mut rng = rand::rng();
        for &(k, s, pad, h, w) in &[
            (3, 1, Padding::Same, 7, 5),
            (3, 2, Padding::Same, 8, 7),
            (1, 2, Padding::Same, 6, 6),
            (1, 1, Padding::Same, 4, 3),
            (5, 1, Padding::Valid, 9, 8),
            (4, 2, Padding::Valid, 10, 11),
        ] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, s, pad);
            conv.init_he(&mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
            let x = filled_tensor([2, h, w, 3], k as f64);
            let got = conv.forward(&x).unwrap();
            let want = naive_conv(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b} for k={k} s={s}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = rand::rng();
        for &(k, s, pad) in &[(3, 2, Padding::Same), (1, 1, Padding::Same), (3, 1, Padding::Valid)] {
            let mut conv = Conv2d::<f64>::new(2, 3, k, s, pad);
            conv.init_he(&mut rng);
            let x = filled_tensor([2, 5, 6, 2], 0.3);
            let y = conv.forward(&x).unwrap();
            let r = filled_tensor(y.shape(), 1.7);
            let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
                c.forward(x).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            let dx = conv.backward(&x, &r, true).unwrap().unwrap();
            let h = 1e-6;
            let wl = conv.weight.len();
            for i in [0, 7 % wl, 13 % wl, wl - 1] {
                let mut p = conv.clone();
                p.weight.value[i] += h;
                let mut m = conv.clone();
                m.weight.value[i] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - conv.weight.grad[i]).abs() < 1e-6, "weight {i}");
            }
            for i in [0, 5, 31, x.len() - 1] {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
                assert!((fd - dx.data()[i]).abs() < 1e-6, "input {i}");
            }
        }
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma.value = vec![1.5, -0.5, 2.0];
        bn.beta.value = vec![0.1, 0.2, -0.3];
        let x = filled_tensor([2, 3, 3, 3], 0.9);
        let r = filled_tensor([2, 3, 3, 3], 4.2);
        let (_, cache) = bn.clone().forward_train(&x).unwrap();
        let dx = bn.backward(&cache, &r);
        let loss = |b: &BatchNorm<f64>, x: &Tensor<f64>| -> f64 {
            let (y, _) = b.clone().forward_train(x).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6);
        }
        for ch in 0..3 {
            let mut p = bn.clone();
            p.gamma.value[ch] += h;
            let mut m = bn.clone();
            m.gamma.value[ch] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - bn.gamma.grad[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats_only() {
        let mut bn = BatchNorm::<f32>::new(2);
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let before = bn.running_mean.clone();
        let _ = bn.forward_eval(&x).unwrap();
        assert_eq!(bn.running_mean, before);
        bn.forward_train(&x).unwrap();
        assert_ne!(bn.running_mean, before);
    }

    #[test]
    fn prelu_forward_backward() {
        let mut act = PRelu::<f64>::new(2);
        let x = Tensor::from_vec([1, 1, 2, 2], vec![-2.0, 1.0, 3.0, -4.0]).unwrap();
        let y = act.forward(&x).unwrap();
        assert_eq!(y.data(), &[-0.5, 1.0, 3.0, -1.0]);
        let dy = Tensor::from_vec([1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let dx = act.backward(&x, &dy);
        assert_eq!(dx.data(), &[0.25, 1.0, 1.0, 0.25]);
        assert_eq!(act.alpha.grad, vec![-2.0, -4.0]);
    }
}
