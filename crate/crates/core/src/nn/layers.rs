use rand::Rng;

use super::{Param, Scalar, Tensor};

/// Spatial geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent of a forward convolution, `None` when the kernel does not fit.
    pub fn conv_out(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn transposed_out(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

/// Unfolds one `channels x h x w` image into a `(channels*k*k) x (oh*ow)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let k = g.kernel;
    let cols = oh * ow;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((c * k + ki) * k + kj) * cols..][..cols];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds the columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let k = g.kernel;
    let cols = oh * ow;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((c * k + ki) * k + kj) * cols..][..cols];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] = dst[ix as usize] + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (o, &b) in bias.iter().enumerate() {
        y[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_bias_grad<T: Scalar>(gy: &[T], grad: &mut [T], plane: usize) {
    for (o, g) in grad.iter_mut().enumerate() {
        *g = gy[o * plane..(o + 1) * plane]
            .iter()
            .fold(*g, |acc, &v| acc + v);
    }
}

/// Strided 2-D convolution. Weight layout `[out, in*k*k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug)]
pub struct Conv2dCache<T> {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        Conv2d {
            in_channels,
            out_channels,
            geometry,
            weight: Param::zeros(format!("{name}.weight"), &[out_channels, in_channels, k, k]),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.geometry.kernel * self.geometry.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((self.geometry.conv_out(h)?, self.geometry.conv_out(w)?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Conv2dCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "{}: channel mismatch", self.weight.name);
        let (oh, ow) = self
            .output_hw(h, w)
            .unwrap_or_else(|| panic!("{}: input {h}x{w} smaller than kernel", self.weight.name));
        let cols_per = self.patch_len() * oh * ow;
        let mut cols = vec![T::zero(); n * cols_per];
        let mut y = Tensor::zeros([n, self.out_channels, oh, ow]);
        for i in 0..n {
            let col = &mut cols[i * cols_per..(i + 1) * cols_per];
            im2col(x.sample(i), c, h, w, self.geometry, oh, ow, col);
            let ys = y.sample_mut(i);
            T::gemm(
                self.out_channels,
                self.patch_len(),
                oh * ow,
                &self.weight.value,
                false,
                col,
                false,
                ys,
                T::zero(),
            );
            add_bias(ys, &self.bias.value, oh * ow);
        }
        (
            y,
            Conv2dCache {
                input_shape: x.shape(),
                out_hw: (oh, ow),
                cols,
            },
        )
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        cache: &Conv2dCache<T>,
        gy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let [n, c, h, w] = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let plane = oh * ow;
        let kk = self.patch_len();
        let mut gx = need_input_grad.then(|| Tensor::zeros(cache.input_shape));
        let mut dcol = vec![T::zero(); kk * plane];
        for i in 0..n {
            let gys = gy.sample(i);
            let col = &cache.cols[i * kk * plane..(i + 1) * kk * plane];
            T::gemm(
                self.out_channels,
                plane,
                kk,
                gys,
                false,
                col,
                true,
                &mut self.weight.grad,
                T::one(),
            );
            accumulate_bias_grad(gys, &mut self.bias.grad, plane);
            if let Some(gx) = gx.as_mut() {
                T::gemm(
                    kk,
                    self.out_channels,
                    plane,
                    &self.weight.value,
                    true,
                    gys,
                    false,
                    &mut dcol,
                    T::zero(),
                );
                col2im(&dcol, c, h, w, self.geometry, oh, ow, gx.sample_mut(i));
            }
        }
        gx
    }
}

/// Transposed (fractionally strided) 2-D convolution. Weight layout `[in, out*k*k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug)]
pub struct ConvTranspose2dCache<T> {
    input: Tensor<T>,
    out_hw: (usize, usize),
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        ConvTranspose2d {
            in_channels,
            out_channels,
            geometry,
            weight: Param::zeros(format!("{name}.weight"), &[in_channels, out_channels, k, k]),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
        }
    }

    fn patch_len(&self) -> usize {
        self.out_channels * self.geometry.kernel * self.geometry.kernel
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvTranspose2dCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "{}: channel mismatch", self.weight.name);
        let (oh, ow) = (
            self.geometry.transposed_out(h),
            self.geometry.transposed_out(w),
        );
        let kk = self.patch_len();
        let mut col = vec![T::zero(); kk * h * w];
        let mut y = Tensor::zeros([n, self.out_channels, oh, ow]);
        for i in 0..n {
            T::gemm(
                kk,
                self.in_channels,
                h * w,
                &self.weight.value,
                true,
                x.sample(i),
                false,
                &mut col,
                T::zero(),
            );
            let ys = y.sample_mut(i);
            col2im(&col, self.out_channels, oh, ow, self.geometry, h, w, ys);
            add_bias(ys, &self.bias.value, oh * ow);
        }
        (
            y,
            ConvTranspose2dCache {
                input: x.clone(),
                out_hw: (oh, ow),
            },
        )
    }

    pub fn backward(
        &mut self,
        cache: &ConvTranspose2dCache<T>,
        gy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let [n, c, h, w] = cache.input.shape();
        let (oh, ow) = cache.out_hw;
        let kk = self.patch_len();
        let mut dcol = vec![T::zero(); kk * h * w];
        let mut gx = need_input_grad.then(|| Tensor::zeros([n, c, h, w]));
        for i in 0..n {
            let gys = gy.sample(i);
            accumulate_bias_grad(gys, &mut self.bias.grad, oh * ow);
            im2col(gys, self.out_channels, oh, ow, self.geometry, h, w, &mut dcol);
            T::gemm(
                self.in_channels,
                h * w,
                kk,
                cache.input.sample(i),
                false,
                &dcol,
                true,
                &mut self.weight.grad,
                T::one(),
            );
            if let Some(gx) = gx.as_mut() {
                T::gemm(
                    self.in_channels,
                    kk,
                    h * w,
                    &self.weight.value,
                    false,
                    &dcol,
                    false,
                    gx.sample_mut(i),
                    T::zero(),
                );
            }
        }
        gx
    }
}

/// Per-sample, per-channel normalization with a learned affine transform.
#[derive(Clone, Debug)]
pub struct InstanceNorm2d<T> {
    pub channels: usize,
    pub epsilon: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

#[derive(Debug)]
pub struct InstanceNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> InstanceNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        InstanceNorm2d {
            channels,
            epsilon: 1e-5,
            gamma: Param::filled(format!("{name}.gamma"), &[channels], T::one()),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, InstanceNormCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels);
        let plane = h * w;
        let count = T::from_usize(plane).unwrap();
        let eps = T::from_f64_lossy(self.epsilon);
        let mut normalized = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(n * c);
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let xs = &x.data()[off..off + plane];
                let mean = xs.iter().fold(T::zero(), |a, &v| a + v) / count;
                let var = xs.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
                let inv = T::one() / (var + eps).sqrt();
                inv_std.push(inv);
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                let ns = &mut normalized.data_mut()[off..off + plane];
                for (dst, &v) in ns.iter_mut().zip(xs) {
                    *dst = (v - mean) * inv;
                }
                let ys = &mut y.data_mut()[off..off + plane];
                for (dst, &v) in ys.iter_mut().zip(&normalized.data()[off..off + plane]) {
                    *dst = g * v + b;
                }
            }
        }
        (y, InstanceNormCache { normalized, inv_std })
    }

    pub fn backward(&mut self, cache: &InstanceNormCache<T>, gy: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = gy.shape();
        let plane = h * w;
        let count = T::from_usize(plane).unwrap();
        let mut gx = Tensor::zeros(gy.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let g = &gy.data()[off..off + plane];
                let xhat = &cache.normalized.data()[off..off + plane];
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for (&a, &b) in g.iter().zip(xhat) {
                    sum_g = sum_g + a;
                    sum_gx = sum_gx + a * b;
                }
                self.gamma.grad[ch] = self.gamma.grad[ch] + sum_gx;
                self.beta.grad[ch] = self.beta.grad[ch] + sum_g;
                let gamma = self.gamma.value[ch];
                let scale = gamma * cache.inv_std[i * c + ch] / count;
                let out = &mut gx.data_mut()[off..off + plane];
                for ((dst, &a), &b) in out.iter_mut().zip(g).zip(xhat) {
                    *dst = scale * (count * a - sum_g - b * sum_gx);
                }
            }
        }
        gx
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64_lossy(slope);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Gradient of [`leaky_relu`] given its output (sign is preserved for positive slopes).
pub fn leaky_relu_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64_lossy(slope);
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
        .collect();
    Tensor::from_vec(gy.shape(), data)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(gy.shape(), data)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| g * (T::one() - v * v))
        .collect();
    Tensor::from_vec(gy.shape(), data)
}

/// Inverted dropout mask: entries are 0 or `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Tensor::from_vec(x.shape(), data)
}
