//! Network layers over batched feature maps. Every layer with parameters
//! returns its gradients from `backward`; nothing is accumulated in place.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

fn shape_err(layer: &str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::ShapeMismatch(format!("{layer}: expected {expected:?}, got {got:?}"))
}

/// Kaiming-normal draw scaled for a leaky-ReLU successor.
fn he_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize, slope: f64) -> Vec<T> {
    let std = (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
        .collect()
}

/// 3x3 convolution (cross-correlation), stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x in x 3 x 3`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// The unrolled input patches, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    batch: usize,
    height: usize,
    width: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != out_channels * in_channels * TAPS || bias.len() != out_channels {
            return Err(shape_err(
                "conv2d parameters",
                (out_channels * in_channels * TAPS, out_channels),
                (weight.len(), bias.len()),
            ));
        }
        Ok(Self {
            in_channels,
            out_channels,
            weight,
            bias,
        })
    }

    pub fn he_init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, slope: f64, rng: &mut R) -> Self {
        let fan_in = in_channels * TAPS;
        Self {
            in_channels,
            out_channels,
            weight: he_normal(rng, out_channels * fan_in, fan_in, slope),
            bias: vec![T::zero(); out_channels],
        }
    }

    fn im2col(&self, x: &FeatureMap<T>) -> Vec<T> {
        let (b, h, w) = (x.batch, x.height, x.width);
        let q = b * h * w;
        let mut cols = vec![T::zero(); self.in_channels * TAPS * q];
        for ci in 0..self.in_channels {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * q..][..q];
                    for bi in 0..b {
                        let src = x.plane(ci, bi);
                        for y in 0..h {
                            let sy = y + ky;
                            if sy < 1 || sy > h {
                                continue;
                            }
                            let srow = &src[(sy - 1) * w..sy * w];
                            let drow = &mut row[(bi * h + y) * w..][..w];
                            // Column offset dx = kx - 1 in {-1, 0, 1}.
                            match kx {
                                0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                                1 => drow.copy_from_slice(srow),
                                _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[T], b: usize, h: usize, w: usize) -> FeatureMap<T> {
        let q = b * h * w;
        let mut dx = FeatureMap::zeros(self.in_channels, b, h, w);
        let hw = h * w;
        for ci in 0..self.in_channels {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &dcols[(ci * TAPS + ky * KERNEL + kx) * q..][..q];
                    for bi in 0..b {
                        let dst = &mut dx.data[(ci * b + bi) * hw..][..hw];
                        for y in 0..h {
                            let sy = y + ky;
                            if sy < 1 || sy > h {
                                continue;
                            }
                            let drow = &mut dst[(sy - 1) * w..sy * w];
                            let srow = &row[(bi * h + y) * w..][..w];
                            let (d, s) = match kx {
                                0 => (&mut drow[..w - 1], &srow[1..]),
                                1 => (&mut drow[..], &srow[..]),
                                _ => (&mut drow[1..], &srow[..w - 1]),
                            };
                            for (a, &v) in d.iter_mut().zip(s) {
                                *a += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, ConvCache<T>)> {
        if x.channels != self.in_channels {
            return Err(shape_err("conv2d input channels", self.in_channels, x.channels));
        }
        let cols = self.im2col(x);
        let q = x.batch * x.plane_len();
        let mut y = FeatureMap::zeros(self.out_channels, x.batch, x.height, x.width);
        for (o, &bias) in self.bias.iter().enumerate() {
            y.channel_mut(o).fill(bias);
        }
        let inner = self.in_channels * TAPS;
        T::gemm(
            self.out_channels,
            inner,
            q,
            T::one(),
            &self.weight,
            inner,
            1,
            &cols,
            q,
            1,
            T::one(),
            &mut y.data,
            q,
            1,
        );
        let cache = ConvCache {
            cols,
            batch: x.batch,
            height: x.height,
            width: x.width,
        };
        Ok((y, cache))
    }

    /// Returns `(dx, dweight, dbias)`; `dx` is only formed when asked for.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: &FeatureMap<T>,
        need_dx: bool,
    ) -> Result<(Option<FeatureMap<T>>, Vec<T>, Vec<T>)> {
        let expect = (self.out_channels, cache.batch, cache.height, cache.width);
        let got = (dy.channels, dy.batch, dy.height, dy.width);
        if expect != got {
            return Err(shape_err("conv2d output gradient", expect, got));
        }
        let q = cache.batch * cache.height * cache.width;
        let inner = self.in_channels * TAPS;
        let mut dw = vec![T::zero(); self.weight.len()];
        T::gemm(
            self.out_channels,
            q,
            inner,
            T::one(),
            &dy.data,
            q,
            1,
            &cache.cols,
            1,
            q,
            T::zero(),
            &mut dw,
            inner,
            1,
        );
        let db = (0..self.out_channels).map(|o| dy.channel(o).iter().copied().sum()).collect();
        let dx = if need_dx {
            let mut dcols = vec![T::zero(); inner * q];
            T::gemm(
                inner,
                self.out_channels,
                q,
                T::one(),
                &self.weight,
                1,
                inner,
                &dy.data,
                q,
                1,
                T::zero(),
                &mut dcols,
                q,
                1,
            );
            Some(self.col2im(&dcols, cache.batch, cache.height, cache.width))
        } else {
            None
        };
        Ok((dx, dw, db))
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    /// Unbiased estimate, as used at inference.
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::lit(eps),
            momentum: T::lit(momentum),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &FeatureMap<T>) -> Result<()> {
        if x.channels != self.channels() {
            return Err(shape_err("batchnorm channels", self.channels(), x.channels));
        }
        Ok(())
    }

    /// Normalizes with batch statistics and updates the running averages.
    pub fn forward_train(&mut self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, BnCache<T>)> {
        self.check(x)?;
        if x.batch < 2 {
            return Err(Error::DegenerateBatch(x.batch));
        }
        let m = x.batch * x.plane_len();
        let mf = T::from_usize(m).unwrap();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let vals = x.channel(c);
            let mean = vals.iter().copied().sum::<T>() / mf;
            let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let istd = T::one() / (var + self.eps).sqrt();
            for v in y.channel_mut(c) {
                *v = (*v - mean) * istd;
            }
            inv_std.push(istd);
            let unbiased = var * mf / (mf - T::one());
            self.running_mean[c] = (T::one() - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (T::one() - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        let xhat = y.data.clone();
        for c in 0..self.channels() {
            let (g, b) = (self.gamma[c], self.beta[c]);
            for v in y.channel_mut(c) {
                *v = g * *v + b;
            }
        }
        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn forward_infer(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check(x)?;
        let mut y = x.clone();
        for c in 0..self.channels() {
            let scale = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
            let shift = self.beta[c] - scale * self.running_mean[c];
            for v in y.channel_mut(c) {
                *v = scale * *v + shift;
            }
        }
        Ok(y)
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache<T>, dy: &FeatureMap<T>) -> Result<(FeatureMap<T>, Vec<T>, Vec<T>)> {
        self.check(dy)?;
        if cache.xhat.len() != dy.data.len() {
            return Err(shape_err("batchnorm output gradient", cache.xhat.len(), dy.data.len()));
        }
        let m = dy.batch * dy.plane_len();
        let mf = T::from_usize(m).unwrap();
        let mut dx = dy.clone();
        let mut dgamma = Vec::with_capacity(self.channels());
        let mut dbeta = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let g = dy.channel(c);
            let xh = &cache.xhat[c * m..(c + 1) * m];
            let sum_g: T = g.iter().copied().sum();
            let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            dgamma.push(sum_gx);
            dbeta.push(sum_g);
            let k = self.gamma[c] * cache.inv_std[c] / mf;
            for ((d, &gi), &xi) in dx.channel_mut(c).iter_mut().zip(g).zip(xh) {
                *d = k * (mf * gi - sum_g - xi * sum_gx);
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}

pub fn leaky_relu<T: Scalar>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Backward through a leaky ReLU given its output `y` (same sign as its
/// input for a positive slope).
pub fn leaky_relu_backward<T: Scalar>(y: &[T], dy: &mut [T], slope: T) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v < T::zero() {
            *d *= slope;
        }
    }
}

pub fn tanh_forward<T: Scalar>(x: &mut [T]) {
    for v in x {
        *v = v.tanh();
    }
}

pub fn tanh_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d *= T::one() - v * v;
    }
}

/// How a pooling window that overhangs the border is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolDivisor {
    /// Always divide by 9, counting padded zeros.
    #[default]
    Fixed,
    /// Divide by the number of in-bounds positions.
    ValidCount,
}

/// 3x3 mean pooling, stride 1, zero padding 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MeanPool {
    pub divisor: PoolDivisor,
}

impl MeanPool {
    fn span(i: usize, n: usize) -> (usize, usize) {
        (i.saturating_sub(1), (i + 1).min(n - 1))
    }

    fn scale<T: Scalar>(&self, y: usize, x: usize, h: usize, w: usize) -> T {
        match self.divisor {
            PoolDivisor::Fixed => T::one() / T::lit(TAPS as f64),
            PoolDivisor::ValidCount => {
                let (y0, y1) = Self::span(y, h);
                let (x0, x1) = Self::span(x, w);
                T::one() / T::from_usize((y1 - y0 + 1) * (x1 - x0 + 1)).unwrap()
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let (h, w) = (x.height, x.width);
        let mut out = FeatureMap::zeros(x.channels, x.batch, h, w);
        for (dst, src) in out.data.chunks_mut(h * w).zip(x.data.chunks(h * w)) {
            for y in 0..h {
                let (y0, y1) = Self::span(y, h);
                for xx in 0..w {
                    let (x0, x1) = Self::span(xx, w);
                    let mut acc = T::zero();
                    for sy in y0..=y1 {
                        for sx in x0..=x1 {
                            acc += src[sy * w + sx];
                        }
                    }
                    dst[y * w + xx] = acc * self.scale(y, xx, h, w);
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(&self, dy: &FeatureMap<T>) -> FeatureMap<T> {
        let (h, w) = (dy.height, dy.width);
        let mut dx = FeatureMap::zeros(dy.channels, dy.batch, h, w);
        for (dst, src) in dx.data.chunks_mut(h * w).zip(dy.data.chunks(h * w)) {
            for y in 0..h {
                let (y0, y1) = Self::span(y, h);
                for xx in 0..w {
                    let (x0, x1) = Self::span(xx, w);
                    let g = src[y * w + xx] * self.scale::<T>(y, xx, h, w);
                    for sy in y0..=y1 {
                        for sx in x0..=x1 {
                            dst[sy * w + sx] += g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer on flattened `(channel, row, col)` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Sample-major copy of the flattened input.
#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    xs: Vec<T>,
    channels: usize,
    batch: usize,
    height: usize,
    width: usize,
}

/// Flattens each sample of a feature map into one row of a `batch x features` matrix.
pub fn flatten<T: Scalar>(x: &FeatureMap<T>) -> Vec<T> {
    let (b, p) = (x.batch, x.plane_len());
    let f = x.channels * p;
    let mut xs = vec![T::zero(); b * f];
    for c in 0..x.channels {
        for bi in 0..b {
            xs[bi * f + c * p..][..p].copy_from_slice(x.plane(c, bi));
        }
    }
    xs
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(shape_err(
                "dense parameters",
                (inputs * outputs, outputs),
                (weight.len(), bias.len()),
            ));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn he_init<R: Rng + ?Sized>(inputs: usize, outputs: usize, slope: f64, rng: &mut R) -> Self {
        Self {
            inputs,
            outputs,
            weight: he_normal(rng, inputs * outputs, inputs, slope),
            bias: vec![T::zero(); outputs],
        }
    }

    /// Returns the `batch x outputs` activations, row-major.
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(Vec<T>, DenseCache<T>)> {
        let f = x.channels * x.plane_len();
        if f != self.inputs {
            return Err(shape_err("dense inputs", self.inputs, f));
        }
        let xs = flatten(x);
        let b = x.batch;
        let mut z: Vec<T> = Vec::with_capacity(b * self.outputs);
        for _ in 0..b {
            z.extend_from_slice(&self.bias);
        }
        T::gemm(
            b,
            f,
            self.outputs,
            T::one(),
            &xs,
            f,
            1,
            &self.weight,
            1,
            f,
            T::one(),
            &mut z,
            self.outputs,
            1,
        );
        let cache = DenseCache {
            xs,
            channels: x.channels,
            batch: b,
            height: x.height,
            width: x.width,
        };
        Ok((z, cache))
    }

    /// Returns `(dx, dweight, dbias)` for a `batch x outputs` gradient.
    pub fn backward(&self, cache: &DenseCache<T>, dz: &[T]) -> Result<(FeatureMap<T>, Vec<T>, Vec<T>)> {
        let (b, f, o) = (cache.batch, self.inputs, self.outputs);
        if dz.len() != b * o {
            return Err(shape_err("dense output gradient", b * o, dz.len()));
        }
        let mut dw = vec![T::zero(); o * f];
        T::gemm(o, b, f, T::one(), dz, 1, o, &cache.xs, f, 1, T::zero(), &mut dw, f, 1);
        let mut db = vec![T::zero(); o];
        for row in dz.chunks(o) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        let mut dxs = vec![T::zero(); b * f];
        T::gemm(b, o, f, T::one(), dz, o, 1, &self.weight, f, 1, T::zero(), &mut dxs, f, 1);
        let p = cache.height * cache.width;
        let mut dx = FeatureMap::zeros(cache.channels, b, cache.height, cache.width);
        for c in 0..cache.channels {
            for bi in 0..b {
                dx.data[(c * b + bi) * p..][..p].copy_from_slice(&dxs[bi * f + c * p..][..p]);
            }
        }
        Ok((dx, dw, db))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(channels: usize, batch: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureMap<f64> {
        let mut x = FeatureMap::zeros(channels, batch, h, w);
        x.data = data;
        x
    }

    #[test]
    fn conv_zero_padding_arithmetic() {
        let conv = Conv2d::new(1, 1, vec![1.0; 9], vec![0.0]).unwrap();
        let x = fm(1, 1, 4, 5, vec![2.0; 20]);
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y.data[0], 8.0);
        assert_eq!(y.data[2], 12.0);
        assert_eq!(y.data[5 + 2], 18.0);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let conv = Conv2d::new(1, 1, k, vec![0.0]).unwrap();
        let x = fm(1, 2, 2, 3, (0..12).map(f64::from).collect());
        assert_eq!(conv.forward(&x).unwrap().0.data, x.data);
    }

    #[test]
    fn conv_is_cross_correlation() {
        // Kernel picks the right-hand neighbour.
        let mut k = vec![0.0; 9];
        k[5] = 1.0;
        let conv = Conv2d::new(1, 1, k, vec![0.5]).unwrap();
        let x = fm(1, 1, 1, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(conv.forward(&x).unwrap().0.data, vec![2.5, 3.5, 0.5]);
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let conv = Conv2d::<f64>::new(2, 1, vec![0.0; 18], vec![0.0]).unwrap();
        assert!(conv.forward(&FeatureMap::zeros(1, 1, 2, 2)).is_err());
        assert!(Conv2d::<f64>::new(2, 1, vec![0.0; 17], vec![0.0]).is_err());
    }

    #[test]
    fn leaky_and_tanh_values() {
        let mut v = vec![-1.0, 2.0, 0.0];
        leaky_relu(&mut v, 0.01);
        assert_eq!(v, vec![-0.01, 2.0, 0.0]);
        let mut t = vec![0.0f64, 50.0, -50.0];
        tanh_forward(&mut t);
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 1.0).abs() < 1e-15 && (t[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_pool_divisors() {
        let x = fm(1, 1, 3, 3, vec![9.0; 9]);
        let fixed = MeanPool::default().forward(&x);
        assert_eq!(fixed.data[4], 9.0);
        assert_eq!(fixed.data[0], 4.0);
        assert_eq!(fixed.data[1], 6.0);
        let valid = MeanPool {
            divisor: PoolDivisor::ValidCount,
        }
        .forward(&x);
        assert!(valid.data.iter().all(|&v| (v - 9.0).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_train_and_infer() {
        let mut bn = BatchNorm2d::<f64>::new(1, 1e-5, 0.1);
        let x = fm(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let (y, _) = bn.forward_train(&x).unwrap();
        let mean: f64 = y.data.iter().sum::<f64>() / 4.0;
        let var: f64 = y.data.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.25 / (1.25 + 1e-5)).abs() < 1e-12);
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);

        let a = bn.forward_infer(&x).unwrap();
        let b = bn.forward_infer(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batchnorm_rejects_single_sample_batches() {
        let mut bn = BatchNorm2d::<f64>::new(1, 1e-5, 0.1);
        let x = fm(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(bn.forward_train(&x), Err(Error::DegenerateBatch(1))));
        assert!(bn.forward_infer(&x).is_ok());
    }

    #[test]
    fn dense_flattens_channel_major() {
        let x = fm(2, 1, 1, 1, vec![3.0, 5.0]);
        let d = Dense::new(2, 1, vec![1.0, 10.0], vec![0.5]).unwrap();
        assert_eq!(d.forward(&x).unwrap().0, vec![53.5]);
        assert!(Dense::new(3, 1, vec![0.0; 3], vec![0.0]).unwrap().forward(&x).is_err());
    }
}
