use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One `channels x height x width` sample, row-major by (channel, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite tensor entry".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> T {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// A batch of equally shaped feature maps, laid out (channel, sample, row,
/// col) so that every channel's values over the whole batch are contiguous.
/// Convolutions then become one matrix product per layer and batch
/// normalization reduces over contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn from_samples(samples: &[&Tensor3<T>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty)?;
        let (c, h, w) = first.shape();
        if let Some(bad) = samples.iter().find(|s| s.shape() != (c, h, w)) {
            return Err(Error::ShapeMismatch(format!(
                "batch mixes {c}x{h}x{w} and {:?}",
                bad.shape()
            )));
        }
        let b = samples.len();
        let plane = h * w;
        let mut out = Self::zeros(c, b, h, w);
        for (bi, s) in samples.iter().enumerate() {
            for ci in 0..c {
                let dst = (ci * b + bi) * plane;
                out.data[dst..dst + plane].copy_from_slice(&s.data[ci * plane..(ci + 1) * plane]);
            }
        }
        Ok(out)
    }

    pub fn sample(&self, b: usize) -> Tensor3<T> {
        let plane = self.plane_len();
        let mut data = Vec::with_capacity(self.channels * plane);
        for c in 0..self.channels {
            data.extend_from_slice(self.plane(c, b));
        }
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize, b: usize) -> &[T] {
        let p = self.plane_len();
        let start = (c * self.batch + b) * p;
        &self.data[start..start + p]
    }

    /// All values of channel `c` across the batch.
    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.batch * self.plane_len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let len = self.batch * self.plane_len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.channels, self.batch, self.height, self.width)
            == (other.channels, other.batch, other.height, other.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_layout_roundtrip() {
        let a = Tensor3::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor3::new(2, 1, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let fm = FeatureMap::from_samples(&[&a, &b]).unwrap();
        assert_eq!(fm.data, vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert_eq!(fm.sample(1), b);
        assert_eq!(fm.channel(1), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn rejects_mixed_shapes_and_bad_lengths() {
        let a = Tensor3::<f64>::zeros(1, 2, 2);
        let b = Tensor3::<f64>::zeros(1, 2, 3);
        assert!(FeatureMap::from_samples(&[&a, &b]).is_err());
        assert!(FeatureMap::<f64>::from_samples(&[]).is_err());
        assert!(Tensor3::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor3::new(1, 1, 1, vec![f64::NAN]).is_err());
    }
}
