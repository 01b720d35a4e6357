//! Real-valued layouts of complex channels (network inputs) and beam
//! directions (network targets).

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::precoding::DirectionMatrix;
use crate::scalar::Scalar;

/// Decoded columns shorter than this are rejected rather than renormalized.
pub const MIN_DECODE_NORM: f64 = 1e-12;

/// How a channel is laid out for the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// I/Q rows: `[Re h_1^T ... Re h_K^T; Im h_1^T ... Im h_K^T]`, `2 x NK`.
    Tcnn,
    /// Real embedding of the complex matrix: `[Re H, -Im H; Im H, Re H]`, `2N x 2K`.
    Fcnn,
}

impl Encoding {
    pub const ALL: [Encoding; 2] = [Encoding::Tcnn, Encoding::Fcnn];

    /// `(height, width)` of the single-channel input image.
    pub fn input_shape(self, n: usize, k: usize) -> (usize, usize) {
        match self {
            Encoding::Tcnn => (2, n * k),
            Encoding::Fcnn => (2 * n, 2 * k),
        }
    }

    pub fn encode<T: Scalar>(self, c: &ChannelSet<T>) -> Tensor3<T> {
        match self {
            Encoding::Tcnn => tcnn_encode(c),
            Encoding::Fcnn => fcnn_encode(c),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::Tcnn => "tcnn",
            Encoding::Fcnn => "fcnn",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcnn" => Ok(Encoding::Tcnn),
            "fcnn" => Ok(Encoding::Fcnn),
            other => Err(Error::InvalidParameter(format!("unknown encoding `{other}`"))),
        }
    }
}

pub fn tcnn_encode<T: Scalar>(c: &ChannelSet<T>) -> Tensor3<T> {
    let (n, k) = (c.n(), c.k());
    let mut out = Tensor3::zeros(1, 2, n * k);
    for user in 0..k {
        for (i, z) in c.user(user).iter().enumerate() {
            out.data[user * n + i] = z.re;
            out.data[n * k + user * n + i] = z.im;
        }
    }
    out
}

/// Inverse of [`tcnn_encode`].
pub fn tcnn_decode<T: Scalar>(t: &Tensor3<T>, n: usize, k: usize) -> Result<CMatrix<T>> {
    if t.shape() != (1, 2, n * k) {
        return Err(Error::ShapeMismatch(format!("expected 1x2x{}, got {:?}", n * k, t.shape())));
    }
    let mut h = CMatrix::zeros(n, k);
    for user in 0..k {
        for i in 0..n {
            h[(i, user)] = Complex::new(t.data[user * n + i], t.data[n * k + user * n + i]);
        }
    }
    Ok(h)
}

pub fn fcnn_encode<T: Scalar>(c: &ChannelSet<T>) -> Tensor3<T> {
    let (n, k) = (c.n(), c.k());
    let w = 2 * k;
    let mut out = Tensor3::zeros(1, 2 * n, w);
    for j in 0..k {
        for i in 0..n {
            let z = c.h()[(i, j)];
            out.data[i * w + j] = z.re;
            out.data[i * w + k + j] = -z.im;
            out.data[(n + i) * w + j] = z.im;
            out.data[(n + i) * w + k + j] = z.re;
        }
    }
    out
}

/// Stacks `[Re u_1; Im u_1; ...; Re u_K; Im u_K]`.
pub fn label_encode<T: Scalar>(u: &CMatrix<T>) -> Vec<T> {
    let n = u.rows();
    let mut out = Vec::with_capacity(2 * n * u.cols());
    for k in 0..u.cols() {
        out.extend(u.col(k).iter().map(|z| z.re));
        out.extend(u.col(k).iter().map(|z| z.im));
    }
    out
}

/// Reshapes a stacked vector back into directions, rescaling each column to
/// unit norm.
pub fn label_decode<T: Scalar>(v: &[T], n: usize, k: usize) -> Result<DirectionMatrix<T>> {
    if v.len() != 2 * n * k {
        return Err(Error::ShapeMismatch(format!(
            "label of length {} for n={n}, k={k}",
            v.len()
        )));
    }
    let mut m = CMatrix::zeros(n, k);
    for user in 0..k {
        let base = 2 * n * user;
        let col = m.col_mut(user);
        for i in 0..n {
            col[i] = Complex::new(v[base + i], v[base + n + i]);
        }
        let norm = m.col_norm(user);
        if !(norm >= T::lit(MIN_DECODE_NORM)) {
            return Err(Error::DegenerateOutput {
                column: user,
                norm: norm.as_f64(),
            });
        }
    }
    DirectionMatrix::normalized(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn channel(n: usize, cols: &[Vec<Complex<f64>>]) -> ChannelSet<f64> {
        ChannelSet::new(CMatrix::from_columns(n, cols), 0.1).unwrap()
    }

    #[test]
    fn tcnn_layout() {
        let ch = channel(1, &[vec![c(1.0, 2.0)], vec![c(3.0, -1.0)]]);
        let t = tcnn_encode(&ch);
        assert_eq!(t.shape(), (1, 2, 2));
        assert_eq!(t.data, vec![1.0, 3.0, 2.0, -1.0]);
        assert_eq!(tcnn_decode(&t, 1, 2).unwrap(), *ch.h());

        let real = channel(2, &[vec![c(1.0, 0.0), c(2.0, 0.0)]]);
        assert!(tcnn_encode(&real).data[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fcnn_layout() {
        let ch = channel(1, &[vec![c(1.0, 2.0)]]);
        let t = fcnn_encode(&ch);
        assert_eq!(t.shape(), (1, 2, 2));
        assert_eq!(t.data, vec![1.0, -2.0, 2.0, 1.0]);

        let ch = channel(2, &[vec![c(1.0, 0.5), c(-2.0, 0.25)], vec![c(0.0, 3.0), c(4.0, -1.0)]]);
        let t = fcnn_encode(&ch);
        assert_eq!(t.shape(), (1, 4, 4));
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(t.at(0, i, j), t.at(0, 2 + i, 2 + j));
                assert_eq!(t.at(0, i, 2 + j), -t.at(0, 2 + i, j));
            }
        }
        let real = channel(2, &[vec![c(1.0, 0.0), c(2.0, 0.0)]]);
        let t = fcnn_encode(&real);
        assert_eq!(t.at(0, 0, 1), 0.0);
        assert_eq!(t.at(0, 2, 0), 0.0);
    }

    #[test]
    fn label_layout_and_decode() {
        let u = CMatrix::from_columns(1, &[vec![c(0.0, 1.0)]]);
        assert_eq!(label_encode(&u), vec![0.0, 1.0]);

        let u = DirectionMatrix::normalized(CMatrix::from_columns(
            2,
            &[vec![c(1.0, 1.0), c(0.0, -2.0)], vec![c(0.5, 0.0), c(0.0, 0.5)]],
        ))
        .unwrap();
        let v = label_encode(u.matrix());
        let back = label_decode(&v, 2, 2).unwrap();
        for (a, b) in back.matrix().iter().zip(u.matrix().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let half: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
        let back = label_decode(&half, 2, 2).unwrap();
        for (a, b) in back.matrix().iter().zip(u.matrix().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_decode_is_rejected() {
        let v = [1.0, 0.0, 0.0, 0.0, 1e-13, 0.0, 0.0, 0.0];
        assert!(matches!(
            label_decode(&v, 2, 2),
            Err(Error::DegenerateOutput { column: 1, .. })
        ));
        assert!(label_decode(&v[..6], 2, 2).is_err());
    }

    #[test]
    fn encoding_names_parse() {
        assert_eq!("FCNN".parse::<Encoding>().unwrap(), Encoding::Fcnn);
        assert!("mlp".parse::<Encoding>().is_err());
        assert_eq!(Encoding::Tcnn.input_shape(4, 3), (2, 12));
        assert_eq!(Encoding::Fcnn.input_shape(4, 3), (8, 6));
    }
}
