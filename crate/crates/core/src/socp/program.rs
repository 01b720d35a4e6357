//! Lifting of the power-minimization beamforming problem into a real SOCP.
//!
//! Variables are `x = [t, Re w_1, Im w_1, ..., Re w_K, Im w_K]`. For users
//! ordered weakest first, user `k` only suffers interference from users
//! `k+1..K`, and the constraint
//!
//! ```txt
//!     sqrt(gamma_k) * || (h_k^H w_{k+1}, ..., h_k^H w_K, sigma) || <= Re(h_k^H w_k),
//!     Im(h_k^H w_k) = 0
//! ```
//!
//! is an exact convex restatement of the SINR floor (the phase of
//! `h_k^H w_k` is free). The objective `sum ||w_k||^2` becomes `min t`
//! with `||vec W|| <= t`.

use num_complex::Complex;

use super::ipm::ConeProgram;
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, DenseMatrix};
use crate::precoding::SinrSpec;
use crate::scalar::Scalar;

/// The lifted program together with the shape needed to read beams back.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMinProgram<T> {
    pub program: ConeProgram<T>,
    n: usize,
    k: usize,
}

impl<T: Scalar> PowerMinProgram<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Column of `x` holding `Re w_user[antenna]`.
    pub fn re_index(&self, user: usize, antenna: usize) -> usize {
        1 + 2 * self.n * user + antenna
    }

    pub fn im_index(&self, user: usize, antenna: usize) -> usize {
        1 + 2 * self.n * user + self.n + antenna
    }

    /// Real dimensions of the per-user SINR cones, user 1 first.
    pub fn sinr_cone_dims(&self) -> &[usize] {
        &self.program.cones[..self.k]
    }

    /// Dimension of the objective epigraph cone (`2NK + 1`).
    pub fn epigraph_dim(&self) -> usize {
        self.program.cones[self.k]
    }

    /// Reads the beamformers out of a solution vector.
    pub fn beams(&self, x: &[T]) -> CMatrix<T> {
        let mut w = CMatrix::zeros(self.n, self.k);
        for user in 0..self.k {
            for a in 0..self.n {
                w[(a, user)] = Complex::new(x[self.re_index(user, a)], x[self.im_index(user, a)]);
            }
        }
        w
    }

    /// Inverse of [`beams`](Self::beams), with `t = ||vec W||`.
    pub fn point(&self, w: &CMatrix<T>) -> Vec<T> {
        let mut x = vec![T::zero(); self.program.num_vars()];
        let mut t2 = T::zero();
        for user in 0..self.k {
            for a in 0..self.n {
                let z = w[(a, user)];
                x[self.re_index(user, a)] = z.re;
                x[self.im_index(user, a)] = z.im;
                t2 += z.norm_sqr();
            }
        }
        x[0] = t2.sqrt();
        x
    }
}

/// Builds the real SOCP whose optimum is the minimum-power beamformer.
pub fn build_cone_program<T: Scalar>(c: &ChannelSet<T>, gamma: &SinrSpec<T>) -> Result<PowerMinProgram<T>> {
    let (n, k) = (c.n(), c.k());
    if gamma.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} SINR targets for {k} users",
            gamma.len()
        )));
    }
    let nvars = 1 + 2 * n * k;
    let shape = PowerMinProgram {
        program: ConeProgram {
            c: vec![],
            a: DenseMatrix::zeros(0, 0),
            b: vec![],
            g: DenseMatrix::zeros(0, 0),
            h: vec![],
            cones: vec![],
        },
        n,
        k,
    };
    let zero = T::zero();

    // Row of coefficients of Re(h^H w_user) or Im(h^H w_user) over x.
    // With h = a + ib and w = x + iy: Re = a.x + b.y, Im = a.y - b.x.
    let re_row = |h: &[Complex<T>], user: usize| -> Vec<T> {
        let mut row = vec![zero; nvars];
        for (i, hi) in h.iter().enumerate() {
            row[shape.re_index(user, i)] = hi.re;
            row[shape.im_index(user, i)] = hi.im;
        }
        row
    };
    let im_row = |h: &[Complex<T>], user: usize| -> Vec<T> {
        let mut row = vec![zero; nvars];
        for (i, hi) in h.iter().enumerate() {
            row[shape.re_index(user, i)] = -hi.im;
            row[shape.im_index(user, i)] = hi.re;
        }
        row
    };

    let mut a_rows = Vec::with_capacity(k * nvars);
    for user in 0..k {
        a_rows.extend(im_row(c.user(user), user));
    }

    // Cone rows are accumulated as (s = h - G x) with G = -coeff.
    let mut g_rows: Vec<T> = Vec::new();
    let mut h_vec: Vec<T> = Vec::new();
    let mut cones = Vec::with_capacity(k + 1);
    let sigma = c.sigma();
    for user in 0..k {
        let hk = c.user(user);
        let root = gamma.get(user).sqrt();
        let mut push = |coeff: Vec<T>, scale: T, offset: T| {
            g_rows.extend(coeff.into_iter().map(|v| -v * scale));
            h_vec.push(offset);
        };
        push(re_row(hk, user), T::one(), zero);
        for other in user + 1..k {
            push(re_row(hk, other), root, zero);
            push(im_row(hk, other), root, zero);
        }
        push(vec![zero; nvars], T::one(), root * sigma);
        cones.push(2 * (k - user - 1) + 2);
    }
    // Epigraph: (t, vec W) in SOC.
    for j in 0..nvars {
        let mut row = vec![zero; nvars];
        row[j] = -T::one();
        g_rows.extend(row);
        h_vec.push(zero);
    }
    cones.push(nvars);

    let mut cvec = vec![zero; nvars];
    cvec[0] = T::one();
    let m = h_vec.len();
    let program = ConeProgram {
        c: cvec,
        a: DenseMatrix::from_row_major(k, nvars, a_rows),
        b: vec![zero; k],
        g: DenseMatrix::from_row_major(m, nvars, g_rows),
        h: h_vec,
        cones,
    };
    program.validate()?;
    Ok(PowerMinProgram { program, ..shape })
}
