//! Second-order cone algebra: Jordan product, Nesterov-Todd scaling, step
//! lengths. A cone block `x = (x0, x1)` is interior when `x0 > ||x1||`.

use crate::linalg::{dot, norm2, DenseMatrix};
use crate::scalar::Scalar;

/// `x0 - ||x1||`; positive iff `x` is strictly inside the cone.
pub fn margin<T: Scalar>(x: &[T]) -> T {
    x[0] - norm2(&x[1..])
}

/// `x^T J y` with `J = diag(1, -1, ..., -1)`.
pub fn jdot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x[0] * y[0] - dot(&x[1..], &y[1..])
}

/// Jordan product `u o v = (u^T v, u0 v1 + v0 u1)`.
pub fn circ<T: Scalar>(u: &[T], v: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(u.len());
    out.push(dot(u, v));
    out.extend(u[1..].iter().zip(&v[1..]).map(|(&a, &b)| u[0] * b + v[0] * a));
    out
}

/// Solves `lambda o x = v` for `x`; `lambda` must be interior.
pub fn circ_div<T: Scalar>(lambda: &[T], v: &[T]) -> Vec<T> {
    let rho = jdot(lambda, lambda);
    let x0 = (lambda[0] * v[0] - dot(&lambda[1..], &v[1..])) / rho;
    let mut out = Vec::with_capacity(v.len());
    out.push(x0);
    out.extend(
        lambda[1..]
            .iter()
            .zip(&v[1..])
            .map(|(&l, &vi)| (vi - x0 * l) / lambda[0]),
    );
    out
}

/// Largest `alpha >= 0` with `x + alpha dx` in the cone (`x` interior).
/// Returns `+inf` when the whole ray stays inside.
pub fn max_step<T: Scalar>(x: &[T], dx: &[T]) -> T {
    let mut alpha = T::infinity();
    if dx[0] < T::zero() {
        alpha = -x[0] / dx[0];
    }
    // q(a) = (x0 + a d0)^2 - ||x1 + a d1||^2 = qa a^2 + qb a + qc, qc > 0.
    let qa = jdot(dx, dx);
    let qb = T::lit(2.0) * jdot(x, dx);
    let qc = jdot(x, x);
    let zero = T::zero();
    if qa == zero {
        if qb < zero {
            alpha = alpha.min(-qc / qb);
        }
        return alpha;
    }
    let disc = qb * qb - T::lit(4.0) * qa * qc;
    if disc < zero {
        return alpha;
    }
    let sq = disc.sqrt();
    let q = if qb >= zero {
        -(qb + sq) / T::lit(2.0)
    } else {
        -(qb - sq) / T::lit(2.0)
    };
    for r in [q / qa, if q != zero { qc / q } else { T::infinity() }] {
        if r > zero {
            alpha = alpha.min(r);
        }
    }
    alpha
}

/// Nesterov-Todd scaling for one cone: the symmetric `W` with
/// `W z = W^{-1} s = lambda`.
#[derive(Debug, Clone)]
pub struct NtScaling<T> {
    eta: T,
    /// Normalized scaling point, `jdot(w, w) = 1`.
    w: Vec<T>,
}

impl<T: Scalar> NtScaling<T> {
    pub fn new(s: &[T], z: &[T]) -> Self {
        let sn = jdot(s, s).sqrt();
        let zn = jdot(z, z).sqrt();
        let sb: Vec<T> = s.iter().map(|&v| v / sn).collect();
        let zb: Vec<T> = z.iter().map(|&v| v / zn).collect();
        let gamma = ((T::one() + dot(&sb, &zb)) / T::lit(2.0)).sqrt();
        let two_gamma = T::lit(2.0) * gamma;
        let mut w = Vec::with_capacity(s.len());
        w.push((sb[0] + zb[0]) / two_gamma);
        w.extend(sb[1..].iter().zip(&zb[1..]).map(|(&a, &b)| (a - b) / two_gamma));
        Self {
            eta: (sn / zn).sqrt(),
            w,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn apply_signed(&self, v: &[T], sign: T, scale: T) -> Vec<T> {
        let w0 = self.w[0];
        let w1 = &self.w[1..];
        let d = dot(w1, &v[1..]);
        let mut out = Vec::with_capacity(v.len());
        out.push(scale * (w0 * v[0] + sign * d));
        let f = sign * v[0] + d / (T::one() + w0);
        out.extend(w1.iter().zip(&v[1..]).map(|(&wi, &vi)| scale * (vi + f * wi)));
        out
    }

    /// `W v`
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.apply_signed(v, T::one(), self.eta)
    }

    /// `W^{-1} v`
    pub fn apply_inv(&self, v: &[T]) -> Vec<T> {
        self.apply_signed(v, -T::one(), T::one() / self.eta)
    }

    /// Dense `W^2`, the cone's block of the KKT matrix.
    pub fn squared(&self) -> DenseMatrix<T> {
        let m = self.dim();
        let mut out = DenseMatrix::zeros(m, m);
        let mut e = vec![T::zero(); m];
        for j in 0..m {
            e[j] = T::one();
            let col = self.apply(&self.apply(&e));
            e[j] = T::zero();
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}
