//! Fixed-direction beamformers, power recovery for given directions, and
//! SINR bookkeeping.
//!
//! With users ordered weakest first, user `k` sees interference only from
//! users `i > k` (the weaker users' signals are removed by SIC). For fixed
//! unit directions the powers meeting every SINR floor with equality solve
//! the upper-triangular system
//!
//! ```txt
//!     Psi p = sigma^2 1,   Psi_kk = |h_k^H u_k|^2 / gamma_k,
//!                          Psi_ki = -|h_k^H u_i|^2   (i > k)
//! ```
//!
//! which back-substitution solves from user `K` down. The right-hand side
//! is positive, the diagonal positive and the off-diagonal non-positive, so
//! the powers are never negative.

use num_complex::Complex;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{cdot_h, csolve, CMatrix, DenseMatrix};
use crate::scalar::Scalar;

/// Relative slack allowed on SINR floors when judging feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Absolute slack on the SIC ordering chain.
pub const SIC_ORDER_TOL: f64 = 1e-9;
/// Allowed deviation of a direction's norm from one.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Per-user minimum SINR (linear scale).
#[derive(Debug, Clone, PartialEq)]
pub struct SinrSpec<T> {
    gamma: Vec<T>,
}

impl<T: Scalar> SinrSpec<T> {
    pub fn from_linear(gamma: Vec<T>) -> Result<Self> {
        if gamma.is_empty() || gamma.iter().any(|&g| !(g > T::zero()) || !g.is_finite()) {
            return Err(Error::InvalidParameter(
                "SINR targets must be positive and finite".into(),
            ));
        }
        Ok(Self { gamma })
    }

    /// Equal targets for `k` users, given in dB.
    pub fn uniform_db(k: usize, gamma_db: f64) -> Result<Self> {
        Self::from_linear(vec![T::lit(db_to_linear(gamma_db)); k])
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn get(&self, k: usize) -> T {
        self.gamma[k]
    }

    pub fn linear(&self) -> &[T] {
        &self.gamma
    }

    pub fn gamma_db(&self) -> Vec<T> {
        self.gamma.iter().map(|g| T::lit(10.0) * g.log10()).collect()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Unit-norm beam directions, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMatrix<T> {
    u: CMatrix<T>,
}

impl<T: Scalar> DirectionMatrix<T> {
    /// Accepts `u` only if every column already has unit norm.
    pub fn new(u: CMatrix<T>) -> Result<Self> {
        let tol = T::lit(UNIT_NORM_TOL).max(T::epsilon() * T::lit(64.0));
        for j in 0..u.cols() {
            let norm = u.col_norm(j);
            if !((norm - T::one()).abs() <= tol) {
                return Err(Error::InvalidParameter(format!(
                    "direction {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { u })
    }

    /// Rescales every column to unit norm.
    pub fn normalized(mut m: CMatrix<T>) -> Result<Self> {
        for j in 0..m.cols() {
            let norm = m.col_norm(j);
            if !(norm > T::zero()) || !norm.is_finite() {
                return Err(Error::DegenerateOutput {
                    column: j,
                    norm: norm.as_f64(),
                });
            }
            for z in m.col_mut(j) {
                *z = *z / norm;
            }
        }
        Ok(Self { u: m })
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.u
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.u
    }

    pub fn col(&self, k: usize) -> &[Complex<T>] {
        self.u.col(k)
    }

    pub fn k(&self) -> usize {
        self.u.cols()
    }
}

/// Outcome of evaluating a set of directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerReport<T> {
    pub p: Vec<T>,
    pub total: T,
    pub achieved_sinr: Vec<T>,
    /// Per-user result of [`check_sic_order`].
    pub sic_order: Vec<bool>,
    pub sic_order_ok: bool,
    pub feasible: bool,
}

/// Matched-filter directions `h_k / ||h_k||`.
pub fn mrc_directions<T: Scalar>(c: &ChannelSet<T>) -> Result<DirectionMatrix<T>> {
    DirectionMatrix::normalized(c.h().clone()).map_err(|e| match e {
        Error::DegenerateOutput { column, .. } => Error::ZeroChannel(column),
        other => other,
    })
}

/// Zero-forcing directions: normalized columns of `H (H^H H)^{-1}`.
pub fn zf_directions<T: Scalar>(c: &ChannelSet<T>) -> Result<DirectionMatrix<T>> {
    let (n, k) = (c.n(), c.k());
    if n < k {
        return Err(Error::ZfUndefined(format!("{n} antennas cannot null {k} users")));
    }
    let h = c.h();
    let mut gram = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = cdot_h(h.col(i), h.col(j));
        }
    }
    let identity: Vec<Vec<Complex<T>>> = (0..k)
        .map(|j| {
            (0..k)
                .map(|i| if i == j { Complex::new(T::one(), T::zero()) } else { Complex::new(T::zero(), T::zero()) })
                .collect()
        })
        .collect();
    let inv = csolve(&gram, &identity, T::lit(1e-12))
        .map_err(|_| Error::ZfUndefined("channel matrix is rank deficient".into()))?;
    let cols: Vec<Vec<Complex<T>>> = inv
        .iter()
        .map(|x| {
            (0..n)
                .map(|a| (0..k).map(|j| h[(a, j)] * x[j]).fold(Complex::new(T::zero(), T::zero()), |s, v| s + v))
                .collect()
        })
        .collect();
    DirectionMatrix::normalized(CMatrix::from_columns(n, &cols))
        .map_err(|_| Error::ZfUndefined("channel matrix is rank deficient".into()))
}

/// `|h_k^H u_i|^2` for all pairs, indexed `[k][i]`.
fn gains<T: Scalar>(c: &ChannelSet<T>, u: &CMatrix<T>) -> Vec<Vec<T>> {
    (0..c.k())
        .map(|k| (0..u.cols()).map(|i| cdot_h(c.user(k), u.col(i)).norm_sqr()).collect())
        .collect()
}

/// The triangular power-recovery matrix, dense.
pub fn psi_matrix<T: Scalar>(c: &ChannelSet<T>, u: &DirectionMatrix<T>, gamma: &SinrSpec<T>) -> DenseMatrix<T> {
    let g = gains(c, u.matrix());
    let k = c.k();
    let mut psi = DenseMatrix::zeros(k, k);
    for row in 0..k {
        psi[(row, row)] = g[row][row] / gamma.get(row);
        for col in row + 1..k {
            psi[(row, col)] = -g[row][col];
        }
    }
    psi
}

fn check_dims<T: Scalar>(c: &ChannelSet<T>, u: &CMatrix<T>, what: &str) -> Result<()> {
    if u.rows() != c.n() || u.cols() != c.k() {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, channel is {}x{}",
            u.rows(),
            u.cols(),
            c.n(),
            c.k()
        )));
    }
    Ok(())
}

/// Powers meeting every SINR floor with equality for directions `u`.
pub fn power_allocation<T: Scalar>(
    c: &ChannelSet<T>,
    u: &DirectionMatrix<T>,
    gamma: &SinrSpec<T>,
) -> Result<PowerReport<T>> {
    check_dims(c, u.matrix(), "direction matrix")?;
    if gamma.len() != c.k() {
        return Err(Error::ShapeMismatch(format!("{} SINR targets for {} users", gamma.len(), c.k())));
    }
    let g = gains(c, u.matrix());
    let k = c.k();
    let sigma2 = c.sigma2();
    let mut p = vec![T::zero(); k];
    for row in (0..k).rev() {
        let diag = g[row][row] / gamma.get(row);
        if !(diag > T::zero()) {
            return Err(Error::SingularDiagonal { user: row });
        }
        let interference: T = (row + 1..k).map(|i| g[row][i] * p[i]).sum();
        p[row] = (sigma2 + interference) / diag;
    }
    debug_assert!(p.iter().all(|&v| v >= T::zero()));
    Ok(report(c, u, gamma, p))
}

fn report<T: Scalar>(c: &ChannelSet<T>, u: &DirectionMatrix<T>, gamma: &SinrSpec<T>, p: Vec<T>) -> PowerReport<T> {
    let achieved_sinr = sinr_with_powers(c, u, &p);
    let sic_order = check_sic_order(c, u, &p);
    let floor = T::one() - T::lit(FEASIBILITY_TOL);
    let feasible = p.iter().all(|&v| v >= T::zero() && v.is_finite())
        && achieved_sinr
            .iter()
            .zip(gamma.linear())
            .all(|(&s, &g)| s >= g * floor);
    PowerReport {
        total: p.iter().copied().sum(),
        sic_order_ok: sic_order.iter().all(|&b| b),
        p,
        achieved_sinr,
        sic_order,
        feasible,
    }
}

/// SINR of every user for un-normalized beams `w`.
pub fn sinr_of<T: Scalar>(c: &ChannelSet<T>, w: &CMatrix<T>) -> Vec<T> {
    let g = gains(c, w);
    let k = c.k();
    (0..k)
        .map(|row| {
            let interference: T = (row + 1..k).map(|i| g[row][i]).sum();
            g[row][row] / (interference + c.sigma2())
        })
        .collect()
}

/// SINR with beams `sqrt(p_k) u_k`.
pub fn sinr_with_powers<T: Scalar>(c: &ChannelSet<T>, u: &DirectionMatrix<T>, p: &[T]) -> Vec<T> {
    let g = gains(c, u.matrix());
    let k = c.k();
    (0..k)
        .map(|row| {
            let interference: T = (row + 1..k).map(|i| p[i] * g[row][i]).sum();
            p[row] * g[row][row] / (interference + c.sigma2())
        })
        .collect()
}

/// For each receiving user `k`, whether `p_i |h_k^H u_i|^2` is
/// non-increasing in `i` (the SIC decodability chain).
pub fn check_sic_order<T: Scalar>(c: &ChannelSet<T>, u: &DirectionMatrix<T>, p: &[T]) -> Vec<bool> {
    let g = gains(c, u.matrix());
    let tol = T::lit(SIC_ORDER_TOL);
    (0..c.k())
        .map(|row| {
            let chain: Vec<T> = (0..c.k()).map(|i| p[i] * g[row][i]).collect();
            chain.windows(2).all(|w| w[0] + tol >= w[1])
        })
        .collect()
}

/// Recovers powers for `u`, evaluates SINRs and the SIC chain.
pub fn verify_solution<T: Scalar>(
    c: &ChannelSet<T>,
    u: &DirectionMatrix<T>,
    gamma: &SinrSpec<T>,
) -> Result<PowerReport<T>> {
    power_allocation(c, u, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_rayleigh, RngStream};

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn orthogonal_channel() -> ChannelSet<f64> {
        let h = CMatrix::from_columns(
            3,
            &[
                vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)],
                vec![c(0.0, 0.0), c(2.0, 0.0), c(0.0, 0.0)],
            ],
        );
        ChannelSet::new(h, 0.1).unwrap()
    }

    #[test]
    fn mrc_normalizes_channel() {
        let h = CMatrix::from_columns(2, &[vec![c(3.0, 0.0), c(0.0, 4.0)]]);
        let ch = ChannelSet::new(h, 0.1).unwrap();
        let u = mrc_directions(&ch).unwrap();
        assert!((u.col(0)[0] - c(0.6, 0.0)).norm() < 1e-15);
        assert!((u.col(0)[1] - c(0.0, 0.8)).norm() < 1e-15);
        let gain = cdot_h(ch.user(0), u.col(0)).norm();
        assert!((gain - 5.0).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_users_make_zf_equal_mrc() {
        let ch = orthogonal_channel();
        let mrc = mrc_directions(&ch).unwrap();
        let zf = zf_directions(&ch).unwrap();
        for (a, b) in mrc.matrix().iter().zip(zf.matrix().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_nulls_other_users() {
        let ch = sample_rayleigh::<f64>(4, 3, 0.1, RngStream::new(5, 1)).unwrap();
        let zf = zf_directions(&ch).unwrap();
        let hmax = ch.norms().into_iter().fold(0.0, f64::max);
        for j in 0..3 {
            for k in 0..3 {
                if j != k {
                    assert!(cdot_h(ch.user(j), zf.col(k)).norm() <= 1e-9 * hmax);
                }
            }
        }
    }

    #[test]
    fn zf_needs_enough_antennas() {
        let ch = sample_rayleigh::<f64>(2, 3, 0.1, RngStream::new(5, 1)).unwrap();
        assert!(matches!(zf_directions(&ch), Err(Error::ZfUndefined(_))));
        // Two identical users: rank deficient.
        let col = vec![c(1.0, 0.0), c(0.5, -0.5)];
        let ch = ChannelSet::new(CMatrix::from_columns(2, &[col.clone(), col]), 0.1).unwrap();
        assert!(matches!(zf_directions(&ch), Err(Error::ZfUndefined(_))));
    }

    #[test]
    fn zf_powers_are_diagonal() {
        let ch = sample_rayleigh::<f64>(4, 3, 0.1, RngStream::new(8, 0)).unwrap();
        let zf = zf_directions(&ch).unwrap();
        let g = SinrSpec::uniform_db(3, 5.0).unwrap();
        let rep = power_allocation(&ch, &zf, &g).unwrap();
        for k in 0..3 {
            let want = g.get(k) * 0.1 / cdot_h(ch.user(k), zf.col(k)).norm_sqr();
            assert!((rep.p[k] - want).abs() / want < 1e-9);
        }
    }

    #[test]
    fn single_user_power_is_closed_form() {
        let h = CMatrix::from_columns(2, &[vec![c(1.0, 1.0), c(0.0, -1.0)]]);
        let ch = ChannelSet::new(h, 0.1).unwrap();
        let u = mrc_directions(&ch).unwrap();
        let g = SinrSpec::from_linear(vec![2.0]).unwrap();
        let rep = verify_solution(&ch, &u, &g).unwrap();
        assert!((rep.total - 2.0 * 0.1 / 3.0).abs() < 1e-15);
        assert!(rep.feasible);
        assert_eq!(rep.sic_order, vec![true]);
    }

    #[test]
    fn singular_diagonal_is_an_error() {
        let ch = orthogonal_channel();
        // User 0's direction is orthogonal to its channel.
        let u = DirectionMatrix::new(CMatrix::from_columns(
            3,
            &[
                vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
                vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            ],
        ))
        .unwrap();
        let g = SinrSpec::uniform_db(2, 0.0).unwrap();
        assert!(matches!(power_allocation(&ch, &u, &g), Err(Error::SingularDiagonal { user: 0 })));
    }

    #[test]
    fn sinr_edge_cases() {
        let ch = sample_rayleigh::<f64>(3, 3, 0.1, RngStream::new(1, 9)).unwrap();
        let u = mrc_directions(&ch).unwrap();
        assert_eq!(sinr_with_powers(&ch, &u, &[0.0; 3]), vec![0.0; 3]);

        let mut w = u.matrix().clone();
        let before = sinr_of(&ch, &w);
        for z in w.col_mut(2) {
            *z = *z * 2.0;
        }
        let after = sinr_of(&ch, &w);
        assert!((after[2] / before[2] - 4.0).abs() < 1e-12);
        assert!(after[0] < before[0] && after[1] < before[1]);

        let h = CMatrix::from_columns(1, &[vec![c(0.0, 2.0)]]);
        let single = ChannelSet::new(h, 0.5).unwrap();
        let w = CMatrix::from_columns(1, &[vec![c(1.0, 0.0)]]);
        assert_eq!(sinr_of(&single, &w), vec![4.0 / 0.5]);
    }

    #[test]
    fn sic_chain_reports_per_user() {
        let ch = orthogonal_channel();
        let zf = zf_directions(&ch).unwrap();
        // User 0 sees (p0 g00, 0): non-increasing. User 1 sees (0, p1 g11): increasing.
        assert_eq!(check_sic_order(&ch, &zf, &[1.0, 1.0]), vec![true, false]);
        let ch1 = ChannelSet::new(CMatrix::from_columns(1, &[vec![c(1.0, 0.0)]]), 0.1).unwrap();
        let u1 = mrc_directions(&ch1).unwrap();
        assert_eq!(check_sic_order(&ch1, &u1, &[3.0]), vec![true]);
    }

    #[test]
    fn direction_matrix_validates_norms() {
        let bad = CMatrix::from_columns(2, &[vec![c(1.0, 0.0), c(1.0, 0.0)]]);
        assert!(DirectionMatrix::new(bad.clone()).is_err());
        let good = DirectionMatrix::normalized(bad).unwrap();
        assert!((good.matrix().col_norm(0) - 1.0).abs() < 1e-15);
        assert!(DirectionMatrix::<f64>::normalized(CMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn db_conversion() {
        let g = SinrSpec::<f64>::uniform_db(2, 10.0).unwrap();
        assert!((g.get(0) - 10.0).abs() < 1e-12);
        assert!((g.gamma_db()[1] - 10.0).abs() < 1e-12);
        assert!(SinrSpec::<f64>::from_linear(vec![0.0]).is_err());
    }
}
