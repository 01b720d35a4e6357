//! Minimum transmit-power beamforming as a second-order cone program.

pub mod cone;
pub mod ipm;
pub mod program;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

pub use ipm::{solve_cone_program, ConeProgram, ConicSolution, ConicStatus, Residuals, SolverOptions};
pub use program::{build_cone_program, PowerMinProgram};

use crate::channel::{ChannelSet, Labeler};
use crate::error::{Error, Result};
use crate::linalg::{cdot_h, cnorm, CMatrix};
use crate::precoding::{power_allocation, DirectionMatrix, SinrSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl From<ConicStatus> for SolverStatus {
    fn from(s: ConicStatus) -> Self {
        match s {
            ConicStatus::Optimal => SolverStatus::Optimal,
            ConicStatus::PrimalInfeasible => SolverStatus::Infeasible,
            ConicStatus::DualInfeasible | ConicStatus::MaxIterations | ConicStatus::NumericalFailure => {
                SolverStatus::NumericalFailure
            }
        }
    }
}

/// Beamformers `w_k = sqrt(p_k) u_k`, stored both ways.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSolution<T> {
    pub w: CMatrix<T>,
    pub u: CMatrix<T>,
    pub p: Vec<T>,
    pub total_power: T,
    pub status: SolverStatus,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl<T: Scalar> BeamSolution<T> {
    /// Splits `w` into directions and powers. A zero column gets a zero direction.
    pub fn from_beams(w: CMatrix<T>, status: SolverStatus, iterations: usize, residuals: Residuals) -> Self {
        let k = w.cols();
        let mut u = CMatrix::zeros(w.rows(), k);
        let mut p = Vec::with_capacity(k);
        for j in 0..k {
            let norm = w.col_norm(j);
            p.push(norm * norm);
            if norm > T::zero() {
                for (dst, src) in u.col_mut(j).iter_mut().zip(w.col(j)) {
                    *dst = src / norm;
                }
            }
        }
        let total_power = p.iter().copied().sum();
        Self {
            w,
            u,
            p,
            total_power,
            status,
            iterations,
            residuals,
        }
    }
}

/// Solves the power-minimization problem for ordered users. Returns the
/// interior-point beams with their powers recomputed so every SINR floor
/// holds with equality; use [`phase_normalize`] to canonicalize them.
pub fn solve_power_min<T: Scalar>(
    c: &ChannelSet<T>,
    gamma: &SinrSpec<T>,
    opts: &SolverOptions,
) -> Result<BeamSolution<T>> {
    let prog = build_cone_program(c, gamma)?;
    let sol = solve_cone_program(&prog.program, opts)?;
    let status = SolverStatus::from(sol.status);
    let w = if sol.status == ConicStatus::PrimalInfeasible {
        CMatrix::zeros(c.n(), c.k())
    } else {
        prog.beams(&sol.x)
    };
    let raw = BeamSolution::from_beams(w, status, sol.iterations, sol.residuals);
    if status != SolverStatus::Optimal {
        return Ok(raw);
    }
    Ok(polish(c, gamma, raw))
}

/// At the optimum every SINR constraint is active, so the exact powers for
/// the interior-point directions follow from the triangular power system.
/// Their error is second order in the direction error, against first order
/// for the iterate's own norms.
fn polish<T: Scalar>(c: &ChannelSet<T>, gamma: &SinrSpec<T>, raw: BeamSolution<T>) -> BeamSolution<T> {
    let Ok(u) = DirectionMatrix::new(raw.u.clone()) else {
        return raw;
    };
    let report = match power_allocation(c, &u, gamma) {
        Ok(r) if r.feasible => r,
        _ => return raw,
    };
    let mut w = raw.u.clone();
    for (j, &p) in report.p.iter().enumerate() {
        let root = p.sqrt();
        for z in w.col_mut(j) {
            *z = *z * root;
        }
    }
    BeamSolution {
        w,
        u: raw.u,
        total_power: report.total,
        p: report.p,
        ..raw
    }
}

/// Rotates each beam so that `h_k^H w_k` is real and non-negative. SINRs and
/// powers are unchanged. Returns the users whose `h_k^H w_k` is exactly
/// zero; those columns are left as they were.
pub fn phase_normalize<T: Scalar>(sol: &BeamSolution<T>, c: &ChannelSet<T>) -> (BeamSolution<T>, Vec<usize>) {
    let mut out = sol.clone();
    let mut flagged = Vec::new();
    for k in 0..c.k() {
        let g = cdot_h(c.user(k), sol.w.col(k));
        let mag = g.norm();
        if mag == T::zero() {
            flagged.push(k);
            continue;
        }
        let rot = g.conj() / mag;
        for z in out.w.col_mut(k) {
            *z = *z * rot;
        }
        for z in out.u.col_mut(k) {
            *z = *z * rot;
        }
    }
    (out, flagged)
}

/// Closed-form optimum for a single user: matched filter at the minimum power.
pub fn closed_form_k1<T: Scalar>(h: &[Complex<T>], gamma: T, sigma2: T) -> Result<BeamSolution<T>> {
    let norm = cnorm(h);
    if norm == T::zero() {
        return Err(Error::ZeroChannel(0));
    }
    let p = gamma * sigma2 / (norm * norm);
    let root = p.sqrt();
    let w: Vec<Complex<T>> = h.iter().map(|z| z * (root / norm)).collect();
    let w = CMatrix::from_columns(h.len(), &[w]);
    let mut sol = BeamSolution::from_beams(w, SolverStatus::Optimal, 0, Residuals::default());
    sol.p = vec![p];
    sol.total_power = p;
    Ok(sol)
}

/// Dataset labeler: solves the SOCP and phase-normalizes the optimum.
#[derive(Debug, Clone, Copy, Default)]
pub struct SocpLabeler {
    pub opts: SolverOptions,
}

impl Labeler for SocpLabeler {
    fn label(&self, channel: &ChannelSet<f64>, gamma: &SinrSpec<f64>) -> BeamSolution<f64> {
        match solve_power_min(channel, gamma, &self.opts) {
            Ok(sol) if sol.status == SolverStatus::Optimal => phase_normalize(&sol, channel).0,
            Ok(sol) => sol,
            Err(_) => BeamSolution::from_beams(
                CMatrix::zeros(channel.n(), channel.k()),
                SolverStatus::NumericalFailure,
                0,
                Residuals::default(),
            ),
        }
    }
}
