//! Primal-dual interior-point method for dense second-order cone programs.
//!
//! Solves
//!
//! ```txt
//!     min  c^T x
//!     s.t. A x = b
//!          G x + s = h,   s in K = SOC(m_1) x ... x SOC(m_r)
//! ```
//!
//! through the homogeneous self-dual embedding, so infeasibility comes out
//! as a certificate rather than a stall. Each iteration uses
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector step; both
//! directions share one factorization of the KKT matrix.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::cone::{circ, circ_div, margin, max_step, NtScaling};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, DenseMatrix, Lu};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iter: 100,
            verbose: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_gap > 0.0) || !(self.tol_feas > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dense conic program in the standard form above.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram<T> {
    pub c: Vec<T>,
    pub a: DenseMatrix<T>,
    pub b: Vec<T>,
    pub g: DenseMatrix<T>,
    pub h: Vec<T>,
    /// Dimensions of the second-order cones, in row order of `g`.
    pub cones: Vec<usize>,
}

impl<T: Scalar> ConeProgram<T> {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Row range of `g`/`h` belonging to cone `i`.
    pub fn cone_rows(&self, i: usize) -> Range<usize> {
        let start: usize = self.cones[..i].iter().sum();
        start..start + self.cones[i]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        let m: usize = self.cones.iter().sum();
        let shape_ok = self.a.cols() == n
            && self.a.rows() == self.b.len()
            && self.g.cols() == n
            && self.g.rows() == m
            && self.h.len() == m
            && self.cones.iter().all(|&d| d >= 1);
        if !shape_ok {
            return Err(Error::ShapeMismatch("inconsistent cone program dimensions".into()));
        }
        let finite = self.c.iter().chain(&self.b).chain(&self.h).all(|v| v.is_finite())
            && self.a.is_finite()
            && self.g.is_finite();
        if !finite {
            return Err(Error::InvalidParameter("non-finite cone program coefficient".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConicStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
    pub s: Vec<T>,
    pub status: ConicStatus,
    pub iterations: usize,
    pub residuals: Residuals,
    pub primal_cost: T,
    pub dual_cost: T,
}

const STEP_FRACTION: f64 = 0.99;
const STATIC_REG: f64 = 1e-11;
const REFINE_STEPS: usize = 3;

struct Iterate<T> {
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
    tau: T,
    kappa: T,
}

struct Direction<T> {
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
    tau: T,
    kappa: T,
}

/// Factorized KKT system `[0 A' G'; A 0 0; G 0 -W^2]`.
struct Kkt<T> {
    n: usize,
    p: usize,
    full: DenseMatrix<T>,
    lu: Lu<T>,
}

impl<T: Scalar> Kkt<T> {
    fn assemble(prog: &ConeProgram<T>, w2: &[(Range<usize>, DenseMatrix<T>)]) -> Result<Self> {
        let n = prog.num_vars();
        let p = prog.b.len();
        let m = prog.h.len();
        let dim = n + p + m;
        let mut k = DenseMatrix::zeros(dim, dim);
        for i in 0..p {
            for j in 0..n {
                let v = prog.a[(i, j)];
                k[(n + i, j)] = v;
                k[(j, n + i)] = v;
            }
        }
        for i in 0..m {
            for j in 0..n {
                let v = prog.g[(i, j)];
                k[(n + p + i, j)] = v;
                k[(j, n + p + i)] = v;
            }
        }
        for (rows, block) in w2 {
            for (bi, i) in rows.clone().enumerate() {
                for (bj, j) in rows.clone().enumerate() {
                    k[(n + p + i, n + p + j)] = -block[(bi, bj)];
                }
            }
        }
        let mut reg = k.clone();
        let delta = T::lit(STATIC_REG);
        for i in 0..dim {
            reg[(i, i)] += if i < n { delta } else { -delta };
        }
        let lu = Lu::factor(&reg)?;
        Ok(Self { n, p, full: k, lu })
    }

    /// Solves with iterative refinement against the unregularized matrix.
    fn solve(&self, rhs: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut sol = self.lu.solve(rhs);
        for _ in 0..REFINE_STEPS {
            let ksol = self.full.mul_vec(&sol);
            let r: Vec<T> = rhs.iter().zip(&ksol).map(|(&a, &b)| a - b).collect();
            let corr = self.lu.solve(&r);
            for (v, c) in sol.iter_mut().zip(corr) {
                *v += c;
            }
        }
        let z = sol.split_off(self.n + self.p);
        let y = sol.split_off(self.n);
        (sol, y, z)
    }
}

fn shift_into_cones<T: Scalar>(prog: &ConeProgram<T>, v: &mut [T]) {
    for i in 0..prog.cones.len() {
        let r = prog.cone_rows(i);
        let blk = &mut v[r];
        let alpha = -margin(blk);
        if alpha >= T::zero() {
            blk[0] += T::one() + alpha;
        }
    }
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a * alpha + b).collect()
}

/// Solves `prog`. Never panics on bad numerics; failures show up in `status`.
pub fn solve_cone_program<T: Scalar>(prog: &ConeProgram<T>, opts: &SolverOptions) -> Result<ConicSolution<T>> {
    prog.validate()?;
    opts.validate()?;
    let n = prog.num_vars();
    let p = prog.b.len();
    let m = prog.h.len();
    let ncones = prog.cones.len();
    let degree = T::lit((ncones + 1) as f64);
    let tol_feas = T::lit(opts.tol_feas);
    let tol_gap = T::lit(opts.tol_gap);
    let one = T::one();
    let zero = T::zero();

    let cone_ranges: Vec<Range<usize>> = (0..ncones).map(|i| prog.cone_rows(i)).collect();
    let bh_norm = norm2(&[prog.b.clone(), prog.h.clone()].concat());
    let c_norm = norm2(&prog.c);

    // Starting point from two least-squares problems with W = I.
    let identity: Vec<(Range<usize>, DenseMatrix<T>)> = cone_ranges
        .iter()
        .map(|r| (r.clone(), DenseMatrix::identity(r.len())))
        .collect();
    let kkt0 = match Kkt::assemble(prog, &identity) {
        Ok(k) => k,
        Err(_) => return Ok(failure(n, p, m, 0)),
    };
    let (x0, _, zp) = kkt0.solve(&[vec![zero; n], prog.b.clone(), prog.h.clone()].concat());
    let mut s0: Vec<T> = zp.iter().map(|&v| -v).collect();
    shift_into_cones(prog, &mut s0);
    let (_, y0, mut z0) =
        kkt0.solve(&[prog.c.iter().map(|&v| -v).collect(), vec![zero; p], vec![zero; m]].concat());
    shift_into_cones(prog, &mut z0);

    let mut it = Iterate {
        x: x0,
        y: y0,
        z: z0,
        s: s0,
        tau: one,
        kappa: one,
    };

    let mut status = ConicStatus::MaxIterations;
    let mut residuals = Residuals::default();
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        // Residuals of the embedding.
        let aty = prog.a.mul_t_vec(&it.y);
        let gtz = prog.g.mul_t_vec(&it.z);
        let rx: Vec<T> = (0..n).map(|j| aty[j] + gtz[j] + prog.c[j] * it.tau).collect();
        let ax = prog.a.mul_vec(&it.x);
        let ry: Vec<T> = (0..p).map(|i| ax[i] - prog.b[i] * it.tau).collect();
        let gx = prog.g.mul_vec(&it.x);
        let rz: Vec<T> = (0..m).map(|i| gx[i] + it.s[i] - prog.h[i] * it.tau).collect();
        let cx = dot(&prog.c, &it.x);
        let by = dot(&prog.b, &it.y);
        let hz = dot(&prog.h, &it.z);
        let rtau = it.kappa + cx + by + hz;
        let sz = dot(&it.s, &it.z);
        let mu = (sz + it.tau * it.kappa) / degree;

        let pcost = cx / it.tau;
        let dcost = -(by + hz) / it.tau;
        let pres = norm2(&[ry.clone(), rz.clone()].concat()) / it.tau / (one + bh_norm);
        let dres = norm2(&rx) / it.tau / (one + c_norm);
        let gap = sz / (it.tau * it.tau);
        let relgap = if pcost < zero {
            gap / -pcost
        } else if dcost > zero {
            gap / dcost
        } else {
            T::infinity()
        };
        residuals = Residuals {
            primal: pres.as_f64(),
            dual: dres.as_f64(),
            gap: gap.as_f64(),
        };
        if opts.verbose {
            log::info!(
                "iter {iter:3}  pcost {:+.9e}  dcost {:+.9e}  gap {:.2e}  pres {:.2e}  dres {:.2e}  tau {:.2e}  kappa {:.2e}",
                pcost.as_f64(),
                dcost.as_f64(),
                gap.as_f64(),
                pres.as_f64(),
                dres.as_f64(),
                it.tau.as_f64(),
                it.kappa.as_f64()
            );
        }
        if !(mu.is_finite() && pres.is_finite() && dres.is_finite()) {
            status = ConicStatus::NumericalFailure;
            break;
        }
        if pres <= tol_feas && dres <= tol_feas && (gap <= tol_gap || relgap <= tol_gap) {
            status = ConicStatus::Optimal;
            break;
        }
        // Infeasibility certificates.
        let bh = by + hz;
        if bh < zero {
            let ray = norm2(&axpy(one, &aty, &gtz)) / -bh;
            if ray <= tol_feas {
                status = ConicStatus::PrimalInfeasible;
                break;
            }
        }
        if cx < zero {
            let px = norm2(&ax) / -cx;
            let gs = norm2(&axpy(one, &gx, &it.s)) / -cx;
            if px <= tol_feas && gs <= tol_feas {
                status = ConicStatus::DualInfeasible;
                break;
            }
        }
        if iter == opts.max_iter {
            break;
        }

        // Scaling and the shared factorization.
        let scalings: Vec<NtScaling<T>> = cone_ranges
            .iter()
            .map(|r| NtScaling::new(&it.s[r.clone()], &it.z[r.clone()]))
            .collect();
        let lambda: Vec<Vec<T>> = scalings
            .iter()
            .zip(&cone_ranges)
            .map(|(w, r)| w.apply(&it.z[r.clone()]))
            .collect();
        let w2: Vec<(Range<usize>, DenseMatrix<T>)> = scalings
            .iter()
            .zip(&cone_ranges)
            .map(|(w, r)| (r.clone(), w.squared()))
            .collect();
        let kkt = match Kkt::assemble(prog, &w2) {
            Ok(k) => k,
            Err(_) => {
                status = ConicStatus::NumericalFailure;
                break;
            }
        };
        let neg_c: Vec<T> = prog.c.iter().map(|&v| -v).collect();
        let (x1, y1, z1) = kkt.solve(&[neg_c, prog.b.clone(), prog.h.clone()].concat());
        let denom = -it.kappa / it.tau + dot(&prog.c, &x1) + dot(&prog.b, &y1) + dot(&prog.h, &z1);

        // Direction for complementarity targets `ds` (per cone, lambda-space) and `dk`.
        let direction = |keep: T, ds: &[Vec<T>], dk: T| -> Direction<T> {
            let mut rhs_z: Vec<T> = rz.iter().map(|&v| -keep * v).collect();
            let mut scaled = Vec::with_capacity(ncones);
            for ((w, r), (l, d)) in scalings.iter().zip(&cone_ranges).zip(lambda.iter().zip(ds)) {
                let q = circ_div(l, d);
                let wq = w.apply(&q);
                for (dst, v) in rhs_z[r.clone()].iter_mut().zip(&wq) {
                    *dst -= *v;
                }
                scaled.push(q);
            }
            let rhs = [
                rx.iter().map(|&v| -keep * v).collect::<Vec<T>>(),
                ry.iter().map(|&v| -keep * v).collect(),
                rhs_z,
            ]
            .concat();
            let (x2, y2, z2) = kkt.solve(&rhs);
            let num = -keep * rtau - dk / it.tau
                - (dot(&prog.c, &x2) + dot(&prog.b, &y2) + dot(&prog.h, &z2));
            let dtau = num / denom;
            let dx = axpy(dtau, &x1, &x2);
            let dy = axpy(dtau, &y1, &y2);
            let dz = axpy(dtau, &z1, &z2);
            let mut ds_full = vec![T::zero(); m];
            for ((w, r), q) in scalings.iter().zip(&cone_ranges).zip(&scaled) {
                let wdz = w.apply(&dz[r.clone()]);
                let inner: Vec<T> = q.iter().zip(&wdz).map(|(&a, &b)| a - b).collect();
                ds_full[r.clone()].copy_from_slice(&w.apply(&inner));
            }
            let dkappa = (dk - it.kappa * dtau) / it.tau;
            Direction {
                x: dx,
                y: dy,
                z: dz,
                s: ds_full,
                tau: dtau,
                kappa: dkappa,
            }
        };

        let step_to_boundary = |d: &Direction<T>| -> T {
            let mut a = T::infinity();
            for r in &cone_ranges {
                a = a.min(max_step(&it.s[r.clone()], &d.s[r.clone()]));
                a = a.min(max_step(&it.z[r.clone()], &d.z[r.clone()]));
            }
            if d.tau < zero {
                a = a.min(-it.tau / d.tau);
            }
            if d.kappa < zero {
                a = a.min(-it.kappa / d.kappa);
            }
            a
        };

        // Predictor (affine scaling).
        let ds_aff: Vec<Vec<T>> = lambda.iter().map(|l| circ(l, l).into_iter().map(|v| -v).collect()).collect();
        let aff = direction(one, &ds_aff, -it.tau * it.kappa);
        let alpha_aff = step_to_boundary(&aff).min(one);
        let sigma = (one - alpha_aff).powi(3).max(zero).min(one);

        // Corrector with second-order term.
        let ds_cor: Vec<Vec<T>> = scalings
            .iter()
            .zip(&cone_ranges)
            .zip(&lambda)
            .map(|((w, r), l)| {
                let a = w.apply_inv(&aff.s[r.clone()]);
                let b = w.apply(&aff.z[r.clone()]);
                let ll = circ(l, l);
                let ab = circ(&a, &b);
                let mut out: Vec<T> = ll.iter().zip(&ab).map(|(&u, &v)| -u - v).collect();
                out[0] += sigma * mu;
                out
            })
            .collect();
        let dk_cor = -it.tau * it.kappa - aff.tau * aff.kappa + sigma * mu;
        let d = direction(one - sigma, &ds_cor, dk_cor);
        let alpha = (T::lit(STEP_FRACTION) * step_to_boundary(&d)).min(one);
        if !(alpha > T::lit(1e-14)) || !alpha.is_finite() {
            status = ConicStatus::NumericalFailure;
            break;
        }

        it.x = axpy(alpha, &d.x, &it.x);
        it.y = axpy(alpha, &d.y, &it.y);
        it.z = axpy(alpha, &d.z, &it.z);
        it.s = axpy(alpha, &d.s, &it.s);
        it.tau += alpha * d.tau;
        it.kappa += alpha * d.kappa;
    }

    // Certificates are reported unnormalized by tau, everything else divided through.
    let scale = match status {
        ConicStatus::PrimalInfeasible | ConicStatus::DualInfeasible => one,
        _ => one / it.tau,
    };
    let unscale = |v: &[T]| v.iter().map(|&e| e * scale).collect::<Vec<T>>();
    let x = unscale(&it.x);
    let y = unscale(&it.y);
    let z = unscale(&it.z);
    let s = unscale(&it.s);
    let primal_cost = dot(&prog.c, &x);
    let dual_cost = -(dot(&prog.b, &y) + dot(&prog.h, &z));
    Ok(ConicSolution {
        x,
        y,
        z,
        s,
        status,
        iterations,
        residuals,
        primal_cost,
        dual_cost,
    })
}

fn failure<T: Scalar>(n: usize, p: usize, m: usize, iterations: usize) -> ConicSolution<T> {
    ConicSolution {
        x: vec![T::zero(); n],
        y: vec![T::zero(); p],
        z: vec![T::zero(); m],
        s: vec![T::zero(); m],
        status: ConicStatus::NumericalFailure,
        iterations,
        residuals: Residuals::default(),
        primal_cost: T::zero(),
        dual_cost: T::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_eq(n: usize) -> (DenseMatrix<f64>, Vec<f64>) {
        (DenseMatrix::zeros(0, n), vec![])
    }

    #[test]
    fn projects_point_onto_halfspace() {
        // min t s.t. ||x - (2, 0)|| <= t, x1 + x2 = 0 ... written with x = (t, x1, x2).
        // Optimum: distance from (2,0) to the line x1 + x2 = 0 is sqrt(2).
        let c = vec![1.0, 0.0, 0.0];
        let a = DenseMatrix::from_row_major(1, 3, vec![0.0, 1.0, 1.0]);
        let b = vec![0.0];
        // s = h - G x = (t, x1 - 2, x2)
        let g = DenseMatrix::from_row_major(3, 3, vec![-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0]);
        let h = vec![0.0, -2.0, 0.0];
        let prog = ConeProgram { c, a, b, g, h, cones: vec![3] };
        let sol = solve_cone_program(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!((sol.x[0] - 2f64.sqrt()).abs() < 1e-7, "{:?}", sol.x);
        assert!((sol.x[1] - 1.0).abs() < 1e-6);
        assert!((sol.x[2] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_cones_act_as_nonnegativity() {
        // min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 (two 1-dim cones). Optimum x = (1, 0).
        let c = vec![1.0f64, 2.0];
        let a = DenseMatrix::from_row_major(1, 2, vec![1.0, 1.0]);
        let g = DenseMatrix::from_row_major(2, 2, vec![-1.0, 0.0, 0.0, -1.0]);
        let prog = ConeProgram { c, a, b: vec![1.0], g, h: vec![0.0, 0.0], cones: vec![1, 1] };
        let sol = solve_cone_program(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!((sol.primal_cost - 1.0).abs() < 1e-7);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // (x0, x1) in SOC with x0 = -1: impossible.
        let c = vec![0.0, 1.0];
        let a = DenseMatrix::from_row_major(1, 2, vec![1.0, 0.0]);
        let g = DenseMatrix::from_row_major(2, 2, vec![-1.0, 0.0, 0.0, -1.0]);
        let prog = ConeProgram { c, a, b: vec![-1.0], g, h: vec![0.0, 0.0], cones: vec![2] };
        let sol = solve_cone_program(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, ConicStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // min -x0 over the cone: unbounded.
        let (a, b) = no_eq(2);
        let g = DenseMatrix::from_row_major(2, 2, vec![-1.0, 0.0, 0.0, -1.0]);
        let prog = ConeProgram { c: vec![-1.0, 0.0], a, b, g, h: vec![0.0, 0.0], cones: vec![2] };
        let sol = solve_cone_program(&prog, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, ConicStatus::DualInfeasible);
    }

    #[test]
    fn rejects_bad_programs_and_options() {
        let (a, b) = no_eq(2);
        let g = DenseMatrix::from_row_major(2, 2, vec![f64::NAN, 0.0, 0.0, -1.0]);
        let prog = ConeProgram { c: vec![1.0, 0.0], a, b, g, h: vec![0.0, 0.0], cones: vec![2] };
        assert!(solve_cone_program(&prog, &SolverOptions::default()).is_err());
        let opts = SolverOptions { max_iter: 0, ..Default::default() };
        assert!(opts.validate().is_err());
    }
}
