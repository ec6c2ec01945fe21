//! MINRES and preconditioned conjugate gradients.

use std::io::Write;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, LinearOperator};

/// Symmetric positive definite approximation of an inverse.
pub trait Preconditioner {
    /// `z = P^{-1} r`.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Identity preconditioner.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling by `1 / diag(A)`.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(i) = diag.iter().position(|&d| d == 0.0 || !d.is_finite()) {
            return Err(Error::InvalidMatrix(format!("zero diagonal entry at row {i}")));
        }
        Ok(Self {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
        })
    }

    /// Same as [`Jacobi::from_diagonal`] except that rows flagged as
    /// constrained are mapped to zero and may have a zero diagonal.
    pub fn from_diagonal_masked(diag: &[f64], free: &[bool]) -> Result<Self> {
        let mut inv = vec![0.0; diag.len()];
        for (i, (&d, &f)) in diag.iter().zip(free).enumerate() {
            if f {
                if d == 0.0 || !d.is_finite() {
                    return Err(Error::InvalidMatrix(format!("zero diagonal entry at row {i}")));
                }
                inv[i] = 1.0 / d;
            }
        }
        Ok(Self { inv_diag: inv })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

/// Jacobi preconditioner built from the diagonal of `a`.
pub fn jacobi_preconditioner(a: &CsrMatrix) -> Result<Jacobi> {
    Jacobi::from_diagonal(&a.diagonal())
}

/// Iterative solver tolerances and iteration caps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Absolute bound on `||b - A x||_2` for MINRES.
    pub minres_tol: f64,
    /// Relative bound on `||b - A x||_2 / ||b||_2` for PCG.
    pub pcg_tol: f64,
    /// Relative bound on the Newton residual `||f|| / ||f_0||`.
    pub newton_tol: f64,
    pub minres_max_iter: usize,
    pub pcg_max_iter: usize,
    pub newton_max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            minres_tol: 1e-5,
            pcg_tol: 1e-5,
            newton_tol: 1e-6,
            minres_max_iter: 5000,
            pcg_max_iter: 5000,
            newton_max_iter: 25,
            max_backtracks: 8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("minres_tol", self.minres_tol),
            ("pcg_tol", self.pcg_tol),
            ("newton_tol", self.newton_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "tolerance must be positive"));
            }
        }
        for (name, v) in [
            ("minres_max_iter", self.minres_max_iter),
            ("pcg_max_iter", self.pcg_max_iter),
            ("newton_max_iter", self.newton_max_iter),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "iteration cap must be positive"));
            }
        }
        Ok(())
    }
}

/// Result of a Krylov solve.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final true residual `||b - A x||_2`.
    pub residual: f64,
    /// Final residual relative to `||b||_2` (zero for a zero right-hand side).
    pub relative_residual: f64,
    /// Per-iteration residual estimates; index 0 is the initial residual.
    pub history: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual<A: LinearOperator + ?Sized>(a: &A, b: &[f64], x: &[f64], work: &mut [f64]) -> f64 {
    a.apply(x, work);
    b.iter()
        .zip(work.iter())
        .map(|(b, ax)| (b - ax) * (b - ax))
        .sum::<f64>()
        .sqrt()
}

/// How often MINRES confirms its residual estimate with a true residual.
const MINRES_CHECK_INTERVAL: usize = 5;

/// Preconditioned MINRES for symmetric, possibly indefinite or singular but
/// consistent, systems `A x = b`.
///
/// The history holds the preconditioned residual estimate, which is
/// non-increasing. Termination uses the true residual 2-norm against
/// `tol`, checked every few iterations and whenever the estimate drops
/// below `tol`.
pub fn minres<A, P>(a: &A, b: &[f64], precond: &P, tol: f64, max_iter: usize) -> Result<SolveOutput>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let n = a.dim();
    if b.len() != n {
        return Err(Error::invalid("right-hand side length mismatch"));
    }
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(SolveOutput {
            x,
            iterations: 0,
            residual: 0.0,
            relative_residual: 0.0,
            history: vec![0.0],
        });
    }

    let mut r1 = b.to_vec();
    let mut y = vec![0.0; n];
    precond.apply(&r1, &mut y);
    let beta1 = dot(&r1, &y);
    if beta1 < 0.0 || !beta1.is_finite() {
        return Err(Error::InvalidMatrix("preconditioner is not positive definite".into()));
    }
    let beta1 = beta1.sqrt();
    if beta1 == 0.0 {
        return Err(Error::InvalidMatrix("preconditioner annihilates the right-hand side".into()));
    }

    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut work = vec![0.0; n];

    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0_f64, 0.0_f64);
    let mut history = vec![phibar];
    let mut residual = bnorm;

    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for (v, y) in v.iter_mut().zip(&y) {
            *v = s * y;
        }
        a.apply(&v, &mut y);
        if itn >= 2 {
            let c = beta / oldb;
            for (y, r1) in y.iter_mut().zip(&r1) {
                *y -= c * r1;
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for (y, r2) in y.iter_mut().zip(&r2) {
            *y -= c * r2;
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond.apply(&r2, &mut y);
        oldb = beta;
        let beta2 = dot(&r2, &y);
        if beta2 < 0.0 || !beta2.is_finite() {
            return Err(Error::InvalidMatrix("preconditioner is not positive definite".into()));
        }
        beta = beta2.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for k in 0..n {
            w[k] = (v[k] - oldeps * w1[k] - delta * w2[k]) * denom;
            x[k] += phi * w[k];
        }
        history.push(phibar);

        let exhausted = beta <= f64::EPSILON * beta1;
        if exhausted || itn % MINRES_CHECK_INTERVAL == 0 || phibar <= tol || itn == max_iter {
            residual = true_residual(a, b, &x, &mut work);
            if residual <= tol {
                return Ok(SolveOutput {
                    x,
                    iterations: itn,
                    residual,
                    relative_residual: residual / bnorm,
                    history,
                });
            }
            if exhausted {
                return Err(Error::NonConvergence {
                    solver: "minres",
                    iterations: itn,
                    residual,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        solver: "minres",
        iterations: max_iter,
        residual,
    })
}

/// Preconditioned conjugate gradients for symmetric positive definite
/// systems, stopping at `||b - A x|| <= tol ||b||`.
pub fn pcg<A, P>(a: &A, b: &[f64], precond: &P, tol: f64, max_iter: usize) -> Result<SolveOutput>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let n = a.dim();
    if b.len() != n {
        return Err(Error::invalid("right-hand side length mismatch"));
    }
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(SolveOutput {
            x,
            iterations: 0,
            residual: 0.0,
            relative_residual: 0.0,
            history: vec![0.0],
        });
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    let mut rnorm = bnorm;

    for itn in 1..=max_iter {
        a.apply(&p, &mut q);
        let curvature = dot(&p, &q);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::Indefinite {
                iteration: itn,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        rnorm = norm(&r);
        history.push(rnorm / bnorm);
        if rnorm <= tol * bnorm {
            return Ok(SolveOutput {
                x,
                iterations: itn,
                residual: rnorm,
                relative_residual: rnorm / bnorm,
                history,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NonConvergence {
        solver: "pcg",
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

/// Writes `iteration,residual` rows.
pub fn write_history_csv<W: Write>(mut out: W, history: &[f64]) -> std::io::Result<()> {
    writeln!(out, "iteration,residual")?;
    for (i, r) in history.iter().enumerate() {
        writeln!(out, "{i},{r:.17e}")?;
    }
    Ok(())
}
