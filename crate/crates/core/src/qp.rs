//! Dense strictly convex quadratic programming with inequality constraints:
//!
//! ```text
//! minimize   1/2 x' H x + g' x
//! subject to A x >= lb
//! ```
//!
//! Solved with a dual active-set method in the Goldfarb-Idnani style: start
//! at the unconstrained minimizer, repeatedly pick the most violated
//! constraint, and take primal/dual steps that keep the active multipliers
//! non-negative, dropping blocking constraints along the way. No feasible
//! starting point is needed and the dual objective increases monotonically,
//! which gives finite termination on non-degenerate problems; an iteration
//! cap of `10 (n + m)` backstops cycling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Primal solution, one multiplier per constraint row, and the iteration
/// count actually used.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

/// Tolerance for treating a constraint as violated or a projected direction
/// as zero. Scaled checks below keep this meaningful across problem sizes.
const FEAS_TOL: f64 = 1e-11;

struct ActiveSet<'a> {
    a_mat: &'a DMatrix<f64>,
    chol: &'a Cholesky<f64, Dyn>,
    /// Constraint indices currently active.
    rows: Vec<usize>,
    /// `H^-1 a_k` per active row, kept in step with `rows`.
    hinv_rows: Vec<DVector<f64>>,
}

impl<'a> ActiveSet<'a> {
    /// Solves `S r = A_W hinv_a` with `S = A_W H^-1 A_W'`. One round of
    /// iterative refinement keeps the coefficients usable when the active
    /// rows are nearly dependent.
    fn dual_direction(&self, hinv_a: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.rows.len();
        if k == 0 {
            return Ok(DVector::zeros(0));
        }
        let mut s = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (i, &ri) in self.rows.iter().enumerate() {
            for (j, _) in self.rows.iter().enumerate() {
                s[(i, j)] = self.a_mat.row(ri).dot(&self.hinv_rows[j].transpose());
            }
            rhs[i] = self.a_mat.row(ri).dot(&hinv_a.transpose());
        }
        let chol = Cholesky::new(s.clone()).ok_or_else(|| {
            Error::SolverFailure("active constraint set became singular".into())
        })?;
        let mut r = chol.solve(&rhs);
        let residual = &rhs - &s * &r;
        r += chol.solve(&residual);
        Ok(r)
    }

    fn push(&mut self, row: usize) {
        let a_row = self.a_mat.row(row).transpose();
        self.hinv_rows.push(self.chol.solve(&a_row));
        self.rows.push(row);
    }

    fn remove(&mut self, pos: usize) {
        self.rows.remove(pos);
        self.hinv_rows.remove(pos);
    }
}

/// Solves the QP above. `a_mat` may be empty (zero rows). Errors on a
/// non-positive-definite Hessian, mismatched dimensions, an infeasible
/// constraint system, or on exceeding the iteration cap.
pub fn solve_qp(
    h_mat: &DMatrix<f64>,
    g: &DVector<f64>,
    a_mat: &DMatrix<f64>,
    lb: &DVector<f64>,
) -> Result<QpSolution> {
    let n = h_mat.nrows();
    let m = a_mat.nrows();
    if h_mat.ncols() != n || g.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "hessian {}x{} with gradient of {}",
            h_mat.nrows(),
            h_mat.ncols(),
            g.len()
        )));
    }
    if (m > 0 && a_mat.ncols() != n) || lb.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "constraints {}x{} with bounds of {} against {n} variables",
            a_mat.nrows(),
            a_mat.ncols(),
            lb.len()
        )));
    }
    let chol = Cholesky::new(h_mat.clone()).ok_or_else(|| {
        Error::InvalidArgument("hessian is not positive definite".into())
    })?;

    let mut x = chol.solve(&(-g));
    let mut multipliers = DVector::zeros(m);
    let mut active = ActiveSet { a_mat, chol: &chol, rows: Vec::new(), hinv_rows: Vec::new() };
    // rows whose residual violation proved to be roundoff against a
    // linearly dependent active set; they stay inactive at multiplier zero
    let mut suppressed = vec![false; m];
    let cap = 10 * (n + m).max(1);
    let mut iterations = 0;

    loop {
        // most violated constraint at the current point
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if suppressed[i] || active.rows.contains(&i) {
                continue;
            }
            let slack = a_mat.row(i).dot(&x.transpose()) - lb[i];
            let tol = FEAS_TOL * (1.0 + lb[i].abs());
            if slack < -tol && worst.map_or(true, |(_, s)| slack < s) {
                worst = Some((i, slack));
            }
        }
        let Some((p, _)) = worst else {
            return Ok(QpSolution { x, multipliers, iterations });
        };

        let a_p = a_mat.row(p).transpose();
        let hinv_p = chol.solve(&a_p);
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > cap {
                return Err(Error::SolverFailure(format!(
                    "iteration cap {cap} exceeded on {n} variables, {m} constraints"
                )));
            }
            let r = active.dual_direction(&hinv_p)?;
            // primal direction: H^-1 a_p projected off the active rows
            let mut z = hinv_p.clone();
            for (j, hr) in active.hinv_rows.iter().enumerate() {
                z.axpy(-r[j], hr, 1.0);
            }
            let slack = a_mat.row(p).dot(&x.transpose()) - lb[p];
            let z_ap = a_mat.row(p).dot(&z.transpose());
            let full_step = if z_ap > FEAS_TOL * (1.0 + z.norm()) {
                Some(-slack / z_ap)
            } else {
                None
            };
            // dual ratio test over active rows with r_k > 0
            let mut blocking: Option<(usize, f64)> = None;
            for (j, &row) in active.rows.iter().enumerate() {
                if r[j] > FEAS_TOL {
                    let t = multipliers[row] / r[j];
                    if blocking.map_or(true, |(_, tb)| t < tb) {
                        blocking = Some((j, t));
                    }
                }
            }
            let t = match (full_step, blocking) {
                (None, None) => {
                    // the row lies in the span of the active set with no
                    // positive expansion coefficient; if its violation is
                    // roundoff sized the infeasibility is phantom
                    if slack >= -1e-7 * (1.0 + lb[p].abs()) {
                        suppressed[p] = true;
                        break;
                    }
                    return Err(Error::SolverFailure(
                        "constraints are infeasible: no primal or dual step exists".into(),
                    ))
                }
                (Some(t2), None) => t2,
                (None, Some((_, t1))) => t1,
                (Some(t2), Some((_, t1))) => t2.min(t1),
            };
            for (j, &row) in active.rows.iter().enumerate() {
                multipliers[row] -= t * r[j];
            }
            u_p += t;
            if full_step.is_some() {
                x.axpy(t, &z, 1.0);
            }
            match (full_step, blocking) {
                (Some(t2), _) if t >= t2 => {
                    multipliers[p] = u_p;
                    active.push(p);
                    break;
                }
                (_, Some((j, _))) => {
                    multipliers[active.rows[j]] = 0.0;
                    active.remove(j);
                }
                _ => unreachable!("step selection covers these cases"),
            }
        }
    }
}
