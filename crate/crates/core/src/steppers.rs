//! One-step velocity solvers over a linearized system and stacked contacts.
//!
//! All of them advance the same discrete model
//!
//! ```text
//! v+ = argmin 1/2 h^2 v'Qv - h v'b   subject to   h J v + phi >= 0
//! ```
//!
//! but differ in how the constraint is enforced:
//!
//! - [`qp_step`] solves the inequality-constrained program exactly and
//!   recovers impulses from the multipliers,
//! - [`cf_step`] replaces the exact dual by one proportional evaluation,
//!   `beta = max(-h K (J Q^-1 b + phi), 0)`, then takes the primal update
//!   `v+ = Q^-1 (b + J' beta / h) / h`; with `K = (J Q^-1 J' + R)^-1` this
//!   reproduces the regularized dual solution exactly when that inverse is
//!   diagonal, and `max` can be swapped for a softplus to make the step
//!   smooth in every input,
//! - [`cf_step_extended`] adds a dissipative term fed by the normal-direction
//!   approach speed, `beta = h max(-K (J Q^-1 b + phi) - D J Q^-1 b / h, 0)`.
//!
//! [`regularized_dual_solve`] exposes the regularized dual program itself as
//! an oracle, and [`decompose_contact_forces`] splits stacked impulses into
//! per-contact normal and friction impulse vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};

use crate::assembly::{ContactSystem, LinearizedSystem};
use crate::qp::solve_qp;
use crate::se3::{softplus, GeneralizedVelocity};
use crate::{Error, Result};

/// Activation used on the proportional contact law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    /// Exact rectifier `max(x, 0)`.
    Exact,
    /// `softplus(x, gamma)`, smooth and strictly positive.
    Softplus { gamma: f64 },
}

/// Gains of the closed-form contact law.
#[derive(Debug, Clone, Copy)]
pub struct CfParams {
    /// Uniform diagonal gain `K` mapping the dual-cone gap to a force.
    pub k: f64,
    pub smoothing: Smoothing,
}

impl CfParams {
    pub fn exact(k: f64) -> Self {
        Self { k, smoothing: Smoothing::Exact }
    }

    pub fn smoothed(k: f64, gamma: f64) -> Self {
        Self { k, smoothing: Smoothing::Softplus { gamma } }
    }

    fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "contact gain must be positive, got {}",
                self.k
            )));
        }
        if let Smoothing::Softplus { gamma } = self.smoothing {
            if !(gamma > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "softplus sharpness must be positive, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    fn activate(&self, x: f64) -> f64 {
        match self.smoothing {
            Smoothing::Exact => x.max(0.0),
            Smoothing::Softplus { gamma } => softplus(x, gamma),
        }
    }
}

/// Per-contact impulse split.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactForce {
    /// `(sum_j beta_ij) n_i`, world frame, impulse scale.
    pub normal_impulse: Vector3<f64>,
    /// `mu_i sum_j beta_ij d_ij`, world frame, impulse scale.
    pub friction_impulse: Vector3<f64>,
}

/// Outcome of one velocity step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub v_plus: GeneralizedVelocity,
    /// Contact impulses per stacked row (`h` times force).
    pub beta_plus: DVector<f64>,
    /// Per-contact split of `beta_plus`; empty when the contact system was
    /// built from raw rows without geometry.
    pub contact_forces: Vec<ContactForce>,
}

struct Prepared {
    chol: Cholesky<f64, nalgebra::Dyn>,
    qinv_b: DVector<f64>,
}

fn prepare(sys: &LinearizedSystem, cs: &ContactSystem) -> Result<Prepared> {
    sys.validate()?;
    if cs.n_rows() > 0 && cs.n_dofs() != sys.layout.vel_dim() {
        return Err(Error::DimensionMismatch(format!(
            "contact system over {} dofs, dynamics over {}",
            cs.n_dofs(),
            sys.layout.vel_dim()
        )));
    }
    let chol = Cholesky::new(sys.q_mat.clone())
        .ok_or_else(|| Error::InvalidArgument("system matrix is not positive definite".into()))?;
    let qinv_b = chol.solve(&sys.b_vec);
    Ok(Prepared { chol, qinv_b })
}

fn finish(
    sys: &LinearizedSystem,
    cs: &ContactSystem,
    prep: &Prepared,
    lambda: DVector<f64>,
) -> Result<StepResult> {
    let h = sys.h;
    let v_flat = if lambda.is_empty() {
        &prep.qinv_b / h
    } else {
        let rhs = &sys.b_vec + cs.j_tilde().transpose() * &lambda;
        prep.chol.solve(&rhs) / h
    };
    let beta_plus = h * lambda;
    let contact_forces = if cs.contacts().is_empty() {
        Vec::new()
    } else {
        decompose_contact_forces(cs, &beta_plus)?
    };
    Ok(StepResult {
        v_plus: GeneralizedVelocity::from_flat(sys.layout, &v_flat)?,
        beta_plus,
        contact_forces,
    })
}

/// Closed-form step: one proportional dual evaluation, one linear solve.
pub fn cf_step(
    sys: &LinearizedSystem,
    cs: &ContactSystem,
    params: &CfParams,
) -> Result<StepResult> {
    params.validate()?;
    let prep = prepare(sys, cs)?;
    let gap = cs.j_tilde() * &prep.qinv_b + cs.phi_tilde();
    let lambda = gap.map(|c| params.activate(-params.k * c));
    finish(sys, cs, &prep, lambda)
}

/// Closed-form step with dissipation: the contact force also resists the
/// approach speed of each row, `-D J (Q^-1 b) / h`, which removes kinetic
/// energy on impact instead of storing it in the proportional term.
pub fn cf_step_extended(
    sys: &LinearizedSystem,
    cs: &ContactSystem,
    params: &CfParams,
    damping: f64,
) -> Result<StepResult> {
    params.validate()?;
    if !(damping >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "damping gain must be non-negative, got {damping}"
        )));
    }
    let prep = prepare(sys, cs)?;
    let gap = cs.j_tilde() * &prep.qinv_b + cs.phi_tilde();
    let rate = cs.j_tilde() * &prep.qinv_b / sys.h;
    let lambda = DVector::from_fn(gap.len(), |i, _| {
        params.activate(-params.k * gap[i] - damping * rate[i])
    });
    finish(sys, cs, &prep, lambda)
}

/// Baseline step: solves the constrained program with the active-set QP and
/// converts multipliers to impulses. Satisfies
/// `v+ = Q^-1 (h b + J' beta) / h^2` at the returned solution.
pub fn qp_step(sys: &LinearizedSystem, cs: &ContactSystem) -> Result<StepResult> {
    let prep = prepare(sys, cs)?;
    if cs.n_rows() == 0 {
        return finish(sys, cs, &prep, DVector::zeros(0));
    }
    let h = sys.h;
    let h_qp = h * h * &sys.q_mat;
    let g_qp = -h * &sys.b_vec;
    let a_qp = h * cs.j_tilde();
    let lb = -cs.phi_tilde();
    let sol = solve_qp(&h_qp, &g_qp, &a_qp, &lb)?;
    for (i, &m) in sol.multipliers.iter().enumerate() {
        if m < -1e-10 {
            return Err(Error::SolverFailure(format!(
                "negative contact multiplier {m} at row {i}"
            )));
        }
    }
    // multipliers are force scale; clip the roundoff negatives
    let lambda = sol.multipliers.map(|m| m.max(0.0));
    finish(sys, cs, &prep, lambda)
}

/// Solves the regularized dual program
/// `min 1/(2 h^2) beta' (J Q^-1 J' + R) beta + 1/h beta' (J Q^-1 b + phi)`
/// over `beta >= 0` and returns the impulses. The solution satisfies the
/// complementarity `0 <= beta  perp  (J Q^-1 J' + R) beta / h + gap >= 0`.
pub fn regularized_dual_solve(
    sys: &LinearizedSystem,
    cs: &ContactSystem,
    r_diag: &DVector<f64>,
) -> Result<DVector<f64>> {
    let prep = prepare(sys, cs)?;
    let rows = cs.n_rows();
    if r_diag.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "regularizer of {} entries for {rows} contact rows",
            r_diag.len()
        )));
    }
    if r_diag.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidArgument("regularizer entries must be non-negative".into()));
    }
    if rows == 0 {
        return Ok(DVector::zeros(0));
    }
    let h = sys.h;
    let jt = cs.j_tilde().transpose();
    let qinv_jt = prep.chol.solve(&jt);
    let mut m = cs.j_tilde() * qinv_jt;
    for i in 0..rows {
        m[(i, i)] += r_diag[i];
    }
    let gap = cs.j_tilde() * &prep.qinv_b + cs.phi_tilde();
    let h_qp = m / (h * h);
    let g_qp = &gap / h;
    let sol = solve_qp(&h_qp, &g_qp, &DMatrix::identity(rows, rows), &DVector::zeros(rows))?;
    Ok(sol.x.map(|b| b.max(0.0)))
}

/// Splits stacked row impulses into one normal and one friction impulse per
/// contact. Requires the contact system to carry geometry and every impulse
/// to be non-negative.
pub fn decompose_contact_forces(
    cs: &ContactSystem,
    beta: &DVector<f64>,
) -> Result<Vec<ContactForce>> {
    if beta.len() != cs.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} impulses for {} contact rows",
            beta.len(),
            cs.n_rows()
        )));
    }
    if cs.contacts().is_empty() && cs.n_rows() > 0 {
        return Err(Error::InvalidArgument(
            "contact system carries no per-contact geometry".into(),
        ));
    }
    if let Some(neg) = beta.iter().find(|&&b| b < 0.0) {
        return Err(Error::InvalidArgument(format!("negative contact impulse {neg}")));
    }
    let mut out = Vec::with_capacity(cs.contacts().len());
    for (i, meta) in cs.contacts().iter().enumerate() {
        let rows = cs.contact_rows(i);
        let mut total = 0.0;
        let mut drift = Vector3::zeros();
        for (j, r) in rows.enumerate() {
            total += beta[r];
            drift += beta[r] * meta.tangent_dirs[j];
        }
        out.push(ContactForce {
            normal_impulse: total * meta.normal,
            friction_impulse: meta.mu * drift,
        });
    }
    Ok(out)
}
