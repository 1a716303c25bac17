//! Randomized cross-validation suites.
//!
//! Each suite stresses one stated property of the steppers on seeded random
//! instances and reports the worst residual it saw. The suites are used both
//! by the `validate` CLI subcommand and by the acceptance tests, so their
//! tolerances are defined here in one place.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    assemble_quasi_dynamic, contact_jacobian, stack_contact_system, BodyMotion, ContactSystem,
    LinearizedSystem, QuasiDynamicParams,
};
use crate::collision::{tangent_basis, ContactPoint};
use crate::lcp::lcp_oracle;
use crate::mpc::{objective, objective_gradient, CostConfig, CostModel, MpcProblem};
use crate::se3::{GeneralizedPosition, Pose, StateLayout};
use crate::steppers::{
    cf_step, cf_step_extended, decompose_contact_forces, qp_step, regularized_dual_solve, CfParams,
};
use crate::{Error, Result};

/// Outcome of one validation suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} cases, worst {:.3e} (tol {:.1e}) {}{}",
            self.name,
            self.cases,
            self.worst,
            self.tol,
            if self.passed { "pass" } else { "FAIL" },
            if self.detail.is_empty() { String::new() } else { format!(" [{}]", self.detail) },
        )
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// One-object quasi-dynamic instance with genuine contact geometry, suitable
/// for impulse decomposition. Negative gaps are drawn when allowed.
pub fn random_quasi_instance(
    rng: &mut ChaCha8Rng,
    allow_negative_phi: bool,
) -> Result<(LinearizedSystem, ContactSystem)> {
    let n_robot = rng.gen_range(0..=2usize);
    let mut motions = vec![BodyMotion::Fixed, BodyMotion::Free { index: 0 }];
    for j in 0..n_robot {
        motions.push(BodyMotion::Actuated { axes: vec![(j, random_unit(rng))] });
    }
    let pose = Pose {
        position: Vector3::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(0.0..0.2),
        ),
        orientation: UnitQuaternion::from_scaled_axis(random_unit(rng) * rng.gen_range(0.0..3.0)),
    };
    let q = GeneralizedPosition {
        object_poses: vec![pose.clone()],
        robot_coords: DVector::zeros(n_robot),
    };
    let n_contacts = rng.gen_range(1..=4usize);
    let mut blocks = Vec::with_capacity(n_contacts);
    for c in 0..n_contacts {
        let normal = random_unit(rng);
        let phi = if allow_negative_phi {
            rng.gen_range(-0.005..0.01)
        } else {
            rng.gen_range(0.0..0.01)
        };
        // last contact may come from a robot body instead of the ground
        let (body_a, body_b) = if c + 1 == n_contacts && n_robot > 0 && rng.gen_bool(0.5) {
            (2, 1)
        } else {
            (1, 0)
        };
        let contact = ContactPoint {
            body_a,
            body_b,
            witness: pose.position
                + Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ),
            normal,
            phi,
            tangent_dirs: tangent_basis(&normal, 4)?,
            friction_mu: rng.gen_range(0.1..1.0),
        };
        blocks.push(contact_jacobian(&contact, &motions, &q)?);
    }
    let cs = stack_contact_system(&blocks)?;
    let lin = rng.gen_range(20.0..200.0);
    let ang = rng.gen_range(0.02..0.2);
    let params = QuasiDynamicParams {
        object_q_diag: vec![Vector6::new(lin, lin, lin, ang, ang, ang)],
        robot_stiffness: DVector::from_fn(n_robot, |_, _| rng.gen_range(50.0..200.0)),
        tau_object: vec![Vector6::from_fn(|_, _| rng.gen_range(-0.5..0.5))],
        tau_robot: DVector::from_fn(n_robot, |_, _| rng.gen_range(-0.1..0.1)),
        h: if rng.gen_bool(0.5) { 0.02 } else { 0.1 },
    };
    let u = DVector::from_fn(n_robot, |_, _| rng.gen_range(-0.005..0.005));
    let sys = assemble_quasi_dynamic(&params, &u)?;
    Ok((sys, cs))
}

/// Raw-row instance without geometry, small enough for the enumeration LCP
/// oracle. Gaps are non-negative so the constrained program is feasible.
pub fn random_raw_instance(
    rng: &mut ChaCha8Rng,
    max_contacts: usize,
) -> Result<(LinearizedSystem, ContactSystem)> {
    let n = rng.gen_range(2..=5usize);
    let rows = 4 * rng.gen_range(1..=max_contacts);
    let q_mat = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(1.0..50.0)));
    let b_vec = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let j = DMatrix::from_fn(rows, n, |_, _, | rng.gen_range(-1.0..1.0));
    let phi = DVector::from_fn(rows, |_, _| rng.gen_range(0.0..0.02));
    let cs = ContactSystem::from_raw_rows(j, phi)?;
    let sys = LinearizedSystem {
        q_mat,
        b_vec,
        h: rng.gen_range(0.01..0.1),
        layout: StateLayout { n_objects: 0, n_robot: n },
    };
    Ok((sys, cs))
}

/// On single-row systems the proportional law with gain
/// `K = (J Q^-1 J' + R)^-1` must reproduce the regularized dual solution
/// exactly.
pub fn closed_form_dual_exactness(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let n = rng.gen_range(1..=4usize);
        let q_mat = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(1.0..80.0)));
        let b_vec = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let j = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let phi = DVector::from_element(1, rng.gen_range(-0.01..0.01));
        let h = rng.gen_range(0.01..0.2);
        let r = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.5) };
        let m_scalar = (&j * q_mat.clone().try_inverse().unwrap() * j.transpose())[(0, 0)];
        if m_scalar + r < 1e-10 {
            continue;
        }
        let cs = ContactSystem::from_raw_rows(j, phi)?;
        let sys = LinearizedSystem {
            q_mat,
            b_vec,
            h,
            layout: StateLayout { n_objects: 0, n_robot: n },
        };
        let k = 1.0 / (m_scalar + r);
        let cf = cf_step(&sys, &cs, &CfParams::exact(k))?;
        let dual = regularized_dual_solve(&sys, &cs, &DVector::from_element(1, r))?;
        worst = worst.max((cf.beta_plus[0] - dual[0]).abs());
    }
    let tol = 1e-8;
    Ok(SuiteReport {
        name: "closed-form-vs-regularized-dual".into(),
        cases,
        worst,
        tol,
        passed: worst <= tol,
        detail: String::new(),
    })
}

/// The closed-form impulses satisfy
/// `0 <= beta  perp  (h K)^-1 beta + J Q^-1 b + phi >= 0` exactly.
pub fn modified_complementarity(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let (sys, cs) = random_quasi_instance(&mut rng, true)?;
        let k = rng.gen_range(0.5..5.0);
        let res = cf_step(&sys, &cs, &CfParams::exact(k))?;
        let qinv_b = sys
            .q_mat
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SolverFailure("instance not positive definite".into()))?
            .solve(&sys.b_vec);
        let gap = cs.j_tilde() * qinv_b + cs.phi_tilde();
        for i in 0..cs.n_rows() {
            let beta = res.beta_plus[i];
            let w = beta / (sys.h * k) + gap[i];
            worst = worst.max(-beta).max(-w).max((beta * w).abs());
        }
    }
    let tol = 1e-12;
    Ok(SuiteReport {
        name: "impulse-complementarity".into(),
        cases,
        worst,
        tol,
        passed: worst <= tol,
        detail: String::new(),
    })
}

/// Decomposed impulses of all three steppers stay inside the friction cone:
/// `mu |normal| >= |friction|`.
pub fn coulomb_cone(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::MIN;
    for case in 0..cases {
        // feasibility for the constrained baseline needs non-negative gaps
        let qp_turn = case % 3 == 2;
        let (sys, cs) = random_quasi_instance(&mut rng, !qp_turn)?;
        let res = match case % 3 {
            0 => cf_step(&sys, &cs, &CfParams::exact(rng.gen_range(0.5..5.0)))?,
            1 => cf_step_extended(
                &sys,
                &cs,
                &CfParams::exact(rng.gen_range(0.5..5.0)),
                rng.gen_range(0.0..2.0),
            )?,
            _ => qp_step(&sys, &cs)?,
        };
        let forces = decompose_contact_forces(&cs, &res.beta_plus)?;
        for (i, f) in forces.iter().enumerate() {
            let mu = cs.contacts()[i].mu;
            worst = worst.max(f.friction_impulse.norm() - mu * f.normal_impulse.norm());
        }
    }
    let tol = 1e-12;
    Ok(SuiteReport {
        name: "friction-cone".into(),
        cases,
        worst,
        tol,
        passed: worst <= tol,
        detail: "violation = |friction| - mu |normal|, all steppers".into(),
    })
}

/// The constrained baseline must agree with an exhaustive complementarity
/// enumeration: identical next velocities and clean KKT residuals.
pub fn qp_lcp_cross_check(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_v = 0.0_f64;
    let mut worst_kkt = 0.0_f64;
    for _ in 0..cases {
        let (sys, cs) = random_raw_instance(&mut rng, 3)?;
        let res = qp_step(&sys, &cs)?;
        let chol = sys.q_mat.clone().cholesky().unwrap();
        let qinv_jt = chol.solve(&cs.j_tilde().transpose());
        let m = cs.j_tilde() * &qinv_jt;
        let qvec = cs.j_tilde() * chol.solve(&sys.b_vec) + cs.phi_tilde();
        let z = lcp_oracle(&m, &qvec, 1e-9)?;
        let v_lcp = chol.solve(&(&sys.b_vec + cs.j_tilde().transpose() * &z)) / sys.h;
        let v_qp = res.v_plus.to_flat();
        worst_v = worst_v.max((&v_qp - &v_lcp).amax());

        // KKT of the constrained program at the returned step
        let h = sys.h;
        let stationarity =
            (h * h * &sys.q_mat * &v_qp - h * &sys.b_vec - cs.j_tilde().transpose() * &res.beta_plus)
                .amax();
        let slack = h * cs.j_tilde() * &v_qp + cs.phi_tilde();
        let primal = (-slack.min()).max(0.0);
        let comp = (0..cs.n_rows())
            .map(|i| (res.beta_plus[i] * slack[i] / h).abs())
            .fold(0.0_f64, f64::max);
        worst_kkt = worst_kkt.max(stationarity).max(primal).max(comp);
    }
    let tol = 1e-6;
    let kkt_tol = 1e-8;
    Ok(SuiteReport {
        name: "qp-vs-lcp-oracle".into(),
        cases,
        worst: worst_v,
        tol,
        passed: worst_v <= tol && worst_kkt <= kkt_tol,
        detail: format!("kkt residual {worst_kkt:.3e} (tol {kkt_tol:.1e})"),
    })
}

/// Reverse-mode rollout gradients against central finite differences.
pub fn gradient_check(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let n_robot = 9;
        let params = QuasiDynamicParams {
            object_q_diag: vec![Vector6::new(50.0, 50.0, 50.0, 0.05, 0.05, 0.05)],
            robot_stiffness: DVector::from_element(n_robot, 100.0),
            tau_object: vec![Vector6::new(0.0, 0.0, -0.0981, 0.0, 0.0, 0.0)],
            tau_robot: DVector::zeros(n_robot),
            h: 0.1,
        };
        let sys = assemble_quasi_dynamic(&params, &DVector::zeros(n_robot))?;
        let n = sys.layout.vel_dim();
        let rows = 4 * rng.gen_range(1..=3usize);
        let j = DMatrix::from_fn(rows, n, |_, _| rng.gen_range(-1.0..1.0));
        let phi = DVector::from_fn(rows, |_, _| rng.gen_range(-0.004..0.01));
        let cs = ContactSystem::from_raw_rows(j, phi)?;
        let q0 = GeneralizedPosition {
            object_poses: vec![Pose {
                position: Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(0.0..0.08),
                ),
                orientation: UnitQuaternion::from_scaled_axis(
                    random_unit(&mut rng) * rng.gen_range(0.0..3.0),
                ),
            }],
            robot_coords: DVector::from_fn(n_robot, |_, _| rng.gen_range(-0.08..0.08)),
        };
        let problem =
            MpcProblem::new(&sys, &cs, &params.control_jacobian(), q0, 1.0, 100.0)?;
        let model = CostModel {
            config: CostConfig::default(),
            object: 0,
            finger_offsets: vec![0, 3, 6],
            target_position: Vector3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(0.0..0.08),
            ),
            target_orientation: UnitQuaternion::from_scaled_axis(
                random_unit(&mut rng) * rng.gen_range(0.0..3.0),
            ),
        };
        let controls: Vec<DVector<f64>> = (0..4)
            .map(|_| DVector::from_fn(n_robot, |_, _| rng.gen_range(-0.004..0.004)))
            .collect();
        let (_, grads) = objective_gradient(&problem, &model, &controls)?;
        let eps = 1e-6;
        let mut err = 0.0_f64;
        let mut scale = 0.0_f64;
        for t in 0..controls.len() {
            for i in 0..n_robot {
                let mut up = controls.clone();
                up[t][i] += eps;
                let mut dn = controls.clone();
                dn[t][i] -= eps;
                let fd =
                    (objective(&problem, &model, &up)? - objective(&problem, &model, &dn)?)
                        / (2.0 * eps);
                err = err.max((grads[t][i] - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
        worst = worst.max(err / scale.max(1.0));
    }
    let tol = 1e-4;
    Ok(SuiteReport {
        name: "mpc-gradient-fd".into(),
        cases,
        worst,
        tol,
        passed: worst <= tol,
        detail: "relative to max(|fd|, 1)".into(),
    })
}

/// The smoothed step approaches the exact rectifier as the sharpness
/// doubles: the next-velocity gap must shrink monotonically and end below
/// tolerance.
pub fn softplus_convergence(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gammas: Vec<f64> = (0..8).map(|k| 100.0 * f64::powi(2.0, k)).collect();
    let mut worst_final = 0.0_f64;
    let mut monotone_violations = 0usize;
    for _ in 0..cases {
        let (sys, cs) = random_quasi_instance(&mut rng, true)?;
        let k = rng.gen_range(0.5..5.0);
        let exact = cf_step(&sys, &cs, &CfParams::exact(k))?.v_plus.to_flat();
        let mut prev_gap = f64::MAX;
        let mut last_gap = 0.0;
        for &gamma in &gammas {
            let smooth = cf_step(&sys, &cs, &CfParams::smoothed(k, gamma))?;
            let gap = (smooth.v_plus.to_flat() - &exact).norm();
            if gap > prev_gap + 1e-12 {
                monotone_violations += 1;
            }
            prev_gap = gap;
            last_gap = gap;
        }
        worst_final = worst_final.max(last_gap);
    }
    let tol = 1e-4;
    Ok(SuiteReport {
        name: "softplus-convergence".into(),
        cases,
        worst: worst_final,
        tol,
        passed: worst_final <= tol && monotone_violations == 0,
        detail: format!(
            "sharpness 100..12800 doubling, {monotone_violations} monotonicity violations"
        ),
    })
}

/// Runs every suite at its default size.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        closed_form_dual_exactness(1000, 101)?,
        modified_complementarity(10_000, 102)?,
        coulomb_cone(10_000, 103)?,
        qp_lcp_cross_check(100, 104)?,
        gradient_check(100, 105)?,
        softplus_convergence(100, 106)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_reduced_size() {
        let reports = vec![
            closed_form_dual_exactness(50, 1).unwrap(),
            modified_complementarity(50, 2).unwrap(),
            coulomb_cone(60, 3).unwrap(),
            qp_lcp_cross_check(10, 4).unwrap(),
            gradient_check(5, 5).unwrap(),
            softplus_convergence(5, 6).unwrap(),
        ];
        for r in &reports {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn suites_are_deterministic_per_seed() {
        let a = closed_form_dual_exactness(20, 9).unwrap();
        let b = closed_form_dual_exactness(20, 9).unwrap();
        assert_eq!(a.worst, b.worst);
        let c = closed_form_dual_exactness(20, 10).unwrap();
        assert!((a.worst - c.worst).abs() > 0.0 || a.worst == 0.0);
    }

    #[test]
    fn report_display_shows_verdict() {
        let r = SuiteReport {
            name: "demo".into(),
            cases: 3,
            worst: 1e-9,
            tol: 1e-8,
            passed: true,
            detail: String::new(),
        };
        let line = r.to_string();
        assert!(line.contains("pass"));
        assert!(line.contains("demo"));
    }
}
