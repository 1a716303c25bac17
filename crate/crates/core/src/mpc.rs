//! Contact-implicit model-predictive control over the smooth closed-form step.
//!
//! A policy step freezes the contact rows, the system matrix, and the control
//! injection at the current state. Within the horizon the next velocity is an
//! explicit smooth function of the control alone,
//!
//! ```text
//! v(u) = 1/h Q^-1 (b0 + S u + J' softplus(-K (J Q^-1 (b0 + S u) + phi), gamma))
//! ```
//!
//! and states chain only through pose integration, so the whole objective is
//! differentiable in closed form. [`objective_gradient`] runs one forward
//! rollout and one reverse sweep; [`optimize`] descends it under box bounds
//! with projected gradient steps and a backtracking line search.

use nalgebra::{Cholesky, DMatrix, DVector, UnitQuaternion, Vector3, Vector4};

use crate::assembly::{ContactSystem, LinearizedSystem};
use crate::se3::{
    integrate_pose, quat_error, quat_left_matrix, quat_right_matrix, quat_to_wxyz, rotation_exp,
    rotation_exp_jacobian, softplus, softplus_deriv, GeneralizedPosition, GeneralizedVelocity,
};
use crate::{Error, Result};

/// Weights of the tracking objective.
#[derive(Debug, Clone, Copy)]
pub struct CostConfig {
    /// Squared fingertip distance beyond [`Self::standoff`], every stage.
    pub w_contact: f64,
    /// Squared norm of the summed unit bearings from object to fingertips;
    /// small when the fingertips surround the object.
    pub w_grasp: f64,
    /// Squared control magnitude.
    pub w_control: f64,
    /// Final squared position error to the target.
    pub w_final_pos: f64,
    /// Final orientation error `1 - <q, q*>^2` to the target.
    pub w_final_quat: f64,
    /// The fingertip pull saturates at this distance from the object
    /// position. Pulling all the way to the center would reward plans that
    /// bury the fingertips in the object, which a compliant plant turns
    /// into large parasitic pushes.
    pub standoff: f64,
    /// Squared control change between consecutive horizon stages. Damps
    /// tap-and-retreat chatter when the prediction gain overestimates the
    /// plant response.
    pub w_slew: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            w_contact: 1.0,
            w_grasp: 0.05,
            w_control: 2.0,
            w_final_pos: 5000.0,
            w_final_quat: 50.0,
            standoff: 0.035,
            w_slew: 20.0,
        }
    }
}

/// Binding of the generic cost terms to one scene.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub config: CostConfig,
    /// Index of the manipulated object.
    pub object: usize,
    /// Offsets into the robot coordinates where each fingertip position
    /// starts; a fingertip occupies three consecutive coordinates.
    pub finger_offsets: Vec<usize>,
    pub target_position: Vector3<f64>,
    pub target_orientation: UnitQuaternion<f64>,
}

/// Pose goal with success thresholds for closed-loop trials.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub target_position: Vector3<f64>,
    pub target_orientation: UnitQuaternion<f64>,
    pub pos_tol: f64,
    pub quat_tol: f64,
    /// Consecutive in-tolerance steps required to declare success.
    pub success_window: usize,
    /// Closed-loop step budget.
    pub max_steps: usize,
}

impl TaskSpec {
    /// True when the object pose is within both tolerances.
    pub fn within_tolerance(&self, q: &GeneralizedPosition, object: usize) -> Result<bool> {
        let pose = q
            .object_poses
            .get(object)
            .ok_or_else(|| Error::InvalidArgument(format!("no object {object}")))?;
        let pos_err = (pose.position - self.target_position).norm();
        let q_err = quat_error(&pose.orientation, &self.target_orientation)?;
        Ok(pos_err <= self.pos_tol && q_err <= self.quat_tol)
    }
}

/// Counts consecutive in-tolerance steps.
#[derive(Debug, Clone)]
pub struct SuccessTracker {
    needed: usize,
    streak: usize,
}

impl SuccessTracker {
    pub fn new(needed: usize) -> Self {
        Self { needed, streak: 0 }
    }

    /// Feeds one step; returns true once the streak is long enough.
    pub fn update(&mut self, within: bool) -> bool {
        self.streak = if within { self.streak + 1 } else { 0 };
        self.streak >= self.needed
    }
}

/// Frozen one-policy-step prediction model.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub q0: GeneralizedPosition,
    pub h: f64,
    pub gamma: f64,
    /// Prediction-side contact gain, may differ from the plant.
    pub k_model: f64,
    layout: crate::se3::StateLayout,
    n_u: usize,
    qinv_b0: DVector<f64>,
    qinv_s: DMatrix<f64>,
    qinv_jt: DMatrix<f64>,
    /// `J Q^-1 S`
    w_mat: DMatrix<f64>,
    /// `J Q^-1 b0 + phi`
    c0: DVector<f64>,
}

impl MpcProblem {
    pub fn new(
        sys: &LinearizedSystem,
        cs: &ContactSystem,
        s_mat: &DMatrix<f64>,
        q0: GeneralizedPosition,
        k_model: f64,
        gamma: f64,
    ) -> Result<Self> {
        sys.validate()?;
        let n = sys.layout.vel_dim();
        if s_mat.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "control injection has {} rows for {} dofs",
                s_mat.nrows(),
                n
            )));
        }
        if cs.n_rows() > 0 && cs.n_dofs() != n {
            return Err(Error::DimensionMismatch(format!(
                "contact system over {} dofs, dynamics over {}",
                cs.n_dofs(),
                n
            )));
        }
        if q0.layout() != sys.layout {
            return Err(Error::DimensionMismatch("state does not match system layout".into()));
        }
        if !(k_model > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidArgument(
                "model gain and smoothing sharpness must be positive".into(),
            ));
        }
        let chol = Cholesky::new(sys.q_mat.clone())
            .ok_or_else(|| Error::InvalidArgument("system matrix is not positive definite".into()))?;
        let qinv_b0 = chol.solve(&sys.b_vec);
        let qinv_s = chol.solve(s_mat);
        let jt = cs.j_tilde().transpose();
        let qinv_jt = chol.solve(&jt);
        let w_mat = cs.j_tilde() * &qinv_s;
        // The plant settles with a rest overlap whose depth depends on its
        // own contact gain, so a frozen negative gap would make the
        // predicted rest force scale with the prediction gain instead:
        // a stiff model would hallucinate lift-off of resting bodies and a
        // soft one would sink them. The prediction treats observed overlap
        // as touching at the surface, keeping only positive clearances.
        let phi_surface = cs.phi_tilde().map(|p| p.max(0.0));
        let c0 = cs.j_tilde() * &qinv_b0 + phi_surface;
        Ok(Self {
            q0,
            h: sys.h,
            gamma,
            k_model,
            layout: sys.layout,
            n_u: s_mat.ncols(),
            qinv_b0,
            qinv_s,
            qinv_jt,
            w_mat,
            c0,
        })
    }

    pub fn n_controls(&self) -> usize {
        self.n_u
    }

    /// Pre-activation contact arguments for a control.
    fn contact_arg(&self, u: &DVector<f64>) -> DVector<f64> {
        -self.k_model * (&self.c0 + &self.w_mat * u)
    }

    /// Smooth one-step velocity prediction.
    pub fn predict_velocity(&self, u: &DVector<f64>) -> Result<GeneralizedVelocity> {
        let (v, _) = self.velocity_with_arg(u)?;
        GeneralizedVelocity::from_flat(self.layout, &v)
    }

    fn velocity_with_arg(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if u.len() != self.n_u {
            return Err(Error::DimensionMismatch(format!(
                "control of {} entries, expected {}",
                u.len(),
                self.n_u
            )));
        }
        let arg = self.contact_arg(u);
        let lambda = arg.map(|a| softplus(a, self.gamma));
        let v = (&self.qinv_b0 + &self.qinv_s * u + &self.qinv_jt * lambda) / self.h;
        Ok((v, arg))
    }

    /// Adjoint of [`Self::velocity_with_arg`]: accumulates `(dv/du)' v_bar`.
    fn pull_back_control(&self, arg: &DVector<f64>, v_bar: &DVector<f64>) -> DVector<f64> {
        let mut u_bar = self.qinv_s.transpose() * v_bar / self.h;
        if arg.len() > 0 {
            let lam_bar = self.qinv_jt.transpose() * v_bar / self.h;
            let scaled = DVector::from_fn(arg.len(), |i, _| {
                softplus_deriv(arg[i], self.gamma) * lam_bar[i]
            });
            u_bar += -self.k_model * (self.w_mat.transpose() * scaled);
        }
        u_bar
    }
}

/// Forward pass record used by the reverse sweep.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `q_0 .. q_T`.
    pub states: Vec<GeneralizedPosition>,
    /// Flat velocities `v_0 .. v_{T-1}`.
    pub velocities: Vec<DVector<f64>>,
    /// Pre-activation contact arguments per step.
    pub args: Vec<DVector<f64>>,
    pub cost: f64,
}

fn finger_position(q: &GeneralizedPosition, offset: usize) -> Result<Vector3<f64>> {
    let r = &q.robot_coords;
    if offset + 3 > r.len() {
        return Err(Error::InvalidArgument(format!(
            "fingertip coordinates {offset}..{} out of range",
            offset + 3
        )));
    }
    Ok(Vector3::new(r[offset], r[offset + 1], r[offset + 2]))
}

fn stage_cost(model: &CostModel, q: &GeneralizedPosition) -> Result<f64> {
    if model.finger_offsets.is_empty() {
        return Ok(0.0);
    }
    let p = q
        .object_poses
        .get(model.object)
        .ok_or_else(|| Error::InvalidArgument(format!("no object {}", model.object)))?
        .position;
    let mut contact = 0.0;
    let mut bearing_sum = Vector3::zeros();
    for &off in &model.finger_offsets {
        let f = finger_position(q, off)?;
        let d = f - p;
        let n = d.norm();
        let reach = (n - model.config.standoff).max(0.0);
        contact += reach * reach;
        if n > 1e-9 {
            bearing_sum += d / n;
        }
    }
    Ok(model.config.w_contact * contact + model.config.w_grasp * bearing_sum.norm_squared())
}

/// Gradient of [`stage_cost`] into the object position and robot coordinates.
fn stage_cost_grad(
    model: &CostModel,
    q: &GeneralizedPosition,
    p_bar: &mut Vector3<f64>,
    r_bar: &mut DVector<f64>,
) -> Result<()> {
    if model.finger_offsets.is_empty() {
        return Ok(());
    }
    let p = q.object_poses[model.object].position;
    let mut bearing_sum = Vector3::zeros();
    let mut bearings = Vec::with_capacity(model.finger_offsets.len());
    for &off in &model.finger_offsets {
        let d = finger_position(q, off)? - p;
        let n = d.norm();
        let u = if n > 1e-9 { d / n } else { Vector3::zeros() };
        bearing_sum += u;
        bearings.push((off, d, n, u));
    }
    for (off, d, n, u) in bearings {
        // contact term, flat inside the standoff sphere
        let reach = (n - model.config.standoff).max(0.0);
        if n > 1e-9 && reach > 0.0 {
            let g_f = 2.0 * model.config.w_contact * reach * (d / n);
            *p_bar -= g_f;
            for i in 0..3 {
                r_bar[off + i] += g_f[i];
            }
        }
        // grasp term through the unit bearing
        if n > 1e-9 {
            let proj = (bearing_sum - u * u.dot(&bearing_sum)) / n;
            let g_f = 2.0 * model.config.w_grasp * proj;
            *p_bar -= g_f;
            for i in 0..3 {
                r_bar[off + i] += g_f[i];
            }
        }
    }
    Ok(())
}

fn final_cost(model: &CostModel, q: &GeneralizedPosition) -> Result<f64> {
    let pose = q
        .object_poses
        .get(model.object)
        .ok_or_else(|| Error::InvalidArgument(format!("no object {}", model.object)))?;
    let pos = model.config.w_final_pos * (pose.position - model.target_position).norm_squared();
    let quat =
        model.config.w_final_quat * quat_error(&pose.orientation, &model.target_orientation)?;
    Ok(pos + quat)
}

fn control_cost(model: &CostModel, u: &DVector<f64>) -> f64 {
    model.config.w_control * u.norm_squared()
}

/// Rolls the frozen model forward and accumulates the objective.
pub fn rollout(
    problem: &MpcProblem,
    model: &CostModel,
    controls: &[DVector<f64>],
) -> Result<Rollout> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut velocities = Vec::with_capacity(controls.len());
    let mut args = Vec::with_capacity(controls.len());
    states.push(problem.q0.clone());
    let mut cost = 0.0;
    for u in controls {
        let (v_flat, arg) = problem.velocity_with_arg(u)?;
        let v = GeneralizedVelocity::from_flat(problem.layout, &v_flat)?;
        let next = integrate_pose(states.last().unwrap(), &v, problem.h)?;
        cost += stage_cost(model, &next)? + control_cost(model, u);
        states.push(next);
        velocities.push(v_flat);
        args.push(arg);
    }
    for pair in controls.windows(2) {
        cost += model.config.w_slew * (&pair[1] - &pair[0]).norm_squared();
    }
    cost += final_cost(model, states.last().unwrap())?;
    Ok(Rollout { states, velocities, args, cost })
}

pub fn objective(
    problem: &MpcProblem,
    model: &CostModel,
    controls: &[DVector<f64>],
) -> Result<f64> {
    Ok(rollout(problem, model, controls)?.cost)
}

/// Per-state adjoint: position, orientation (scalar-first 4-vector), robot.
struct StateBar {
    p: Vec<Vector3<f64>>,
    quat: Vec<Vector4<f64>>,
    r: DVector<f64>,
}

impl StateBar {
    fn zero(layout: crate::se3::StateLayout) -> Self {
        Self {
            p: vec![Vector3::zeros(); layout.n_objects],
            quat: vec![Vector4::zeros(); layout.n_objects],
            r: DVector::zeros(layout.n_robot),
        }
    }
}

/// Objective value and its gradient with respect to every control, computed
/// by one reverse sweep over the rollout.
pub fn objective_gradient(
    problem: &MpcProblem,
    model: &CostModel,
    controls: &[DVector<f64>],
) -> Result<(f64, Vec<DVector<f64>>)> {
    let roll = rollout(problem, model, controls)?;
    let layout = problem.layout;
    let t_end = controls.len();
    let mut grads = vec![DVector::zeros(problem.n_u); t_end];

    // seed at the final state: stage and terminal terms
    let mut bar = StateBar::zero(layout);
    if t_end > 0 {
        let q_t = &roll.states[t_end];
        stage_cost_grad(model, q_t, &mut bar.p[model.object], &mut bar.r)?;
        let pose = &q_t.object_poses[model.object];
        bar.p[model.object] +=
            2.0 * model.config.w_final_pos * (pose.position - model.target_position);
        let q4 = quat_to_wxyz(&pose.orientation);
        let t4 = quat_to_wxyz(&model.target_orientation);
        bar.quat[model.object] += -2.0 * model.config.w_final_quat * q4.dot(&t4) * t4;
    }

    for t in (0..t_end).rev() {
        let v = GeneralizedVelocity::from_flat(layout, &roll.velocities[t])?;
        // velocity adjoint from q_{t+1} = q_t (+) h v_t
        let mut v_bar = DVector::zeros(layout.vel_dim());
        let mut next_bar = StateBar::zero(layout);
        for o in 0..layout.n_objects {
            let off = layout.object_vel_offset(o);
            let h_p = problem.h * bar.p[o];
            for i in 0..3 {
                v_bar[off + i] = h_p[i];
            }
            let e = rotation_exp(&(problem.h * v.object_twists[o].angular));
            let r_q = quat_right_matrix(&quat_to_wxyz(&roll.states[t].object_poses[o].orientation));
            let d_exp = rotation_exp_jacobian(&(problem.h * v.object_twists[o].angular));
            let w_bar = problem.h * d_exp.transpose() * r_q.transpose() * bar.quat[o];
            for i in 0..3 {
                v_bar[off + 3 + i] = w_bar[i];
            }
            next_bar.p[o] = bar.p[o];
            next_bar.quat[o] = quat_left_matrix(&quat_to_wxyz(&e)).transpose() * bar.quat[o];
        }
        let r_off = layout.robot_vel_offset();
        for i in 0..layout.n_robot {
            v_bar[r_off + i] = problem.h * bar.r[i];
        }
        next_bar.r = bar.r.clone();

        grads[t] = problem.pull_back_control(&roll.args[t], &v_bar)
            + 2.0 * model.config.w_control * &controls[t];

        bar = next_bar;
        if t > 0 {
            stage_cost_grad(model, &roll.states[t], &mut bar.p[model.object], &mut bar.r)?;
        }
    }
    for t in 1..t_end {
        let d = 2.0 * model.config.w_slew * (&controls[t] - &controls[t - 1]);
        grads[t] += &d;
        grads[t - 1] -= &d;
    }
    Ok((roll.cost, grads))
}

/// Projected-gradient settings.
#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    pub initial_step: f64,
    /// Stop when the projected update is smaller than this in every entry.
    pub tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 80,
            initial_step: 4e-4,
            tol: 1e-8,
            armijo: 1e-4,
            max_backtracks: 30,
            u_min: -0.005,
            u_max: 0.005,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
    pub iterations: usize,
}

fn clamp_controls(controls: &mut [DVector<f64>], lo: f64, hi: f64) {
    for u in controls.iter_mut() {
        for x in u.iter_mut() {
            *x = x.clamp(lo, hi);
        }
    }
}

/// Minimizes the rollout objective under box bounds on every control entry.
pub fn optimize(
    problem: &MpcProblem,
    model: &CostModel,
    init: Vec<DVector<f64>>,
    opts: &OptimizeOptions,
) -> Result<MpcSolution> {
    if !(opts.u_min < opts.u_max) {
        return Err(Error::InvalidArgument("empty control box".into()));
    }
    let mut u = init;
    clamp_controls(&mut u, opts.u_min, opts.u_max);
    let (mut f, mut g) = objective_gradient(problem, model, &u)?;
    let mut step = opts.initial_step;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        iterations += 1;
        let mut s = step;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let mut trial: Vec<DVector<f64>> =
                u.iter().zip(&g).map(|(ut, gt)| ut - s * gt).collect();
            clamp_controls(&mut trial, opts.u_min, opts.u_max);
            let move2: f64 = trial
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b).norm_squared())
                .sum();
            if move2.sqrt() < opts.tol {
                return Ok(MpcSolution { controls: u, cost: f, iterations });
            }
            let f_trial = objective(problem, model, &trial)?;
            if f_trial <= f - opts.armijo / s * move2 {
                u = trial;
                f = f_trial;
                step = (s * 2.0).min(1e3);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
        let refreshed = objective_gradient(problem, model, &u)?;
        f = refreshed.0;
        g = refreshed.1;
    }
    Ok(MpcSolution { controls: u, cost: f, iterations })
}

/// Receding-horizon warm start: drop the executed control, repeat the last.
pub fn warm_start_shift(previous: &[DVector<f64>]) -> Vec<DVector<f64>> {
    if previous.is_empty() {
        return Vec::new();
    }
    let mut shifted: Vec<DVector<f64>> = previous[1..].to_vec();
    shifted.push(previous.last().unwrap().clone());
    shifted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_quasi_dynamic, QuasiDynamicParams};
    use crate::se3::{Pose, StateLayout};
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_problem(rng: &mut ChaCha8Rng, n_contacts: usize) -> (MpcProblem, CostModel) {
        let n_fingers = 3;
        let n_robot = 3 * n_fingers;
        let params = QuasiDynamicParams {
            object_q_diag: vec![Vector6::new(50.0, 50.0, 50.0, 0.05, 0.05, 0.05)],
            robot_stiffness: DVector::from_element(n_robot, 100.0),
            tau_object: vec![Vector6::new(0.0, 0.0, -0.0981, 0.0, 0.0, 0.0)],
            tau_robot: DVector::zeros(n_robot),
            h: 0.1,
        };
        let sys = assemble_quasi_dynamic(&params, &DVector::zeros(n_robot)).unwrap();
        let s_mat = params.control_jacobian();
        let n = sys.layout.vel_dim();
        let mut j = DMatrix::zeros(4 * n_contacts, n);
        for e in j.iter_mut() {
            *e = rng.gen_range(-1.0..1.0);
        }
        let phi = DVector::from_fn(4 * n_contacts, |_, _| rng.gen_range(-0.004..0.01));
        let cs = ContactSystem::from_raw_rows(j, phi).unwrap();
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let q0 = GeneralizedPosition {
            object_poses: vec![Pose {
                position: Vector3::new(0.01, -0.02, 0.03),
                orientation: UnitQuaternion::from_scaled_axis(0.3 * axis),
            }],
            robot_coords: DVector::from_fn(n_robot, |i, _| 0.05 * ((i as f64) - 4.0) / 4.0),
        };
        let problem = MpcProblem::new(&sys, &cs, &s_mat, q0, 1.0, 100.0).unwrap();
        let model = CostModel {
            config: CostConfig::default(),
            object: 0,
            finger_offsets: vec![0, 3, 6],
            target_position: Vector3::new(0.05, 0.02, 0.03),
            target_orientation: UnitQuaternion::from_scaled_axis(Vector3::z() * 0.8),
        };
        (problem, model)
    }

    fn random_controls(rng: &mut ChaCha8Rng, n_u: usize, horizon: usize) -> Vec<DVector<f64>> {
        (0..horizon)
            .map(|_| DVector::from_fn(n_u, |_, _| rng.gen_range(-0.004..0.004)))
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let (problem, model) = toy_problem(&mut rng, 1 + case % 3);
            let controls = random_controls(&mut rng, problem.n_controls(), 4);
            let (_, grads) = objective_gradient(&problem, &model, &controls).unwrap();
            let eps = 1e-6;
            let mut worst = 0.0_f64;
            let mut scale = 0.0_f64;
            for t in 0..controls.len() {
                for i in 0..problem.n_controls() {
                    let mut up = controls.clone();
                    up[t][i] += eps;
                    let mut dn = controls.clone();
                    dn[t][i] -= eps;
                    let fd = (objective(&problem, &model, &up).unwrap()
                        - objective(&problem, &model, &dn).unwrap())
                        / (2.0 * eps);
                    worst = worst.max((grads[t][i] - fd).abs());
                    scale = scale.max(fd.abs());
                }
            }
            assert!(
                worst <= 1e-4 * scale.max(1.0),
                "case {case}: gradient error {worst} at scale {scale}"
            );
        }
    }

    #[test]
    fn zero_horizon_objective_is_the_final_cost_at_the_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (problem, model) = toy_problem(&mut rng, 1);
        let f = objective(&problem, &model, &[]).unwrap();
        let expected = final_cost(&model, &problem.q0).unwrap();
        assert_relative_eq!(f, expected, epsilon = 1e-12);
    }

    #[test]
    fn optimizer_decreases_the_objective_and_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (problem, model) = toy_problem(&mut rng, 2);
        let init = random_controls(&mut rng, problem.n_controls(), 4);
        let f0 = objective(&problem, &model, &init).unwrap();
        let opts = OptimizeOptions::default();
        let sol = optimize(&problem, &model, init, &opts).unwrap();
        assert!(sol.cost <= f0 + 1e-12);
        for u in &sol.controls {
            for &x in u.iter() {
                assert!(x >= opts.u_min - 1e-15 && x <= opts.u_max + 1e-15);
            }
        }
    }

    #[test]
    fn grasp_cost_is_invariant_under_object_rotation() {
        // the bearing sum only involves world positions, so rotating the
        // object in place must not change the stage cost
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (problem, model) = toy_problem(&mut rng, 1);
        let mut q = problem.q0.clone();
        let c0 = stage_cost(&model, &q).unwrap();
        q.object_poses[0].orientation =
            UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -0.2, 1.1));
        assert_relative_eq!(stage_cost(&model, &q).unwrap(), c0, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_shift_drops_the_head_and_repeats_the_tail() {
        let seq: Vec<DVector<f64>> =
            (0..4).map(|t| DVector::from_element(2, t as f64)).collect();
        let shifted = warm_start_shift(&seq);
        assert_eq!(shifted.len(), 4);
        assert_eq!(shifted[0][0], 1.0);
        assert_eq!(shifted[2][0], 3.0);
        assert_eq!(shifted[3][0], 3.0);
        assert!(warm_start_shift(&[]).is_empty());
    }

    #[test]
    fn success_tracker_requires_consecutive_hits() {
        let mut t = SuccessTracker::new(3);
        assert!(!t.update(true));
        assert!(!t.update(true));
        assert!(!t.update(false));
        assert!(!t.update(true));
        assert!(!t.update(true));
        assert!(t.update(true));
    }

    #[test]
    fn predicted_velocity_moves_the_robot_by_the_command_without_contact() {
        let n_robot = 3;
        let params = QuasiDynamicParams {
            object_q_diag: vec![],
            robot_stiffness: DVector::from_element(n_robot, 100.0),
            tau_object: vec![],
            tau_robot: DVector::zeros(n_robot),
            h: 0.1,
        };
        let sys = assemble_quasi_dynamic(&params, &DVector::zeros(n_robot)).unwrap();
        let s_mat = params.control_jacobian();
        let q0 = GeneralizedPosition {
            object_poses: vec![],
            robot_coords: DVector::zeros(n_robot),
        };
        let problem = MpcProblem::new(
            &sys,
            &ContactSystem::empty(n_robot),
            &s_mat,
            q0,
            1.0,
            100.0,
        )
        .unwrap();
        let u = DVector::from_vec(vec![0.004, -0.002, 0.001]);
        let v = problem.predict_velocity(&u).unwrap();
        // stiffness cancels: one step covers the commanded displacement
        assert_relative_eq!(v.robot_vel[0] * 0.1, 0.004, epsilon = 1e-12);
        assert_relative_eq!(v.robot_vel[1] * 0.1, -0.002, epsilon = 1e-12);
    }

    #[test]
    fn layout_mismatches_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (problem, model) = toy_problem(&mut rng, 1);
        let bad = vec![DVector::zeros(problem.n_controls() + 1)];
        assert!(matches!(
            objective(&problem, &model, &bad),
            Err(Error::DimensionMismatch(_))
        ));
        let sys = LinearizedSystem {
            q_mat: DMatrix::identity(3, 3),
            b_vec: DVector::zeros(3),
            h: 0.1,
            layout: StateLayout { n_objects: 0, n_robot: 3 },
        };
        let q_wrong = GeneralizedPosition {
            object_poses: vec![],
            robot_coords: DVector::zeros(2),
        };
        assert!(MpcProblem::new(
            &sys,
            &ContactSystem::empty(3),
            &DMatrix::identity(3, 3),
            q_wrong,
            1.0,
            100.0
        )
        .is_err());
    }
}
