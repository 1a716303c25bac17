//! Benchmark scenes, simulation loops, closed-loop MPC trials, and the
//! stepper benchmark harness.
//!
//! A [`Scene`] bundles collision bodies, friction, the dynamics family, the
//! plant-side stepper gains, and the initial state. [`build_scene`] knows the
//! named desk-scale setups; everything downstream works on the generic type.

use std::time::Instant;

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    assemble_full_dynamics, assemble_quasi_dynamic, contact_jacobian, stack_contact_system,
    BodyMotion, ContactSystem, DynamicParams, LinearizedSystem, QuasiDynamicParams,
};
use crate::collision::{detect_contacts, CollisionBody, FrictionTable, GeometryConfig, Shape};
use crate::mpc::{
    optimize, warm_start_shift, CostConfig, CostModel, MpcProblem, OptimizeOptions, SuccessTracker,
    TaskSpec,
};
use crate::se3::{integrate_pose, GeneralizedPosition, GeneralizedVelocity, Pose, StateLayout};
use crate::steppers::{cf_step, cf_step_extended, qp_step, CfParams, StepResult};
use crate::{Error, Result};

/// One collision body with its motion binding.
#[derive(Debug, Clone)]
pub struct SceneBody {
    pub shape: Shape,
    pub motion: BodyMotion,
    /// Pose for fixed bodies; translation origin for actuated ones whose
    /// position is `base + sum coord_i * axis_i`. Ignored for free bodies.
    pub base_pose: Pose,
}

/// Dynamics family of a scene.
#[derive(Debug, Clone)]
pub enum SceneDynamics {
    /// Inertia-scaled objects and a stiffness-controlled robot; no velocity
    /// state carries over between steps.
    QuasiDynamic {
        object_q_diag: Vec<Vector6<f64>>,
        robot_stiffness: DVector<f64>,
        tau_object: Vec<Vector6<f64>>,
        tau_robot: DVector<f64>,
    },
    /// Second-order rigid-body dynamics; no actuated coordinates.
    FullDynamics {
        masses: Vec<f64>,
        inertias: Vec<Matrix3<f64>>,
        gravity: Vector3<f64>,
        external_wrench: Vec<Vector6<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub name: String,
    pub bodies: Vec<SceneBody>,
    pub friction: FrictionTable,
    pub geometry: GeometryConfig,
    pub dynamics: SceneDynamics,
    pub h: f64,
    /// Plant-side proportional contact gain.
    pub k_scene: f64,
    /// Plant-side contact damping, used by the extended stepper.
    pub d_scene: f64,
    pub initial_state: GeneralizedPosition,
    pub initial_velocity: GeneralizedVelocity,
    pub layout: StateLayout,
    /// Constant control applied by `run_simulation`.
    pub default_control: DVector<f64>,
    /// Object manipulated in MPC tasks.
    pub mpc_object: usize,
    /// Robot coordinate offsets of fingertip positions, three coords each.
    pub finger_offsets: Vec<usize>,
}

/// Tunable knobs accepted by [`build_scene`].
#[derive(Debug, Clone)]
pub struct SceneOptions {
    /// Number of pushed cubes in `push_boxes`.
    pub n_cubes: usize,
    pub k: Option<f64>,
    pub d: Option<f64>,
    pub h: Option<f64>,
    pub margin: Option<f64>,
    pub mu: Option<f64>,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self { n_cubes: 10, k: None, d: None, h: None, margin: None, mu: None }
    }
}

/// Velocity solver used on the plant side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepperChoice {
    Cf,
    CfExtended,
    Qp,
}

impl std::str::FromStr for StepperChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf" => Ok(Self::Cf),
            "cf_extended" => Ok(Self::CfExtended),
            "qp" => Ok(Self::Qp),
            other => Err(Error::InvalidArgument(format!(
                "unknown stepper '{other}', expected cf, cf_extended, or qp"
            ))),
        }
    }
}

impl std::fmt::Display for StepperChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cf => "cf",
            Self::CfExtended => "cf_extended",
            Self::Qp => "qp",
        })
    }
}

impl Scene {
    /// World pose of body `i` under the given state.
    pub fn body_pose(&self, i: usize, state: &GeneralizedPosition) -> Result<Pose> {
        let body = self
            .bodies
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("no body {i}")))?;
        Ok(match &body.motion {
            BodyMotion::Free { index } => state
                .object_poses
                .get(*index)
                .ok_or_else(|| Error::InvalidArgument(format!("no object {index}")))?
                .clone(),
            BodyMotion::Fixed => body.base_pose.clone(),
            BodyMotion::Actuated { axes } => {
                let mut p = body.base_pose.clone();
                for (coord, axis) in axes {
                    let c = state.robot_coords.get(*coord).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!("no robot coordinate {coord}"))
                    })?;
                    p.position += c * axis;
                }
                p
            }
        })
    }

    pub fn collision_bodies(&self, state: &GeneralizedPosition) -> Result<Vec<CollisionBody>> {
        (0..self.bodies.len())
            .map(|i| {
                Ok(CollisionBody {
                    shape: self.bodies[i].shape.clone(),
                    pose: self.body_pose(i, state)?,
                })
            })
            .collect()
    }

    /// Builds the linearized system and stacked contacts at one state.
    pub fn assemble(
        &self,
        state: &GeneralizedPosition,
        velocity: &GeneralizedVelocity,
        u: &DVector<f64>,
    ) -> Result<(LinearizedSystem, ContactSystem)> {
        let bodies = self.collision_bodies(state)?;
        let contacts = detect_contacts(&bodies, &self.friction, &self.geometry)?;
        let motions: Vec<BodyMotion> = self.bodies.iter().map(|b| b.motion.clone()).collect();
        let blocks = contacts
            .iter()
            .map(|c| contact_jacobian(c, &motions, state))
            .collect::<Result<Vec<_>>>()?;
        let cs = if blocks.is_empty() {
            ContactSystem::empty(self.layout.vel_dim())
        } else {
            stack_contact_system(&blocks)?
        };
        let sys = match &self.dynamics {
            SceneDynamics::QuasiDynamic {
                object_q_diag,
                robot_stiffness,
                tau_object,
                tau_robot,
            } => {
                let params = QuasiDynamicParams {
                    object_q_diag: object_q_diag.clone(),
                    robot_stiffness: robot_stiffness.clone(),
                    tau_object: tau_object.clone(),
                    tau_robot: tau_robot.clone(),
                    h: self.h,
                };
                assemble_quasi_dynamic(&params, u)?
            }
            SceneDynamics::FullDynamics { masses, inertias, gravity, external_wrench } => {
                let params = DynamicParams {
                    masses: masses.clone(),
                    inertias: inertias.clone(),
                    gravity: *gravity,
                    external_wrench: external_wrench.clone(),
                    h: self.h,
                };
                assemble_full_dynamics(&params, state, velocity)?
            }
        };
        Ok((sys, cs))
    }

    /// Control injection matrix of the quasi-dynamic robot.
    pub fn control_jacobian(&self) -> Result<nalgebra::DMatrix<f64>> {
        match &self.dynamics {
            SceneDynamics::QuasiDynamic {
                object_q_diag,
                robot_stiffness,
                tau_object,
                tau_robot,
            } => {
                let params = QuasiDynamicParams {
                    object_q_diag: object_q_diag.clone(),
                    robot_stiffness: robot_stiffness.clone(),
                    tau_object: tau_object.clone(),
                    tau_robot: tau_robot.clone(),
                    h: self.h,
                };
                Ok(params.control_jacobian())
            }
            SceneDynamics::FullDynamics { .. } => Err(Error::InvalidArgument(
                "full-dynamics scenes have no actuated coordinates".into(),
            )),
        }
    }

    pub fn n_controls(&self) -> usize {
        self.default_control.len()
    }
}

fn solve_step(
    sys: &LinearizedSystem,
    cs: &ContactSystem,
    stepper: StepperChoice,
    k: f64,
    d: f64,
) -> Result<StepResult> {
    match stepper {
        StepperChoice::Cf => cf_step(sys, cs, &CfParams::exact(k)),
        StepperChoice::CfExtended => cf_step_extended(sys, cs, &CfParams::exact(k), d),
        StepperChoice::Qp => qp_step(sys, cs),
    }
}

/// Recorded simulation rollout. `states` and `velocities` have one more
/// entry than `controls`, `solve_seconds`, and `contact_rows`.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub h: f64,
    pub states: Vec<GeneralizedPosition>,
    pub velocities: Vec<GeneralizedVelocity>,
    pub controls: Vec<DVector<f64>>,
    pub solve_seconds: Vec<f64>,
    pub contact_rows: Vec<usize>,
}

impl SimTrace {
    /// Height of one object over time.
    pub fn object_heights(&self, object: usize) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| s.object_poses[object].position.z)
            .collect()
    }

    /// Mean of an object velocity component over the trailing fraction.
    pub fn terminal_velocity(&self, object: usize, axis: usize, frac: f64) -> f64 {
        let n = self.velocities.len();
        let start = ((n as f64) * (1.0 - frac)) as usize;
        let tail = &self.velocities[start.min(n - 1)..];
        tail.iter().map(|v| v.object_twists[object].linear[axis]).sum::<f64>() / tail.len() as f64
    }
}

/// Steps a scene forward under its constant default control.
pub fn run_simulation(scene: &Scene, stepper: StepperChoice, steps: usize) -> Result<SimTrace> {
    let mut state = scene.initial_state.clone();
    let mut velocity = scene.initial_velocity.clone();
    let mut trace = SimTrace {
        h: scene.h,
        states: vec![state.clone()],
        velocities: vec![velocity.clone()],
        controls: Vec::with_capacity(steps),
        solve_seconds: Vec::with_capacity(steps),
        contact_rows: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let u = scene.default_control.clone();
        let (sys, cs) = scene.assemble(&state, &velocity, &u)?;
        let t0 = Instant::now();
        let res = solve_step(&sys, &cs, stepper, scene.k_scene, scene.d_scene)?;
        trace.solve_seconds.push(t0.elapsed().as_secs_f64());
        trace.contact_rows.push(cs.n_rows());
        velocity = res.v_plus;
        state = integrate_pose(&state, &velocity, scene.h)?;
        trace.states.push(state.clone());
        trace.velocities.push(velocity.clone());
        trace.controls.push(u);
    }
    Ok(trace)
}

/// Runs the scene to rest from its initial state and returns the final
/// state. Velocity is zeroed first; the default control is not applied.
pub fn settle(scene: &Scene, stepper: StepperChoice, steps: usize) -> Result<GeneralizedPosition> {
    let mut quiet = scene.clone();
    quiet.initial_velocity = GeneralizedVelocity::zero(scene.layout);
    quiet.default_control = DVector::zeros(scene.n_controls());
    let trace = run_simulation(&quiet, stepper, steps)?;
    Ok(trace.states.last().unwrap().clone())
}

/// Summary of one sliding-cube run: settle, kick to the initial tangential
/// speed, slide out.
#[derive(Debug, Clone)]
pub struct SlidingCubeMetrics {
    /// First time after which the tangential speed stays below 0.01 m/s.
    pub stop_time: Option<f64>,
    /// Final minus settled height of the cube center.
    pub net_drift: f64,
    /// Highest rise of the cube center above its settled height.
    pub peak_rise: f64,
}

/// Settles the cube under the chosen stepper, applies the configured initial
/// velocity, runs the slide, and reports stop time and height excursions.
pub fn sliding_cube_metrics(
    scene: &Scene,
    stepper: StepperChoice,
    settle_steps: usize,
    run_steps: usize,
) -> Result<SlidingCubeMetrics> {
    let settled = settle(scene, stepper, settle_steps)?;
    let mut run = scene.clone();
    run.initial_state = settled;
    let trace = run_simulation(&run, stepper, run_steps)?;
    let z0 = run.initial_state.object_poses[0].position.z;
    let heights = trace.object_heights(0);
    let peak_rise = heights.iter().cloned().fold(f64::MIN, f64::max) - z0;
    let net_drift = heights.last().unwrap() - z0;
    let speeds: Vec<f64> = trace
        .velocities
        .iter()
        .map(|v| v.object_twists[0].linear.xy().norm())
        .collect();
    let stop_idx = speeds.iter().rposition(|&s| s >= 0.01).map(|i| i + 1);
    let stop_time = match stop_idx {
        Some(i) if i < speeds.len() => Some(i as f64 * scene.h),
        _ => None,
    };
    Ok(SlidingCubeMetrics { stop_time, net_drift, peak_rise })
}

/// Closed-loop MPC configuration.
#[derive(Debug, Clone)]
pub struct MpcRunConfig {
    pub horizon: usize,
    /// Prediction-side contact gain; the plant keeps the scene gain.
    pub k_model: f64,
    pub gamma: f64,
    pub costs: CostConfig,
    pub optimize: OptimizeOptions,
}

impl Default for MpcRunConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            k_model: 1.0,
            gamma: 100.0,
            costs: CostConfig::default(),
            optimize: OptimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub success: bool,
    /// Plant steps executed until success or the budget ran out.
    pub steps: usize,
    pub final_pos_err: f64,
    pub final_quat_err: f64,
    /// Mean wall time of one policy step: detection, assembly, optimization.
    pub mean_solve_ms: f64,
    pub mean_opt_iterations: f64,
}

/// Replaces an almost-opposed target orientation with a waypoint partway
/// along the geodesic from the current orientation, restoring the gradient
/// that the half-turn symmetry of the orientation error takes away.
fn waypoint_orientation(
    current: &UnitQuaternion<f64>,
    target: &UnitQuaternion<f64>,
) -> UnitQuaternion<f64> {
    const SADDLE_ANGLE: f64 = 2.6;
    const WAYPOINT_ANGLE: f64 = 2.0;
    let angle = current.angle_to(target);
    if angle <= SADDLE_ANGLE {
        return *target;
    }
    current
        .try_slerp(target, WAYPOINT_ANGLE / angle, 1e-9)
        // an exactly opposed pair has no unique geodesic; nudge about z
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.3) * *target)
}

/// Runs one closed-loop trial from `initial` toward the task target.
pub fn run_mpc_trial(
    scene: &Scene,
    initial: &GeneralizedPosition,
    task: &TaskSpec,
    cfg: &MpcRunConfig,
) -> Result<TrialRecord> {
    let n_u = scene.n_controls();
    let zero_u = DVector::zeros(n_u);
    let zero_v = GeneralizedVelocity::zero(scene.layout);
    let mut model = CostModel {
        config: cfg.costs,
        object: scene.mpc_object,
        finger_offsets: scene.finger_offsets.clone(),
        target_position: task.target_position,
        target_orientation: task.target_orientation,
    };
    let mut state = initial.clone();
    let mut warm: Vec<DVector<f64>> = vec![DVector::zeros(n_u); cfg.horizon];
    let mut tracker = SuccessTracker::new(task.success_window);
    let mut success = false;
    let mut steps = 0;
    let mut solve_seconds = 0.0;
    let mut opt_iterations = 0usize;
    for _ in 0..task.max_steps {
        let t0 = Instant::now();
        // The orientation error 1 - <q, q*>^2 loses its gradient near a
        // half-turn, so an almost-opposed target is steered through a
        // waypoint partway along the geodesic until the angle shrinks.
        model.target_orientation = waypoint_orientation(
            &state.object_poses[scene.mpc_object].orientation,
            &task.target_orientation,
        );
        let (sys, cs) = scene.assemble(&state, &zero_v, &zero_u)?;
        let s_mat = scene.control_jacobian()?;
        let problem = MpcProblem::new(&sys, &cs, &s_mat, state.clone(), cfg.k_model, cfg.gamma)?;
        let sol = optimize(&problem, &model, warm_start_shift(&warm), &cfg.optimize)?;
        solve_seconds += t0.elapsed().as_secs_f64();
        opt_iterations += sol.iterations;
        let u0 = sol.controls[0].clone();
        warm = sol.controls;

        let (sys_env, cs_env) = scene.assemble(&state, &zero_v, &u0)?;
        let res = cf_step(&sys_env, &cs_env, &CfParams::exact(scene.k_scene))?;
        state = integrate_pose(&state, &res.v_plus, scene.h)?;
        steps += 1;
        if tracker.update(task.within_tolerance(&state, scene.mpc_object)?) {
            success = true;
            break;
        }
    }
    let pose = &state.object_poses[scene.mpc_object];
    Ok(TrialRecord {
        success,
        steps,
        final_pos_err: (pose.position - task.target_position).norm(),
        final_quat_err: crate::se3::quat_error(&pose.orientation, &task.target_orientation)?,
        mean_solve_ms: 1e3 * solve_seconds / steps.max(1) as f64,
        mean_opt_iterations: opt_iterations as f64 / steps.max(1) as f64,
    })
}

/// Task family for sampled goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Ground reposition with a free yaw target.
    Rotation,
    /// Adds pitch and roll to the target orientation.
    Flipping,
    /// Lifted target position with an arbitrary axis target rotation.
    InAir,
    /// Narrower start and yaw ranges, looser orientation tolerance.
    TrifingerLike,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(Self::Rotation),
            "flipping" => Ok(Self::Flipping),
            "in_air" => Ok(Self::InAir),
            "trifinger_like" => Ok(Self::TrifingerLike),
            other => Err(Error::InvalidArgument(format!(
                "unknown task '{other}', expected rotation, flipping, in_air, or trifinger_like"
            ))),
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Samples an initial state and goal for one seeded trial. The object starts
/// at its settled height with the fingertips re-centered around it.
pub fn sample_task(
    scene: &Scene,
    kind: TaskKind,
    seed: u64,
) -> Result<(GeneralizedPosition, TaskSpec)> {
    use std::f64::consts::{FRAC_PI_2, PI};
    if scene.finger_offsets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "scene '{}' has no fingertips to run tasks with",
            scene.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settled = settle(scene, StepperChoice::Cf, 50)?;
    let settled_z = settled.object_poses[scene.mpc_object].position.z;

    let (start_range, start_yaw) = match kind {
        TaskKind::TrifingerLike => (0.05, FRAC_PI_2),
        _ => (0.025, PI),
    };
    let x0 = rng.gen_range(-start_range..start_range);
    let y0 = rng.gen_range(-start_range..start_range);
    let yaw0 = rng.gen_range(-start_yaw..start_yaw);

    let mut initial = settled.clone();
    {
        let pose = &mut initial.object_poses[scene.mpc_object];
        pose.position.x = x0;
        pose.position.y = y0;
        pose.orientation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw0);
    }
    // re-center the fingertip ring on the sampled object position
    let nominal = &scene.initial_state;
    for &off in &scene.finger_offsets {
        let dx = nominal.robot_coords[off] - nominal.object_poses[scene.mpc_object].position.x;
        let dy = nominal.robot_coords[off + 1] - nominal.object_poses[scene.mpc_object].position.y;
        initial.robot_coords[off] = x0 + dx;
        initial.robot_coords[off + 1] = y0 + dy;
        initial.robot_coords[off + 2] = nominal.robot_coords[off + 2];
    }

    let (goal_range, goal_yaw) = match kind {
        TaskKind::TrifingerLike => (0.05, FRAC_PI_2),
        _ => (0.1, PI),
    };
    let gx = rng.gen_range(-goal_range..goal_range);
    let gy = rng.gen_range(-goal_range..goal_range);
    let gz = match kind {
        TaskKind::InAir => rng.gen_range(0.03..0.08),
        _ => settled_z,
    };
    let target_orientation = match kind {
        TaskKind::Rotation | TaskKind::TrifingerLike => {
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.gen_range(-goal_yaw..goal_yaw))
        }
        TaskKind::Flipping => {
            let yaw = rng.gen_range(-PI..PI);
            let pitch = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
            let roll = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
                * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch)
                * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), roll)
        }
        TaskKind::InAir => {
            let axis = Vector3::new(
                0.1 * standard_normal(&mut rng),
                1.0 + 0.1 * standard_normal(&mut rng),
                1.0 + 0.1 * standard_normal(&mut rng),
            );
            UnitQuaternion::from_scaled_axis(axis.normalize() * rng.gen_range(-PI..PI))
        }
    };
    let (pos_tol, quat_tol, max_steps) = match kind {
        TaskKind::TrifingerLike => (0.02, 0.04, 500),
        _ => (0.02, 0.015, 2000),
    };
    Ok((
        initial,
        TaskSpec {
            target_position: Vector3::new(gx, gy, gz),
            target_orientation,
            pos_tol,
            quat_tol,
            success_window: 20,
            max_steps,
        },
    ))
}

/// Timing comparison of the two steppers over the same scenario.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub steps: usize,
    pub mean_rows: f64,
    pub cf_mean_ms: f64,
    pub cf_min_ms: f64,
    pub qp_mean_ms: f64,
    pub qp_min_ms: f64,
    /// `qp_mean_ms / cf_mean_ms`.
    pub speedup: f64,
}

/// Rolls the scene out with each stepper and re-times the contact solve at
/// every state the stepper itself visited. Each solver is measured on its
/// own trajectory so the workload is exactly what a simulation with that
/// method costs.
pub fn bench_steppers(scene: &Scene, steps: usize, repeats: usize) -> Result<BenchReport> {
    if steps == 0 || repeats == 0 {
        return Err(Error::InvalidArgument("bench needs at least one step and repeat".into()));
    }
    let mut rows_total = 0usize;
    let mut cf_total = 0.0;
    let mut cf_min = f64::MAX;
    let mut qp_total = 0.0;
    let mut qp_min = f64::MAX;
    for choice in [StepperChoice::Cf, StepperChoice::Qp] {
        let reference = run_simulation(scene, choice, steps)?;
        for step in 0..steps {
            let (sys, cs) = scene.assemble(
                &reference.states[step],
                &reference.velocities[step],
                &reference.controls[step],
            )?;
            if matches!(choice, StepperChoice::Cf) {
                rows_total += cs.n_rows();
            }
            for _ in 0..repeats {
                let t0 = Instant::now();
                match choice {
                    StepperChoice::Cf => {
                        let out = cf_step(&sys, &cs, &CfParams::exact(scene.k_scene))?;
                        let dt = t0.elapsed().as_secs_f64();
                        cf_total += dt;
                        cf_min = cf_min.min(dt);
                        std::hint::black_box(&out.beta_plus);
                    }
                    StepperChoice::Qp | StepperChoice::CfExtended => {
                        let out = qp_step(&sys, &cs)?;
                        let dt = t0.elapsed().as_secs_f64();
                        qp_total += dt;
                        qp_min = qp_min.min(dt);
                        std::hint::black_box(&out.beta_plus);
                    }
                }
            }
        }
    }
    let n = (steps * repeats) as f64;
    let cf_mean_ms = 1e3 * cf_total / n;
    let qp_mean_ms = 1e3 * qp_total / n;
    Ok(BenchReport {
        steps,
        mean_rows: rows_total as f64 / steps as f64,
        cf_mean_ms,
        cf_min_ms: 1e3 * cf_min,
        qp_mean_ms,
        qp_min_ms: 1e3 * qp_min,
        speedup: qp_mean_ms / cf_mean_ms,
    })
}

fn cube_inertia(mass: f64, edge: f64) -> Matrix3<f64> {
    Matrix3::identity() * (mass * edge * edge / 6.0)
}

fn ground() -> SceneBody {
    SceneBody {
        shape: Shape::HalfSpace,
        motion: BodyMotion::Fixed,
        base_pose: Pose::identity(),
    }
}

fn free_cube(index: usize, half: f64) -> SceneBody {
    SceneBody {
        shape: Shape::Box { half_extents: Vector3::new(half, half, half) },
        motion: BodyMotion::Free { index },
        base_pose: Pose::identity(),
    }
}

fn sliding_cube_scene() -> Result<Scene> {
    let mass = 0.008;
    let edge = 0.06;
    Ok(Scene {
        name: "sliding_cube".into(),
        bodies: vec![ground(), free_cube(0, edge / 2.0)],
        friction: FrictionTable::uniform(0.5)?,
        geometry: GeometryConfig { contact_margin: 1e-3, n_tangent_directions: 2, ..GeometryConfig::default() },
        dynamics: SceneDynamics::FullDynamics {
            masses: vec![mass],
            inertias: vec![cube_inertia(mass, edge)],
            gravity: Vector3::new(0.0, 0.0, -9.81),
            external_wrench: vec![Vector6::zeros()],
        },
        h: 2e-3,
        k_scene: 1.0,
        d_scene: 0.3,
        initial_state: GeneralizedPosition {
            object_poses: vec![Pose {
                position: Vector3::new(0.0, 0.0, edge / 2.0),
                orientation: UnitQuaternion::identity(),
            }],
            robot_coords: DVector::zeros(0),
        },
        initial_velocity: GeneralizedVelocity {
            object_twists: vec![crate::se3::Twist {
                linear: Vector3::new(0.0, 2.0, 0.0),
                angular: Vector3::zeros(),
            }],
            robot_vel: DVector::zeros(0),
        },
        layout: StateLayout { n_objects: 1, n_robot: 0 },
        default_control: DVector::zeros(0),
        mpc_object: 0,
        finger_offsets: vec![],
    })
}

fn falling_cube_scene() -> Result<Scene> {
    let mass = 0.01;
    let edge = 0.06;
    let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(0.577, 0.577, 0.577, 0.0));
    Ok(Scene {
        name: "falling_cube".into(),
        bodies: vec![ground(), free_cube(0, edge / 2.0)],
        friction: FrictionTable::uniform(0.5)?,
        geometry: GeometryConfig { contact_margin: 1e-3, ..GeometryConfig::default() },
        dynamics: SceneDynamics::FullDynamics {
            masses: vec![mass],
            inertias: vec![cube_inertia(mass, edge)],
            gravity: Vector3::new(0.0, 0.0, -9.81),
            external_wrench: vec![Vector6::zeros()],
        },
        h: 2e-3,
        k_scene: 1.0,
        d_scene: 0.3,
        initial_state: GeneralizedPosition {
            object_poses: vec![Pose {
                position: Vector3::new(0.1, 0.0, 0.2),
                orientation: quat,
            }],
            robot_coords: DVector::zeros(0),
        },
        initial_velocity: GeneralizedVelocity {
            object_twists: vec![crate::se3::Twist {
                linear: Vector3::new(1.0, 0.0, 0.0),
                angular: Vector3::new(20.0, 0.0, 0.0),
            }],
            robot_vel: DVector::zeros(0),
        },
        layout: StateLayout { n_objects: 1, n_robot: 0 },
        default_control: DVector::zeros(0),
        mpc_object: 0,
        finger_offsets: vec![],
    })
}

fn sphere_two_planes_scene() -> Result<Scene> {
    let radius = 0.05;
    let gap = 0.102;
    // Heavy enough that per-row proportional feedback (h/m)(kh + d) stays
    // well inside the stable band even with four rows firing at once.
    let mass = 0.5;
    let top_pose = Pose {
        position: Vector3::new(0.0, 0.0, gap),
        orientation: UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
    };
    Ok(Scene {
        name: "sphere_two_planes".into(),
        bodies: vec![
            ground(),
            SceneBody { shape: Shape::HalfSpace, motion: BodyMotion::Fixed, base_pose: top_pose },
            SceneBody {
                shape: Shape::Sphere { radius },
                motion: BodyMotion::Free { index: 0 },
                base_pose: Pose::identity(),
            },
        ],
        friction: FrictionTable::uniform(0.3)?,
        geometry: GeometryConfig { contact_margin: 0.03, ..GeometryConfig::default() },
        dynamics: SceneDynamics::FullDynamics {
            masses: vec![mass],
            // rotation suppressed: the slab models pure translation
            inertias: vec![Matrix3::identity() * 1e3],
            // weight support at this stiffness would need a sink far beyond the
            // 2 mm clearance, so the channel runs gravity-free and the squeeze
            // geometry alone governs the motion
            gravity: Vector3::zeros(),
            external_wrench: vec![Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)],
        },
        h: 0.01,
        k_scene: 20.0,
        d_scene: 6.0,
        initial_state: GeneralizedPosition {
            object_poses: vec![Pose {
                position: Vector3::new(0.0, 0.0, gap / 2.0),
                orientation: UnitQuaternion::identity(),
            }],
            robot_coords: DVector::zeros(0),
        },
        initial_velocity: GeneralizedVelocity::zero(StateLayout { n_objects: 1, n_robot: 0 }),
        layout: StateLayout { n_objects: 1, n_robot: 0 },
        default_control: DVector::zeros(0),
        mpc_object: 0,
        finger_offsets: vec![],
    })
}

fn push_boxes_scene(n_cubes: usize) -> Result<Scene> {
    if n_cubes == 0 {
        return Err(Error::InvalidArgument("push_boxes needs at least one cube".into()));
    }
    let half = 0.03;
    let spacing = 2.0 * half + 5e-4;
    let mut bodies = vec![ground()];
    let mut poses = Vec::with_capacity(n_cubes);
    for i in 0..n_cubes {
        bodies.push(free_cube(i, half));
        poses.push(Pose {
            position: Vector3::new(i as f64 * spacing, 0.0, half),
            orientation: UnitQuaternion::identity(),
        });
    }
    // pushing bar behind the first cube, one actuated coordinate along x
    bodies.push(SceneBody {
        shape: Shape::Box { half_extents: Vector3::new(5e-3, 0.08, half) },
        motion: BodyMotion::Actuated { axes: vec![(0, Vector3::x())] },
        base_pose: Pose {
            position: Vector3::new(-half - 5e-4 - 5e-3, 0.0, half),
            orientation: UnitQuaternion::identity(),
        },
    });
    let layout = StateLayout { n_objects: n_cubes, n_robot: 1 };
    Ok(Scene {
        name: format!("push_boxes_{n_cubes}"),
        bodies,
        friction: FrictionTable::uniform(0.5)?,
        geometry: GeometryConfig { contact_margin: 0.01, ..GeometryConfig::default() },
        dynamics: SceneDynamics::QuasiDynamic {
            object_q_diag: vec![Vector6::new(1000.0, 1000.0, 1000.0, 0.6, 0.6, 0.6); n_cubes],
            robot_stiffness: DVector::from_element(1, 500.0),
            tau_object: vec![Vector6::new(0.0, 0.0, -0.0981, 0.0, 0.0, 0.0); n_cubes],
            tau_robot: DVector::zeros(1),
        },
        h: 0.02,
        // stiff enough that the bar transmits the whole train's friction
        // through about a millimeter of overlap instead of tunneling
        k_scene: 100.0,
        d_scene: 0.0,
        initial_state: GeneralizedPosition { object_poses: poses, robot_coords: DVector::zeros(1) },
        initial_velocity: GeneralizedVelocity::zero(layout),
        layout,
        default_control: DVector::from_element(1, 1e-3),
        mpc_object: 0,
        finger_offsets: vec![],
    })
}

fn fingertips_box_scene() -> Result<Scene> {
    let half = 0.03;
    let ring_radius = 0.06;
    let n_fingers = 3;
    let mut bodies = vec![ground(), free_cube(0, half)];
    let mut coords = DVector::zeros(3 * n_fingers);
    for i in 0..n_fingers {
        let theta = i as f64 * std::f64::consts::TAU / n_fingers as f64;
        bodies.push(SceneBody {
            shape: Shape::Sphere { radius: 0.01 },
            motion: BodyMotion::Actuated {
                axes: vec![
                    (3 * i, Vector3::x()),
                    (3 * i + 1, Vector3::y()),
                    (3 * i + 2, Vector3::z()),
                ],
            },
            base_pose: Pose::identity(),
        });
        coords[3 * i] = ring_radius * theta.cos();
        coords[3 * i + 1] = ring_radius * theta.sin();
        coords[3 * i + 2] = half;
    }
    let layout = StateLayout { n_objects: 1, n_robot: 3 * n_fingers };
    Ok(Scene {
        name: "fingertips_box".into(),
        bodies,
        friction: FrictionTable::uniform(0.5)?,
        geometry: GeometryConfig { contact_margin: 0.01, ..GeometryConfig::default() },
        dynamics: SceneDynamics::QuasiDynamic {
            object_q_diag: vec![Vector6::new(50.0, 50.0, 50.0, 0.05, 0.05, 0.05)],
            robot_stiffness: DVector::from_element(3 * n_fingers, 100.0),
            tau_object: vec![Vector6::new(0.0, 0.0, -0.0981, 0.0, 0.0, 0.0)],
            tau_robot: DVector::zeros(3 * n_fingers),
        },
        h: 0.1,
        k_scene: 1.0,
        d_scene: 0.0,
        initial_state: GeneralizedPosition {
            object_poses: vec![Pose {
                position: Vector3::new(0.0, 0.0, half),
                orientation: UnitQuaternion::identity(),
            }],
            robot_coords: coords,
        },
        initial_velocity: GeneralizedVelocity::zero(layout),
        layout,
        default_control: DVector::zeros(3 * n_fingers),
        mpc_object: 0,
        finger_offsets: vec![0, 3, 6],
    })
}

/// Builds one of the named scenes, applying any option overrides.
pub fn build_scene(name: &str, options: &SceneOptions) -> Result<Scene> {
    let mut scene = match name {
        "sliding_cube" => sliding_cube_scene()?,
        "falling_cube" => falling_cube_scene()?,
        "sphere_two_planes" => sphere_two_planes_scene()?,
        "push_boxes" => push_boxes_scene(options.n_cubes)?,
        "fingertips_box" => fingertips_box_scene()?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown scene '{other}', expected sliding_cube, falling_cube, \
                 sphere_two_planes, push_boxes, or fingertips_box"
            )))
        }
    };
    if let Some(k) = options.k {
        scene.k_scene = k;
    }
    if let Some(d) = options.d {
        scene.d_scene = d;
    }
    if let Some(h) = options.h {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
        }
        scene.h = h;
        if let SceneDynamics::QuasiDynamic { .. } = scene.dynamics {
            // quasi-dynamic diagonals are given directly, only the step changes
        }
    }
    if let Some(margin) = options.margin {
        scene.geometry.contact_margin = margin;
    }
    if let Some(mu) = options.mu {
        scene.friction = FrictionTable::uniform(mu)?;
    }
    scene.geometry.validate()?;
    Ok(scene)
}

/// Straight-line distance of the first object from its start over a trace.
pub fn travel_distance(trace: &SimTrace, object: usize) -> f64 {
    let a = trace.states.first().unwrap().object_poses[object].position;
    let b = trace.states.last().unwrap().object_poses[object].position;
    (Vector2::new(b.x, b.y) - Vector2::new(a.x, a.y)).norm()
}
