//! Pose and twist types, quaternion utilities, and the smooth max used by the
//! differentiable contact model.
//!
//! Conventions used throughout the crate:
//! - object poses are `(position, unit quaternion)` in world frame,
//! - twists are `(linear velocity of the body origin, angular velocity)`,
//!   both expressed in world frame,
//! - one integration step is `p' = p + h v`, `q' = exp(h w) * q`, so the
//!   angular velocity acts as a world-frame rotation increment.

use nalgebra::{DVector, Matrix4x3, Quaternion, UnitQuaternion, Vector3, Vector4};

use crate::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-6;

/// Orientation error `1 - (q1 . q2)^2`, invariant to the quaternion double
/// cover. 0 for identical rotations, 1 for a half turn.
pub fn quat_error(q1: &Quaternion<f64>, q2: &Quaternion<f64>) -> Result<f64> {
    let dot = unit_dot(q1, q2)?;
    Ok((1.0 - dot * dot).clamp(0.0, 1.0))
}

/// Geodesic rotation angle `arccos(clamp(2 (q1 . q2)^2 - 1, -1, 1))` in
/// radians, in `[0, pi]`.
pub fn quat_angle(q1: &Quaternion<f64>, q2: &Quaternion<f64>) -> Result<f64> {
    let dot = unit_dot(q1, q2)?;
    Ok((2.0 * dot * dot - 1.0).clamp(-1.0, 1.0).acos())
}

fn unit_dot(q1: &Quaternion<f64>, q2: &Quaternion<f64>) -> Result<f64> {
    for q in [q1, q2] {
        if (q.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "quaternion norm {} deviates from 1 by more than {UNIT_NORM_TOL}",
                q.norm()
            )));
        }
    }
    Ok(q1.coords.dot(&q2.coords))
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn rotation_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*w)
}

/// Jacobian of [`rotation_exp`] components `(w, x, y, z)` with respect to the
/// rotation vector. Rows follow the scalar-first component order.
pub fn rotation_exp_jacobian(w: &Vector3<f64>) -> Matrix4x3<f64> {
    let n2 = w.norm_squared();
    let n = n2.sqrt();
    // f(n) = sin(n/2)/n, c2(n) = d(f)/dn / n; series below 1e-4 keeps both
    // accurate to ~1e-16 where the closed forms lose digits.
    let (f, c2) = if n < 1e-4 {
        (0.5 - n2 / 48.0, -1.0 / 24.0 + n2 / 960.0)
    } else {
        let a = 0.5 * n;
        let f = a.sin() / n;
        (f, 0.5 * a.cos() / n2 - a.sin() / (n2 * n))
    };
    let mut jac = Matrix4x3::zeros();
    jac.row_mut(0).copy_from(&(-0.5 * f * w.transpose()));
    for r in 0..3 {
        for c in 0..3 {
            let id = if r == c { f } else { 0.0 };
            jac[(r + 1, c)] = id + c2 * w[r] * w[c];
        }
    }
    jac
}

/// Quaternion as a scalar-first 4-vector `(w, x, y, z)`.
pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    let q = q.quaternion();
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Inverse of [`quat_to_wxyz`]; normalizes the input.
pub fn wxyz_to_quat(v: &Vector4<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]))
}

/// Matrix `L(p)` with `p * q = L(p) qv` on scalar-first component vectors.
pub fn quat_left_matrix(p: &Vector4<f64>) -> nalgebra::Matrix4<f64> {
    let (w, x, y, z) = (p[0], p[1], p[2], p[3]);
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Matrix `R(q)` with `p * q = R(q) pv` on scalar-first component vectors.
pub fn quat_right_matrix(q: &Vector4<f64>) -> nalgebra::Matrix4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Smooth upper bound on `max(x, 0)`: `ln(1 + exp(gamma x)) / gamma`.
///
/// Satisfies `0 <= softplus(x) - max(x, 0) <= ln(2)/gamma` and is evaluated in
/// a branch that never overflows for large `|gamma x|`.
pub fn softplus(x: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0);
    let gx = gamma * x;
    if gx > 30.0 {
        x + (-gx).exp().ln_1p() / gamma
    } else {
        gx.exp().ln_1p() / gamma
    }
}

/// Derivative of [`softplus`] in `x`: the logistic `1/(1 + exp(-gamma x))`.
pub fn softplus_deriv(x: f64, gamma: f64) -> f64 {
    let gx = gamma * x;
    if gx >= 0.0 {
        1.0 / (1.0 + (-gx).exp())
    } else {
        let e = gx.exp();
        e / (1.0 + e)
    }
}

/// Rigid body pose in world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self { position, orientation: UnitQuaternion::identity() }
    }

    /// Maps a point from the body frame to world frame.
    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * local
    }

    /// Maps a world point into the body frame.
    pub fn inverse_transform_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (world - self.position)
    }
}

/// World-frame spatial velocity of a free body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self { linear: Vector3::zeros(), angular: Vector3::zeros() }
    }
}

/// Dimensions of the generalized coordinate blocks: free objects first, then
/// actuated robot coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_objects: usize,
    pub n_robot: usize,
}

impl StateLayout {
    pub fn vel_dim(&self) -> usize {
        6 * self.n_objects + self.n_robot
    }

    pub fn pos_dim(&self) -> usize {
        7 * self.n_objects + self.n_robot
    }

    pub fn object_vel_offset(&self, i: usize) -> usize {
        6 * i
    }

    pub fn robot_vel_offset(&self) -> usize {
        6 * self.n_objects
    }
}

/// Generalized position: one pose per free object plus robot coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPosition {
    pub object_poses: Vec<Pose>,
    pub robot_coords: DVector<f64>,
}

impl GeneralizedPosition {
    pub fn layout(&self) -> StateLayout {
        StateLayout { n_objects: self.object_poses.len(), n_robot: self.robot_coords.len() }
    }

    /// Flat coordinates `(px py pz qw qx qy qz) x objects, then robot`.
    pub fn to_flat(&self) -> DVector<f64> {
        let layout = self.layout();
        let mut out = DVector::zeros(layout.pos_dim());
        for (i, pose) in self.object_poses.iter().enumerate() {
            out.fixed_rows_mut::<3>(7 * i).copy_from(&pose.position);
            out.fixed_rows_mut::<4>(7 * i + 3).copy_from(&quat_to_wxyz(&pose.orientation));
        }
        out.rows_mut(7 * layout.n_objects, layout.n_robot).copy_from(&self.robot_coords);
        out
    }
}

/// Generalized velocity matching [`GeneralizedPosition`]: a twist per object
/// plus robot coordinate rates.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedVelocity {
    pub object_twists: Vec<Twist>,
    pub robot_vel: DVector<f64>,
}

impl GeneralizedVelocity {
    pub fn zero(layout: StateLayout) -> Self {
        Self {
            object_twists: vec![Twist::zero(); layout.n_objects],
            robot_vel: DVector::zeros(layout.n_robot),
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout { n_objects: self.object_twists.len(), n_robot: self.robot_vel.len() }
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let layout = self.layout();
        let mut out = DVector::zeros(layout.vel_dim());
        for (i, tw) in self.object_twists.iter().enumerate() {
            out.fixed_rows_mut::<3>(6 * i).copy_from(&tw.linear);
            out.fixed_rows_mut::<3>(6 * i + 3).copy_from(&tw.angular);
        }
        out.rows_mut(6 * layout.n_objects, layout.n_robot).copy_from(&self.robot_vel);
        out
    }

    pub fn from_flat(layout: StateLayout, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != layout.vel_dim() {
            return Err(Error::DimensionMismatch(format!(
                "flat velocity has {} entries, layout expects {}",
                flat.len(),
                layout.vel_dim()
            )));
        }
        let object_twists = (0..layout.n_objects)
            .map(|i| Twist {
                linear: flat.fixed_rows::<3>(6 * i).into(),
                angular: flat.fixed_rows::<3>(6 * i + 3).into(),
            })
            .collect();
        let robot_vel = flat.rows(6 * layout.n_objects, layout.n_robot).into();
        Ok(Self { object_twists, robot_vel })
    }
}

/// One explicit Euler pose step with the world-frame twist convention.
pub fn integrate_pose(
    q: &GeneralizedPosition,
    v: &GeneralizedVelocity,
    h: f64,
) -> Result<GeneralizedPosition> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    if q.layout() != v.layout() {
        return Err(Error::DimensionMismatch(format!(
            "position layout {:?} does not match velocity layout {:?}",
            q.layout(),
            v.layout()
        )));
    }
    let object_poses = q
        .object_poses
        .iter()
        .zip(&v.object_twists)
        .map(|(pose, tw)| {
            let rotated = rotation_exp(&(h * tw.angular)) * pose.orientation;
            Pose {
                position: pose.position + h * tw.linear,
                // renormalize so the unit norm survives long rollouts
                orientation: UnitQuaternion::from_quaternion(rotated.into_inner()),
            }
        })
        .collect();
    Ok(GeneralizedPosition {
        object_poses,
        robot_coords: &q.robot_coords + h * &v.robot_vel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_quat(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        UnitQuaternion::from_quaternion(q)
    }

    #[test]
    fn quat_error_is_zero_on_double_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let q = random_unit_quat(&mut rng);
            let neg = Quaternion::from(-q.quaternion().coords);
            assert!(quat_error(q.quaternion(), q.quaternion()).unwrap() < 1e-15);
            assert!(quat_error(q.quaternion(), &neg).unwrap() < 1e-15);
        }
    }

    #[test]
    fn quat_error_range_and_known_values() {
        let id = UnitQuaternion::identity();
        let yaw90 = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let half_turn = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        assert_relative_eq!(
            quat_error(id.quaternion(), yaw90.quaternion()).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            quat_error(id.quaternion(), half_turn.quaternion()).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let a = random_unit_quat(&mut rng);
            let b = random_unit_quat(&mut rng);
            let e = quat_error(a.quaternion(), b.quaternion()).unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn quat_error_rejects_non_unit_input() {
        let q = Quaternion::new(1.0, 0.2, 0.0, 0.0);
        assert!(matches!(
            quat_error(&q, &Quaternion::new(1.0, 0.0, 0.0, 0.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn quat_angle_recovers_relative_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let base = random_unit_quat(&mut rng);
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let axis = nalgebra::Unit::new_normalize(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
            let rotated = UnitQuaternion::from_axis_angle(&axis, angle) * base;
            let got = quat_angle(base.quaternion(), rotated.quaternion()).unwrap();
            assert_relative_eq!(got, angle, epsilon = 1e-9);
        }
        let id = UnitQuaternion::identity();
        assert!(quat_angle(id.quaternion(), id.quaternion()).unwrap() < 1e-7);
    }

    #[test]
    fn rotation_exp_matches_axis_angle() {
        let q = rotation_exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        let expected =
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        assert!(quat_error(q.quaternion(), expected.quaternion()).unwrap() < 1e-14);
        assert_eq!(rotation_exp(&Vector3::zeros()), UnitQuaternion::identity());
    }

    #[test]
    fn rotation_exp_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for scale in [1e-9, 1e-5, 0.1, 1.0, 3.0] {
            for _ in 0..40 {
                let w = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * scale;
                let jac = rotation_exp_jacobian(&w);
                let eps = 1e-7;
                for c in 0..3 {
                    let mut wp = w;
                    let mut wm = w;
                    wp[c] += eps;
                    wm[c] -= eps;
                    let qp = quat_to_wxyz(&rotation_exp(&wp));
                    let qm = quat_to_wxyz(&rotation_exp(&wm));
                    let fd = (qp - qm) / (2.0 * eps);
                    for r in 0..4 {
                        assert!(
                            (jac[(r, c)] - fd[r]).abs() < 1e-7,
                            "row {r} col {c}: analytic {} fd {}",
                            jac[(r, c)],
                            fd[r]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn quat_product_matrices_agree_with_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_unit_quat(&mut rng);
            let q = random_unit_quat(&mut rng);
            let prod = quat_to_wxyz(&(p * q));
            let via_left = quat_left_matrix(&quat_to_wxyz(&p)) * quat_to_wxyz(&q);
            let via_right = quat_right_matrix(&quat_to_wxyz(&q)) * quat_to_wxyz(&p);
            assert!((prod - via_left).norm() < 1e-14);
            assert!((prod - via_right).norm() < 1e-14);
        }
    }

    #[test]
    fn softplus_bounds_and_overflow_safety() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for gamma in [10.0, 100.0, 1000.0] {
            for _ in 0..1000 {
                let x = rng.gen_range(-2.0..2.0);
                let gap = softplus(x, gamma) - x.max(0.0);
                assert!(gap >= 0.0, "gap {gap} negative at x={x} gamma={gamma}");
                assert!(gap <= 2.0_f64.ln() / gamma + 1e-15);
            }
        }
        // gamma * x around +-5000 must not overflow
        assert!(softplus(50.0, 100.0).is_finite());
        assert_relative_eq!(softplus(50.0, 100.0), 50.0, max_relative = 1e-12);
        assert_eq!(softplus(-50.0, 100.0), 0.0);
    }

    #[test]
    fn softplus_deriv_is_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert_relative_eq!(softplus_deriv(0.0, 100.0), 0.5);
        for _ in 0..500 {
            let x = rng.gen_range(-0.2..0.2);
            let d = softplus_deriv(x, 100.0);
            assert!(d > 0.0 && d < 1.0);
            let eps = 1e-7;
            let fd = (softplus(x + eps, 100.0) - softplus(x - eps, 100.0)) / (2.0 * eps);
            assert_relative_eq!(d, fd, epsilon = 1e-5);
        }
        assert_relative_eq!(softplus_deriv(50.0, 100.0), 1.0, max_relative = 1e-12);
        assert_eq!(softplus_deriv(-50.0, 100.0), 0.0);
    }

    #[test]
    fn integrate_pose_applies_world_frame_twist() {
        // quarter turn about world z on top of a quarter turn about world x:
        // the result must equal Rz * Rx applied left to right in world frame.
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        let q0 = GeneralizedPosition {
            object_poses: vec![Pose { position: Vector3::new(1.0, 0.0, 0.0), orientation: rx }],
            robot_coords: DVector::from_vec(vec![0.5]),
        };
        let v = GeneralizedVelocity {
            object_twists: vec![Twist {
                linear: Vector3::new(0.0, 2.0, 0.0),
                angular: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            }],
            robot_vel: DVector::from_vec(vec![-1.0]),
        };
        let q1 = integrate_pose(&q0, &v, 1.0).unwrap();
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let expected = rz * rx;
        assert!(
            quat_error(q1.object_poses[0].orientation.quaternion(), expected.quaternion())
                .unwrap()
                < 1e-14
        );
        assert_relative_eq!(q1.object_poses[0].position.y, 2.0);
        assert_relative_eq!(q1.robot_coords[0], -0.5);
    }

    #[test]
    fn integrate_pose_preserves_unit_norm_over_long_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut q = GeneralizedPosition {
            object_poses: vec![Pose::identity()],
            robot_coords: DVector::zeros(0),
        };
        for _ in 0..100_000 {
            let v = GeneralizedVelocity {
                object_twists: vec![Twist {
                    linear: Vector3::zeros(),
                    angular: Vector3::new(
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                        rng.gen_range(-20.0..20.0),
                    ),
                }],
                robot_vel: DVector::zeros(0),
            };
            q = integrate_pose(&q, &v, 0.002).unwrap();
        }
        assert!((q.object_poses[0].orientation.quaternion().norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn integrate_pose_rejects_bad_inputs() {
        let q = GeneralizedPosition {
            object_poses: vec![Pose::identity()],
            robot_coords: DVector::zeros(2),
        };
        let v = GeneralizedVelocity::zero(StateLayout { n_objects: 1, n_robot: 3 });
        assert!(matches!(integrate_pose(&q, &v, 0.01), Err(Error::DimensionMismatch(_))));
        let v_ok = GeneralizedVelocity::zero(q.layout());
        assert!(matches!(integrate_pose(&q, &v_ok, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn flat_velocity_round_trip_preserves_block_layout() {
        let layout = StateLayout { n_objects: 2, n_robot: 3 };
        let flat = DVector::from_iterator(15, (0..15).map(|i| i as f64));
        let v = GeneralizedVelocity::from_flat(layout, &flat).unwrap();
        assert_eq!(v.object_twists[1].linear, Vector3::new(6.0, 7.0, 8.0));
        assert_eq!(v.object_twists[1].angular, Vector3::new(9.0, 10.0, 11.0));
        assert_eq!(v.robot_vel.as_slice(), &[12.0, 13.0, 14.0]);
        assert_eq!(v.to_flat(), flat);
        assert!(GeneralizedVelocity::from_flat(layout, &DVector::zeros(4)).is_err());
    }
}
