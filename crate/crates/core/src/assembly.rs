//! From contact points to stacked contact Jacobians and linearized systems.
//!
//! A contact row measures the normal-direction relative velocity of the
//! witness point, `jn v = n . (v_a(w) - v_b(w))`, positive when separating.
//! Tangent rows do the same along each friction direction. The stacked
//! matrix combines them as `jn - mu jd` per direction, grouped contact-major,
//! with the signed distance repeated per direction. Steppers consume the
//! stack together with a step-scaled quadratic model `(Q, b)` of the free
//! dynamics:
//!
//! - quasi-dynamic: `Q = blkdiag(eps M_o / h^2, K_r)`, `b = (tau_o, K_r u + tau_r)`
//! - full:          `Q = M(q) / h^2`,                 `b = M v / h + tau(q, v)`

use nalgebra::{DMatrix, DVector, Matrix3, RowDVector, Vector3, Vector6};

use crate::collision::ContactPoint;
use crate::se3::{GeneralizedPosition, GeneralizedVelocity, StateLayout};
use crate::{Error, Result};

/// How one collision body maps into generalized velocity space.
#[derive(Debug, Clone)]
pub enum BodyMotion {
    /// Free rigid body in object slot `index` (6 velocity coordinates).
    Free { index: usize },
    /// Actuated translating body: world velocity is the sum of
    /// `v_robot[coord] * axis` over its `(coord, axis)` pairs.
    Actuated { axes: Vec<(usize, Vector3<f64>)> },
    /// Part of the static environment.
    Fixed,
}

/// Jacobian rows of a single contact plus the geometry needed to decompose
/// its impulses later.
#[derive(Debug, Clone)]
pub struct ContactJacobianBlock {
    pub normal_row: RowDVector<f64>,
    /// One row per tangent direction, same order as `tangent_dirs`.
    pub tangent_rows: DMatrix<f64>,
    pub normal: Vector3<f64>,
    pub tangent_dirs: Vec<Vector3<f64>>,
    pub mu: f64,
    pub phi: f64,
}

/// Builds the normal and tangent rows of one contact.
///
/// `motions[i]` describes how collision body `i` moves with the generalized
/// velocity; free bodies take their torque arm from the matching object pose
/// in `q`.
pub fn contact_jacobian(
    contact: &ContactPoint,
    motions: &[BodyMotion],
    q: &GeneralizedPosition,
) -> Result<ContactJacobianBlock> {
    let layout = q.layout();
    let n = layout.vel_dim();
    for side in [contact.body_a, contact.body_b] {
        if side >= motions.len() {
            return Err(Error::DimensionMismatch(format!(
                "contact references body {side}, only {} motions given",
                motions.len()
            )));
        }
    }
    let fill = |dir: &Vector3<f64>| -> Result<RowDVector<f64>> {
        let mut row = RowDVector::zeros(n);
        for (body, sign) in [(contact.body_a, 1.0), (contact.body_b, -1.0)] {
            match &motions[body] {
                BodyMotion::Free { index } => {
                    let pose = q.object_poses.get(*index).ok_or_else(|| {
                        Error::DimensionMismatch(format!(
                            "free body index {index} out of range for {} objects",
                            layout.n_objects
                        ))
                    })?;
                    let arm = contact.witness - pose.position;
                    let ang = arm.cross(dir);
                    let off = layout.object_vel_offset(*index);
                    for k in 0..3 {
                        row[off + k] += sign * dir[k];
                        row[off + 3 + k] += sign * ang[k];
                    }
                }
                BodyMotion::Actuated { axes } => {
                    let base = layout.robot_vel_offset();
                    for (coord, axis) in axes {
                        if *coord >= layout.n_robot {
                            return Err(Error::DimensionMismatch(format!(
                                "actuated coord {coord} out of range for {} robot dofs",
                                layout.n_robot
                            )));
                        }
                        row[base + coord] += sign * dir.dot(axis);
                    }
                }
                BodyMotion::Fixed => {}
            }
        }
        Ok(row)
    };
    let normal_row = fill(&contact.normal)?;
    let mut tangent_rows = DMatrix::zeros(contact.tangent_dirs.len(), n);
    for (j, d) in contact.tangent_dirs.iter().enumerate() {
        tangent_rows.row_mut(j).copy_from(&fill(d)?);
    }
    Ok(ContactJacobianBlock {
        normal_row,
        tangent_rows,
        normal: contact.normal,
        tangent_dirs: contact.tangent_dirs.clone(),
        mu: contact.friction_mu,
        phi: contact.phi,
    })
}

/// Geometry retained per contact for force decomposition.
#[derive(Debug, Clone)]
pub struct ContactMeta {
    pub normal: Vector3<f64>,
    pub tangent_dirs: Vec<Vector3<f64>>,
    pub mu: f64,
    pub phi: f64,
}

/// Stacked friction-combined contact rows for one step.
#[derive(Debug, Clone)]
pub struct ContactSystem {
    j_tilde: DMatrix<f64>,
    phi_tilde: DVector<f64>,
    contacts: Vec<ContactMeta>,
}

impl ContactSystem {
    /// Empty system acting on `n_dofs` coordinates.
    pub fn empty(n_dofs: usize) -> Self {
        Self {
            j_tilde: DMatrix::zeros(0, n_dofs),
            phi_tilde: DVector::zeros(0),
            contacts: Vec::new(),
        }
    }

    /// Builds a system from raw stacked rows, without per-contact geometry.
    /// Intended for solver-level tests; force decomposition is unavailable.
    pub fn from_raw_rows(j_tilde: DMatrix<f64>, phi_tilde: DVector<f64>) -> Result<Self> {
        if j_tilde.nrows() != phi_tilde.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows vs {} distances",
                j_tilde.nrows(),
                phi_tilde.len()
            )));
        }
        Ok(Self { j_tilde, phi_tilde, contacts: Vec::new() })
    }

    pub fn j_tilde(&self) -> &DMatrix<f64> {
        &self.j_tilde
    }

    pub fn phi_tilde(&self) -> &DVector<f64> {
        &self.phi_tilde
    }

    pub fn n_rows(&self) -> usize {
        self.j_tilde.nrows()
    }

    pub fn n_dofs(&self) -> usize {
        self.j_tilde.ncols()
    }

    pub fn contacts(&self) -> &[ContactMeta] {
        &self.contacts
    }

    /// Row range of contact `i` in the stack.
    pub fn contact_rows(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.contacts[..i].iter().map(|c| c.tangent_dirs.len()).sum();
        start..start + self.contacts[i].tangent_dirs.len()
    }
}

/// Stacks per-contact blocks into `j_tilde` rows `jn - mu jd` and repeated
/// distances, contact-major with directions in block order.
pub fn stack_contact_system(blocks: &[ContactJacobianBlock]) -> Result<ContactSystem> {
    let n = blocks.first().map_or(0, |b| b.normal_row.len());
    let total_rows: usize = blocks.iter().map(|b| b.tangent_dirs.len()).sum();
    let mut j_tilde = DMatrix::zeros(total_rows, n);
    let mut phi_tilde = DVector::zeros(total_rows);
    let mut contacts = Vec::with_capacity(blocks.len());
    let mut r = 0;
    for block in blocks {
        if block.normal_row.len() != n || block.tangent_rows.ncols() != n {
            return Err(Error::DimensionMismatch(
                "contact blocks span different coordinate counts".into(),
            ));
        }
        if block.tangent_rows.nrows() != block.tangent_dirs.len() {
            return Err(Error::DimensionMismatch(
                "tangent rows do not match tangent directions".into(),
            ));
        }
        for j in 0..block.tangent_dirs.len() {
            let row = &block.normal_row - block.mu * block.tangent_rows.row(j);
            j_tilde.row_mut(r).copy_from(&row);
            phi_tilde[r] = block.phi;
            r += 1;
        }
        contacts.push(ContactMeta {
            normal: block.normal,
            tangent_dirs: block.tangent_dirs.clone(),
            mu: block.mu,
            phi: block.phi,
        });
    }
    Ok(ContactSystem { j_tilde, phi_tilde, contacts })
}

/// Step-scaled quadratic model consumed by the steppers.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub q_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub h: f64,
    pub layout: StateLayout,
}

impl LinearizedSystem {
    pub fn validate(&self) -> Result<()> {
        if self.h <= 0.0 || !self.h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        let n = self.layout.vel_dim();
        if self.q_mat.nrows() != n || self.q_mat.ncols() != n || self.b_vec.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "system of size {}x{} with b of {} does not fit layout dim {n}",
                self.q_mat.nrows(),
                self.q_mat.ncols(),
                self.b_vec.len()
            )));
        }
        Ok(())
    }
}

/// Parameters of the quasi-dynamic model: a regularized diagonal object mass
/// `eps M_o / h^2` per object, joint stiffness for the actuated coordinates,
/// and constant generalized forces.
#[derive(Debug, Clone)]
pub struct QuasiDynamicParams {
    /// One `eps M_o / h^2` diagonal (3 linear, 3 angular) per object.
    pub object_q_diag: Vec<Vector6<f64>>,
    /// Joint stiffness diagonal `K_r`.
    pub robot_stiffness: DVector<f64>,
    /// Generalized force on each object (gravity and externals).
    pub tau_object: Vec<Vector6<f64>>,
    /// Generalized force on the robot coordinates.
    pub tau_robot: DVector<f64>,
    pub h: f64,
}

impl QuasiDynamicParams {
    pub fn layout(&self) -> StateLayout {
        StateLayout { n_objects: self.object_q_diag.len(), n_robot: self.robot_stiffness.len() }
    }

    /// `d b / d u`: controls enter only through the joint springs.
    pub fn control_jacobian(&self) -> DMatrix<f64> {
        let layout = self.layout();
        let mut s = DMatrix::zeros(layout.vel_dim(), layout.n_robot);
        for j in 0..layout.n_robot {
            s[(layout.robot_vel_offset() + j, j)] = self.robot_stiffness[j];
        }
        s
    }
}

/// Assembles the quasi-dynamic `(Q, b)` for one commanded joint displacement.
pub fn assemble_quasi_dynamic(
    params: &QuasiDynamicParams,
    u: &DVector<f64>,
) -> Result<LinearizedSystem> {
    let layout = params.layout();
    if params.tau_object.len() != layout.n_objects {
        return Err(Error::DimensionMismatch(format!(
            "{} object forces for {} objects",
            params.tau_object.len(),
            layout.n_objects
        )));
    }
    if u.len() != layout.n_robot || params.tau_robot.len() != layout.n_robot {
        return Err(Error::DimensionMismatch(format!(
            "control of {} and robot force of {} must both match {} robot dofs",
            u.len(),
            params.tau_robot.len(),
            layout.n_robot
        )));
    }
    if params.h <= 0.0 || !params.h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {}",
            params.h
        )));
    }
    let n = layout.vel_dim();
    let mut q_mat = DMatrix::zeros(n, n);
    let mut b_vec = DVector::zeros(n);
    for (i, diag) in params.object_q_diag.iter().enumerate() {
        let off = layout.object_vel_offset(i);
        for k in 0..6 {
            if diag[k] <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "object {i} regularized mass diagonal must be positive, got {}",
                    diag[k]
                )));
            }
            q_mat[(off + k, off + k)] = diag[k];
            b_vec[off + k] = params.tau_object[i][k];
        }
    }
    let roff = layout.robot_vel_offset();
    for j in 0..layout.n_robot {
        if params.robot_stiffness[j] <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "robot stiffness must be positive, got {}",
                params.robot_stiffness[j]
            )));
        }
        q_mat[(roff + j, roff + j)] = params.robot_stiffness[j];
        b_vec[roff + j] = params.robot_stiffness[j] * u[j] + params.tau_robot[j];
    }
    Ok(LinearizedSystem { q_mat, b_vec, h: params.h, layout })
}

/// Parameters of the full dynamic model for free objects only.
#[derive(Debug, Clone)]
pub struct DynamicParams {
    pub masses: Vec<f64>,
    /// Body-frame rotational inertia per object.
    pub inertias: Vec<Matrix3<f64>>,
    pub gravity: Vector3<f64>,
    /// Constant world-frame (force, torque) applied per object.
    pub external_wrench: Vec<Vector6<f64>>,
    pub h: f64,
}

/// Assembles the full-dynamic `(Q, b)` at the current state: `Q = M/h^2` and
/// `b = M v / h + tau` with gravity, external wrenches, and the gyroscopic
/// torque `-w x (I w)`.
pub fn assemble_full_dynamics(
    params: &DynamicParams,
    q: &GeneralizedPosition,
    v: &GeneralizedVelocity,
) -> Result<LinearizedSystem> {
    let layout = q.layout();
    if layout.n_robot != 0 {
        return Err(Error::InvalidArgument(
            "full dynamics supports free objects only, robot coordinates present".into(),
        ));
    }
    if q.layout() != v.layout() {
        return Err(Error::DimensionMismatch(
            "position and velocity layouts differ".into(),
        ));
    }
    if params.masses.len() != layout.n_objects
        || params.inertias.len() != layout.n_objects
        || params.external_wrench.len() != layout.n_objects
    {
        return Err(Error::DimensionMismatch(format!(
            "dynamic parameters sized for {} objects, state has {}",
            params.masses.len(),
            layout.n_objects
        )));
    }
    if params.h <= 0.0 || !params.h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {}",
            params.h
        )));
    }
    let n = layout.vel_dim();
    let h = params.h;
    let mut q_mat = DMatrix::zeros(n, n);
    let mut b_vec = DVector::zeros(n);
    for i in 0..layout.n_objects {
        let m = params.masses[i];
        if m <= 0.0 {
            return Err(Error::InvalidArgument(format!("mass must be positive, got {m}")));
        }
        let rot = q.object_poses[i].orientation.to_rotation_matrix();
        let inertia_w = rot.matrix() * params.inertias[i] * rot.matrix().transpose();
        let off = layout.object_vel_offset(i);
        for k in 0..3 {
            q_mat[(off + k, off + k)] = m / (h * h);
        }
        q_mat.view_mut((off + 3, off + 3), (3, 3)).copy_from(&(inertia_w / (h * h)));

        let tw = &v.object_twists[i];
        let force = m * params.gravity + params.external_wrench[i].fixed_rows::<3>(0);
        let gyro = -tw.angular.cross(&(inertia_w * tw.angular));
        let torque =
            Vector3::from(params.external_wrench[i].fixed_rows::<3>(3)) + gyro;
        // b = M v / h + tau, blockwise
        let b_lin = (m / h) * tw.linear + force;
        let b_ang = inertia_w * tw.angular / h + torque;
        for k in 0..3 {
            b_vec[off + k] = b_lin[k];
            b_vec[off + 3 + k] = b_ang[k];
        }
    }
    Ok(LinearizedSystem { q_mat, b_vec, h, layout })
}
