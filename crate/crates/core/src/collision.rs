//! Narrow-phase contact detection for spheres, boxes, and half-space planes.
//!
//! Supported pairs: sphere-plane, sphere-sphere, sphere-box, box-plane, and
//! box-box. Box-box and box-plane contacts come from evaluating one body's
//! signed distance at sampled surface points of the other (8 vertices plus 6
//! face centers for a box), keeping the deepest points per pair. Everything
//! here is deterministic: contacts are ordered by body index pair, then by
//! increasing distance, then by witness point coordinates.

use std::collections::HashMap;

use nalgebra::{UnitQuaternion, Vector3};

use crate::se3::Pose;
use crate::{Error, Result};

/// Collision primitive in its body frame. The half-space occupies `z <= 0`
/// locally; its boundary plane passes through the body origin with outward
/// normal along local `+z`.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vector3<f64> },
    HalfSpace,
}

impl Shape {
    fn kind(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::HalfSpace => "half-space",
        }
    }
}

/// A shape instanced at a world pose for one detection pass.
#[derive(Debug, Clone)]
pub struct CollisionBody {
    pub shape: Shape,
    pub pose: Pose,
}

/// Detection tuning shared by every pair.
#[derive(Debug, Clone)]
pub struct GeometryConfig {
    /// Contacts with separation above this are discarded.
    pub contact_margin: f64,
    /// Deepest contacts kept per body pair.
    pub max_contacts_per_pair: usize,
    /// Number of tangent directions per contact; even, at least 2.
    pub n_tangent_directions: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { contact_margin: 0.01, max_contacts_per_pair: 4, n_tangent_directions: 4 }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_margin >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "contact margin must be non-negative, got {}",
                self.contact_margin
            )));
        }
        if self.max_contacts_per_pair == 0 {
            return Err(Error::InvalidArgument(
                "max contacts per pair must be at least 1".into(),
            ));
        }
        check_direction_count(self.n_tangent_directions)
    }
}

/// Per-pair friction coefficients with a shared default.
#[derive(Debug, Clone)]
pub struct FrictionTable {
    default_mu: f64,
    overrides: HashMap<(usize, usize), f64>,
}

impl FrictionTable {
    pub fn uniform(mu: f64) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("friction must be non-negative, got {mu}")));
        }
        Ok(Self { default_mu: mu, overrides: HashMap::new() })
    }

    /// Sets the coefficient for one unordered body pair.
    pub fn set_pair(&mut self, a: usize, b: usize, mu: f64) -> Result<()> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("friction must be non-negative, got {mu}")));
        }
        self.overrides.insert((a.min(b), a.max(b)), mu);
        Ok(())
    }

    pub fn lookup(&self, a: usize, b: usize) -> f64 {
        *self.overrides.get(&(a.min(b), a.max(b))).unwrap_or(&self.default_mu)
    }
}

/// One contact between `body_a` and `body_b`. The normal is unit length and
/// points from `b` into `a`, the direction of increasing separation. `phi` is
/// the signed distance, negative when penetrating, reported unclamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub body_a: usize,
    pub body_b: usize,
    pub witness: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub phi: f64,
    pub tangent_dirs: Vec<Vector3<f64>>,
    pub friction_mu: f64,
}

fn check_direction_count(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "tangent direction count must be even and at least 2, got {n}"
        )));
    }
    Ok(())
}

/// Deterministic evenly spaced tangent directions around a unit normal.
///
/// The reference axis is the standard basis vector least aligned with the
/// normal (lowest index on ties); the first direction is
/// `normalize(normal x axis)` and the rest are rotations of it about the
/// normal by multiples of `2 pi / n`. Even counts make the set closed under
/// negation.
pub fn tangent_basis(normal: &Vector3<f64>, n_directions: usize) -> Result<Vec<Vector3<f64>>> {
    check_direction_count(n_directions)?;
    if (normal.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "tangent basis needs a unit normal, got norm {}",
            normal.norm()
        )));
    }
    let mut best_axis = 0;
    let mut best_dot = f64::INFINITY;
    for (i, e) in [Vector3::x(), Vector3::y(), Vector3::z()].iter().enumerate() {
        let d = normal.dot(e).abs();
        if d < best_dot - 1e-15 {
            best_dot = d;
            best_axis = i;
        }
    }
    let axis = [Vector3::x(), Vector3::y(), Vector3::z()][best_axis];
    let first = normal.cross(&axis).normalize();
    let unit_normal = nalgebra::Unit::new_unchecked(*normal);
    Ok((0..n_directions)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n_directions as f64;
            UnitQuaternion::from_axis_angle(&unit_normal, angle) * first
        })
        .collect())
}

struct Candidate {
    witness: Vector3<f64>,
    normal: Vector3<f64>,
    phi: f64,
}

/// Detects contacts across all body pairs of a snapshot.
///
/// Contacts with `phi <= contact_margin` are reported, at most
/// `max_contacts_per_pair` deepest per pair, in a deterministic order. A pair
/// of half-spaces has no routine and raises an unsupported-geometry error.
pub fn detect_contacts(
    bodies: &[CollisionBody],
    friction: &FrictionTable,
    cfg: &GeometryConfig,
) -> Result<Vec<ContactPoint>> {
    cfg.validate()?;
    let mut contacts = Vec::new();
    for i in 0..bodies.len() {
        for j in (i + 1)..bodies.len() {
            // Two half-spaces are both static environment; the pair carries no contact.
            if matches!(bodies[i].shape, Shape::HalfSpace) && matches!(bodies[j].shape, Shape::HalfSpace) {
                continue;
            }
            let mut cands = pair_candidates(&bodies[i], &bodies[j])?;
            cands.retain(|c| c.phi <= cfg.contact_margin);
            cands.sort_by(|l, r| {
                l.phi
                    .total_cmp(&r.phi)
                    .then(l.witness.x.total_cmp(&r.witness.x))
                    .then(l.witness.y.total_cmp(&r.witness.y))
                    .then(l.witness.z.total_cmp(&r.witness.z))
            });
            cands.dedup_by(|l, r| (l.witness - r.witness).norm() < 1e-9);
            cands.truncate(cfg.max_contacts_per_pair);
            let mu = friction.lookup(i, j);
            for c in cands {
                let normal = c.normal.normalize();
                contacts.push(ContactPoint {
                    body_a: i,
                    body_b: j,
                    witness: c.witness,
                    normal,
                    phi: c.phi,
                    tangent_dirs: tangent_basis(&normal, cfg.n_tangent_directions)?,
                    friction_mu: mu,
                });
            }
        }
    }
    Ok(contacts)
}

/// Candidates for the pair `(a, b)` with normals oriented from `b` into `a`.
fn pair_candidates(a: &CollisionBody, b: &CollisionBody) -> Result<Vec<Candidate>> {
    use Shape::*;
    match (&a.shape, &b.shape) {
        (Sphere { radius: ra }, Sphere { radius: rb }) => {
            Ok(vec![sphere_sphere(&a.pose, *ra, &b.pose, *rb)])
        }
        (Sphere { radius }, HalfSpace) => Ok(vec![sphere_plane(&a.pose, *radius, &b.pose)]),
        (HalfSpace, Sphere { radius }) => {
            Ok(vec![flip(sphere_plane(&b.pose, *radius, &a.pose))])
        }
        (Sphere { radius }, Box { half_extents }) => {
            Ok(vec![sphere_box(&a.pose, *radius, &b.pose, half_extents)])
        }
        (Box { half_extents }, Sphere { radius }) => {
            Ok(vec![flip(sphere_box(&b.pose, *radius, &a.pose, half_extents))])
        }
        (Box { half_extents }, HalfSpace) => Ok(box_plane(&a.pose, half_extents, &b.pose)),
        (HalfSpace, Box { half_extents }) => {
            Ok(box_plane(&b.pose, half_extents, &a.pose).into_iter().map(flip).collect())
        }
        (Box { half_extents: ha }, Box { half_extents: hb }) => {
            Ok(box_box(&a.pose, ha, &b.pose, hb))
        }
        (HalfSpace, HalfSpace) => Err(Error::UnsupportedGeometry(format!(
            "{} vs {}",
            a.shape.kind(),
            b.shape.kind()
        ))),
    }
}

fn flip(mut c: Candidate) -> Candidate {
    c.normal = -c.normal;
    c
}

fn plane_normal(plane: &Pose) -> Vector3<f64> {
    plane.orientation * Vector3::z()
}

/// Signed distance and normal for a sphere above a half-space boundary.
/// Computed with the sphere as body `a`.
fn sphere_plane(sphere: &Pose, radius: f64, plane: &Pose) -> Candidate {
    let n = plane_normal(plane);
    let phi = n.dot(&(sphere.position - plane.position)) - radius;
    Candidate { witness: sphere.position - radius * n, normal: n, phi }
}

fn sphere_sphere(a: &Pose, ra: f64, b: &Pose, rb: f64) -> Candidate {
    let delta = a.position - b.position;
    let dist = delta.norm();
    let normal = if dist > 1e-12 { delta / dist } else { Vector3::z() };
    Candidate { witness: a.position - ra * normal, normal, phi: dist - ra - rb }
}

/// Box signed distance in the box local frame: distance and outward gradient.
fn box_sdf_local(p: &Vector3<f64>, he: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = p.abs() - he;
    if d.max() > 0.0 {
        let outside = d.map(|x| x.max(0.0));
        let dist = outside.norm();
        let grad = Vector3::new(
            p.x.signum() * outside.x,
            p.y.signum() * outside.y,
            p.z.signum() * outside.z,
        ) / dist;
        (dist, grad)
    } else {
        let mut axis = 0;
        for k in 1..3 {
            if d[k] > d[axis] {
                axis = k;
            }
        }
        let mut grad = Vector3::zeros();
        grad[axis] = if p[axis] >= 0.0 { 1.0 } else { -1.0 };
        (d[axis], grad)
    }
}

/// [`box_sdf_local`] for contact sampling: returns `None` for interior points
/// whose two closest faces tie, where the escape direction is ambiguous.
/// Surface samples of an equal-size aligned box land exactly on face
/// boundaries and would otherwise produce grazing contacts with sideways
/// normals.
fn box_sdf_sample(p: &Vector3<f64>, he: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let d = p.abs() - he;
    if d.max() <= 0.0 {
        let mut sorted = [d.x, d.y, d.z];
        sorted.sort_by(f64::total_cmp);
        if sorted[2] - sorted[1] < 1e-9 {
            return None;
        }
    }
    Some(box_sdf_local(p, he))
}

/// Sphere against box, computed with the sphere as body `a`.
fn sphere_box(sphere: &Pose, radius: f64, bx: &Pose, he: &Vector3<f64>) -> Candidate {
    let local = bx.inverse_transform_point(&sphere.position);
    let (dist, grad_local) = box_sdf_local(&local, he);
    let normal = bx.orientation * grad_local;
    let surface_local = local - dist * grad_local;
    Candidate { witness: bx.transform_point(&surface_local), normal, phi: dist - radius }
}

fn box_corners(he: &Vector3<f64>) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    let mut idx = 0;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                out[idx] = Vector3::new(sx * he.x, sy * he.y, sz * he.z);
                idx += 1;
            }
        }
    }
    out
}

fn box_surface_samples(he: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let mut pts = box_corners(he).to_vec();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut p = Vector3::zeros();
            p[axis] = sign * he[axis];
            pts.push(p);
        }
    }
    pts
}

/// Box against half-space: signed distance of every corner to the boundary.
/// Computed with the box as body `a`.
fn box_plane(bx: &Pose, he: &Vector3<f64>, plane: &Pose) -> Vec<Candidate> {
    let n = plane_normal(plane);
    box_corners(he)
        .iter()
        .map(|corner| {
            let world = bx.transform_point(corner);
            Candidate { witness: world, normal: n, phi: n.dot(&(world - plane.position)) }
        })
        .collect()
}

/// Box against box via cross-evaluated signed distances at surface samples.
/// Normals point from `b` into `a` for both sampling directions.
fn box_box(a: &Pose, ha: &Vector3<f64>, b: &Pose, hb: &Vector3<f64>) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(28);
    // A sample sunk past the midplane of the other box reports the far face
    // as nearest; its normal would point through the box, so the pair drops
    // any candidate whose normal disagrees with the center separation.
    let centers = a.position - b.position;
    for sample in box_surface_samples(ha) {
        let world = a.transform_point(&sample);
        let local_b = b.inverse_transform_point(&world);
        if let Some((phi, grad)) = box_sdf_sample(&local_b, hb) {
            let normal = b.orientation * grad;
            if phi >= 0.0 || normal.dot(&centers) > 0.0 {
                out.push(Candidate { witness: world, normal, phi });
            }
        }
    }
    for sample in box_surface_samples(hb) {
        let world = b.transform_point(&sample);
        let local_a = a.inverse_transform_point(&world);
        if let Some((phi, grad)) = box_sdf_sample(&local_a, ha) {
            let normal = -(a.orientation * grad);
            if phi >= 0.0 || normal.dot(&centers) > 0.0 {
                out.push(Candidate { witness: world, normal, phi });
            }
        }
    }
    out
}
