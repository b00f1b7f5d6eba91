//! Reduced-coordinate rigid-body tree: kinematics, composite-rigid-body mass
//! matrix and recursive Newton-Euler bias forces.
//!
//! Generalized velocity layout for a floating base is
//! `[omega_body(3), v_body(3), qdot(n)]`, where `v_body` is the velocity of the
//! base origin in base coordinates. A fixed base drops the first six entries.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, UnitQuaternion, Vector3};

use super::spatial::{ang, axis_angle, cross_force, cross_motion, join, lin, spatial_inertia, SpatialVec, Xform};
use crate::error::{Error, Result};
use crate::morphology::{CollisionGeometry, JointSpec, LinkSpec, RobotModel, NUM_LEGS};

#[derive(Clone, Debug)]
pub struct Body {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix6<f64>,
    /// Joint frame rotation relative to the parent body.
    pub offset_rot: Matrix3<f64>,
    pub offset: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub limits: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContactShape {
    Point(Vector3<f64>),
    /// Cylinder centered on the body origin spinning about a body-frame axis.
    Wheel {
        radius: f64,
        axis: Vector3<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Wheel(usize),
    Knee(usize),
    Torso,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactSite {
    pub body: usize,
    pub shape: ContactShape,
    pub kind: SiteKind,
}

/// Dynamics-ready view of a kinematic tree. Body `i + 1` is the child of joint `i`.
#[derive(Clone, Debug)]
pub struct Mechanism {
    pub fixed_base: bool,
    pub bodies: Vec<Body>,
    pub sites: Vec<ContactSite>,
    pub total_mass: f64,
}

/// Poses and velocities of every body for one configuration.
#[derive(Clone, Debug)]
pub struct Kinematics {
    /// Body-to-world rotations.
    pub rot: Vec<Matrix3<f64>>,
    /// Body origins in world coordinates.
    pub pos: Vec<Vector3<f64>>,
    /// Parent-to-child transforms (entry 0 unused).
    pub xup: Vec<Xform>,
    /// Body twists in body coordinates.
    pub vel: Vec<SpatialVec>,
}

/// A generalized configuration: base pose plus joint angles.
#[derive(Clone, Debug)]
pub struct Config<'a> {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub q: &'a [f64],
}

impl Mechanism {
    pub fn num_joints(&self) -> usize {
        self.bodies.len() - 1
    }

    pub fn dof(&self) -> usize {
        self.num_joints() + self.base_dof()
    }

    pub fn base_dof(&self) -> usize {
        if self.fixed_base {
            0
        } else {
            6
        }
    }

    /// Builds the tree from link and joint tables. Joints must list parents
    /// before children; link 0 is the root.
    pub fn from_parts(links: &[LinkSpec], joints: &[JointSpec], fixed_base: bool) -> Result<Self> {
        let root = links.first().ok_or_else(|| Error::Config("mechanism needs at least one link".into()))?;
        let find_link = |name: &str| {
            links.iter().find(|l| l.name == name).ok_or_else(|| Error::Config(format!("unknown link '{name}'")))
        };
        let mut bodies = vec![Body {
            name: root.name.clone(),
            parent: None,
            mass: root.mass,
            com: root.com,
            inertia: spatial_inertia(root.mass, &root.com, &root.inertia),
            offset_rot: Matrix3::identity(),
            offset: Vector3::zeros(),
            axis: Vector3::z(),
            limits: None,
        }];
        for (i, j) in joints.iter().enumerate() {
            let parent = if j.parent_link == root.name {
                0
            } else {
                joints[..i]
                    .iter()
                    .position(|k| k.child_link == j.parent_link)
                    .map(|k| k + 1)
                    .ok_or_else(|| Error::Config(format!("joint '{}' listed before its parent", j.name)))?
            };
            let link = find_link(&j.child_link)?;
            bodies.push(Body {
                name: link.name.clone(),
                parent: Some(parent),
                mass: link.mass,
                com: link.com,
                inertia: spatial_inertia(link.mass, &link.com, &link.inertia),
                offset_rot: j.frame_offset.rotation.to_rotation_matrix().into_inner(),
                offset: j.frame_offset.translation,
                axis: j.axis,
                limits: j.position_limits,
            });
        }
        let total_mass = bodies.iter().map(|b| b.mass).sum();
        Ok(Self { fixed_base, bodies, sites: Vec::new(), total_mass })
    }

    /// Floating-base mechanism with wheel, knee and torso-corner contact sites.
    pub fn from_model(model: &RobotModel) -> Result<Self> {
        let mut m = Self::from_parts(&model.links, &model.joints, false)?;
        for leg in 0..NUM_LEGS {
            let wheel_body = leg * 4 + 4;
            let calf_body = leg * 4 + 3;
            if let CollisionGeometry::WheelCylinder { radius, .. } = model.links[wheel_body].collision_geometry {
                m.sites.push(ContactSite {
                    body: wheel_body,
                    shape: ContactShape::Wheel { radius, axis: model.joints[wheel_body - 1].axis },
                    kind: SiteKind::Wheel(leg),
                });
            }
            m.sites.push(ContactSite {
                body: calf_body,
                shape: ContactShape::Point(Vector3::zeros()),
                kind: SiteKind::Knee(leg),
            });
        }
        if let CollisionGeometry::Box { half_extents: h } = model.links[0].collision_geometry {
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        m.sites.push(ContactSite {
                            body: 0,
                            shape: ContactShape::Point(Vector3::new(sx * h.x, sy * h.y, sz * h.z)),
                            kind: SiteKind::Torso,
                        });
                    }
                }
            }
        }
        Ok(m)
    }

    /// Adds mass at a body-frame point of `body`, keeping the link inertia about
    /// its own center of mass.
    pub fn add_point_mass(&mut self, body: usize, mass: f64, at: Vector3<f64>) {
        self.bodies[body].inertia += spatial_inertia(mass, &at, &Matrix3::zeros());
        let b = &mut self.bodies[body];
        b.com = (b.com * b.mass + at * mass) / (b.mass + mass);
        b.mass += mass;
        self.total_mass += mass;
    }

    /// Shifts a body's center of mass without changing its rotational inertia
    /// about the center of mass.
    pub fn shift_com(&mut self, body: usize, delta: Vector3<f64>) {
        let b = &mut self.bodies[body];
        let old = spatial_inertia(b.mass, &b.com, &Matrix3::zeros());
        b.com += delta;
        let new = spatial_inertia(b.mass, &b.com, &Matrix3::zeros());
        b.inertia += new - old;
    }

    pub fn kinematics(&self, cfg: &Config<'_>, nu: &DVector<f64>) -> Kinematics {
        let n = self.bodies.len();
        let mut rot = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut xup = Vec::with_capacity(n);
        let mut vel = Vec::with_capacity(n);
        rot.push(cfg.base_orientation.to_rotation_matrix().into_inner());
        pos.push(cfg.base_position);
        xup.push(Xform::identity());
        vel.push(if self.fixed_base {
            SpatialVec::zeros()
        } else {
            SpatialVec::from_iterator(nu.iter().take(6).copied())
        });
        let off = self.base_dof();
        for b in 1..n {
            let body = &self.bodies[b];
            let p = body.parent.unwrap_or(0);
            let rel = body.offset_rot * axis_angle(&body.axis, cfg.q[b - 1]);
            let x = Xform { rot: rel.transpose(), trans: body.offset };
            rot.push(rot[p] * rel);
            pos.push(pos[p] + rot[p] * body.offset);
            let v = x.apply_motion(&vel[p]) + join(body.axis * nu[off + b - 1], Vector3::zeros());
            vel.push(v);
            xup.push(x);
        }
        Kinematics { rot, pos, xup, vel }
    }

    /// Coriolis, centrifugal and gravity generalized forces `C(q, nu)`.
    pub fn bias_forces(&self, kin: &Kinematics, nu: &DVector<f64>, gravity: f64) -> DVector<f64> {
        let n = self.bodies.len();
        let off = self.base_dof();
        let mut acc = Vec::with_capacity(n);
        let mut force = Vec::with_capacity(n);
        let up = kin.rot[0].transpose() * Vector3::new(0.0, 0.0, gravity);
        acc.push(join(Vector3::zeros(), up));
        force.push(self.bodies[0].inertia * acc[0] + cross_force(&kin.vel[0], &(self.bodies[0].inertia * kin.vel[0])));
        for b in 1..n {
            let body = &self.bodies[b];
            let p = body.parent.unwrap_or(0);
            let sqd = join(body.axis * nu[off + b - 1], Vector3::zeros());
            let a = kin.xup[b].apply_motion(&acc[p]) + cross_motion(&kin.vel[b], &sqd);
            let iv = body.inertia * kin.vel[b];
            force.push(body.inertia * a + cross_force(&kin.vel[b], &iv));
            acc.push(a);
        }
        let mut c = DVector::zeros(self.dof());
        for b in (1..n).rev() {
            let body = &self.bodies[b];
            c[off + b - 1] = body.axis.dot(&ang(&force[b]));
            let p = body.parent.unwrap_or(0);
            let f = kin.xup[b].transpose_force(&force[b]);
            force[p] += f;
        }
        if !self.fixed_base {
            for i in 0..6 {
                c[i] = force[0][i];
            }
        }
        c
    }

    /// Joint-space inertia matrix via the composite-rigid-body algorithm.
    pub fn mass_matrix(&self, kin: &Kinematics) -> DMatrix<f64> {
        let n = self.bodies.len();
        let off = self.base_dof();
        let mut ic: Vec<Matrix6<f64>> = self.bodies.iter().map(|b| b.inertia).collect();
        for b in (1..n).rev() {
            let p = self.bodies[b].parent.unwrap_or(0);
            let x = kin.xup[b].to_matrix();
            let add = x.transpose() * ic[b] * x;
            ic[p] += add;
        }
        let mut m = DMatrix::zeros(self.dof(), self.dof());
        if !self.fixed_base {
            m.view_mut((0, 0), (6, 6)).copy_from(&ic[0]);
        }
        for b in 1..n {
            let col = off + b - 1;
            let axis = self.bodies[b].axis;
            let mut f = ic[b] * join(axis, Vector3::zeros());
            m[(col, col)] = axis.dot(&ang(&f));
            let mut j = b;
            loop {
                let p = self.bodies[j].parent.unwrap_or(0);
                f = kin.xup[j].transpose_force(&f);
                if p == 0 {
                    if !self.fixed_base {
                        for r in 0..6 {
                            m[(r, col)] = f[r];
                            m[(col, r)] = f[r];
                        }
                    }
                    break;
                }
                let v = self.bodies[p].axis.dot(&ang(&f));
                m[(off + p - 1, col)] = v;
                m[(col, off + p - 1)] = v;
                j = p;
            }
        }
        m
    }

    /// Columns of the world-frame linear-velocity Jacobian of a point fixed to
    /// `body`. Only nonzero columns are returned.
    pub fn point_jacobian(&self, kin: &Kinematics, body: usize, point: &Vector3<f64>) -> Vec<(usize, Vector3<f64>)> {
        let mut cols = Vec::with_capacity(10);
        let off = self.base_dof();
        let mut b = body;
        while b != 0 {
            let axis_w = kin.rot[b] * self.bodies[b].axis;
            cols.push((off + b - 1, axis_w.cross(&(point - kin.pos[b]))));
            b = self.bodies[b].parent.unwrap_or(0);
        }
        if !self.fixed_base {
            let r0 = kin.rot[0];
            let local = r0.transpose() * (point - kin.pos[0]);
            // v = R0 (v_b + w_b x r) = R0 v_b - R0 [r]x w_b
            for k in 0..3 {
                let e = Vector3::ith(k, 1.0);
                cols.push((k, r0 * e.cross(&local)));
                cols.push((3 + k, r0 * e));
            }
        }
        cols
    }

    /// World velocity of a body-fixed point given in world coordinates.
    pub fn point_velocity(&self, kin: &Kinematics, body: usize, point: &Vector3<f64>) -> Vector3<f64> {
        let r = kin.rot[body];
        let local = r.transpose() * (point - kin.pos[body]);
        let v = &kin.vel[body];
        r * (lin(v) + ang(v).cross(&local))
    }

    pub fn kinetic_energy(&self, kin: &Kinematics) -> f64 {
        self.bodies.iter().zip(&kin.vel).map(|(b, v)| 0.5 * v.dot(&(b.inertia * v))).sum()
    }

    pub fn potential_energy(&self, kin: &Kinematics, gravity: f64) -> f64 {
        self.bodies.iter().enumerate().map(|(i, b)| b.mass * gravity * (kin.pos[i] + kin.rot[i] * b.com).z).sum()
    }

    /// Total linear momentum in world coordinates.
    pub fn linear_momentum(&self, kin: &Kinematics) -> Vector3<f64> {
        self.bodies
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let v = &kin.vel[i];
                kin.rot[i] * (lin(v) + ang(v).cross(&b.com)) * b.mass
            })
            .sum()
    }

    pub fn center_of_mass(&self, kin: &Kinematics) -> Vector3<f64> {
        let s: Vector3<f64> =
            self.bodies.iter().enumerate().map(|(i, b)| (kin.pos[i] + kin.rot[i] * b.com) * b.mass).sum();
        s / self.total_mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{build_flores, MorphologyParams};

    fn random_config(m: &Mechanism, seed: u64) -> (Vector3<f64>, UnitQuaternion<f64>, Vec<f64>, DVector<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..m.num_joints()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nu = DVector::from_fn(m.dof(), |_, _| rng.random_range(-1.0..1.0));
        let rot = UnitQuaternion::from_euler_angles(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.3);
        (Vector3::new(0.2, -0.1, 0.5), rot, q, nu)
    }

    fn robot() -> Mechanism {
        Mechanism::from_model(&build_flores(&MorphologyParams::default()).unwrap()).unwrap()
    }

    #[test]
    fn mass_matrix_gives_kinetic_energy() {
        let m = robot();
        let (p, r, q, nu) = random_config(&m, 1);
        let kin = m.kinematics(&Config { base_position: p, base_orientation: r, q: &q }, &nu);
        let mm = m.mass_matrix(&kin);
        assert!((&mm - mm.transpose()).abs().max() < 1e-12);
        let ke = 0.5 * nu.dot(&(&mm * &nu));
        assert!((ke - m.kinetic_energy(&kin)).abs() < 1e-10 * ke.max(1.0));
        assert!(mm.clone().cholesky().is_some());
    }

    #[test]
    fn jacobian_matches_point_velocity() {
        let m = robot();
        let (p, r, q, nu) = random_config(&m, 2);
        let kin = m.kinematics(&Config { base_position: p, base_orientation: r, q: &q }, &nu);
        for body in [0, 4, 8, 13] {
            let point = kin.pos[body] + kin.rot[body] * Vector3::new(0.03, -0.02, 0.05);
            let jv: Vector3<f64> = m.point_jacobian(&kin, body, &point).iter().map(|(c, col)| col * nu[*c]).sum();
            let direct = m.point_velocity(&kin, body, &point);
            assert!((jv - direct).norm() < 1e-12, "{body}: {jv} vs {direct}");
        }
    }

    #[test]
    fn bias_of_static_robot_is_gravity_gradient() {
        // With zero velocity, C equals the gradient of potential energy along
        // each joint; compare against finite differences.
        let m = robot();
        let (p, r, q, _) = random_config(&m, 3);
        let zero = DVector::zeros(m.dof());
        let cfg = Config { base_position: p, base_orientation: r, q: &q };
        let kin = m.kinematics(&cfg, &zero);
        let c = m.bias_forces(&kin, &zero, 9.81);
        for j in [0usize, 5, 10, 14] {
            let h = 1e-6;
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            let up = m.potential_energy(&m.kinematics(&Config { q: &qp, ..cfg.clone() }, &zero), 9.81);
            let dn = m.potential_energy(&m.kinematics(&Config { q: &qm, ..cfg.clone() }, &zero), 9.81);
            let fd = (up - dn) / (2.0 * h);
            assert!((c[6 + j] - fd).abs() < 1e-6, "joint {j}: {} vs {fd}", c[6 + j]);
        }
    }
}
