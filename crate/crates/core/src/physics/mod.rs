//! Floating-base articulated dynamics with penalty terrain contact.
//!
//! One call to [`step_dynamics`] advances a [`SimState`] by `substep_dt`.
//! Velocity-dependent forces (contact damping, regularized friction, joint-limit
//! damping) are integrated implicitly; everything else is explicit.

pub mod mechanism;
pub mod spatial;
pub mod terrain;

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use mechanism::{Config, ContactShape, ContactSite, Kinematics, Mechanism, SiteKind};
pub use terrain::{make_terrain, HeightSample, Terrain, TerrainKind, TerrainParams};

pub const CONTROL_DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    SemiImplicitEuler,
    /// Explicit midpoint; used only to cross-check the default integrator.
    Rk2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub gravity: f64,
    pub substep_dt: f64,
    /// N/m of penetration.
    pub contact_stiffness: f64,
    /// N per m/s of approach speed.
    pub contact_damping: f64,
    /// Tangential speed below which friction is viscous.
    pub friction_regularization: f64,
    pub joint_limit_stiffness: f64,
    pub joint_limit_damping: f64,
    pub integrator: Integrator,
    /// Replaces the terrain friction coefficient when set.
    pub friction_override: Option<f64>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            substep_dt: 0.0025,
            contact_stiffness: 3.0e4,
            contact_damping: 800.0,
            friction_regularization: 0.05,
            joint_limit_stiffness: 400.0,
            joint_limit_damping: 5.0,
            integrator: Integrator::SemiImplicitEuler,
            friction_override: None,
        }
    }
}

impl PhysicsConfig {
    pub fn substeps_per_control(&self) -> usize {
        (CONTROL_DT / self.substep_dt).round() as usize
    }

    pub fn check(&self) -> Result<()> {
        let n = (CONTROL_DT / self.substep_dt).round();
        if !(self.substep_dt > 0.0) || n < 1.0 || (n * self.substep_dt - CONTROL_DT).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "substep_dt {} must divide the {CONTROL_DT} s control period",
                self.substep_dt
            )));
        }
        if !(self.gravity >= 0.0) || !(self.contact_stiffness > 0.0) || !(self.contact_damping >= 0.0) {
            return Err(Error::Config("contact parameters must be positive".into()));
        }
        if !(self.friction_regularization > 0.0) {
            return Err(Error::Config("friction regularization must be positive".into()));
        }
        if let Some(mu) = self.friction_override {
            if !(mu > 0.0) {
                return Err(Error::Config("friction override must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Generalized coordinates and velocities at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub joint_positions: Vec<f64>,
    /// World frame.
    pub base_linear_velocity: Vector3<f64>,
    /// Body frame.
    pub base_angular_velocity: Vector3<f64>,
    pub joint_velocities: Vec<f64>,
    pub time: f64,
}

impl SimState {
    pub fn at_rest(base_position: Vector3<f64>, joint_positions: Vec<f64>) -> Self {
        let n = joint_positions.len();
        Self {
            base_position,
            base_orientation: UnitQuaternion::identity(),
            joint_positions,
            base_linear_velocity: Vector3::zeros(),
            base_angular_velocity: Vector3::zeros(),
            joint_velocities: vec![0.0; n],
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.base_position.iter().all(|v| v.is_finite())
            && self.base_orientation.coords.iter().all(|v| v.is_finite())
            && self.base_linear_velocity.iter().all(|v| v.is_finite())
            && self.base_angular_velocity.iter().all(|v| v.is_finite())
            && self.joint_positions.iter().all(|v| v.is_finite())
            && self.joint_velocities.iter().all(|v| v.is_finite())
    }

    pub fn config(&self) -> Config<'_> {
        Config { base_position: self.base_position, base_orientation: self.base_orientation, q: &self.joint_positions }
    }

    /// Generalized velocity in the mechanism layout.
    pub fn generalized_velocity(&self, mech: &Mechanism) -> DVector<f64> {
        let off = mech.base_dof();
        let mut nu = DVector::zeros(mech.dof());
        if off == 6 {
            let v_body = self.base_orientation.inverse_transform_vector(&self.base_linear_velocity);
            nu.fixed_rows_mut::<3>(0).copy_from(&self.base_angular_velocity);
            nu.fixed_rows_mut::<3>(3).copy_from(&v_body);
        }
        for (i, v) in self.joint_velocities.iter().enumerate() {
            nu[off + i] = *v;
        }
        nu
    }

    /// Base linear velocity in the body frame.
    pub fn base_linear_velocity_body(&self) -> Vector3<f64> {
        self.base_orientation.inverse_transform_vector(&self.base_linear_velocity)
    }

    /// World gravity direction `(0, 0, -1)` expressed in the body frame.
    pub fn projected_gravity(&self) -> Vector3<f64> {
        self.base_orientation.inverse_transform_vector(&-Vector3::z())
    }

    pub fn heading(&self) -> f64 {
        let fwd = self.base_orientation * Vector3::x();
        fwd.y.atan2(fwd.x)
    }
}

/// Wrench applied at the base origin, world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseWrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    /// Index into the model's link table.
    pub link: usize,
    pub kind: ContactKind,
    pub world_position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub normal_force: f64,
    pub tangential_force: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactKind {
    Wheel(usize),
    Knee(usize),
    Torso,
}

impl From<SiteKind> for ContactKind {
    fn from(k: SiteKind) -> Self {
        match k {
            SiteKind::Wheel(i) => ContactKind::Wheel(i),
            SiteKind::Knee(i) => ContactKind::Knee(i),
            SiteKind::Torso => ContactKind::Torso,
        }
    }
}

struct ActiveContact {
    site: usize,
    point: Vector3<f64>,
    normal: Vector3<f64>,
    /// Explicit part of the contact force.
    force: Vector3<f64>,
    /// Velocity-gain matrix of the implicit part.
    damping: Matrix3<f64>,
    jac: Vec<(usize, Vector3<f64>)>,
    velocity: Vector3<f64>,
    /// Normal-direction gain, removable if the contact would pull.
    normal_gain: f64,
}

/// Geometry of a contact site against the terrain: world point, normal and
/// penetration depth (positive when interpenetrating).
fn site_geometry(site: &ContactSite, kin: &Kinematics, terrain: &Terrain) -> (Vector3<f64>, Vector3<f64>, f64) {
    let r = &kin.rot[site.body];
    let origin = kin.pos[site.body];
    let point = match site.shape {
        ContactShape::Point(local) => origin + r * local,
        ContactShape::Wheel { radius, axis } => {
            let n = terrain.normal_at(origin.x, origin.y);
            let a = r * axis;
            let d = n - a * n.dot(&a);
            let d = if d.norm() > 1e-9 { d.normalize() } else { n };
            origin - d * radius
        }
    };
    let normal = terrain.normal_at(point.x, point.y);
    let depth = (terrain.height_at(point.x, point.y).height - point.z) * normal.z;
    (point, normal, depth)
}

fn friction_at(cfg: &PhysicsConfig, terrain: &Terrain, p: &Vector3<f64>) -> f64 {
    cfg.friction_override.unwrap_or_else(|| terrain.friction_at(p.x, p.y))
}

/// Advances the state by one substep. `torques` are per-joint actuator torques,
/// already clamped by the caller.
pub fn step_dynamics(
    mech: &Mechanism,
    state: &SimState,
    torques: &[f64],
    wrench: &BaseWrench,
    terrain: &Terrain,
    cfg: &PhysicsConfig,
) -> Result<(SimState, Vec<ContactPoint>)> {
    debug_assert_eq!(torques.len(), mech.num_joints());
    let result = match cfg.integrator {
        Integrator::SemiImplicitEuler => semi_implicit_step(mech, state, torques, wrench, terrain, cfg),
        Integrator::Rk2 => rk2_step(mech, state, torques, wrench, terrain, cfg),
    };
    match result {
        Some((next, contacts)) if next.is_finite() => Ok((next, contacts)),
        _ => Err(Error::SimulationDiverged { time: state.time, last_valid: Box::new(state.clone()) }),
    }
}

/// Generalized forces common to both integrators: actuation, base wrench and
/// joint-limit springs (explicit parts only).
fn applied_forces(
    mech: &Mechanism,
    kin: &Kinematics,
    state: &SimState,
    torques: &[f64],
    wrench: &BaseWrench,
    cfg: &PhysicsConfig,
    mut limit_gain: impl FnMut(usize, f64),
) -> DVector<f64> {
    let off = mech.base_dof();
    let mut tau = DVector::zeros(mech.dof());
    if off == 6 {
        let r0 = kin.rot[0];
        tau.fixed_rows_mut::<3>(0).copy_from(&(r0.transpose() * wrench.torque));
        tau.fixed_rows_mut::<3>(3).copy_from(&(r0.transpose() * wrench.force));
    }
    for (i, t) in torques.iter().enumerate() {
        tau[off + i] += t;
    }
    for (i, body) in mech.bodies.iter().enumerate().skip(1) {
        let j = i - 1;
        if let Some([lo, hi]) = body.limits {
            let q = state.joint_positions[j];
            let qd = state.joint_velocities[j];
            let excess = if q < lo {
                lo - q
            } else if q > hi {
                hi - q
            } else {
                continue;
            };
            tau[off + j] += cfg.joint_limit_stiffness * excess - cfg.joint_limit_damping * qd;
            limit_gain(off + j, cfg.joint_limit_damping);
        }
    }
    tau
}

fn semi_implicit_step(
    mech: &Mechanism,
    state: &SimState,
    torques: &[f64],
    wrench: &BaseWrench,
    terrain: &Terrain,
    cfg: &PhysicsConfig,
) -> Option<(SimState, Vec<ContactPoint>)> {
    let dt = cfg.substep_dt;
    let nu = state.generalized_velocity(mech);
    let kin = mech.kinematics(&state.config(), &nu);
    let mass = mech.mass_matrix(&kin);
    let bias = mech.bias_forces(&kin, &nu, cfg.gravity);

    let mut joint_gains = Vec::new();
    let tau = applied_forces(mech, &kin, state, torques, wrench, cfg, |i, g| joint_gains.push((i, g)));
    let rhs = &tau - bias;

    let mut contacts = Vec::new();
    for (s, site) in mech.sites.iter().enumerate() {
        let (point, normal, depth) = site_geometry(site, &kin, terrain);
        if depth <= 0.0 {
            continue;
        }
        let v = mech.point_velocity(&kin, site.body, &point);
        let vn = normal.dot(&v);
        let fn_explicit = cfg.contact_stiffness * depth - cfg.contact_damping * vn;
        if fn_explicit <= 0.0 {
            continue;
        }
        let vt = v - normal * vn;
        let mu = friction_at(cfg, terrain, &point);
        let b = mu * fn_explicit / vt.norm().max(cfg.friction_regularization);
        let nn = normal * normal.transpose();
        let damping = nn * cfg.contact_damping + (Matrix3::identity() - nn) * b;
        let force = normal * (cfg.contact_stiffness * depth) - damping * v;
        let jac = mech.point_jacobian(&kin, site.body, &point);
        contacts.push(ActiveContact {
            site: s,
            point,
            normal,
            force,
            damping,
            jac,
            velocity: v,
            normal_gain: cfg.contact_damping,
        });
    }

    // A contact whose implicit normal force would pull loses its normal damping
    // and the system is solved again.
    let mut delta;
    let mut attempt = 0;
    let (chol, contact_rhs) = loop {
        attempt += 1;
        let mut a = mass.clone();
        let mut b = DVector::zeros(mech.dof());
        for &(i, g) in &joint_gains {
            a[(i, i)] += dt * g;
        }
        for c in &contacts {
            for (i, ci) in &c.jac {
                b[*i] += ci.dot(&c.force);
                let dci = c.damping * ci;
                for (j, cj) in &c.jac {
                    a[(*j, *i)] += dt * cj.dot(&dci);
                }
            }
        }
        let chol = a.cholesky()?;
        delta = chol.solve(&((&b + &rhs) * dt));
        let mut resolve = false;
        for c in contacts.iter_mut() {
            let jd: Vector3<f64> = c.jac.iter().map(|(i, col)| col * delta[*i]).sum();
            let f = c.force - c.damping * jd;
            if f.dot(&c.normal) < 0.0 && c.normal_gain > 0.0 {
                let nd = c.normal * c.normal.transpose() * c.normal_gain;
                c.force += nd * c.velocity;
                c.damping -= nd;
                c.normal_gain = 0.0;
                resolve = true;
            }
        }
        if !resolve || attempt == 3 {
            break (chol, b);
        }
    };
    // Corrector: velocity-product terms evaluated at the midpoint velocity.
    let nu_mid = &nu + &delta * 0.5;
    let kin_mid = mech.kinematics(&state.config(), &nu_mid);
    let bias_mid = mech.bias_forces(&kin_mid, &nu_mid, cfg.gravity);
    delta = chol.solve(&((contact_rhs + tau - bias_mid) * dt));

    let nu_next = &nu + &delta;
    let mut contact_points = Vec::with_capacity(contacts.len());
    let mut contact_force_sum = Vector3::zeros();
    for c in &contacts {
        let jd: Vector3<f64> = c.jac.iter().map(|(i, col)| col * delta[*i]).sum();
        let f = c.force - c.damping * jd;
        let normal_force = f.dot(&c.normal).max(0.0);
        contact_force_sum += f;
        let site = &mech.sites[c.site];
        contact_points.push(ContactPoint {
            link: site.body,
            kind: site.kind.into(),
            world_position: c.point,
            normal: c.normal,
            normal_force,
            tangential_force: f - c.normal * f.dot(&c.normal),
        });
    }

    let mut next = integrate_positions(mech, state, &nu_next, dt);
    if !mech.fixed_base {
        // Enforce the discrete impulse balance on total linear momentum.
        let momentum = mech.linear_momentum(&kin);
        let impulse = (contact_force_sum + wrench.force - Vector3::new(0.0, 0.0, mech.total_mass * cfg.gravity)) * dt;
        let nu_check = next.generalized_velocity(mech);
        let kin_next = mech.kinematics(&next.config(), &nu_check);
        let drift = momentum + impulse - mech.linear_momentum(&kin_next);
        let correction = drift / mech.total_mass;
        next.base_linear_velocity += correction;
        next.base_position = state.base_position + next.base_linear_velocity * dt;
        if contacts.is_empty() {
            // In flight the external force is constant over the step, so the
            // centre of mass follows the trapezoidal update exactly.
            let com = mech.center_of_mass(&kin);
            let target = com + (momentum * 2.0 + impulse) * (0.5 * dt / mech.total_mass);
            let kin_next = mech.kinematics(&next.config(), &next.generalized_velocity(mech));
            next.base_position += target - mech.center_of_mass(&kin_next);
        }
    }
    Some((next, contact_points))
}

/// Positions from velocities; the base velocity entries of `nu` are in body
/// coordinates of `state`.
fn integrate_positions(mech: &Mechanism, state: &SimState, nu: &DVector<f64>, dt: f64) -> SimState {
    let off = mech.base_dof();
    let mut next = state.clone();
    next.time = state.time + dt;
    if off == 6 {
        let w = Vector3::new(nu[0], nu[1], nu[2]);
        let v_body = Vector3::new(nu[3], nu[4], nu[5]);
        let v_world = state.base_orientation * v_body;
        let q = state.base_orientation * UnitQuaternion::from_scaled_axis(w * dt);
        next.base_orientation = UnitQuaternion::new_normalize(q.into_inner());
        next.base_position = state.base_position + v_world * dt;
        // Body-frame twist components are carried across the frame update.
        next.base_angular_velocity = w;
        next.base_linear_velocity = next.base_orientation * v_body;
    }
    for i in 0..mech.num_joints() {
        next.joint_velocities[i] = nu[off + i];
        next.joint_positions[i] = state.joint_positions[i] + nu[off + i] * dt;
    }
    next
}

/// Explicit generalized acceleration including contact forces.
fn explicit_acceleration(
    mech: &Mechanism,
    state: &SimState,
    torques: &[f64],
    wrench: &BaseWrench,
    terrain: &Terrain,
    cfg: &PhysicsConfig,
    contacts_out: Option<&mut Vec<ContactPoint>>,
) -> Option<DVector<f64>> {
    let nu = state.generalized_velocity(mech);
    let kin = mech.kinematics(&state.config(), &nu);
    let mass = mech.mass_matrix(&kin);
    let bias = mech.bias_forces(&kin, &nu, cfg.gravity);
    let mut rhs = applied_forces(mech, &kin, state, torques, wrench, cfg, |_, _| {}) - bias;
    let mut out = Vec::new();
    for site in &mech.sites {
        let (point, normal, depth) = site_geometry(site, &kin, terrain);
        if depth <= 0.0 {
            continue;
        }
        let v = mech.point_velocity(&kin, site.body, &point);
        let vn = normal.dot(&v);
        let fn_ = (cfg.contact_stiffness * depth - cfg.contact_damping * vn).max(0.0);
        if fn_ == 0.0 {
            continue;
        }
        let vt = v - normal * vn;
        let mu = friction_at(cfg, terrain, &point);
        let ft = -vt * (mu * fn_ / vt.norm().max(cfg.friction_regularization));
        let f = normal * fn_ + ft;
        for (i, col) in mech.point_jacobian(&kin, site.body, &point) {
            rhs[i] += col.dot(&f);
        }
        out.push(ContactPoint {
            link: site.body,
            kind: site.kind.into(),
            world_position: point,
            normal,
            normal_force: fn_,
            tangential_force: ft,
        });
    }
    if let Some(c) = contacts_out {
        *c = out;
    }
    mass.cholesky().map(|ch| ch.solve(&rhs))
}

fn rk2_step(
    mech: &Mechanism,
    state: &SimState,
    torques: &[f64],
    wrench: &BaseWrench,
    terrain: &Terrain,
    cfg: &PhysicsConfig,
) -> Option<(SimState, Vec<ContactPoint>)> {
    let dt = cfg.substep_dt;
    let nu = state.generalized_velocity(mech);
    let mut contacts = Vec::new();
    let a1 = explicit_acceleration(mech, state, torques, wrench, terrain, cfg, Some(&mut contacts))?;
    let nu_half = &nu + &a1 * (0.5 * dt);
    let mut mid = integrate_positions(mech, state, &nu, 0.5 * dt);
    set_velocity(mech, &mut mid, &nu_half);
    let a2 = explicit_acceleration(mech, &mid, torques, wrench, terrain, cfg, None)?;
    let nu_next = &nu + &a2 * dt;
    // Advance positions with the midpoint velocity expressed in the mid frame.
    let mut next = state.clone();
    let off = mech.base_dof();
    next.time = state.time + dt;
    if off == 6 {
        let w = Vector3::new(nu_half[0], nu_half[1], nu_half[2]);
        let v_body = Vector3::new(nu_half[3], nu_half[4], nu_half[5]);
        next.base_position = state.base_position + mid.base_orientation * v_body * dt;
        let q = state.base_orientation * UnitQuaternion::from_scaled_axis(w * dt);
        next.base_orientation = UnitQuaternion::new_normalize(q.into_inner());
    }
    for i in 0..mech.num_joints() {
        next.joint_positions[i] = state.joint_positions[i] + nu_half[off + i] * dt;
    }
    set_velocity(mech, &mut next, &nu_next);
    Some((next, contacts))
}

fn set_velocity(mech: &Mechanism, state: &mut SimState, nu: &DVector<f64>) {
    let off = mech.base_dof();
    if off == 6 {
        state.base_angular_velocity = Vector3::new(nu[0], nu[1], nu[2]);
        state.base_linear_velocity = state.base_orientation * Vector3::new(nu[3], nu[4], nu[5]);
    }
    for i in 0..mech.num_joints() {
        state.joint_velocities[i] = nu[off + i];
    }
}

/// Kinetic plus gravitational potential energy.
pub fn mechanical_energy(mech: &Mechanism, state: &SimState, gravity: f64) -> f64 {
    let nu = state.generalized_velocity(mech);
    let kin = mech.kinematics(&state.config(), &nu);
    mech.kinetic_energy(&kin) + mech.potential_energy(&kin, gravity)
}

pub fn linear_momentum(mech: &Mechanism, state: &SimState) -> Vector3<f64> {
    let nu = state.generalized_velocity(mech);
    mech.linear_momentum(&mech.kinematics(&state.config(), &nu))
}

/// Joint-space mass matrix at the state's configuration.
pub fn mass_matrix(mech: &Mechanism, state: &SimState) -> DMatrix<f64> {
    let nu = state.generalized_velocity(mech);
    mech.mass_matrix(&mech.kinematics(&state.config(), &nu))
}

/// Smallest signed height of any contact site above the terrain; negative
/// when something penetrates.
pub fn ground_clearance(mech: &Mechanism, state: &SimState, terrain: &Terrain) -> f64 {
    let nu = DVector::zeros(mech.dof());
    let kin = mech.kinematics(&state.config(), &nu);
    mech.sites.iter().map(|s| -site_geometry(s, &kin, terrain).2).fold(f64::INFINITY, f64::min)
}

/// Like [`ground_clearance`] but restricted to wheel sites.
pub fn wheel_clearance(mech: &Mechanism, state: &SimState, terrain: &Terrain) -> f64 {
    let nu = DVector::zeros(mech.dof());
    let kin = mech.kinematics(&state.config(), &nu);
    mech.sites
        .iter()
        .filter(|s| matches!(s.kind, SiteKind::Wheel(_)))
        .map(|s| -site_geometry(s, &kin, terrain).2)
        .fold(f64::INFINITY, f64::min)
}
