//! Robot models for the two wheel-legged morphologies.
//!
//! Both models share one link table and one joint ordering; they differ only in
//! the axis and limits of the four slot-1 (hip) joints and in the lateral spacing
//! of the front hips.

mod params;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use params::MorphologyParams;

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 16;
pub const NUM_LEG_JOINTS: usize = 12;
pub const NUM_WHEELS: usize = 4;

/// Joint indices (into the canonical 16-slot order) of the 12 position-controlled joints.
pub const LEG_JOINTS: [usize; NUM_LEG_JOINTS] = [0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 13, 14];
/// Joint indices of the four wheels.
pub const WHEEL_JOINTS: [usize; NUM_WHEELS] = [3, 7, 11, 15];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphologyTag {
    /// Hip-yaw front legs, hip-roll rear legs.
    Flores,
    /// Hip-roll on all four legs.
    Baseline,
}

impl MorphologyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MorphologyTag::Flores => "flores",
            MorphologyTag::Baseline => "baseline",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            MorphologyTag::Flores => 1,
            MorphologyTag::Baseline => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(MorphologyTag::Flores),
            2 => Some(MorphologyTag::Baseline),
            _ => None,
        }
    }

    pub fn build(self, params: &MorphologyParams) -> Result<RobotModel> {
        match self {
            MorphologyTag::Flores => build_flores(params),
            MorphologyTag::Baseline => build_baseline(params),
        }
    }
}

impl fmt::Display for MorphologyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MorphologyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flores" => Ok(MorphologyTag::Flores),
            "baseline" => Ok(MorphologyTag::Baseline),
            other => Err(Error::Config(format!("unknown morphology '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    FrontLeft,
    FrontRight,
    RearLeft,
    RearRight,
}

impl Leg {
    pub const ALL: [Leg; NUM_LEGS] = [Leg::FrontLeft, Leg::FrontRight, Leg::RearLeft, Leg::RearRight];

    pub fn prefix(self) -> &'static str {
        match self {
            Leg::FrontLeft => "FL",
            Leg::FrontRight => "FR",
            Leg::RearLeft => "RL",
            Leg::RearRight => "RR",
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::FrontRight)
    }

    /// +1 for left legs, -1 for right legs.
    pub fn side(self) -> f64 {
        match self {
            Leg::FrontLeft | Leg::RearLeft => 1.0,
            Leg::FrontRight | Leg::RearRight => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Hip,
    HipPitch,
    KneePitch,
    Wheel,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Hip, Slot::HipPitch, Slot::KneePitch, Slot::Wheel];

    fn suffix(self) -> &'static str {
        match self {
            Slot::Hip => "hip",
            Slot::HipPitch => "hip_pitch",
            Slot::KneePitch => "knee",
            Slot::Wheel => "wheel",
        }
    }
}

pub fn joint_index(leg: Leg, slot: Slot) -> usize {
    leg as usize * 4 + slot as usize
}

pub fn joint_name(leg: Leg, slot: Slot) -> String {
    format!("{}_{}", leg.prefix(), slot.suffix())
}

/// Canonical joint order: `[FL, FR, RL, RR] x [hip, hip_pitch, knee, wheel]`.
pub fn canonical_joint_order() -> Vec<String> {
    Leg::ALL.iter().flat_map(|&leg| Slot::ALL.iter().map(move |&slot| joint_name(leg, slot))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    RevolutePositionControlled,
    WheelVelocityControlled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl RigidTransform {
    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { translation: Vector3::new(x, y, z), rotation: UnitQuaternion::identity() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// Rotation axis in the joint frame (parent frame after `frame_offset`).
    pub axis: Vector3<f64>,
    /// `[lo, hi]` in radians; `None` for wheels.
    pub position_limits: Option<[f64; 2]>,
    pub torque_limit: f64,
    pub velocity_limit: f64,
    pub default_angle: f64,
    pub parent_link: String,
    pub child_link: String,
    pub frame_offset: RigidTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum CollisionGeometry {
    Box { half_extents: Vector3<f64> },
    Capsule { radius: f64, length: f64 },
    WheelCylinder { radius: f64, width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, link-frame axes.
    pub inertia: Matrix3<f64>,
    pub collision_geometry: CollisionGeometry,
}

/// Kinematic tree rooted at a floating torso. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub tag: MorphologyTag,
    pub links: Vec<LinkSpec>,
    /// Joints in canonical order; see [`canonical_joint_order`].
    pub joints: Vec<JointSpec>,
}

impl RobotModel {
    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn joint_order(&self) -> Vec<&str> {
        self.joints.iter().map(|j| j.name.as_str()).collect()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn default_angles(&self) -> [f64; NUM_JOINTS] {
        let mut q = [0.0; NUM_JOINTS];
        for (qi, j) in q.iter_mut().zip(&self.joints) {
            *qi = j.default_angle;
        }
        q
    }

    pub fn torque_limits(&self) -> [f64; NUM_JOINTS] {
        let mut t = [0.0; NUM_JOINTS];
        for (ti, j) in t.iter_mut().zip(&self.joints) {
            *ti = j.torque_limit;
        }
        t
    }
}

fn box_inertia(mass: f64, half: Vector3<f64>) -> Matrix3<f64> {
    let (x, y, z) = (2.0 * half.x, 2.0 * half.y, 2.0 * half.z);
    Matrix3::from_diagonal(&Vector3::new(
        mass * (y * y + z * z) / 12.0,
        mass * (x * x + z * z) / 12.0,
        mass * (x * x + y * y) / 12.0,
    ))
}

/// Solid rod along the link z axis.
fn rod_inertia(mass: f64, radius: f64, length: f64) -> Matrix3<f64> {
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    Matrix3::from_diagonal(&Vector3::new(transverse, transverse, 0.5 * mass * radius * radius))
}

/// Solid cylinder spinning about the link y axis.
fn wheel_inertia(mass: f64, radius: f64, width: f64) -> Matrix3<f64> {
    let transverse = mass * (3.0 * radius * radius + width * width) / 12.0;
    Matrix3::from_diagonal(&Vector3::new(transverse, 0.5 * mass * radius * radius, transverse))
}

pub fn build_flores(params: &MorphologyParams) -> Result<RobotModel> {
    build(params, MorphologyTag::Flores)
}

pub fn build_baseline(params: &MorphologyParams) -> Result<RobotModel> {
    build(params, MorphologyTag::Baseline)
}

fn build(params: &MorphologyParams, tag: MorphologyTag) -> Result<RobotModel> {
    let problems = params.check();
    if !problems.is_empty() {
        return Err(Error::InvalidParams(problems));
    }
    let g = &params.geometry;
    let lim = &params.limits_deg;
    let act = &params.actuators;
    let pose = &params.default_pose_deg;

    let mut links = vec![LinkSpec {
        name: "torso".into(),
        mass: params.links.torso_mass,
        com: Vector3::zeros(),
        inertia: box_inertia(params.links.torso_mass, params.links.torso_half_extents.into()),
        collision_geometry: CollisionGeometry::Box { half_extents: params.links.torso_half_extents.into() },
    }];
    let mut joints = Vec::with_capacity(NUM_JOINTS);

    let limits = |deg: [f64; 2]| Some([deg[0].to_radians(), deg[1].to_radians()]);

    for leg in Leg::ALL {
        let s = leg.side();
        let p = leg.prefix();
        let hip_x = if leg.is_front() { g.hip_x } else { -g.hip_x };
        let hip_y = match (tag, leg.is_front()) {
            (MorphologyTag::Flores, true) => g.rear_hip_y * g.front_spacing_ratio,
            _ => g.rear_hip_y,
        };

        let yaw_hip = tag == MorphologyTag::Flores && leg.is_front();
        let (hip_axis, hip_limits) = if yaw_hip {
            // Mirrored axes so positive yaw swings either front leg outward.
            (Vector3::new(0.0, 0.0, s), limits(lim.hip_yaw))
        } else {
            (Vector3::x(), limits(lim.hip_roll))
        };

        let hip_link = format!("{p}_hip_link");
        let thigh_link = format!("{p}_thigh");
        let calf_link = format!("{p}_calf");
        let wheel_link = format!("{p}_wheel_link");

        links.push(LinkSpec {
            name: hip_link.clone(),
            mass: params.links.hip_mass,
            com: Vector3::new(0.0, s * 0.5 * g.hip_pitch_offset, 0.0),
            inertia: box_inertia(params.links.hip_mass, Vector3::new(0.04, 0.04, 0.04)),
            collision_geometry: CollisionGeometry::Box { half_extents: Vector3::new(0.04, 0.04, 0.04) },
        });
        joints.push(JointSpec {
            name: joint_name(leg, Slot::Hip),
            kind: JointKind::RevolutePositionControlled,
            axis: hip_axis,
            position_limits: hip_limits,
            torque_limit: act.leg_torque_limit,
            velocity_limit: act.leg_velocity_limit,
            default_angle: pose.hip.to_radians(),
            parent_link: "torso".into(),
            child_link: hip_link.clone(),
            frame_offset: RigidTransform::from_translation(hip_x, s * hip_y, 0.0),
        });

        links.push(LinkSpec {
            name: thigh_link.clone(),
            mass: params.links.thigh_mass,
            com: Vector3::new(0.0, 0.0, -0.5 * g.thigh_length),
            inertia: rod_inertia(params.links.thigh_mass, 0.025, g.thigh_length),
            collision_geometry: CollisionGeometry::Capsule { radius: 0.025, length: g.thigh_length },
        });
        joints.push(JointSpec {
            name: joint_name(leg, Slot::HipPitch),
            kind: JointKind::RevolutePositionControlled,
            axis: Vector3::y(),
            position_limits: limits(lim.hip_pitch),
            torque_limit: act.leg_torque_limit,
            velocity_limit: act.leg_velocity_limit,
            default_angle: pose.hip_pitch.to_radians(),
            parent_link: hip_link,
            child_link: thigh_link.clone(),
            frame_offset: RigidTransform::from_translation(0.0, s * g.hip_pitch_offset, 0.0),
        });

        links.push(LinkSpec {
            name: calf_link.clone(),
            mass: params.links.calf_mass,
            com: Vector3::new(0.0, 0.0, -0.5 * g.calf_length),
            inertia: rod_inertia(params.links.calf_mass, 0.02, g.calf_length),
            collision_geometry: CollisionGeometry::Capsule { radius: 0.02, length: g.calf_length },
        });
        joints.push(JointSpec {
            name: joint_name(leg, Slot::KneePitch),
            kind: JointKind::RevolutePositionControlled,
            axis: Vector3::y(),
            position_limits: limits(lim.knee),
            torque_limit: act.leg_torque_limit,
            velocity_limit: act.leg_velocity_limit,
            default_angle: pose.knee.to_radians(),
            parent_link: thigh_link,
            child_link: calf_link.clone(),
            frame_offset: RigidTransform::from_translation(0.0, 0.0, -g.thigh_length),
        });

        links.push(LinkSpec {
            name: wheel_link.clone(),
            mass: params.links.wheel_mass,
            com: Vector3::zeros(),
            inertia: wheel_inertia(params.links.wheel_mass, g.wheel_radius, g.wheel_width),
            collision_geometry: CollisionGeometry::WheelCylinder { radius: g.wheel_radius, width: g.wheel_width },
        });
        joints.push(JointSpec {
            name: joint_name(leg, Slot::Wheel),
            kind: JointKind::WheelVelocityControlled,
            axis: Vector3::y(),
            position_limits: None,
            torque_limit: act.wheel_torque_limit,
            velocity_limit: act.wheel_velocity_limit,
            default_angle: 0.0,
            parent_link: calf_link,
            child_link: wheel_link,
            frame_offset: RigidTransform::from_translation(0.0, s * g.wheel_offset, -g.calf_length),
        });
    }

    let model = RobotModel { tag, links, joints };
    let violations = validate(&model);
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(Error::InvalidParams(violations.iter().map(|v| v.to_string()).collect()))
    }
}

/// One broken invariant of a [`RobotModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Joint or link name (or `"model"`).
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

fn violation(subject: &str, message: impl Into<String>) -> Violation {
    Violation { subject: subject.to_string(), message: message.into() }
}

fn is_positive_definite(m: &Matrix3<f64>) -> bool {
    let symmetric = (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0);
    symmetric && m.cholesky().is_some()
}

/// Checks every structural and physical invariant. Empty means well-formed.
pub fn validate(model: &RobotModel) -> Vec<Violation> {
    let mut out = Vec::new();

    for link in &model.links {
        if !(link.mass > 0.0) {
            out.push(violation(&link.name, format!("mass {} must be positive", link.mass)));
        }
        if !is_positive_definite(&link.inertia) {
            out.push(violation(&link.name, "inertia is not symmetric positive-definite"));
        }
        match link.collision_geometry {
            CollisionGeometry::WheelCylinder { radius, width } => {
                if !(radius > 0.0) || !(width > 0.0) {
                    out.push(violation(&link.name, "wheel radius and width must be positive"));
                }
            }
            CollisionGeometry::Capsule { radius, length } => {
                if !(radius > 0.0) || !(length >= 0.0) {
                    out.push(violation(&link.name, "capsule dimensions must be positive"));
                }
            }
            CollisionGeometry::Box { half_extents } => {
                if half_extents.iter().any(|&h| !(h > 0.0)) {
                    out.push(violation(&link.name, "box extents must be positive"));
                }
            }
        }
    }

    let expected = canonical_joint_order();
    if model.joints.len() != NUM_JOINTS {
        out.push(violation("model", format!("expected {NUM_JOINTS} actuated joints, found {}", model.joints.len())));
    } else {
        for (j, want) in model.joints.iter().zip(&expected) {
            if &j.name != want {
                out.push(violation(&j.name, format!("out of canonical order (expected {want})")));
            }
        }
    }

    for j in &model.joints {
        if ((j.axis.norm() - 1.0).abs()) > 1e-9 {
            out.push(violation(&j.name, format!("axis norm {} is not unit", j.axis.norm())));
        }
        if !(j.torque_limit > 0.0) {
            out.push(violation(&j.name, "torque limit must be positive"));
        }
        match (j.kind, j.position_limits) {
            (JointKind::WheelVelocityControlled, Some(_)) => {
                out.push(violation(&j.name, "wheel joints must not carry position limits"));
            }
            (JointKind::RevolutePositionControlled, None) => {
                out.push(violation(&j.name, "position-controlled joint lacks limits"));
            }
            (_, Some([lo, hi])) => {
                if !(lo < hi) {
                    out.push(violation(&j.name, format!("limit lo {lo} >= hi {hi}")));
                } else if j.default_angle < lo || j.default_angle > hi {
                    out.push(violation(&j.name, "default angle outside limits"));
                }
            }
            _ => {}
        }
    }

    // Tree check: each non-root link is the child of exactly one joint, and
    // walking parents from any link reaches the root without revisiting.
    let root = model.links.first().map(|l| l.name.as_str()).unwrap_or("");
    for link in model.links.iter().skip(1) {
        let n = model.joints.iter().filter(|j| j.child_link == link.name).count();
        if n != 1 {
            out.push(violation(&link.name, format!("is the child of {n} joints (expected 1)")));
        }
    }
    for j in &model.joints {
        if model.link_index(&j.parent_link).is_none() || model.link_index(&j.child_link).is_none() {
            out.push(violation(&j.name, "references an unknown link"));
            continue;
        }
        if j.child_link == root {
            out.push(violation(&j.name, "root link cannot be a joint child"));
            continue;
        }
        let mut cursor = j.parent_link.as_str();
        let mut steps = 0;
        while cursor != root {
            match model.joints.iter().find(|k| k.child_link == cursor) {
                Some(k) => cursor = k.parent_link.as_str(),
                None => break,
            }
            steps += 1;
            if steps > model.joints.len() {
                out.push(violation(&j.name, "joint graph contains a cycle"));
                break;
            }
        }
        if cursor != root && steps <= model.joints.len() {
            out.push(violation(&j.name, "not connected to the root link"));
        }
    }

    out
}

/// A field that differs between two models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub subject: String,
    pub field: &'static str,
}

/// Field-by-field comparison of two models with the same layout.
pub fn structural_diff(a: &RobotModel, b: &RobotModel) -> Vec<FieldDiff> {
    let mut out = Vec::new();
    let mut push = |subject: &str, field: &'static str| out.push(FieldDiff { subject: subject.to_string(), field });
    if a.links.len() != b.links.len() || a.joints.len() != b.joints.len() {
        push("model", "layout");
        return out;
    }
    for (la, lb) in a.links.iter().zip(&b.links) {
        if la.name != lb.name {
            push(&la.name, "name");
        }
        if la.mass != lb.mass {
            push(&la.name, "mass");
        }
        if la.com != lb.com {
            push(&la.name, "com");
        }
        if la.inertia != lb.inertia {
            push(&la.name, "inertia");
        }
        if la.collision_geometry != lb.collision_geometry {
            push(&la.name, "collision_geometry");
        }
    }
    for (ja, jb) in a.joints.iter().zip(&b.joints) {
        if ja.name != jb.name {
            push(&ja.name, "name");
        }
        if ja.kind != jb.kind {
            push(&ja.name, "kind");
        }
        if ja.axis != jb.axis {
            push(&ja.name, "axis");
        }
        if ja.position_limits != jb.position_limits {
            push(&ja.name, "position_limits");
        }
        if ja.torque_limit != jb.torque_limit {
            push(&ja.name, "torque_limit");
        }
        if ja.velocity_limit != jb.velocity_limit {
            push(&ja.name, "velocity_limit");
        }
        if ja.default_angle != jb.default_angle {
            push(&ja.name, "default_angle");
        }
        if ja.parent_link != jb.parent_link || ja.child_link != jb.child_link {
            push(&ja.name, "links");
        }
        if ja.frame_offset != jb.frame_offset {
            push(&ja.name, "frame_offset");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flores() -> RobotModel {
        build_flores(&MorphologyParams::default()).unwrap()
    }

    fn baseline() -> RobotModel {
        build_baseline(&MorphologyParams::default()).unwrap()
    }

    #[test]
    fn front_hip_yaw_limits() {
        let m = flores();
        let fl = &m.joints[joint_index(Leg::FrontLeft, Slot::Hip)];
        let [lo, hi] = fl.position_limits.unwrap();
        assert!((lo - (-0.6109)).abs() < 5e-5, "{lo}");
        assert!((hi - 1.7453).abs() < 5e-5, "{hi}");
        assert_eq!(fl.axis, Vector3::z());
        let fr = &m.joints[joint_index(Leg::FrontRight, Slot::Hip)];
        assert_eq!(fr.axis, -Vector3::z());
        for leg in [Leg::RearLeft, Leg::RearRight] {
            assert_eq!(m.joints[joint_index(leg, Slot::Hip)].axis, Vector3::x());
        }
    }

    #[test]
    fn torque_limits() {
        let m = flores();
        for leg in Leg::ALL {
            assert_eq!(m.joints[joint_index(leg, Slot::Wheel)].torque_limit, 8.0);
            assert_eq!(m.joints[joint_index(leg, Slot::KneePitch)].torque_limit, 32.0);
            assert_eq!(m.joints[joint_index(leg, Slot::Hip)].torque_limit, 32.0);
        }
    }

    #[test]
    fn total_mass_is_sum_of_links() {
        let m = flores();
        let sum: f64 = m.links.iter().map(|l| l.mass).sum();
        assert!((m.total_mass() - sum).abs() <= 1e-12 * sum);
        assert_eq!(m.links.len(), 17);
        assert!((m.total_mass() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn front_spacing_wider_than_rear() {
        let m = flores();
        let y = |leg| m.joints[joint_index(leg, Slot::Hip)].frame_offset.translation.y;
        assert!(y(Leg::FrontLeft) - y(Leg::FrontRight) > y(Leg::RearLeft) - y(Leg::RearRight));
    }

    #[test]
    fn baseline_all_roll() {
        let m = baseline();
        for leg in Leg::ALL {
            let j = &m.joints[joint_index(leg, Slot::Hip)];
            assert_eq!(j.axis, Vector3::x());
            let [lo, hi] = j.position_limits.unwrap();
            assert!((lo + hi).abs() < 1e-12);
        }
        assert_eq!(m.total_mass(), flores().total_mass());
        assert_eq!(m.joint_order(), flores().joint_order());
    }

    #[test]
    fn builds_validate_clean() {
        assert!(validate(&flores()).is_empty());
        assert!(validate(&baseline()).is_empty());
    }

    #[test]
    fn inverted_limit_is_reported() {
        let mut m = flores();
        m.joints[5].position_limits = Some([1.0, 0.5]);
        let v = validate(&m);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].subject, m.joints[5].name);
    }

    #[test]
    fn indefinite_inertia_is_reported() {
        let mut m = flores();
        m.links[3].inertia[(1, 1)] = -0.1;
        let v = validate(&m);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].subject, m.links[3].name);
    }

    #[test]
    fn cycle_is_reported() {
        let mut m = flores();
        // hip_link's parent becomes its own grandchild.
        m.joints[0].parent_link = "FL_thigh".into();
        assert!(!validate(&m).is_empty());
    }

    #[test]
    fn morphologies_differ_only_in_front_hips() {
        let diff = structural_diff(&flores(), &baseline());
        assert!(!diff.is_empty());
        for d in &diff {
            assert!(d.subject == "FL_hip" || d.subject == "FR_hip", "{d:?}");
            assert!(matches!(d.field, "axis" | "position_limits" | "frame_offset"), "{d:?}");
        }
        let fields: Vec<_> = diff.iter().filter(|d| d.subject == "FL_hip").map(|d| d.field).collect();
        assert_eq!(fields, ["axis", "position_limits", "frame_offset"]);
    }

    #[test]
    fn invalid_params_list_fields() {
        let mut p = MorphologyParams::default();
        p.links.wheel_mass = -1.0;
        p.geometry.wheel_radius = 0.0;
        match build_flores(&p) {
            Err(Error::InvalidParams(fields)) => {
                assert!(fields.iter().any(|f| f.contains("wheel_mass")));
                assert!(fields.iter().any(|f| f.contains("wheel_radius")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn joint_order_roundtrips_through_json() {
        let m = flores();
        let s = serde_json::to_string(&m).unwrap();
        let back: RobotModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back.joint_order(), canonical_joint_order());
        assert_eq!(back, m);
    }
}
