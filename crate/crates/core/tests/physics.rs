use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use wheelleg_core::morphology::{
    self, CollisionGeometry, JointKind, JointSpec, LinkSpec, MorphologyParams, MorphologyTag, RigidTransform,
    LEG_JOINTS, WHEEL_JOINTS,
};
use wheelleg_core::physics::{
    self, ground_clearance, linear_momentum, mechanical_energy, step_dynamics, BaseWrench, Integrator, Mechanism,
    PhysicsConfig, SimState, Terrain,
};

fn kinetic_energy(mech: &Mechanism, s: &SimState) -> f64 {
    mechanical_energy(mech, s, 0.0)
}

fn robot() -> (morphology::RobotModel, Mechanism) {
    let model = MorphologyTag::Flores.build(&MorphologyParams::default()).unwrap();
    let mech = Mechanism::from_model(&model).unwrap();
    (model, mech)
}

fn airborne_state(model: &morphology::RobotModel) -> SimState {
    SimState::at_rest(Vector3::new(0.0, 0.0, 50.0), model.default_angles().to_vec())
}

#[test]
fn free_fall_velocity_change() {
    let (model, mech) = robot();
    let cfg = PhysicsConfig::default();
    let terrain = Terrain::flat();
    let mut s = airborne_state(&model);
    let zero = vec![0.0; 16];
    for _ in 0..400 {
        s = step_dynamics(&mech, &s, &zero, &BaseWrench::default(), &terrain, &cfg).unwrap().0;
    }
    assert!((s.time - 1.0).abs() < 1e-9);
    assert!((s.base_linear_velocity.z + 9.81).abs() < 1e-6, "{}", s.base_linear_velocity.z);
}

fn pendulum(length: f64) -> Mechanism {
    let tiny = Matrix3::identity() * 1e-6;
    let links = vec![
        LinkSpec {
            name: "anchor".into(),
            mass: 1.0,
            com: Vector3::zeros(),
            inertia: Matrix3::identity(),
            collision_geometry: CollisionGeometry::Box { half_extents: Vector3::repeat(0.01) },
        },
        LinkSpec {
            name: "bob".into(),
            mass: 2.0,
            com: Vector3::new(0.0, 0.0, -length),
            inertia: tiny,
            collision_geometry: CollisionGeometry::Capsule { radius: 0.01, length },
        },
    ];
    let joints = vec![JointSpec {
        name: "swing".into(),
        kind: JointKind::RevolutePositionControlled,
        axis: Vector3::y(),
        position_limits: None,
        torque_limit: 1.0,
        velocity_limit: 10.0,
        default_angle: 0.0,
        parent_link: "anchor".into(),
        child_link: "bob".into(),
        frame_offset: RigidTransform::from_translation(0.0, 0.0, 0.0),
    }];
    Mechanism::from_parts(&links, &joints, true).unwrap()
}

/// Time of the `k`-th upward zero crossing, linearly interpolated.
fn crossing_times(samples: &[(f64, f64)]) -> Vec<f64> {
    samples
        .windows(2)
        .filter(|w| w[0].1 < 0.0 && w[1].1 >= 0.0)
        .map(|w| {
            let (t0, a) = w[0];
            let (t1, b) = w[1];
            t0 + (t1 - t0) * (-a / (b - a))
        })
        .collect()
}

#[test]
fn pendulum_small_angle_period() {
    for integrator in [Integrator::SemiImplicitEuler, Integrator::Rk2] {
        let length = 0.8;
        let mech = pendulum(length);
        let cfg = PhysicsConfig { integrator, ..Default::default() };
        let mut s = SimState::at_rest(Vector3::zeros(), vec![0.05]);
        let terrain = Terrain::flat();
        let mut samples = Vec::new();
        for _ in 0..4000 {
            s = step_dynamics(&mech, &s, &[0.0], &BaseWrench::default(), &terrain, &cfg).unwrap().0;
            samples.push((s.time, s.joint_positions[0]));
        }
        let t = crossing_times(&samples);
        assert!(t.len() >= 4);
        let period = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        let analytic = 2.0 * std::f64::consts::PI * (length / 9.81).sqrt();
        assert!(((period - analytic) / analytic).abs() < 0.02, "{integrator:?}: {period} vs {analytic}");
    }
}

/// Holds the default pose with joint PD and lets the robot settle.
fn settle(mech: &Mechanism, model: &morphology::RobotModel, seconds: f64) -> (SimState, Vec<physics::ContactPoint>) {
    let cfg = PhysicsConfig::default();
    let terrain = Terrain::flat();
    let q0 = model.default_angles();
    let mut s = SimState::at_rest(Vector3::zeros(), q0.to_vec());
    s.base_position.z = -ground_clearance(mech, &s, &terrain);
    let mut contacts = Vec::new();
    let steps = (seconds / cfg.substep_dt).round() as usize;
    for _ in 0..steps {
        let mut tau = vec![0.0; 16];
        for &j in &LEG_JOINTS {
            tau[j] = 80.0 * (q0[j] - s.joint_positions[j]) - 2.0 * s.joint_velocities[j];
        }
        for &j in &WHEEL_JOINTS {
            tau[j] = -0.5 * s.joint_velocities[j];
        }
        let out = step_dynamics(mech, &s, &tau, &BaseWrench::default(), &terrain, &cfg).unwrap();
        s = out.0;
        contacts = out.1;
    }
    (s, contacts)
}

#[test]
fn static_normal_forces_carry_weight() {
    let (model, mech) = robot();
    let (s, contacts) = settle(&mech, &model, 3.0);
    let total: f64 = contacts.iter().map(|c| c.normal_force).sum();
    let weight = model.total_mass() * 9.81;
    assert!(((total - weight) / weight).abs() < 0.01, "{total} vs {weight}");
    // Wheels are only damped, so the stance keeps creeping very slowly.
    assert!(s.base_linear_velocity.norm() < 1e-2);
    assert!(contacts.iter().all(|c| c.normal_force >= 0.0));
    assert_eq!(contacts.len(), 4, "only the wheels should touch");
}

#[test]
fn free_flight_momentum_and_energy() {
    let (model, mech) = robot();
    let cfg = PhysicsConfig::default();
    let terrain = Terrain::flat();
    let mut s = airborne_state(&model);
    s.base_linear_velocity = Vector3::new(0.7, -0.4, 1.0);
    s.base_angular_velocity = Vector3::new(0.3, -0.4, 0.25);
    for (i, v) in s.joint_velocities.iter_mut().enumerate() {
        *v = 0.3 * ((i as f64) * 0.7).sin();
    }
    let s0 = s.clone();
    let p0 = linear_momentum(&mech, &s);
    let e0 = mechanical_energy(&mech, &s, cfg.gravity);
    let zero = vec![0.0; 16];
    for _ in 0..400 {
        s = step_dynamics(&mech, &s, &zero, &BaseWrench::default(), &terrain, &cfg).unwrap().0;
        assert!((s.base_orientation.coords.norm() - 1.0).abs() < 1e-9);
        for (q, j) in s.joint_positions.iter().zip(&model.joints) {
            if let Some([lo, hi]) = j.position_limits {
                assert!(*q > lo && *q < hi, "{} reached its limit", j.name);
            }
        }
    }
    let p1 = linear_momentum(&mech, &s);
    let horizontal = ((p1.x - p0.x).powi(2) + (p1.y - p0.y).powi(2)).sqrt();
    assert!(horizontal < 1e-6, "horizontal drift {horizontal}");
    let expected_z = p0.z - mech.total_mass * 9.81;
    assert!((p1.z - expected_z).abs() < 1e-6);
    let e1 = mechanical_energy(&mech, &s, cfg.gravity);
    // The potential energy at altitude would hide drift; use the kinetic scale.
    let ke0 = kinetic_energy(&mech, &s0);
    assert!(((e1 - e0) / ke0.abs()).abs() < 0.01, "energy {e0} -> {e1}");
}

#[test]
fn stepping_is_deterministic() {
    let (model, mech) = robot();
    let cfg = PhysicsConfig::default();
    let terrain = Terrain::flat();
    let mut a = SimState::at_rest(Vector3::zeros(), model.default_angles().to_vec());
    a.base_position.z = -ground_clearance(&mech, &a, &terrain) - 0.003;
    a.base_linear_velocity.x = 0.3;
    let mut b = a.clone();
    let tau: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).cos()).collect();
    for _ in 0..50 {
        a = step_dynamics(&mech, &a, &tau, &BaseWrench::default(), &terrain, &cfg).unwrap().0;
        b = step_dynamics(&mech, &b, &tau, &BaseWrench::default(), &terrain, &cfg).unwrap().0;
    }
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn no_force_when_separated() {
    let (model, mech) = robot();
    let cfg = PhysicsConfig::default();
    let terrain = Terrain::flat();
    let mut s = SimState::at_rest(Vector3::zeros(), model.default_angles().to_vec());
    s.base_position.z = -ground_clearance(&mech, &s, &terrain) + 1e-4;
    let (_, contacts) = step_dynamics(&mech, &s, &[0.0; 16], &BaseWrench::default(), &terrain, &cfg).unwrap();
    assert!(contacts.is_empty());
}

#[test]
fn wheel_torque_drives_forward() {
    let (model, mech) = robot();
    let cfg = PhysicsConfig::default();
    let terrain = Terrain::flat();
    let q0 = model.default_angles();
    let mut s = SimState::at_rest(Vector3::zeros(), q0.to_vec());
    s.base_position.z = -ground_clearance(&mech, &s, &terrain);
    for _ in 0..800 {
        let mut tau = vec![0.0; 16];
        for &j in &LEG_JOINTS {
            tau[j] = 80.0 * (q0[j] - s.joint_positions[j]) - 2.0 * s.joint_velocities[j];
        }
        for &j in &WHEEL_JOINTS {
            tau[j] = 2.0 * (8.0 - s.joint_velocities[j]);
        }
        s = step_dynamics(&mech, &s, &tau, &BaseWrench::default(), &terrain, &cfg).unwrap().0;
    }
    let rolling = 8.0 * 0.09;
    assert!(s.base_position.x > 0.5, "x = {}", s.base_position.x);
    assert!((s.base_linear_velocity.x - rolling).abs() < 0.15 * rolling, "{}", s.base_linear_velocity.x);
    assert!(s.base_position.y.abs() < 0.05);
}

#[test]
fn divergence_reports_last_valid_state() {
    let (model, mech) = robot();
    let cfg = PhysicsConfig::default();
    let mut s = airborne_state(&model);
    s.base_orientation = UnitQuaternion::from_euler_angles(0.1, 0.0, 0.0);
    let tau = vec![f64::NAN; 16];
    let err = step_dynamics(&mech, &s, &tau, &BaseWrench::default(), &Terrain::flat(), &cfg).unwrap_err();
    match err {
        wheelleg_core::Error::SimulationDiverged { last_valid, .. } => assert_eq!(*last_valid, s),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn substep_must_divide_control_period() {
    let bad = PhysicsConfig { substep_dt: 0.003, ..Default::default() };
    assert!(bad.check().is_err());
    assert!(PhysicsConfig::default().check().is_ok());
    assert_eq!(PhysicsConfig::default().substeps_per_control(), 8);
}
