use std::sync::Arc;

use wheelleg_core::env::observation::{self, HISTORY_LEN};
use wheelleg_core::env::{Command, Env, EnvConfig, VecEnv, OBS_DIM, STATE_DIM};
use wheelleg_core::morphology::{MorphologyParams, MorphologyTag, RobotModel, LEG_JOINTS};
use wheelleg_core::physics::Terrain;

fn model_with(params: &MorphologyParams) -> Arc<RobotModel> {
    Arc::new(MorphologyTag::Flores.build(params).unwrap())
}

fn model() -> Arc<RobotModel> {
    model_with(&MorphologyParams::default())
}

fn terrain() -> Arc<Terrain> {
    Arc::new(Terrain::flat())
}

fn quiet() -> EnvConfig {
    EnvConfig { randomization: wheelleg_core::env::RandomizationConfig::disabled(), ..Default::default() }
}

#[test]
fn reset_gives_full_state_vector_and_is_seeded() {
    let a = Env::seeded(model(), terrain(), EnvConfig::default(), 11).unwrap();
    let b = Env::seeded(model(), terrain(), EnvConfig::default(), 11).unwrap();
    assert_eq!(a.state_vector().len(), STATE_DIM);
    assert_eq!(a.state_vector(), b.state_vector());
    assert_eq!(a.draw(), b.draw());
}

#[test]
fn no_randomization_places_default_pose() {
    let env = Env::seeded(model(), terrain(), quiet(), 3).unwrap();
    let q0 = env.default_angles();
    assert_eq!(env.state().joint_positions, q0.to_vec());
}

#[test]
fn leg_target_follows_scaled_action() {
    let mut params = MorphologyParams::default();
    params.default_pose_deg.hip_pitch = 0.5_f64.to_degrees();
    let env = Env::seeded(model_with(&params), terrain(), quiet(), 0).unwrap();
    let mut a = [0.0; 16];
    a[1] = 1.0;
    let t = env.targets(&a);
    assert!((t.q_des[LEG_JOINTS[1]] - 0.75).abs() < 1e-12);

    let zero = env.targets(&[0.0; 16]);
    for &j in &LEG_JOINTS {
        assert_eq!(zero.q_des[j], env.default_angles()[j]);
    }
    assert_eq!(zero.wheel_vel_des, [0.0; 4]);
}

#[test]
fn pd_torque_vanishes_at_target() {
    let env = Env::seeded(model(), terrain(), quiet(), 0).unwrap();
    let t = env.targets(&[0.0; 16]);
    let (tau, clamped) = env.actuator_torques(&t, env.state());
    assert!(tau.iter().all(|v| *v == 0.0));
    assert_eq!(clamped, 0);
}

#[test]
fn standing_observation_is_gravity_only() {
    let mut env = Env::seeded(model(), terrain(), quiet(), 0).unwrap();
    env.set_command(Some(Command::default()));
    env.reset().unwrap();
    let o = env.observation();
    for (i, v) in o.0.iter().enumerate() {
        let expect = if i == observation::GRAVITY.start + 2 { -1.0 } else { 0.0 };
        assert_eq!(*v, expect, "slot {i}");
    }
}

#[test]
fn delayed_observation_lags_true_stream() {
    let mut cfg = quiet();
    cfg.randomization.enabled = true;
    cfg.randomization.payload = false;
    cfg.randomization.com = false;
    cfg.randomization.friction = false;
    cfg.randomization.motor_strength = false;
    cfg.randomization.gains = false;
    cfg.randomization.initial_joint_position = false;
    cfg.randomization.disturbance = false;
    cfg.randomization.push = false;
    cfg.randomization.ranges.observation_delay = [2, 2];
    let mut env = Env::seeded(model(), terrain(), cfg, 5).unwrap();
    assert_eq!(env.draw().observation_delay_steps, 2);
    let mut truth = vec![env.assemble_observation()];
    let mut seen = vec![*env.observation()];
    for t in 0..6 {
        let mut a = [0.0; 16];
        a[12] = 0.1 * t as f64;
        env.step(&a);
        truth.push(env.assemble_observation());
        seen.push(*env.observation());
    }
    for t in 2..truth.len() {
        assert_eq!(seen[t], truth[t - 2]);
    }
}

#[test]
fn tilt_terminates() {
    let mut env = Env::seeded(model(), terrain(), quiet(), 0).unwrap();
    let mut s = env.state().clone();
    s.base_orientation = nalgebra::UnitQuaternion::from_euler_angles(1.6, 0.0, 0.0);
    s.base_position.z += 0.5;
    env.set_state(s);
    let out = env.step(&[0.0; 16]);
    assert!(out.terminated);
}

#[test]
fn standing_robot_survives() {
    let mut env = Env::seeded(model(), terrain(), quiet(), 0).unwrap();
    env.set_command(Some(Command::default()));
    env.reset().unwrap();
    for k in 0..150 {
        let out = env.step(&[0.0; 16]);
        assert!(!out.done(), "fell at step {k}");
    }
    assert!((env.base_height() - 0.4).abs() < 0.05, "height {}", env.base_height());
}

#[test]
fn history_holds_last_twelve_observations() {
    let mut env = Env::seeded(model(), terrain(), quiet(), 2).unwrap();
    let mut seen = vec![*env.observation()];
    for t in 0..20 {
        let mut a = [0.0; 16];
        a[t % 16] = 0.3;
        env.step(&a);
        seen.push(*env.observation());
    }
    let s = env.state_vector();
    let t = seen.len() - 1;
    assert_eq!(&s[..OBS_DIM], seen[t].as_slice());
    for k in 0..HISTORY_LEN {
        let slot = &s[OBS_DIM * (k + 1)..OBS_DIM * (k + 2)];
        assert_eq!(slot, seen[t - HISTORY_LEN + k].as_slice());
    }
}

#[test]
fn randomized_trajectories_repeat_under_fixed_seed() {
    let run = || {
        let mut env = Env::seeded(model(), terrain(), EnvConfig::default(), 21).unwrap();
        let mut trace = Vec::new();
        for t in 0..40 {
            let a: [f64; 16] = std::array::from_fn(|i| ((t * 16 + i) as f64 * 0.37).sin());
            let out = env.step(&a);
            trace.push(out.reward.total);
            if out.done() {
                env.reset().unwrap();
            }
        }
        (trace, env.state_vector())
    };
    assert_eq!(run(), run());
}

#[test]
fn vec_env_is_independent_of_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut v = VecEnv::new(model(), terrain(), &EnvConfig::default(), 4, 9).unwrap();
            let mut totals = Vec::new();
            for t in 0..30 {
                let acts: Vec<[f64; 16]> =
                    (0..4).map(|e| std::array::from_fn(|i| ((t + e * 7 + i) as f64 * 0.21).cos())).collect();
                for s in v.step(&acts).unwrap() {
                    totals.push(s.outcome.reward.total);
                }
            }
            let mut states = vec![0.0f32; 4 * STATE_DIM];
            v.write_states(&mut states);
            (totals, states)
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn config_roundtrips_through_toml() {
    let cfg = EnvConfig::toy_tracking();
    let text = cfg.to_toml_string();
    assert_eq!(EnvConfig::from_toml_str(&text).unwrap(), cfg);
}
