//! Reinforcement-learning environment around the simulator.

pub mod observation;
pub mod randomization;
pub mod reward;
mod vec_env;

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{RobotModel, LEG_JOINTS, NUM_JOINTS, NUM_LEG_JOINTS, NUM_WHEELS, WHEEL_JOINTS};
use crate::physics::{
    ground_clearance, step_dynamics, wheel_clearance, BaseWrench, ContactKind, ContactPoint, Mechanism, PhysicsConfig,
    SimState, Terrain, TerrainKind, TerrainParams, CONTROL_DT,
};
use crate::seed::rng_for;

pub use observation::{Observation, ObservationHistory, HISTORY_DIM, OBS_DIM, PARTIAL_OBS_DIM, STATE_DIM};
pub use randomization::{
    apply_randomization, draw_for_episode, sample_randomization, DomainRandomizationDraw, RandomizationConfig,
    RandomizationRanges,
};
pub use reward::{compute_reward, RewardBreakdown, RewardInputs, RewardParams, RewardWeights, NUM_TERMS, TERM_NAMES};
pub use vec_env::VecEnv;

/// `[a_leg (12), a_wheel (4)]`, legs in joint order.
pub type Action = [f64; NUM_JOINTS];

/// Desired planar velocity in the body frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl Command {
    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Self { vx, vy, wz }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandRanges {
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    pub wz: [f64; 2],
    /// Resampled `vx` magnitudes below this are pushed up to it.
    pub vx_min_abs: f64,
    /// Fraction of samples replaced by a standing command.
    pub standing_fraction: f64,
}

impl Default for CommandRanges {
    fn default() -> Self {
        Self { vx: [-1.5, 1.5], vy: [-0.8, 0.8], wz: [-2.0, 2.0], vx_min_abs: 0.0, standing_fraction: 0.2 }
    }
}

impl CommandRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Command {
        let u = |rng: &mut R, [lo, hi]: [f64; 2]| if lo < hi { rng.random_range(lo..hi) } else { lo };
        let mut vx = u(rng, self.vx);
        let vy = u(rng, self.vy);
        let wz = u(rng, self.wz);
        let standing = rng.random::<f64>() < self.standing_fraction;
        if standing {
            return Command::default();
        }
        if vx.abs() < self.vx_min_abs {
            vx = if vx < 0.0 { -self.vx_min_abs } else { self.vx_min_abs };
        }
        Command { vx, vy, wz }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSpec {
    pub kind: TerrainKind,
    pub seed: u64,
    pub params: TerrainParams,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self { kind: TerrainKind::Flat, seed: 0, params: TerrainParams::default() }
    }
}

impl TerrainSpec {
    pub fn build(&self) -> Result<Terrain> {
        crate::physics::make_terrain(self.kind, &self.params, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub control_dt: f64,
    /// rad per unit leg action.
    pub action_scale: f64,
    /// rad/s per unit wheel action.
    pub wheel_velocity_scale: f64,
    pub action_clip: f64,
    pub kp_leg: f64,
    pub kd_leg: f64,
    pub kd_wheel: f64,
    pub episode_length_s: f64,
    /// rad between body z and world z.
    pub max_tilt: f64,
    /// m above the terrain under the base.
    pub min_base_height: f64,
    pub terminate_on_base_contact: bool,
    /// Zero disables resampling within an episode.
    pub command_resample_s: f64,
    /// Yaw at reset is drawn from this range (rad).
    pub spawn_yaw: [f64; 2],
    pub commands: CommandRanges,
    pub reward: RewardParams,
    pub randomization: RandomizationConfig,
    pub physics: PhysicsConfig,
    pub terrain: TerrainSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_dt: CONTROL_DT,
            action_scale: 0.25,
            wheel_velocity_scale: 10.0,
            action_clip: 5.0,
            kp_leg: 80.0,
            kd_leg: 2.0,
            kd_wheel: 2.0,
            episode_length_s: 20.0,
            max_tilt: 1.0,
            min_base_height: 0.15,
            terminate_on_base_contact: true,
            command_resample_s: 10.0,
            spawn_yaw: [0.0, 0.0],
            commands: CommandRanges::default(),
            reward: RewardParams::default(),
            randomization: RandomizationConfig::default(),
            physics: PhysicsConfig::default(),
            terrain: TerrainSpec::default(),
        }
    }
}

impl EnvConfig {
    /// Flat ground, no randomization, forward-speed commands and a reward made
    /// of the two tracking terms.
    pub fn toy_tracking() -> Self {
        Self {
            episode_length_s: 5.0,
            command_resample_s: 0.0,
            commands: CommandRanges {
                vx: [-1.0, 1.0],
                vy: [0.0, 0.0],
                wz: [0.0, 0.0],
                vx_min_abs: 0.2,
                standing_fraction: 0.0,
            },
            reward: RewardParams { weights: RewardWeights::tracking_only(), ..Default::default() },
            randomization: RandomizationConfig::disabled(),
            ..Default::default()
        }
    }

    pub fn episode_steps(&self) -> usize {
        (self.episode_length_s / self.control_dt).round() as usize
    }

    pub fn resample_steps(&self) -> Option<usize> {
        let n = (self.command_resample_s / self.control_dt).round() as usize;
        (n > 0).then_some(n)
    }

    pub fn check(&self) -> Result<()> {
        if (self.control_dt - CONTROL_DT).abs() > 1e-12 {
            return Err(Error::Config(format!("control_dt must be {CONTROL_DT} s")));
        }
        if !(self.action_scale > 0.0) || !(self.wheel_velocity_scale > 0.0) || !(self.action_clip > 0.0) {
            return Err(Error::Config("action scales and clip must be positive".into()));
        }
        if self.kp_leg < 0.0 || self.kd_leg < 0.0 || self.kd_wheel < 0.0 {
            return Err(Error::Config("gains must be non-negative".into()));
        }
        if self.episode_steps() <= observation::HISTORY_LEN {
            return Err(Error::Config("episode must be longer than the observation history".into()));
        }
        self.physics.check()?;
        self.reward.check()?;
        self.randomization.ranges.check()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("env config serializes")
    }
}

/// Joint targets produced from one action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActuatorTargets {
    /// Desired positions; wheel entries are unused.
    pub q_des: [f64; NUM_JOINTS],
    /// Desired wheel speeds, rad/s.
    pub wheel_vel_des: [f64; NUM_WHEELS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Body-frame base velocity, available only inside the simulator.
    pub base_velocity: [f64; 3],
    /// Proprioceptive part of the next true observation.
    pub next_partial: Vec<f64>,
    pub clamped_torques: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    /// Failure termination (fall, base contact or diverged simulation).
    pub terminated: bool,
    /// Time limit reached.
    pub truncated: bool,
    pub diverged: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

const PLACEMENT_RETRIES: usize = 10;
const PLACEMENT_TOLERANCE: f64 = 0.01;

pub struct Env {
    model: Arc<RobotModel>,
    nominal: Arc<Mechanism>,
    terrain: Arc<Terrain>,
    cfg: EnvConfig,
    mech: Mechanism,
    physics: PhysicsConfig,
    rng: ChaCha8Rng,
    q_default: [f64; NUM_JOINTS],
    torque_limits: [f64; NUM_JOINTS],
    velocity_limits: [f64; NUM_JOINTS],
    draw: DomainRandomizationDraw,
    state: SimState,
    command: Command,
    fixed_command: Option<Command>,
    prev_actions: [Action; 2],
    last_torques: [f64; NUM_JOINTS],
    contacts: Vec<ContactPoint>,
    history: ObservationHistory,
    step_count: usize,
    next_push: Option<usize>,
    done: bool,
}

impl Env {
    pub fn new(model: Arc<RobotModel>, terrain: Arc<Terrain>, cfg: EnvConfig, rng: ChaCha8Rng) -> Result<Self> {
        cfg.check()?;
        let nominal = Arc::new(Mechanism::from_model(&model)?);
        Self::with_mechanism(model, nominal, terrain, cfg, rng)
    }

    pub(crate) fn with_mechanism(
        model: Arc<RobotModel>,
        nominal: Arc<Mechanism>,
        terrain: Arc<Terrain>,
        cfg: EnvConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let q_default = model.default_angles();
        let torque_limits = model.torque_limits();
        let mut velocity_limits = [0.0; NUM_JOINTS];
        for (v, j) in velocity_limits.iter_mut().zip(&model.joints) {
            *v = j.velocity_limit;
        }
        let state = SimState::at_rest(Vector3::zeros(), q_default.to_vec());
        let mut env = Self {
            mech: (*nominal).clone(),
            model,
            nominal,
            terrain,
            physics: cfg.physics.clone(),
            cfg,
            rng,
            q_default,
            torque_limits,
            velocity_limits,
            draw: DomainRandomizationDraw::nominal(),
            state,
            command: Command::default(),
            fixed_command: None,
            prev_actions: [[0.0; NUM_JOINTS]; 2],
            last_torques: [0.0; NUM_JOINTS],
            contacts: Vec::new(),
            history: ObservationHistory::new(Observation::default(), 0),
            step_count: 0,
            next_push: None,
            done: true,
        };
        env.reset()?;
        Ok(env)
    }

    /// Convenience constructor seeded from a master seed.
    pub fn seeded(model: Arc<RobotModel>, terrain: Arc<Terrain>, cfg: EnvConfig, seed: u64) -> Result<Self> {
        Self::new(model, terrain, cfg, rng_for(seed, "env", 0))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mech
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn draw(&self) -> &DomainRandomizationDraw {
        &self.draw
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn default_angles(&self) -> &[f64; NUM_JOINTS] {
        &self.q_default
    }

    /// Torques applied during the last substep of the last tick.
    pub fn last_torques(&self) -> &[f64; NUM_JOINTS] {
        &self.last_torques
    }

    pub fn contacts(&self) -> &[ContactPoint] {
        &self.contacts
    }

    pub fn wheel_contacts(&self) -> [bool; NUM_WHEELS] {
        let mut flags = [false; NUM_WHEELS];
        for c in &self.contacts {
            if let ContactKind::Wheel(i) = c.kind {
                flags[i] = true;
            }
        }
        flags
    }

    /// Overwrites the simulator state, e.g. to script a test scenario. The
    /// observation history is left untouched.
    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    /// Pins the command, disabling resampling; `None` restores sampling.
    pub fn set_command(&mut self, cmd: Option<Command>) {
        self.fixed_command = cmd;
        if let Some(c) = cmd {
            self.command = c;
            self.refresh_current_command();
        }
    }

    /// Updates the command entries of the observation the policy will see next.
    fn refresh_current_command(&mut self) {
        let mut obs = *self.history.current();
        obs.0[observation::COMMAND].copy_from_slice(&[self.command.vx, self.command.vy, self.command.wz]);
        self.history.replace_current(obs);
    }

    pub fn observation(&self) -> &Observation {
        self.history.current()
    }

    pub fn history(&self) -> &ObservationHistory {
        &self.history
    }

    pub fn state_vector(&self) -> Vec<f64> {
        self.history.state_vector()
    }

    pub fn write_state(&self, out: &mut [f32]) {
        self.history.write_state(out);
    }

    /// Body-frame base velocity.
    pub fn base_velocity(&self) -> Vector3<f64> {
        self.state.base_linear_velocity_body()
    }

    pub fn base_height(&self) -> f64 {
        let p = self.state.base_position;
        p.z - self.terrain.height_at(p.x, p.y).height
    }

    pub fn reset_with_seed(&mut self, seed: u64) -> Result<()> {
        self.rng = rng_for(seed, "env", 0);
        self.reset()
    }

    pub fn reset(&mut self) -> Result<()> {
        self.draw = draw_for_episode(&self.cfg.randomization, &mut self.rng);
        self.mech = (*self.nominal).clone();
        self.physics = self.cfg.physics.clone();
        apply_randomization(&mut self.mech, &mut self.physics, &self.draw);

        let mut q = self.q_default;
        for (k, &j) in LEG_JOINTS.iter().enumerate() {
            q[j] *= self.draw.initial_joint_position_scale[k];
            if let Some([lo, hi]) = self.model.joints[j].position_limits {
                q[j] = q[j].clamp(lo, hi);
            }
        }
        let [ylo, yhi] = self.cfg.spawn_yaw;
        let yaw = if ylo < yhi { self.rng.random_range(ylo..yhi) } else { ylo };
        let mut state = SimState::at_rest(Vector3::zeros(), q.to_vec());
        state.base_orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        state.base_position.z = -wheel_clearance(&self.mech, &state, &self.terrain);
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            if ground_clearance(&self.mech, &state, &self.terrain) >= -PLACEMENT_TOLERANCE {
                placed = true;
                break;
            }
            state.base_position.z += 0.02;
        }
        if !placed {
            return Err(Error::Placement(PLACEMENT_RETRIES));
        }
        self.state = state;

        self.command = match self.fixed_command {
            Some(c) => c,
            None => self.cfg.commands.sample(&mut self.rng),
        };
        self.prev_actions = [[0.0; NUM_JOINTS]; 2];
        self.last_torques = [0.0; NUM_JOINTS];
        self.contacts.clear();
        self.step_count = 0;
        self.next_push = self.schedule_push();
        self.done = false;
        let obs = self.assemble_observation();
        self.history = ObservationHistory::new(obs, self.draw.observation_delay_steps as usize);
        Ok(())
    }

    fn schedule_push(&mut self) -> Option<usize> {
        if !(self.cfg.randomization.enabled && self.cfg.randomization.push) {
            return None;
        }
        let [lo, hi] = self.cfg.randomization.push_interval_s;
        let s = if lo < hi { self.rng.random_range(lo..hi) } else { lo };
        let ticks = ((s / self.cfg.control_dt).round() as usize).max(1);
        Some(self.step_count + ticks)
    }

    /// The undelayed observation of the current state.
    pub fn assemble_observation(&self) -> Observation {
        let mut o = [0.0; OBS_DIM];
        let s = &self.state;
        o[observation::ANG_VEL].copy_from_slice(s.base_angular_velocity.as_slice());
        o[observation::GRAVITY].copy_from_slice(s.projected_gravity().as_slice());
        o[observation::COMMAND].copy_from_slice(&[self.command.vx, self.command.vy, self.command.wz]);
        for (k, &j) in LEG_JOINTS.iter().enumerate() {
            o[observation::JOINT_POS_ERROR.start + k] = s.joint_positions[j] - self.q_default[j];
        }
        let jv = observation::JOINT_VEL.start;
        for (k, &j) in LEG_JOINTS.iter().chain(WHEEL_JOINTS.iter()).enumerate() {
            o[jv + k] = s.joint_velocities[j];
        }
        o[observation::PREV_ACTION].copy_from_slice(&self.prev_actions[0]);
        Observation(o)
    }

    /// Maps an action `[a_leg (12), a_wheel (4)]` to joint targets: leg
    /// positions offset from the default pose and wheel speeds.
    pub fn targets(&self, action: &Action) -> ActuatorTargets {
        let clip = self.cfg.action_clip;
        let mut q_des = self.q_default;
        let mut wheel_vel_des = [0.0; NUM_WHEELS];
        for (k, &j) in LEG_JOINTS.iter().enumerate() {
            q_des[j] = self.q_default[j] + self.cfg.action_scale * action[k].clamp(-clip, clip);
        }
        for (w, &j) in WHEEL_JOINTS.iter().enumerate() {
            let a = action[NUM_LEG_JOINTS + w].clamp(-clip, clip);
            let limit = self.velocity_limits[j];
            wheel_vel_des[w] = (self.cfg.wheel_velocity_scale * a).clamp(-limit, limit);
        }
        ActuatorTargets { q_des, wheel_vel_des }
    }

    /// PD torques for the current state, clamped to the scaled limits. Returns
    /// the torques and the number of clamped joints.
    pub fn actuator_torques(&self, targets: &ActuatorTargets, state: &SimState) -> ([f64; NUM_JOINTS], usize) {
        let kp = self.cfg.kp_leg * self.draw.kp_scale;
        let kd = self.cfg.kd_leg * self.draw.kd_scale;
        let kdw = self.cfg.kd_wheel * self.draw.kd_scale;
        let mut tau = [0.0; NUM_JOINTS];
        let mut clamped = 0;
        for &j in &LEG_JOINTS {
            tau[j] = kp * (targets.q_des[j] - state.joint_positions[j]) - kd * state.joint_velocities[j];
        }
        for (w, &j) in WHEEL_JOINTS.iter().enumerate() {
            tau[j] = kdw * (targets.wheel_vel_des[w] - state.joint_velocities[j]);
        }
        for j in 0..NUM_JOINTS {
            let limit = self.torque_limits[j] * self.draw.motor_strength_scale[j];
            if tau[j].abs() > limit {
                tau[j] = tau[j].clamp(-limit, limit);
                clamped += 1;
            }
        }
        (tau, clamped)
    }

    fn tilt(&self) -> f64 {
        (-self.state.projected_gravity().z).clamp(-1.0, 1.0).acos()
    }

    pub fn step(&mut self, action: &Action) -> StepOutcome {
        assert!(!self.done, "step called on a finished episode; reset first");
        let mut a = *action;
        for v in a.iter_mut() {
            *v = if v.is_finite() { v.clamp(-self.cfg.action_clip, self.cfg.action_clip) } else { 0.0 };
        }
        let targets = self.targets(&a);
        let prev_joint_vel: [f64; NUM_JOINTS] = std::array::from_fn(|j| self.state.joint_velocities[j]);
        let wrench = BaseWrench { force: self.draw.disturbance_force, torque: Vector3::zeros() };
        let mut clamped_torques = 0;
        let mut diverged = false;
        for _ in 0..self.physics.substeps_per_control() {
            let (tau, clamped) = self.actuator_torques(&targets, &self.state);
            clamped_torques += clamped;
            self.last_torques = tau;
            match step_dynamics(&self.mech, &self.state, &tau, &wrench, &self.terrain, &self.physics) {
                Ok((s, c)) => {
                    self.state = s;
                    self.contacts = c;
                }
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }
        self.step_count += 1;

        if self.next_push == Some(self.step_count) {
            let [px, py] = self.draw.push_velocity_xy;
            self.state.base_linear_velocity += Vector3::new(px, py, 0.0);
            self.next_push = self.schedule_push();
        }

        let inputs = self.reward_inputs(&a, &prev_joint_vel);
        let reward = if diverged { RewardBreakdown::zero() } else { compute_reward(&inputs, &self.cfg.reward) };

        let base_contact = self.contacts.iter().any(|c| c.kind == ContactKind::Torso);
        let terminated = diverged
            || self.tilt() > self.cfg.max_tilt
            || self.base_height() < self.cfg.min_base_height
            || (self.cfg.terminate_on_base_contact && base_contact);
        let truncated = !terminated && self.step_count >= self.cfg.episode_steps();

        if self.fixed_command.is_none() {
            if let Some(n) = self.cfg.resample_steps() {
                if self.step_count.is_multiple_of(n) {
                    self.command = self.cfg.commands.sample(&mut self.rng);
                }
            }
        }
        self.prev_actions = [a, self.prev_actions[0]];
        let obs = self.assemble_observation();
        self.history.push(obs);
        self.done = terminated || truncated;

        let v = self.base_velocity();
        StepOutcome {
            reward,
            terminated,
            truncated,
            diverged,
            info: StepInfo { base_velocity: [v.x, v.y, v.z], next_partial: obs.partial().to_vec(), clamped_torques },
        }
    }

    fn reward_inputs(&self, a: &Action, prev_joint_vel: &[f64; NUM_JOINTS]) -> RewardInputs {
        let s = &self.state;
        RewardInputs {
            command: self.command,
            base_lin_vel: s.base_linear_velocity_body(),
            base_ang_vel: s.base_angular_velocity,
            projected_gravity: s.projected_gravity(),
            base_height: self.base_height(),
            q_leg: std::array::from_fn(|k| s.joint_positions[LEG_JOINTS[k]]),
            q_leg_default: std::array::from_fn(|k: usize| self.q_default[LEG_JOINTS[k]]),
            joint_vel: std::array::from_fn(|j| s.joint_velocities[j]),
            prev_joint_vel: *prev_joint_vel,
            control_dt: self.cfg.control_dt,
            torques: self.last_torques,
            actions: [*a, self.prev_actions[0], self.prev_actions[1]],
        }
    }
}
