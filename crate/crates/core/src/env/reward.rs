//! The thirteen-term locomotion reward.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::morphology::{NUM_JOINTS, NUM_LEG_JOINTS};

use super::Command;

pub const NUM_TERMS: usize = 13;

pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "tracking_lin_vel",
    "tracking_ang_vel",
    "lin_vel_z",
    "ang_vel_xy",
    "orientation",
    "base_height",
    "static_pose",
    "dynamic_pose",
    "joint_acc",
    "joint_power",
    "torques",
    "action_rate",
    "smoothness",
];

/// Which quantity selects the linear penalty branch of the tracking terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NearZeroMode {
    /// Standing commands use `-|e|`; moving commands use `exp(-|e|/sigma)`.
    Command,
    /// Literal reading: small tracking errors use `-|e|`.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub tracking_lin_vel: f64,
    pub tracking_ang_vel: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub orientation: f64,
    pub base_height: f64,
    pub static_pose: f64,
    pub dynamic_pose: f64,
    pub joint_acc: f64,
    pub joint_power: f64,
    pub torques: f64,
    pub action_rate: f64,
    pub smoothness: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            tracking_lin_vel: 8.0,
            tracking_ang_vel: 4.0,
            lin_vel_z: -0.1,
            ang_vel_xy: -0.05,
            orientation: -0.2,
            base_height: 2.0,
            static_pose: 5.0,
            dynamic_pose: 1.0,
            joint_acc: -2.5e-7,
            joint_power: -5e-5,
            torques: -5e-5,
            action_rate: -0.01,
            smoothness: -0.01,
        }
    }
}

impl RewardWeights {
    pub fn as_array(&self) -> [f64; NUM_TERMS] {
        [
            self.tracking_lin_vel,
            self.tracking_ang_vel,
            self.lin_vel_z,
            self.ang_vel_xy,
            self.orientation,
            self.base_height,
            self.static_pose,
            self.dynamic_pose,
            self.joint_acc,
            self.joint_power,
            self.torques,
            self.action_rate,
            self.smoothness,
        ]
    }

    /// Keeps only the two velocity-tracking terms.
    pub fn tracking_only() -> Self {
        let d = Self::default();
        let zero = Self {
            tracking_lin_vel: 0.0,
            tracking_ang_vel: 0.0,
            lin_vel_z: 0.0,
            ang_vel_xy: 0.0,
            orientation: 0.0,
            base_height: 0.0,
            static_pose: 0.0,
            dynamic_pose: 0.0,
            joint_acc: 0.0,
            joint_power: 0.0,
            torques: 0.0,
            action_rate: 0.0,
            smoothness: 0.0,
        };
        Self { tracking_lin_vel: d.tracking_lin_vel, tracking_ang_vel: d.tracking_ang_vel, ..zero }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// m/s
    pub sigma1: f64,
    /// rad/s
    pub sigma2: f64,
    /// m
    pub sigma3: f64,
    /// rad^2
    pub sigma4: f64,
    /// rad^2
    pub sigma5: f64,
    /// Target base height above the terrain, m.
    pub target_height: f64,
    pub near_zero_lin: f64,
    pub near_zero_ang: f64,
    pub near_zero_mode: NearZeroMode,
    pub weights: RewardWeights,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            sigma1: 0.25,
            sigma2: 0.25,
            sigma3: 0.05,
            sigma4: 1.0,
            sigma5: 1.0,
            target_height: 0.40,
            near_zero_lin: 0.1,
            near_zero_ang: 0.1,
            near_zero_mode: NearZeroMode::Command,
            weights: RewardWeights::default(),
        }
    }
}

impl RewardParams {
    pub fn check(&self) -> crate::Result<()> {
        let s = [self.sigma1, self.sigma2, self.sigma3, self.sigma4, self.sigma5];
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(crate::Error::Config("reward sigmas must be positive".into()));
        }
        if !(self.near_zero_lin >= 0.0) || !(self.near_zero_ang >= 0.0) {
            return Err(crate::Error::Config("near-zero thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything the reward reads for one control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardInputs {
    pub command: Command,
    pub base_lin_vel: Vector3<f64>,
    pub base_ang_vel: Vector3<f64>,
    pub projected_gravity: Vector3<f64>,
    pub base_height: f64,
    pub q_leg: [f64; NUM_LEG_JOINTS],
    pub q_leg_default: [f64; NUM_LEG_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    pub prev_joint_vel: [f64; NUM_JOINTS],
    pub control_dt: f64,
    pub torques: [f64; NUM_JOINTS],
    /// `a_t`, `a_{t-1}`, `a_{t-2}`.
    pub actions: [[f64; NUM_JOINTS]; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerm {
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: [RewardTerm; NUM_TERMS],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn zero() -> Self {
        Self { terms: [RewardTerm { raw: 0.0, weight: 0.0, weighted: 0.0 }; NUM_TERMS], total: 0.0 }
    }

    pub fn term(&self, name: &str) -> Option<&RewardTerm> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| &self.terms[i])
    }

    pub fn weighted(&self) -> [f64; NUM_TERMS] {
        self.terms.map(|t| t.weighted)
    }
}

/// Whether the standing branch applies to the linear and angular tracking terms.
pub fn near_zero_flags(inp: &RewardInputs, p: &RewardParams) -> (bool, bool) {
    let cmd_lin = inp.command.vx.hypot(inp.command.vy);
    let cmd_ang = inp.command.wz.abs();
    match p.near_zero_mode {
        NearZeroMode::Command => (cmd_lin < p.near_zero_lin, cmd_ang < p.near_zero_ang),
        NearZeroMode::Error => {
            let (ev, ew) = tracking_errors(inp);
            (ev < p.near_zero_lin, ew < p.near_zero_ang)
        }
    }
}

/// `(|e_v|, |e_w|)`: planar velocity error norm and yaw-rate error.
pub fn tracking_errors(inp: &RewardInputs) -> (f64, f64) {
    let ex = inp.command.vx - inp.base_lin_vel.x;
    let ey = inp.command.vy - inp.base_lin_vel.y;
    (ex.hypot(ey), (inp.command.wz - inp.base_ang_vel.z).abs())
}

/// The robot counts as static when it is commanded to stand and is not moving.
pub fn is_static(inp: &RewardInputs, p: &RewardParams) -> bool {
    let cmd_still = inp.command.vx.hypot(inp.command.vy) < p.near_zero_lin && inp.command.wz.abs() < p.near_zero_ang;
    let body_still =
        inp.base_lin_vel.x.hypot(inp.base_lin_vel.y) < p.near_zero_lin && inp.base_ang_vel.z.abs() < p.near_zero_ang;
    cmd_still && body_still
}

pub fn compute_reward(inp: &RewardInputs, p: &RewardParams) -> RewardBreakdown {
    let (ev, ew) = tracking_errors(inp);
    let (nz_lin, nz_ang) = near_zero_flags(inp, p);
    let track_lin = if nz_lin { -ev } else { (-ev / p.sigma1).exp() };
    let track_ang = if nz_ang { -ew } else { (-ew / p.sigma2).exp() };

    let pose_err: f64 = inp.q_leg.iter().zip(&inp.q_leg_default).map(|(q, d)| (q - d) * (q - d)).sum();
    let indicator = if is_static(inp, p) { 1.0 } else { 0.0 };

    let joint_acc: f64 =
        inp.joint_vel.iter().zip(&inp.prev_joint_vel).map(|(v, pv)| ((v - pv) / inp.control_dt).powi(2)).sum();
    let power: f64 = inp.torques.iter().zip(&inp.joint_vel).map(|(t, v)| t.abs() * v.abs()).sum();
    let torque_sq: f64 = inp.torques.iter().map(|t| t * t).sum();
    let [a0, a1, a2] = &inp.actions;
    let rate: f64 = a0.iter().zip(a1).map(|(x, y)| (y - x).powi(2)).sum();
    let smooth: f64 = (0..NUM_JOINTS).map(|i| (a0[i] - 2.0 * a1[i] + a2[i]).powi(2)).sum();

    let raw = [
        track_lin,
        track_ang,
        inp.base_lin_vel.z * inp.base_lin_vel.z,
        inp.base_ang_vel.x * inp.base_ang_vel.x + inp.base_ang_vel.y * inp.base_ang_vel.y,
        inp.projected_gravity.x * inp.projected_gravity.x + inp.projected_gravity.y * inp.projected_gravity.y,
        (-(inp.base_height - p.target_height).abs() / p.sigma3).exp(),
        indicator * (-pose_err / p.sigma4).exp(),
        (-pose_err / p.sigma5).exp(),
        joint_acc,
        power,
        torque_sq,
        rate,
        smooth,
    ];
    let weights = p.weights.as_array();
    let mut terms = [RewardTerm { raw: 0.0, weight: 0.0, weighted: 0.0 }; NUM_TERMS];
    let mut total = 0.0;
    for i in 0..NUM_TERMS {
        let weighted = raw[i] * weights[i];
        terms[i] = RewardTerm { raw: raw[i], weight: weights[i], weighted };
        total += weighted;
    }
    RewardBreakdown { terms, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still() -> RewardInputs {
        RewardInputs {
            command: Command { vx: 0.8, vy: 0.0, wz: 0.0 },
            base_lin_vel: Vector3::new(0.8, 0.0, 0.0),
            base_ang_vel: Vector3::zeros(),
            projected_gravity: -Vector3::z(),
            base_height: 0.4,
            q_leg: [0.3; NUM_LEG_JOINTS],
            q_leg_default: [0.3; NUM_LEG_JOINTS],
            joint_vel: [0.0; NUM_JOINTS],
            prev_joint_vel: [0.0; NUM_JOINTS],
            control_dt: 0.02,
            torques: [0.0; NUM_JOINTS],
            actions: [[0.1; NUM_JOINTS]; 3],
        }
    }

    #[test]
    fn zero_error_moving_command_gives_full_tracking() {
        let r = compute_reward(&still(), &RewardParams::default());
        assert_eq!(r.term("tracking_lin_vel").unwrap().weighted, 8.0);
        assert_eq!(r.term("static_pose").unwrap().weighted, 0.0);
        assert_eq!(r.term("action_rate").unwrap().raw, 0.0);
        assert_eq!(r.term("smoothness").unwrap().raw, 0.0);
    }

    #[test]
    fn vertical_velocity_penalty() {
        let mut inp = still();
        inp.base_lin_vel.z = 0.5;
        let r = compute_reward(&inp, &RewardParams::default());
        assert!((r.term("lin_vel_z").unwrap().weighted + 0.025).abs() < 1e-15);
    }

    #[test]
    fn total_is_sum_of_weighted_terms() {
        let mut inp = still();
        inp.torques[3] = 2.0;
        inp.joint_vel[3] = -4.0;
        inp.actions[1][0] = 0.4;
        let r = compute_reward(&inp, &RewardParams::default());
        let s: f64 = r.terms.iter().map(|t| t.weighted).sum();
        assert!((s - r.total).abs() <= 1e-12 * s.abs().max(1.0));
    }

    #[test]
    fn standing_command_uses_linear_branch() {
        let mut inp = still();
        inp.command = Command::default();
        inp.base_lin_vel = Vector3::new(0.05, 0.0, 0.0);
        let r = compute_reward(&inp, &RewardParams::default());
        assert!((r.term("tracking_lin_vel").unwrap().raw + 0.05).abs() < 1e-15);
        assert_eq!(r.term("static_pose").unwrap().raw, 1.0);
    }

    #[test]
    fn error_mode_switches_on_small_error() {
        let p = RewardParams { near_zero_mode: NearZeroMode::Error, ..Default::default() };
        let mut inp = still();
        inp.base_lin_vel.x = 0.75;
        let r = compute_reward(&inp, &p);
        assert!((r.term("tracking_lin_vel").unwrap().raw + 0.05).abs() < 1e-12);
    }
}
