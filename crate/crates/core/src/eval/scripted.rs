use crate::env::{Action, Env, EnvConfig};
use crate::error::Result;
use crate::learn::Policy;
use crate::morphology::{Leg, MorphologyParams, MorphologyTag, NUM_JOINTS, NUM_LEG_JOINTS};

/// Hand-written wheel policy for exercising the protocols without a trained
/// network. Legs hold the default pose. On the hip-yaw morphology the front
/// hips steer each front wheel along its own rolling direction; otherwise the
/// robot skid-steers. Lateral commands are ignored.
#[derive(Clone, Debug)]
pub struct ScriptedWheelPolicy {
    wheel_radius: f64,
    /// Wheel contact positions in the base frame, `[x, y]`, left positive.
    wheel_xy: [[f64; 2]; 4],
    steer: bool,
    /// Per-leg `[lo, hi]` steering angle, counter-clockwise positive.
    steer_limits: [[f64; 2]; 4],
    action_scale: f64,
    wheel_velocity_scale: f64,
}

/// Effective over geometric track width when skid-steering.
const SCRUB_FACTOR: f64 = 2.0;

impl ScriptedWheelPolicy {
    pub fn new(tag: MorphologyTag, params: &MorphologyParams, env: &EnvConfig) -> Self {
        let g = &params.geometry;
        let steer = tag == MorphologyTag::Flores;
        let outboard = g.hip_pitch_offset + g.wheel_offset;
        let wheel_xy = Leg::ALL.map(|l| {
            let hip_y = if steer && l.is_front() { g.rear_hip_y * g.front_spacing_ratio } else { g.rear_hip_y };
            let y = if steer { hip_y + outboard } else { SCRUB_FACTOR * (hip_y + outboard) };
            [if l.is_front() { g.hip_x } else { -g.hip_x }, l.side() * y]
        });
        let [lo, hi] = params.limits_deg.hip_yaw.map(f64::to_radians);
        // The right hip turns about -z, mirroring its range.
        let steer_limits = Leg::ALL.map(|l| if l.side() > 0.0 { [lo, hi] } else { [-hi, -lo] });
        Self {
            wheel_radius: g.wheel_radius,
            wheel_xy,
            steer,
            steer_limits,
            action_scale: env.action_scale,
            wheel_velocity_scale: env.wheel_velocity_scale,
        }
    }
}

impl Policy for ScriptedWheelPolicy {
    fn act(&mut self, env: &Env) -> Result<Action> {
        let c = env.command();
        let mut a = [0.0; NUM_JOINTS];
        for (k, leg) in Leg::ALL.iter().enumerate() {
            let [x, y] = self.wheel_xy[k];
            // Contact velocity of a wheel rigidly attached to the body.
            let (vx, vy) = (c.vx - c.wz * y, c.wz * x);
            let rolling = if self.steer && leg.is_front() {
                let [lo, hi] = self.steer_limits[k];
                let delta = if vx.abs() + vy.abs() > 1e-9 { vy.atan2(vx) } else { 0.0 };
                // Keep the angle within half a turn of straight ahead.
                let delta = if delta > std::f64::consts::FRAC_PI_2 {
                    delta - std::f64::consts::PI
                } else if delta < -std::f64::consts::FRAC_PI_2 {
                    delta + std::f64::consts::PI
                } else {
                    delta
                };
                let delta = delta.clamp(lo, hi);
                a[3 * k] = leg.side() * delta / self.action_scale;
                vx * delta.cos() + vy * delta.sin()
            } else {
                vx
            };
            a[NUM_LEG_JOINTS + k] = rolling / self.wheel_radius / self.wheel_velocity_scale;
        }
        Ok(a)
    }
}
