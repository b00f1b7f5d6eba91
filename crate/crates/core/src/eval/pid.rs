//! Heading controller used by the path-following protocols.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::SimState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the magnitude of the integrated error, rad·s.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 2.0, ki: 0.1, kd: 0.0, integral_limit: 0.5 }
    }
}

impl PidGains {
    pub fn check(&self) -> Result<()> {
        let all = [self.kp, self.ki, self.kd, self.integral_limit];
        if all.iter().all(|g| *g >= 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("PID gains must be finite and non-negative: {self:?}")))
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadingPid {
    pub gains: PidGains,
    integral: f64,
    prev_error: Option<f64>,
}

impl HeadingPid {
    pub fn new(gains: PidGains) -> Result<Self> {
        gains.check()?;
        Ok(Self { gains, integral: 0.0, prev_error: None })
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Yaw-rate command for a heading error (wrapped before use).
    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        let e = wrap_angle(error);
        let g = self.gains;
        self.integral = (self.integral + e * dt).clamp(-g.integral_limit, g.integral_limit);
        let de = match self.prev_error {
            Some(p) if dt > 0.0 => wrap_angle(e - p) / dt,
            _ => 0.0,
        };
        self.prev_error = Some(e);
        g.kp * e + g.ki * self.integral + g.kd * de
    }
}

/// One controller update towards `target_heading(state)`.
pub fn pid_heading(pid: &mut HeadingPid, target_heading: impl Fn(&SimState) -> f64, state: &SimState, dt: f64) -> f64 {
    pid.update(target_heading(state) - state.heading(), dt)
}
