use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Morphology parameter file. Angles are in degrees, everything else SI.
///
/// Masses, inertias and lengths are estimates for a ~25 kg desk-scale robot;
/// they are not measured values and every one of them can be overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphologyParams {
    #[serde(default = "default_note")]
    pub note: String,
    pub links: LinkParams,
    pub geometry: GeometryParams,
    pub limits_deg: LimitParams,
    pub actuators: ActuatorParams,
    pub default_pose_deg: PoseParams,
}

fn default_note() -> String {
    "estimate, not measured: link masses, inertias and lengths".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub torso_mass: f64,
    pub torso_half_extents: [f64; 3],
    pub hip_mass: f64,
    pub thigh_mass: f64,
    pub calf_mass: f64,
    pub wheel_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryParams {
    /// Longitudinal distance from torso origin to each hip joint.
    pub hip_x: f64,
    /// Lateral distance from the torso midline to a rear hip joint.
    pub rear_hip_y: f64,
    /// Front hip lateral spacing relative to the rear (hip-yaw morphology only).
    pub front_spacing_ratio: f64,
    pub hip_pitch_offset: f64,
    pub thigh_length: f64,
    pub calf_length: f64,
    pub wheel_offset: f64,
    pub wheel_radius: f64,
    pub wheel_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub hip_yaw: [f64; 2],
    pub hip_roll: [f64; 2],
    pub hip_pitch: [f64; 2],
    pub knee: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorParams {
    pub leg_torque_limit: f64,
    pub wheel_torque_limit: f64,
    pub leg_velocity_limit: f64,
    pub wheel_velocity_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseParams {
    pub hip: f64,
    pub hip_pitch: f64,
    pub knee: f64,
}

impl Default for MorphologyParams {
    fn default() -> Self {
        Self {
            note: default_note(),
            links: LinkParams {
                torso_mass: 13.0,
                torso_half_extents: [0.30, 0.10, 0.06],
                hip_mass: 0.6,
                thigh_mass: 0.9,
                calf_mass: 0.5,
                wheel_mass: 1.0,
            },
            geometry: GeometryParams {
                hip_x: 0.25,
                rear_hip_y: 0.12,
                front_spacing_ratio: 1.2,
                hip_pitch_offset: 0.06,
                thigh_length: 0.22,
                calf_length: 0.22,
                wheel_offset: 0.04,
                wheel_radius: 0.09,
                wheel_width: 0.04,
            },
            limits_deg: LimitParams {
                hip_yaw: [-35.0, 100.0],
                hip_roll: [-40.0, 40.0],
                hip_pitch: [-60.0, 150.0],
                knee: [-160.0, -30.0],
            },
            actuators: ActuatorParams {
                leg_torque_limit: 32.0,
                wheel_torque_limit: 8.0,
                leg_velocity_limit: 30.0,
                wheel_velocity_limit: 50.0,
            },
            default_pose_deg: PoseParams { hip: 0.0, hip_pitch: 45.0, knee: -90.0 },
        }
    }
}

impl MorphologyParams {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("morphology params always serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|message| Error::Parse { path: path.to_path_buf(), message })
    }

    /// Names every field outside its validation bounds.
    pub fn check(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} = {v} must be positive"));
            }
        };
        let l = &self.links;
        positive("links.torso_mass", l.torso_mass);
        for (i, h) in l.torso_half_extents.iter().enumerate() {
            positive(&format!("links.torso_half_extents[{i}]"), *h);
        }
        positive("links.hip_mass", l.hip_mass);
        positive("links.thigh_mass", l.thigh_mass);
        positive("links.calf_mass", l.calf_mass);
        positive("links.wheel_mass", l.wheel_mass);
        let g = &self.geometry;
        positive("geometry.hip_x", g.hip_x);
        positive("geometry.rear_hip_y", g.rear_hip_y);
        positive("geometry.thigh_length", g.thigh_length);
        positive("geometry.calf_length", g.calf_length);
        positive("geometry.wheel_radius", g.wheel_radius);
        positive("geometry.wheel_width", g.wheel_width);
        positive("actuators.leg_torque_limit", self.actuators.leg_torque_limit);
        positive("actuators.wheel_torque_limit", self.actuators.wheel_torque_limit);
        positive("actuators.leg_velocity_limit", self.actuators.leg_velocity_limit);
        positive("actuators.wheel_velocity_limit", self.actuators.wheel_velocity_limit);
        if !(g.front_spacing_ratio > 1.0) {
            bad.push(format!("geometry.front_spacing_ratio = {} must exceed 1", g.front_spacing_ratio));
        }
        if !(g.hip_pitch_offset >= 0.0) || !(g.wheel_offset >= 0.0) {
            bad.push("geometry offsets must be non-negative".to_string());
        }
        let lim = &self.limits_deg;
        let p = &self.default_pose_deg;
        for (name, [lo, hi], default) in [
            ("limits_deg.hip_yaw", lim.hip_yaw, p.hip),
            ("limits_deg.hip_roll", lim.hip_roll, p.hip),
            ("limits_deg.hip_pitch", lim.hip_pitch, p.hip_pitch),
            ("limits_deg.knee", lim.knee, p.knee),
        ] {
            if !(lo < hi) {
                bad.push(format!("{name} = [{lo}, {hi}] needs lo < hi"));
            } else if default < lo || default > hi {
                bad.push(format!("{name} excludes default angle {default}"));
            }
        }
        bad
    }
}
