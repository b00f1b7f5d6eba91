//! Domain randomization: ranges, per-episode draws and their application.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{NUM_JOINTS, NUM_LEG_JOINTS};
use crate::physics::{Mechanism, PhysicsConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    /// kg, added to the torso.
    pub payload_mass: [f64; 2],
    /// m, added to the torso center of mass, per axis.
    pub com_displacement: [f64; 2],
    /// Sampled absolute Coulomb coefficient.
    pub friction: [f64; 2],
    pub motor_strength: [f64; 2],
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    pub initial_joint_position: [f64; 2],
    /// N, per axis, applied at the base in the world frame.
    pub disturbance: [f64; 2],
    /// m/s, per horizontal axis.
    pub push_velocity: [f64; 2],
    /// Control ticks, inclusive.
    pub observation_delay: [u32; 2],
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            payload_mass: [2.0, 6.0],
            com_displacement: [-0.2, 0.2],
            friction: [0.6, 2.0],
            motor_strength: [0.8, 1.2],
            kp: [0.9, 1.1],
            kd: [0.9, 1.1],
            initial_joint_position: [0.8, 1.2],
            disturbance: [-30.0, 30.0],
            push_velocity: [-1.0, 1.0],
            observation_delay: [0, 4],
        }
    }
}

impl RandomizationRanges {
    pub fn check(&self) -> Result<()> {
        let rows: [(&str, [f64; 2]); 9] = [
            ("payload_mass", self.payload_mass),
            ("com_displacement", self.com_displacement),
            ("friction", self.friction),
            ("motor_strength", self.motor_strength),
            ("kp", self.kp),
            ("kd", self.kd),
            ("initial_joint_position", self.initial_joint_position),
            ("disturbance", self.disturbance),
            ("push_velocity", self.push_velocity),
        ];
        for (name, [lo, hi]) in rows {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("randomization range {name} = [{lo}, {hi}] is malformed")));
            }
        }
        let [lo, hi] = self.observation_delay;
        if lo > hi {
            return Err(Error::Config(format!("randomization range observation_delay = [{lo}, {hi}] is malformed")));
        }
        if self.friction[0] <= 0.0 {
            return Err(Error::Config("friction range must be positive".into()));
        }
        Ok(())
    }
}

/// Which randomizations are active. Disabled rows use the nominal value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub enabled: bool,
    pub payload: bool,
    pub com: bool,
    pub friction: bool,
    pub motor_strength: bool,
    pub gains: bool,
    pub initial_joint_position: bool,
    pub disturbance: bool,
    pub push: bool,
    pub observation_delay: bool,
    /// Seconds between pushes, sampled uniformly.
    pub push_interval_s: [f64; 2],
    pub ranges: RandomizationRanges,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            payload: true,
            com: true,
            friction: true,
            motor_strength: true,
            gains: true,
            initial_joint_position: true,
            disturbance: true,
            push: true,
            observation_delay: true,
            push_interval_s: [5.0, 10.0],
            ranges: RandomizationRanges::default(),
        }
    }
}

impl RandomizationConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRandomizationDraw {
    pub payload_mass_add: f64,
    pub com_displacement: Vector3<f64>,
    /// `None` keeps the terrain's own friction.
    pub friction_coefficient: Option<f64>,
    pub motor_strength_scale: [f64; NUM_JOINTS],
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub initial_joint_position_scale: [f64; NUM_LEG_JOINTS],
    pub disturbance_force: Vector3<f64>,
    pub push_velocity_xy: [f64; 2],
    pub observation_delay_steps: u32,
}

impl DomainRandomizationDraw {
    pub fn nominal() -> Self {
        Self {
            payload_mass_add: 0.0,
            com_displacement: Vector3::zeros(),
            friction_coefficient: None,
            motor_strength_scale: [1.0; NUM_JOINTS],
            kp_scale: 1.0,
            kd_scale: 1.0,
            initial_joint_position_scale: [1.0; NUM_LEG_JOINTS],
            disturbance_force: Vector3::zeros(),
            push_velocity_xy: [0.0; 2],
            observation_delay_steps: 0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Samples every row uniformly within its range. The number of random values
/// consumed does not depend on the ranges.
pub fn sample_randomization<R: Rng + ?Sized>(ranges: &RandomizationRanges, rng: &mut R) -> DomainRandomizationDraw {
    let payload_mass_add = uniform(rng, ranges.payload_mass);
    let com_displacement = Vector3::new(
        uniform(rng, ranges.com_displacement),
        uniform(rng, ranges.com_displacement),
        uniform(rng, ranges.com_displacement),
    );
    let friction = uniform(rng, ranges.friction);
    let motor_strength_scale = std::array::from_fn(|_| uniform(rng, ranges.motor_strength));
    let kp_scale = uniform(rng, ranges.kp);
    let kd_scale = uniform(rng, ranges.kd);
    let initial_joint_position_scale = std::array::from_fn(|_| uniform(rng, ranges.initial_joint_position));
    let disturbance_force = Vector3::new(
        uniform(rng, ranges.disturbance),
        uniform(rng, ranges.disturbance),
        uniform(rng, ranges.disturbance),
    );
    let push_velocity_xy = [uniform(rng, ranges.push_velocity), uniform(rng, ranges.push_velocity)];
    let [dlo, dhi] = ranges.observation_delay;
    let observation_delay_steps = rng.random_range(dlo..=dhi);
    DomainRandomizationDraw {
        payload_mass_add,
        com_displacement,
        friction_coefficient: Some(friction),
        motor_strength_scale,
        kp_scale,
        kd_scale,
        initial_joint_position_scale,
        disturbance_force,
        push_velocity_xy,
        observation_delay_steps,
    }
}

/// Draw according to the toggles: disabled rows are replaced by nominal values.
pub fn draw_for_episode<R: Rng + ?Sized>(cfg: &RandomizationConfig, rng: &mut R) -> DomainRandomizationDraw {
    let full = sample_randomization(&cfg.ranges, rng);
    if !cfg.enabled {
        return DomainRandomizationDraw::nominal();
    }
    let n = DomainRandomizationDraw::nominal();
    DomainRandomizationDraw {
        payload_mass_add: if cfg.payload { full.payload_mass_add } else { n.payload_mass_add },
        com_displacement: if cfg.com { full.com_displacement } else { n.com_displacement },
        friction_coefficient: if cfg.friction { full.friction_coefficient } else { n.friction_coefficient },
        motor_strength_scale: if cfg.motor_strength { full.motor_strength_scale } else { n.motor_strength_scale },
        kp_scale: if cfg.gains { full.kp_scale } else { n.kp_scale },
        kd_scale: if cfg.gains { full.kd_scale } else { n.kd_scale },
        initial_joint_position_scale: if cfg.initial_joint_position {
            full.initial_joint_position_scale
        } else {
            n.initial_joint_position_scale
        },
        disturbance_force: if cfg.disturbance { full.disturbance_force } else { n.disturbance_force },
        push_velocity_xy: if cfg.push { full.push_velocity_xy } else { n.push_velocity_xy },
        observation_delay_steps: if cfg.observation_delay {
            full.observation_delay_steps
        } else {
            n.observation_delay_steps
        },
    }
}

/// Applies the mass-distribution and friction rows. Gains, motor strength,
/// pushes and delay are consumed by the environment itself.
pub fn apply_randomization(mech: &mut Mechanism, physics: &mut PhysicsConfig, draw: &DomainRandomizationDraw) {
    const TORSO: usize = 0;
    if draw.payload_mass_add > 0.0 {
        let at = mech.bodies[TORSO].com;
        mech.add_point_mass(TORSO, draw.payload_mass_add, at);
    }
    if draw.com_displacement != Vector3::zeros() {
        mech.shift_com(TORSO, draw.com_displacement);
    }
    physics.friction_override = draw.friction_coefficient;
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn disabled_draw_is_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = draw_for_episode(&RandomizationConfig::disabled(), &mut rng);
        assert_eq!(d, DomainRandomizationDraw::nominal());
    }

    #[test]
    fn fixed_seed_repeats_sequence() {
        let r = RandomizationRanges::default();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(sample_randomization(&r, &mut a), sample_randomization(&r, &mut b));
        }
    }

    #[test]
    fn malformed_range_is_rejected() {
        let r = RandomizationRanges { kp: [1.2, 0.9], ..Default::default() };
        assert!(r.check().is_err());
        assert!(RandomizationRanges::default().check().is_ok());
    }
}
