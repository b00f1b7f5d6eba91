//! Per-step observation layout and the stacked policy input.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub const OBS_DIM: usize = 53;
pub const HISTORY_LEN: usize = 12;
pub const HISTORY_DIM: usize = OBS_DIM * HISTORY_LEN;
pub const STATE_DIM: usize = OBS_DIM + HISTORY_DIM;
/// Proprioceptive slice used as the encoder's next-step target.
pub const PARTIAL_OBS_DIM: usize = 34;

pub const ANG_VEL: Range<usize> = 0..3;
pub const GRAVITY: Range<usize> = 3..6;
pub const COMMAND: Range<usize> = 6..9;
pub const JOINT_POS_ERROR: Range<usize> = 9..21;
pub const JOINT_VEL: Range<usize> = 21..37;
pub const PREV_ACTION: Range<usize> = 37..53;

/// Layout, in order: body angular velocity (3), unit gravity direction in the
/// body frame (3), command (3), position error of the 12 leg joints (12),
/// velocities of all joints with legs first then wheels (16), previous action (16).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(#[serde(with = "serde_arrays")] pub [f64; OBS_DIM]);

impl Default for Observation {
    fn default() -> Self {
        Self([0.0; OBS_DIM])
    }
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn block(&self, r: Range<usize>) -> &[f64] {
        &self.0[r]
    }

    /// Angular velocity, gravity, position errors and joint velocities.
    pub fn partial(&self) -> [f64; PARTIAL_OBS_DIM] {
        let mut out = [0.0; PARTIAL_OBS_DIM];
        out[..6].copy_from_slice(&self.0[0..6]);
        out[6..].copy_from_slice(&self.0[JOINT_POS_ERROR.start..JOINT_VEL.end]);
        out
    }
}

mod serde_arrays {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::OBS_DIM;

    pub fn serialize<S: Serializer>(v: &[f64; OBS_DIM], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; OBS_DIM], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into().map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"53 entries"))
    }
}

/// Holds the true observation stream, applies the sensing delay and keeps the
/// twelve past (delayed) observations.
#[derive(Clone, Debug)]
pub struct ObservationHistory {
    delay: usize,
    raw: VecDeque<Observation>,
    past: VecDeque<Observation>,
    current: Observation,
}

pub const MAX_DELAY: usize = 8;

impl ObservationHistory {
    pub fn new(first: Observation, delay: usize) -> Self {
        let delay = delay.min(MAX_DELAY);
        Self {
            delay,
            raw: std::iter::repeat_n(first, delay + 1).collect(),
            past: std::iter::repeat_n(first, HISTORY_LEN).collect(),
            current: first,
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn push(&mut self, obs: Observation) {
        self.raw.push_back(obs);
        if self.raw.len() > self.delay + 1 {
            self.raw.pop_front();
        }
        self.past.pop_front();
        self.past.push_back(self.current);
        self.current = self.raw[0];
    }

    /// Observation seen by the policy this tick (possibly delayed).
    pub fn current(&self) -> &Observation {
        &self.current
    }

    pub fn replace_current(&mut self, obs: Observation) {
        self.current = obs;
    }

    /// Past observations, oldest first.
    pub fn past(&self) -> impl Iterator<Item = &Observation> {
        self.past.iter()
    }

    /// `[O_t, O_{t-12}, ..., O_{t-1}]`.
    pub fn write_state(&self, out: &mut [f32]) {
        assert_eq!(out.len(), STATE_DIM, "state vector length");
        for (o, v) in out[..OBS_DIM].iter_mut().zip(self.current.0.iter()) {
            *o = *v as f32;
        }
        for (k, obs) in self.past.iter().enumerate() {
            let start = OBS_DIM * (k + 1);
            for (o, v) in out[start..start + OBS_DIM].iter_mut().zip(obs.0.iter()) {
                *o = *v as f32;
            }
        }
    }

    pub fn state_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.extend_from_slice(&self.current.0);
        for obs in &self.past {
            v.extend_from_slice(&obs.0);
        }
        v
    }
}
