//! Simulation, training and evaluation for wheel-legged quadrupeds.

// `!(x > 0.0)` is used throughout so that NaN fails validation; index loops
// read closer to the math in the dynamics and PPO code.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod env;
pub mod error;
pub mod eval;
pub mod learn;
pub mod morphology;
pub mod physics;
pub mod seed;

pub use env::{Command, Env, EnvConfig, Observation, RewardBreakdown, VecEnv};
pub use error::{Error, Result};
pub use morphology::{MorphologyParams, MorphologyTag, RobotModel};
pub use physics::{ContactPoint, PhysicsConfig, SimState, Terrain, TerrainKind, TerrainParams};
