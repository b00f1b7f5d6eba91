//! Policy learning: history encoder, actor-critic and the PPO trainer.

pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod ppo;
mod train;

use std::sync::Arc;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::morphology::{MorphologyParams, MorphologyTag, RobotModel, NUM_JOINTS};
use crate::physics::Terrain;

pub use checkpoint::{Checkpoint, RunEcho, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Mlp, Scalar};
pub use model::{ActorCritic, LossParams, LossStats, MiniBatch, ModelDims};
pub use ppo::{clip_grad_norm, gae, normalize_advantages, ppo_update, Adam, RolloutBuffer, UpdateStats};
pub use train::{write_curve_csv, CurveRow, IterationStats, TrainOutcome, Trainer};

/// Identifies this build in every written artifact.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_envs: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Multiplies rewards before advantage estimation; logged curves are unscaled.
    pub reward_scale: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub clip_value_loss: bool,
    pub velocity_loss_weight: f64,
    pub latent_loss_weight: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Adapts the learning rate towards this KL divergence per minibatch.
    pub desired_kl: Option<f64>,
    pub init_noise_std: f64,
    pub log_std_bounds: [f64; 2],
    pub iterations: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub model: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 128,
            horizon: 24,
            learning_rate: 1e-3,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            reward_scale: 0.02,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.01,
            value_coef: 1.0,
            clip_value_loss: true,
            velocity_loss_weight: 1.0,
            latent_loss_weight: 1.0,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            desired_kl: Some(0.01),
            init_noise_std: 1.0,
            log_std_bounds: [-4.0, 1.0],
            iterations: 1500,
            checkpoint_every: 100,
            seed: 0,
            model: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the flat-ground tracking task: a narrower initial action
    /// distribution, no entropy bonus and a fixed learning rate.
    pub fn toy() -> Self {
        Self { init_noise_std: 0.5, entropy_coef: 0.0, learning_rate: 3e-4, desired_kl: None, ..Default::default() }
    }

    pub fn check(&self) -> Result<()> {
        let counts = [
            ("num_envs", self.num_envs),
            ("horizon", self.horizon),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("iterations", self.iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_envs * self.horizon < self.minibatches {
            return Err(Error::Config("fewer samples than minibatches".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip ratio {} outside (0, 1)", self.clip)));
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("reward_scale", self.reward_scale),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("velocity_loss_weight", self.velocity_loss_weight),
            ("latent_loss_weight", self.latent_loss_weight),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("gamma and lambda must lie in (0, 1]".into()));
        }
        if !(self.max_grad_norm > 0.0) || !(self.init_noise_std > 0.0) {
            return Err(Error::Config("max_grad_norm and init_noise_std must be positive".into()));
        }
        let [lo, hi] = self.log_std_bounds;
        if !(lo <= hi) || !(lo..=hi).contains(&self.init_noise_std.ln()) {
            return Err(Error::Config("initial noise outside the log-std bounds".into()));
        }
        if matches!(self.desired_kl, Some(k) if !(k > 0.0)) {
            return Err(Error::Config("desired_kl must be positive".into()));
        }
        self.model.check()
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            clip_value: self.clip_value_loss,
            velocity_weight: self.velocity_loss_weight,
            latent_weight: self.latent_loss_weight,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Everything needed to build environments for one morphology.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub tag: MorphologyTag,
    pub params: MorphologyParams,
    pub env: EnvConfig,
}

impl TrainSetup {
    pub fn new(tag: MorphologyTag, params: MorphologyParams, env: EnvConfig) -> Self {
        Self { tag, params, env }
    }

    pub fn robot(&self) -> Result<Arc<RobotModel>> {
        Ok(Arc::new(self.tag.build(&self.params)?))
    }

    pub fn terrain(&self) -> Result<Arc<Terrain>> {
        Ok(Arc::new(self.env.terrain.build()?))
    }
}

/// Anything that maps the environment's current state vector to an action.
pub trait Policy {
    fn act(&mut self, env: &Env) -> Result<Action>;
}

/// Mean action of a trained actor; no sampling.
pub struct DeterministicPolicy {
    model: ActorCritic<f32>,
    state: Vec<f32>,
}

impl DeterministicPolicy {
    pub fn new(model: ActorCritic<f32>) -> Self {
        let n = model.dims.state();
        Self { model, state: vec![0.0; n] }
    }

    pub fn model(&self) -> &ActorCritic<f32> {
        &self.model
    }
}

impl Policy for DeterministicPolicy {
    fn act(&mut self, env: &Env) -> Result<Action> {
        env.write_state(&mut self.state);
        let x = ArrayView2::from_shape((1, self.state.len()), &self.state).map_err(|e| Error::Shape(e.to_string()))?;
        let mean = self.model.action_mean(x)?;
        if mean.ncols() != NUM_JOINTS {
            return Err(Error::Shape(format!("actor produces {} actions", mean.ncols())));
        }
        Ok(std::array::from_fn(|j| f64::from(mean[[0, j]])))
    }
}
