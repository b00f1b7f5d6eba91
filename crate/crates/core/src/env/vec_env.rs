use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::morphology::RobotModel;
use crate::physics::{Mechanism, Terrain};
use crate::seed::rng_for;

use super::{Action, Env, EnvConfig, StepOutcome, STATE_DIM};

/// A batch of independent environments sharing one model and terrain.
/// Finished episodes are reset automatically.
pub struct VecEnv {
    envs: Vec<Env>,
}

/// One environment's transition; `final_state` holds the state vector reached
/// at a time-limit truncation (before the automatic reset).
pub struct VecStep {
    pub outcome: StepOutcome,
    pub final_state: Option<Vec<f32>>,
}

impl VecEnv {
    /// Environment `i` draws from the stream `(seed, "env", i)`.
    pub fn new(
        model: Arc<RobotModel>,
        terrain: Arc<Terrain>,
        cfg: &EnvConfig,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.check()?;
        let nominal = Arc::new(Mechanism::from_model(&model)?);
        let envs = (0..num_envs)
            .map(|i| {
                Env::with_mechanism(
                    model.clone(),
                    nominal.clone(),
                    terrain.clone(),
                    cfg.clone(),
                    rng_for(seed, "env", i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [Env] {
        &mut self.envs
    }

    /// Writes every state vector into `out` (row-major, `len() x STATE_DIM`).
    pub fn write_states(&self, out: &mut [f32]) {
        assert_eq!(out.len(), self.envs.len() * STATE_DIM);
        out.par_chunks_mut(STATE_DIM).zip(self.envs.par_iter()).for_each(|(row, env)| env.write_state(row));
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<VecStep>> {
        assert_eq!(actions.len(), self.envs.len());
        self.envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| {
                let outcome = env.step(a);
                let final_state = if outcome.truncated {
                    let mut s = vec![0.0; STATE_DIM];
                    env.write_state(&mut s);
                    Some(s)
                } else {
                    None
                };
                if outcome.done() {
                    env.reset()?;
                }
                Ok(VecStep { outcome, final_state })
            })
            .collect()
    }
}
