//! Velocity-tracking score of a trained actor under its training command
//! distribution.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::env::{Env, STATE_DIM};
use crate::error::{Error, Result};
use crate::learn::{ActorCritic, TrainSetup};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingScore {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Mean per-step weighted linear-velocity tracking reward; steps after a
    /// fall count as zero.
    pub mean_lin_term: f64,
    /// `mean_lin_term` over its weight, the per-step maximum.
    pub fraction_of_max: f64,
    pub mean_ang_term: f64,
    pub falls: usize,
}

/// Runs `episodes` full episodes with the actor's mean action. Episode `i`
/// draws from the stream `(seed, "eval", i)`.
pub fn tracking_score(
    model: &ActorCritic<f32>,
    setup: &TrainSetup,
    episodes: usize,
    seed: u64,
) -> Result<TrackingScore> {
    if episodes == 0 {
        return Err(Error::Config("tracking score needs at least one episode".into()));
    }
    let robot = setup.robot()?;
    let terrain = setup.terrain()?;
    let mut envs = (0..episodes)
        .map(|i| Env::new(robot.clone(), terrain.clone(), setup.env.clone(), rng_for(seed, "eval", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let steps = setup.env.episode_steps();
    let weight = setup.env.reward.weights.tracking_lin_vel;
    let mut lin = 0.0;
    let mut ang = 0.0;
    let mut falls = 0;
    let mut states = vec![0.0f32; episodes * STATE_DIM];
    let mut live: Vec<usize> = (0..episodes).collect();
    for _ in 0..steps {
        if live.is_empty() {
            break;
        }
        for (k, &e) in live.iter().enumerate() {
            envs[e].write_state(&mut states[k * STATE_DIM..(k + 1) * STATE_DIM]);
        }
        let x = ArrayView2::from_shape((live.len(), STATE_DIM), &states[..live.len() * STATE_DIM])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mean = model.action_mean(x)?;
        let mut still = Vec::with_capacity(live.len());
        for (k, &e) in live.iter().enumerate() {
            let a = std::array::from_fn(|j| f64::from(mean[[k, j]]));
            let out = envs[e].step(&a);
            lin += out.reward.terms[0].weighted;
            ang += out.reward.terms[1].weighted;
            if out.terminated {
                falls += 1;
            } else if !out.truncated {
                still.push(e);
            }
        }
        live = still;
    }
    let n = (episodes * steps) as f64;
    let mean_lin_term = lin / n;
    Ok(TrackingScore {
        episodes,
        steps_per_episode: steps,
        mean_lin_term,
        fraction_of_max: if weight > 0.0 { mean_lin_term / weight } else { 0.0 },
        mean_ang_term: ang / n,
        falls,
    })
}
