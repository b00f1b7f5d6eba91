//! Fixtures shared by the benchmarks in `benches/`.

use std::sync::Arc;

use ndarray::Array2;
use wheelleg_core::env::{Env, EnvConfig, STATE_DIM};
use wheelleg_core::learn::{ActorCritic, ModelDims, TrainSetup};
use wheelleg_core::seed::rng_for;
use wheelleg_core::{MorphologyParams, MorphologyTag};

pub fn setup(tag: MorphologyTag) -> TrainSetup {
    TrainSetup::new(tag, MorphologyParams::default(), EnvConfig::default())
}

/// A freshly reset environment standing on flat ground.
pub fn env(tag: MorphologyTag, seed: u64) -> Env {
    let s = setup(tag);
    Env::seeded(s.robot().unwrap(), s.terrain().unwrap(), s.env.clone(), seed).unwrap()
}

pub fn model(seed: u64) -> ActorCritic<f32> {
    ActorCritic::new(ModelDims::default(), 1.0, &mut rng_for(seed, "bench", 0)).unwrap()
}

/// `rows` copies of the environment's current state vector.
pub fn state_batch(env: &Env, rows: usize) -> Array2<f32> {
    let mut one = vec![0.0f32; STATE_DIM];
    env.write_state(&mut one);
    Array2::from_shape_fn((rows, STATE_DIM), |(_, j)| one[j])
}

pub fn shared_terrain(tag: MorphologyTag) -> Arc<wheelleg_core::Terrain> {
    setup(tag).terrain().unwrap()
}
