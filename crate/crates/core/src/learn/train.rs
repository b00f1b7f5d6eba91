use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Action, VecEnv, NUM_TERMS, TERM_NAMES};
use crate::error::{Error, Result};
use crate::seed::rng_for;

use super::checkpoint::{Checkpoint, RunEcho};
use super::model::ActorCritic;
use super::ppo::{ppo_update, Adam, RolloutBuffer, UpdateStats};
use super::{TrainConfig, TrainSetup, BUILD_ID};

/// One line of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    /// Mean per-step total reward over the rollout.
    pub mean_reward: f64,
    /// Mean per-step weighted value of each reward term.
    pub terms: [f64; NUM_TERMS],
    pub value_loss: f64,
    /// Root-mean-square norm of the encoder's velocity error, m/s.
    pub velocity_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub curve: CurveRow,
    pub update: UpdateStats,
    pub episodes_finished: usize,
    pub mean_episode_length: f64,
    pub mean_episode_return: f64,
    pub fall_fraction: f64,
}

pub struct TrainOutcome {
    pub model: ActorCritic<f32>,
    pub curve: Vec<CurveRow>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string(), "mean_reward".to_string()];
    header.extend(TERM_NAMES.iter().map(|s| s.to_string()));
    header.extend(["value_loss".to_string(), "velocity_error".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iteration.to_string(), r.mean_reward.to_string()];
        rec.extend(r.terms.iter().map(f64::to_string));
        rec.extend([r.value_loss.to_string(), r.velocity_error.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("training curve", e))?;
    Ok(())
}

/// Rollout collection and PPO updates over a batch of environments.
pub struct Trainer {
    cfg: TrainConfig,
    echo: RunEcho,
    venv: VecEnv,
    model: ActorCritic<f32>,
    adam: Adam<f32>,
    lr: f64,
    action_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    buffer: RolloutBuffer,
    iteration: usize,
    episode_return: Vec<f64>,
    episode_length: Vec<usize>,
}

impl Trainer {
    pub fn new(setup: &TrainSetup, cfg: TrainConfig) -> Result<Self> {
        cfg.check()?;
        setup.env.check()?;
        let d = &cfg.model;
        if d.state() != crate::env::STATE_DIM || d.action != crate::morphology::NUM_JOINTS {
            return Err(Error::Config("model dimensions do not match the environment".into()));
        }
        let venv = VecEnv::new(setup.robot()?, setup.terrain()?, &setup.env, cfg.num_envs, cfg.seed)?;
        let mut init = rng_for(cfg.seed, "model", 0);
        let model = ActorCritic::<f32>::new(cfg.model.clone(), cfg.init_noise_std, &mut init)?;
        let adam = Adam::new(model.param_count());
        let buffer = RolloutBuffer::new(cfg.num_envs, cfg.horizon, d.state(), d.velocity, d.action, d.partial);
        let echo = RunEcho {
            build: BUILD_ID.to_string(),
            morphology: setup.tag,
            morphology_params: setup.params.clone(),
            env: setup.env.clone(),
            train: cfg.clone(),
        };
        Ok(Self {
            lr: cfg.learning_rate,
            action_rng: rng_for(cfg.seed, "policy", 0),
            shuffle_rng: rng_for(cfg.seed, "minibatch", 0),
            episode_return: vec![0.0; cfg.num_envs],
            episode_length: vec![0; cfg.num_envs],
            cfg,
            echo,
            venv,
            model,
            adam,
            buffer,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn echo(&self) -> &RunEcho {
        &self.echo
    }

    pub fn model(&self) -> &ActorCritic<f32> {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, &self.echo, self.iteration as u64)
    }

    fn privileged(&self) -> Vec<f32> {
        self.venv
            .envs()
            .iter()
            .flat_map(|e| {
                let v = e.base_velocity();
                [v.x as f32, v.y as f32, v.z as f32]
            })
            .collect()
    }

    fn view<'a>(data: &'a [f32], cols: usize) -> ArrayView2<'a, f32> {
        ArrayView2::from_shape((data.len() / cols, cols), data).expect("row-major batch")
    }

    /// Collects one full rollout and runs the update.
    pub fn step(&mut self) -> Result<IterationStats> {
        let n = self.cfg.num_envs;
        let d = self.cfg.model.clone();
        let (s_dim, a_dim) = (d.state(), d.action);
        let gamma = self.cfg.gamma;
        self.buffer.clear();

        let mut states = vec![0.0f32; n * s_dim];
        let mut term_sums = [0.0f64; NUM_TERMS];
        let mut reward_sum = 0.0;
        let mut finished = 0usize;
        let mut falls = 0usize;
        let mut len_sum = 0usize;
        let mut ret_sum = 0.0;

        for _ in 0..self.cfg.horizon {
            self.venv.write_states(&mut states);
            let vel = self.privileged();
            let (mean, values) = self.model.evaluate(Self::view(&states, s_dim), Self::view(&vel, d.velocity))?;
            let std: Vec<f32> = self.model.log_std.iter().map(|v| v.exp()).collect();

            let mut actions = vec![0.0f32; n * a_dim];
            let mut log_prob = vec![0.0f32; n];
            let mut env_actions: Vec<Action> = Vec::with_capacity(n);
            for e in 0..n {
                let row = &mut actions[e * a_dim..(e + 1) * a_dim];
                for j in 0..a_dim {
                    let z: f32 = self.action_rng.sample(StandardNormal);
                    row[j] = mean[[e, j]] + std[j] * z;
                }
                log_prob[e] = self.model.log_prob(mean.row(e).as_slice().expect("contiguous"), row);
                env_actions.push(std::array::from_fn(|j| f64::from(row[j])));
            }

            let steps = self.venv.step(&env_actions)?;

            let mut rewards = vec![0.0f64; n];
            let mut dones = vec![false; n];
            let mut next_partial = Vec::with_capacity(n * d.partial);
            let mut boot_rows = Vec::new();
            let mut boot_states = Vec::new();
            let mut boot_vel = Vec::new();
            for (e, st) in steps.iter().enumerate() {
                let o = &st.outcome;
                rewards[e] = o.reward.total * self.cfg.reward_scale;
                dones[e] = o.done();
                next_partial.extend(o.info.next_partial.iter().map(|&v| v as f32));
                reward_sum += o.reward.total;
                for (acc, t) in term_sums.iter_mut().zip(o.reward.terms.iter()) {
                    *acc += t.weighted;
                }
                self.episode_return[e] += o.reward.total;
                self.episode_length[e] += 1;
                if let Some(fs) = &st.final_state {
                    boot_rows.push(e);
                    boot_states.extend_from_slice(fs);
                    boot_vel.extend(o.info.base_velocity.iter().map(|&v| v as f32));
                }
                if o.done() {
                    finished += 1;
                    falls += usize::from(o.terminated);
                    len_sum += self.episode_length[e];
                    ret_sum += self.episode_return[e];
                    self.episode_length[e] = 0;
                    self.episode_return[e] = 0.0;
                }
            }
            // Time-limit truncations bootstrap from the value of the final state.
            if !boot_rows.is_empty() {
                let v = self.model.value(Self::view(&boot_states, s_dim), Self::view(&boot_vel, d.velocity))?;
                for (k, &e) in boot_rows.iter().enumerate() {
                    rewards[e] += gamma * f64::from(v[k]);
                }
            }

            let means: Vec<f32> = mean.iter().copied().collect();
            let values: Vec<f32> = values.to_vec();
            self.buffer.push_step(&states, &vel, &actions, &means, &log_prob, &values, &rewards, &dones, &next_partial);
        }

        self.venv.write_states(&mut states);
        let vel = self.privileged();
        let last = self.model.value(Self::view(&states, s_dim), Self::view(&vel, d.velocity))?;
        self.buffer.compute_returns(last.as_slice().expect("contiguous"), gamma, self.cfg.lambda);

        let update =
            ppo_update(&mut self.model, &mut self.adam, &mut self.lr, &self.buffer, &self.cfg, &mut self.shuffle_rng)?;
        self.iteration += 1;

        let samples = (n * self.cfg.horizon) as f64;
        let curve = CurveRow {
            iteration: self.iteration,
            mean_reward: reward_sum / samples,
            terms: term_sums.map(|s| s / samples),
            value_loss: update.loss.value,
            velocity_error: update.loss.velocity_error,
        };
        Ok(IterationStats {
            curve,
            update,
            episodes_finished: finished,
            mean_episode_length: if finished > 0 { len_sum as f64 / finished as f64 } else { 0.0 },
            mean_episode_return: if finished > 0 { ret_sum / finished as f64 } else { 0.0 },
            fall_fraction: if finished > 0 { falls as f64 / finished as f64 } else { 0.0 },
        })
    }

    /// Runs all configured iterations. With an output directory, writes
    /// `curve.csv` and checkpoints under `checkpoints/`; on failure the last
    /// good model is saved as `checkpoints/last_good.bin` before the error is
    /// returned.
    pub fn run(&mut self, out: Option<&Path>, mut on_iteration: impl FnMut(&IterationStats)) -> Result<TrainOutcome> {
        let mut curve = Vec::new();
        let mut checkpoints = Vec::new();
        let ckpt_dir = out.map(|o| o.join("checkpoints"));
        while self.iteration < self.cfg.iterations {
            let stats = match self.step() {
                Ok(s) => s,
                Err(e) => {
                    if let Some(dir) = &ckpt_dir {
                        self.checkpoint().save(dir.join("last_good.bin"))?;
                    }
                    if let Some(o) = out {
                        self.save_curve(o, &curve)?;
                    }
                    return Err(e);
                }
            };
            on_iteration(&stats);
            curve.push(stats.curve);
            let every = self.cfg.checkpoint_every;
            if let Some(dir) = &ckpt_dir {
                if every > 0 && self.iteration.is_multiple_of(every) {
                    let p = dir.join(format!("iter_{:05}.bin", self.iteration));
                    self.checkpoint().save(&p)?;
                    checkpoints.push(p);
                }
            }
        }
        if let (Some(o), Some(dir)) = (out, &ckpt_dir) {
            let p = dir.join("final.bin");
            self.checkpoint().save(&p)?;
            checkpoints.push(p);
            self.save_curve(o, &curve)?;
        }
        Ok(TrainOutcome { model: self.model.clone(), curve, checkpoints })
    }

    fn save_curve(&self, out: &Path, curve: &[CurveRow]) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let p = out.join("curve.csv");
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        write_curve_csv(curve, std::io::BufWriter::new(f))
    }
}
