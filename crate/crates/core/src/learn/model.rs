//! History encoder, actor and critic, and the combined PPO loss with its
//! analytic gradient.

use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::observation::{
    ANG_VEL, COMMAND, GRAVITY, HISTORY_LEN, JOINT_POS_ERROR, JOINT_VEL, OBS_DIM, PARTIAL_OBS_DIM, PREV_ACTION,
};
use crate::error::{Error, Result};
use crate::morphology::NUM_JOINTS;

use super::mlp::{Mlp, Scalar};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Network sizes. The default matches the environment; small values exist so
/// the loss gradient can be checked in double precision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub obs: usize,
    pub history_len: usize,
    /// Estimated (and privileged true) base velocity.
    pub velocity: usize,
    pub latent: usize,
    pub partial: usize,
    pub action: usize,
    pub hidden: Vec<usize>,
    /// Hidden sizes of the frozen latent-target network.
    pub target_hidden: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            obs: OBS_DIM,
            history_len: HISTORY_LEN,
            velocity: 3,
            latent: 16,
            partial: PARTIAL_OBS_DIM,
            action: NUM_JOINTS,
            hidden: vec![256, 128],
            target_hidden: vec![64],
        }
    }
}

impl ModelDims {
    pub fn history(&self) -> usize {
        self.obs * self.history_len
    }

    pub fn state(&self) -> usize {
        self.obs + self.history()
    }

    pub fn encoder_out(&self) -> usize {
        self.velocity + self.latent
    }

    pub fn actor_in(&self) -> usize {
        self.obs + self.encoder_out()
    }

    pub fn critic_in(&self) -> usize {
        self.state() + self.velocity
    }

    fn sizes(&self, input: usize, output: usize, hidden: &[usize]) -> Vec<usize> {
        let mut v = vec![input];
        v.extend_from_slice(hidden);
        v.push(output);
        v
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.obs, self.history_len, self.velocity, self.latent, self.partial, self.action];
        if all.contains(&0) || self.hidden.contains(&0) || self.target_hidden.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Input normalization for the standard observation layout.
pub fn observation_scale() -> Vec<f64> {
    let mut s = vec![1.0; OBS_DIM];
    s[ANG_VEL].fill(0.25);
    s[GRAVITY].fill(1.0);
    s[COMMAND].copy_from_slice(&[2.0, 2.0, 0.25]);
    s[JOINT_POS_ERROR].fill(1.0);
    s[JOINT_VEL].fill(0.05);
    s[PREV_ACTION].fill(1.0);
    s
}

/// Scale of the partial observation `[ang vel, gravity, position error, joint vel]`.
pub fn partial_scale() -> Vec<f64> {
    let s = observation_scale();
    [&s[ANG_VEL], &s[GRAVITY], &s[JOINT_POS_ERROR], &s[JOINT_VEL]].concat()
}

pub const PRIVILEGED_VELOCITY_SCALE: f64 = 2.0;

/// One minibatch of rollout data. Inputs are raw (unscaled).
#[derive(Clone, Debug)]
pub struct MiniBatch<F> {
    pub states: Array2<F>,
    pub true_velocity: Array2<F>,
    pub actions: Array2<F>,
    pub old_log_prob: Array1<F>,
    pub old_value: Array1<F>,
    /// Already normalized when normalization is enabled.
    pub advantages: Array1<F>,
    pub returns: Array1<F>,
    pub next_partial: Array2<F>,
    pub old_mean: Array2<F>,
    pub old_log_std: Array1<F>,
}

impl<F: Scalar> MiniBatch<F> {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub clip_value: bool,
    pub velocity_weight: f64,
    pub latent_weight: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_coef: 1.0,
            entropy_coef: 0.01,
            clip_value: true,
            velocity_weight: 1.0,
            latent_weight: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub velocity: f64,
    pub latent: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Root-mean-square norm of the velocity estimate error, m/s.
    pub velocity_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic<F> {
    pub dims: ModelDims,
    pub encoder: Mlp<F>,
    pub actor: Mlp<F>,
    pub log_std: Array1<F>,
    pub critic: Mlp<F>,
    /// Frozen random embedding of the next partial observation.
    pub target: Mlp<F>,
    pub obs_scale: Array1<F>,
    pub partial_scale: Array1<F>,
    pub velocity_scale: F,
}

impl<F: Scalar> ActorCritic<F> {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, init_std: f64, rng: &mut R) -> Result<Self> {
        dims.check()?;
        let encoder = Mlp::random(&dims.sizes(dims.history(), dims.encoder_out(), &dims.hidden), 1.0, rng);
        let actor = Mlp::random(&dims.sizes(dims.actor_in(), dims.action, &dims.hidden), 0.01, rng);
        let critic = Mlp::random(&dims.sizes(dims.critic_in(), 1, &dims.hidden), 1.0, rng);
        let target = Mlp::random(&dims.sizes(dims.partial, dims.latent, &dims.target_hidden), 1.0, rng);
        let standard = dims.obs == OBS_DIM && dims.partial == PARTIAL_OBS_DIM;
        let (obs_scale, partial_scale, velocity_scale) = if standard {
            (observation_scale(), partial_scale(), PRIVILEGED_VELOCITY_SCALE)
        } else {
            (vec![1.0; dims.obs], vec![1.0; dims.partial], 1.0)
        };
        Ok(Self {
            log_std: Array1::from_elem(dims.action, F::of(init_std.ln())),
            encoder,
            actor,
            critic,
            target,
            obs_scale: obs_scale.into_iter().map(F::of).collect(),
            partial_scale: partial_scale.into_iter().map(F::of).collect(),
            velocity_scale: F::of(velocity_scale),
            dims,
        })
    }

    fn scaled_states(&self, states: ArrayView2<F>) -> Result<Array2<F>> {
        if states.ncols() != self.dims.state() {
            return Err(Error::Shape(format!(
                "state vector has {} entries, expected {}",
                states.ncols(),
                self.dims.state()
            )));
        }
        let obs = self.dims.obs;
        let mut x = states.to_owned();
        for mut row in x.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v *= self.obs_scale[c % obs];
            }
        }
        Ok(x)
    }

    fn target_embedding(&self, next_partial: ArrayView2<F>) -> Result<Array2<F>> {
        let x = &next_partial * &self.partial_scale;
        self.target.forward(x.view())
    }

    /// Estimated velocity and latent for a raw history block.
    pub fn encode_history(&self, history: &[F]) -> Result<(Vec<F>, Vec<F>)> {
        if history.len() != self.dims.history() {
            return Err(Error::Shape(format!(
                "history has {} entries, expected {}",
                history.len(),
                self.dims.history()
            )));
        }
        let obs = self.dims.obs;
        let x = Array2::from_shape_fn((1, history.len()), |(_, c)| history[c] * self.obs_scale[c % obs]);
        let out = self.encoder.forward(x.view())?;
        let out = out.row(0);
        let v = self.dims.velocity;
        Ok((out.slice(s![..v]).to_vec(), out.slice(s![v..]).to_vec()))
    }

    fn actor_input(&self, scaled: &Array2<F>, enc: &Array2<F>) -> Array2<F> {
        concatenate![Axis(1), scaled.slice(s![.., ..self.dims.obs]), enc.view()]
    }

    /// Mean actions for raw state vectors.
    pub fn action_mean(&self, states: ArrayView2<F>) -> Result<Array2<F>> {
        let x = self.scaled_states(states)?;
        let enc = self.encoder.forward(x.slice(s![.., self.dims.obs..]))?;
        self.actor.forward(self.actor_input(&x, &enc).view())
    }

    fn critic_input(&self, scaled: &Array2<F>, true_velocity: ArrayView2<F>) -> Result<Array2<F>> {
        if true_velocity.ncols() != self.dims.velocity || true_velocity.nrows() != scaled.nrows() {
            return Err(Error::Shape("privileged velocity batch has the wrong shape".into()));
        }
        let v = true_velocity.mapv(|x| x * self.velocity_scale);
        Ok(concatenate![Axis(1), scaled.view(), v.view()])
    }

    pub fn value(&self, states: ArrayView2<F>, true_velocity: ArrayView2<F>) -> Result<Array1<F>> {
        let x = self.scaled_states(states)?;
        let out = self.critic.forward(self.critic_input(&x, true_velocity)?.view())?;
        Ok(out.column(0).to_owned())
    }

    /// Mean actions and values in one pass over a raw batch.
    pub fn evaluate(&self, states: ArrayView2<F>, true_velocity: ArrayView2<F>) -> Result<(Array2<F>, Array1<F>)> {
        let x = self.scaled_states(states)?;
        let enc = self.encoder.forward(x.slice(s![.., self.dims.obs..]))?;
        let mean = self.actor.forward(self.actor_input(&x, &enc).view())?;
        let v = self.critic.forward(self.critic_input(&x, true_velocity)?.view())?;
        Ok((mean, v.column(0).to_owned()))
    }

    pub fn log_prob(&self, mean: &[F], action: &[F]) -> F {
        let mut lp = F::zero();
        for ((&m, &a), &ls) in mean.iter().zip(action).zip(self.log_std.iter()) {
            let z = (a - m) / ls.exp();
            lp += F::of(-0.5) * z * z - ls - F::of(HALF_LN_2PI);
        }
        lp
    }

    pub fn entropy(&self) -> F {
        self.log_std.iter().map(|&ls| ls + F::of(0.5 + HALF_LN_2PI)).sum()
    }

    /// Trainable segments of the flat parameter vector, in order.
    pub fn segments(&self) -> [(&'static str, Range<usize>); 4] {
        let e = self.encoder.param_count();
        let a = e + self.actor.param_count();
        let l = a + self.log_std.len();
        let c = l + self.critic.param_count();
        [("encoder", 0..e), ("actor", e..a), ("log_std", a..l), ("critic", l..c)]
    }

    pub fn param_count(&self) -> usize {
        self.segments()[3].1.end
    }

    pub fn params(&self) -> Vec<F> {
        let mut p = Vec::with_capacity(self.param_count());
        self.encoder.write_params(&mut p);
        self.actor.write_params(&mut p);
        p.extend(self.log_std.iter().copied());
        self.critic.write_params(&mut p);
        p
    }

    pub fn set_params(&mut self, p: &[F]) {
        assert_eq!(p.len(), self.param_count());
        let mut k = self.encoder.read_params(p);
        k += self.actor.read_params(&p[k..]);
        for v in self.log_std.iter_mut() {
            *v = p[k];
            k += 1;
        }
        self.critic.read_params(&p[k..]);
    }

    pub fn clamp_log_std(&mut self, bounds: [f64; 2]) {
        let (lo, hi) = (F::of(bounds[0]), F::of(bounds[1]));
        self.log_std.mapv_inplace(|v| v.max(lo).min(hi));
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite()
            && self.actor.is_finite()
            && self.critic.is_finite()
            && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ActorCritic<G> {
        ActorCritic {
            dims: self.dims.clone(),
            encoder: self.encoder.cast(),
            actor: self.actor.cast(),
            log_std: self.log_std.mapv(|v| G::of(v.as_f64())),
            critic: self.critic.cast(),
            target: self.target.cast(),
            obs_scale: self.obs_scale.mapv(|v| G::of(v.as_f64())),
            partial_scale: self.partial_scale.mapv(|v| G::of(v.as_f64())),
            velocity_scale: G::of(self.velocity_scale.as_f64()),
        }
    }

    /// PPO loss on a minibatch and its gradient over [`ActorCritic::params`].
    pub fn loss_and_grad(&self, mb: &MiniBatch<F>, hp: &LossParams) -> Result<(LossStats, Vec<F>)> {
        let d = &self.dims;
        let n = mb.len();
        if n == 0 {
            return Err(Error::Shape("empty minibatch".into()));
        }
        let bn = F::of(n as f64);
        let x = self.scaled_states(mb.states.view())?;

        let (enc, enc_cache) = self.encoder.forward_cached(x.slice(s![.., d.obs..]))?;
        let actor_in = self.actor_input(&x, &enc);
        let (mean, actor_cache) = self.actor.forward_cached(actor_in.view())?;
        let std = self.log_std.mapv(F::exp);

        let mut grad = vec![F::zero(); self.param_count()];
        let seg = self.segments();
        let mut g_mean = Array2::<F>::zeros(mean.raw_dim());
        let mut g_log_std = Array1::<F>::zeros(d.action);

        let eps = F::of(hp.clip);
        let (lo, hi) = (F::one() - eps, F::one() + eps);
        let mut surrogate = F::zero();
        let mut clipped = 0usize;
        let mut kl = F::zero();
        for i in 0..n {
            let m = mean.row(i);
            let a = mb.actions.row(i);
            let lp = self.log_prob(m.as_slice().expect("contiguous"), a.as_slice().expect("contiguous"));
            let ratio = (lp - mb.old_log_prob[i]).exp();
            let adv = mb.advantages[i];
            let unclipped = ratio * adv;
            let clipped_term = ratio.max(lo).min(hi) * adv;
            surrogate -= unclipped.min(clipped_term) / bn;
            if ratio < lo || ratio > hi {
                clipped += 1;
            }
            // Gradient flows only through the unclipped branch when it is the minimum.
            let coef = if unclipped <= clipped_term { -unclipped / bn } else { F::zero() };
            for j in 0..d.action {
                let diff = a[j] - m[j];
                let var = std[j] * std[j];
                g_mean[[i, j]] = coef * diff / var;
                g_log_std[j] += coef * (diff * diff / var - F::one());

                let old_ls = mb.old_log_std[j];
                let old_var = (old_ls + old_ls).exp();
                let dm = mb.old_mean[[i, j]] - m[j];
                kl += self.log_std[j] - old_ls + (old_var + dm * dm) / (F::of(2.0) * var) - F::of(0.5);
            }
        }
        kl = kl / bn;

        let entropy = self.entropy();
        let ent_coef = F::of(hp.entropy_coef);
        g_log_std.mapv_inplace(|g| g - ent_coef);

        // Encoder losses.
        let mut g_enc = Array2::<F>::zeros(enc.raw_dim());
        let tgt = self.target_embedding(mb.next_partial.view())?;
        let (nv, nl) = (F::of((n * d.velocity) as f64), F::of((n * d.latent) as f64));
        let (wv, wl) = (F::of(hp.velocity_weight), F::of(hp.latent_weight));
        let mut vel_loss = F::zero();
        let mut lat_loss = F::zero();
        for i in 0..n {
            for k in 0..d.velocity {
                let e = enc[[i, k]] - mb.true_velocity[[i, k]];
                vel_loss += e * e / nv;
                g_enc[[i, k]] = wv * F::of(2.0) * e / nv;
            }
            for k in 0..d.latent {
                let e = enc[[i, d.velocity + k]] - tgt[[i, k]];
                lat_loss += e * e / nl;
                g_enc[[i, d.velocity + k]] = wl * F::of(2.0) * e / nl;
            }
        }

        let g_actor_in = self
            .actor
            .backward(&actor_cache, g_mean, &mut grad[seg[1].1.clone()], true)
            .expect("input gradient requested");
        g_enc += &g_actor_in.slice(s![.., d.obs..]);
        self.encoder.backward(&enc_cache, g_enc, &mut grad[seg[0].1.clone()], false);
        for (dst, g) in grad[seg[2].1.clone()].iter_mut().zip(g_log_std.iter()) {
            *dst = *g;
        }

        // Critic.
        let critic_in = self.critic_input(&x, mb.true_velocity.view())?;
        let (v, critic_cache) = self.critic.forward_cached(critic_in.view())?;
        let vc = F::of(hp.value_coef);
        let mut value_loss = F::zero();
        let mut g_v = Array2::<F>::zeros((n, 1));
        for i in 0..n {
            let (vi, ret, old) = (v[[i, 0]], mb.returns[i], mb.old_value[i]);
            let plain = (vi - ret) * (vi - ret);
            let (loss, g) = if hp.clip_value {
                let delta = vi - old;
                let vclip = old + delta.max(-eps).min(eps);
                let clipped_loss = (vclip - ret) * (vclip - ret);
                // The clipped branch only wins when the clamp is active.
                if plain >= clipped_loss {
                    (plain, F::of(2.0) * (vi - ret))
                } else {
                    (clipped_loss, F::zero())
                }
            } else {
                (plain, F::of(2.0) * (vi - ret))
            };
            value_loss += loss / bn;
            g_v[[i, 0]] = vc * g / bn;
        }
        self.critic.backward(&critic_cache, g_v, &mut grad[seg[3].1.clone()], false);

        let total = surrogate + vc * value_loss - ent_coef * entropy + wv * vel_loss + wl * lat_loss;
        let stats = LossStats {
            total: total.as_f64(),
            surrogate: surrogate.as_f64(),
            value: value_loss.as_f64(),
            entropy: entropy.as_f64(),
            velocity: vel_loss.as_f64(),
            latent: lat_loss.as_f64(),
            approx_kl: kl.as_f64(),
            clip_fraction: clipped as f64 / n as f64,
            velocity_error: (vel_loss.as_f64() * d.velocity as f64).sqrt(),
        };
        if !stats.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(format!(
                "surrogate {:.4e}, value {:.4e}, entropy {:.4e}, velocity {:.4e}, latent {:.4e}, kl {:.4e}",
                stats.surrogate, stats.value, stats.entropy, stats.velocity, stats.latent, stats.approx_kl
            )));
        }
        Ok((stats, grad))
    }
}
