use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wheelleg_core::env::{EnvConfig, STATE_DIM};
use wheelleg_core::learn::{
    gae, ppo_update, ActorCritic, Adam, Checkpoint, DeterministicPolicy, LossParams, MiniBatch, Mlp, ModelDims, Policy,
    RolloutBuffer, TrainConfig, TrainSetup, Trainer, CHECKPOINT_MAGIC,
};
use wheelleg_core::morphology::{MorphologyParams, MorphologyTag};
use wheelleg_core::{Env, Error};

fn tiny_dims() -> ModelDims {
    ModelDims {
        obs: 5,
        history_len: 2,
        velocity: 2,
        latent: 2,
        partial: 3,
        action: 2,
        hidden: vec![3, 3],
        target_hidden: vec![3],
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-scale..scale))
}

/// A batch whose old log-probabilities and values sit near the current ones,
/// with a spread wide enough to exercise both clipped branches.
fn tiny_batch(model: &ActorCritic<f64>, n: usize, spread: f64, seed: u64) -> MiniBatch<f64> {
    let d = &model.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = randn(&mut rng, (n, d.state()), 1.0);
    let true_velocity = randn(&mut rng, (n, d.velocity), 1.0);
    let actions = randn(&mut rng, (n, d.action), 1.0);
    let (mean, value) = model.evaluate(states.view(), true_velocity.view()).unwrap();
    let jitter = |rng: &mut ChaCha8Rng| if spread > 0.0 { rng.random_range(-spread..spread) } else { 0.0 };
    let old_log_prob = Array1::from_shape_fn(n, |i| {
        model.log_prob(mean.row(i).as_slice().unwrap(), actions.row(i).as_slice().unwrap()) + jitter(&mut rng)
    });
    let old_value = value.mapv(|v| v + jitter(&mut rng));
    MiniBatch {
        advantages: Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)),
        returns: Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)),
        next_partial: randn(&mut rng, (n, d.partial), 1.0),
        old_mean: &mean + &randn(&mut rng, (n, d.action), 0.1),
        old_log_std: model.log_std.mapv(|v| v + 0.05),
        states,
        true_velocity,
        actions,
        old_log_prob,
        old_value,
    }
}

fn tiny_model(seed: u64) -> ActorCritic<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ActorCritic::<f64>::new(tiny_dims(), 0.7, &mut rng).unwrap();
    // Larger actor outputs than the default small initialization.
    for l in &mut m.actor.layers {
        l.w.mapv_inplace(|_| rng.random_range(-0.8..0.8));
        l.b.mapv_inplace(|_| rng.random_range(-0.2..0.2));
    }
    m.log_std = array![-0.3, 0.2];
    m
}

fn loss_at(model: &ActorCritic<f64>, p: &[f64], mb: &MiniBatch<f64>, hp: &LossParams) -> f64 {
    let mut m = model.clone();
    m.set_params(p);
    m.loss_and_grad(mb, hp).unwrap().0.total
}

#[test]
fn loss_gradient_matches_central_differences() {
    let model = tiny_model(5);
    assert!(model.param_count() <= 200, "{} parameters", model.param_count());
    let hp = LossParams::default();
    for seed in 0..3 {
        let mb = tiny_batch(&model, 8, 0.4, seed);
        let (_, grad) = model.loss_and_grad(&mb, &hp).unwrap();
        let p = model.params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] = p[k] + h;
            let up = loss_at(&model, &q, &mb, &hp);
            q[k] = p[k] - h;
            let down = loss_at(&model, &q, &mb, &hp);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst:.3e}");
    }
}

#[test]
fn gradient_segments_each_checked() {
    // Every segment (encoder, actor, log-std, critic) receives a nonzero gradient.
    let model = tiny_model(8);
    let mb = tiny_batch(&model, 8, 0.05, 4);
    let (_, grad) = model.loss_and_grad(&mb, &LossParams::default()).unwrap();
    for (name, r) in model.segments() {
        assert!(grad[r].iter().any(|g| g.abs() > 1e-8), "{name} has no gradient");
    }
}

#[test]
fn equal_advantages_follow_log_prob_gradient() {
    let model = tiny_model(9);
    let mut mb = tiny_batch(&model, 6, 0.0, 2);
    mb.advantages.fill(0.7);
    let hp = LossParams {
        entropy_coef: 0.0,
        value_coef: 0.0,
        velocity_weight: 0.0,
        latent_weight: 0.0,
        ..Default::default()
    };
    let (_, grad) = model.loss_and_grad(&mb, &hp).unwrap();
    let actor: Vec<usize> = model.segments()[1..3].iter().flat_map(|(_, r)| r.clone()).collect();

    // Independent oracle: finite-difference gradient of the summed log-probability.
    let sum_logp = |p: &[f64]| {
        let mut m = model.clone();
        m.set_params(p);
        let mean = m.action_mean(mb.states.view()).unwrap();
        (0..mb.len())
            .map(|i| m.log_prob(mean.row(i).as_slice().unwrap(), mb.actions.row(i).as_slice().unwrap()))
            .sum::<f64>()
    };
    let p = model.params();
    let h = 1e-6;
    let lp_grad: Vec<f64> = actor
        .iter()
        .map(|&k| {
            let mut q = p.clone();
            q[k] += h;
            let up = sum_logp(&q);
            q[k] -= 2.0 * h;
            (up - sum_logp(&q)) / (2.0 * h)
        })
        .collect();
    let ascent: Vec<f64> = actor.iter().map(|&k| -grad[k]).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nl) = (norm(&ascent), norm(&lp_grad));
    let cos = ascent.iter().zip(&lp_grad).map(|(a, b)| a * b).sum::<f64>() / (na * nl);
    assert!((cos - 1.0).abs() < 1e-8, "cosine {cos}");
    // Scale is A / batch size.
    assert!((na / nl - 0.7 / 6.0).abs() < 1e-6);
}

#[test]
fn privileged_velocity_reaches_only_the_critic() {
    let model = tiny_model(3);
    let mb = tiny_batch(&model, 5, 0.1, 7);
    let mut perturbed = mb.clone();
    perturbed.true_velocity.mapv_inplace(|v| v + 0.9);

    let a = model.action_mean(mb.states.view()).unwrap();
    let b = model.action_mean(perturbed.states.view()).unwrap();
    assert_eq!(a, b);
    let va = model.value(mb.states.view(), mb.true_velocity.view()).unwrap();
    let vb = model.value(perturbed.states.view(), perturbed.true_velocity.view()).unwrap();
    assert!(va.iter().zip(&vb).any(|(x, y)| (x - y).abs() > 1e-9));

    // Without the velocity regression loss, actor-side gradients ignore it too.
    let hp = LossParams { velocity_weight: 0.0, ..Default::default() };
    let (_, ga) = model.loss_and_grad(&mb, &hp).unwrap();
    let (_, gb) = model.loss_and_grad(&perturbed, &hp).unwrap();
    let actor_side = model.segments()[0].1.start..model.segments()[2].1.end;
    assert_eq!(ga[actor_side.clone()], gb[actor_side]);
    let critic = model.segments()[3].1.clone();
    assert_ne!(ga[critic.clone()], gb[critic]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_samples_contribute_no_actor_gradient(log_ratio in 0.19f64..2.0, adv in 0.05f64..3.0, favourable in any::<bool>()) {
        let model = tiny_model(21);
        let mut mb = tiny_batch(&model, 1, 0.0, 5);
        let hp = LossParams { value_coef: 0.0, entropy_coef: 0.0, velocity_weight: 0.0, latent_weight: 0.0, ..Default::default() };
        // ratio > 1 + eps with A > 0, or ratio < 1 - eps with A < 0.
        let (lr, a) = if favourable { (log_ratio, adv) } else { (-log_ratio - 0.05, -adv) };
        prop_assume!(lr.exp() > 1.2 || lr.exp() < 0.8);
        mb.old_log_prob[0] -= lr;
        mb.advantages[0] = a;
        let (_, grad) = model.loss_and_grad(&mb, &hp).unwrap();
        prop_assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gae_returns_are_advantages_plus_values(
        seq in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 1..40),
        boot in -5.0f64..5.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = seq.iter().map(|s| s.0).collect();
        let v: Vec<f64> = seq.iter().map(|s| s.1).collect();
        let d: Vec<bool> = seq.iter().map(|s| s.2).collect();
        let (a, ret) = gae(&r, &v, boot, &d, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((ret[t] - a[t] - v[t]).abs() < 1e-12);
        }
        // lambda = 0 reduces to one-step TD errors.
        let (a0, _) = gae(&r, &v, boot, &d, gamma, 0.0);
        for t in 0..r.len() {
            let next = if t + 1 < r.len() { v[t + 1] } else { boot };
            let live = if d[t] { 0.0 } else { 1.0 };
            prop_assert!((a0[t] - (r[t] + gamma * live * next - v[t])).abs() < 1e-12);
        }
    }
}

#[test]
fn gae_hand_examples() {
    let (a, _) = gae(&[0.0; 3], &[0.0; 3], 0.0, &[false; 3], 0.99, 0.95);
    assert_eq!(a, vec![0.0; 3]);
    let (a, _) = gae(&[1.0], &[0.0], 0.0, &[true], 0.99, 0.95);
    assert_eq!(a, vec![1.0]);
    let (a, _) = gae(&[1.0, 1.0], &[0.0, 0.0], 0.0, &[false, false], 0.99, 0.95);
    assert!((a[0] - (1.0 + 0.99 * 0.95)).abs() < 1e-12);
    assert!((a[0] - 1.9405).abs() < 1e-12);
}

#[test]
fn encoder_zero_weights_give_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = ActorCritic::<f32>::new(ModelDims::default(), 1.0, &mut rng).unwrap();
    for l in &mut m.encoder.layers {
        l.w.fill(0.0);
        l.b.fill(0.0);
    }
    let hist: Vec<f32> = (0..m.dims.history()).map(|i| (i as f32 * 0.37).sin()).collect();
    let (v, z) = m.encode_history(&hist).unwrap();
    assert_eq!((v.len(), z.len()), (3, 16));
    assert!(v.iter().chain(&z).all(|&x| x == 0.0));
    assert!(matches!(m.encode_history(&hist[1..]), Err(Error::Shape(_))));
}

#[test]
fn encoder_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = ActorCritic::<f32>::new(ModelDims::default(), 1.0, &mut rng).unwrap();
    let hist: Vec<f32> = (0..636).map(|i| (i as f32 * 0.11).cos()).collect();
    assert_eq!(m.encode_history(&hist).unwrap(), m.encode_history(&hist).unwrap());
}

#[test]
fn three_neuron_single_layer_by_hand() {
    // Unit weights on a crafted input: each output is the input sum plus bias.
    let mut net = Mlp::<f64>::zeros(&[4, 3]);
    net.layers[0].w.fill(1.0);
    net.layers[0].b = array![0.0, 1.0, -2.0];
    let y = net.forward(array![[0.5, -1.0, 2.0, 0.25]].view()).unwrap();
    assert_eq!(y, array![[1.75, 2.75, -0.25]]);
}

#[test]
fn standard_network_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = ActorCritic::<f32>::new(ModelDims::default(), 1.0, &mut rng).unwrap();
    assert_eq!(m.encoder.sizes(), vec![636, 256, 128, 19]);
    assert_eq!(m.actor.sizes(), vec![72, 256, 128, 16]);
    assert_eq!(m.critic.sizes(), vec![692, 256, 128, 1]);
    assert_eq!(m.log_std.len(), 16);
    assert_eq!(m.dims.state(), STATE_DIM);
}

fn filled_buffer(model: &ActorCritic<f32>, n_env: usize, horizon: usize, seed: u64) -> RolloutBuffer {
    let d = &model.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = RolloutBuffer::new(n_env, horizon, d.state(), d.velocity, d.action, d.partial);
    let mut r = |k: usize| -> Vec<f32> { (0..k).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    for _ in 0..horizon {
        let states = r(n_env * d.state());
        let vel = r(n_env * d.velocity);
        let actions = r(n_env * d.action);
        let sv = ndarray::ArrayView2::from_shape((n_env, d.state()), &states).unwrap();
        let vv = ndarray::ArrayView2::from_shape((n_env, d.velocity), &vel).unwrap();
        let (mean, value) = model.evaluate(sv, vv).unwrap();
        let logp: Vec<f32> = (0..n_env)
            .map(|i| model.log_prob(mean.row(i).as_slice().unwrap(), &actions[i * d.action..(i + 1) * d.action]))
            .collect();
        let rewards: Vec<f64> = r(n_env).into_iter().map(f64::from).collect();
        let partial = r(n_env * d.partial);
        buf.push_step(
            &states,
            &vel,
            &actions,
            mean.as_slice().unwrap(),
            &logp,
            value.as_slice().unwrap(),
            &rewards,
            &vec![false; n_env],
            &partial,
        );
    }
    buf.compute_returns(&vec![0.0; n_env], 0.99, 0.95);
    buf
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = tiny_model(4).cast::<f32>();
    let buf = filled_buffer(&model, 4, 6, 1);
    let cfg =
        TrainConfig { learning_rate: 0.0, epochs: 3, minibatches: 2, model: model.dims.clone(), ..Default::default() };
    let before = model.clone();
    let mut adam = Adam::new(model.param_count());
    let mut lr = 0.0;
    let stats = ppo_update(&mut model, &mut adam, &mut lr, &buf, &cfg, &mut rng).unwrap();
    assert_eq!(stats.minibatch_steps, 6);
    assert_eq!(model, before);
    let bits = |m: &ActorCritic<f32>| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&model), bits(&before));
}

#[test]
fn update_changes_parameters_and_is_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = tiny_model(4).cast::<f32>();
        let buf = filled_buffer(&model, 4, 6, 1);
        let cfg = TrainConfig { minibatches: 2, model: model.dims.clone(), ..Default::default() };
        let mut adam = Adam::new(model.param_count());
        let mut lr = 1e-3;
        ppo_update(&mut model, &mut adam, &mut lr, &buf, &cfg, &mut rng).unwrap();
        model
    };
    let a = run();
    assert_eq!(a, run());
    assert_ne!(a, tiny_model(4).cast::<f32>());
}

#[test]
fn minibatch_advantages_are_normalized() {
    let model = tiny_model(6).cast::<f32>();
    let buf = filled_buffer(&model, 8, 10, 3);
    let idx: Vec<usize> = (0..buf.len()).step_by(3).collect();
    let mb = buf.minibatch(&idx, &model.log_std, true);
    let n = mb.len() as f64;
    let mean = mb.advantages.iter().map(|&a| f64::from(a)).sum::<f64>() / n;
    let std = (mb.advantages.iter().map(|&a| (f64::from(a) - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-6, "{mean}");
    assert!((std - 1.0).abs() < 1e-6, "{std}");
}

fn small_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        num_envs: 4,
        horizon: 8,
        iterations: 2,
        minibatches: 2,
        epochs: 2,
        checkpoint_every: 1,
        seed,
        model: ModelDims { hidden: vec![32, 16], ..Default::default() },
        ..Default::default()
    }
}

fn setup() -> TrainSetup {
    TrainSetup::new(MorphologyTag::Flores, MorphologyParams::default(), EnvConfig::default())
}

#[test]
fn training_curve_is_reproducible() {
    let run = || {
        let mut t = Trainer::new(&setup(), small_train_config(11)).unwrap();
        t.run(None, |_| {}).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.curve.len(), 2);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model, b.model);
    assert!(a.curve.iter().all(|r| r.mean_reward.is_finite()));
}

#[test]
fn training_writes_curve_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&setup(), small_train_config(2)).unwrap();
    let out = t.run(Some(dir.path()), |_| {}).unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 1 + 13 + 2);
    assert_eq!(header[2], "tracking_lin_vel");
    assert_eq!(lines.count(), 2);
    let ck = Checkpoint::load(&out.checkpoints[0]).unwrap();
    assert_eq!(ck.iteration, 1);
    assert_eq!(ck.seed, 2);
    assert_eq!(ck.echo().unwrap().train.seed, 2);
}

fn rollout(policy: &mut dyn Policy, seed: u64) -> Vec<f64> {
    let s = setup();
    let mut env = Env::seeded(s.robot().unwrap(), s.terrain().unwrap(), s.env.clone(), seed).unwrap();
    let mut trace = Vec::new();
    for _ in 0..40 {
        let a = policy.act(&env).unwrap();
        let o = env.step(&a);
        trace.push(o.reward.total);
        trace.extend(env.state().joint_positions.iter());
        if o.done() {
            break;
        }
    }
    trace
}

#[test]
fn checkpoint_round_trip_reproduces_rollout() {
    let mut t = Trainer::new(&setup(), small_train_config(5)).unwrap();
    t.step().unwrap();
    let ck = t.checkpoint();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
    let restored = back.to_model().unwrap();
    assert_eq!(&restored, t.model());

    let mut before = DeterministicPolicy::new(t.model().clone());
    let mut after = DeterministicPolicy::new(restored);
    assert_eq!(rollout(&mut before, 9), rollout(&mut after, 9));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let t = Trainer::new(&setup(), small_train_config(5)).unwrap();
    let bytes = t.checkpoint().to_bytes();

    let truncated = &bytes[..bytes.len() - 10];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::CorruptCheckpoint(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..100]), Err(Error::CorruptCheckpoint(_))));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::CheckpointFormat(_))));

    let mut version = bytes.clone();
    version[CHECKPOINT_MAGIC.len()] = 99;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::CheckpointVersion { found: 99, expected: 1 })));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(Checkpoint::from_bytes(&trailing), Err(Error::CorruptCheckpoint(_))));
}
