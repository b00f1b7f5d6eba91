use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use wheelleg_bench::{env, model, setup, shared_terrain, state_batch};
use wheelleg_core::env::VecEnv;
use wheelleg_core::physics::{step_dynamics, BaseWrench, Mechanism};
use wheelleg_core::MorphologyTag;

fn physics_substep(c: &mut Criterion) {
    let mut g = c.benchmark_group("physics_substep");
    for tag in [MorphologyTag::Flores, MorphologyTag::Baseline] {
        let e = env(tag, 1);
        let mech = Mechanism::from_model(e.model()).unwrap();
        let terrain = shared_terrain(tag);
        let state = e.state().clone();
        let tau = [0.0; 16];
        let wrench = BaseWrench::default();
        let cfg = e.config().physics.clone();
        g.bench_function(tag.as_str(), |b| {
            b.iter(|| step_dynamics(&mech, black_box(&state), &tau, &wrench, &terrain, &cfg).unwrap())
        });
    }
    g.finish();
}

fn env_tick(c: &mut Criterion) {
    let mut e = env(MorphologyTag::Flores, 2);
    c.bench_function("env_control_tick", |b| {
        b.iter(|| {
            let out = e.step(black_box(&[0.0; 16]));
            if out.done() {
                e.reset().unwrap();
            }
            out
        })
    });
}

fn vec_env_tick(c: &mut Criterion) {
    let s = setup(MorphologyTag::Flores);
    let mut v = VecEnv::new(s.robot().unwrap(), s.terrain().unwrap(), &s.env, 16, 3).unwrap();
    let actions = vec![[0.0; 16]; 16];
    c.bench_function("vec_env_tick_16", |b| b.iter(|| v.step(black_box(&actions)).unwrap()));
}

fn network_forward(c: &mut Criterion) {
    let m = model(4);
    let e = env(MorphologyTag::Flores, 4);
    let mut g = c.benchmark_group("actor_forward");
    for rows in [1, 128] {
        let x = state_batch(&e, rows);
        g.bench_function(format!("batch_{rows}"), |b| b.iter(|| m.action_mean(black_box(x.view())).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, physics_substep, env_tick, vec_env_tick, network_forward);
criterion_main!(benches);
