use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use plume::features::{forward, init_random, MiniNetSpec};
use plume::render::render_view;
use plume::stylize::{sample_views, single_frame_gradients, view_seed, FrameState};
use plume::synth::stripes_image;
use plume::transport::{advect_maccormack, advect_sl};
use plume::{CameraPose, Objective, RenderConfig, StylizeConfig};
use plume_bench::{blob, swirl};

fn advection(c: &mut Criterion) {
    let (d, v) = (blob(64), swirl(64));
    c.bench_function("advect_sl 64^3", |b| b.iter(|| advect_sl(black_box(&d), &v, 1.0).unwrap()));
    c.bench_function("advect_maccormack 64^3", |b| b.iter(|| advect_maccormack(black_box(&d), &v, 1.0).unwrap()));
}

fn rendering(c: &mut Criterion) {
    let d = blob(64);
    let pose = CameraPose::new(3.0, -7.0);
    let cfg = RenderConfig::new(0.1);
    c.bench_function("render_view 64^3 oblique", |b| b.iter(|| render_view(black_box(&d), &pose, &cfg).unwrap()));
}

fn network(c: &mut Criterion) {
    let net = init_random(&MiniNetSpec::default(), 1).unwrap();
    let img = stripes_image(64, 64, 8.0, 30.0);
    c.bench_function("forward 64x64", |b| b.iter(|| forward(&net, black_box(&img)).unwrap()));
}

fn iteration(c: &mut Criterion) {
    let d = blob(32);
    let cfg = StylizeConfig {
        lambda: 1.0,
        ..Default::default()
    };
    let obj = Objective::new(init_random(&MiniNetSpec::default(), 7).unwrap(), Some(&stripes_image(64, 64, 8.0, 30.0)), None, &cfg).unwrap();
    let targets = obj.targets(32, 32).unwrap();
    let state = FrameState::new(0, &d, &cfg).unwrap();
    let views = sample_views(&cfg, state.look_at, view_seed(cfg.seed, 0, 0));
    let mut group = c.benchmark_group("stylize");
    group.sample_size(10);
    group.bench_function("iteration 32^3 x 9 views", |b| {
        b.iter(|| single_frame_gradients(&d, &state, &obj, &targets, &cfg, &views).unwrap())
    });
    group.finish();
}

criterion_group!(benches, advection, rendering, network, iteration);
criterion_main!(benches);
