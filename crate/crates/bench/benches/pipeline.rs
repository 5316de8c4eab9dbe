use std::hint::black_box;

use atm_bench::{nominal, perceived, scene};
use atm_core::agents::guess_intentions;
use atm_core::config::{ActionKind, Config};
use atm_core::engine::{Engine, IntentionRecord};
use atm_core::geometry::Vec2;
use atm_core::harness::run_episode;
use atm_core::navigation::{plan, Bounds, OccupancyGrid};
use criterion::{criterion_group, criterion_main, Criterion};

fn planner(c: &mut Criterion) {
    let sc = nominal();
    let mut grid = OccupancyGrid::empty(Bounds::centered(8.0, 6.0), 0.05).unwrap();
    for e in sc.entities.iter().filter(|e| !e.dynamic) {
        grid.rasterize(&e.pose, &e.shape, 0.35);
    }
    let (a, b) = (Vec2::new(-3.5, -2.5), Vec2::new(2.5, 2.2));
    c.bench_function("plan across the room", |bench| {
        bench.iter(|| plan(black_box(&grid), a, b).unwrap())
    });
}

fn engine(c: &mut Criterion) {
    let sc = nominal();
    let cfg = Config::default();
    let scene = scene(&sc, &cfg);
    let class = |name: &str| scene.people.iter().chain(&scene.objects).find(|b| b.class == name).unwrap().node;
    let low = IntentionRecord::person(class("person"), class("couch"), ActionKind::MoveTo, 10f64.to_radians(), 0);
    let engine = Engine::new(&cfg);
    c.bench_function("simulate one intention", |bench| {
        bench.iter(|| engine.simulate_intention(black_box(&scene), &low, None).unwrap())
    });
    let wm = perceived(&sc, &cfg);
    c.bench_function("guess intentions sweep", |bench| {
        bench.iter(|| guess_intentions(black_box(&wm), &cfg, &engine).unwrap())
    });
}

fn episode(c: &mut Criterion) {
    let sc = nominal();
    let cfg = Config::default();
    let mut group = c.benchmark_group("episode");
    group.sample_size(10);
    group.bench_function("nominal", |bench| bench.iter(|| run_episode(black_box(&sc), &cfg, None).unwrap()));
    group.finish();
}

criterion_group!(benches, planner, engine, episode);
criterion_main!(benches);
