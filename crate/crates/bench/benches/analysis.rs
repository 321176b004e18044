use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use declassiflow_bench::{diamond_chain, fixture, FIXTURES};
use declassiflow_core::cfg::expand_loops;
use declassiflow_core::gen::{random_program, GenConfig};
use declassiflow_core::knowledge::{init_knowledge, propagate};
use declassiflow_core::oracle::check_frontier_property;
use declassiflow_core::pipeline::{run_pipeline, RunConfig};
use declassiflow_core::protect::protected_name;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn propagation(c: &mut Criterion) {
    let mut g = c.benchmark_group("propagate");
    for n in [4, 16, 64] {
        let p = diamond_chain(n);
        let f = &p.functions[0];
        let init = init_knowledge(f, &BTreeMap::new()).unwrap();
        g.bench_with_input(BenchmarkId::new("diamonds", n), &init, |b, init| {
            b.iter(|| propagate(black_box(init.clone()), f))
        });
    }
    let mut rng = StdRng::seed_from_u64(1);
    let progs: Vec<_> = (0..32).map(|_| random_program(&mut rng, &GenConfig::default())).collect();
    g.bench_function("random_x32", |b| {
        b.iter(|| {
            for p in &progs {
                let f = &p.functions[0];
                black_box(propagate(init_knowledge(f, &BTreeMap::new()).unwrap(), f));
            }
        })
    });
    g.finish();
}

fn expansion(c: &mut Criterion) {
    let p = fixture("stream_like");
    c.bench_function("expand/nested_loops", |b| b.iter(|| expand_loops(black_box(&p.functions[0])).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    let mut cfg = RunConfig::default();
    cfg.constraints.insert("chacha".into(), vec!["len >= 0".parse().unwrap()]);
    for (name, _) in FIXTURES {
        let p = fixture(name);
        g.bench_function(name, |b| b.iter(|| run_pipeline(black_box(&p), &cfg).unwrap()));
    }
    g.finish();
}

fn verification(c: &mut Criterion) {
    let p = fixture("sort_like");
    let cfg = RunConfig::default();
    let out = run_pipeline(&p, &cfg).unwrap();
    let prot = out.protected.clone().unwrap();
    let fm = out.frontier_map();
    let pc = out.property_config(&p, &cfg.verify_limits);
    let target = protected_name("sort");
    c.bench_function("verify/sort_like", |b| b.iter(|| check_frontier_property(&prot, &target, &fm, &pc).unwrap()));
}

criterion_group!(benches, propagation, expansion, pipeline, verification);
criterion_main!(benches);
