//! Compares the parallel fan-out scoring path against the always-sequential
//! variant on a realistic pool-scoring workload.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use al_lab::mc::{mc_outputs, McMode, PerturbationSpec};
use al_lab::nn::{Network, NetworkConfig};
use al_lab::parallel::{ordered_map, ordered_map_seq};
use al_lab::rng::{instance_stream, stream};

fn scoring_workload(c: &mut Criterion) {
    let mut rng = stream(7, "bench-init");
    let net = Network::new(
        &NetworkConfig { input_dim: 8, hidden: vec![32, 16], classes: 4, dropout: 0.2 },
        &mut rng,
    )
    .unwrap();
    let spec = PerturbationSpec::new(0.3).unwrap();
    let pool: Vec<(u64, Vec<f64>)> = (0..256u64)
        .map(|id| {
            let x = (0..8).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            (id, x)
        })
        .collect();

    let score = |&(id, ref x): &(u64, Vec<f64>)| {
        let mut r = instance_stream(7, "score", 1, id);
        let (g, gp) = mc_outputs(&net, x, McMode::Balc, 20, &spec, &mut r).unwrap();
        al_lab::acquisition::balc_jsd(&g, &gp.unwrap()).unwrap()
    };

    let mut group = c.benchmark_group("pool-scoring");
    group.bench_with_input(BenchmarkId::new("parallel", pool.len()), &pool, |b, pool| {
        b.iter(|| ordered_map(pool, score))
    });
    group.bench_with_input(BenchmarkId::new("sequential", pool.len()), &pool, |b, pool| {
        b.iter(|| ordered_map_seq(pool, score))
    });
    group.finish();
}

criterion_group!(benches, scoring_workload);
criterion_main!(benches);
