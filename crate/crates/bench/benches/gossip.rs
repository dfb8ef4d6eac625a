use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gossiplab::topology::{build_rgg, connectivity_radius};
use gossiplab::{Gossip, Graph, InitialCondition, Protocol, Quantization, StopRule};

fn rgg(n: usize) -> Graph {
    let radius = connectivity_radius(n, 2.0).unwrap();
    (1..)
        .map(|seed| build_rgg(n, radius, seed).unwrap())
        .find(Graph::is_connected)
        .unwrap()
}

fn ticks(c: &mut Criterion) {
    const TICKS: u64 = 10_000;
    let mut group = c.benchmark_group("ticks");
    group.throughput(Throughput::Elements(TICKS));
    let g = rgg(400);
    let x0 = InitialCondition::Spike.vector(g.n());
    let protocols = [
        ("pairwise", Protocol::Pairwise),
        ("broadcast", Protocol::Broadcast { gamma: 0.5 }),
        ("geographic", Protocol::Geographic),
        ("path-avg", Protocol::PathAveraging),
    ];
    for (name, protocol) in protocols {
        let gossip = Gossip::new(&g, protocol)
            .unwrap()
            .with_sample_every(u64::MAX);
        group.bench_function(BenchmarkId::new(name, g.n()), |b| {
            b.iter(|| {
                gossip
                    .run(black_box(&x0), StopRule::MaxTicks(TICKS), 1)
                    .unwrap()
            })
        });
    }
    let integer = Gossip::new(&g, Protocol::Pairwise)
        .unwrap()
        .with_quantization(Quantization::Integer)
        .unwrap()
        .with_sample_every(u64::MAX);
    group.bench_function(BenchmarkId::new("integer", g.n()), |b| {
        b.iter(|| {
            integer
                .run(black_box(&x0), StopRule::MaxTicks(TICKS), 1)
                .unwrap()
        })
    });
    group.finish();
}

fn averaging_time(c: &mut Criterion) {
    let g = rgg(100);
    let gossip = Gossip::new(&g, Protocol::Pairwise).unwrap();
    c.bench_function("averaging_time/pairwise/100", |b| {
        b.iter(|| {
            gossip
                .averaging_time(0.01, 20, 1, 1_000_000_000, InitialCondition::Spike)
                .unwrap()
        })
    });
}

criterion_group!(benches, ticks, averaging_time);
criterion_main!(benches);
