//! Statistical properties checked over many seeded runs.

use gossiplab::estimation::{
    capped_sensor_network, run_estimation_from, EstimatorState, LinearObservationModel, SaConfig,
};
use gossiplab::topology::{build_rgg, connectivity_radius};
use gossiplab::{rng, stats, Gossip, Graph, Protocol, StopRule};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn connected_rgg(n: usize, mut seed: u64) -> Graph {
    loop {
        let g = build_rgg(n, connectivity_radius(n, 2.0).unwrap(), seed).unwrap();
        if g.is_connected() {
            return g;
        }
        seed += 1;
    }
}

#[test]
fn broadcast_limit_is_unbiased() {
    let g = connected_rgg(20, 3);
    let mut r = rng::seeded(99);
    let x0: Vec<f64> = (0..20).map(|_| r.random::<f64>()).collect();
    let target = stats::mean(&x0);
    let gossip = Gossip::new(&g, Protocol::Broadcast { gamma: 0.5 }).unwrap();
    let stop = StopRule::Spread {
        max_spread: 1e-9,
        max_ticks: 1_000_000,
    };
    let limits: Vec<f64> = (0..500)
        .map(|k| {
            let trace = gossip.run(&x0, stop, k).unwrap();
            assert!(trace.reached);
            trace.terminal.x[0]
        })
        .collect();
    let se = stats::std_error(&limits);
    let gap = (stats::mean(&limits) - target).abs();
    assert!(
        gap <= 3.0 * se,
        "limit mean off by {gap}, 3 SE = {}",
        3.0 * se
    );
    // a single run is biased in general
    assert!(limits.iter().any(|v| (v - target).abs() > 1e-6));
}

#[test]
fn broadcast_reaches_consensus() {
    let stop = StopRule::Spread {
        max_spread: 1e-6,
        max_ticks: 5_000_000,
    };
    let mut hits = 0;
    for k in 0..100u64 {
        let g = connected_rgg(50, 1000 + k * 7);
        let mut r = rng::stream(5, k);
        let x0: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let trace = Gossip::new(&g, Protocol::Broadcast { gamma: 0.5 })
            .unwrap()
            .run(&x0, stop, k)
            .unwrap();
        hits += trace.reached as u32;
    }
    assert!(hits >= 99, "{hits}/100 runs reached consensus");
}

#[test]
fn trial_mean_error_is_non_increasing() {
    let g = connected_rgg(50, 8);
    for protocol in [Protocol::Pairwise, Protocol::PathAveraging] {
        let gossip = Gossip::new(&g, protocol).unwrap().with_sample_every(50);
        let x0: Vec<f64> = (0..50).map(|i| if i < 25 { 1.0 } else { -1.0 }).collect();
        let runs: Vec<Vec<f64>> = (0..100)
            .map(|k| {
                let trace = gossip.run(&x0, StopRule::MaxTicks(3000), k).unwrap();
                trace.points.iter().map(|p| p.error).collect()
            })
            .collect();
        let samples = runs[0].len();
        assert!(runs.iter().all(|r| r.len() == samples));
        let column = |s: usize| runs.iter().map(|r| r[s]).collect::<Vec<_>>();
        for s in 1..samples {
            let (prev, cur) = (column(s - 1), column(s));
            let bound = stats::mean(&prev) + 2.0 * stats::std_error(&cur);
            assert!(
                stats::mean(&cur) <= bound,
                "{protocol}: sample {s} rose above 2 SE"
            );
        }
    }
}

#[test]
fn sa_error_scales_like_one_over_t() {
    let (g, _) = capped_sensor_network(45, connectivity_radius(45, 2.0).unwrap(), 6, 1).unwrap();
    let normal = Normal::new(0.0, 5.0).unwrap();
    let mut r = rng::seeded(17);
    let theta: Vec<f64> = (0..45).map(|_| normal.sample(&mut r)).collect();
    let model = LinearObservationModel::componentwise(theta.clone(), 1.0).unwrap();
    let config = SaConfig {
        a: 200.0,
        offset: 1000.0,
        b: 1.0,
        quantizer: None,
    };
    let mut mse = [0.0; 2];
    for seed in 0..50 {
        // starting at the truth leaves only the noise-driven part of the error
        let start = EstimatorState::replicated(&theta, 45);
        let trace = run_estimation_from(&model, &g, &config, start, 16000, 8000, seed).unwrap();
        for (slot, t) in [(0, 8000), (1, 16000)] {
            let sample = trace.samples.iter().find(|s| s.t == t).unwrap();
            mse[slot] += sample.errors.iter().map(|e| e * e).sum::<f64>();
        }
    }
    // the step size runs on t + 1 + offset, so that is the clock to scale by
    let ratio = (16001.0 + config.offset) * mse[1] / ((8001.0 + config.offset) * mse[0]);
    assert!((0.5..=2.0).contains(&ratio), "t·MSE ratio {ratio}");
}
