//! Distributed linear parameter estimation by consensus + innovations
//! stochastic approximation with dithered quantized exchanges.
//!
//! Every node `i` observes `z_i(t) = H_i θ + w_i(t)` and updates
//!
//! ```text
//! x_i ← x_i − α(t) [ b Σ_{j∈N_i} (x_i − Q(x_j + ν_ij)) − H_iᵀ (z_i − H_i x_i) ]
//! ```
//!
//! with `α(t) = a / (t + 1)`. All nodes update synchronously.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::quantized::UniformQuantizer;
use crate::rng::{self, SimRng};
use crate::topology::{build_rgg, Graph};
use crate::{Error, Result};

/// Error level treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservationModel {
    theta: DVector<f64>,
    observations: Vec<DMatrix<f64>>,
    noise_sd: Vec<f64>,
}

impl LinearObservationModel {
    pub fn new(
        theta: Vec<f64>,
        observations: Vec<DMatrix<f64>>,
        noise_sd: Vec<f64>,
    ) -> Result<Self> {
        let m = theta.len();
        if m == 0 {
            return Err(Error::invalid("parameter vector is empty"));
        }
        if observations.len() != noise_sd.len() {
            return Err(Error::invalid(format!(
                "{} observation matrices but {} noise levels",
                observations.len(),
                noise_sd.len()
            )));
        }
        for (i, h) in observations.iter().enumerate() {
            if h.ncols() != m {
                return Err(Error::invalid(format!(
                    "H_{i} has {} columns, parameter has {m} entries",
                    h.ncols()
                )));
            }
        }
        if let Some(sd) = noise_sd.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "noise sd must be nonnegative, got {sd}"
            )));
        }
        Ok(LinearObservationModel {
            theta: DVector::from_vec(theta),
            observations,
            noise_sd,
        })
    }

    /// Node `i` observes component `i` of `θ`: `H_i = e_iᵀ`.
    pub fn componentwise(theta: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let m = theta.len();
        let observations = (0..m)
            .map(|i| {
                let mut h = DMatrix::zeros(1, m);
                h[(0, i)] = 1.0;
                h
            })
            .collect();
        Self::new(theta, observations, vec![noise_sd; m])
    }

    pub fn nodes(&self) -> usize {
        self.observations.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn observation_matrix(&self, i: usize) -> &DMatrix<f64> {
        &self.observations[i]
    }

    /// Draws `z_i = H_i θ + w_i`.
    pub fn observe<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> DVector<f64> {
        let h = &self.observations[i];
        let mut z = h * &self.theta;
        let sd = self.noise_sd[i];
        if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("validated sd");
            for v in z.iter_mut() {
                *v += normal.sample(rng);
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observability {
    pub observable: bool,
    /// Condition number of `G = Σ H_iᵀ H_i` (infinite when singular).
    pub condition: f64,
}

/// `Σ H_iᵀ H_i` must be full rank: its smallest eigenvalue has to exceed
/// `1e-10` times the largest.
pub fn observability_check(model: &LinearObservationModel) -> Observability {
    let m = model.dim();
    let mut g = DMatrix::zeros(m, m);
    for h in &model.observations {
        g += h.transpose() * h;
    }
    let eig = SymmetricEigen::new(g).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let observable = max > 0.0 && min > 1e-10 * max;
    Observability {
        observable,
        condition: if observable { max / min } else { f64::INFINITY },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaConfig {
    /// Numerator of `α(t) = a / (t + 1 + t₀)`.
    pub a: f64,
    /// Offset `t₀ ≥ 0` delaying the weight decay; zero gives `a / (t + 1)`.
    pub offset: f64,
    /// Consensus gain.
    pub b: f64,
    /// Quantizer for exchanged estimates; `None` exchanges exact values.
    pub quantizer: Option<UniformQuantizer>,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            a: 1.0,
            offset: 0.0,
            b: 0.1,
            quantizer: Some(UniformQuantizer::new(0.01, 16).expect("valid default quantizer")),
        }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!(
                "weight numerator a must be positive, got {}",
                self.a
            )));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(Error::invalid(format!(
                "weight offset must be nonnegative, got {}",
                self.offset
            )));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid(format!(
                "consensus gain b must be positive, got {}",
                self.b
            )));
        }
        Ok(())
    }

    pub fn weight(&self, t: u64) -> f64 {
        self.a / (t as f64 + 1.0 + self.offset)
    }
}

/// Per-node estimates, row-major `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x: Vec<f64>,
    pub dim: usize,
    pub t: u64,
}

impl EstimatorState {
    pub fn zeros(nodes: usize, dim: usize) -> Self {
        EstimatorState {
            x: vec![0.0; nodes * dim],
            dim,
            t: 0,
        }
    }

    /// Every node starts at the same vector.
    pub fn replicated(start: &[f64], nodes: usize) -> Self {
        EstimatorState {
            x: start.repeat(nodes),
            dim: start.len(),
            t: 0,
        }
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// `‖x_i − θ‖ / m`.
    pub fn normalized_error(&self, i: usize, theta: &DVector<f64>) -> f64 {
        let sq: f64 = self
            .node(i)
            .iter()
            .zip(theta.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sq.sqrt() / self.dim as f64
    }
}

/// One synchronous iteration of the estimator. Fresh observations and fresh
/// dither for every directed link are drawn from `rng`.
pub fn sa_step<R: Rng + ?Sized>(
    state: &mut EstimatorState,
    model: &LinearObservationModel,
    graph: &Graph,
    config: &SaConfig,
    rng: &mut R,
) {
    let n = graph.n();
    let m = state.dim;
    let alpha = config.weight(state.t);
    let mut next = state.x.clone();
    let mut consensus = vec![0.0; m];
    for i in 0..n {
        consensus.iter_mut().for_each(|c| *c = 0.0);
        let xi = state.node(i);
        for &j in graph.neighbors(i) {
            let xj = state.node(j);
            for k in 0..m {
                let received = match &config.quantizer {
                    Some(q) => q.quantize_dithered(xj[k], rng).value,
                    None => xj[k],
                };
                consensus[k] += xi[k] - received;
            }
        }
        let z = model.observe(i, rng);
        let h = model.observation_matrix(i);
        let xi_vec = DVector::from_column_slice(xi);
        let innovation = h.transpose() * (z - h * xi_vec);
        for k in 0..m {
            next[i * m + k] = xi[k] - alpha * (config.b * consensus[k] - innovation[k]);
        }
    }
    state.x = next;
    state.t += 1;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSample {
    pub t: u64,
    /// Normalized error per node.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationTrace {
    pub samples: Vec<EstimationSample>,
    pub terminal: EstimatorState,
}

impl EstimationTrace {
    /// CSV with columns `t,node,normalized_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,node,normalized_error\n");
        for s in &self.samples {
            for (i, e) in s.errors.iter().enumerate() {
                out.push_str(&format!("{},{},{:e}\n", s.t, i, e));
            }
        }
        out
    }
}

fn check_problem(model: &LinearObservationModel, graph: &Graph, config: &SaConfig) -> Result<()> {
    config.validate()?;
    if model.nodes() != graph.n() {
        return Err(Error::invalid(format!(
            "model has {} sensors, graph has {} nodes",
            model.nodes(),
            graph.n()
        )));
    }
    if !observability_check(model).observable {
        return Err(Error::invalid(
            "observation model is not globally observable",
        ));
    }
    Ok(())
}

/// Runs the estimator for `iterations` steps from `start`, sampling
/// per-node normalized errors every `sample_every` iterations (and at the
/// end). Aborts with [`Error::Diverged`] when an error exceeds
/// [`DIVERGENCE_THRESHOLD`].
pub fn run_estimation_from(
    model: &LinearObservationModel,
    graph: &Graph,
    config: &SaConfig,
    start: EstimatorState,
    iterations: u64,
    sample_every: u64,
    seed: u64,
) -> Result<EstimationTrace> {
    check_problem(model, graph, config)?;
    if start.x.len() != graph.n() * model.dim() {
        return Err(Error::invalid(
            "initial estimates do not match the problem size",
        ));
    }
    let mut rng: SimRng = rng::seeded(seed);
    let mut state = start;
    let theta = model.theta();
    let sample = |s: &EstimatorState| EstimationSample {
        t: s.t,
        errors: (0..graph.n())
            .map(|i| s.normalized_error(i, theta))
            .collect(),
    };
    let mut samples = vec![sample(&state)];
    let every = sample_every.max(1);
    for _ in 0..iterations {
        sa_step(&mut state, model, graph, config, &mut rng);
        let due = state.t.is_multiple_of(every) || state.t == iterations;
        if due || state.t.is_multiple_of(64) {
            let s = sample(&state);
            if let Some(&worst) = s
                .errors
                .iter()
                .find(|e| !(e.is_finite() && **e <= DIVERGENCE_THRESHOLD))
            {
                return Err(Error::Diverged {
                    iteration: state.t,
                    error: worst,
                });
            }
            if due {
                samples.push(s);
            }
        }
    }
    Ok(EstimationTrace {
        samples,
        terminal: state,
    })
}

/// Estimation from all-zero initial estimates.
pub fn run_estimation(
    model: &LinearObservationModel,
    graph: &Graph,
    config: &SaConfig,
    iterations: u64,
    sample_every: u64,
    seed: u64,
) -> Result<EstimationTrace> {
    let start = EstimatorState::zeros(graph.n(), model.dim());
    run_estimation_from(model, graph, config, start, iterations, sample_every, seed)
}

/// Degree-capped sensor network: uniform deployment, fixed
/// communication radius, then the longest links are dropped until no node
/// has more than `max_degree` neighbors. Seeds are advanced until the capped
/// graph is connected; the seed actually used is returned.
pub fn capped_sensor_network(
    n: usize,
    radius: f64,
    max_degree: usize,
    seed: u64,
) -> Result<(Graph, u64)> {
    for attempt in 0..1000 {
        let s = seed.wrapping_add(attempt);
        let g = build_rgg(n, radius, s)?.cap_degree(max_degree)?;
        if g.is_connected() {
            return Ok((g, s));
        }
    }
    Err(Error::Disconnected(format!(
        "no connected {n}-node network with radius {radius} and degree cap {max_degree} in 1000 seeds"
    )))
}
