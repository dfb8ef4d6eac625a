//! Applications built on gossip: RSS source localization, and field
//! compression with graph-Laplacian transforms and compressed sensing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::engine::{Gossip, GossipTrace, StopRule};
use crate::protocols::Protocol;
use crate::rng;
use crate::topology::{Graph, NodePosition};
use crate::{Error, Result};

/// Sensor-to-source distances are floored here to avoid the singularity.
pub const DISTANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RssScene {
    pub source: NodePosition,
    /// Emitted signal strength `α`.
    pub strength: f64,
    /// Path-loss exponent `β`.
    pub path_loss: f64,
    pub noise_sd: f64,
    pub sensors: Vec<NodePosition>,
}

impl RssScene {
    pub fn new(
        source: NodePosition,
        strength: f64,
        path_loss: f64,
        noise_sd: f64,
        sensors: Vec<NodePosition>,
    ) -> Result<Self> {
        if !(strength > 0.0 && strength.is_finite()) {
            return Err(Error::invalid(format!(
                "signal strength must be positive, got {strength}"
            )));
        }
        if !(path_loss >= 1.0 && path_loss.is_finite()) {
            return Err(Error::invalid(format!(
                "path-loss exponent must be >= 1, got {path_loss}"
            )));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sd must be nonnegative, got {noise_sd}"
            )));
        }
        Ok(RssScene {
            source,
            strength,
            path_loss,
            noise_sd,
            sensors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RssMeasurements {
    pub values: Vec<f64>,
    /// Sensors whose distance to the source was floored.
    pub floored: Vec<usize>,
}

/// `f_i = α / ‖y_i − θ‖^β + w_i`.
pub fn rss_measure<R: Rng + ?Sized>(scene: &RssScene, rng: &mut R) -> RssMeasurements {
    let noise =
        (scene.noise_sd > 0.0).then(|| Normal::new(0.0, scene.noise_sd).expect("validated sd"));
    let mut floored = Vec::new();
    let values = scene
        .sensors
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let mut d = y.distance(&scene.source);
            if d < DISTANCE_FLOOR {
                d = DISTANCE_FLOOR;
                floored.push(i);
            }
            let clean = scene.strength / d.powf(scene.path_loss);
            clean + noise.map_or(0.0, |nd| nd.sample(rng))
        })
        .collect();
    RssMeasurements { values, floored }
}

/// Threshold at the given quantile of the measurements (linear interpolation).
pub fn quantile_threshold(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn indicator(f: f64, threshold: f64) -> f64 {
    if f >= threshold {
        1.0
    } else {
        0.0
    }
}

/// Weighted centroid `Σ y_i K(f_i) / Σ K(f_i)` for arbitrary weights.
pub fn weighted_centroid(sensors: &[NodePosition], weights: &[f64]) -> Result<[f64; 2]> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("weights sum to zero"));
    }
    let (sx, sy) = sensors
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(sx, sy), (p, w)| (sx + p.x * w, sy + p.y * w));
    Ok([sx / total, sy / total])
}

/// Centroid of the sensors whose reading reaches `threshold`.
pub fn centralized_estimate(
    sensors: &[NodePosition],
    values: &[f64],
    threshold: f64,
) -> Result<[f64; 2]> {
    let weights: Vec<f64> = values.iter().map(|&f| indicator(f, threshold)).collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::NoSignal { threshold });
    }
    weighted_centroid(sensors, &weights)
}

#[derive(Debug, Clone)]
pub struct Localization {
    /// `x^N / x^D` at node 0 when the run stopped; `None` while node 0 has
    /// not yet heard from any detecting sensor.
    pub gossip_estimate: Option<[f64; 2]>,
    pub centralized: [f64; 2],
    pub trace: GossipTrace,
}

/// Runs the numerator `y_i K(f_i)` and denominator `K(f_i)` gossip instances
/// side by side (one exchange carries both) with `K(f) = 1{f ≥ γ}` and
/// reports node 0's ratio together with the exact centroid.
pub fn localize(
    graph: &Graph,
    values: &[f64],
    threshold: f64,
    protocol: Protocol,
    stop: StopRule,
    seed: u64,
) -> Result<Localization> {
    if !graph.has_positions() {
        return Err(Error::invalid("localization needs sensor positions"));
    }
    if values.len() != graph.n() {
        return Err(Error::invalid(format!(
            "{} readings for {} sensors",
            values.len(),
            graph.n()
        )));
    }
    let sensors = graph.positions();
    let centralized = centralized_estimate(sensors, values, threshold)?;
    let x0: Vec<f64> = sensors
        .iter()
        .zip(values)
        .flat_map(|(p, &f)| {
            let k = indicator(f, threshold);
            [p.x * k, p.y * k, k]
        })
        .collect();
    let trace = Gossip::new(graph, protocol)?.run_block(x0, 3, stop, seed)?;
    let row = trace.terminal.row(0);
    let gossip_estimate = (row[2] > 0.0).then(|| [row[0] / row[2], row[1] / row[2]]);
    Ok(Localization {
        gossip_estimate,
        centralized,
        trace,
    })
}

/// Orthonormal eigenbasis of the normalized Laplacian `I − D^{-1/2} A D^{-1/2}`.
///
/// `basis` holds eigenvectors as columns, ordered by ascending eigenvalue.
/// The forward transform is `θ = T f` with `T = basisᵀ` (rows of `T` are
/// basis vectors) and the inverse is `f = Tᵀ θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTransform {
    pub eigenvalues: Vec<f64>,
    pub basis: DMatrix<f64>,
}

impl GraphTransform {
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// `θ = T f`.
    pub fn forward(&self, f: &[f64]) -> DVector<f64> {
        self.basis.tr_mul(&DVector::from_column_slice(f))
    }

    /// `f = Tᵀ θ`.
    pub fn inverse(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.basis * theta
    }

    /// `max |TᵀT − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.n();
        (self.basis.tr_mul(&self.basis) - DMatrix::<f64>::identity(n, n))
            .abs()
            .max()
    }
}

pub fn laplacian_eigenbasis(graph: &Graph) -> Result<GraphTransform> {
    if !graph.is_connected() {
        return Err(Error::Disconnected(
            "the normalized Laplacian basis needs a connected graph".into(),
        ));
    }
    let n = graph.n();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / (graph.degree(i) as f64).sqrt())
        .collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for (i, j) in graph.edges() {
        let v = -inv_sqrt_deg[i] * inv_sqrt_deg[j];
        lap[(i, j)] = v;
        lap[(j, i)] = v;
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut basis = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // fix the sign: the largest-magnitude entry is positive
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        basis.set_column(dst, &col);
    }
    Ok(GraphTransform { eigenvalues, basis })
}

/// Mean squared error `(1/n)‖f − f^(m)‖²` of the best `m`-term approximation
/// keeping the `m` largest-magnitude coefficients.
pub fn m_term_error(f: &[f64], transform: &GraphTransform, m: usize) -> Result<f64> {
    let n = f.len();
    if transform.n() != n {
        return Err(Error::invalid("signal length does not match the transform"));
    }
    if m > n {
        return Err(Error::invalid(format!("m = {m} exceeds n = {n}")));
    }
    let theta = transform.forward(f);
    let mut mags: Vec<f64> = theta.iter().map(|v| v * v).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    // orthonormal basis: the discarded energy is the approximation error
    let discarded: f64 = mags[m..].iter().sum();
    Ok(discarded / n as f64)
}

/// All `m`-term errors, `m = 0..=n`, from a single sort.
pub fn m_term_curve(f: &[f64], transform: &GraphTransform) -> Vec<f64> {
    let n = f.len();
    let theta = transform.forward(f);
    let mut energy: Vec<f64> = theta.iter().map(|v| v * v).collect();
    energy.sort_by(|a, b| b.total_cmp(a));
    let mut tail = vec![0.0; n + 1];
    for m in (0..n).rev() {
        tail[m] = tail[m + 1] + energy[m];
    }
    tail.iter().map(|e| e / n as f64).collect()
}

/// Smooth test field: `sin(2πx) cos(πy)` plus a paraboloid bump.
pub fn smooth_field(positions: &[NodePosition]) -> Vec<f64> {
    use std::f64::consts::PI;
    positions
        .iter()
        .map(|p| {
            let bump = 1.0 - 4.0 * ((p.x - 0.5).powi(2) + (p.y - 0.5).powi(2));
            (2.0 * PI * p.x).sin() * (PI * p.y).cos() + bump
        })
        .collect()
}

/// Random projection ensemble: `k` columns of i.i.d. `N(0, 1/n)` weights.
/// Node `i` regenerates row `i` from stream `i` of the seed, so no weights
/// are ever exchanged and a smaller `k` is a prefix of a larger one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsEnsemble {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
}

impl CsEnsemble {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::invalid(format!(
                "ensemble needs n, k >= 1, got n={n}, k={k}"
            )));
        }
        Ok(CsEnsemble { n, k, seed })
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let normal = Normal::new(0.0, (1.0 / self.n as f64).sqrt()).expect("positive variance");
        let mut r = rng::stream(self.seed, i as u64);
        (0..self.k).map(|_| normal.sample(&mut r)).collect()
    }

    /// The `n x k` weight matrix `A`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.k);
        for i in 0..self.n {
            for (j, v) in self.row(i).into_iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsGather {
    /// Node 0's value of each instance when gossip stopped.
    pub node0: Vec<f64>,
    /// Exact limits `Σ_i A_ij f_i`.
    pub exact: Vec<f64>,
    pub ticks: u64,
    pub messages: u64,
    /// Whether every instance met the stop rule's target.
    pub reached: bool,
}

impl CsGather {
    /// `‖x̄ − exact‖ / ‖exact‖`.
    pub fn relative_error(&self) -> f64 {
        let num: f64 = self
            .node0
            .iter()
            .zip(&self.exact)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let den: f64 = self.exact.iter().map(|b| b * b).sum();
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

/// Gathers `k` projections with `k` independent gossip instances, instance
/// `j` starting from `x_i = n A_ij f_i` and using stream `j` of `seed`.
pub fn cs_gather(
    f: &[f64],
    ensemble: &CsEnsemble,
    graph: &Graph,
    protocol: Protocol,
    stop: StopRule,
    seed: u64,
) -> Result<CsGather> {
    let n = graph.n();
    if f.len() != n || ensemble.n != n {
        return Err(Error::invalid("field, ensemble and graph sizes differ"));
    }
    let a = ensemble.matrix();
    let exact: Vec<f64> = (0..ensemble.k)
        .map(|j| (0..n).map(|i| a[(i, j)] * f[i]).sum())
        .collect();
    let gossip = Gossip::new(graph, protocol)?;
    let runs: Vec<(f64, u64, u64, bool)> = (0..ensemble.k)
        .into_par_iter()
        .map(|j| {
            let x0: Vec<f64> = (0..n).map(|i| n as f64 * a[(i, j)] * f[i]).collect();
            let trace = gossip.run_with_rng(x0, 1, stop, &mut rng::stream(seed, j as u64))?;
            Ok((
                trace.terminal.x[0],
                trace.terminal.t,
                trace.terminal.messages,
                trace.reached,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(CsGather {
        node0: runs.iter().map(|r| r.0).collect(),
        exact,
        ticks: runs.iter().map(|r| r.1).sum(),
        messages: runs.iter().map(|r| r.2).sum(),
        reached: runs.iter().all(|r| r.3),
    })
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaOptions {
    /// Stop when the relative objective decrease falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IstaOptions {
    fn default() -> Self {
        IstaOptions {
            tolerance: 1e-8,
            max_iterations: 500_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Solution {
    pub theta: DVector<f64>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `‖y − M θ‖² + τ ‖θ‖₁`.
pub fn l1_objective(m: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, tau: f64) -> f64 {
    (y - m * theta).norm_squared() + tau * theta.lp_norm(1)
}

/// Largest singular value squared, `‖M‖²_op`.
fn operator_norm_sq(m: &DMatrix<f64>) -> f64 {
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Iterative shrinkage for `min ‖y − M θ‖² + τ ‖θ‖₁`: a gradient step of
/// size `η = 1/(2‖M‖²_op)` on the quadratic, then soft-thresholding by `τη`.
/// The objective is non-increasing across iterations.
pub fn ista(
    m: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    options: IstaOptions,
) -> Result<L1Solution> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("τ must be nonnegative, got {tau}")));
    }
    if m.nrows() != y.len() {
        return Err(Error::invalid(
            "measurement length does not match the operator",
        ));
    }
    let lipschitz = operator_norm_sq(m);
    let mut theta = DVector::zeros(m.ncols());
    let mut objective = vec![l1_objective(m, y, &theta, tau)];
    if lipschitz == 0.0 {
        return Ok(L1Solution {
            theta,
            objective,
            iterations: 0,
            converged: true,
        });
    }
    let eta = 0.5 / lipschitz;
    let mt = m.transpose();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        let residual = m * &theta - y;
        let grad = &mt * residual * 2.0;
        theta = (&theta - grad * eta).map(|v| soft_threshold(v, tau * eta));
        iterations += 1;
        let obj = l1_objective(m, y, &theta, tau);
        let prev = *objective.last().expect("nonempty");
        objective.push(obj);
        if (prev - obj).abs() <= options.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(L1Solution {
        theta,
        objective,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsReconstruction {
    pub field: Vec<f64>,
    pub solution: L1Solution,
    pub tau: f64,
}

/// Default regularization `1e-3 ‖Mᵀ x̄‖_∞` with `M = Aᵀ Tᵀ`.
pub fn default_tau(xbar: &[f64], ensemble: &CsEnsemble, transform: &GraphTransform) -> f64 {
    let m = measurement_operator(ensemble, transform);
    1e-3 * m.tr_mul(&DVector::from_column_slice(xbar)).amax()
}

/// `M = Aᵀ Tᵀ`: maps transform coefficients to projections (`k x n`).
pub fn measurement_operator(ensemble: &CsEnsemble, transform: &GraphTransform) -> DMatrix<f64> {
    ensemble.matrix().tr_mul(&transform.basis)
}

/// Recovers `f̂ = Tᵀ θ̂` from the gathered projections `x̄`.
pub fn cs_reconstruct(
    xbar: &[f64],
    ensemble: &CsEnsemble,
    transform: &GraphTransform,
    tau: f64,
    options: IstaOptions,
) -> Result<CsReconstruction> {
    if xbar.len() != ensemble.k || transform.n() != ensemble.n {
        return Err(Error::invalid(
            "projection count or transform size does not match the ensemble",
        ));
    }
    let m = measurement_operator(ensemble, transform);
    let solution = ista(&m, &DVector::from_column_slice(xbar), tau, options)?;
    let field = transform.inverse(&solution.theta).iter().copied().collect();
    Ok(CsReconstruction {
        field,
        solution,
        tau,
    })
}

pub fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}
