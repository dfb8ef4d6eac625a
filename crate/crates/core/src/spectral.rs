//! Averaging matrices, expected gossip matrices and their spectra.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::topology::Graph;
use crate::{Error, Result};

/// Tolerance for the symmetry check in eigenvalue routines.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Dense `n x n` averaging matrix `W` with `x(t+1) = W x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingMatrix(DMatrix<f64>);

impl AveragingMatrix {
    /// Wraps a matrix after checking it is square. Doubly-stochastic and
    /// symmetry properties are reported by [`AveragingMatrix::check`], not
    /// enforced here.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "averaging matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(AveragingMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n(), "vector length must match matrix size");
        (&self.0 * DVector::from_column_slice(x))
            .iter()
            .copied()
            .collect()
    }

    /// Largest absolute entry of `W - W^T`.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.0;
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetric_part(&self) -> AveragingMatrix {
        AveragingMatrix((&self.0 + self.0.transpose()) * 0.5)
    }

    /// Numerical report of the doubly-stochastic / symmetric / PSD /
    /// idempotence properties.
    pub fn check(&self) -> MatrixReport {
        let m = &self.0;
        let n = self.n();
        let row_dev = m
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0f64, f64::max);
        let col_dev = m
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0f64, f64::max);
        let sym = self.symmetric_part();
        let min_eigenvalue = SymmetricEigen::new(sym.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let sq = m * m;
        let idempotence = (sq - m).abs().max();
        MatrixReport {
            n,
            row_sum_deviation: row_dev,
            column_sum_deviation: col_dev,
            asymmetry: self.asymmetry(),
            min_eigenvalue,
            idempotence_defect: idempotence,
        }
    }
}

impl Deref for AveragingMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixReport {
    pub n: usize,
    pub row_sum_deviation: f64,
    pub column_sum_deviation: f64,
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    /// `max |W^2 - W|`; zero for set-averaging matrices.
    pub idempotence_defect: f64,
}

impl MatrixReport {
    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.row_sum_deviation <= tol && self.column_sum_deviation <= tol
    }
}

/// Identity except for the `{i, j}` block, which averages the pair.
pub fn pairwise_matrix(i: usize, j: usize, n: usize) -> Result<AveragingMatrix> {
    if i == j {
        return Err(Error::invalid(format!(
            "pairwise matrix needs i != j, got {i} twice"
        )));
    }
    set_averaging_matrix(&[i, j], n)
}

/// Entries `1/|S|` on `S x S`, identity elsewhere.
pub fn set_averaging_matrix(set: &[usize], n: usize) -> Result<AveragingMatrix> {
    let mut members = set.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.len() < 2 {
        return Err(Error::invalid(format!(
            "set averaging needs at least two distinct nodes, got {set:?}"
        )));
    }
    if let Some(&bad) = members.iter().find(|&&k| k >= n) {
        return Err(Error::invalid(format!("node {bad} out of range for n={n}")));
    }
    let mut m = DMatrix::identity(n, n);
    let w = 1.0 / members.len() as f64;
    for &a in &members {
        for &b in &members {
            m[(a, b)] = w;
        }
    }
    Ok(AveragingMatrix(m))
}

/// Neighbor-selection probabilities `P[i][j]` of asynchronous pairwise gossip.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipDesign {
    rows: Vec<Vec<(usize, f64)>>,
    cumulative: Vec<Vec<f64>>,
}

impl GossipDesign {
    /// `P[i][j] = 1/deg(i)` for every neighbor `j`.
    pub fn uniform(graph: &Graph) -> Self {
        let rows = (0..graph.n())
            .map(|i| {
                let d = graph.degree(i) as f64;
                graph.neighbors(i).iter().map(|&j| (j, 1.0 / d)).collect()
            })
            .collect();
        Self::from_rows_unchecked(rows)
    }

    /// `P[i][j] = 1/(deg(i) + 1)`: the node picks uniformly from its closed
    /// neighborhood and stays idle when it picks itself. On `K_n` this is the
    /// design with `λ₂(E[W]) = 1 − 1/n`.
    pub fn lazy_uniform(graph: &Graph) -> Self {
        let rows = (0..graph.n())
            .map(|i| {
                let d = graph.degree(i) as f64 + 1.0;
                graph.neighbors(i).iter().map(|&j| (j, 1.0 / d)).collect()
            })
            .collect();
        Self::from_rows_unchecked(rows)
    }

    /// Custom design. Each row must be supported on the node's neighbors and
    /// sum to at most one; the missing mass is the chance the woken node
    /// stays idle. Rows of isolated nodes may be empty.
    pub fn from_rows(graph: &Graph, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != graph.n() {
            return Err(Error::invalid(format!(
                "design has {} rows for {} nodes",
                rows.len(),
                graph.n()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut total = 0.0;
            for &(j, p) in row {
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::invalid(format!(
                        "P[{i}][{j}] = {p} is not a probability"
                    )));
                }
                if p > 0.0 && !graph.is_adjacent(i, j) {
                    return Err(Error::invalid(format!(
                        "P[{i}][{j}] > 0 but ({i}, {j}) is not an edge"
                    )));
                }
                total += p;
            }
            if total > 1.0 + 1e-9 {
                return Err(Error::invalid(format!(
                    "row {i} of the design sums to {total} > 1"
                )));
            }
        }
        Ok(Self::from_rows_unchecked(rows))
    }

    fn from_rows_unchecked(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let cumulative = rows
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&(_, p)| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        GossipDesign { rows, cumulative }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Neighbor of `i` selected by a uniform draw `u` in `[0, 1)`.
    pub(crate) fn select(&self, i: usize, u: f64) -> Option<usize> {
        let cum = &self.cumulative[i];
        let total = *cum.last()?;
        let target = if (total - 1.0).abs() <= 1e-9 {
            u * total
        } else {
            u
        };
        if target >= total {
            return None;
        }
        let k = cum.partition_point(|&c| c <= target).min(cum.len() - 1);
        Some(self.rows[i][k].0)
    }
}

/// `E[W]` of asynchronous pairwise gossip: node `i` wakes with probability
/// `1/n` and averages with `j` with probability `P[i][j]`.
pub fn expected_matrix(design: &GossipDesign) -> AveragingMatrix {
    let n = design.n();
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for &(j, p) in design.row(i) {
            // W_ij = I - (e_i - e_j)(e_i - e_j)^T / 2
            let w = p / n as f64 * 0.5;
            m[(i, i)] -= w;
            m[(j, j)] -= w;
            m[(i, j)] += w;
            m[(j, i)] += w;
        }
    }
    AveragingMatrix(m)
}

/// Metropolis weights `W_ij = 1/(1 + max(d_i, d_j))` on edges, remaining mass
/// on the diagonal. Symmetric and doubly stochastic; used by synchronous
/// consensus.
pub fn metropolis_matrix(graph: &Graph) -> AveragingMatrix {
    let n = graph.n();
    let mut m = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let w = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
        m[(i, j)] = w;
        m[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = m.row(i).sum();
        m[(i, i)] = 1.0 - off;
    }
    AveragingMatrix(m)
}

fn require_symmetric(w: &AveragingMatrix) -> Result<()> {
    let asym = w.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max |W - W^T| = {asym:e})"
        )));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn eigenvalues_desc(w: &AveragingMatrix) -> Result<Vec<f64>> {
    require_symmetric(w)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(w.symmetric_part().0)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// Second-largest (algebraic) eigenvalue `λ2`.
pub fn second_eigenvalue(w: &AveragingMatrix) -> Result<f64> {
    let eig = eigenvalues_desc(w)?;
    eig.get(1)
        .copied()
        .ok_or_else(|| Error::invalid("λ2 needs at least a 2x2 matrix"))
}

pub fn min_eigenvalue(w: &AveragingMatrix) -> Result<f64> {
    let eig = eigenvalues_desc(w)?;
    Ok(*eig.last().expect("square matrix has eigenvalues"))
}

/// `λ2` by power iteration on the complement of the all-ones vector.
///
/// Only valid when `1` is the eigenvector of the top eigenvalue, which holds
/// for symmetric doubly-stochastic matrices. The matrix is shifted by its
/// infinity norm so that the dominant eigenvalue of the deflated operator is
/// the algebraically largest one.
pub fn second_eigenvalue_power(w: &AveragingMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    require_symmetric(w)?;
    let n = w.n();
    if n < 2 {
        return Err(Error::invalid("λ2 needs at least a 2x2 matrix"));
    }
    let shift = w.0.row_iter().map(|r| r.abs().sum()).fold(0.0f64, f64::max);
    let deflate = |v: &mut DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    // Deterministic start with components along every non-constant direction.
    let mut v = DVector::from_fn(n, |i, _| ((i + 1) as f64).sqrt().sin() + 0.1 * i as f64);
    deflate(&mut v);
    v.normalize_mut();
    let mut estimate = f64::NAN;
    for _ in 0..max_iter {
        let mut next = &w.0 * &v + &v * shift;
        deflate(&mut next);
        let rayleigh = v.dot(&next) - shift;
        let norm = next.norm();
        if norm == 0.0 {
            return Ok(-shift);
        }
        next /= norm;
        let done = (rayleigh - estimate).abs() <= tol * rayleigh.abs().max(1.0);
        estimate = rayleigh;
        v = next;
        if done {
            break;
        }
    }
    Ok(estimate)
}

/// Both averaging-time bounds in ticks: `3 ln(1/ε) / ln(1/λ2)` and the looser
/// `3 ln(1/ε) / (1 - λ2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingTimeBound {
    pub tight: f64,
    pub loose: f64,
}

pub fn averaging_time_bound(lambda2: f64, eps: f64) -> Result<AveragingTimeBound> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("ε must lie in (0, 1), got {eps}")));
    }
    if lambda2.is_nan() || lambda2 >= 1.0 {
        return Err(Error::invalid(format!(
            "λ2 = {lambda2} >= 1: no convergence guarantee"
        )));
    }
    if lambda2 < -SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "λ2 must be nonnegative, got {lambda2}"
        )));
    }
    let lambda2 = lambda2.max(0.0);
    let numer = 3.0 * eps.recip().ln();
    let tight = if lambda2 == 0.0 {
        1.0
    } else {
        numer / lambda2.recip().ln()
    };
    Ok(AveragingTimeBound {
        tight,
        loose: numer / (1.0 - lambda2),
    })
}
