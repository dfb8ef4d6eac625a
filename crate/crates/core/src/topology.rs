//! Network graphs: random geometric graphs, bounded grids and complete graphs.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::rng;
use crate::{Error, Result};

/// Default scale factor in `c * sqrt(ln n / n)`.
pub const DEFAULT_RADIUS_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePosition {
    pub x: f64,
    pub y: f64,
}

impl NodePosition {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let unit = 0.0..=1.0;
        if !(unit.contains(&x) && unit.contains(&y)) {
            return Err(Error::invalid(format!(
                "position ({x}, {y}) lies outside the unit square"
            )));
        }
        Ok(NodePosition { x, y })
    }

    pub fn distance(&self, other: &NodePosition) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Rgg,
    Grid,
    Complete,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Rgg => "rgg",
            GraphKind::Grid => "grid",
            GraphKind::Complete => "complete",
        })
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgg" => Ok(GraphKind::Rgg),
            "grid" => Ok(GraphKind::Grid),
            "complete" => Ok(GraphKind::Complete),
            other => Err(Error::invalid(format!(
                "unknown topology `{other}` (expected rgg, grid or complete)"
            ))),
        }
    }
}

/// Undirected simple graph with optional node coordinates.
///
/// Neighbor lists are kept sorted by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    kind: GraphKind,
    positions: Vec<NodePosition>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an explicit edge list, validating symmetry-related
    /// invariants (no self-loops, indices in range, no duplicates).
    pub fn from_edges(
        kind: GraphKind,
        n: usize,
        positions: Vec<NodePosition>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        if !positions.is_empty() && positions.len() != n {
            return Err(Error::invalid(format!(
                "{} positions given for {n} nodes",
                positions.len()
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) out of range for n={n}"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            let before = nbrs.len();
            nbrs.dedup();
            if nbrs.len() != before {
                return Err(Error::invalid(format!("duplicate edge at node {i}")));
            }
        }
        Ok(Graph {
            kind,
            positions,
            adjacency,
        })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn positions(&self) -> &[NodePosition] {
        &self.positions
    }

    pub fn has_positions(&self) -> bool {
        !self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> Option<NodePosition> {
        self.positions.get(i).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` pairs with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Breadth-first search from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == n
    }

    /// Drops the longest edges until every node has at most `max_degree`
    /// neighbors. Edges are visited longest first; an edge is removed when
    /// either endpoint is over the cap.
    pub fn cap_degree(&self, max_degree: usize) -> Result<Graph> {
        if !self.has_positions() {
            return Err(Error::invalid("degree capping needs node positions"));
        }
        let mut edges = self.edges();
        edges.sort_by(|&(a, b), &(c, d)| {
            let da = self.positions[a].distance(&self.positions[b]);
            let dc = self.positions[c].distance(&self.positions[d]);
            dc.total_cmp(&da).then((a, b).cmp(&(c, d)))
        });
        let mut degree: Vec<usize> = (0..self.n()).map(|i| self.degree(i)).collect();
        let mut kept = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if degree[i] > max_degree || degree[j] > max_degree {
                degree[i] -= 1;
                degree[j] -= 1;
            } else {
                kept.push((i, j));
            }
        }
        Graph::from_edges(self.kind, self.n(), self.positions.clone(), &kept)
    }

    /// Writes the plain-text edge list: a `v index x y` line per node followed
    /// by an `e i j` line per edge. Coordinates use the shortest decimal form
    /// that parses back to the same `f64`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# kind {}", self.kind)?;
        writeln!(out, "# n {}", self.n())?;
        for (i, p) in self.positions.iter().enumerate() {
            writeln!(out, "v {i} {} {}", p.x, p.y)?;
        }
        for (i, j) in self.edges() {
            writeln!(out, "e {i} {j}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Graph> {
        let mut kind = None;
        let mut n = None;
        let mut positions = Vec::new();
        let mut edges = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let bad = |reason: &str| Error::Parse {
                line: lineno,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                ["#", "kind", k] => {
                    kind = Some(k.parse::<GraphKind>().map_err(|e| bad(&e.to_string()))?)
                }
                ["#", "n", v] => n = Some(v.parse::<usize>().map_err(|_| bad("bad node count"))?),
                [first, ..] if first.starts_with('#') => {}
                ["v", i, x, y] => {
                    let i: usize = i.parse().map_err(|_| bad("bad node index"))?;
                    if i != positions.len() {
                        return Err(bad("node lines must be in index order"));
                    }
                    let x: f64 = x.parse().map_err(|_| bad("bad x coordinate"))?;
                    let y: f64 = y.parse().map_err(|_| bad("bad y coordinate"))?;
                    positions.push(NodePosition::new(x, y).map_err(|e| bad(&e.to_string()))?);
                }
                ["e", i, j] => {
                    let i: usize = i.parse().map_err(|_| bad("bad edge endpoint"))?;
                    let j: usize = j.parse().map_err(|_| bad("bad edge endpoint"))?;
                    edges.push((i, j));
                }
                _ => return Err(bad("unrecognised line")),
            }
        }
        let kind = kind.ok_or(Error::Parse {
            line: 0,
            reason: "missing `# kind` header".into(),
        })?;
        let n = n.ok_or(Error::Parse {
            line: 0,
            reason: "missing `# n` header".into(),
        })?;
        Graph::from_edges(kind, n, positions, &edges)
    }
}

/// `c * sqrt(ln n / n)`, the connectivity threshold scaling for G(n, r).
pub fn connectivity_radius(n: usize, c: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "connectivity radius needs n >= 2, got {n}"
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!(
            "radius scale must be positive, got {c}"
        )));
    }
    let n = n as f64;
    Ok(c * (n.ln() / n).sqrt())
}

/// Random geometric graph: `n` uniform points in the unit square, an edge
/// whenever two points are at distance at most `radius`.
pub fn build_rgg(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::invalid(format!("rgg needs n >= 2, got {n}")));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(Error::invalid(format!(
            "rgg radius must be in (0, sqrt 2], got {radius}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let positions: Vec<NodePosition> = (0..n)
        .map(|_| {
            let x = rng.random::<f64>();
            let y = rng.random::<f64>();
            NodePosition { x, y }
        })
        .collect();
    Ok(rgg_from_positions(positions, radius))
}

pub(crate) fn rgg_from_positions(positions: Vec<NodePosition>, radius: f64) -> Graph {
    let n = positions.len();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if positions[i].distance(&positions[j]) <= radius {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for nbrs in &mut adjacency {
        nbrs.sort_unstable();
    }
    Graph {
        kind: GraphKind::Rgg,
        positions,
        adjacency,
    }
}

/// Bounded `rows x cols` lattice with 4-neighbor adjacency. Node `r * cols + c`
/// sits at the centre of its cell in the unit square.
pub fn build_grid(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::invalid(format!(
            "grid needs at least two cells, got {rows}x{cols}"
        )));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut positions = Vec::with_capacity(rows * cols);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            positions.push(NodePosition {
                x: (c as f64 + 0.5) / cols as f64,
                y: (r as f64 + 0.5) / rows as f64,
            });
            if c + 1 < cols {
                edges.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((idx(r, c), idx(r + 1, c)));
            }
        }
    }
    Graph::from_edges(GraphKind::Grid, rows * cols, positions, &edges)
}

/// Complete graph without geometry.
pub fn build_complete(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "complete graph needs n >= 2, got {n}"
        )));
    }
    let adjacency = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).collect())
        .collect();
    Ok(Graph {
        kind: GraphKind::Complete,
        positions: Vec::new(),
        adjacency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_well_formed(g: &Graph) {
        for i in 0..g.n() {
            assert!(!g.is_adjacent(i, i), "self-loop at {i}");
            for &j in g.neighbors(i) {
                assert!(g.is_adjacent(j, i), "asymmetric edge {i}-{j}");
            }
        }
    }

    #[test]
    fn radius_formula() {
        assert_abs_diff_eq!(
            connectivity_radius(3, 1.0).unwrap(),
            0.60515,
            epsilon = 5e-5
        );
        assert_abs_diff_eq!(
            connectivity_radius(100, 2.0).unwrap(),
            0.4292,
            epsilon = 5e-5
        );
        assert_abs_diff_eq!(connectivity_radius(2, 1.0).unwrap(), 0.5887, epsilon = 5e-5);
        assert!(connectivity_radius(1, 1.0).is_err());
        assert!(connectivity_radius(10, 0.0).is_err());
    }

    #[test]
    fn two_node_extremes() {
        let g = build_rgg(2, std::f64::consts::SQRT_2, 3).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.is_connected());
        let g = build_rgg(2, 1e-300, 3).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(!g.is_connected());
    }

    #[test]
    fn rgg_matches_all_pairs_oracle() {
        let g = build_rgg(50, 0.3, 7).unwrap();
        assert_well_formed(&g);
        let p = g.positions();
        let mut expected = Vec::new();
        for i in 0..50 {
            for j in (i + 1)..50 {
                let d = ((p[i].x - p[j].x).powi(2) + (p[i].y - p[j].y).powi(2)).sqrt();
                if d <= 0.3 {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(g.edges(), expected);
    }

    #[test]
    fn rgg_is_deterministic_and_monotone_in_radius() {
        let a = build_rgg(80, 0.2, 11).unwrap();
        let b = build_rgg(80, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let wider = build_rgg(80, 0.25, 11).unwrap();
        for (i, j) in a.edges() {
            assert!(wider.is_adjacent(i, j));
        }
    }

    #[test]
    fn ties_at_radius_are_edges() {
        let pos = vec![
            NodePosition { x: 0.0, y: 0.0 },
            NodePosition { x: 0.5, y: 0.0 },
        ];
        let g = rgg_from_positions(pos, 0.5);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn grid_and_complete_shapes() {
        assert_eq!(build_grid(1, 2).unwrap().edges(), vec![(0, 1)]);
        let g = build_grid(2, 2).unwrap();
        assert_eq!((g.n(), g.edge_count()), (4, 4));
        assert_well_formed(&g);
        assert_eq!(build_complete(4).unwrap().edge_count(), 6);
        assert!(build_grid(1, 1).is_err());
        assert!(build_complete(1).is_err());
        let g = build_grid(3, 5).unwrap();
        assert_eq!(g.edge_count(), 3 * 4 + 2 * 5);
        assert!(g
            .positions()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    }

    #[test]
    fn connectivity() {
        let k2 = build_complete(2).unwrap();
        assert!(k2.is_connected());
        let empty = Graph::from_edges(GraphKind::Rgg, 2, Vec::new(), &[]).unwrap();
        assert!(!empty.is_connected());
    }

    #[test]
    fn rgg_above_threshold_is_connected_whp() {
        let r = connectivity_radius(200, 2.0).unwrap();
        let connected = (0..100)
            .filter(|&s| build_rgg(200, r, s).unwrap().is_connected())
            .count();
        assert!(connected >= 95, "only {connected}/100 connected");
    }

    #[test]
    fn degree_cap() {
        let g = build_rgg(60, 0.35, 5).unwrap();
        assert!(g.max_degree() > 6);
        let capped = g.cap_degree(6).unwrap();
        assert!(capped.max_degree() <= 6);
        for (i, j) in capped.edges() {
            assert!(g.is_adjacent(i, j));
        }
    }

    #[test]
    fn edge_list_round_trip() {
        for g in [
            build_rgg(40, 0.3, 9).unwrap(),
            build_grid(3, 4).unwrap(),
            build_complete(5).unwrap(),
        ] {
            let mut buf = Vec::new();
            g.write_edge_list(&mut buf).unwrap();
            let back = Graph::read_edge_list(buf.as_slice()).unwrap();
            assert_eq!(back, g);
            let mut again = Vec::new();
            back.write_edge_list(&mut again).unwrap();
            assert_eq!(again, buf);
        }
    }

    #[test]
    fn rejects_malformed_edge_list() {
        let text = "# kind rgg\n# n 2\ne 0 0\n";
        assert!(Graph::read_edge_list(text.as_bytes()).is_err());
        let text = "# n 2\ne 0 1\n";
        assert!(Graph::read_edge_list(text.as_bytes()).is_err());
    }
}
