//! Per-tick gossip update rules.
//!
//! Every step wakes one node uniformly at random, performs its exchange on
//! the shared [`GossipState`], advances the tick counter and charges the
//! messages it transmitted. Nodes whose values may have changed are recorded
//! in [`StepScratch::touched`] so the engine can update its error tracker
//! incrementally.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::engine::GossipState;
use crate::spectral::GossipDesign;
use crate::topology::{Graph, NodePosition};
use crate::{Error, Result};

/// Default broadcast mixing weight.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    Pairwise,
    Broadcast { gamma: f64 },
    Geographic,
    PathAveraging,
}

impl Protocol {
    /// Whether every step is a set-average, so the network mean is invariant.
    pub fn preserves_average(&self) -> bool {
        !matches!(self, Protocol::Broadcast { .. })
    }

    pub fn needs_positions(&self) -> bool {
        matches!(self, Protocol::Geographic | Protocol::PathAveraging)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Pairwise => "pairwise",
            Protocol::Broadcast { .. } => "broadcast",
            Protocol::Geographic => "geographic",
            Protocol::PathAveraging => "path-avg",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(Protocol::Pairwise),
            "broadcast" => Ok(Protocol::Broadcast {
                gamma: DEFAULT_GAMMA,
            }),
            "geographic" => Ok(Protocol::Geographic),
            "path-avg" => Ok(Protocol::PathAveraging),
            other => Err(Error::invalid(format!(
                "unknown protocol `{other}` (expected pairwise, broadcast, geographic or path-avg)"
            ))),
        }
    }
}

/// Greedy geographic route, source first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route(Vec<usize>);

impl Route {
    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    pub fn source(&self) -> usize {
        self.0[0]
    }

    pub fn destination(&self) -> usize {
        *self.0.last().expect("route is never empty")
    }

    pub fn hops(&self) -> usize {
        self.0.len() - 1
    }
}

#[derive(Debug, Default)]
pub struct StepScratch {
    pub touched: Vec<usize>,
    route: Vec<usize>,
}

/// Walks greedily towards `target`: each hop moves to the neighbor strictly
/// closest to the target among those closer than the current node, lowest
/// index on ties. Stops at a local minimum.
pub fn greedy_route(graph: &Graph, src: usize, target: NodePosition) -> Result<Route> {
    if !graph.has_positions() {
        return Err(Error::invalid("greedy routing needs node positions"));
    }
    if src >= graph.n() {
        return Err(Error::invalid(format!("source {src} out of range")));
    }
    let mut route = Vec::new();
    route_into(graph, src, target, &mut route);
    Ok(Route(route))
}

fn route_into(graph: &Graph, src: usize, target: NodePosition, route: &mut Vec<usize>) {
    let pos = graph.positions();
    route.clear();
    route.push(src);
    let mut current = src;
    let mut current_dist = pos[src].distance(&target);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for &j in graph.neighbors(current) {
            let d = pos[j].distance(&target);
            // neighbors are sorted, so strict comparison keeps the lowest index on ties
            if d < current_dist && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) => {
                route.push(j);
                current = j;
                current_dist = d;
            }
            None => break,
        }
    }
}

fn average_rows(state: &mut GossipState, nodes: &[usize]) {
    let w = state.width;
    let scale = 1.0 / nodes.len() as f64;
    for c in 0..w {
        let mean = nodes.iter().map(|&k| state.x[k * w + c]).sum::<f64>() * scale;
        for &k in nodes {
            state.x[k * w + c] = mean;
        }
    }
}

/// Wakes a node uniformly and draws its partner from the design. Returns
/// `None` for an isolated node.
pub(crate) fn draw_pair<R: Rng + ?Sized>(
    n: usize,
    design: &GossipDesign,
    rng: &mut R,
) -> (usize, Option<usize>) {
    let i = rng.random_range(0..n);
    let j = design.select(i, rng.random::<f64>());
    (i, j)
}

/// Pairwise gossip: the woken node and its chosen neighbor both take their
/// mean. Costs two messages.
pub fn pairwise_step<R: Rng + ?Sized>(
    state: &mut GossipState,
    design: &GossipDesign,
    rng: &mut R,
    scratch: &mut StepScratch,
) {
    scratch.touched.clear();
    let (i, j) = draw_pair(state.n(), design, rng);
    state.t += 1;
    if let Some(j) = j {
        scratch.touched.extend([i, j]);
        average_rows(state, &scratch.touched);
        state.messages += 2;
    }
}

/// Broadcast gossip: every neighbor `j` of the woken node `i` moves to
/// `gamma * x_j + (1 - gamma) * x_i`. One message; the mean is not preserved.
pub fn broadcast_step<R: Rng + ?Sized>(
    state: &mut GossipState,
    graph: &Graph,
    gamma: f64,
    rng: &mut R,
    scratch: &mut StepScratch,
) {
    scratch.touched.clear();
    let i = rng.random_range(0..state.n());
    state.t += 1;
    state.messages += 1;
    let w = state.width;
    for &j in graph.neighbors(i) {
        for c in 0..w {
            let xi = state.x[i * w + c];
            let xj = &mut state.x[j * w + c];
            *xj = gamma * *xj + (1.0 - gamma) * xi;
        }
        scratch.touched.push(j);
    }
}

fn random_target<R: Rng + ?Sized>(rng: &mut R) -> NodePosition {
    let x = rng.random::<f64>();
    let y = rng.random::<f64>();
    NodePosition { x, y }
}

/// Geographic gossip: route from the woken node towards a uniform random
/// point and average with the node where the route ends. The request and the
/// reply each traverse the route, so the cost is `2 * hops` messages.
pub fn geographic_step<R: Rng + ?Sized>(
    state: &mut GossipState,
    graph: &Graph,
    rng: &mut R,
    scratch: &mut StepScratch,
) {
    scratch.touched.clear();
    let i = rng.random_range(0..state.n());
    let target = random_target(rng);
    state.t += 1;
    route_into(graph, i, target, &mut scratch.route);
    let hops = scratch.route.len() - 1;
    if hops == 0 {
        return;
    }
    let dest = scratch.route[hops];
    scratch.touched.extend([i, dest]);
    average_rows(state, &scratch.touched);
    state.messages += 2 * hops as u64;
}

/// Geographic gossip with path averaging: every node on the route takes the
/// mean of the route's values. Costs `2 * hops` messages.
pub fn path_averaging_step<R: Rng + ?Sized>(
    state: &mut GossipState,
    graph: &Graph,
    rng: &mut R,
    scratch: &mut StepScratch,
) {
    scratch.touched.clear();
    let i = rng.random_range(0..state.n());
    let target = random_target(rng);
    state.t += 1;
    route_into(graph, i, target, &mut scratch.route);
    let hops = scratch.route.len() - 1;
    if hops == 0 {
        return;
    }
    scratch.touched.extend_from_slice(&scratch.route);
    average_rows(state, &scratch.touched);
    state.messages += 2 * hops as u64;
}
