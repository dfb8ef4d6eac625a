//! Asynchronous gossip driver.
//!
//! Time advances in discrete ticks; on each tick one uniformly chosen node
//! wakes and executes the protocol step. This is the jump chain of the
//! Poisson-clock model, so one tick is one gossip iteration.

use rand::Rng;
use rayon::prelude::*;

use crate::protocols::{
    broadcast_step, geographic_step, pairwise_step, path_averaging_step, Protocol, StepScratch,
};
use crate::quantized::{self, check_integer_state, Quantization};
use crate::rng::{self, SimRng};
use crate::spectral::GossipDesign;
use crate::stats;
use crate::topology::Graph;
use crate::{Error, Result};

/// Bits charged per unquantized message.
pub const DEFAULT_BITS_PER_MESSAGE: u64 = 64;

/// Node estimates plus counters. `x` is row-major with `width` parallel
/// gossip instances per node; all instances share the exchange schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipState {
    pub x: Vec<f64>,
    pub width: usize,
    pub t: u64,
    pub messages: u64,
    pub bits: u64,
}

impl GossipState {
    pub fn new(x: Vec<f64>) -> Self {
        Self::with_width(x, 1)
    }

    pub fn with_width(x: Vec<f64>, width: usize) -> Self {
        assert!(
            width > 0 && x.len().is_multiple_of(width),
            "state length must be a multiple of width"
        );
        GossipState {
            x,
            width,
            t: 0,
            messages: 0,
            bits: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    /// Largest per-instance gap between node values.
    pub fn spread(&self) -> f64 {
        (0..self.width)
            .map(|c| {
                let col = self.x.iter().skip(c).step_by(self.width).copied();
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
                hi - lo
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    MaxTicks(u64),
    /// Stop once the normalized error drops below `eps`, or at `max_ticks`.
    ErrorBelow {
        eps: f64,
        max_ticks: u64,
    },
    MaxMessages(u64),
    /// Stop once every instance has `max - min <= max_spread`, or at `max_ticks`.
    Spread {
        max_spread: f64,
        max_ticks: u64,
    },
}

impl StopRule {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StopRule::MaxTicks(t) => t > 0,
            StopRule::ErrorBelow { eps, max_ticks } => eps > 0.0 && max_ticks > 0,
            StopRule::MaxMessages(m) => m > 0,
            StopRule::Spread {
                max_spread,
                max_ticks,
            } => max_spread >= 0.0 && max_ticks > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "stop rule thresholds must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: u64,
    pub error: f64,
    pub messages: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipTrace {
    pub points: Vec<TracePoint>,
    pub terminal: GossipState,
    /// Whether an error or spread target was met before the cap. Always true
    /// for `MaxTicks` and `MaxMessages`.
    pub reached: bool,
    /// Quantizer codes clamped at the extremes of the code set.
    pub saturations: u64,
}

impl GossipTrace {
    pub fn final_error(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.error)
    }

    /// CSV body with the fixed `t,error,messages,bits` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,error,messages,bits\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{:e},{},{}\n",
                p.t, p.error, p.messages, p.bits
            ));
        }
        out
    }
}

/// Worst-case surrogates for the supremum over initial vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    /// `n e_1`: all mass on node 0.
    Spike,
    /// `+1` on the first half of the nodes, `-1` on the rest.
    Split,
}

impl InitialCondition {
    pub fn vector(&self, n: usize) -> Vec<f64> {
        match self {
            InitialCondition::Spike => {
                let mut x = vec![0.0; n];
                x[0] = n as f64;
                x
            }
            InitialCondition::Split => (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect(),
        }
    }
}

/// Normalized distance to the initial average, `‖x - x_ave 1‖ / ‖x(0)‖`,
/// maintained incrementally from per-node contributions.
struct ErrorTracker {
    average: Vec<f64>,
    contribution: Vec<f64>,
    total: f64,
    norm0: f64,
}

impl ErrorTracker {
    fn new(x0: &[f64], width: usize) -> Self {
        let n = x0.len() / width;
        let average = (0..width)
            .map(|c| x0.iter().skip(c).step_by(width).sum::<f64>() / n as f64)
            .collect();
        let norm0 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut tracker = ErrorTracker {
            average,
            contribution: vec![0.0; n],
            total: 0.0,
            norm0,
        };
        tracker.refresh(x0);
        tracker
    }

    fn node_contribution(&self, x: &[f64], i: usize) -> f64 {
        let w = self.average.len();
        x[i * w..(i + 1) * w]
            .iter()
            .zip(&self.average)
            .map(|(v, a)| (v - a) * (v - a))
            .sum()
    }

    fn refresh(&mut self, x: &[f64]) {
        for i in 0..self.contribution.len() {
            self.contribution[i] = self.node_contribution(x, i);
        }
        self.total = self.contribution.iter().sum();
    }

    fn update(&mut self, x: &[f64], touched: &[usize]) {
        for &i in touched {
            let c = self.node_contribution(x, i);
            self.total += c - self.contribution[i];
            self.contribution[i] = c;
        }
    }

    fn error(&self) -> f64 {
        if self.norm0 == 0.0 {
            return 0.0;
        }
        self.total.max(0.0).sqrt() / self.norm0
    }
}

/// Outcome of an empirical ε-averaging time estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum AveragingTime {
    Converged {
        /// Smallest tick at which at most a fraction ε of trials still have
        /// normalized error at least ε.
        ticks: u64,
        /// Median over trials of the messages sent by tick `ticks`.
        messages: f64,
        /// Median over trials of the messages sent until that trial's error
        /// first fell below ε.
        median_messages_to_eps: f64,
        /// First tick below ε for every trial, in trial order.
        trial_ticks: Vec<u64>,
    },
    NotConverged {
        cap: u64,
    },
}

impl AveragingTime {
    pub fn ticks(&self) -> Option<u64> {
        match self {
            AveragingTime::Converged { ticks, .. } => Some(*ticks),
            AveragingTime::NotConverged { .. } => None,
        }
    }
}

/// A configured gossip process on a fixed graph.
#[derive(Debug, Clone)]
pub struct Gossip<'g> {
    graph: &'g Graph,
    design: GossipDesign,
    protocol: Protocol,
    quantization: Quantization,
    link_loss: f64,
    bits_per_message: u64,
    sample_every: Option<u64>,
}

impl<'g> Gossip<'g> {
    /// Refuses disconnected graphs and geometric protocols on graphs without
    /// positions. Uses the uniform-neighbor design.
    pub fn new(graph: &'g Graph, protocol: Protocol) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::Disconnected(format!(
                "{} graph with {} nodes and {} edges does not reach every node from node 0",
                graph.kind(),
                graph.n(),
                graph.edge_count()
            )));
        }
        if protocol.needs_positions() && !graph.has_positions() {
            return Err(Error::invalid(format!(
                "{protocol} gossip needs node positions"
            )));
        }
        if let Protocol::Broadcast { gamma } = protocol {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::invalid(format!(
                    "broadcast γ must lie in (0, 1), got {gamma}"
                )));
            }
        }
        Ok(Gossip {
            graph,
            design: GossipDesign::uniform(graph),
            protocol,
            quantization: Quantization::None,
            link_loss: 0.0,
            bits_per_message: DEFAULT_BITS_PER_MESSAGE,
            sample_every: None,
        })
    }

    pub fn with_design(mut self, design: GossipDesign) -> Result<Self> {
        if design.n() != self.graph.n() {
            return Err(Error::invalid("design size does not match the graph"));
        }
        self.design = design;
        Ok(self)
    }

    pub fn with_quantization(mut self, quantization: Quantization) -> Result<Self> {
        if quantization != Quantization::None && self.protocol != Protocol::Pairwise {
            return Err(Error::invalid(format!(
                "{} quantization is only defined for pairwise gossip",
                quantization.name()
            )));
        }
        self.quantization = quantization;
        Ok(self)
    }

    /// Each exchange independently fails with probability `p`; the tick is
    /// consumed and no messages are charged.
    pub fn with_link_loss(mut self, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "link loss must lie in [0, 1), got {p}"
            )));
        }
        self.link_loss = p;
        Ok(self)
    }

    pub fn with_bits_per_message(mut self, bits: u64) -> Self {
        self.bits_per_message = bits;
        self
    }

    /// Trace sampling period in ticks (default: one sample every `n` ticks).
    pub fn with_sample_every(mut self, ticks: u64) -> Self {
        self.sample_every = Some(ticks.max(1));
        self
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn design(&self) -> &GossipDesign {
        &self.design
    }

    /// Bits charged per message: the quantizer rate when there is one.
    pub fn message_bits(&self) -> u64 {
        self.quantization
            .rate_bits()
            .map_or(self.bits_per_message, u64::from)
    }

    pub fn run(&self, x0: &[f64], stop: StopRule, seed: u64) -> Result<GossipTrace> {
        self.run_block(x0.to_vec(), 1, stop, seed)
    }

    /// Runs `width` gossip instances sharing one schedule; `x0` is row-major.
    pub fn run_block(
        &self,
        x0: Vec<f64>,
        width: usize,
        stop: StopRule,
        seed: u64,
    ) -> Result<GossipTrace> {
        self.run_with_rng(x0, width, stop, &mut rng::seeded(seed))
    }

    pub fn run_with_rng(
        &self,
        x0: Vec<f64>,
        width: usize,
        stop: StopRule,
        rng: &mut SimRng,
    ) -> Result<GossipTrace> {
        let n = self.graph.n();
        if width == 0 || x0.len() != n * width {
            return Err(Error::invalid(format!(
                "initial state has {} entries, expected {n} nodes x {width}",
                x0.len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        stop.validate()?;
        if self.quantization == Quantization::Integer {
            check_integer_state(&x0)?;
        }
        let sample_every = self.sample_every.unwrap_or(n as u64);
        let message_bits = self.message_bits();
        let mut tracker = ErrorTracker::new(&x0, width);
        let mut state = GossipState::with_width(x0, width);
        let mut scratch = StepScratch::default();
        let mut saturations = 0;
        let point = |s: &GossipState, error: f64| TracePoint {
            t: s.t,
            error,
            messages: s.messages,
            bits: s.bits,
        };
        let mut points = vec![point(&state, tracker.error())];
        let reached = loop {
            if let Some(done) = self.stop_check(&stop, &state, &mut tracker) {
                break done;
            }
            let before = state.messages;
            if self.link_loss > 0.0 && rng.random::<f64>() < self.link_loss {
                state.t += 1;
                scratch.touched.clear();
            } else {
                saturations += self.step(&mut state, rng, &mut scratch)?;
            }
            state.bits += (state.messages - before) * message_bits;
            tracker.update(&state.x, &scratch.touched);
            if state.t.is_multiple_of(sample_every) {
                tracker.refresh(&state.x);
                points.push(point(&state, tracker.error()));
            }
        };
        tracker.refresh(&state.x);
        if points.last().map(|p| p.t) != Some(state.t) {
            points.push(point(&state, tracker.error()));
        }
        Ok(GossipTrace {
            points,
            terminal: state,
            reached,
            saturations,
        })
    }

    /// `Some(reached)` when the run should stop.
    fn stop_check(
        &self,
        stop: &StopRule,
        state: &GossipState,
        tracker: &mut ErrorTracker,
    ) -> Option<bool> {
        match *stop {
            StopRule::MaxTicks(t) => (state.t >= t).then_some(true),
            StopRule::MaxMessages(m) => (state.messages >= m).then_some(true),
            StopRule::ErrorBelow { eps, max_ticks } => {
                if tracker.error() < eps {
                    // confirm against an exact recomputation
                    tracker.refresh(&state.x);
                    if tracker.error() < eps {
                        return Some(true);
                    }
                }
                (state.t >= max_ticks).then_some(false)
            }
            StopRule::Spread {
                max_spread,
                max_ticks,
            } => {
                if state.spread() <= max_spread {
                    return Some(true);
                }
                (state.t >= max_ticks).then_some(false)
            }
        }
    }

    fn step(
        &self,
        state: &mut GossipState,
        rng: &mut SimRng,
        scratch: &mut StepScratch,
    ) -> Result<u64> {
        match (self.protocol, self.quantization) {
            (Protocol::Pairwise, Quantization::None) => {
                pairwise_step(state, &self.design, rng, scratch)
            }
            (Protocol::Pairwise, Quantization::Uniform(q)) => {
                return Ok(quantized::quantized_pairwise_step(
                    state,
                    &self.design,
                    &q,
                    false,
                    rng,
                    scratch,
                ));
            }
            (Protocol::Pairwise, Quantization::Dither(q)) => {
                return Ok(quantized::quantized_pairwise_step(
                    state,
                    &self.design,
                    &q,
                    true,
                    rng,
                    scratch,
                ));
            }
            (Protocol::Pairwise, Quantization::Integer) => {
                quantized::integer_pairwise_step(state, &self.design, rng, scratch)?
            }
            (Protocol::Broadcast { gamma }, _) => {
                broadcast_step(state, self.graph, gamma, rng, scratch)
            }
            (Protocol::Geographic, _) => geographic_step(state, self.graph, rng, scratch),
            (Protocol::PathAveraging, _) => path_averaging_step(state, self.graph, rng, scratch),
        }
        Ok(0)
    }

    /// Empirical ε-averaging time over `trials` independent runs from the
    /// given initial condition. Trial `k` uses stream `k` of `seed`.
    ///
    /// Each trial runs until its error first drops below ε (at most
    /// `max_ticks`). For set-averaging protocols the error never increases,
    /// so a trial's error is at least ε at tick `t` exactly when `t` precedes
    /// its first-passage tick, and the estimate is an order statistic of the
    /// first-passage ticks.
    pub fn averaging_time(
        &self,
        eps: f64,
        trials: usize,
        seed: u64,
        max_ticks: u64,
        init: InitialCondition,
    ) -> Result<AveragingTime> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid(format!("ε must lie in (0, 1), got {eps}")));
        }
        if trials < 20 {
            return Err(Error::invalid(format!(
                "need at least 20 trials, got {trials}"
            )));
        }
        let x0 = init.vector(self.graph.n());
        let stop = StopRule::ErrorBelow { eps, max_ticks };
        let firsts: Vec<(Option<u64>, u64)> = (0..trials)
            .into_par_iter()
            .map(|k| {
                let trace =
                    self.run_with_rng(x0.clone(), 1, stop, &mut rng::stream(seed, k as u64))?;
                let hit = trace.reached.then_some(trace.terminal.t);
                Ok((hit, trace.terminal.messages))
            })
            .collect::<Result<_>>()?;
        let allowed = (eps * trials as f64).floor() as usize;
        let mut sorted: Vec<u64> = firsts.iter().map(|(t, _)| t.unwrap_or(u64::MAX)).collect();
        sorted.sort_unstable();
        let ticks = sorted[trials - 1 - allowed];
        if ticks == u64::MAX {
            return Ok(AveragingTime::NotConverged { cap: max_ticks });
        }
        let messages_at: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|k| {
                let trace = self.run_with_rng(
                    x0.clone(),
                    1,
                    StopRule::MaxTicks(ticks.max(1)),
                    &mut rng::stream(seed, k as u64),
                )?;
                Ok(trace.terminal.messages as f64)
            })
            .collect::<Result<_>>()?;
        let to_eps: Vec<f64> = firsts
            .iter()
            .filter(|(t, _)| t.is_some())
            .map(|(_, m)| *m as f64)
            .collect();
        Ok(AveragingTime::Converged {
            ticks,
            messages: stats::median(&messages_at),
            median_messages_to_eps: stats::median(&to_eps),
            trial_ticks: firsts.iter().map(|(t, _)| t.unwrap_or(u64::MAX)).collect(),
        })
    }
}

/// One seeded run of `protocol` with the given design.
pub fn run(
    protocol: Protocol,
    graph: &Graph,
    x0: &[f64],
    design: &GossipDesign,
    stop: StopRule,
    seed: u64,
) -> Result<GossipTrace> {
    Gossip::new(graph, protocol)?
        .with_design(design.clone())?
        .run(x0, stop, seed)
}

/// Empirical ε-averaging time from the spike initial vector.
pub fn empirical_averaging_time(
    protocol: Protocol,
    graph: &Graph,
    design: &GossipDesign,
    eps: f64,
    trials: usize,
    seed: u64,
    max_ticks: u64,
) -> Result<AveragingTime> {
    Gossip::new(graph, protocol)?
        .with_design(design.clone())?
        .averaging_time(eps, trials, seed, max_ticks, InitialCondition::Spike)
}
