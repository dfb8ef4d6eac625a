//! Finite-rate consensus: uniform, dithered and integer quantizers, the
//! zoom-in/zoom-out and logarithmic predictive codecs, and a synchronous
//! quantized consensus runner with bit accounting.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::engine::GossipState;
use crate::protocols::{draw_pair, StepScratch};
use crate::rng;
use crate::spectral::{min_eigenvalue, AveragingMatrix, GossipDesign};
use crate::{Error, Result};

/// Largest supported code rate.
pub const MAX_RATE_BITS: u32 = 62;

/// Nearest multiple of `step` with index clamped to `[-max_index, max_index]`.
/// Ties round half-to-even in units of `step`. Returns `(index, saturated)`.
fn grid_index(x: f64, step: f64, max_index: i64) -> (i64, bool) {
    let raw = (x / step).round_ties_even();
    let limit = max_index as f64;
    if raw > limit {
        (max_index, true)
    } else if raw < -limit {
        (-max_index, true)
    } else {
        (raw as i64, false)
    }
}

/// Fixed uniform quantizer with code set `{0, ±Δ, …, ±(2^{R-1} - 1)Δ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantizer {
    step: f64,
    rate_bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Code {
    pub index: i64,
    pub value: f64,
    pub saturated: bool,
}

impl UniformQuantizer {
    pub fn new(step: f64, rate_bits: u32) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!(
                "quantizer step must be positive, got {step}"
            )));
        }
        if !(2..=MAX_RATE_BITS).contains(&rate_bits) {
            return Err(Error::invalid(format!(
                "quantizer rate must be in 2..={MAX_RATE_BITS} bits, got {rate_bits}"
            )));
        }
        Ok(UniformQuantizer { step, rate_bits })
    }

    /// Quantizer with `levels` steps across `range`, i.e. `Δ = range / levels`.
    pub fn with_levels(range: f64, levels: u32, rate_bits: u32) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("quantizer needs at least one level"));
        }
        Self::new(range / levels as f64, rate_bits)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn rate_bits(&self) -> u32 {
        self.rate_bits
    }

    pub fn max_index(&self) -> i64 {
        (1i64 << (self.rate_bits - 1)) - 1
    }

    pub fn max_value(&self) -> f64 {
        self.max_index() as f64 * self.step
    }

    pub fn quantize(&self, x: f64) -> Code {
        let (index, saturated) = grid_index(x, self.step, self.max_index());
        Code {
            index,
            value: index as f64 * self.step,
            saturated,
        }
    }

    /// Subtractive-free dithering: quantize `x + u` with `u ~ U[-Δ/2, Δ/2)`.
    pub fn quantize_dithered<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Code {
        let u = (rng.random::<f64>() - 0.5) * self.step;
        self.quantize(x + u)
    }
}

pub fn uniform_quantize(x: f64, q: &UniformQuantizer) -> Code {
    q.quantize(x)
}

pub fn dithered_quantize<R: Rng + ?Sized>(x: f64, q: &UniformQuantizer, rng: &mut R) -> Code {
    q.quantize_dithered(x, rng)
}

/// How exchanged values are quantized in asynchronous pairwise gossip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Quantization {
    #[default]
    None,
    /// Both nodes take the mean of the two quantized values.
    Uniform(UniformQuantizer),
    /// As `Uniform`, with fresh dither added before quantizing.
    Dither(UniformQuantizer),
    /// Integer states; the pair splits its sum into floor and ceiling halves.
    Integer,
}

impl Quantization {
    pub fn name(&self) -> &'static str {
        match self {
            Quantization::None => "none",
            Quantization::Uniform(_) => "uniform",
            Quantization::Dither(_) => "dither",
            Quantization::Integer => "integer",
        }
    }

    /// Bits per transmitted value for fixed-rate codes.
    pub fn rate_bits(&self) -> Option<u32> {
        match self {
            Quantization::Uniform(q) | Quantization::Dither(q) => Some(q.rate_bits()),
            _ => None,
        }
    }
}

impl fmt::Display for Quantization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    None,
    Uniform,
    Dither,
    Integer,
    Zoom,
    Log,
}

impl FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => QuantizerKind::None,
            "uniform" => QuantizerKind::Uniform,
            "dither" => QuantizerKind::Dither,
            "integer" => QuantizerKind::Integer,
            "zoom" => QuantizerKind::Zoom,
            "log" => QuantizerKind::Log,
            other => {
                return Err(Error::invalid(format!(
                    "unknown quantizer `{other}` (expected none, uniform, dither, integer, zoom or log)"
                )))
            }
        })
    }
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantizerKind::None => "none",
            QuantizerKind::Uniform => "uniform",
            QuantizerKind::Dither => "dither",
            QuantizerKind::Integer => "integer",
            QuantizerKind::Zoom => "zoom",
            QuantizerKind::Log => "log",
        })
    }
}

/// Pairwise exchange of quantized values: both nodes move to the mean of the
/// two codes. Returns the number of saturated codes.
pub fn quantized_pairwise_step<R: Rng + ?Sized>(
    state: &mut GossipState,
    design: &GossipDesign,
    quantizer: &UniformQuantizer,
    dither: bool,
    rng: &mut R,
    scratch: &mut StepScratch,
) -> u64 {
    scratch.touched.clear();
    let (i, j) = draw_pair(state.n(), design, rng);
    state.t += 1;
    let Some(j) = j else { return 0 };
    let w = state.width;
    let mut saturated = 0;
    for c in 0..w {
        let mut code = |x: f64| {
            let q = if dither {
                quantizer.quantize_dithered(x, rng)
            } else {
                quantizer.quantize(x)
            };
            saturated += q.saturated as u64;
            q.value
        };
        let qi = code(state.x[i * w + c]);
        let qj = code(state.x[j * w + c]);
        let mean = 0.5 * (qi + qj);
        state.x[i * w + c] = mean;
        state.x[j * w + c] = mean;
    }
    scratch.touched.extend([i, j]);
    state.messages += 2;
    saturated
}

/// Average-preserving integer exchange: an even sum is split equally, an odd
/// sum into floor and ceiling halves with `coin` choosing who gets the
/// ceiling.
pub fn integer_pair_update(a: i64, b: i64, coin: bool) -> (i64, i64) {
    let sum = a + b;
    let lo = sum.div_euclid(2);
    let hi = sum - lo;
    if coin {
        (hi, lo)
    } else {
        (lo, hi)
    }
}

fn as_integer(v: f64) -> Option<i64> {
    const LIMIT: f64 = (1u64 << 53) as f64;
    (v.fract() == 0.0 && v.abs() <= LIMIT).then_some(v as i64)
}

pub fn check_integer_state(x: &[f64]) -> Result<()> {
    match x.iter().position(|&v| as_integer(v).is_none()) {
        Some(k) => Err(Error::invalid(format!(
            "integer consensus needs integer states, entry {k} is {}",
            x[k]
        ))),
        None => Ok(()),
    }
}

/// Integer quantized gossip step. The exact integer sum is conserved.
pub fn integer_pairwise_step<R: Rng + ?Sized>(
    state: &mut GossipState,
    design: &GossipDesign,
    rng: &mut R,
    scratch: &mut StepScratch,
) -> Result<()> {
    scratch.touched.clear();
    let (i, j) = draw_pair(state.n(), design, rng);
    state.t += 1;
    let Some(j) = j else { return Ok(()) };
    let coin = rng.random::<bool>();
    let w = state.width;
    for c in 0..w {
        let (a, b) = (state.x[i * w + c], state.x[j * w + c]);
        let (Some(a), Some(b)) = (as_integer(a), as_integer(b)) else {
            return Err(Error::invalid(format!(
                "integer consensus met non-integer states {a} and {b}"
            )));
        };
        let (a, b) = integer_pair_update(a, b, coin);
        state.x[i * w + c] = a as f64;
        state.x[j * w + c] = b as f64;
    }
    scratch.touched.extend([i, j]);
    state.messages += 2;
    Ok(())
}

/// Defaults for the zoom coder.
pub const ZOOM_IN: f64 = 0.5;
pub const ZOOM_OUT: f64 = 2.0;

/// Predictive state shared by a zoom encoder and its decoders: the running
/// reconstruction and the adaptive step `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomState {
    pub xhat_prev: f64,
    pub f: f64,
    pub k_in: f64,
    pub k_out: f64,
}

impl Default for ZoomState {
    fn default() -> Self {
        ZoomState {
            xhat_prev: 0.0,
            f: 1.0,
            k_in: ZOOM_IN,
            k_out: ZOOM_OUT,
        }
    }
}

impl ZoomState {
    pub fn new(xhat_prev: f64, f: f64, k_in: f64, k_out: f64) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::invalid(format!(
                "zoom step f must be positive, got {f}"
            )));
        }
        if !(0.0 < k_in && k_in < 1.0 && 1.0 < k_out && k_out.is_finite()) {
            return Err(Error::invalid(format!(
                "zoom factors need 0 < k_in < 1 < k_out, got {k_in}, {k_out}"
            )));
        }
        Ok(ZoomState {
            xhat_prev,
            f,
            k_in,
            k_out,
        })
    }

    /// Applies a received code: `x̂ ← x̂ + f q`, then zoom in when `|q| < 1`
    /// and out otherwise.
    pub fn advance(&self, q: f64) -> ZoomState {
        let f = if q.abs() < 1.0 {
            self.k_in * self.f
        } else {
            self.k_out * self.f
        };
        ZoomState {
            xhat_prev: self.xhat_prev + self.f * q,
            f,
            ..*self
        }
    }
}

fn zoom_max_index(step: f64) -> Result<i64> {
    let k = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || ((k * step) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "zoom quantizer step must divide 1 exactly, got {step}"
        )));
    }
    Ok(k as i64)
}

/// Code of the normalized innovation `(x - x̂)/f` on the grid `{0, ±Δ, …, ±1}`.
pub fn zoom_encode_step(x: f64, state: &ZoomState, step: f64) -> Result<(f64, ZoomState)> {
    let max_index = zoom_max_index(step)?;
    let (index, _) = grid_index((x - state.xhat_prev) / state.f, step, max_index);
    let q = index as f64 * step;
    Ok((q, state.advance(q)))
}

pub fn zoom_decode_step(q: f64, state: &ZoomState) -> ZoomState {
    state.advance(q)
}

/// Bits per zoom code: `ceil(log2(2/Δ + 1))`.
pub fn zoom_rate_bits(step: f64) -> Result<u32> {
    let levels = 2 * zoom_max_index(step)? as u64 + 1;
    Ok(u64::BITS - (levels - 1).leading_zeros())
}

/// Logarithmic quantizer with density `δ` and predictive state `ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogQuantizer {
    pub delta: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogCode {
    /// Reserved for `x = ξ`.
    Zero,
    Level {
        negative: bool,
        level: i32,
    },
}

impl LogCode {
    pub fn value(&self, delta: f64) -> f64 {
        match *self {
            LogCode::Zero => 0.0,
            LogCode::Level { negative, level } => {
                let mag = ((1.0 + delta) / (1.0 - delta)).powi(level);
                if negative {
                    -mag
                } else {
                    mag
                }
            }
        }
    }

    /// Length of a self-delimiting encoding: one zero flag, then a sign bit
    /// and an Elias-gamma code of the zigzag-mapped level.
    pub fn bits(&self) -> u64 {
        match *self {
            LogCode::Zero => 1,
            LogCode::Level { level, .. } => {
                let zigzag = ((level << 1) ^ (level >> 31)) as u32 as u64 + 1;
                let gamma = 2 * (63 - zigzag.leading_zeros() as u64) + 1;
                2 + gamma
            }
        }
    }
}

impl LogQuantizer {
    pub fn new(delta: f64, xi: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!(
                "log quantizer δ must be in (0, 1), got {delta}"
            )));
        }
        Ok(LogQuantizer { delta, xi })
    }

    pub fn ratio(&self) -> f64 {
        (1.0 + self.delta) / (1.0 - self.delta)
    }
}

/// Picks the level `ℓ` with `|x - ξ| ρ^{-ℓ} ∈ [1/(1+δ), 1/(1-δ)]`, emits
/// `sign(x - ξ) ρ^ℓ` and advances `ξ` by the emitted value.
pub fn log_quantize_step(x: f64, state: &LogQuantizer) -> (LogCode, LogQuantizer) {
    let d = x - state.xi;
    if d == 0.0 {
        return (LogCode::Zero, *state);
    }
    let delta = state.delta;
    let ln_rho = state.ratio().ln();
    let mag = d.abs();
    let lo = 1.0 / (1.0 + delta);
    let hi = 1.0 / (1.0 - delta);
    let mut level = ((mag.ln() + (1.0 - delta).ln()) / ln_rho).ceil() as i32;
    // guard the sector against rounding in the logarithms
    for _ in 0..4 {
        let scaled = mag * state.ratio().powi(-level);
        if scaled > hi {
            level += 1;
        } else if scaled < lo {
            level -= 1;
        } else {
            break;
        }
    }
    let code = LogCode::Level {
        negative: d < 0.0,
        level,
    };
    let next = LogQuantizer {
        xi: state.xi + code.value(delta),
        ..*state
    };
    (code, next)
}

/// `(1 + λ_min(W)) / (3 - λ_min(W))`: log-quantized consensus with `δ`
/// below this value reaches the exact average.
pub fn delta_upper_bound(w: &AveragingMatrix) -> Result<f64> {
    Ok(delta_bound_from_lambda_min(min_eigenvalue(w)?))
}

pub fn delta_bound_from_lambda_min(lambda_min: f64) -> f64 {
    (1.0 + lambda_min) / (3.0 - lambda_min)
}

/// Cumulative bit count with a per-tick log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BitBudget {
    total: u64,
    per_tick: Vec<u64>,
}

impl BitBudget {
    pub fn record(&mut self, bits: u64) {
        self.total += bits;
        self.per_tick.push(bits);
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn per_tick(&self) -> &[u64] {
        &self.per_tick
    }
}

/// Codec used by every node in synchronous quantized consensus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyncCodec {
    Exact,
    Uniform(UniformQuantizer),
    Dither(UniformQuantizer),
    Zoom { step: f64, initial: ZoomState },
    Log { delta: f64 },
}

/// Update applied with the reconstructed values `x̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncUpdate {
    /// `x_i ← W_ii x_i + Σ_{j≠i} W_ij x̂_j`: own exact state, neighbors' codes.
    Direct,
    /// `x ← W x̂`: every term, the node's own included, is quantized.
    Quantized,
    /// `x ← x + (W - I) x̂`, which keeps the network sum invariant.
    AveragePreserving,
}

impl SyncCodec {
    pub fn default_update(&self) -> SyncUpdate {
        match self {
            SyncCodec::Zoom { .. } | SyncCodec::Log { .. } => SyncUpdate::AveragePreserving,
            SyncCodec::Uniform(_) | SyncCodec::Dither(_) => SyncUpdate::Quantized,
            SyncCodec::Exact => SyncUpdate::Direct,
        }
    }
}

#[derive(Debug, Clone)]
enum NodeCodec {
    Stateless,
    Zoom(ZoomState),
    Log(LogQuantizer),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncSample {
    pub iteration: u64,
    pub spread: f64,
    pub max_deviation: f64,
    pub bits: u64,
}

#[derive(Debug, Clone)]
pub struct SyncRun {
    pub x: Vec<f64>,
    pub iterations: u64,
    pub messages: u64,
    pub budget: BitBudget,
    pub samples: Vec<SyncSample>,
    /// True when the state stopped moving before the iteration cap.
    pub settled: bool,
    pub saturations: u64,
}

impl SyncRun {
    pub fn spread(&self) -> f64 {
        spread(&self.x)
    }
}

pub fn spread(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

/// Synchronous consensus in which every node broadcasts one code per
/// iteration. Each receiver keeps its own decoder for every neighbor; node
/// `i` uses its encoder-side reconstruction for itself.
///
/// Stops when no entry moves by more than `tol` in one iteration and, for
/// zoom and log coders, every reconstruction is within `tol` of its state.
/// Dithered runs stop once the spread is at most `tol`. Otherwise the run
/// ends after `max_iter` iterations.
#[allow(clippy::too_many_arguments)]
pub fn synchronous_consensus(
    w: &AveragingMatrix,
    x0: &[f64],
    codec: SyncCodec,
    update: SyncUpdate,
    max_iter: u64,
    tol: f64,
    sample_every: u64,
    seed: u64,
) -> Result<SyncRun> {
    let n = w.n();
    if x0.len() != n {
        return Err(Error::invalid(format!(
            "initial vector has {} entries for {n} nodes",
            x0.len()
        )));
    }
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && w[(i, j)] != 0.0)
                .map(|j| (j, w[(i, j)]))
                .collect()
        })
        .collect();
    let initial_codec = match codec {
        SyncCodec::Zoom { step, initial } => {
            zoom_max_index(step)?;
            NodeCodec::Zoom(initial)
        }
        SyncCodec::Log { delta } => NodeCodec::Log(LogQuantizer::new(delta, 0.0)?),
        _ => NodeCodec::Stateless,
    };
    let mut encoders = vec![initial_codec.clone(); n];
    // decoders[i][k]: node i's copy of the codec of its k-th neighbor
    let mut decoders: Vec<Vec<NodeCodec>> = neighbors
        .iter()
        .map(|nb| vec![initial_codec.clone(); nb.len()])
        .collect();
    let mut rng = rng::seeded(seed);
    let mut x = x0.to_vec();
    let average = x0.iter().sum::<f64>() / n as f64;
    let mut budget = BitBudget::default();
    let mut samples = Vec::new();
    let mut saturations = 0;
    let mut own = vec![0.0; n];
    let mut codes = vec![0.0; n];
    let mut settled = false;
    let mut iterations = 0;
    let sample = |it: u64, x: &[f64], bits: u64| SyncSample {
        iteration: it,
        spread: spread(x),
        max_deviation: x.iter().map(|v| (v - average).abs()).fold(0.0, f64::max),
        bits,
    };
    samples.push(sample(0, &x, 0));

    while iterations < max_iter {
        let mut bits = 0u64;
        for i in 0..n {
            match (&codec, &mut encoders[i]) {
                (SyncCodec::Exact, _) => {
                    codes[i] = x[i];
                    own[i] = x[i];
                    bits += 64;
                }
                (SyncCodec::Uniform(q), _) | (SyncCodec::Dither(q), _) => {
                    let c = if matches!(codec, SyncCodec::Dither(_)) {
                        q.quantize_dithered(x[i], &mut rng)
                    } else {
                        q.quantize(x[i])
                    };
                    saturations += c.saturated as u64;
                    codes[i] = c.value;
                    own[i] = c.value;
                    bits += q.rate_bits() as u64;
                }
                (SyncCodec::Zoom { step, .. }, NodeCodec::Zoom(state)) => {
                    let (q, next) = zoom_encode_step(x[i], state, *step)?;
                    codes[i] = q;
                    *state = next;
                    own[i] = next.xhat_prev;
                    bits += zoom_rate_bits(*step)? as u64;
                }
                (SyncCodec::Log { .. }, NodeCodec::Log(state)) => {
                    let (code, next) = log_quantize_step(x[i], state);
                    codes[i] = code.value(state.delta);
                    *state = next;
                    own[i] = next.xi;
                    bits += code.bits();
                }
                _ => unreachable!("codec state matches codec kind"),
            }
        }
        // a stateful coder is still catching up while x̂ differs from x
        let lag = match codec {
            SyncCodec::Zoom { .. } | SyncCodec::Log { .. } => x
                .iter()
                .zip(&own)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            _ => 0.0,
        };
        let mut next = vec![0.0; n];
        let mut moved = 0.0f64;
        for i in 0..n {
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (k, &(j, wij)) in neighbors[i].iter().enumerate() {
                let xhat_j = match &mut decoders[i][k] {
                    NodeCodec::Stateless => codes[j],
                    NodeCodec::Zoom(state) => {
                        *state = zoom_decode_step(codes[j], state);
                        state.xhat_prev
                    }
                    NodeCodec::Log(state) => {
                        state.xi += codes[j];
                        state.xi
                    }
                };
                acc += wij * xhat_j;
                weight += wij;
            }
            next[i] = match update {
                SyncUpdate::Direct => (1.0 - weight) * x[i] + acc,
                SyncUpdate::Quantized => (1.0 - weight) * own[i] + acc,
                SyncUpdate::AveragePreserving => x[i] + acc - weight * own[i],
            };
            moved = moved.max((next[i] - x[i]).abs());
        }
        x = next;
        iterations += 1;
        budget.record(bits);
        if iterations % sample_every.max(1) == 0 {
            samples.push(sample(iterations, &x, budget.total()));
        }
        // a dithered step can stand still by chance; only consensus absorbs
        let still = match codec {
            SyncCodec::Dither(_) => spread(&x) <= tol,
            _ => moved <= tol && lag <= tol,
        };
        if still {
            settled = true;
            break;
        }
    }
    if samples.last().map(|s| s.iteration) != Some(iterations) {
        samples.push(sample(iterations, &x, budget.total()));
    }
    Ok(SyncRun {
        x,
        iterations,
        messages: iterations * n as u64,
        budget,
        samples,
        settled,
        saturations,
    })
}
