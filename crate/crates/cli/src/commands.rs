//! One function per subcommand. Each reads its resolved [`Settings`],
//! writes back any `auto` value it resolves, and returns the CSV body.

use std::fmt::Write as _;

use gossiplab::applications::{
    cs_gather, cs_reconstruct, default_tau, laplacian_eigenbasis, localize, m_term_curve,
    mean_squared_error, quantile_threshold, rss_measure, smooth_field, CsEnsemble, IstaOptions,
    RssScene,
};
use gossiplab::estimation::{
    capped_sensor_network, run_estimation, LinearObservationModel, SaConfig,
};
use gossiplab::quantized::{
    synchronous_consensus, QuantizerKind, SyncCodec, SyncUpdate, ZoomState,
};
use gossiplab::spectral::{
    averaging_time_bound, expected_matrix, metropolis_matrix, second_eigenvalue,
};
use gossiplab::topology::{build_complete, build_grid, build_rgg, connectivity_radius};
use gossiplab::{
    rng, stats, AveragingTime, Error, Gossip, GossipDesign, Graph, GraphKind, InitialCondition,
    NodePosition, Protocol, Quantization, StopRule, UniformQuantizer,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ensure, ConfigError, Settings};
use crate::CliError;

/// Stream index for randomness that is not tied to a trial.
const SCENE_STREAM: u64 = 1 << 40;
const MEASUREMENT_STREAM: u64 = (1 << 40) + 1;

#[derive(Debug)]
pub struct Outcome {
    pub body: String,
    /// `Some(reason)` when a run hit its cap or was aborted.
    pub incomplete: Option<String>,
}

impl Outcome {
    fn done(body: String) -> Self {
        Outcome {
            body,
            incomplete: None,
        }
    }
}

type CmdResult = Result<Outcome, CliError>;

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn parse_init(s: &Settings) -> Result<InitialCondition, ConfigError> {
    match s.raw("init") {
        "spike" => Ok(InitialCondition::Spike),
        "split" => Ok(InitialCondition::Split),
        other => Err(ConfigError(format!(
            "invalid value for `init`: `{other}` (expected spike or split)"
        ))),
    }
}

fn parse_protocol(s: &Settings) -> Result<Protocol, CliError> {
    let protocol: Protocol = s.get("protocol")?;
    Ok(match protocol {
        Protocol::Broadcast { .. } => {
            let gamma: f64 = s.get("gamma")?;
            ensure(
                gamma > 0.0 && gamma < 1.0,
                "gamma",
                format!("must lie in (0, 1), got {gamma}"),
            )?;
            Protocol::Broadcast { gamma }
        }
        p => p,
    })
}

fn parse_eps(s: &Settings) -> Result<f64, ConfigError> {
    let eps: f64 = s.get("eps")?;
    ensure(
        eps > 0.0 && eps < 1.0,
        "eps",
        format!("must lie in (0, 1), got {eps}"),
    )?;
    Ok(eps)
}

/// Connected random geometric graph; a disconnected draw is retried with the
/// next seed and the retry is reported on stderr.
fn connected_rgg(n: usize, radius: f64, seed: u64) -> Result<Graph, CliError> {
    for attempt in 0..1000u64 {
        let s = seed.wrapping_add(attempt);
        let g = build_rgg(n, radius, s)?;
        if g.is_connected() {
            return Ok(g);
        }
        eprintln!(
            "graph seed {s} gave a disconnected graph; retrying with seed {}",
            s.wrapping_add(1)
        );
    }
    Err(Error::Disconnected(format!(
        "no connected RGG with n={n}, radius={radius} in 1000 seeds"
    ))
    .into())
}

fn rgg_radius(s: &mut Settings, n: usize) -> Result<f64, CliError> {
    let radius = match s.get_auto::<f64>("radius")? {
        Some(r) => r,
        None => {
            let scale: f64 = s.get("radius-scale")?;
            ensure(
                scale > 0.0,
                "radius-scale",
                format!("must be positive, got {scale}"),
            )?;
            ensure(
                n >= 2,
                "n",
                format!("a random geometric graph needs n >= 2, got {n}"),
            )?;
            let r = connectivity_radius(n, scale)?;
            s.set("radius", r.to_string())?;
            r
        }
    };
    ensure(
        radius > 0.0 && radius <= 2f64.sqrt(),
        "radius",
        format!("must lie in (0, sqrt 2], got {radius}"),
    )?;
    Ok(radius)
}

/// Builds the graph named by `kind_key`, `n`, `radius`, `rows`, `cols`, `seed`.
fn build_graph(s: &mut Settings, kind_key: &str) -> Result<Graph, CliError> {
    let kind: GraphKind = s.get(kind_key)?;
    let n: usize = s.get("n")?;
    let seed: u64 = s.get("seed")?;
    match kind {
        GraphKind::Rgg => {
            let radius = rgg_radius(s, n)?;
            connected_rgg(n, radius, seed)
        }
        GraphKind::Grid => {
            let (rows, cols) = match (s.get_auto::<usize>("rows")?, s.get_auto::<usize>("cols")?) {
                (Some(r), Some(c)) => (r, c),
                (None, None) => {
                    let side = (n as f64).sqrt().round() as usize;
                    ensure(
                        side * side == n,
                        "n",
                        format!("a square grid needs a perfect square, got {n}"),
                    )?;
                    (side, side)
                }
                _ => {
                    return Err(ConfigError("set both `rows` and `cols`, or neither".into()).into())
                }
            };
            s.set("rows", rows.to_string())?;
            s.set("cols", cols.to_string())?;
            s.set("n", (rows * cols).to_string())?;
            Ok(build_grid(rows, cols)?)
        }
        GraphKind::Complete => Ok(build_complete(n)?),
    }
}

pub fn topology(s: &mut Settings) -> CmdResult {
    let g = build_graph(s, "kind")?;
    let mut buf = Vec::new();
    g.write_edge_list(&mut buf)?;
    Ok(Outcome::done(
        String::from_utf8(buf).expect("edge lists are ASCII"),
    ))
}

fn design_for(s: &Settings, g: &Graph) -> Result<GossipDesign, ConfigError> {
    match s.raw("design") {
        "uniform" => Ok(GossipDesign::uniform(g)),
        "lazy" => Ok(GossipDesign::lazy_uniform(g)),
        other => Err(ConfigError(format!(
            "invalid value for `design`: `{other}` (expected uniform or lazy)"
        ))),
    }
}

pub fn converge(s: &mut Settings) -> CmdResult {
    let eps = parse_eps(s)?;
    let trials: usize = s.get("trials")?;
    ensure(
        trials >= 20,
        "trials",
        format!("need at least 20 trials, got {trials}"),
    )?;
    let init = parse_init(s)?;
    let max_ticks: u64 = s.get("max-ticks")?;
    let link_loss: f64 = s.get("link-loss")?;
    ensure(
        (0.0..1.0).contains(&link_loss),
        "link-loss",
        format!("must lie in [0, 1), got {link_loss}"),
    )?;
    let protocol = parse_protocol(s)?;
    let seed: u64 = s.get("seed")?;
    let g = build_graph(s, "topology")?;
    let design = design_for(s, &g)?;
    let gossip = Gossip::new(&g, protocol)?
        .with_design(design.clone())?
        .with_link_loss(link_loss)?;

    // the spectral bound describes pairwise gossip only
    let (lambda2, bound) = if protocol == Protocol::Pairwise {
        let l2 = second_eigenvalue(&expected_matrix(&design))?;
        (Some(l2), Some(averaging_time_bound(l2, eps)?))
    } else {
        (None, None)
    };
    let result = gossip.averaging_time(eps, trials, seed, max_ticks, init)?;
    let mut body = String::from(
        "topology,n,protocol,eps,trials,lambda2,bound_tight,bound_loose,empirical_ticks,median_messages,median_messages_to_eps\n",
    );
    let (ticks, msgs, to_eps) = match &result {
        AveragingTime::Converged {
            ticks,
            messages,
            median_messages_to_eps,
            ..
        } => (
            Some(*ticks as f64),
            Some(*messages),
            Some(*median_messages_to_eps),
        ),
        AveragingTime::NotConverged { .. } => (None, None, None),
    };
    writeln!(
        body,
        "{},{},{},{},{},{},{},{},{},{},{}",
        g.kind(),
        g.n(),
        protocol.name(),
        eps,
        trials,
        na(lambda2),
        na(bound.map(|b| b.tight)),
        na(bound.map(|b| b.loose)),
        na(ticks),
        na(msgs),
        na(to_eps)
    )
    .expect("writing to a String");
    let incomplete = match result {
        AveragingTime::NotConverged { cap } => {
            Some(format!("too many trials still above ε after {cap} ticks"))
        }
        AveragingTime::Converged { .. } => None,
    };
    Ok(Outcome { body, incomplete })
}

/// One sweep point of a scaling experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub n: usize,
    /// Median messages until ε; `None` if the point did not converge.
    pub messages: Option<f64>,
}

/// Least-squares slope of log(messages) against log(n); `None` if any point
/// did not converge or fewer than two points are given.
pub fn scaling_report(points: &[ScalingPoint]) -> Option<f64> {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for p in points {
        xs.push(p.n as f64);
        ys.push(p.messages?);
    }
    stats::log_log_slope(&xs, &ys)
}

pub fn scaling(s: &mut Settings) -> CmdResult {
    let ns: Vec<usize> = s.get_list("ns")?;
    ensure(
        ns.len() >= 3,
        "ns",
        format!("a sweep needs at least 3 sizes, got {}", ns.len()),
    )?;
    let eps = parse_eps(s)?;
    let trials: usize = s.get("trials")?;
    ensure(
        trials >= 20,
        "trials",
        format!("need at least 20 trials, got {trials}"),
    )?;
    let init = parse_init(s)?;
    let max_ticks: u64 = s.get("max-ticks")?;
    let protocol = parse_protocol(s)?;
    let seed: u64 = s.get("seed")?;
    let kind: GraphKind = s.get("topology")?;
    let scale: f64 = s.get("radius-scale")?;
    ensure(
        scale > 0.0,
        "radius-scale",
        format!("must be positive, got {scale}"),
    )?;

    let mut body = String::from("n,median_messages_to_eps,empirical_ticks\n");
    let mut points = Vec::new();
    for &n in &ns {
        let g = match kind {
            GraphKind::Rgg => connected_rgg(n, connectivity_radius(n, scale)?, seed)?,
            GraphKind::Grid => {
                let side = (n as f64).sqrt().round() as usize;
                ensure(
                    side * side == n,
                    "ns",
                    format!("grid sizes must be perfect squares, got {n}"),
                )?;
                build_grid(side, side)?
            }
            GraphKind::Complete => build_complete(n)?,
        };
        let result =
            Gossip::new(&g, protocol)?.averaging_time(eps, trials, seed, max_ticks, init)?;
        let (messages, ticks) = match result {
            AveragingTime::Converged {
                ticks,
                median_messages_to_eps,
                ..
            } => (Some(median_messages_to_eps), Some(ticks as f64)),
            AveragingTime::NotConverged { .. } => (None, None),
        };
        writeln!(body, "{n},{},{}", na(messages), na(ticks)).expect("writing to a String");
        points.push(ScalingPoint { n, messages });
    }
    match scaling_report(&points) {
        Some(slope) => {
            writeln!(body, "# slope={slope}").expect("writing to a String");
            eprintln!("log-log slope of messages against n: {slope:.4}");
            Ok(Outcome::done(body))
        }
        None => Ok(Outcome {
            body,
            incomplete: Some("some sweep points did not converge; slope omitted".into()),
        }),
    }
}

fn initial_vector(s: &Settings, n: usize, integer: bool, seed: u64) -> Result<Vec<f64>, CliError> {
    let x = match s.raw("init") {
        "random" => {
            let range: f64 = s.get("range")?;
            ensure(
                range > 0.0,
                "range",
                format!("must be positive, got {range}"),
            )?;
            let mut r = rng::stream(seed, SCENE_STREAM);
            (0..n).map(|_| r.random::<f64>() * range).collect()
        }
        _ => parse_init(s)?.vector(n),
    };
    Ok(if integer {
        x.into_iter().map(f64::round).collect()
    } else {
        x
    })
}

pub fn quantized(s: &mut Settings) -> CmdResult {
    let kind: QuantizerKind = s.get("quantizer")?;
    let delta: f64 = s.get("delta")?;
    let rate: u32 = s.get("rate-bits")?;
    let seed: u64 = s.get("seed")?;
    let g = build_graph(s, "topology")?;
    let n = g.n();
    let uniform =
        || -> Result<UniformQuantizer, CliError> { Ok(UniformQuantizer::new(delta, rate)?) };
    let x0 = initial_vector(s, n, kind == QuantizerKind::Integer, seed)?;
    let sample_every = s.get_auto::<u64>("sample-every")?.unwrap_or(n as u64);
    ensure(sample_every > 0, "sample-every", "must be positive")?;
    match s.raw("mode") {
        "async" => {
            let quantization = match kind {
                QuantizerKind::None => Quantization::None,
                QuantizerKind::Uniform => Quantization::Uniform(uniform()?),
                QuantizerKind::Dither => Quantization::Dither(uniform()?),
                QuantizerKind::Integer => Quantization::Integer,
                QuantizerKind::Zoom | QuantizerKind::Log => {
                    return Err(ConfigError(format!(
                        "invalid value for `quantizer`: {kind} coding runs only with mode=sync"
                    ))
                    .into())
                }
            };
            let max_ticks: u64 = s.get("max-iter")?;
            let stop = match kind {
                QuantizerKind::Integer => StopRule::Spread {
                    max_spread: 1.0,
                    max_ticks,
                },
                QuantizerKind::Dither => StopRule::Spread {
                    max_spread: delta * 1e-3,
                    max_ticks,
                },
                _ => StopRule::ErrorBelow {
                    eps: parse_eps(s)?,
                    max_ticks,
                },
            };
            let trace = Gossip::new(&g, Protocol::Pairwise)?
                .with_quantization(quantization)?
                .with_sample_every(sample_every)
                .run(&x0, stop, seed)?;
            let incomplete =
                (!trace.reached).then(|| format!("no consensus after {max_ticks} ticks"));
            Ok(Outcome {
                body: trace.to_csv(),
                incomplete,
            })
        }
        "sync" => {
            let codec =
                match kind {
                    QuantizerKind::None => SyncCodec::Exact,
                    QuantizerKind::Uniform => SyncCodec::Uniform(uniform()?),
                    QuantizerKind::Dither => SyncCodec::Dither(uniform()?),
                    QuantizerKind::Zoom => SyncCodec::Zoom {
                        step: delta,
                        initial: ZoomState::default(),
                    },
                    QuantizerKind::Log => SyncCodec::Log { delta },
                    QuantizerKind::Integer => return Err(ConfigError(
                        "invalid value for `quantizer`: integer gossip runs only with mode=async"
                            .into(),
                    )
                    .into()),
                };
            let max_iter: u64 = s.get("max-iter")?;
            let tol: f64 = s.get("tol")?;
            ensure(tol >= 0.0, "tol", format!("must be nonnegative, got {tol}"))?;
            let update = match s.raw("update") {
                "auto" => codec.default_update(),
                "direct" => SyncUpdate::Direct,
                "quantized" => SyncUpdate::Quantized,
                "preserving" => SyncUpdate::AveragePreserving,
                other => {
                    return Err(ConfigError(format!(
                        "invalid value for `update`: `{other}` (expected auto, direct, quantized or preserving)"
                    ))
                    .into())
                }
            };
            let w = metropolis_matrix(&g);
            let run =
                synchronous_consensus(&w, &x0, codec, update, max_iter, tol, sample_every, seed)?;
            let mut body = String::from("t,spread,max_deviation,messages,bits\n");
            for p in &run.samples {
                writeln!(
                    body,
                    "{},{:e},{:e},{},{}",
                    p.iteration,
                    p.spread,
                    p.max_deviation,
                    p.iteration * n as u64,
                    p.bits
                )
                .expect("writing to a String");
            }
            let incomplete =
                (!run.settled).then(|| format!("state still moving after {max_iter} iterations"));
            Ok(Outcome { body, incomplete })
        }
        other => Err(ConfigError(format!(
            "invalid value for `mode`: `{other}` (expected async or sync)"
        ))
        .into()),
    }
}

pub fn estimate(s: &mut Settings) -> CmdResult {
    let n: usize = s.get("n")?;
    ensure(n >= 2, "n", format!("need at least 2 sensors, got {n}"))?;
    let seed: u64 = s.get("seed")?;
    let radius = rgg_radius(s, n)?;
    let max_degree: usize = s.get("max-degree")?;
    let theta_sd: f64 = s.get("theta-sd")?;
    ensure(
        theta_sd >= 0.0,
        "theta-sd",
        format!("must be nonnegative, got {theta_sd}"),
    )?;
    let noise_sd: f64 = s.get("noise-sd")?;
    let quantizer = match s.raw("quantizer") {
        "dither" => Some(UniformQuantizer::new(s.get("delta")?, s.get("rate-bits")?)?),
        "none" => None,
        other => {
            return Err(ConfigError(format!(
                "invalid value for `quantizer`: `{other}` (expected dither or none)"
            ))
            .into())
        }
    };
    let config = SaConfig {
        a: s.get("a")?,
        offset: s.get("offset")?,
        b: s.get("b")?,
        quantizer,
    };
    let iterations: u64 = s.get("iterations")?;
    let sample_every: u64 = s.get("sample-every")?;
    ensure(sample_every > 0, "sample-every", "must be positive")?;

    let (g, used) = capped_sensor_network(n, radius, max_degree, seed)?;
    if used != seed {
        eprintln!("sensor network seed {seed} was disconnected after capping; used seed {used}");
    }
    let normal = Normal::new(0.0, theta_sd)
        .map_err(|e| ConfigError(format!("invalid value for `theta-sd`: {e}")))?;
    let mut r = rng::stream(seed, SCENE_STREAM);
    let theta: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
    let model = LinearObservationModel::componentwise(theta, noise_sd)?;
    match run_estimation(&model, &g, &config, iterations, sample_every, seed) {
        Ok(trace) => Ok(Outcome::done(trace.to_csv())),
        Err(e @ Error::Diverged { .. }) => Ok(Outcome {
            body: "t,node,normalized_error\n".into(),
            incomplete: Some(format!("{e}; reduce `a` or `b`, or raise `offset`")),
        }),
        Err(e) => Err(e.into()),
    }
}

pub fn localize_cmd(s: &mut Settings) -> CmdResult {
    let seed: u64 = s.get("seed")?;
    let protocol = parse_protocol(s)?;
    let eps = parse_eps(s)?;
    let max_ticks: u64 = s.get("max-ticks")?;
    let g = build_graph(s, "topology")?;
    ensure(
        g.has_positions(),
        "topology",
        "localization needs sensor positions (rgg or grid)",
    )?;
    let mut r = rng::stream(seed, SCENE_STREAM);
    let mut coordinate = |key: &str, s: &mut Settings| -> Result<f64, CliError> {
        let v = match s.get_auto::<f64>(key)? {
            Some(v) => v,
            None => {
                let v = r.random_range(0.2..0.8);
                s.set(key, v.to_string())?;
                v
            }
        };
        Ok(v)
    };
    let sx = coordinate("source-x", s)?;
    let sy = coordinate("source-y", s)?;
    let source = NodePosition::new(sx, sy)
        .map_err(|e| ConfigError(format!("invalid source position: {e}")))?;
    let scene = RssScene::new(
        source,
        s.get("strength")?,
        s.get("path-loss")?,
        s.get("noise-sd")?,
        g.positions().to_vec(),
    )?;
    let values = rss_measure(&scene, &mut rng::stream(seed, MEASUREMENT_STREAM)).values;
    let threshold = match s.get_auto::<f64>("threshold")? {
        Some(t) => t,
        None => {
            let q: f64 = s.get("quantile")?;
            ensure(
                (0.0..=1.0).contains(&q),
                "quantile",
                format!("must lie in [0, 1], got {q}"),
            )?;
            quantile_threshold(&values, q)
        }
    };
    let loc = localize(
        &g,
        &values,
        threshold,
        protocol,
        StopRule::ErrorBelow { eps, max_ticks },
        seed,
    )?;
    let [cx, cy] = loc.centralized;
    let (gx, gy) = loc
        .gossip_estimate
        .map_or((None, None), |[x, y]| (Some(x), Some(y)));
    let gap = loc.gossip_estimate.map(|[x, y]| (x - cx).hypot(y - cy));
    let error = loc.gossip_estimate.map(|[x, y]| (x - sx).hypot(y - sy));
    let mut body = String::from(
        "source_x,source_y,threshold,gossip_x,gossip_y,centralized_x,centralized_y,gossip_vs_centralized,localization_error,ticks,messages\n",
    );
    writeln!(
        body,
        "{sx},{sy},{threshold},{},{},{cx},{cy},{},{},{},{}",
        na(gx),
        na(gy),
        na(gap),
        na(error),
        loc.trace.terminal.t,
        loc.trace.terminal.messages
    )
    .expect("writing to a String");
    let incomplete = (!loc.trace.reached)
        .then(|| format!("gossip error still above {eps} after {max_ticks} ticks"));
    Ok(Outcome { body, incomplete })
}

pub fn field(s: &mut Settings) -> CmdResult {
    let g = build_graph(s, "topology")?;
    ensure(
        g.has_positions(),
        "topology",
        "the test field needs sensor positions (rgg or grid)",
    )?;
    let f = smooth_field(g.positions());
    let transform = laplacian_eigenbasis(&g)?;
    let n = g.n();
    match s.raw("mode") {
        "mterm" => {
            let ms: Vec<usize> = if s.is_auto("ms") {
                (0..=n).collect()
            } else {
                s.get_list("ms")?
            };
            if let Some(&bad) = ms.iter().find(|&&m| m > n) {
                return Err(
                    ConfigError(format!("invalid value for `ms`: {bad} exceeds n = {n}")).into(),
                );
            }
            let curve = m_term_curve(&f, &transform);
            let mut body = String::from("m,mterm_mse\n");
            for m in ms {
                writeln!(body, "{m},{:e}", curve[m]).expect("writing to a String");
            }
            Ok(Outcome::done(body))
        }
        "cs" => {
            let ks: Vec<usize> = s.get_list("ks")?;
            ensure(ks.iter().all(|&k| k > 0), "ks", "every k must be positive")?;
            let seed: u64 = s.get("seed")?;
            let protocol = parse_protocol(s)?;
            let eps = parse_eps(s)?;
            let max_ticks: u64 = s.get("max-ticks")?;
            let options = IstaOptions {
                tolerance: s.get("ista-tol")?,
                max_iterations: s.get("ista-max-iter")?,
            };
            let tau_setting = s.get_auto::<f64>("tau")?;
            let mut body = String::from("k,gossip_iterations,reconstruction_mse\n");
            let mut notes = Vec::new();
            for k in ks {
                let ensemble = CsEnsemble::new(n, k, seed)?;
                let gathered = cs_gather(
                    &f,
                    &ensemble,
                    &g,
                    protocol,
                    StopRule::ErrorBelow { eps, max_ticks },
                    seed,
                )?;
                let tau = tau_setting
                    .unwrap_or_else(|| default_tau(&gathered.node0, &ensemble, &transform));
                let rec = cs_reconstruct(&gathered.node0, &ensemble, &transform, tau, options)?;
                if !gathered.reached {
                    notes.push(format!("k={k}: some gossip instances stopped above {eps}"));
                }
                if !rec.solution.converged {
                    notes.push(format!("k={k}: shrinkage hit its iteration cap"));
                }
                writeln!(
                    body,
                    "{k},{},{:e}",
                    gathered.ticks,
                    mean_squared_error(&rec.field, &f)
                )
                .expect("writing to a String");
            }
            let incomplete = (!notes.is_empty()).then(|| notes.join("; "));
            Ok(Outcome { body, incomplete })
        }
        other => Err(ConfigError(format!(
            "invalid value for `mode`: `{other}` (expected cs or mterm)"
        ))
        .into()),
    }
}
