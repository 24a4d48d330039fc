//! Fixed-step RK4 simulation of a network of identical agents running one of
//! the adaptive protocols, with trajectory recording.

use crate::agent::AgentModel;
use crate::collab::{CollabDesign, CollabError, CollabState};
use crate::graph::DirectedGraph;
use crate::noncollab::{dot_row, NoncollabDesign, NoncollabError, NoncollabState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("disturbance table does not cover t = {0}")]
    TableOutOfRange(f64),
    #[error("non-finite state for agent {agent} at t = {t}")]
    BlowUp { t: f64, agent: usize },
    #[error("state grew by more than 1e3 in one step at t = {t}; reduce dt")]
    StepTooLarge { t: f64 },
    #[error("trailing window {window} exceeds the run length {length}")]
    WindowTooLong { window: f64, length: f64 },
    #[error("protocol exchange is only defined for the collaborative protocol")]
    NotCollaborative,
    #[error(transparent)]
    Noncollab(#[from] NoncollabError),
    #[error(transparent)]
    Collab(#[from] CollabError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// External disturbance `w_i(t)`; every component of `w_i` gets the same
/// value.
#[derive(Debug, Clone, PartialEq)]
pub enum Disturbance {
    Zero,
    /// `sin(0.1·i·t + 0.01·t²)`.
    Chirp,
    /// `i·t − round(i·t)`, rounding half to even.
    Sawtooth,
    /// Piecewise-linear interpolation through `(time, value)` knots with
    /// strictly increasing times; identical for all agents.
    Table(Vec<(f64, f64)>),
}

impl Disturbance {
    /// Scalar disturbance for 1-based agent label `i`.
    pub fn scalar(&self, i: usize, t: f64) -> Result<f64> {
        let fi = i as f64;
        Ok(match self {
            Disturbance::Zero => 0.0,
            Disturbance::Chirp => (0.1 * fi * t + 0.01 * t * t).sin(),
            Disturbance::Sawtooth => {
                let v = fi * t;
                v - v.round_ties_even()
            }
            Disturbance::Table(knots) => {
                let first = knots.first().ok_or(SimError::TableOutOfRange(t))?;
                let last = knots.last().expect("nonempty");
                if t < first.0 || t > last.0 {
                    return Err(SimError::TableOutOfRange(t));
                }
                let k = knots.partition_point(|&(tk, _)| tk <= t);
                if k >= knots.len() {
                    last.1
                } else {
                    let (t0, v0) = knots[k - 1];
                    let (t1, v1) = knots[k];
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Disturbance::Table(knots) = self {
            if knots.is_empty() {
                return Err(SimError::Config("disturbance table is empty".into()));
            }
            if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(SimError::Config(
                    "disturbance table times must be strictly increasing".into(),
                ));
            }
            if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                return Err(SimError::Config("disturbance table has non-finite entries".into()));
            }
        }
        Ok(())
    }
}

/// `w_i(t)` as a vector of the model's disturbance dimension.
pub fn disturbance_value(spec: &Disturbance, i: usize, t: f64, dim: usize) -> Result<Vec<f64>> {
    Ok(vec![spec.scalar(i, t)?; dim])
}

#[derive(Debug, Clone)]
pub enum Protocol {
    Noncollaborative(Arc<NoncollabDesign>),
    Collaborative(Arc<CollabDesign>),
}

impl Protocol {
    fn state_len(&self) -> usize {
        match self {
            Protocol::Noncollaborative(d) => d.hidden_dim() + 1,
            Protocol::Collaborative(d) => d.state_dim() + 2,
        }
    }

    pub fn is_collaborative(&self) -> bool {
        matches!(self, Protocol::Collaborative(_))
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Protocol::Noncollaborative(d) => d.d,
            Protocol::Collaborative(d) => d.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    /// Each agent's state uniform in `[−1, 1]ⁿ`, drawn from a stream keyed
    /// by the seed and the agent label, so it does not depend on which other
    /// agents are simulated.
    UniformBox { seed: u64 },
    Explicit(Vec<Vec<f64>>),
}

/// Initial adaptive gains; observers always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitialGains {
    pub rho: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: AgentModel,
    pub graph: DirectedGraph,
    pub protocol: Protocol,
    pub disturbance: Disturbance,
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub initial: InitialStates,
    pub initial_gains: InitialGains,
    /// 1-based label per agent used for disturbances and initial states;
    /// defaults to `1..=N`.
    pub agent_labels: Option<Vec<usize>>,
    /// Evaluate agents on the rayon pool.
    pub parallel: bool,
}

impl SimConfig {
    pub fn new(model: AgentModel, graph: DirectedGraph, protocol: Protocol) -> Self {
        Self {
            model,
            graph,
            protocol,
            disturbance: Disturbance::Zero,
            dt: 1e-3,
            t_end: 30.0,
            record_stride: 1,
            initial: InitialStates::UniformBox { seed: 0 },
            initial_gains: InitialGains::default(),
            agent_labels: None,
            parallel: false,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.agent_labels
            .clone()
            .unwrap_or_else(|| (1..=self.graph.node_count()).collect())
    }

    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(SimError::Config(format!(
                "t_end = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record stride must be at least 1".into()));
        }
        let n_agents = self.graph.node_count();
        if n_agents == 0 {
            return Err(SimError::Config("graph has no nodes".into()));
        }
        let labels = self.labels();
        if labels.len() != n_agents || labels.contains(&0) {
            return Err(SimError::Config("agent labels must be 1-based, one per node".into()));
        }
        let n = self.model.state_dim();
        let consistent = match &self.protocol {
            Protocol::Noncollaborative(d) => {
                d.state_dim() == n && d.transform.input_dim == self.model.input_dim()
            }
            Protocol::Collaborative(d) => {
                d.a == *self.model.a() && d.b == *self.model.b() && d.c == *self.model.c()
            }
        };
        if !consistent {
            return Err(SimError::Config("protocol design does not match the model".into()));
        }
        if let InitialStates::Explicit(states) = &self.initial {
            if states.len() != n_agents || states.iter().any(|s| s.len() != n) {
                return Err(SimError::Config(format!(
                    "explicit initial states must be {n_agents} vectors of length {n}"
                )));
            }
        }
        if self.initial_gains.rho < 0.0 || self.initial_gains.alpha < 0.0 {
            return Err(SimError::Config("initial gains must be nonnegative".into()));
        }
        self.disturbance.validate()
    }
}

/// Recorded signals of one agent; vector-valued fields are stored
/// sample-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentTrace {
    pub label: usize,
    pub x: Vec<f64>,
    pub protocol_state: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    /// `‖ζ_i‖`.
    pub zeta_norm: Vec<f64>,
    /// `ξ̂ᵀPξ̂` (noncollaborative) or `ẽᵀẽ` (collaborative).
    pub proxy: Vec<f64>,
    /// `ζ̃ᵀCᵀCζ̃`; empty for the noncollaborative protocol.
    pub exchange_proxy: Vec<f64>,
    pub rho: Vec<f64>,
    /// Empty for the noncollaborative protocol.
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub times: Vec<f64>,
    pub state_dim: usize,
    pub protocol_dim: usize,
    pub output_dim: usize,
    pub input_dim: usize,
    pub collaborative: bool,
    pub agents: Vec<AgentTrace>,
}

impl SimulationRun {
    pub fn sample_count(&self) -> usize {
        self.times.len()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("at least one sample")
    }

    pub fn x_at(&self, agent: usize, sample: usize) -> &[f64] {
        let n = self.state_dim;
        &self.agents[agent].x[sample * n..(sample + 1) * n]
    }

    pub fn y_at(&self, agent: usize, sample: usize) -> &[f64] {
        let p = self.output_dim;
        &self.agents[agent].y[sample * p..(sample + 1) * p]
    }

    pub fn u_at(&self, agent: usize, sample: usize) -> &[f64] {
        let m = self.input_dim;
        &self.agents[agent].u[sample * m..(sample + 1) * m]
    }

    /// First sample index with `t ≥ t_from`.
    pub fn sample_index_at(&self, t_from: f64) -> usize {
        self.times.partition_point(|&t| t < t_from - 1e-12)
    }
}

/// Smallest recorded `T` after which `metric ≤ threshold` at every sample
/// through the end, provided at least `trailing_window` seconds remain.
pub fn detect_settling(
    times: &[f64],
    metric: &[f64],
    threshold: f64,
    trailing_window: f64,
) -> Result<Option<f64>> {
    let (Some(&t0), Some(&t_end)) = (times.first(), times.last()) else {
        return Err(SimError::Config("empty trace".into()));
    };
    if trailing_window > t_end - t0 + 1e-12 {
        return Err(SimError::WindowTooLong {
            window: trailing_window,
            length: t_end - t0,
        });
    }
    let start = match metric.iter().rposition(|&v| !(v <= threshold)) {
        None => 0,
        Some(last_bad) if last_bad + 1 < times.len() => last_bad + 1,
        Some(_) => return Ok(None),
    };
    let t = times[start];
    Ok((t_end - t >= trailing_window - 1e-12).then_some(t))
}

/// Per-row sparse Laplacian: `(j, ℓ_ij)` for nonzero entries, ascending `j`.
#[derive(Debug, Clone)]
pub struct SparseLaplacian {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseLaplacian {
    pub fn new(graph: &DirectedGraph) -> Self {
        let a = graph.adjacency();
        let n = a.nrows();
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && a[(i, j)] != 0.0)
                    .map(|j| (j, a[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    /// `Σ_j a_ij (v_i − v_j)` for vectors stored with stride `stride` in
    /// `values`, reading `len` entries starting at `offset` inside each block.
    /// Written as differences so that equal neighbours give exactly zero.
    fn combine(&self, i: usize, values: &[f64], stride: usize, offset: usize, len: usize, out: &mut [f64]) {
        out[..len].iter_mut().for_each(|v| *v = 0.0);
        let own = i * stride + offset;
        for &(j, w) in &self.rows[i] {
            let base = j * stride + offset;
            for k in 0..len {
                out[k] += w * (values[own + k] - values[base + k]);
            }
        }
    }
}

/// `ζ_i = Σ_j ℓ_ij y_j`.
pub fn network_signals(graph: &DirectedGraph, outputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = graph.node_count();
    if outputs.len() != n {
        return Err(SimError::Config(format!("expected {n} outputs, got {}", outputs.len())));
    }
    let p = outputs.first().map_or(0, |y| y.len());
    if outputs.iter().any(|y| y.len() != p) {
        return Err(SimError::Config("outputs have different dimensions".into()));
    }
    let lap = SparseLaplacian::new(graph);
    let flat: Vec<f64> = outputs.iter().flatten().copied().collect();
    Ok((0..n)
        .map(|i| {
            let mut out = vec![0.0; p];
            lap.combine(i, &flat, p, 0, p, &mut out);
            out
        })
        .collect())
}

/// `ζ̃_i = Σ_j ℓ_ij x̂_j`; only meaningful for the collaborative protocol.
pub fn protocol_exchange(
    graph: &DirectedGraph,
    protocol: &Protocol,
    observer_states: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if !protocol.is_collaborative() {
        return Err(SimError::NotCollaborative);
    }
    network_signals(graph, observer_states)
}

/// Uniform `[−1, 1]ⁿ` initial state for the agent with the given label.
pub fn box_initial_state(seed: u64, label: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Everything the recorder needs from one derivative evaluation of one
/// agent.
#[derive(Debug, Clone, Default)]
struct AgentEval {
    u: Vec<f64>,
    zeta_norm: f64,
    proxy: f64,
    exchange_proxy: f64,
}

struct Layout {
    n: usize,
    p: usize,
    m: usize,
    w: usize,
    k: usize,
    stride: usize,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    lap: SparseLaplacian,
    labels: Vec<usize>,
    lay: Layout,
}

impl Engine<'_> {
    /// Writes the time derivative of the stacked state into `out` and
    /// returns per-agent diagnostics.
    fn derivative(&self, t: f64, state: &[f64], out: &mut [f64]) -> Result<Vec<AgentEval>> {
        let lay = &self.lay;
        let c = self.cfg.model.c();
        let n_agents = self.labels.len();
        let mut ys = vec![0.0; n_agents * lay.p];
        for i in 0..n_agents {
            let x = &state[i * lay.stride..i * lay.stride + lay.n];
            for r in 0..lay.p {
                ys[i * lay.p + r] = dot_row(c, r, x);
            }
        }
        let eval_agent = |i: usize, out_i: &mut [f64]| -> Result<AgentEval> {
            let block = &state[i * lay.stride..(i + 1) * lay.stride];
            let x = &block[..lay.n];
            let proto = &block[lay.n..];
            let mut zeta = vec![0.0; lay.p];
            self.lap.combine(i, &ys, lay.p, 0, lay.p, &mut zeta);
            let zeta_norm = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (u, proxy, exchange_proxy) = match &self.cfg.protocol {
                Protocol::Noncollaborative(d) => {
                    let st = NoncollabState {
                        xi1_hat: proto[..lay.k - 1].to_vec(),
                        rho: proto[lay.k - 1],
                    };
                    let r = d.derivatives(&st, &zeta)?;
                    out_i[lay.n..lay.n + lay.k - 1].copy_from_slice(&r.d_xi1_hat);
                    out_i[lay.n + lay.k - 1] = r.d_rho;
                    (r.u, r.proxy, 0.0)
                }
                Protocol::Collaborative(d) => {
                    let mut zeta_tilde = vec![0.0; lay.n];
                    self.lap.combine(i, state, lay.stride, lay.n, lay.n, &mut zeta_tilde);
                    let st = CollabState {
                        x_hat: proto[..lay.n].to_vec(),
                        rho: proto[lay.n],
                        alpha: proto[lay.n + 1],
                    };
                    let r = d.derivatives(&st, &zeta, &zeta_tilde)?;
                    out_i[lay.n..2 * lay.n].copy_from_slice(&r.d_x_hat);
                    out_i[2 * lay.n] = r.d_rho;
                    out_i[2 * lay.n + 1] = r.d_alpha;
                    (r.u, r.mismatch_proxy, r.exchange_proxy)
                }
            };
            let w = self.cfg.disturbance.scalar(self.labels[i], t)?;
            let (a, b, e) = (self.cfg.model.a(), self.cfg.model.b(), self.cfg.model.e());
            for r in 0..lay.n {
                let mut v = dot_row(a, r, x) + dot_row(b, r, &u);
                for col in 0..lay.w {
                    v += e[(r, col)] * w;
                }
                out_i[r] = v;
            }
            Ok(AgentEval {
                u,
                zeta_norm,
                proxy,
                exchange_proxy,
            })
        };
        if self.cfg.parallel {
            out.par_chunks_mut(lay.stride)
                .enumerate()
                .map(|(i, out_i)| eval_agent(i, out_i))
                .collect()
        } else {
            out.chunks_mut(lay.stride)
                .enumerate()
                .map(|(i, out_i)| eval_agent(i, out_i))
                .collect()
        }
    }
}

fn record(run: &mut SimulationRun, t: f64, state: &[f64], evals: &[AgentEval], lay: &Layout, c: &crate::linalg::Matrix) {
    run.times.push(t);
    let collab = run.collaborative;
    for (i, tr) in run.agents.iter_mut().enumerate() {
        let block = &state[i * lay.stride..(i + 1) * lay.stride];
        let x = &block[..lay.n];
        tr.x.extend_from_slice(x);
        let proto = &block[lay.n..];
        for r in 0..lay.p {
            tr.y.push(dot_row(c, r, x));
        }
        tr.u.extend_from_slice(&evals[i].u);
        tr.zeta_norm.push(evals[i].zeta_norm);
        tr.proxy.push(evals[i].proxy);
        if collab {
            tr.protocol_state.extend_from_slice(&proto[..lay.n]);
            tr.rho.push(proto[lay.n]);
            tr.alpha.push(proto[lay.n + 1]);
            tr.exchange_proxy.push(evals[i].exchange_proxy);
        } else {
            tr.protocol_state.extend_from_slice(&proto[..lay.k - 1]);
            tr.rho.push(proto[lay.k - 1]);
        }
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimulationRun> {
    cfg.validate()?;
    let model = &cfg.model;
    let n = model.state_dim();
    let k = cfg.protocol.state_len();
    let lay = Layout {
        n,
        p: model.output_dim(),
        m: model.input_dim(),
        w: model.disturbance_dim(),
        k,
        stride: n + k,
    };
    let labels = cfg.labels();
    let engine = Engine {
        cfg,
        lap: SparseLaplacian::new(&cfg.graph),
        labels: labels.clone(),
        lay,
    };
    let lay = &engine.lay;

    let mut state = vec![0.0; labels.len() * lay.stride];
    for (i, &label) in labels.iter().enumerate() {
        let x0 = match &cfg.initial {
            InitialStates::UniformBox { seed } => box_initial_state(*seed, label, n),
            InitialStates::Explicit(v) => v[i].clone(),
        };
        let block = &mut state[i * lay.stride..(i + 1) * lay.stride];
        block[..n].copy_from_slice(&x0);
        match &cfg.protocol {
            Protocol::Noncollaborative(_) => block[lay.stride - 1] = cfg.initial_gains.rho,
            Protocol::Collaborative(_) => {
                block[2 * n] = cfg.initial_gains.rho;
                block[2 * n + 1] = cfg.initial_gains.alpha;
            }
        }
    }

    let mut run = SimulationRun {
        times: Vec::new(),
        state_dim: n,
        protocol_dim: if cfg.protocol.is_collaborative() { n } else { k - 1 },
        output_dim: lay.p,
        input_dim: lay.m,
        collaborative: cfg.protocol.is_collaborative(),
        agents: labels
            .iter()
            .map(|&label| AgentTrace {
                label,
                ..AgentTrace::default()
            })
            .collect(),
    };

    let steps = cfg.step_count();
    let dt = cfg.dt;
    let len = state.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut tmp = vec![0.0; len];
    for step in 0..=steps {
        let t = step as f64 * dt;
        let evals = engine.derivative(t, &state, &mut k1)?;
        if step % cfg.record_stride == 0 || step == steps {
            record(&mut run, t, &state, &evals, lay, model.c());
        }
        if step == steps {
            break;
        }
        for j in 0..len {
            tmp[j] = state[j] + 0.5 * dt * k1[j];
        }
        engine.derivative(t + 0.5 * dt, &tmp, &mut k2)?;
        for j in 0..len {
            tmp[j] = state[j] + 0.5 * dt * k2[j];
        }
        engine.derivative(t + 0.5 * dt, &tmp, &mut k3)?;
        for j in 0..len {
            tmp[j] = state[j] + dt * k3[j];
        }
        engine.derivative(t + dt, &tmp, &mut k4)?;
        let before = state.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for j in 0..len {
            state[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if let Some(j) = state.iter().position(|v| !v.is_finite()) {
            return Err(SimError::BlowUp {
                t: t + dt,
                agent: j / lay.stride,
            });
        }
        let after = state.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if after > 1e3 * before {
            return Err(SimError::StepTooLarge { t: t + dt });
        }
    }
    Ok(run)
}
