//! Runs a manifest: protocol design, simulation and the three artifacts
//! (design dump, trajectory file, summary).

use crate::manifest::{matrix_from_rows, rows_from_matrix, InlineModel, LoadedManifest, ProtocolKind, Rows, TransformSpec};
use crate::{io_err, Error, Result};
use cohsync_core::agent::{self, AgentModel};
use cohsync_core::collab::{design_collab, CollabDesign, CollabOptions};
use cohsync_core::linalg::Matrix;
use cohsync_core::models;
use cohsync_core::noncollab::{delta_for_default_threshold, design_noncollab, NoncollabDesign, NoncollabOptions};
use cohsync_core::sim::{self, InitialGains, InitialStates, Protocol, SimConfig, SimulationRun};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Gain growth over the final tenth of the horizon below this counts as
/// flat.
pub const FLAT_TOLERANCE: f64 = 1e-2;

pub const DESIGN_FILE: &str = "design.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Command-line overrides of manifest fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, loaded: &LoadedManifest) -> Result<LoadedManifest> {
        let mut m = loaded.manifest.clone();
        if let Some(seed) = self.seed {
            m.seed = seed;
        }
        if let Some(dt) = self.dt {
            m.dt = dt;
        }
        if let Some(t_end) = self.t_end {
            m.t_end = t_end;
            m.settling_window = m.settling_window.min(t_end);
        }
        LoadedManifest::from_manifest(m, loaded.base_dir.clone())
    }
}

fn noncollab_options(loaded: &LoadedManifest) -> Result<NoncollabOptions> {
    let (transform, h1) = match &loaded.manifest.transform {
        None => (None, None),
        Some(TransformSpec::Benchmark) => (
            Some((models::example_noncollaborative_s(), Matrix::identity(2, 2))),
            Some(models::example_noncollaborative_h1()),
        ),
        Some(TransformSpec::Inline { s, t, h1 }) => (
            Some((matrix_from_rows(s, "S")?, matrix_from_rows(t, "T")?)),
            h1.as_ref().map(|h| matrix_from_rows(h, "H1")).transpose()?,
        ),
    };
    Ok(NoncollabOptions { d: None, transform, h1 })
}

/// The model and the designed protocol for a manifest.
pub fn build_protocol(loaded: &LoadedManifest) -> Result<(AgentModel, Protocol)> {
    let m = &loaded.manifest;
    let model = loaded.model()?;
    let protocol = match m.protocol {
        ProtocolKind::Noncollaborative => {
            let base = noncollab_options(loaded)?;
            let delta = match (m.delta, m.d) {
                (Some(delta), _) => delta,
                (None, Some(d)) => delta_for_default_threshold(&model, d, &base)?,
                (None, None) => unreachable!("validated"),
            };
            let opts = NoncollabOptions { d: m.d, ..base };
            Protocol::Noncollaborative(Arc::new(design_noncollab(&model, delta, &opts)?))
        }
        ProtocolKind::Collaborative => {
            let delta = match (m.delta, m.d) {
                (Some(delta), Some(d)) if 4.0 * d >= delta * delta => {
                    return Err(Error::Manifest(format!(
                        "{}: d = {d} and delta = {delta} violate 4d < delta²",
                        m.name
                    )))
                }
                (Some(delta), _) => delta,
                (None, Some(d)) => (8.0 * d).sqrt(),
                (None, None) => unreachable!("validated"),
            };
            let opts = CollabOptions { d: m.d, eta: m.eta };
            Protocol::Collaborative(Arc::new(design_collab(&model, delta, &opts)?))
        }
    };
    Ok((model, protocol))
}

pub fn sim_config(loaded: &LoadedManifest, model: AgentModel, protocol: Protocol) -> Result<SimConfig> {
    let m = &loaded.manifest;
    let mut cfg = SimConfig::new(model, loaded.graph()?, protocol);
    cfg.disturbance = m.disturbance.to_disturbance();
    cfg.dt = m.dt;
    cfg.t_end = m.t_end;
    cfg.record_stride = m.record_stride;
    cfg.initial = match &m.initial_states {
        Some(rows) => InitialStates::Explicit(rows.clone()),
        None => InitialStates::UniformBox { seed: m.seed },
    };
    cfg.initial_gains = InitialGains {
        rho: m.initial_rho,
        alpha: m.initial_alpha,
    };
    cfg.parallel = true;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct NoncollabDump {
    pub s: Rows,
    pub t: Rows,
    pub a_tilde: Rows,
    pub b_tilde: Rows,
    pub h1: Rows,
    pub p: Rows,
    pub gain: Rows,
    pub rho_kernel: Rows,
    pub delta_1: f64,
    pub delta_bar: f64,
    pub output_map_norm: f64,
    pub d_upper_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollabDump {
    pub q: Rows,
    pub eta: f64,
    pub epsilon: f64,
    /// `P_α` at `α = 1`.
    pub p_alpha_1: Rows,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignDump {
    pub name: String,
    pub protocol: ProtocolKind,
    pub model: InlineModel,
    /// `[re, im]` pairs.
    pub invariant_zeros: Vec<[f64; 2]>,
    pub delta: f64,
    pub d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noncollaborative: Option<NoncollabDump>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collaborative: Option<CollabDump>,
}

fn noncollab_dump(d: &NoncollabDesign) -> NoncollabDump {
    NoncollabDump {
        s: rows_from_matrix(&d.transform.s),
        t: rows_from_matrix(&d.transform.t),
        a_tilde: rows_from_matrix(&d.transform.a_tilde),
        b_tilde: rows_from_matrix(&d.transform.b_tilde),
        h1: rows_from_matrix(&d.h1),
        p: rows_from_matrix(&d.p),
        gain: rows_from_matrix(&d.gain),
        rho_kernel: rows_from_matrix(&d.rho_kernel),
        delta_1: d.delta_1,
        delta_bar: d.delta_bar,
        output_map_norm: d.output_map_norm,
        d_upper_bound: d.d_upper_bound(),
    }
}

fn collab_dump(d: &CollabDesign) -> Result<CollabDump> {
    Ok(CollabDump {
        q: rows_from_matrix(&d.q),
        eta: d.eta,
        epsilon: d.epsilon,
        p_alpha_1: rows_from_matrix(&*d.p_alpha.get(0)?),
    })
}

pub fn design_dump(name: &str, model: &AgentModel, protocol: &Protocol) -> Result<DesignDump> {
    let zeros = agent::invariant_zeros(model)?;
    let (kind, delta, d, nc, c) = match protocol {
        Protocol::Noncollaborative(p) => (ProtocolKind::Noncollaborative, p.delta, p.d, Some(noncollab_dump(p)), None),
        Protocol::Collaborative(p) => (ProtocolKind::Collaborative, p.delta, p.d, None, Some(collab_dump(p)?)),
    };
    Ok(DesignDump {
        name: name.into(),
        protocol: kind,
        model: InlineModel::from_model(model),
        invariant_zeros: zeros.iter().map(|z| [z.re, z.im]).collect(),
        delta,
        d,
        noncollaborative: nc,
        collaborative: c,
    })
}

/// Writes the trajectory as CSV: one row per (sample, agent), numbers with
/// 17 significant digits.
pub fn write_trajectory<W: Write>(run: &SimulationRun, mut out: W) -> std::io::Result<()> {
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((1..=run.output_dim).map(|k| format!("y{k}")));
    header.push("coherency_norm".into());
    header.push("coherency_proxy".into());
    if run.collaborative {
        header.push("exchange_proxy".into());
    }
    header.push("rho".into());
    if run.collaborative {
        header.push("alpha".into());
    }
    header.extend((1..=run.input_dim).map(|k| format!("u{k}")));
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for s in 0..run.sample_count() {
        for (a, tr) in run.agents.iter().enumerate() {
            line.clear();
            use std::fmt::Write as _;
            write!(line, "{:.16e},{}", run.times[s], tr.label).unwrap();
            for v in run.y_at(a, s) {
                write!(line, ",{v:.16e}").unwrap();
            }
            write!(line, ",{:.16e},{:.16e}", tr.zeta_norm[s], tr.proxy[s]).unwrap();
            if run.collaborative {
                write!(line, ",{:.16e}", tr.exchange_proxy[s]).unwrap();
            }
            write!(line, ",{:.16e}", tr.rho[s]).unwrap();
            if run.collaborative {
                write!(line, ",{:.16e}", tr.alpha[s]).unwrap();
            }
            for v in run.u_at(a, s) {
                write!(line, ",{v:.16e}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub label: usize,
    /// First time after which the coherency proxy stays at or below the
    /// threshold.
    pub settling_time: Option<f64>,
    pub max_proxy_after_settling: Option<f64>,
    pub max_coherency_norm_after_settling: Option<f64>,
    /// Same for the exchanged-signal proxy (collaborative runs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exchange_settling_time: Option<Option<f64>>,
    pub final_rho: f64,
    pub rho_increase_final_tenth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_increase_final_tenth: Option<f64>,
    pub gains_nondecreasing: bool,
    /// Gains grew by less than [`FLAT_TOLERANCE`] over the final tenth.
    pub gains_flat: bool,
    /// Settled (both proxies for collaborative runs) with nondecreasing
    /// gains.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub protocol: ProtocolKind,
    pub agents: usize,
    pub dt: f64,
    pub t_end: f64,
    pub samples: usize,
    pub d: f64,
    /// Threshold the proxies are compared against (`2d`).
    pub threshold: f64,
    pub settling_window: f64,
    pub all_settled: bool,
    pub all_flat: bool,
    pub pass: bool,
    pub per_agent: Vec<AgentSummary>,
}

fn max_from(values: &[f64], from: usize) -> f64 {
    values[from..].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn nondecreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

/// Settling of every agent's proxies against `2d` and gain flatness over
/// the final tenth of the horizon.
pub fn summarize(name: &str, run: &SimulationRun, d: f64, window: f64, kind: ProtocolKind, dt: f64) -> Result<Summary> {
    let threshold = 2.0 * d;
    let n = run.sample_count();
    let tenth = run.sample_index_at(0.9 * run.t_end());
    let mut per_agent = Vec::with_capacity(run.agents.len());
    for tr in &run.agents {
        let settle = sim::detect_settling(&run.times, &tr.proxy, threshold, window)?;
        let from = settle.map(|t| run.sample_index_at(t));
        let exchange = if run.collaborative {
            Some(sim::detect_settling(&run.times, &tr.exchange_proxy, threshold, window)?)
        } else {
            None
        };
        let rho_inc = tr.rho[n - 1] - tr.rho[tenth];
        let alpha_inc = run.collaborative.then(|| tr.alpha[n - 1] - tr.alpha[tenth]);
        let gains_nondecreasing = nondecreasing(&tr.rho) && (!run.collaborative || nondecreasing(&tr.alpha));
        let gains_flat = rho_inc < FLAT_TOLERANCE && alpha_inc.is_none_or(|a| a < FLAT_TOLERANCE);
        let settled = settle.is_some() && exchange.is_none_or(|e| e.is_some());
        per_agent.push(AgentSummary {
            label: tr.label,
            settling_time: settle,
            max_proxy_after_settling: from.map(|k| max_from(&tr.proxy, k)),
            max_coherency_norm_after_settling: from.map(|k| max_from(&tr.zeta_norm, k)),
            exchange_settling_time: exchange,
            final_rho: tr.rho[n - 1],
            rho_increase_final_tenth: rho_inc,
            final_alpha: run.collaborative.then(|| tr.alpha[n - 1]),
            alpha_increase_final_tenth: alpha_inc,
            gains_nondecreasing,
            gains_flat,
            pass: settled && gains_nondecreasing,
        });
    }
    let all_settled = per_agent
        .iter()
        .all(|a| a.settling_time.is_some() && a.exchange_settling_time.is_none_or(|e| e.is_some()));
    let all_flat = per_agent.iter().all(|a| a.gains_flat);
    Ok(Summary {
        name: name.into(),
        protocol: kind,
        agents: run.agents.len(),
        dt,
        t_end: run.t_end(),
        samples: n,
        d,
        threshold,
        settling_window: window,
        all_settled,
        all_flat,
        pass: per_agent.iter().all(|a| a.pass),
        per_agent,
    })
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub design: DesignDump,
    pub run: SimulationRun,
    pub summary: Summary,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(path.to_path_buf(), e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Designs, simulates and writes `design.json`, `trajectory.csv` and
/// `summary.json` into `out_root/<name>/`.
pub fn run_experiment(loaded: &LoadedManifest, out_root: &Path) -> Result<ExperimentOutcome> {
    let m = &loaded.manifest;
    let (model, protocol) = build_protocol(loaded)?;
    let design = design_dump(&m.name, &model, &protocol)?;
    let d = protocol.threshold();
    let cfg = sim_config(loaded, model, protocol)?;
    let run = sim::simulate(&cfg)?;
    let summary = summarize(&m.name, &run, d, m.settling_window, m.protocol, m.dt)?;

    let dir = out_root.join(&m.name);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join(DESIGN_FILE), &design)?;
    let traj = dir.join(TRAJECTORY_FILE);
    let file = File::create(&traj).map_err(io_err(&traj))?;
    write_trajectory(&run, BufWriter::new(file)).map_err(io_err(&traj))?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentOutcome { dir, design, run, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{BuiltinModel, DisturbanceSpec, GraphSpec, Manifest, ModelSpec};

    fn manifest(protocol: ProtocolKind) -> Manifest {
        let (model, transform) = match protocol {
            ProtocolKind::Noncollaborative => (BuiltinModel::NoncollaborativeBenchmark, Some(TransformSpec::Benchmark)),
            ProtocolKind::Collaborative => (BuiltinModel::CollaborativeBenchmark, None),
        };
        Manifest {
            name: "unit".into(),
            model: ModelSpec::Builtin(model),
            transform,
            graph: GraphSpec::Vicsek { generation: 1, directed: true },
            protocol,
            delta: None,
            d: Some(0.5),
            eta: None,
            disturbance: DisturbanceSpec::Chirp,
            dt: 1e-2,
            t_end: 2.0,
            seed: 3,
            record_stride: 5,
            initial_states: None,
            initial_rho: 0.0,
            initial_alpha: 0.0,
            settling_window: 1.0,
            output_dir: None,
        }
    }

    #[test]
    fn noncollab_design_matches_requested_threshold() {
        let loaded = LoadedManifest::from_manifest(manifest(ProtocolKind::Noncollaborative), PathBuf::new()).unwrap();
        let (_, protocol) = build_protocol(&loaded).unwrap();
        assert_eq!(protocol.threshold(), 0.5);
        let Protocol::Noncollaborative(d) = protocol else { panic!() };
        assert!(d.d < d.d_upper_bound());
    }

    #[test]
    fn collab_threshold_consistency() {
        let mut m = manifest(ProtocolKind::Collaborative);
        m.delta = Some(1.0);
        let loaded = LoadedManifest::from_manifest(m.clone(), PathBuf::new()).unwrap();
        assert!(matches!(build_protocol(&loaded), Err(Error::Manifest(_))));
        m.delta = None;
        let loaded = LoadedManifest::from_manifest(m, PathBuf::new()).unwrap();
        let (_, protocol) = build_protocol(&loaded).unwrap();
        assert_eq!(protocol.threshold(), 0.5);
    }

    #[test]
    fn trajectory_layout() {
        for kind in [ProtocolKind::Noncollaborative, ProtocolKind::Collaborative] {
            let loaded = LoadedManifest::from_manifest(manifest(kind), PathBuf::new()).unwrap();
            let (model, protocol) = build_protocol(&loaded).unwrap();
            let run = sim::simulate(&sim_config(&loaded, model, protocol).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_trajectory(&run, &mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            let mut lines = text.lines();
            let header = lines.next().unwrap();
            let expected = match kind {
                ProtocolKind::Noncollaborative => "t,agent,y1,y2,coherency_norm,coherency_proxy,rho,u1",
                ProtocolKind::Collaborative => "t,agent,y1,coherency_norm,coherency_proxy,exchange_proxy,rho,alpha,u1",
            };
            assert_eq!(header, expected);
            assert_eq!(lines.clone().count(), run.sample_count() * 5);
            let cols = expected.split(',').count();
            let first: Vec<&str> = lines.next().unwrap().split(',').collect();
            assert_eq!(first.len(), cols);
            assert_eq!(first[1], "1");
            // 17 significant digits survive a round trip.
            let y: f64 = first[2].parse().unwrap();
            assert_eq!(y, run.y_at(0, 0)[0]);
        }
    }

    #[test]
    fn non_minimum_phase_model_names_the_assumption() {
        let mut m = manifest(ProtocolKind::Noncollaborative);
        m.transform = None;
        m.model = ModelSpec::Inline(InlineModel {
            a: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            b: vec![vec![1.0], vec![1.0]],
            c: vec![vec![1.0, 1.0]],
            e: vec![vec![1.0], vec![1.0]],
        });
        let loaded = LoadedManifest::from_manifest(m, PathBuf::new()).unwrap();
        let err = build_protocol(&loaded).unwrap_err();
        assert!(err.to_string().contains("minimum-phase"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
