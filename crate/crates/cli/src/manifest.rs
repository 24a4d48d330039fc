//! Experiment manifests: a JSON description of one simulation run.

use crate::{Error, Result};
use cohsync_core::agent::AgentModel;
use cohsync_core::graph::{self, DirectedGraph, EdgeList};
use cohsync_core::linalg::Matrix;
use cohsync_core::models;
use cohsync_core::sim::Disturbance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Row-major nested arrays.
pub type Rows = Vec<Vec<f64>>;

pub fn matrix_from_rows(rows: &Rows, what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Manifest(format!("{what}: rows have different lengths")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows_from_matrix(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub e: Rows,
}

impl InlineModel {
    pub fn to_model(&self) -> Result<AgentModel> {
        Ok(AgentModel::new(
            matrix_from_rows(&self.a, "A")?,
            matrix_from_rows(&self.b, "B")?,
            matrix_from_rows(&self.c, "C")?,
            matrix_from_rows(&self.e, "E")?,
        )?)
    }

    pub fn from_model(model: &AgentModel) -> Self {
        Self {
            a: rows_from_matrix(model.a()),
            b: rows_from_matrix(model.b()),
            c: rows_from_matrix(model.c()),
            e: rows_from_matrix(model.e()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinModel {
    NoncollaborativeBenchmark,
    CollaborativeBenchmark,
    DoubleIntegrator,
}

impl BuiltinModel {
    pub fn model(self) -> AgentModel {
        match self {
            BuiltinModel::NoncollaborativeBenchmark => models::example_noncollaborative(),
            BuiltinModel::CollaborativeBenchmark => models::example_collaborative(),
            BuiltinModel::DoubleIntegrator => models::double_integrator(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    Builtin(BuiltinModel),
    Inline(InlineModel),
    /// Path to a JSON file holding an inline model, relative to the
    /// manifest.
    File(PathBuf),
}

/// State transform and observer gain for the noncollaborative design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformSpec {
    /// The hand-picked `S`, `T = I` and `H1` of the four-state benchmark.
    Benchmark,
    Inline {
        s: Rows,
        t: Rows,
        #[serde(default)]
        h1: Option<Rows>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Vicsek {
        generation: u32,
        #[serde(default = "yes")]
        directed: bool,
    },
    Circulant {
        nodes: usize,
        offsets: Vec<usize>,
        #[serde(default = "yes")]
        directed: bool,
    },
    Disconnected {
        sizes: Vec<usize>,
        seed: u64,
    },
    RandomStronglyConnected {
        nodes: usize,
        extra_edge_probability: f64,
        seed: u64,
    },
    /// Path to an edge-list JSON file, relative to the manifest.
    EdgeList(PathBuf),
}

fn yes() -> bool {
    true
}

impl GraphSpec {
    pub fn build(&self, base: &Path) -> Result<DirectedGraph> {
        Ok(match self {
            GraphSpec::Vicsek { generation, directed } => graph::generate_vicsek_fractal(*generation, *directed)?,
            GraphSpec::Circulant { nodes, offsets, directed } => graph::generate_circulant(*nodes, offsets, *directed)?,
            GraphSpec::Disconnected { sizes, seed } => graph::generate_disconnected_composite(sizes, *seed)?,
            GraphSpec::RandomStronglyConnected { nodes, extra_edge_probability, seed } => {
                if !(0.0..=1.0).contains(extra_edge_probability) {
                    return Err(Error::Manifest(format!(
                        "extra_edge_probability {extra_edge_probability} outside [0, 1]"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                graph::random_strongly_connected(*nodes, *extra_edge_probability, &mut rng)?
            }
            GraphSpec::EdgeList(path) => {
                let list: EdgeList = read_json(&resolve(base, path))?;
                DirectedGraph::from_edge_list(&list)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Noncollaborative,
    Collaborative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceSpec {
    Zero,
    Chirp,
    Sawtooth,
    /// `[time, value]` knots.
    Table(Vec<(f64, f64)>),
}

impl DisturbanceSpec {
    pub fn to_disturbance(&self) -> Disturbance {
        match self {
            DisturbanceSpec::Zero => Disturbance::Zero,
            DisturbanceSpec::Chirp => Disturbance::Chirp,
            DisturbanceSpec::Sawtooth => Disturbance::Sawtooth,
            DisturbanceSpec::Table(knots) => Disturbance::Table(knots.clone()),
        }
    }
}

fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    30.0
}
fn default_stride() -> usize {
    1
}
fn default_window() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub transform: Option<TransformSpec>,
    pub graph: GraphSpec,
    pub protocol: ProtocolKind,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub d: Option<f64>,
    /// Shift of the observer Riccati equation (collaborative only).
    #[serde(default)]
    pub eta: Option<f64>,
    pub disturbance: DisturbanceSpec,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Seed of the uniform `[−1, 1]ⁿ` initial agent states.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Explicit initial agent states; overrides `seed`.
    #[serde(default)]
    pub initial_states: Option<Rows>,
    #[serde(default)]
    pub initial_rho: f64,
    #[serde(default)]
    pub initial_alpha: f64,
    /// Trailing window of the settling test, seconds.
    #[serde(default = "default_window")]
    pub settling_window: f64,
    /// Output directory, relative to the manifest; the CLI flag and the
    /// environment variable take precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A manifest together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { manifest, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn from_manifest(manifest: Manifest, base_dir: PathBuf) -> Result<Self> {
        let loaded = Self { manifest, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Structural checks that need no design work: positive numbers,
    /// referenced files present, protocol-specific fields.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let bad = |msg: String| Err(Error::Manifest(format!("{}: {msg}", m.name)));
        if m.name.is_empty() || m.name.contains(['/', '\\']) {
            return bad("name must be non-empty and contain no path separators".into());
        }
        if m.delta.is_none() && m.d.is_none() {
            return bad("one of delta or d is required".into());
        }
        for (label, v) in [("delta", m.delta), ("d", m.d), ("eta", m.eta)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{label} must be positive, got {v}"));
                }
            }
        }
        if !(m.dt > 0.0 && m.dt.is_finite()) || !(m.t_end >= m.dt && m.t_end.is_finite()) {
            return bad(format!("need 0 < dt <= t_end, got dt = {}, t_end = {}", m.dt, m.t_end));
        }
        if m.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        if !(m.settling_window >= 0.0) || m.settling_window > m.t_end {
            return bad(format!("settling_window {} outside [0, t_end]", m.settling_window));
        }
        if !(m.initial_rho >= 0.0) || !(m.initial_alpha >= 0.0) {
            return bad("initial gains must be nonnegative".into());
        }
        match m.protocol {
            ProtocolKind::Noncollaborative => {
                if m.eta.is_some() {
                    return bad("eta only applies to the collaborative protocol".into());
                }
                if m.initial_alpha != 0.0 {
                    return bad("initial_alpha only applies to the collaborative protocol".into());
                }
            }
            ProtocolKind::Collaborative => {
                if m.transform.is_some() {
                    return bad("transform only applies to the noncollaborative protocol".into());
                }
            }
        }
        if let ModelSpec::File(p) = &m.model {
            self.require_file(p)?;
        }
        if let GraphSpec::EdgeList(p) = &m.graph {
            self.require_file(p)?;
        }
        if let DisturbanceSpec::Table(knots) = &m.disturbance {
            Disturbance::Table(knots.clone())
                .validate()
                .map_err(|e| Error::Manifest(format!("{}: {e}", m.name)))?;
        }
        Ok(())
    }

    fn require_file(&self, p: &Path) -> Result<()> {
        let full = resolve(&self.base_dir, p);
        if !full.is_file() {
            return Err(Error::Manifest(format!(
                "{}: referenced file {} does not exist",
                self.manifest.name,
                full.display()
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<AgentModel> {
        match &self.manifest.model {
            ModelSpec::Builtin(b) => Ok(b.model()),
            ModelSpec::Inline(m) => m.to_model(),
            ModelSpec::File(p) => read_json::<InlineModel>(&resolve(&self.base_dir, p))?.to_model(),
        }
    }

    pub fn graph(&self) -> Result<DirectedGraph> {
        self.manifest.graph.build(&self.base_dir)
    }
}
