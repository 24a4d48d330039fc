//! Numerical property checks for the lemmas the stability arguments rely
//! on: H-weights of strongly connected graphs, monotonicity of the `Q_ρ`
//! quadratic form, and the α-asymptotics of `P_α`.
//!
//! Every check returns a [`CheckReport`]; [`run_suite`] bundles them into a
//! reproducible [`SuiteReport`].

use crate::agent::{self, AgentError, AgentModel};
use crate::collab::{alpha_grid_value, design_collab, CollabError, CollabOptions};
use crate::graph::{self, DirectedGraph, GraphError, HWeights};
use crate::linalg::{self, LinalgError, Matrix};
use crate::models;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Relative step of the central differences in [`verify_qrho_monotone`].
pub const FD_RELATIVE_STEP: f64 = 1e-6;
/// A finite-difference derivative above this counts as an increase.
pub const FD_TOLERANCE: f64 = 1e-8;
/// Grid indices (`α = 1.05ᵏ`, about 7.6e-3 to 1.7e4) for the PSD-order
/// checks on the design cache. Far beyond this range the increments of
/// `αP_α` fall below the rounding noise of the Riccati solves.
pub const DESIGN_GRID_INDICES: std::ops::RangeInclusive<i32> = -100..=200;
/// Largest acceptable sandwich constant in [`verify_palpha_scaling`].
pub const SANDWICH_BOUND: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("rho must be positive, got {value} at index {index}")]
    NonPositiveRho { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("scaling check needs an observable (C, A)")]
    Unobservable,
    #[error("need at least two alpha samples spanning three decades")]
    AlphaRange,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Collab(#[from] CollabError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

/// Outcome of one check. `worst` is the extreme value of the checked
/// statistic and `limit` the bound it is compared against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub parameters: BTreeMap<String, String>,
    pub statistic: String,
    pub worst: f64,
    pub limit: f64,
    pub violations: usize,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(name: &str, statistic: &str, limit: f64) -> Self {
        Self {
            name: name.into(),
            parameters: BTreeMap::new(),
            statistic: statistic.into(),
            worst: f64::NAN,
            limit,
            violations: 0,
            pass: false,
            notes: Vec::new(),
        }
    }

    fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.into(), value.to_string());
        self
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        let mut r = Self::new(name, "error", f64::NAN);
        r.violations = 1;
        r.notes.push(err.to_string());
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn find(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One block per check; stable across runs with the same seed.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seed = {}", self.seed).unwrap();
        for c in &self.checks {
            writeln!(out).unwrap();
            writeln!(out, "[{}]", c.name).unwrap();
            for (k, v) in &c.parameters {
                writeln!(out, "{k} = {v}").unwrap();
            }
            writeln!(out, "statistic = {}", c.statistic).unwrap();
            writeln!(out, "worst = {:.6e}", c.worst).unwrap();
            writeln!(out, "limit = {:.6e}", c.limit).unwrap();
            writeln!(out, "violations = {}", c.violations).unwrap();
            for note in &c.notes {
                writeln!(out, "note = {note}").unwrap();
            }
            writeln!(out, "result = {}", if c.pass { "PASS" } else { "FAIL" }).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "overall = {}", if self.passed() { "PASS" } else { "FAIL" }).unwrap();
        out
    }
}

/// `Q_ρ = Hρ⁻¹ − μ g gᵀ` with `g_i = h_i/ρ_i` and `μ = 1/Σ g_i`, i.e.
/// `ρ⁻¹(Hρ − μ h hᵀ)ρ⁻¹`.
#[derive(Debug, Clone)]
pub struct QRhoProbe {
    pub laplacian: Matrix,
    pub weights: HWeights,
    pub rho: Vec<f64>,
    pub q_rho: Matrix,
}

fn q_rho_matrix(h: &[f64], rho: &[f64]) -> Matrix {
    let g: Vec<f64> = h.iter().zip(rho).map(|(h, r)| h / r).collect();
    let mu = 1.0 / g.iter().sum::<f64>();
    let n = g.len();
    Matrix::from_fn(n, n, |i, j| {
        let diag = if i == j { g[i] } else { 0.0 };
        diag - mu * g[i] * g[j]
    })
}

pub fn build_q_rho(l: &Matrix, weights: &HWeights, rho: &[f64]) -> Result<QRhoProbe> {
    if rho.len() != weights.h.len() || l.nrows() != rho.len() {
        return Err(VerifyError::Dimensions(format!(
            "laplacian {}, h {}, rho {}",
            l.nrows(),
            weights.h.len(),
            rho.len()
        )));
    }
    if let Some((index, &value)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        return Err(VerifyError::NonPositiveRho { index, value });
    }
    Ok(QRhoProbe {
        laplacian: l.clone(),
        weights: weights.clone(),
        rho: rho.to_vec(),
        q_rho: q_rho_matrix(&weights.h, rho),
    })
}

impl QRhoProbe {
    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        quadratic(&self.q_rho, z)
    }

    /// Smallest eigenvalue of `Q_ρ` restricted to the complement of the
    /// all-ones vector.
    pub fn restricted_min_eigenvalue(&self) -> Result<f64> {
        let u = graph::ones_complement_basis(self.rho.len());
        Ok(linalg::min_eigenvalue_sym(&linalg::symmetrize(
            &(u.transpose() * &self.q_rho * &u),
        ))?)
    }
}

fn quadratic(m: &Matrix, z: &[f64]) -> f64 {
    let n = z.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += z[i] * m[(i, j)] * z[j];
        }
    }
    acc
}

/// Central-difference derivative of `zᵀQ_ρz` in each `ρ_i` for each sample
/// `z`; a derivative above [`FD_TOLERANCE`] is a violation.
pub fn verify_qrho_monotone(probe: &QRhoProbe, samples: &[Vec<f64>]) -> CheckReport {
    let n = probe.rho.len();
    let mut report = CheckReport::new("qrho-monotone", "max d(zᵀQ_ρz)/dρ_i", FD_TOLERANCE)
        .param("nodes", n)
        .param("samples", samples.len())
        .param("relative_step", FD_RELATIVE_STEP);
    let mut worst = f64::NEG_INFINITY;
    for z in samples {
        for i in 0..n {
            let h = FD_RELATIVE_STEP * probe.rho[i];
            let mut up = probe.rho.clone();
            up[i] += h;
            let mut down = probe.rho.clone();
            down[i] -= h;
            let deriv = (quadratic(&q_rho_matrix(&probe.weights.h, &up), z)
                - quadratic(&q_rho_matrix(&probe.weights.h, &down), z))
                / (2.0 * h);
            worst = worst.max(deriv);
            if deriv > FD_TOLERANCE {
                report.violations += 1;
            }
        }
    }
    report.worst = worst;
    report.pass = report.violations == 0;
    report
}

/// `Q_ρ ⪰ 0` on the complement of the all-ones vector, for each probe.
pub fn verify_qrho_nonnegative(probes: &[QRhoProbe]) -> CheckReport {
    let mut report = CheckReport::new("qrho-nonnegative", "min restricted eigenvalue of Q_ρ", -1e-10)
        .param("probes", probes.len());
    let mut worst = f64::INFINITY;
    for p in probes {
        match p.restricted_min_eigenvalue() {
            Ok(v) => {
                worst = worst.min(v);
                if v < -1e-10 {
                    report.violations += 1;
                }
            }
            Err(e) => {
                report.violations += 1;
                report.notes.push(e.to_string());
            }
        }
    }
    report.worst = worst;
    report.pass = report.violations == 0;
    report
}

/// Random strongly connected digraphs with `N` drawn from `3..=12`.
pub fn seeded_strongly_connected(seed: u64, count: usize) -> Vec<DirectedGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(3..=12);
            graph::random_strongly_connected(n, 0.25, &mut rng).expect("n >= 2")
        })
        .collect()
}

/// `HL + LᵀH − 2γLᵀL ⪰ 0` (margin ≥ −1e-10) and `hᵀL = 0` on each graph.
pub fn verify_h_weights(graphs: &[DirectedGraph]) -> CheckReport {
    let mut report = CheckReport::new("h-weights", "min eigenvalue of HL + LᵀH − 2γLᵀL", -1e-10)
        .param("graphs", graphs.len());
    let mut worst = f64::INFINITY;
    for g in graphs {
        let l = g.laplacian();
        let outcome = graph::compute_h_weights(&l).and_then(|w| {
            let margin = graph::h_weights_margin(&l, &w)?;
            let h = linalg::Vector::from_column_slice(&w.h);
            let left = (l.transpose() * h).amax();
            Ok((margin, left, w.gamma))
        });
        match outcome {
            Ok((margin, left, gamma)) => {
                worst = worst.min(margin);
                if margin < -1e-10 || left > 1e-10 || !(gamma > 0.0) {
                    report.violations += 1;
                }
            }
            Err(e) => {
                report.violations += 1;
                report.notes.push(e.to_string());
            }
        }
    }
    report.worst = worst;
    report.pass = report.violations == 0;
    report
}

/// Coordinates in which the `P_α` sandwich is diagonal: `x = Γ_s x̃` with
/// `x̃ = (x₀, x₁)`, `x₀` of size `n0` and `x₁` an `n1`-long chain of
/// `m`-blocks.
#[derive(Debug, Clone)]
pub struct ScalingStructure {
    pub gamma_s: Matrix,
    pub n0: usize,
    pub n1: usize,
    pub m: usize,
}

impl ScalingStructure {
    /// Relative degree one: the output transform splits the state into zero
    /// dynamics and outputs, so `Γ_s = S⁻¹` and `n1 = 1`.
    pub fn relative_degree_one(model: &AgentModel) -> Result<Self> {
        let tr = agent::build_output_transform(model)?;
        Ok(Self {
            gamma_s: tr.s_inv.clone(),
            n0: tr.hidden_dim,
            n1: 1,
            m: tr.input_dim,
        })
    }

    /// Pure chain of `n1` integrator blocks of width `m` in its own
    /// coordinates.
    pub fn integrator_chain(n1: usize, m: usize) -> Self {
        Self {
            gamma_s: Matrix::identity(n1 * m, n1 * m),
            n0: 0,
            n1,
            m,
        }
    }

    /// Diagonal of `D_α`: `α^{-1/2}` on `x₀`, `β^{2k-1}` on the `k`-th chain
    /// block with `β = α^{-1/(4 n1)}`.
    pub fn scaling(&self, alpha: f64) -> Vec<f64> {
        let beta1 = alpha.powf(-1.0 / (4.0 * self.n1 as f64));
        let mut d = vec![alpha.powf(-0.5); self.n0];
        for k in 1..=self.n1 {
            d.extend(std::iter::repeat_n(beta1.powi(2 * k as i32 - 1), self.m));
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSample {
    pub alpha: f64,
    pub norm: f64,
    pub sandwich_min: f64,
    pub sandwich_max: f64,
}

/// Raw output of the `P_α` scaling check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingAnalysis {
    pub samples: Vec<ScalingSample>,
    /// Least-squares slope of `log‖P_α‖` against `log α`.
    pub slope: f64,
    /// Smallest `c` with every sandwiched matrix in `[1/c, c]`.
    pub sandwich_constant: f64,
    pub norms_decreasing: bool,
}

/// `P_α` on `alphas` (solved independently), the log-log slope of its norm
/// and the spread of `D_α⁻¹ Γ_sᵀ P_α Γ_s D_α⁻¹`.
pub fn analyze_palpha_scaling(
    model: &AgentModel,
    epsilon: f64,
    structure: &ScalingStructure,
    alphas: &[f64],
) -> Result<ScalingAnalysis> {
    let lo = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if alphas.len() < 2 || !(hi / lo >= 1e3) || !(lo > 0.0) {
        return Err(VerifyError::AlphaRange);
    }
    if !linalg::is_observable(model.c(), model.a())? {
        return Err(VerifyError::Unobservable);
    }
    let n = model.state_dim();
    if structure.gamma_s.nrows() != n || structure.n0 + structure.n1 * structure.m != n {
        return Err(VerifyError::Dimensions(format!(
            "structure {} + {}·{} against state dimension {n}",
            structure.n0, structure.n1, structure.m
        )));
    }
    let a = model.a() + Matrix::identity(n, n) * epsilon;
    let w = model.c().transpose() * model.c();
    let mut samples = Vec::with_capacity(alphas.len());
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &alpha in &sorted {
        let p = linalg::solve_care(&a, model.b(), &w, alpha)?;
        let d = structure.scaling(alpha);
        let inner = structure.gamma_s.transpose() * &p * &structure.gamma_s;
        let sandwich = Matrix::from_fn(n, n, |i, j| inner[(i, j)] / (d[i] * d[j]));
        let sym = linalg::symmetrize(&sandwich);
        samples.push(ScalingSample {
            alpha,
            norm: linalg::operator_norm_2(&p)?,
            sandwich_min: linalg::min_eigenvalue_sym(&sym)?,
            sandwich_max: linalg::max_eigenvalue_sym(&sym)?,
        });
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.alpha.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.norm.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sandwich_constant = samples
        .iter()
        .map(|s| s.sandwich_max.max(1.0 / s.sandwich_min))
        .map(|c| if c.is_finite() && c > 0.0 { c } else { f64::INFINITY })
        .fold(1.0, f64::max);
    let norms_decreasing = samples.windows(2).all(|w| w[1].norm < w[0].norm);
    Ok(ScalingAnalysis {
        samples,
        slope: sxy / sxx,
        sandwich_constant,
        norms_decreasing,
    })
}

/// `count` geometrically spaced values from `lo` to `hi`.
pub fn geometric_samples(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Sandwich constant within [`SANDWICH_BOUND`] and `‖P_α‖` strictly
/// decreasing; when `expected_slope` is given, the fitted slope must be
/// within `slope_tolerance` of it.
pub fn verify_palpha_scaling(
    name: &str,
    model: &AgentModel,
    epsilon: f64,
    structure: &ScalingStructure,
    alphas: &[f64],
    expected_slope: Option<(f64, f64)>,
) -> CheckReport {
    let lo = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let analysis = match analyze_palpha_scaling(model, epsilon, structure, alphas) {
        Ok(a) => a,
        Err(e) => return CheckReport::failed(name, e),
    };
    let mut report = CheckReport::new(name, "sandwich constant c", SANDWICH_BOUND)
        .param("alpha_min", format!("{lo:e}"))
        .param("alpha_max", format!("{hi:e}"))
        .param("samples", alphas.len())
        .param("epsilon", epsilon)
        .param("n0", structure.n0)
        .param("n1", structure.n1)
        .param("fitted_slope", format!("{:.6}", analysis.slope));
    report.worst = analysis.sandwich_constant;
    if analysis.sandwich_constant > SANDWICH_BOUND {
        report.violations += 1;
    }
    if !analysis.norms_decreasing {
        report.violations += 1;
        report.notes.push("norm of P_alpha is not strictly decreasing".into());
    }
    if let Some((slope, tol)) = expected_slope {
        report = report.param("expected_slope", format!("{slope} ± {tol}"));
        if (analysis.slope - slope).abs() > tol {
            report.violations += 1;
            report.notes.push(format!("fitted slope {:.6} outside {slope} ± {tol}", analysis.slope));
        }
    }
    report.pass = report.violations == 0;
    report
}

/// For consecutive `(α, P)` pairs sorted by α, the smallest eigenvalue of
/// `f(α₂, P₂) − f(α₁, P₁)`.
fn consecutive_psd_margins(samples: &[(f64, Matrix)], f: impl Fn(f64, &Matrix) -> Matrix) -> Result<Vec<f64>> {
    let mut sorted: Vec<&(f64, Matrix)> = samples.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .windows(2)
        .map(|w| {
            let diff = f(w[1].0, &w[1].1) - f(w[0].0, &w[0].1);
            Ok(linalg::min_eigenvalue_sym(&linalg::symmetrize(&diff))?)
        })
        .collect()
}

fn psd_order_report(name: &str, statistic: &str, margins: Result<Vec<f64>>, pairs: usize) -> CheckReport {
    let margins = match margins {
        Ok(m) => m,
        Err(e) => return CheckReport::failed(name, e),
    };
    let mut report = CheckReport::new(name, statistic, -1e-9).param("pairs", pairs.saturating_sub(1));
    report.worst = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    report.violations = margins.iter().filter(|&&m| m < -1e-9).count();
    report.pass = report.violations == 0;
    report
}

/// `α₂P_{α₂} − α₁P_{α₁} ⪰ −1e-9·I` for consecutive samples.
pub fn verify_alpha_p_alpha_monotone(name: &str, samples: &[(f64, Matrix)]) -> CheckReport {
    psd_order_report(
        name,
        "min eigenvalue of α₂P₂ − α₁P₁",
        consecutive_psd_margins(samples, |alpha, p| p * alpha),
        samples.len(),
    )
}

/// `P_{α₁} − P_{α₂} ⪰ −1e-9·I` for consecutive samples.
pub fn verify_p_alpha_monotone(name: &str, samples: &[(f64, Matrix)]) -> CheckReport {
    psd_order_report(
        name,
        "min eigenvalue of P₁ − P₂",
        consecutive_psd_margins(samples, |_, p| -p.clone()),
        samples.len(),
    )
}

/// Bartels–Stewart against the Kronecker solve on random Hurwitz `A`
/// (n ≤ 6) with random positive semidefinite `W`.
pub fn verify_lyapunov_routes(seed: u64, cases: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("lyapunov-routes", "max |X_schur − X_kron|", 1e-9).param("cases", cases);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let raw = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = linalg::eigenvalues(&raw).map(|s| s.max_real_part).unwrap_or(0.0);
        let a = raw - Matrix::identity(n, n) * (shift + rng.random_range(0.2..1.0));
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let w = &g * g.transpose();
        match (linalg::solve_lyapunov(&a, &w), linalg::solve_lyapunov_kronecker(&a, &w)) {
            (Ok(x1), Ok(x2)) => {
                let diff = linalg::max_abs(&(x1 - x2));
                worst = worst.max(diff);
                if diff > 1e-9 {
                    report.violations += 1;
                }
            }
            (r1, r2) => {
                report.violations += 1;
                report.notes.push(format!("{:?} / {:?}", r1.err(), r2.err()));
            }
        }
    }
    report.worst = worst;
    report.pass = report.violations == 0;
    report
}

/// Random model with `m = p` and relative degree one (CB generically
/// invertible), entries uniform in `[−1, 1]`.
pub fn random_relative_degree_one(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Result<AgentModel> {
    let mut gen = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let (a, b, c, e) = (gen(n, n), gen(n, m), gen(m, n), gen(n, 1));
    Ok(AgentModel::new(a, b, c, e)?)
}

/// Random single-input single-output minimum-phase model with relative
/// degree one: stable zero dynamics built in block form, then hidden by a
/// random similarity.
pub fn random_minimum_phase(rng: &mut ChaCha8Rng, n: usize) -> Result<AgentModel> {
    let mut gen = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let z = n - 1;
    let a11 = gen(z, z) * 0.3 - Matrix::identity(z, z);
    let mut a = gen(n, n);
    a.view_mut((0, 0), (z, z)).copy_from(&a11);
    let mut b = Matrix::zeros(n, 1);
    b[(z, 0)] = 1.0;
    let mut c = Matrix::zeros(1, n);
    c[(0, z)] = 1.0;
    let t = gen(n, n) + Matrix::identity(n, n) * 2.0;
    let t_inv = t.clone().try_inverse().ok_or(LinalgError::Singular)?;
    let model = AgentModel::new(&t_inv * a * &t, &t_inv * &b, c * &t, t_inv * b)?;
    Ok(model)
}

/// Invariant zeros from the system pencil against the unobservable modes
/// of the transformed `(C₁, A₁₁)` pair.
pub fn verify_zero_routes(seed: u64, cases: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report =
        CheckReport::new("zero-routes", "matched distance between zero sets", 1e-8).param("cases", cases);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=2.min(n - 1));
        let outcome = random_relative_degree_one(&mut rng, n, m).and_then(|model| {
            let pencil = agent::invariant_zeros(&model)?;
            let blocks = agent::build_output_transform_unchecked(&model)?.zeros_from_blocks()?;
            Ok(linalg::spectral_distance(&pencil, &blocks))
        });
        match outcome {
            Ok(dist) => {
                worst = worst.max(dist);
                if !(dist <= 1e-8) {
                    report.violations += 1;
                }
            }
            Err(e) => {
                report.violations += 1;
                report.notes.push(e.to_string());
            }
        }
    }
    report.worst = worst;
    report.pass = report.violations == 0;
    report
}

/// `P` printed for the four-state benchmark, solved in the hand-picked
/// coordinates, must have a small Riccati residual. `corruption` scales
/// every entry by `1 + corruption` first (negative control).
pub fn verify_care_residual(corruption: f64) -> CheckReport {
    let model = models::example_noncollaborative();
    let name = "care-residual";
    let outcome = (|| -> Result<f64> {
        let tr = agent::build_output_transform_with(
            &model,
            models::example_noncollaborative_s(),
            Matrix::identity(2, 2),
        )?;
        let n = model.state_dim();
        let w = Matrix::identity(n, n);
        let p = linalg::solve_care(&tr.a_tilde, &tr.b_tilde, &w, 1.0)? * (1.0 + corruption);
        let res = linalg::care_residual(&tr.a_tilde, &tr.b_tilde, &w, 1.0, &p);
        Ok(linalg::max_abs(&res))
    })();
    match outcome {
        Ok(r) => {
            let mut report = CheckReport::new(name, "max |Riccati residual|", 1e-8).param("corruption", corruption);
            report.worst = r;
            report.violations = usize::from(r > 1e-8);
            report.pass = report.violations == 0;
            report
        }
        Err(e) => CheckReport::failed(name, e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Relative perturbation injected into the Riccati solution checked by
    /// `care-residual`; zero for a normal run.
    pub corrupt_p: f64,
}

fn random_unit_box(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn qrho_probe_for(g: &DirectedGraph, rng: &mut ChaCha8Rng) -> Result<QRhoProbe> {
    let l = g.laplacian();
    let w = graph::compute_h_weights(&l)?;
    let rho: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(0.5..5.0)).collect();
    build_q_rho(&l, &w, &rho)
}

fn qrho_check(name: &str, g: &DirectedGraph, rng: &mut ChaCha8Rng) -> (CheckReport, Option<QRhoProbe>) {
    match qrho_probe_for(g, rng) {
        Ok(probe) => {
            let mut samples = random_unit_box(rng, g.node_count(), 99);
            samples.push(vec![1.0; g.node_count()]);
            let mut report = verify_qrho_monotone(&probe, &samples);
            report.name = name.into();
            (report, Some(probe))
        }
        Err(e) => (CheckReport::failed(name, e), None),
    }
}

/// Every check in this module with seeds derived from `options.seed`.
pub fn run_suite(options: &SuiteOptions) -> SuiteReport {
    let seed = options.seed;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    checks.push(verify_care_residual(options.corrupt_p));
    checks.push(verify_lyapunov_routes(seed.wrapping_add(1), 50));
    checks.push(verify_zero_routes(seed.wrapping_add(2), 20));

    let graphs = seeded_strongly_connected(seed.wrapping_add(3), 20);
    checks.push(verify_h_weights(&graphs).param("seed", seed.wrapping_add(3)));

    let cycle = graph::generate_circulant(3, &[1], true).expect("valid cycle");
    let (r3, p3) = qrho_check("qrho-monotone-n3", &cycle, &mut rng);
    checks.push(r3);
    let random10 = graph::random_strongly_connected(10, 0.2, &mut rng).expect("n >= 2");
    let (r10, p10) = qrho_check("qrho-monotone-n10", &random10, &mut rng);
    checks.push(r10);
    let mut probes: Vec<QRhoProbe> = p3.into_iter().chain(p10).collect();
    for g in &graphs {
        if let Ok(p) = qrho_probe_for(g, &mut rng) {
            probes.push(p);
        }
    }
    checks.push(verify_qrho_nonnegative(&probes));

    let integ = models::double_integrator();
    checks.push(verify_palpha_scaling(
        "palpha-scaling-double-integrator",
        &integ,
        0.0,
        &ScalingStructure::integrator_chain(2, 1),
        &geometric_samples(1e2, 1e6, 41),
        Some((-0.25, 0.02)),
    ));

    let collab_model = models::example_collaborative();
    match design_collab(&collab_model, 2.0, &CollabOptions::default()) {
        Ok(design) => {
            match ScalingStructure::relative_degree_one(&collab_model) {
                Ok(structure) => checks.push(verify_palpha_scaling(
                    "palpha-scaling-collaborative-model",
                    &collab_model,
                    design.epsilon,
                    &structure,
                    &geometric_samples(1e1, 1e6, 26),
                    None,
                )),
                Err(e) => checks.push(CheckReport::failed("palpha-scaling-collaborative-model", e)),
            }
            let grid: Result<Vec<(f64, Matrix)>> = DESIGN_GRID_INDICES
                .map(|k| Ok((alpha_grid_value(k), (*design.p_alpha.get(k)?).clone())))
                .collect::<std::result::Result<_, CollabError>>()
                .map_err(VerifyError::from);
            match grid {
                Ok(grid) => {
                    checks.push(
                        verify_p_alpha_monotone("palpha-monotone-design-grid", &grid).param("grid", "1.05^k, k = -100..=200"),
                    );
                    checks.push(
                        verify_alpha_p_alpha_monotone("alpha-palpha-monotone-design-grid", &grid)
                            .param("grid", "1.05^k, k = -100..=200"),
                    );
                }
                Err(e) => checks.push(CheckReport::failed("palpha-monotone-design-grid", e)),
            }
        }
        Err(e) => checks.push(CheckReport::failed("palpha-scaling-collaborative-model", e)),
    }

    let mp_seed = seed.wrapping_add(4);
    let mut mp_rng = ChaCha8Rng::seed_from_u64(mp_seed);
    let mp = random_minimum_phase(&mut mp_rng, 3).and_then(|model| {
        let zeros = agent::invariant_zeros(&model)?;
        let eps = crate::collab::choose_epsilon(&model, &zeros)?;
        geometric_samples(1e-2, 1e4, 31)
            .into_iter()
            .map(|alpha| Ok((alpha, crate::collab::solve_p_alpha(&model, eps, alpha)?)))
            .collect::<Result<Vec<_>>>()
    });
    checks.push(match mp {
        Ok(samples) => verify_alpha_p_alpha_monotone("alpha-palpha-monotone-random-model", &samples).param("seed", mp_seed),
        Err(e) => CheckReport::failed("alpha-palpha-monotone-random-model", e),
    });

    SuiteReport { seed, checks }
}
