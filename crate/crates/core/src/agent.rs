//! Agent model `ẋ = Ax + Bu + Ew, y = Cx`, structural checks on it, and the
//! state/output coordinate change that splits the state into a part hidden
//! from the input and a part measured directly.

use crate::linalg::{self, LinalgError, Matrix, RANK_TOLERANCE};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("model dimensions are inconsistent: {0}")]
    Dimensions(String),
    #[error("B does not have full column rank")]
    InputRankDeficient,
    #[error("C does not have full row rank")]
    OutputRankDeficient,
    #[error("assumption violated: {0}")]
    Assumption(&'static str),
    #[error("supplied transform is invalid: {0}")]
    InvalidTransform(String),
    #[error("system matrix pencil is degenerate (normal rank {normal_rank} < {size})")]
    DegeneratePencil { normal_rank: usize, size: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    e: Matrix,
}

impl AgentModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, e: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(AgentError::Dimensions(format!("A is {}x{}", n, a.ncols())));
        }
        if n == 0 {
            return Err(AgentError::Dimensions("state dimension is zero".into()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(AgentError::Dimensions(format!(
                "B is {}x{}, expected {n} rows and at least one column",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(AgentError::Dimensions(format!(
                "C is {}x{}, expected {n} columns and at least one row",
                c.nrows(),
                c.ncols()
            )));
        }
        if e.nrows() != n {
            return Err(AgentError::Dimensions(format!(
                "E has {} rows, expected {n}",
                e.nrows()
            )));
        }
        for m in [&a, &b, &c, &e] {
            linalg::ensure_finite(m)?;
        }
        if linalg::rank(&b) < b.ncols() {
            return Err(AgentError::InputRankDeficient);
        }
        if linalg::rank(&c) < c.nrows() {
            return Err(AgentError::OutputRankDeficient);
        }
        Ok(Self { a, b, c, e })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn e(&self) -> &Matrix {
        &self.e
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }

    /// The same system in coordinates `x̄ = Sx`, `ȳ = Ty`.
    pub fn transformed(&self, s: &Matrix, t: &Matrix) -> Result<AgentModel> {
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| AgentError::InvalidTransform("S is singular".into()))?;
        AgentModel::new(
            s * &self.a * &s_inv,
            s * &self.b,
            t * &self.c * s_inv,
            s * &self.e,
        )
    }

    /// Rosenbrock system matrix `[A − sI, B; C, 0]` at a complex point.
    pub fn system_matrix_at(&self, s: Complex<f64>) -> DMatrix<Complex<f64>> {
        let (n, m, p) = (self.state_dim(), self.input_dim(), self.output_dim());
        DMatrix::from_fn(n + p, n + m, |i, j| {
            let v = if i < n && j < n {
                self.a[(i, j)]
            } else if i < n {
                self.b[(i, j - n)]
            } else if j < n {
                self.c[(i - n, j)]
            } else {
                0.0
            };
            let mut z = Complex::new(v, 0.0);
            if i == j && i < n {
                z -= s;
            }
            z
        })
    }

    fn system_matrix_norm(&self) -> f64 {
        let (n, m, p) = (self.state_dim(), self.input_dim(), self.output_dim());
        let mut big = Matrix::zeros(n + p, n + m);
        big.view_mut((0, 0), (n, n)).copy_from(&self.a);
        big.view_mut((0, n), (n, m)).copy_from(&self.b);
        big.view_mut((n, 0), (p, n)).copy_from(&self.c);
        linalg::operator_norm_2(&big).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub stabilizable: bool,
    pub detectable: bool,
    pub observable: bool,
    pub image_e_in_image_b: bool,
    pub relative_degree_one: bool,
    pub left_invertible: bool,
    pub right_invertible: bool,
    pub minimum_phase: bool,
    /// `None` when the check does not apply (non-square or non-invertible
    /// systems).
    pub uniform_rank: Option<bool>,
    pub invariant_zeros: Vec<Complex<f64>>,
    /// Some singular value used in a rank decision sat close to the threshold.
    pub rank_ambiguous: bool,
}

impl AssumptionReport {
    /// Conditions required by the noncollaborative design, as
    /// `(name, holds)` pairs.
    pub fn noncollaborative_conditions(&self) -> [(&'static str, bool); 6] {
        [
            ("stabilizable", self.stabilizable),
            ("detectable", self.detectable),
            ("relative-degree-one", self.relative_degree_one),
            ("left-invertible", self.left_invertible),
            ("minimum-phase", self.minimum_phase),
            ("image-E-in-image-B", self.image_e_in_image_b),
        ]
    }

    /// Conditions required by the collaborative design.
    pub fn collaborative_conditions(&self) -> [(&'static str, bool); 4] {
        [
            ("stabilizable", self.stabilizable),
            ("observable", self.observable),
            ("right-invertible", self.right_invertible),
            ("minimum-phase", self.minimum_phase),
        ]
    }
}

/// Sample points used to evaluate the normal rank of the system matrix.
fn generic_points(seed: u64) -> Vec<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|_| Complex::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect()
}

const PENCIL_SEED: u64 = 0x005e_ed0f_2e05;

/// Rank of the system matrix at a generic point.
pub fn normal_rank(model: &AgentModel) -> (usize, bool) {
    let mut best = (0, false);
    for s in generic_points(PENCIL_SEED) {
        let r = linalg::complex_rank_with_gap(&model.system_matrix_at(s));
        if r.0 > best.0 {
            best = r;
        }
    }
    best
}

/// Invariant zeros: finite points where the system matrix drops below its
/// normal rank.
///
/// The pencil is squared down with a seeded random combination when
/// `m ≠ p`; candidate zeros of the square pencil are then kept only if the
/// original system matrix loses rank there.
pub fn invariant_zeros(model: &AgentModel) -> Result<Vec<Complex<f64>>> {
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    let (nrank, _) = normal_rank(model);
    let k = m.min(p);
    if nrank < n + k {
        return Err(AgentError::DegeneratePencil {
            normal_rank: nrank,
            size: n + k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PENCIL_SEED);
    let (b_sq, c_sq) = if p > m {
        let mix = Matrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        (model.b.clone(), mix * &model.c)
    } else if m > p {
        let mix = Matrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
        (&model.b * mix, model.c.clone())
    } else {
        (model.b.clone(), model.c.clone())
    };
    let size = n + k;
    let mut sys = Matrix::zeros(size, size);
    sys.view_mut((0, 0), (n, n)).copy_from(&model.a);
    sys.view_mut((0, n), (n, k)).copy_from(&b_sq);
    sys.view_mut((n, 0), (k, n)).copy_from(&c_sq);
    let mut e = Matrix::zeros(size, size);
    e.view_mut((0, 0), (n, n)).fill_with_identity();

    let scale = 1.0 + model.system_matrix_norm();
    // Shift-invert at two different shifts. Finite zeros come out the same
    // from both; approximations of infinite eigenvalues sitting in Jordan
    // chains land at large, shift-dependent values and fail to match.
    let mut candidate_sets = Vec::new();
    for attempt in 0..8 {
        let s0 = 0.5377 - 0.931 * attempt as f64;
        if let Some(c) = shifted_pencil_candidates(&sys, &e, s0, n)? {
            candidate_sets.push(c);
            if candidate_sets.len() == 2 {
                break;
            }
        }
    }
    if candidate_sets.len() < 2 {
        return Err(AgentError::DegeneratePencil {
            normal_rank: nrank,
            size,
        });
    }
    let mut others = candidate_sets.pop().expect("two sets");
    let first = candidate_sets.pop().expect("two sets");
    let mut zeros = Vec::new();
    for z in first {
        if z.norm() > 1e8 * scale {
            continue;
        }
        let nearest = others
            .iter()
            .enumerate()
            .map(|(k, w)| (k, (z - w).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((k, dist)) = nearest else { continue };
        if dist > 1e-6 * (1.0 + z.norm()) {
            continue;
        }
        others.swap_remove(k);
        let refined = refine_pencil_eigenvalue(&sys, &e, z);
        // Artifacts of infinite eigenvalues drift under refinement.
        if (refined - z).norm() > 1e-6 * (1.0 + z.norm()) {
            continue;
        }
        let (r, _) = linalg::complex_rank_with_gap(&model.system_matrix_at(refined));
        if r < nrank {
            zeros.push(refined);
        }
    }
    zeros.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(zeros)
}

/// Newton steps on `λ ↦ uᴴ(M − λE)v` with `u`, `v` the singular vectors of
/// the smallest singular value of `M − λE`.
fn refine_pencil_eigenvalue(m: &Matrix, e: &Matrix, mut z: Complex<f64>) -> Complex<f64> {
    let n = m.nrows();
    let mc = m.map(|v| Complex::new(v, 0.0));
    let ec = e.map(|v| Complex::new(v, 0.0));
    for _ in 0..3 {
        let pencil = &mc - &ec * z;
        let svd = pencil.clone().svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            break;
        };
        let k = (0..n)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("nonempty");
        let u_k = u.column(k);
        let v_k = v_t.row(k).adjoint();
        let num = (u_k.adjoint() * &pencil * &v_k)[(0, 0)];
        let den = (u_k.adjoint() * &ec * &v_k)[(0, 0)];
        if den.norm() < 1e-14 {
            break;
        }
        let step = num / den;
        z += step;
        if step.norm() <= 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    z
}

/// Finite generalized eigenvalue candidates `s₀ + 1/μ` of `(M, E)`, or
/// `None` if `s₀` is too close to one.
///
/// `E = diag(I_n, 0)`, so the nonzero spectrum of `(M − s₀E)⁻¹E` equals
/// that of the leading `n × n` block of `(M − s₀E)⁻¹`. Working with the
/// block shortens every infinite Jordan chain by one, which turns the
/// order-one infinite zeros of relative-degree-one systems into semisimple
/// zero eigenvalues that rounding only moves by O(ε).
fn shifted_pencil_candidates(m: &Matrix, e: &Matrix, s0: f64, n: usize) -> Result<Option<Vec<Complex<f64>>>> {
    let shifted = m - e * s0;
    let sv = shifted.clone().singular_values();
    if sv.min() <= 1e-8 * sv.max() {
        return Ok(None);
    }
    let Some(inv) = shifted.try_inverse() else {
        return Ok(None);
    };
    debug_assert!(e.view((0, 0), (n, n)) == Matrix::identity(n, n));
    let g = inv.view((0, 0), (n, n)).into_owned();
    let g_norm = linalg::operator_norm_2(&g)?;
    Ok(Some(
        linalg::eigenvalues(&g)?
            .eigenvalues
            .into_iter()
            .filter(|mu| mu.norm() > 1e-10 * g_norm)
            .map(|mu| Complex::new(s0, 0.0) + mu.inv())
            .collect(),
    ))
}

pub fn check_assumptions(model: &AgentModel) -> Result<AssumptionReport> {
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    let stabilizable = linalg::is_stabilizable(&model.a, &model.b)?;
    let detectable = linalg::is_detectable(&model.c, &model.a)?;
    let observable = linalg::is_observable(&model.c, &model.a)?;

    let image_e_in_image_b = if model.disturbance_dim() == 0 {
        true
    } else {
        let proj = &model.b * linalg::pseudo_inverse(&model.b) * &model.e;
        linalg::max_abs(&(proj - &model.e)) < 1e-10 * linalg::max_abs(&model.e).max(1.0)
    };

    let cb = &model.c * &model.b;
    let (cb_rank, cb_amb) = linalg::rank_with_gap(&cb);
    let relative_degree_one = cb_rank == m;

    let (nrank, pencil_amb) = normal_rank(model);
    let left_invertible = nrank == n + m;
    let right_invertible = nrank == n + p;
    let invariant_zeros = invariant_zeros(model).unwrap_or_default();
    let minimum_phase = (left_invertible || right_invertible)
        && invariant_zeros.iter().all(|z| z.re < 0.0);

    let uniform_rank = if m == p && left_invertible {
        Some(first_markov_parameter_invertible(model))
    } else {
        None
    };

    Ok(AssumptionReport {
        stabilizable,
        detectable,
        observable,
        image_e_in_image_b,
        relative_degree_one,
        left_invertible,
        right_invertible,
        minimum_phase,
        uniform_rank,
        invariant_zeros,
        rank_ambiguous: cb_amb || pencil_amb,
    })
}

/// For square systems: all infinite zeros have the same order exactly when
/// the first nonzero Markov parameter `CAᵏB` is invertible.
fn first_markov_parameter_invertible(model: &AgentModel) -> bool {
    let m = model.input_dim();
    let mut ak_b = model.b.clone();
    let scale = linalg::max_abs(&model.a).max(1.0);
    for _ in 0..model.state_dim() {
        let markov = &model.c * &ak_b;
        let r = linalg::rank(&markov);
        let size = linalg::max_abs(&markov);
        if r > 0 && size > RANK_TOLERANCE * linalg::max_abs(&ak_b).max(1e-300) {
            return r == m;
        }
        ak_b = &model.a * ak_b / scale;
    }
    false
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputTransform {
    pub s: Matrix,
    pub s_inv: Matrix,
    pub t: Matrix,
    /// Size `n − m` of the block not reached directly by the input.
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// `SAS⁻¹`.
    pub a_tilde: Matrix,
    /// `SB = [0; B2]`.
    pub b_tilde: Matrix,
    /// `TCS⁻¹ = [C1 0; 0 I]`.
    pub c_tilde: Matrix,
    /// `SE`.
    pub e_tilde: Matrix,
    pub a11: Matrix,
    pub a12: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub b2: Matrix,
    pub c1: Matrix,
    pub e2: Matrix,
}

const TRANSFORM_TOL: f64 = 1e-10;

/// Builds `S` and `T` from the model: the first `n − m` rows of `S` are an
/// orthonormal basis of the left annihilator of `B`, the last `m` rows are
/// `T₂C` with `T₂ = (CB)⁺`, and `T = [T₁; T₂]` with `T₁` spanning the left
/// annihilator of `CB`.
pub fn build_output_transform(model: &AgentModel) -> Result<OutputTransform> {
    let (s, t) = default_transform_matrices(model)?;
    build_output_transform_with(model, s, t)
}

/// Same construction as [`build_output_transform`] without requiring
/// `(C1, A11)` to be detectable, so non-minimum-phase models can be
/// brought into block form too.
pub fn build_output_transform_unchecked(model: &AgentModel) -> Result<OutputTransform> {
    let (s, t) = default_transform_matrices(model)?;
    assemble_transform(model, s, t)
}

fn default_transform_matrices(model: &AgentModel) -> Result<(Matrix, Matrix)> {
    let report = check_assumptions(model)?;
    if !report.relative_degree_one {
        return Err(AgentError::Assumption("relative-degree-one"));
    }
    if !report.left_invertible {
        return Err(AgentError::Assumption("left-invertible"));
    }
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    let cb = &model.c * &model.b;
    let t2 = linalg::pseudo_inverse(&cb);
    let t1 = linalg::null_space(&cb.transpose()).transpose();
    let s1 = linalg::null_space(&model.b.transpose()).transpose();
    let mut s = Matrix::zeros(n, n);
    s.view_mut((0, 0), (n - m, n)).copy_from(&s1);
    s.view_mut((n - m, 0), (m, n)).copy_from(&(&t2 * &model.c));
    let mut t = Matrix::zeros(p, p);
    t.view_mut((0, 0), (p - m, p)).copy_from(&t1);
    t.view_mut((p - m, 0), (m, p)).copy_from(&t2);
    Ok((s, t))
}

/// Validates caller-supplied `S`, `T` and extracts the blocks.
pub fn build_output_transform_with(
    model: &AgentModel,
    s: Matrix,
    t: Matrix,
) -> Result<OutputTransform> {
    let transform = assemble_transform(model, s, t)?;
    if transform.hidden_dim > 0 && !linalg::is_detectable(&transform.c1, &transform.a11)? {
        return Err(AgentError::Assumption("minimum-phase"));
    }
    Ok(transform)
}

fn assemble_transform(model: &AgentModel, s: Matrix, t: Matrix) -> Result<OutputTransform> {
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    if s.shape() != (n, n) || t.shape() != (p, p) {
        return Err(AgentError::InvalidTransform(format!(
            "S is {}x{}, T is {}x{}; expected {n}x{n} and {p}x{p}",
            s.nrows(),
            s.ncols(),
            t.nrows(),
            t.ncols()
        )));
    }
    if p < m {
        return Err(AgentError::Assumption("relative-degree-one"));
    }
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| AgentError::InvalidTransform("S is singular".into()))?;
    if t.clone().try_inverse().is_none() {
        return Err(AgentError::InvalidTransform("T is singular".into()));
    }
    let k = n - m;
    let a_tilde = &s * &model.a * &s_inv;
    let b_tilde = &s * &model.b;
    let c_tilde = &t * &model.c * &s_inv;
    let e_tilde = &s * &model.e;

    let tol = |m: &Matrix| TRANSFORM_TOL * linalg::max_abs(m).max(1.0);
    let b_top = b_tilde.rows(0, k).into_owned();
    if linalg::max_abs(&b_top) > tol(&b_tilde) {
        return Err(AgentError::InvalidTransform("SB is not of the form [0; B2]".into()));
    }
    let b2 = b_tilde.rows(k, m).into_owned();
    if linalg::rank(&b2) < m {
        return Err(AgentError::InvalidTransform("B2 is singular".into()));
    }
    let c1 = c_tilde.view((0, 0), (p - m, k)).into_owned();
    let mut expected = Matrix::zeros(p, n);
    expected.view_mut((0, 0), (p - m, k)).copy_from(&c1);
    expected
        .view_mut((p - m, k), (m, m))
        .fill_with_identity();
    if linalg::max_abs(&(&c_tilde - &expected)) > tol(&c_tilde) {
        return Err(AgentError::InvalidTransform(
            "TCS⁻¹ is not of the form [C1 0; 0 I]".into(),
        ));
    }
    Ok(OutputTransform {
        a11: a_tilde.view((0, 0), (k, k)).into_owned(),
        a12: a_tilde.view((0, k), (k, m)).into_owned(),
        a21: a_tilde.view((k, 0), (m, k)).into_owned(),
        a22: a_tilde.view((k, k), (m, m)).into_owned(),
        b2,
        c1,
        e2: e_tilde.rows(k, m).into_owned(),
        s,
        s_inv,
        t,
        hidden_dim: k,
        input_dim: m,
        a_tilde,
        b_tilde,
        c_tilde,
        e_tilde,
    })
}

impl OutputTransform {
    /// Zeros of the relative-degree-one system read off in transformed
    /// coordinates: the unobservable modes of `(C1, A11)`, which is all of
    /// `eig(A11)` when `C1` is empty.
    pub fn zeros_from_blocks(&self) -> Result<Vec<Complex<f64>>> {
        if self.hidden_dim == 0 {
            return Ok(Vec::new());
        }
        if self.c1.nrows() == 0 {
            return Ok(linalg::eigenvalues(&self.a11)?.eigenvalues);
        }
        Ok(linalg::unobservable_modes(&self.c1, &self.a11)?)
    }

    /// `S⁻¹ÃS`, which should give back the original `A`.
    pub fn reassembled_a(&self) -> Matrix {
        &self.s_inv * &self.a_tilde * &self.s
    }

    /// `ζ ↦ (ζ₁, ζ₂) = Tζ`.
    pub fn split_output(&self, zeta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.t.nrows();
        let split = p - self.input_dim;
        let mut out = vec![0.0; p];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..p).map(|j| self.t[(i, j)] * zeta[j]).sum();
        }
        let second = out.split_off(split);
        (out, second)
    }
}

/// `H1 = −Y C1ᵀ` with `Y` the stabilizing solution of
/// `A11 Y + Y A11ᵀ − Y C1ᵀC1 Y + I = 0`, making `A11 + H1 C1` Hurwitz.
pub fn design_observer_gain(a11: &Matrix, c1: &Matrix) -> Result<Matrix> {
    let k = a11.nrows();
    if c1.ncols() != k {
        return Err(AgentError::Dimensions(format!(
            "C1 has {} columns, A11 is {k}x{k}",
            c1.ncols()
        )));
    }
    if c1.nrows() == 0 {
        if !linalg::eigenvalues(a11)?.is_hurwitz {
            return Err(AgentError::Assumption("detectable (C1, A11)"));
        }
        return Ok(Matrix::zeros(k, 0));
    }
    if !linalg::is_detectable(c1, a11)? {
        return Err(AgentError::Assumption("detectable (C1, A11)"));
    }
    let y = linalg::solve_care(
        &a11.transpose(),
        &c1.transpose(),
        &Matrix::identity(k, k),
        1.0,
    )?;
    let h1 = -(y * c1.transpose());
    if !linalg::eigenvalues(&(a11 + &h1 * c1))?.is_hurwitz {
        return Err(AgentError::Linalg(LinalgError::LostStability));
    }
    Ok(h1)
}
