//! Dense real linear algebra and the matrix equations used by the protocol
//! designs: spectra, Lyapunov equations, continuous-time algebraic Riccati
//! equations and a few rank/subspace helpers.
//!
//! Everything here is a pure function of its arguments.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

const SCHUR_MAX_ITER: usize = 1_000;
const SCHUR_DEFLATION_LADDER: [f64; 4] = [f64::EPSILON, 1e-14, 1e-13, 1e-12];
const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-12;
const CONTINUATION_MAX_STAGES: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("matrix is not Hurwitz (max real part {max_real_part})")]
    NotHurwitz { max_real_part: f64 },
    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("pair (C, A) is not observable")]
    NotObservable,
    #[error("no positive definite solution exists for eta = {eta}")]
    NoPositiveDefiniteSolution { eta: f64 },
    #[error("Newton iterate became indefinite (min eigenvalue {min_eigenvalue:e})")]
    IndefiniteIterate { min_eigenvalue: f64 },
    #[error("Newton iterate lost the stabilizing property")]
    LostStability,
    #[error("linear system is singular")]
    Singular,
    #[error("residual {residual:e} exceeds bound {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error("gain scale must be positive and finite, got {0}")]
    BadGainScale(f64),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_real_part: f64,
    pub is_hurwitz: bool,
}

pub fn ensure_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Matrix) -> f64 {
    max_abs(&(m - m.transpose()))
}

fn ensure_symmetric(m: &Matrix, rel_tol: f64) -> Result<()> {
    let asym = asymmetry(m);
    if asym > rel_tol * max_abs(m).max(1.0) {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

fn sort_spectrum(values: &mut [Complex<f64>]) {
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Real Schur form. The deflation threshold is relaxed step by step when the
/// QR iteration stalls, which happens on highly defective matrices such as
/// Laplacians of directed trees.
fn real_schur(m: &Matrix) -> Result<nalgebra::linalg::Schur<f64, nalgebra::Dyn>> {
    for eps in SCHUR_DEFLATION_LADDER {
        if let Some(s) = m.clone().try_schur(eps, SCHUR_MAX_ITER) {
            return Ok(s);
        }
    }
    Err(LinalgError::NoConvergence {
        what: "Schur decomposition",
        iterations: SCHUR_MAX_ITER,
    })
}

/// All eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &Matrix) -> Result<SpectrumReport> {
    let n = ensure_square(m)?;
    ensure_finite(m)?;
    if n == 0 {
        return Ok(SpectrumReport {
            eigenvalues: Vec::new(),
            max_real_part: f64::NEG_INFINITY,
            is_hurwitz: true,
        });
    }
    let schur = real_schur(m)?;
    let mut eigenvalues: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    sort_spectrum(&mut eigenvalues);
    let max_real_part = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectrumReport {
        eigenvalues,
        max_real_part,
        is_hurwitz: max_real_part < 0.0,
    })
}

/// Largest singular value.
pub fn operator_norm_2(m: &Matrix) -> Result<f64> {
    ensure_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.singular_values().max())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &Matrix) -> Result<f64> {
    let n = ensure_square(m)?;
    ensure_finite(m)?;
    ensure_symmetric(m, 1e-12)?;
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(symmetrize(m).symmetric_eigenvalues().min())
}

pub fn max_eigenvalue_sym(m: &Matrix) -> Result<f64> {
    let n = ensure_square(m)?;
    ensure_finite(m)?;
    ensure_symmetric(m, 1e-12)?;
    if n == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(symmetrize(m).symmetric_eigenvalues().max())
}

/// Full SVD of an arbitrary matrix, padding with zeros so that `u` and `v_t`
/// are square orthogonal matrices. Returns `(u, sigma, v_t)` with `sigma`
/// sorted in decreasing order and of length `min(rows, cols)`.
fn full_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (r, c) = m.shape();
    let k = r.max(c);
    let mut padded = Matrix::zeros(k, k);
    padded.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = padded.svd(true, true);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u_raw = svd.u.expect("u requested");
    let v_raw = svd.v_t.expect("v_t requested");
    let mut u = Matrix::zeros(k, k);
    let mut v_t = Matrix::zeros(k, k);
    let mut sigma = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_raw.column(src));
        v_t.set_row(dst, &v_raw.row(src));
        sigma.push(svd.singular_values[src]);
    }
    sigma.truncate(r.min(c));
    (u.rows(0, r).into_owned(), sigma, v_t.columns(0, c).into_owned())
}

/// Numerical rank with the crate-wide relative threshold.
pub fn rank(m: &Matrix) -> usize {
    rank_with_gap(m).0
}

/// Rank plus a flag raised when some singular value lies within three
/// decades of the rank threshold on either side.
pub fn rank_with_gap(m: &Matrix) -> (usize, bool) {
    if m.is_empty() {
        return (0, false);
    }
    let sv = m.singular_values();
    rank_from_singular_values(sv.as_slice())
}

fn rank_from_singular_values(sv: &[f64]) -> (usize, bool) {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return (0, false);
    }
    let rank = sv.iter().filter(|&&s| s > RANK_TOLERANCE * smax).count();
    let ambiguous = sv
        .iter()
        .any(|&s| s >= 1e-12 * smax && s < 1e-6 * smax);
    (rank, ambiguous)
}

pub fn complex_rank_with_gap(m: &DMatrix<Complex<f64>>) -> (usize, bool) {
    if m.is_empty() {
        return (0, false);
    }
    let sv = m.clone().singular_values();
    rank_from_singular_values(sv.as_slice())
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &Matrix) -> Matrix {
    let (_, c) = m.shape();
    if c == 0 {
        return Matrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return Matrix::identity(c, c);
    }
    let (_, sigma, v_t) = full_svd(m);
    let smax = sigma.first().cloned().unwrap_or(0.0);
    let r = sigma
        .iter()
        .filter(|&&s| smax > 0.0 && s > RANK_TOLERANCE * smax)
        .count();
    v_t.rows(r, c - r).transpose()
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn range_space(m: &Matrix) -> Matrix {
    let (r, _) = m.shape();
    if m.is_empty() {
        return Matrix::zeros(r, 0);
    }
    let (u, sigma, _) = full_svd(m);
    let smax = sigma.first().cloned().unwrap_or(0.0);
    let k = sigma
        .iter()
        .filter(|&&s| smax > 0.0 && s > RANK_TOLERANCE * smax)
        .count();
    u.columns(0, k).into_owned()
}

/// Moore-Penrose pseudo-inverse with the crate rank threshold.
pub fn pseudo_inverse(m: &Matrix) -> Matrix {
    let (r, c) = m.shape();
    if m.is_empty() {
        return Matrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(RANK_TOLERANCE * smax)
        .unwrap_or_else(|_| Matrix::zeros(c, r))
}

fn hautus_drops_rank(pencil: &DMatrix<Complex<f64>>, full: usize) -> bool {
    complex_rank_with_gap(pencil).0 < full
}

fn shifted_complex(a: &Matrix, lambda: Complex<f64>) -> DMatrix<Complex<f64>> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let v = Complex::new(a[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    })
}

/// Eigenvalues of `a` at which `[A - λI, B]` loses rank.
pub fn uncontrollable_modes(a: &Matrix, b: &Matrix) -> Result<Vec<Complex<f64>>> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "B has {} rows, A is {n}x{n}",
            b.nrows()
        )));
    }
    let spec = eigenvalues(a)?;
    let mut modes = Vec::new();
    for &lambda in &spec.eigenvalues {
        let shifted = shifted_complex(a, lambda);
        let mut pencil = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        pencil.view_mut((0, 0), (n, n)).copy_from(&shifted);
        for i in 0..n {
            for j in 0..b.ncols() {
                pencil[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        if hautus_drops_rank(&pencil, n) {
            modes.push(lambda);
        }
    }
    Ok(modes)
}

/// Eigenvalues of `a` at which `[A - λI; C]` loses rank.
pub fn unobservable_modes(c: &Matrix, a: &Matrix) -> Result<Vec<Complex<f64>>> {
    uncontrollable_modes(&a.transpose(), &c.transpose())
}

pub fn is_stabilizable(a: &Matrix, b: &Matrix) -> Result<bool> {
    Ok(uncontrollable_modes(a, b)?.iter().all(|z| z.re < 0.0))
}

pub fn is_detectable(c: &Matrix, a: &Matrix) -> Result<bool> {
    Ok(unobservable_modes(c, a)?.iter().all(|z| z.re < 0.0))
}

pub fn is_observable(c: &Matrix, a: &Matrix) -> Result<bool> {
    Ok(unobservable_modes(c, a)?.is_empty())
}

/// Solves `Aᵀ X + X A + W = 0` for Hurwitz `A` with a Bartels-Stewart sweep
/// over the real Schur form of `A`.
pub fn solve_lyapunov(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = check_lyapunov_inputs(a, w)?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let (q, t) = real_schur(a)?.unpack();
    // Tᵀ Y + Y T = F with Y = Qᵀ X Q.
    let f = -(q.transpose() * w * &q);

    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let mut y = Matrix::zeros(n, n);
    for &(ri, pi) in &blocks {
        for &(cj, qj) in &blocks {
            let mut rhs = f.view((ri, cj), (pi, qj)).into_owned();
            for &(rk, pk) in &blocks {
                if rk >= ri {
                    break;
                }
                let t_ki = t.view((rk, ri), (pk, pi));
                rhs -= t_ki.transpose() * y.view((rk, cj), (pk, qj));
            }
            for &(ck, pk) in &blocks {
                if ck >= cj {
                    break;
                }
                let t_kj = t.view((ck, cj), (pk, qj));
                rhs -= y.view((ri, ck), (pi, pk)) * t_kj;
            }
            let t_ii = t.view((ri, ri), (pi, pi)).into_owned();
            let t_jj = t.view((cj, cj), (qj, qj)).into_owned();
            let block = solve_small_sylvester(&t_ii, &t_jj, &rhs)?;
            y.view_mut((ri, cj), (pi, qj)).copy_from(&block);
        }
    }
    Ok(symmetrize(&(&q * y * q.transpose())))
}

/// `T_iiᵀ Y + Y T_jj = R` for blocks of size at most 2.
fn solve_small_sylvester(t_ii: &Matrix, t_jj: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let p = t_ii.nrows();
    let q = t_jj.nrows();
    let k = Matrix::identity(q, q).kronecker(&t_ii.transpose())
        + t_jj.transpose().kronecker(&Matrix::identity(p, p));
    let b = Vector::from_column_slice(rhs.as_slice());
    let sol = k.lu().solve(&b).ok_or(LinalgError::Singular)?;
    Ok(Matrix::from_column_slice(p, q, sol.as_slice()))
}

fn check_lyapunov_inputs(a: &Matrix, w: &Matrix) -> Result<usize> {
    let n = ensure_square(a)?;
    if w.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!(
            "W is {}x{}, A is {n}x{n}",
            w.nrows(),
            w.ncols()
        )));
    }
    ensure_finite(a)?;
    ensure_finite(w)?;
    ensure_symmetric(w, 1e-10)?;
    let spec = eigenvalues(a)?;
    if !spec.is_hurwitz {
        return Err(LinalgError::NotHurwitz {
            max_real_part: spec.max_real_part,
        });
    }
    Ok(n)
}

/// Same equation as [`solve_lyapunov`], solved as the n²×n² linear system
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X) = -vec(W)`. Kept as an independent route for
/// cross-checking.
pub fn solve_lyapunov_kronecker(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = check_lyapunov_inputs(a, w)?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_column_slice(w.as_slice());
    let sol = k.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    Ok(symmetrize(&Matrix::from_column_slice(n, n, sol.as_slice())))
}

/// Residual `AᵀP + PA - g·PBBᵀP + W`.
pub fn care_residual(a: &Matrix, b: &Matrix, w: &Matrix, gain_scale: f64, p: &Matrix) -> Matrix {
    let pb = p * b;
    a.transpose() * p + p * a - (&pb * pb.transpose()) * gain_scale + w
}

fn check_care_inputs(a: &Matrix, b: &Matrix, w: &Matrix, gain_scale: f64) -> Result<usize> {
    let n = ensure_square(a)?;
    if b.nrows() != n || w.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!(
            "A is {n}x{n}, B is {}x{}, W is {}x{}",
            b.nrows(),
            b.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    ensure_finite(a)?;
    ensure_finite(b)?;
    ensure_finite(w)?;
    ensure_symmetric(w, 1e-10)?;
    if !(gain_scale > 0.0 && gain_scale.is_finite()) {
        return Err(LinalgError::BadGainScale(gain_scale));
    }
    Ok(n)
}

/// Stabilizing solution of `AᵀP + PA - g·PBBᵀP + W = 0` by Newton-Kleinman.
///
/// A stabilizing starting point is obtained by solving first for the shifted
/// matrix `A - σI` (Hurwitz for large σ) and walking σ back to zero, each
/// stage warm-started from the previous one.
pub fn solve_care(a: &Matrix, b: &Matrix, w: &Matrix, gain_scale: f64) -> Result<Matrix> {
    let n = check_care_inputs(a, b, w, gain_scale)?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if !is_stabilizable(a, b)? {
        return Err(LinalgError::NotStabilizable);
    }
    let spec = eigenvalues(a)?;
    let eye = Matrix::identity(n, n);
    let mut sigma = if spec.is_hurwitz {
        0.0
    } else {
        spec.max_real_part + 1.0
    };
    let mut p = Matrix::zeros(n, n);
    for _ in 0..CONTINUATION_MAX_STAGES {
        let shifted = a - &eye * sigma;
        p = newton_kleinman(&shifted, b, w, gain_scale, &p)?;
        if sigma == 0.0 {
            return finish_care(a, b, w, gain_scale, p);
        }
        let closed = closed_loop(&shifted, b, gain_scale, &p);
        let margin = -eigenvalues(&closed)?.max_real_part;
        if margin <= 0.0 {
            return Err(LinalgError::LostStability);
        }
        sigma = if sigma <= 0.5 * margin {
            0.0
        } else {
            sigma - 0.5 * margin
        };
    }
    Err(LinalgError::NoConvergence {
        what: "Riccati shift continuation",
        iterations: CONTINUATION_MAX_STAGES,
    })
}

/// Newton-Kleinman from a caller-supplied stabilizing guess. The guess must
/// make `A - g·BBᵀP₀` Hurwitz.
pub fn solve_care_from(
    a: &Matrix,
    b: &Matrix,
    w: &Matrix,
    gain_scale: f64,
    initial: &Matrix,
) -> Result<Matrix> {
    let n = check_care_inputs(a, b, w, gain_scale)?;
    if initial.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch("initial guess".into()));
    }
    let p = newton_kleinman(a, b, w, gain_scale, initial)?;
    finish_care(a, b, w, gain_scale, p)
}

fn closed_loop(a: &Matrix, b: &Matrix, gain_scale: f64, p: &Matrix) -> Matrix {
    a - (b * (b.transpose() * p)) * gain_scale
}

fn newton_kleinman(
    a: &Matrix,
    b: &Matrix,
    w: &Matrix,
    gain_scale: f64,
    initial: &Matrix,
) -> Result<Matrix> {
    let mut p = symmetrize(initial);
    for _ in 0..NEWTON_MAX_ITER {
        let ak = closed_loop(a, b, gain_scale, &p);
        let pb = &p * b;
        let rhs = symmetrize(&(w + (&pb * pb.transpose()) * gain_scale));
        let next = match solve_lyapunov(&ak, &rhs) {
            Ok(x) => x,
            Err(LinalgError::NotHurwitz { .. }) => return Err(LinalgError::LostStability),
            Err(e) => return Err(e),
        };
        let scale = max_abs(&next).max(1.0);
        let step = max_abs(&(&next - &p));
        p = next;
        if step < NEWTON_TOL * scale {
            return Ok(p);
        }
    }
    Err(LinalgError::NoConvergence {
        what: "Newton-Kleinman",
        iterations: NEWTON_MAX_ITER,
    })
}

fn finish_care(a: &Matrix, b: &Matrix, w: &Matrix, gain_scale: f64, p: Matrix) -> Result<Matrix> {
    let p = symmetrize(&p);
    let min_w = min_eigenvalue_sym(&symmetrize(w))?;
    if min_w >= -1e-12 * max_abs(w).max(1.0) {
        let min_p = min_eigenvalue_sym(&p)?;
        if min_p < -1e-8 * max_abs(&p).max(1.0) {
            return Err(LinalgError::IndefiniteIterate {
                min_eigenvalue: min_p,
            });
        }
    }
    let residual = max_abs(&care_residual(a, b, w, gain_scale, &p));
    let norm = operator_norm_2(&p)?;
    let bound = 1e-8 * (1.0 + norm * norm);
    if residual > bound {
        return Err(LinalgError::Residual { residual, bound });
    }
    if !eigenvalues(&closed_loop(a, b, gain_scale, &p))?.is_hurwitz {
        return Err(LinalgError::LostStability);
    }
    Ok(p)
}

/// Residual `AQ + QAᵀ - QCᵀCQ + ηQ`.
pub fn dual_care_shifted_residual(a: &Matrix, c: &Matrix, eta: f64, q: &Matrix) -> Matrix {
    let qc = q * c.transpose();
    a * q + q * a.transpose() - &qc * qc.transpose() + q * eta
}

/// Positive definite solution of `AQ + QAᵀ - QCᵀCQ + ηQ = 0`.
///
/// With `X = Q⁻¹` the equation becomes the Lyapunov equation
/// `FᵀX + XF = CᵀC` for `F = A + (η/2)I`. For observable `(C, A)` a positive
/// definite `X` exists exactly when `-F` is Hurwitz.
pub fn solve_dual_care_shifted(a: &Matrix, c: &Matrix, eta: f64) -> Result<Matrix> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "C has {} columns, A is {n}x{n}",
            c.ncols()
        )));
    }
    ensure_finite(a)?;
    ensure_finite(c)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LinalgError::NoPositiveDefiniteSolution { eta });
    }
    if !is_observable(c, a)? {
        return Err(LinalgError::NotObservable);
    }
    let neg_f = -(a + Matrix::identity(n, n) * (0.5 * eta));
    if !eigenvalues(&neg_f)?.is_hurwitz {
        return Err(LinalgError::NoPositiveDefiniteSolution { eta });
    }
    let x = solve_lyapunov(&neg_f, &(c.transpose() * c))?;
    if min_eigenvalue_sym(&x)? <= 0.0 {
        return Err(LinalgError::NoPositiveDefiniteSolution { eta });
    }
    let q = symmetrize(&x.try_inverse().ok_or(LinalgError::Singular)?);
    let residual = max_abs(&dual_care_shifted_residual(a, c, eta, &q));
    let norm = operator_norm_2(&q)?;
    let bound = 1e-8 * (1.0 + norm * norm);
    if residual > bound {
        return Err(LinalgError::Residual { residual, bound });
    }
    Ok(q)
}

/// Greedy nearest-neighbour matching distance between two multisets of
/// complex numbers. Returns infinity when the sizes differ.
pub fn spectral_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut remaining: Vec<Complex<f64>> = b.to_vec();
    let mut worst: f64 = 0.0;
    for z in a {
        let (idx, dist) = remaining
            .iter()
            .enumerate()
            .map(|(k, w)| (k, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("equal lengths");
        worst = worst.max(dist);
        remaining.swap_remove(idx);
    }
    worst
}

/// Shorthand for building a matrix from row slices.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Matrix::from_fn(r, c, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let m = random_matrix(rng, n, n);
        let shift = eigenvalues(&m).unwrap().max_real_part + rng.random_range(0.2..1.5);
        m - Matrix::identity(n, n) * shift
    }

    #[test]
    fn diagonal_spectrum() {
        let rep = eigenvalues(&from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]])).unwrap();
        assert_abs_diff_eq!(rep.eigenvalues[0].re, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rep.eigenvalues[1].re, -1.0, epsilon = 1e-14);
        assert!(rep.is_hurwitz);
    }

    #[test]
    fn rotation_generator_is_not_hurwitz() {
        let rep = eigenvalues(&from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(rep.eigenvalues[0].im, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rep.eigenvalues[1].im, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rep.max_real_part, 0.0, epsilon = 1e-14);
        assert!(!rep.is_hurwitz);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            eigenvalues(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn scalar_lyapunov() {
        let x = solve_lyapunov(&from_rows(&[&[-1.0]]), &from_rows(&[&[2.0]])).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn decoupled_lyapunov() {
        let a = from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]);
        let x = solve_lyapunov(&a, &Matrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(x[(1, 1)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(x[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let r = solve_lyapunov(&from_rows(&[&[1.0]]), &from_rows(&[&[1.0]]));
        assert!(matches!(r, Err(LinalgError::NotHurwitz { .. })));
    }

    #[test]
    fn lyapunov_handles_complex_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            let a = random_hurwitz(&mut rng, n);
            let w0 = random_matrix(&mut rng, n, n);
            let w = symmetrize(&w0);
            let x = solve_lyapunov(&a, &w).unwrap();
            let res = a.transpose() * &x + &x * &a + &w;
            assert!(max_abs(&res) <= 1e-10 * (1.0 + max_abs(&w)), "n={n}");
        }
    }

    #[test]
    fn scalar_care_roots() {
        let one = from_rows(&[&[1.0]]);
        let p = solve_care(&from_rows(&[&[0.0]]), &one, &one, 1.0).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        let p = solve_care(&one, &one, &one, 1.0).unwrap();
        // Stabilizing root of -p² + 2p + 1 = 0.
        assert_abs_diff_eq!(p[(0, 0)], 1.0 + 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn care_non_stabilizable() {
        let a = from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let b = from_rows(&[&[0.0], &[1.0]]);
        let r = solve_care(&a, &b, &Matrix::identity(2, 2), 1.0);
        assert_eq!(r, Err(LinalgError::NotStabilizable));
    }

    #[test]
    fn care_fixed_point_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=5 {
            let a = random_matrix(&mut rng, n, n) * 2.0;
            let b = random_matrix(&mut rng, n, 2);
            let w = Matrix::identity(n, n);
            let p = solve_care(&a, &b, &w, 0.7).unwrap();
            let again = solve_care_from(&a, &b, &w, 0.7, &p).unwrap();
            assert!(max_abs(&(again - &p)) < 1e-12 * max_abs(&p).max(1.0));
        }
    }

    #[test]
    fn dual_shifted_scalars() {
        let c = from_rows(&[&[1.0]]);
        let q = solve_dual_care_shifted(&from_rows(&[&[0.0]]), &c, 1.0).unwrap();
        assert_abs_diff_eq!(q[(0, 0)], 1.0, epsilon = 1e-12);
        let q = solve_dual_care_shifted(&from_rows(&[&[1.0]]), &c, 1.0).unwrap();
        assert_abs_diff_eq!(q[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_shifted_needs_large_eta_for_stable_a() {
        let a = from_rows(&[&[-1.0]]);
        let c = from_rows(&[&[1.0]]);
        assert!(matches!(
            solve_dual_care_shifted(&a, &c, 1.0),
            Err(LinalgError::NoPositiveDefiniteSolution { .. })
        ));
        // q(2a + η - q) = 0 gives q = η - 2.
        let q = solve_dual_care_shifted(&a, &c, 4.0).unwrap();
        assert_abs_diff_eq!(q[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_shifted_unobservable() {
        let a = from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]);
        let c = from_rows(&[&[1.0, 0.0]]);
        assert_eq!(
            solve_dual_care_shifted(&a, &c, 1.0),
            Err(LinalgError::NotObservable)
        );
    }

    #[test]
    fn norms_and_min_eigenvalue() {
        assert_abs_diff_eq!(
            operator_norm_2(&Matrix::identity(3, 3)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let d = from_rows(&[&[3.0, 0.0], &[0.0, -4.0]]);
        assert_abs_diff_eq!(operator_norm_2(&d).unwrap(), 4.0, epsilon = 1e-14);
        let d = from_rows(&[&[2.0, 0.0], &[0.0, 5.0]]);
        assert_abs_diff_eq!(min_eigenvalue_sym(&d).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            min_eigenvalue_sym(&Matrix::identity(4, 4)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            min_eigenvalue_sym(&from_rows(&[&[1.0, 1.0], &[0.0, 1.0]])),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn subspaces() {
        let b = from_rows(&[&[0.0], &[1.0], &[0.0], &[1.0]]);
        let left = null_space(&b.transpose());
        assert_eq!(left.shape(), (4, 3));
        assert!(max_abs(&(left.transpose() * &b)) < 1e-14);
        assert!(max_abs(&(left.transpose() * &left - Matrix::identity(3, 3))) < 1e-14);
        assert_eq!(range_space(&b).ncols(), 1);
        assert_eq!(rank(&b), 1);
    }

    #[test]
    fn spectral_distance_matches_permutations() {
        let a = [Complex::new(1.0, 0.0), Complex::new(-2.0, 1.0)];
        let b = [Complex::new(-2.0, 1.0), Complex::new(1.0, 1e-9)];
        assert!(spectral_distance(&a, &b) < 2e-9);
        assert!(spectral_distance(&a, &b[..1]).is_infinite());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_is_transpose_invariant(seed in 0u64..10_000, r in 1usize..6, c in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_matrix(&mut rng, r, c);
                let a = operator_norm_2(&m).unwrap();
                let b = operator_norm_2(&m.transpose()).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }

            #[test]
            fn care_solutions_stabilize(seed in 0u64..10_000, n in 1usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, n, n) * 1.5;
                let b = random_matrix(&mut rng, n, 1 + n / 2);
                let w = Matrix::identity(n, n);
                let p = solve_care(&a, &b, &w, 1.0).unwrap();
                let norm = operator_norm_2(&p).unwrap();
                prop_assert!(max_abs(&care_residual(&a, &b, &w, 1.0, &p)) <= 1e-8 * (1.0 + norm * norm));
                prop_assert!(eigenvalues(&(&a - &b * b.transpose() * &p)).unwrap().is_hurwitz);
                prop_assert!(min_eigenvalue_sym(&p).unwrap() > 0.0);
            }
        }
    }
}
