//! Adaptive protocol in which neighbours also exchange their observer
//! states.
//!
//! Each agent runs a full-order observer `x̂_i` driven by the mismatch
//! `ẽ_i = Cζ̃_i − ζ_i` with adaptive gain `ρ_i`, and a state feedback whose
//! low-gain parameter `α_i` grows while the exchanged signal is large.

use crate::agent::{self, AgentError, AgentModel};
use crate::linalg::{self, LinalgError, Matrix};
use crate::noncollab::dot_row;
use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use thiserror::Error;

/// Ratio between consecutive grid values of `α`.
pub const ALPHA_GRID_RATIO: f64 = 1.05;
/// Grid indices below this are clamped (α ≈ 5.8e-5).
pub const ALPHA_GRID_MIN_INDEX: i32 = -200;
/// Grid indices above this are clamped (α ≈ 1.3e21).
pub const ALPHA_GRID_MAX_INDEX: i32 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollabError {
    #[error("model violates the {0} assumption")]
    Assumption(&'static str),
    #[error("model does not have uniform rank")]
    NotUniformRank,
    #[error("uniform rank could not be determined (non-square or non-invertible model); a precompensator design is required")]
    UniformRankUndetermined,
    #[error("delta must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("no eta in the search ladder admits a positive definite observer Riccati solution")]
    NoAdmissibleEta,
    #[error("alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, CollabError>;

#[derive(Debug, Clone, Default)]
pub struct CollabOptions {
    /// Threshold `d`; replaced by `δ²/8` unless `0 < 4d < δ²`.
    pub d: Option<f64>,
    /// Observer Riccati shift `η`; searched when absent.
    pub eta: Option<f64>,
}

/// `η` values tried in order: 1, 1/2, …, 2⁻²⁰, then 2, 4, …, 2²⁰.
pub fn eta_ladder() -> impl Iterator<Item = f64> {
    let down = (0..=20).map(|k| 0.5f64.powi(k));
    let up = (1..=20).map(|k| 2f64.powi(k));
    down.chain(up)
}

/// Grid index `k` with `1.05ᵏ ≤ α < 1.05ᵏ⁺¹`, clamped to the grid range.
pub fn alpha_grid_index(alpha: f64) -> i32 {
    let k = (alpha.ln() / ALPHA_GRID_RATIO.ln() + 1e-9).floor();
    (k.max(ALPHA_GRID_MIN_INDEX as f64).min(ALPHA_GRID_MAX_INDEX as f64)) as i32
}

pub fn alpha_grid_value(k: i32) -> f64 {
    ALPHA_GRID_RATIO.powi(k)
}

/// Solutions of `AᵀP + PA − αPBBᵀP + 2εP + CᵀC = 0` on the geometric
/// `α` grid.
///
/// Index 0 (`α = 1`) is solved from scratch; index `k` is solved by Newton
/// warm-started from index `k ∓ 1`, so every entry is a fixed function of
/// its index no matter in which order entries are requested.
#[derive(Debug)]
pub struct PAlphaCache {
    a_shifted: Matrix,
    b: Matrix,
    w: Matrix,
    entries: RwLock<BTreeMap<i32, Arc<Matrix>>>,
}

impl PAlphaCache {
    fn new(model: &AgentModel, epsilon: f64) -> Result<Self> {
        let n = model.state_dim();
        let cache = Self {
            a_shifted: model.a() + Matrix::identity(n, n) * epsilon,
            b: model.b().clone(),
            w: model.c().transpose() * model.c(),
            entries: RwLock::new(BTreeMap::new()),
        };
        cache.get(0)?;
        Ok(cache)
    }

    fn lookup(&self, k: i32) -> Option<Arc<Matrix>> {
        self.entries.read().expect("cache lock").get(&k).cloned()
    }

    /// Solution at grid index `k`, computing and caching the chain from the
    /// nearest cached index on the way from 0.
    pub fn get(&self, k: i32) -> Result<Arc<Matrix>> {
        let k = k.clamp(ALPHA_GRID_MIN_INDEX, ALPHA_GRID_MAX_INDEX);
        if let Some(p) = self.lookup(k) {
            return Ok(p);
        }
        let step = if k >= 0 { -1 } else { 1 };
        let mut j = k;
        let mut start = None;
        while j != 0 {
            j += step;
            if let Some(p) = self.lookup(j) {
                start = Some(p);
                break;
            }
        }
        let mut current = match start {
            Some(p) => p,
            None => {
                let p0 = Arc::new(linalg::solve_care(&self.a_shifted, &self.b, &self.w, 1.0)?);
                self.insert(0, p0.clone());
                j = 0;
                p0
            }
        };
        while j != k {
            j -= step;
            let next = linalg::solve_care_from(
                &self.a_shifted,
                &self.b,
                &self.w,
                alpha_grid_value(j),
                &current,
            )?;
            current = Arc::new(next);
            self.insert(j, current.clone());
        }
        Ok(current)
    }

    fn insert(&self, k: i32, p: Arc<Matrix>) {
        self.entries
            .write()
            .expect("cache lock")
            .entry(k)
            .or_insert(p);
    }

    /// Cached `(index, P)` pairs in increasing index order.
    pub fn snapshot(&self) -> Vec<(i32, Arc<Matrix>)> {
        self.entries
            .read()
            .expect("cache lock")
            .iter()
            .map(|(k, p)| (*k, p.clone()))
            .collect()
    }
}

#[derive(Debug)]
pub struct CollabDesign {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// Positive definite solution of `AQ + QAᵀ − QCᵀCQ + ηQ = 0`.
    pub q: Matrix,
    /// `QCᵀ`, the observer injection direction.
    pub qct: Matrix,
    pub eta: f64,
    pub epsilon: f64,
    pub d: f64,
    pub delta: f64,
    pub p_alpha: PAlphaCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollabState {
    pub x_hat: Vec<f64>,
    pub rho: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollabRates {
    pub d_x_hat: Vec<f64>,
    pub d_rho: f64,
    pub d_alpha: f64,
    pub u: Vec<f64>,
    /// `ẽᵀẽ`.
    pub mismatch_proxy: f64,
    /// `ζ̃ᵀCᵀCζ̃`.
    pub exchange_proxy: f64,
}

/// Rate of the low-gain parameter for a given `ζ̃ᵀCᵀCζ̃`.
pub fn alpha_rate(exchange_proxy: f64, d: f64) -> f64 {
    if exchange_proxy >= 1.0 {
        1.0
    } else if exchange_proxy >= d {
        exchange_proxy
    } else {
        0.0
    }
}

/// Rate of the observer gain for a given `ẽᵀẽ`.
pub fn rho_rate(mismatch_proxy: f64, d: f64) -> f64 {
    if mismatch_proxy >= d {
        mismatch_proxy
    } else {
        0.0
    }
}

impl CollabDesign {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn initial_state(&self) -> CollabState {
        CollabState {
            x_hat: vec![0.0; self.state_dim()],
            rho: 0.0,
            alpha: 0.0,
        }
    }

    /// `P` used by the controller at gain `α`: the grid solution at or
    /// below `α`.
    pub fn p_for_alpha(&self, alpha: f64) -> Result<Arc<Matrix>> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(CollabError::InvalidAlpha(alpha));
        }
        self.p_alpha.get(alpha_grid_index(alpha))
    }

    pub fn derivatives(
        &self,
        state: &CollabState,
        zeta: &[f64],
        zeta_tilde: &[f64],
    ) -> Result<CollabRates> {
        let n = self.state_dim();
        let p_dim = self.c.nrows();
        let m = self.b.ncols();
        if state.x_hat.len() != n || zeta.len() != p_dim || zeta_tilde.len() != n {
            return Err(CollabError::Dimensions(format!(
                "expected x_hat {n}, zeta {p_dim}, zeta_tilde {n}; got {}, {}, {}",
                state.x_hat.len(),
                zeta.len(),
                zeta_tilde.len()
            )));
        }
        let c_zt: Vec<f64> = (0..p_dim).map(|r| dot_row(&self.c, r, zeta_tilde)).collect();
        let mismatch: Vec<f64> = c_zt.iter().zip(zeta).map(|(a, b)| a - b).collect();
        let mismatch_proxy: f64 = mismatch.iter().map(|v| v * v).sum();
        let exchange_proxy: f64 = c_zt.iter().map(|v| v * v).sum();

        let u = if state.alpha > 0.0 {
            let p = self.p_for_alpha(state.alpha)?;
            let sum: Vec<f64> = state.x_hat.iter().zip(zeta_tilde).map(|(a, b)| a + b).collect();
            let p_sum: Vec<f64> = (0..n).map(|r| dot_row(&p, r, &sum)).collect();
            (0..m)
                .map(|j| -state.alpha * (0..n).map(|r| self.b[(r, j)] * p_sum[r]).sum::<f64>())
                .collect()
        } else {
            vec![0.0; m]
        };

        let d_x_hat = (0..n)
            .map(|r| {
                dot_row(&self.a, r, &state.x_hat) + dot_row(&self.b, r, &u)
                    - state.rho * dot_row(&self.qct, r, &mismatch)
            })
            .collect();
        Ok(CollabRates {
            d_x_hat,
            d_rho: rho_rate(mismatch_proxy, self.d),
            d_alpha: alpha_rate(exchange_proxy, self.d),
            u,
            mismatch_proxy,
            exchange_proxy,
        })
    }
}

/// `P` at exactly `α`, solved from scratch without the grid.
pub fn solve_p_alpha(model: &AgentModel, epsilon: f64, alpha: f64) -> Result<Matrix> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CollabError::InvalidAlpha(alpha));
    }
    let n = model.state_dim();
    Ok(linalg::solve_care(
        &(model.a() + Matrix::identity(n, n) * epsilon),
        model.b(),
        &(model.c().transpose() * model.c()),
        alpha,
    )?)
}

/// `min(0.1, ½·min(−Re z) over invariant zeros, ½·min(−Re λ) over
/// uncontrollable modes)`.
pub fn choose_epsilon(model: &AgentModel, zeros: &[nalgebra::Complex<f64>]) -> Result<f64> {
    let zero_margin = zeros.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
    let stab_margin = linalg::uncontrollable_modes(model.a(), model.b())?
        .iter()
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    Ok(0.1f64.min(0.5 * zero_margin).min(0.5 * stab_margin))
}

pub fn design_collab(model: &AgentModel, delta: f64, options: &CollabOptions) -> Result<CollabDesign> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(CollabError::InvalidDelta(delta));
    }
    let report = agent::check_assumptions(model)?;
    for (name, holds) in report.collaborative_conditions() {
        if !holds {
            return Err(CollabError::Assumption(name));
        }
    }
    match report.uniform_rank {
        Some(true) => {}
        Some(false) => return Err(CollabError::NotUniformRank),
        None => return Err(CollabError::UniformRankUndetermined),
    }
    let (eta, q) = match options.eta {
        Some(eta) => (eta, linalg::solve_dual_care_shifted(model.a(), model.c(), eta)?),
        None => eta_ladder()
            .find_map(|eta| {
                linalg::solve_dual_care_shifted(model.a(), model.c(), eta)
                    .ok()
                    .map(|q| (eta, q))
            })
            .ok_or(CollabError::NoAdmissibleEta)?,
    };
    let epsilon = choose_epsilon(model, &report.invariant_zeros)?;
    let d = match options.d {
        Some(d) if d > 0.0 && 4.0 * d < delta * delta => d,
        _ => delta * delta / 8.0,
    };
    let qct = &q * model.c().transpose();
    Ok(CollabDesign {
        a: model.a().clone(),
        b: model.b().clone(),
        c: model.c().clone(),
        q,
        qct,
        eta,
        epsilon,
        d,
        delta,
        p_alpha: PAlphaCache::new(model, epsilon)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use approx::assert_abs_diff_eq;

    fn reference_design() -> CollabDesign {
        design_collab(&models::example_collaborative(), 2.0, &CollabOptions::default()).unwrap()
    }

    #[test]
    fn default_threshold() {
        let d = reference_design();
        assert_abs_diff_eq!(d.d, 0.5, epsilon = 1e-15);
        assert!(4.0 * d.d < 4.0);
        let over = design_collab(
            &models::example_collaborative(),
            2.0,
            &CollabOptions { d: Some(1.0), eta: None },
        )
        .unwrap();
        assert_eq!(over.d, 0.5);
        let ok = design_collab(
            &models::example_collaborative(),
            2.0,
            &CollabOptions { d: Some(0.2), eta: None },
        )
        .unwrap();
        assert_eq!(ok.d, 0.2);
    }

    #[test]
    fn epsilon_below_zero_margin() {
        let model = models::example_collaborative();
        let d = reference_design();
        let zeros = agent::invariant_zeros(&model).unwrap();
        let min_margin = zeros.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
        assert!(d.epsilon > 0.0 && d.epsilon < min_margin);
        assert!(d.epsilon <= 0.1);
    }

    #[test]
    fn eta_search_finds_admissible_value() {
        let d = reference_design();
        let res = linalg::dual_care_shifted_residual(&d.a, &d.c, d.eta, &d.q);
        assert!(linalg::max_abs(&res) < 1e-8);
        assert!(linalg::min_eigenvalue_sym(&d.q).unwrap() > 0.0);
        // Every earlier rung of the ladder must be inadmissible.
        for eta in eta_ladder().take_while(|&e| e != d.eta) {
            assert!(linalg::solve_dual_care_shifted(&d.a, &d.c, eta).is_err());
        }
    }

    #[test]
    fn scalar_p_alpha_closed_forms() {
        let one = linalg::from_rows(&[&[1.0]]);
        let integ = AgentModel::new(linalg::from_rows(&[&[0.0]]), one.clone(), one.clone(), one).unwrap();
        let p = solve_p_alpha(&integ, 0.0, 4.0).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 0.5, epsilon = 1e-12);
        let p = solve_p_alpha(&integ, 0.0, 100.0).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 0.1, epsilon = 1e-12);
        let eps = 0.1;
        let alpha = 3.0;
        let p = solve_p_alpha(&integ, eps, alpha).unwrap();
        let exact = (2.0 * eps + (4.0 * eps * eps + 4.0 * alpha).sqrt()) / (2.0 * alpha);
        assert_abs_diff_eq!(p[(0, 0)], exact, epsilon = 1e-12);
    }

    #[test]
    fn grid_indexing() {
        assert_eq!(alpha_grid_index(1.0), 0);
        assert_eq!(alpha_grid_index(1.05), 1);
        assert_eq!(alpha_grid_index(1.0499), 0);
        assert_eq!(alpha_grid_index(0.99), -1);
        assert_eq!(alpha_grid_index(1e-300), ALPHA_GRID_MIN_INDEX);
        for k in [-50, -1, 0, 1, 7, 300] {
            assert_eq!(alpha_grid_index(alpha_grid_value(k)), k);
        }
    }

    #[test]
    fn cache_matches_fresh_solves_and_is_order_independent() {
        let model = models::example_collaborative();
        let d = reference_design();
        let forward: Vec<Arc<Matrix>> = [-20, 40, 3].iter().map(|&k| d.p_alpha.get(k).unwrap()).collect();
        let other = reference_design();
        let backward: Vec<Arc<Matrix>> = [3, 40, -20].iter().map(|&k| other.p_alpha.get(k).unwrap()).collect();
        assert_eq!(*forward[0], *backward[2]);
        assert_eq!(*forward[1], *backward[1]);
        for (k, p) in d.p_alpha.snapshot() {
            let fresh = solve_p_alpha(&model, d.epsilon, alpha_grid_value(k)).unwrap();
            assert!(linalg::max_abs(&(fresh - &*p)) < 1e-9, "index {k}");
        }
    }

    #[test]
    fn p_alpha_is_psd_monotone_and_vanishes() {
        let d = reference_design();
        let mut prev: Option<Arc<Matrix>> = None;
        for k in (-40..=400).step_by(8) {
            let p = d.p_alpha.get(k).unwrap();
            if let Some(prev) = &prev {
                let diff = linalg::symmetrize(&(&**prev - &*p));
                assert!(linalg::min_eigenvalue_sym(&diff).unwrap() >= -1e-9);
            }
            prev = Some(p);
        }
        assert!(linalg::operator_norm_2(&prev.unwrap()).unwrap() < 1e-3);
    }

    #[test]
    fn equilibrium_and_branches() {
        let d = reference_design();
        let r = d.derivatives(&d.initial_state(), &[0.0], &[0.0; 3]).unwrap();
        assert!(r.d_x_hat.iter().all(|&v| v == 0.0));
        assert_eq!((r.d_rho, r.d_alpha), (0.0, 0.0));
        assert!(r.u.iter().all(|&v| v == 0.0));

        assert_eq!(rho_rate(d.d / 2.0, d.d), 0.0);
        assert_eq!(rho_rate(d.d, d.d), d.d);
        assert_eq!(alpha_rate(2.0, d.d), 1.0);
        assert_eq!(alpha_rate(0.7, d.d), 0.7);
        assert_eq!(alpha_rate(0.3, d.d), 0.0);
        // ζ̃ with Cζ̃ = √2 gives ζ̃ᵀCᵀCζ̃ = 2.
        let zt = [2f64.sqrt(), 0.0, 0.0];
        let r = d.derivatives(&d.initial_state(), &[2f64.sqrt()], &zt).unwrap();
        assert_abs_diff_eq!(r.exchange_proxy, 2.0, epsilon = 1e-15);
        assert_eq!(r.d_alpha, 1.0);
        assert_eq!(r.mismatch_proxy, 0.0);
        assert_eq!(r.d_rho, 0.0);
    }

    #[test]
    fn feedback_matches_direct_solve() {
        let model = models::example_collaborative();
        let d = reference_design();
        let state = CollabState {
            x_hat: vec![1.0, 0.0, 0.0],
            rho: 0.0,
            alpha: 1.0,
        };
        let r = d.derivatives(&state, &[0.0], &[0.0; 3]).unwrap();
        let p1 = solve_p_alpha(&model, d.epsilon, 1.0).unwrap();
        let expected = -(model.b().transpose() * p1.column(0))[(0, 0)];
        assert_abs_diff_eq!(r.u[0], expected, epsilon = 1e-10);
    }

    #[test]
    fn requires_uniform_rank_square_model() {
        let model = models::example_noncollaborative();
        assert!(matches!(
            design_collab(&model, 1.0, &CollabOptions::default()),
            Err(CollabError::Assumption(_)) | Err(CollabError::UniformRankUndetermined)
        ));
    }
}
