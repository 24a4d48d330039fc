//! Adaptive protocol that uses only the measured network signal `ζ_i`.
//!
//! Each agent runs an observer for the hidden state block and a scalar gain
//! `ρ_i` that grows only while the estimated disagreement `ξ̂ᵀPξ̂` exceeds
//! the threshold `d`.

use crate::agent::{self, AgentError, AgentModel, OutputTransform};
use crate::linalg::{self, LinalgError, Matrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoncollabError {
    #[error("model violates the {0} assumption")]
    Assumption(&'static str),
    #[error("delta must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("threshold d = {d} must lie in (0, {bound})")]
    InvalidThreshold { d: f64, bound: f64 },
    #[error("observer gain does not stabilize A11 + H1 C1")]
    ObserverNotStable,
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, NoncollabError>;

/// Optional inputs to [`design_noncollab`].
#[derive(Debug, Clone, Default)]
pub struct NoncollabOptions {
    /// Threshold `d`; defaults to 0.9 of its admissible upper bound.
    pub d: Option<f64>,
    /// Explicit `(S, T)`; otherwise built from the model.
    pub transform: Option<(Matrix, Matrix)>,
    /// Explicit observer gain; otherwise from a dual Riccati equation.
    pub h1: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoncollabDesign {
    pub transform: OutputTransform,
    pub h1: Matrix,
    /// Stabilizing solution of `ÃᵀP + PÃ − PB̃B̃ᵀP + I = 0`.
    pub p: Matrix,
    /// `B̃ᵀP`, the feedback row(s).
    pub gain: Matrix,
    /// `PB̃B̃ᵀP`, the kernel of the gain adaptation.
    pub rho_kernel: Matrix,
    pub delta: f64,
    /// `δ²·λ_min(P)`.
    pub delta_1: f64,
    /// `0.9·δ₁`.
    pub delta_bar: f64,
    /// `‖CS⁻¹‖`.
    pub output_map_norm: f64,
    pub d: f64,
}

/// Per-agent protocol state.
#[derive(Debug, Clone, PartialEq)]
pub struct NoncollabState {
    pub xi1_hat: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoncollabRates {
    pub d_xi1_hat: Vec<f64>,
    pub d_rho: f64,
    pub u: Vec<f64>,
    /// `ξ̂ᵀPξ̂` at the evaluation point.
    pub proxy: f64,
}

impl NoncollabDesign {
    /// Exclusive upper bound on `d`: `δ̄ / ‖CS⁻¹‖`.
    pub fn d_upper_bound(&self) -> f64 {
        self.delta_bar / self.output_map_norm
    }

    pub fn hidden_dim(&self) -> usize {
        self.transform.hidden_dim
    }

    pub fn state_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn initial_state(&self) -> NoncollabState {
        NoncollabState {
            xi1_hat: vec![0.0; self.hidden_dim()],
            rho: 0.0,
        }
    }

    /// `ξ̂ = [ξ̂₁; ζ₂]` with `(ζ₁, ζ₂) = Tζ`.
    pub fn estimate(&self, xi1_hat: &[f64], zeta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (zeta1, zeta2) = self.transform.split_output(zeta);
        let mut xi = Vec::with_capacity(self.state_dim());
        xi.extend_from_slice(xi1_hat);
        xi.extend_from_slice(&zeta2);
        (xi, zeta1)
    }

    pub fn derivatives(&self, state: &NoncollabState, zeta: &[f64]) -> Result<NoncollabRates> {
        let k = self.hidden_dim();
        let p_dim = self.transform.t.nrows();
        if state.xi1_hat.len() != k || zeta.len() != p_dim {
            return Err(NoncollabError::Dimensions(format!(
                "expected xi1_hat of length {k} and zeta of length {p_dim}, got {} and {}",
                state.xi1_hat.len(),
                zeta.len()
            )));
        }
        let tr = &self.transform;
        let (xi, zeta1) = self.estimate(&state.xi1_hat, zeta);
        let zeta2 = &xi[k..];

        // Observer innovation C1 ξ̂₁ − ζ₁.
        let innovation: Vec<f64> = (0..tr.c1.nrows())
            .map(|r| dot_row(&tr.c1, r, &state.xi1_hat) - zeta1[r])
            .collect();
        let d_xi1_hat: Vec<f64> = (0..k)
            .map(|r| {
                dot_row(&tr.a11, r, &state.xi1_hat)
                    + dot_row(&tr.a12, r, zeta2)
                    + dot_row(&self.h1, r, &innovation)
            })
            .collect();

        let proxy = coherency_proxy(self, &xi);
        let gain_xi: Vec<f64> = (0..self.gain.nrows())
            .map(|r| dot_row(&self.gain, r, &xi))
            .collect();
        let d_rho = if proxy >= self.d {
            gain_xi.iter().map(|v| v * v).sum()
        } else {
            0.0
        };
        let u = gain_xi.iter().map(|v| -state.rho * v).collect();
        Ok(NoncollabRates {
            d_xi1_hat,
            d_rho,
            u,
            proxy,
        })
    }
}

pub(crate) fn dot_row(m: &Matrix, r: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (c, xc) in x.iter().enumerate() {
        acc += m[(r, c)] * xc;
    }
    acc
}

/// `ξ̂ᵀPξ̂`.
pub fn coherency_proxy(design: &NoncollabDesign, xi_hat: &[f64]) -> f64 {
    let n = design.p.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        acc += xi_hat[i] * dot_row(&design.p, i, xi_hat);
    }
    acc
}

pub fn design_noncollab(
    model: &AgentModel,
    delta: f64,
    options: &NoncollabOptions,
) -> Result<NoncollabDesign> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(NoncollabError::InvalidDelta(delta));
    }
    let report = agent::check_assumptions(model)?;
    for (name, holds) in report.noncollaborative_conditions() {
        if !holds {
            return Err(NoncollabError::Assumption(name));
        }
    }
    let transform = match &options.transform {
        Some((s, t)) => agent::build_output_transform_with(model, s.clone(), t.clone())?,
        None => agent::build_output_transform(model)?,
    };
    let h1 = match &options.h1 {
        Some(h) => {
            if h.shape() != (transform.hidden_dim, transform.c1.nrows()) {
                return Err(NoncollabError::Dimensions(format!(
                    "H1 is {}x{}, expected {}x{}",
                    h.nrows(),
                    h.ncols(),
                    transform.hidden_dim,
                    transform.c1.nrows()
                )));
            }
            h.clone()
        }
        None => agent::design_observer_gain(&transform.a11, &transform.c1)?,
    };
    if transform.hidden_dim > 0
        && !linalg::eigenvalues(&(&transform.a11 + &h1 * &transform.c1))?.is_hurwitz
    {
        return Err(NoncollabError::ObserverNotStable);
    }
    let n = model.state_dim();
    let p = linalg::solve_care(
        &transform.a_tilde,
        &transform.b_tilde,
        &Matrix::identity(n, n),
        1.0,
    )?;
    let gain = transform.b_tilde.transpose() * &p;
    let rho_kernel = linalg::symmetrize(&(gain.transpose() * &gain));
    let delta_1 = delta * delta * linalg::min_eigenvalue_sym(&p)?;
    let delta_bar = 0.9 * delta_1;
    let output_map_norm = linalg::operator_norm_2(&(model.c() * &transform.s_inv))?;
    let bound = delta_bar / output_map_norm;
    let d = match options.d {
        Some(d) if d > 0.0 && d < bound => d,
        Some(d) => return Err(NoncollabError::InvalidThreshold { d, bound }),
        None => 0.9 * bound,
    };
    Ok(NoncollabDesign {
        transform,
        h1,
        p,
        gain,
        rho_kernel,
        delta,
        delta_1,
        delta_bar,
        output_map_norm,
        d,
    })
}

/// The `δ` for which the default threshold equals `d`.
pub fn delta_for_default_threshold(model: &AgentModel, d: f64, options: &NoncollabOptions) -> Result<f64> {
    let probe = design_noncollab(model, 1.0, &NoncollabOptions { d: None, ..options.clone() })?;
    // Default d scales with δ²; at δ = 1 it equals probe.d.
    Ok((d / probe.d).sqrt())
}
