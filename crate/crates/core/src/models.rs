//! Bundled benchmark agents.

use crate::agent::AgentModel;
use crate::linalg::{from_rows, Matrix};

/// Four-state, single-input, two-output agent used by the noncollaborative
/// experiments.
pub fn example_noncollaborative() -> AgentModel {
    AgentModel::new(
        from_rows(&[
            &[0.0, 1.0, 1.0, 0.0],
            &[-1.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, -2.0],
        ]),
        from_rows(&[&[0.0], &[1.0], &[0.0], &[1.0]]),
        from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]),
        from_rows(&[&[0.0], &[1.0], &[0.0], &[1.0]]),
    )
    .expect("benchmark model is valid")
}

/// Hand-picked state transform for [`example_noncollaborative`] (with
/// `T = I`).
pub fn example_noncollaborative_s() -> Matrix {
    from_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, -1.0],
        &[0.0, 0.0, 1.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
    ])
}

/// `SAS⁻¹` for the hand-picked transform.
pub fn example_noncollaborative_a_tilde() -> Matrix {
    from_rows(&[
        &[0.0, 0.0, 1.0, 1.0],
        &[-1.0, -2.0, 1.0, 2.0],
        &[0.0, -1.0, 0.0, 1.0],
        &[-1.0, 0.0, 1.0, 0.0],
    ])
}

/// Hand-picked observer gain matching the hand-picked transform.
pub fn example_noncollaborative_h1() -> Matrix {
    from_rows(&[&[-1.0], &[0.0], &[-1.0]])
}

/// Three-state, single-input, single-output agent used by the collaborative
/// experiments.
pub fn example_collaborative() -> AgentModel {
    AgentModel::new(
        from_rows(&[&[-1.0, 1.0, 0.0], &[0.0, -2.0, 1.0], &[0.0, 0.0, -3.0]]),
        from_rows(&[&[1.0], &[1.0], &[1.0]]),
        from_rows(&[&[1.0, 0.0, 1.0]]),
        from_rows(&[&[1.0], &[0.0], &[1.0]]),
    )
    .expect("benchmark model is valid")
}

/// Double integrator `ÿ = u`.
pub fn double_integrator() -> AgentModel {
    AgentModel::new(
        from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]),
        from_rows(&[&[0.0], &[1.0]]),
        from_rows(&[&[1.0, 0.0]]),
        from_rows(&[&[0.0], &[1.0]]),
    )
    .expect("benchmark model is valid")
}
