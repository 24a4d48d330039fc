// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod noncollab;
pub mod collab;
pub mod sim;
pub mod verify;
