//! Numerical engine for the Lie-groupoid formulation of classical field
//! theory: jet groupoids and algebroids, induced actions on jets, cojets and
//! forms, multisymplectic geometry, momentum maps and Noether currents.

pub mod actions;
pub mod algebroid;
pub mod error;
pub mod linalg;
pub mod grid;
pub mod groupoid;
pub mod jet;
pub mod jet_groupoid;
pub mod manifold;
pub mod multiphase;
pub mod noether;
pub mod scenarios;
pub mod smooth;
pub mod tolerances;
pub mod verify;

pub use error::{GnkError, Result};
pub use linalg::Mat;
