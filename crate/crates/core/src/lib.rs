//! Exterior calculus on discretized compact almost-complex 4-manifolds: the
//! `W`, `W̃` and `D̃` operators, Hörmander-type L² estimate diagnostics on a
//! truncated Hilbert complex, and weighted local estimates on boxes.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the double precision instantiation used by the CLI.

pub mod algebra;
pub mod checks;
pub mod cli;
pub mod elliptic;
pub mod error;
pub mod expr;
pub mod forms;
pub mod frame_calculus;
pub mod geometry;
pub mod grid;
pub mod hilbert;
pub mod io;
pub mod jet;
pub mod local_domain;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};

pub type Grid64 = grid::Grid<f64>;
pub type FormField64 = forms::FormField<f64>;
pub type ManifoldSpec64 = geometry::ManifoldSpec<f64>;
