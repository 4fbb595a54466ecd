//! Numerical laboratory for the two-phase Bernoulli energy of the p-Laplacian.
//!
//! The crate minimizes the functional
//!
//! ```text
//! J(v) = ∫ |∇v|^p + (p-1) λ₊^p χ{v>0} + (p-1) λ₋^p χ{v<0}
//! ```
//!
//! on uniform grids, extracts and classifies the free boundary of the
//! minimizer, fits two-plane profiles `H(x) = α (x·e)⁺ − β (x·e)⁻` across
//! scales, solves the linearized interface problems (transmission and
//! two-membrane/Signorini), and measures the quantitative regularity
//! properties of minimizers (free-boundary condition residuals,
//! non-degeneracy, coherent growth, Lipschitz dichotomy, explicit barriers).
//!
//! Modules map onto the moving parts:
//! - [`params`], [`grid`], [`twoplane`] — shared problem data and exact
//!   two-plane algebra;
//! - [`solver`] — discrete energies and their minimization;
//! - [`fbgeom`] — free-boundary extraction, classification, two-plane
//!   fitting, multiscale flatness decay;
//! - [`linearized`] — transmission and two-membrane solvers built on a
//!   Neumann + thin-obstacle decomposition;
//! - [`verify`] — the property-checking harness and explicit barriers.

pub mod error;
pub mod fbgeom;
pub mod grid;
pub mod linearized;
pub mod params;
pub mod solver;
pub mod twoplane;
pub mod verify;

pub use error::Error;
pub use grid::{Grid, ScalarField};
pub use params::ProblemParams;
pub use twoplane::TwoPlane;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Points are stored as fixed 3-vectors; axes at or beyond the grid
/// dimension are zero and ignored.
pub type Point = [f64; 3];

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}
