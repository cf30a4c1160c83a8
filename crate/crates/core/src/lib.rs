//! Simulate-and-infer toolkit for the (2+1)-dimensional time-dependent
//! complex Ginzburg-Landau (TDCGL) equation
//!
//! ```text
//! [ i a d/dz + (1 - i eta) lap + f(I) + i g(I) ] psi = 0,    I = |psi|^2
//! ```
//!
//! on the unit square. The crate has two halves:
//!
//! * **Forward**: evolve a complex field with classical RK4 and store the
//!   intensity on equally spaced planes ([`forward_sim`]).
//! * **Inverse**: given only the intensity on three planes, retrieve the
//!   phase by iteratively solving the hydrodynamic continuity equation
//!   ([`phase_retrieval`]), then recover eta, alpha and the nonlinearity
//!   f(I) with a diffusion-relaxation loop driven by the boundary flux of
//!   the retrieved phase ([`parameter_inference`]). The dissipation g(I)
//!   is confounded with the phase inside the continuity equation, so it is
//!   measured separately from purpose-built data ([`dissipation`]).
//!
//! [`cli_io`] provides the `tdcgl` command line front end, the snapshot
//! file format and CSV diagnostics.

pub mod cli_io;
pub mod dissipation;
pub mod error;
pub mod field_grid;
pub mod forward_sim;
pub mod parameter_inference;
pub mod phase_retrieval;

pub use error::{Error, Result};
pub use field_grid::{BoundaryContour, ComplexField2D, GridSpec, ScalarField2D};
pub use forward_sim::{
    EvolutionPlan, InitialConditionSpec, IntensityTriple, ModelSpec, NonlinearFn,
};
