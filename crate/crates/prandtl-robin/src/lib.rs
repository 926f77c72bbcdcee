//! Numerical laboratory for monotone shear flows over a wall where the slip
//! is tied to the shear through a Robin condition u_y = beta u. The crate
//! marches the background shear, transforms the linearized problem into a
//! vorticity-ratio unknown with a dynamic wall law, and drives a smoothed
//! Newton iteration whose mollifiers, norms, and bookkeeping identities are
//! all checkable at desk scale.
//!
//! Layout:
//! - [`grid`]: tensor grids, stencils, quadrature, banded solves
//! - [`norms`]: the weighted anisotropic norm catalog
//! - [`shear`]: background shear march and its monotonicity diagnostics
//! - [`smoothing`]: wall-adapted mollifiers and the velocity-pair smoothers
//! - [`linearized`]: coefficient assembly and the transformed vorticity march
//! - [`lambda`]: coefficient-size catalog entering the solver estimates
//! - [`nash_moser`]: the iteration driver, schedule, and audit identities
//! - [`config`], [`runner`]: experiment configs and end-to-end runs
//!
//! Every run is deterministic for a fixed config and seed: randomness flows
//! through one seeded generator and parallel reductions are ordered.

pub mod config;
pub mod error;
pub mod fit;
pub mod grid;
pub mod lambda;
pub mod linearized;
pub mod nash_moser;
pub mod norms;
pub mod runner;
pub mod shear;
pub mod smoothing;

pub use error::{Error, Result};
