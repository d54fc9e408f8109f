//! Simulation and inference toolkit for a gap-tunable flux qubit coupled to
//! an ensemble of NV⁻ electron spins.
//!
//! Module map:
//!
//! * [`quantum`]: operators, Hermitian eigendecomposition, propagators and
//!   an RK4 Lindblad integrator.
//! * [`device`]: qubit / NV / coupled Hamiltonians, flux→bias conversion.
//! * [`dynamics`]: pulse schedules, vacuum Rabi traces, chevron scans.
//! * [`spectroscopy`]: bias sweeps and anti-crossing extraction.
//! * [`inference`]: damped-cosine fitting and ensemble-size estimates.
//! * [`io`]: configuration, result envelopes and CSV/JSON/SVG output.
//! * [`par`]: ordered parallel map (rayon behind the `parallel` feature).

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device;
pub mod dynamics;
pub mod error;
pub mod inference;
pub mod io;
pub mod par;
pub mod quantum;
pub mod spectroscopy;

pub use error::{Error, Result};
pub use par::Executor;
