//! Time-convolutionless (TCL) master equation for driven few-level systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`gellmann`] — SU(N) bases, decompositions, the characteristic function `K(r)`.
//! * [`pulse`] — Rabi and DRAG drive envelopes.
//! * [`magnus`] — interaction-frame drive, Magnus window vectors `r(t, τ)`, oracle propagator.
//! * [`noise`] — bath spectra and correlation functions (Ohmic, 1/f, tabulated).
//! * [`filtering`] — filtered jump operators, renormalized rates, decoherence matrices.
//! * [`solver`] — closed / field-independent Redfield / full TCL integration.
//! * [`metrics`] — process maps, average gate fidelity and leakage.
//!
//! Units are left to the caller as long as they are consistent (ħ = 1). The CLI
//! works in units of the qubit frequency `ω_q`.

pub mod error;
pub mod exec;
pub mod filtering;
pub mod gellmann;
pub mod linalg;
pub mod magnus;
pub mod metrics;
pub mod noise;
pub mod pulse;
pub mod quad;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{CMat, C64};
