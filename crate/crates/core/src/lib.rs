//! Few-mode Lindblad description of emitters in arbitrary electromagnetic
//! environments, valid into the ultrastrong coupling regime.
//!
//! The workflow is: fit a network of lossy interacting modes to a target
//! spectral density while keeping the model density below a threshold at
//! negative frequencies ([`fit`]); build the emitter ⊗ modes operators
//! ([`fock`]); propagate the master equation ([`dynamics`]); and compare
//! against a discretized-continuum reference ([`oracle`], [`metrics`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN

pub mod config;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod fock;
pub mod io;
pub mod metrics;
pub mod ode;
pub mod oracle;
pub mod plot;
pub mod scalar;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
pub use scalar::{Cplx, Real};

/// Double-precision aliases used by the command-line tool.
pub type ModeModelF64 = spectral::ModeModel<f64>;
pub type LorentzianF64 = spectral::LorentzianParams<f64>;
pub type SingleModeOhmicF64 = spectral::SingleModeOhmicParams<f64>;
pub type TabulatedSdF64 = spectral::TabulatedSd<f64>;
pub type EmitterSpecF64 = fock::EmitterSpec<f64>;
pub type FitConfigF64 = fit::FitConfig<f64>;
pub type FitResultF64 = fit::FitResult<f64>;
pub type TrajectoryF64 = dynamics::Trajectory<f64>;
pub type QuantumStateF64 = dynamics::QuantumState<f64>;
pub type ErrorReportF64 = metrics::ErrorReport<f64>;
