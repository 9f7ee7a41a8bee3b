//! Simulation and inference toolkit for Duffing non-linearities in levitated
//! optomechanics.
//!
//! A nanoparticle in a (softening) Duffing trap is driven by a thermal bath and
//! squeezed by a brief drop in trap stiffness lasting a quarter period of the
//! reduced frequency. After the pulse the squeezed phase-space distribution
//! shears into a spiral whose winding depends on the non-linearity `xi`.
//! Comparing simulated clouds against a reference cloud with a two-sample
//! Kolmogorov–Smirnov test, sweeping `xi`, then smoothing and fitting the
//! p-value curve yields an estimate of `xi`.
//!
//! Modules:
//! - [`sde`]: the stochastic equation of motion, integrators and ensembles.
//! - [`pulse`]: the stiffness modulation and its quarter-period timing rule.
//! - [`phasespace`]: point clouds, the band-pass measurement chain, CSV files.
//! - [`stats`]: KS tests, Savitzky–Golay smoothing, Gaussian fitting.
//! - [`estimator`]: the `xi` sweep, estimate, and p-value-vs-time diagnostic.
//!
//! All quantities are SI internally. Helpers in [`units`] convert from the
//! lab units (μm⁻², kHz, μs) used at the edges.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod filter;
pub mod phasespace;
pub mod pulse;
pub mod sde;
pub mod stats;
pub mod units;

pub use phasespace::{CloudSource, Frame, MeasurementChain, PhaseCloud, Snapshot};
pub use stats::{GaussianFit, KsResult, PValueMethod};

pub use error::{Error, Result};

pub use estimator::{
    critical_xi, estimate_xi, pvalue_over_time, sweep_xi, SeedPolicy, SmoothingParams, SweepConfig,
    SweepResult, XiEstimate,
};
pub use pulse::PulseSchedule;
pub use sde::{
    Ensemble, InitCondition, Integrator, OscillatorParams, SimConfig, State, Trajectory,
};
