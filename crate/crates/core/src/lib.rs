//! Simulation and verification laboratory for the two-dimensional stochastic
//! Euler equations in vorticity form, driven by transport noise on the torus
//! `[0, 2π)²`.
//!
//! The crate is organized around the pieces of the approximation scheme:
//!
//! * [`kernel`]: periodic Green function, Biot–Savart kernel and velocity
//!   reconstruction.
//! * [`noise`]: the transport-noise basis, its covariance and the
//!   Itô–Stratonovich bookkeeping.
//! * [`measure`]: particle and grid vorticity measures, truncated Sobolev
//!   norms, the weak-* metric, mollification and vortex-sheet data.
//! * [`nonlinear`]: the symmetrized kernel `F_φ` and the measure-valued
//!   nonlinear functional.
//! * [`particle`]: stochastic point-vortex flow (push-forward of the initial
//!   measure).
//! * [`spectral`]: pseudo-spectral Itô-form vorticity solver.
//! * [`diagnostics`]: a priori bounds turned into pass/fail checks.
//! * [`harness`]: configuration, seeded RNG streams, ensembles and outputs.
//!
//! Fourier convention used throughout: `ξ(x) = Σ ξ̂(k) e^{ik·x}` with
//! `ξ̂(k) = (2π)⁻² ∫ ξ(x) e^{-ik·x} dx`. Norms are unnormalized ℓ² sums over
//! modes.

pub mod diagnostics;
pub mod error;
pub mod fft;
pub mod harness;
pub mod kernel;
pub mod measure;
pub mod noise;
pub mod nonlinear;
pub mod particle;
pub mod spectral;
pub mod torus;

pub use error::{Error, Result};
pub use fft::{GridField, Spectrum};
pub use kernel::{KernelSource, KernelTable, PeriodicKernel, SpectralKernel};
pub use measure::{Measure, ParticleMeasure, TestFamily, TrigFunction};
pub use noise::NoiseBasis;
pub use torus::{TorusPoint, TWO_PI};
