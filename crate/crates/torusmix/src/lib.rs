//! # torusmix
//!
//! A numerical laboratory for a McKean–Vlasov equation on the d-dimensional
//! torus `T^d = [0,1)^d` perturbed by divergence-free (transport) noise:
//!
//! ```text
//! dρ = [ ν Δρ + ∇·(ρ ∇W∗ρ) ] dt + √2 K ∇·(ρ ∘ dξ),      d ≥ 2,
//! ```
//!
//! where `W` is an even interaction potential, `∘` is Stratonovich, and `ξ`
//! is an isotropic, divergence-free Gaussian velocity field built from a
//! radial spectral weight `θ`. The uniform state `ρ ≡ 1` is a steady state;
//! mass is conserved; the noise rearranges (never creates) mass.
//!
//! The crates' modules map onto the questions the lab answers:
//!
//! * [`spectral`] — Fourier representation of fields on the torus, norms,
//!   derivative algebra, dealiasing.
//! * [`rng`] — counter-based (Philox) random streams, reproducible across
//!   resolutions and worker counts.
//! * [`noise`] — the divergence-free noise model: mode bases, increments,
//!   covariance, piecewise-linear (Wong–Zakai) drivers.
//! * [`flow`] — stochastic characteristics of the velocity field: volume
//!   preservation, scalar transport along the inverse flow.
//! * [`nufft`] — fast evaluation of band-limited fields at scattered points.
//! * [`solver`] — spectral schemes for the full equation, its linearization
//!   about `ρ ≡ 1`, controlled (deterministic-driver) runs, and pure
//!   transport.
//! * [`meanfield`] — the deterministic (K = 0) steady-state theory: Gibbs
//!   fixed points, free energy, linear stability, and the noise threshold
//!   `K_crit` above which uniformization is predicted.
//! * [`lyapunov`] — top Lyapunov exponents: a 2-d auxiliary linear system
//!   with an exact quadrature benchmark, and the linearized equation itself.
//! * [`particles`] — the interacting-particle system whose empirical measure
//!   approximates the equation, with common and idiosyncratic noise.
//! * [`experiments`] — named experiment drivers behind the `lab` binary:
//!   configs, CSV output, JSON manifests, acceptance checks.

pub mod experiments;
pub mod flow;
pub mod lyapunov;
pub mod meanfield;
pub mod noise;
pub mod nufft;
pub mod particles;
pub mod rng;
pub mod solver;
pub mod spectral;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model or run specification is internally inconsistent.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    /// A numerical run left its domain of validity (blow-up, NaN, ...).
    #[error("numerical failure: {0}")]
    Numerics(String),
    /// Configuration file problems (unknown keys, missing values, ...).
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
