//! Experiment configuration: the human-editable reproducibility surface.
//!
//! A configuration names one experiment and pins everything its run needs:
//! a model section, a solver section, an ensemble size, and one
//! experiment-specific parameter table. Sections left out of a file are
//! materialized from the experiment's presets when the configuration is
//! [resolved](ExperimentConfig::resolve), so the resolved configuration —
//! the one echoed into every run manifest — never contains an implicit
//! default. The schema fails closed: unknown keys anywhere are errors, a
//! parameter table for a different experiment is an error, and a section an
//! experiment does not consume is an error rather than silently ignored.

use serde::{Deserialize, Serialize};

use crate::meanfield::{fourier_potential, PotentialSpec};
use crate::noise::NoiseSpec;
use crate::solver::{ModelParams, SolverConfig, SolverScheme, TransportBackend};
use crate::spectral::{SpectralField, TorusGrid};
use crate::{Error, Result};

/// The seven experiment campaigns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    /// Two-dimensional linear benchmark with rotational noise and a
    /// closed-form exponent to quadrature accuracy.
    Acw,
    /// Pure-transport mixing: ensemble decay of `‖u‖²_{Ḣ⁻¹}` vs the
    /// theoretical lower-bound rate.
    Mixing,
    /// Top Lyapunov exponent of the linearization at the uniform state,
    /// measured against the split-parameter decay bound.
    Lyapunov,
    /// Return to uniform: noise-induced attraction of a deterministic
    /// steady state toward the flat profile.
    Ergodicity,
    /// Deterministic steady states, free energies, and phase-transition
    /// diagnostics over a diffusivity grid.
    Steady,
    /// Interacting particles vs the field equation on one shared noise
    /// realization.
    Particles,
    /// Cross-implementation consistency: pull-back oracle, piecewise-linear
    /// driver limit, scheme gap, linearization derivative, conservation.
    Convergence,
}

impl ExperimentId {
    /// All ids, in campaign order.
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Acw,
        ExperimentId::Mixing,
        ExperimentId::Lyapunov,
        ExperimentId::Ergodicity,
        ExperimentId::Steady,
        ExperimentId::Particles,
        ExperimentId::Convergence,
    ];

    /// The stable lowercase name used in configs, file names, and the CLI.
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Acw => "acw",
            ExperimentId::Mixing => "mixing",
            ExperimentId::Lyapunov => "lyapunov",
            ExperimentId::Ergodicity => "ergodicity",
            ExperimentId::Steady => "steady",
            ExperimentId::Particles => "particles",
            ExperimentId::Convergence => "convergence",
        }
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown experiment '{s}' (expected one of: {})",
                    ExperimentId::ALL.map(ExperimentId::name).join(", ")
                ))
            })
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One retained Fourier coefficient of an initial datum; the conjugate
/// coefficient at `−k` is implied, so the datum is real.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierDatum {
    /// Wavevector.
    pub k: Vec<i64>,
    /// Real part of the coefficient.
    pub re: f64,
    /// Imaginary part of the coefficient.
    pub im: f64,
}

/// Build a real field `mean + Σ (c_k e_k + c̄_k e_{−k})` from datum rows.
pub fn build_datum(grid: TorusGrid, modes: &[FourierDatum], mean: f64) -> Result<SpectralField> {
    let mut field = SpectralField::constant(grid, mean);
    for m in modes {
        if m.k.len() != grid.dim() {
            return Err(Error::Config(format!(
                "initial datum mode {:?} does not match dimension {}",
                m.k,
                grid.dim()
            )));
        }
        if m.k.iter().all(|&x| x == 0) {
            return Err(Error::Config(
                "initial datum rows must not include the mean mode k = 0".into(),
            ));
        }
        if grid.mode_position(&m.k).is_none() {
            return Err(Error::Config(format!(
                "initial datum mode {:?} lies outside the band at resolution {}",
                m.k,
                grid.modes_per_axis()
            )));
        }
        field.set_mode_pair(&m.k, num_complex::Complex64::new(m.re, m.im));
    }
    Ok(field)
}

/// Interaction potential selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "form")]
pub enum PotentialSection {
    /// No interaction (`W = 0`).
    None,
    /// Product-cosine potential concentrated on the sign patterns of `k`.
    SingleMode {
        /// Wavevector `k` (all components nonzero).
        wavevector: Vec<i64>,
    },
    /// Two product-cosine terms at `ℓ` and `2ℓ` with a shared normalization.
    TwoMode {
        /// Base wavevector `ℓ` (the second term sits at `2ℓ`).
        wavevector: Vec<i64>,
    },
}

impl PotentialSection {
    /// Construct the potential's spectral table on `grid`.
    pub fn build(&self, grid: TorusGrid) -> Result<SpectralField> {
        match self {
            PotentialSection::None => Ok(SpectralField::zero(grid)),
            PotentialSection::SingleMode { wavevector } => {
                fourier_potential(grid, &PotentialSpec::single_mode(wavevector.clone()))
            }
            PotentialSection::TwoMode { wavevector } => {
                fourier_potential(grid, &PotentialSpec::two_mode(wavevector.clone()))
            }
        }
    }

    /// The named spec (for threshold formulas), `None` when `W = 0`.
    pub fn spec(&self) -> Option<PotentialSpec> {
        match self {
            PotentialSection::None => None,
            PotentialSection::SingleMode { wavevector } => {
                Some(PotentialSpec::single_mode(wavevector.clone()))
            }
            PotentialSection::TwoMode { wavevector } => {
                Some(PotentialSpec::two_mode(wavevector.clone()))
            }
        }
    }
}

/// Transport-noise selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum NoiseSection {
    /// No common noise (`K = 0` on the unit shell).
    None,
    /// `θ = 1` on the shell `|k|² = 1` at the given intensity `K`.
    UnitShell {
        /// Noise intensity `K ≥ 0`.
        intensity: f64,
    },
    /// Explicit radial weights `(|k|², θ)` at the given intensity.
    Radial {
        /// Shell list; every `|k|²` must be nonempty on the lattice.
        shells: Vec<(i64, f64)>,
        /// Noise intensity `K ≥ 0`.
        intensity: f64,
    },
}

impl NoiseSection {
    /// Construct the noise specification in dimension `d`.
    pub fn build(&self, d: usize) -> Result<NoiseSpec> {
        match self {
            NoiseSection::None => NoiseSpec::unit_shell(d, 0.0),
            NoiseSection::UnitShell { intensity } => NoiseSpec::unit_shell(d, *intensity),
            NoiseSection::Radial { shells, intensity } => {
                NoiseSpec::radial(d, shells, *intensity)
            }
        }
    }
}

/// Model parameters: diffusivity, torus discretization, interaction, noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Diffusivity `ν ≥ 0`.
    pub nu: f64,
    /// Torus dimension `d`.
    pub dimension: usize,
    /// Fourier modes per axis.
    pub resolution: usize,
    /// Interaction potential.
    pub potential: PotentialSection,
    /// Transport noise.
    pub noise: NoiseSection,
}

impl ModelSection {
    /// The spectral grid.
    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dimension, self.resolution)
    }

    /// Assemble solver-level model parameters.
    pub fn build(&self) -> Result<ModelParams> {
        let grid = self.grid()?;
        Ok(ModelParams {
            nu: self.nu,
            potential: self.potential.build(grid)?,
            noise: self.noise.build(self.dimension)?,
        })
    }
}

/// Time-stepping parameters shared by the field runs of a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Macro scheme.
    pub scheme: SolverScheme,
    /// Transport flow backend.
    pub backend: TransportBackend,
    /// Macro time step.
    pub dt: f64,
    /// Noise substeps per macro step.
    pub substeps: u32,
    /// Horizon of a single run.
    pub t_end: f64,
    /// Observable recording cadence in macro steps.
    pub record_every: u32,
}

impl SolverSection {
    /// Assemble a solver configuration (norm guards at library defaults).
    pub fn build(&self) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.dt, self.t_end);
        cfg.scheme = self.scheme;
        cfg.backend = self.backend;
        cfg.substeps = self.substeps;
        cfg.record_every = self.record_every;
        cfg
    }
}

/// Ensemble size for campaigns that average over members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    /// Number of independent members.
    pub members: u32,
}

/// Parameters of the two-dimensional linear benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcwParams {
    /// First diagonal entry of the drift matrix.
    pub a: f64,
    /// Second diagonal entry of the drift matrix.
    pub b: f64,
    /// Noise intensities to sweep (may include `0`).
    pub k_grid: Vec<f64>,
    /// Integrator step.
    pub dt: f64,
    /// Per-member horizon.
    pub t_end: f64,
    /// Initial point (must not start on a coordinate axis).
    pub x0: [f64; 2],
    /// Trapezoid resolution of the stationary-density quadrature.
    pub quadrature_resolution: usize,
}

impl Default for AcwParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: -2.0,
            k_grid: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0],
            dt: 1e-3,
            t_end: 200.0,
            x0: [1.0, 0.2],
            quadrature_resolution: 4096,
        }
    }
}

/// Parameters of the pure-transport mixing campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingParams {
    /// Noise intensities to sweep.
    pub k_grid: Vec<f64>,
    /// Start of the exponential fit window.
    pub fit_start: f64,
    /// End of the exponential fit window.
    pub fit_end: f64,
    /// Mean-zero initial datum (retained coefficients).
    pub initial_modes: Vec<FourierDatum>,
}

impl Default for MixingParams {
    fn default() -> Self {
        Self {
            k_grid: vec![1.0, 2.0, 4.0],
            fit_start: 0.5,
            fit_end: 3.0,
            initial_modes: vec![FourierDatum {
                k: vec![1, 0],
                re: std::f64::consts::FRAC_1_SQRT_2,
                im: 0.0,
            }],
        }
    }
}

/// Parameters of the linearized Lyapunov campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    /// Fixed split parameter `ν′` for the reference (unoptimized) threshold.
    pub reference_split: f64,
    /// Multiples of the optimized sufficient intensity to measure at.
    pub k_multiples: Vec<f64>,
    /// Renormalization window `τ` (a multiple of `dt` dividing the horizon).
    pub window: f64,
    /// Step used for the deterministic `K = 0` growth-rate run.
    pub zero_noise_dt: f64,
    /// Horizon of the deterministic `K = 0` run.
    pub zero_noise_t_end: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            reference_split: 0.25,
            k_multiples: vec![1.0, 1.5],
            window: 0.5,
            zero_noise_dt: 5e-4,
            zero_noise_t_end: 5.0,
        }
    }
}

/// Parameters of the return-to-uniform campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicityParams {
    /// Noise intensity as a multiple of the theoretical sufficient value.
    pub k_factor: f64,
    /// Time by which members must have reached the settle threshold.
    pub settle_time: f64,
    /// `‖ρ − 1‖_{Ḣ⁻¹}` level counted as "reached uniform".
    pub settle_threshold: f64,
    /// Level the trajectory must then stay below through the horizon.
    pub stay_threshold: f64,
    /// Fraction of members required to settle.
    pub required_fraction: f64,
    /// Horizon of the noiseless persistence run.
    pub steady_horizon: f64,
    /// The noiseless run must keep this fraction of its initial distance.
    pub persistence_factor: f64,
}

impl Default for ErgodicityParams {
    fn default() -> Self {
        Self {
            k_factor: 1.5,
            settle_time: 5.0,
            settle_threshold: 1e-2,
            stay_threshold: 5e-2,
            required_fraction: 0.9,
            steady_horizon: 5.0,
            persistence_factor: 0.5,
        }
    }
}

/// Parameters of the deterministic steady-state campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyParams {
    /// Diffusivities expected on the uniform side of the transition.
    pub nu_uniform: Vec<f64>,
    /// Diffusivities expected on the ordered (nonuniform) side.
    pub nu_ordered: Vec<f64>,
    /// Order-parameter level separating the two regimes.
    pub order_threshold: f64,
    /// Bisection bracket for the transition location.
    pub bisection: [f64; 2],
    /// Bisection stops when the bracket is this wide.
    pub bisection_width: f64,
    /// Diffusivities probed for the two-mode metastability window.
    pub two_mode_nus: Vec<f64>,
    /// Damping of the fixed-point iteration.
    pub damping: f64,
    /// Fixed-point residual tolerance.
    pub tolerance: f64,
    /// Fixed-point iteration cap.
    pub max_iterations: usize,
}

impl Default for SteadyParams {
    fn default() -> Self {
        Self {
            nu_uniform: vec![0.55, 0.6],
            nu_ordered: vec![0.3, 0.45],
            order_threshold: 0.05,
            bisection: [0.45, 0.55],
            bisection_width: 0.02,
            two_mode_nus: vec![0.505, 0.51, 0.515, 0.52],
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 20_000,
        }
    }
}

/// Parameters of the particle/field comparison campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleParams {
    /// Particle counts to sweep.
    pub counts: Vec<usize>,
    /// Compare the empirical measure on the mode ball `|k| ≤ kmax`.
    pub kmax: i64,
    /// Initial density fluctuation (added to the uniform profile).
    pub initial_modes: Vec<FourierDatum>,
}

impl Default for ParticleParams {
    fn default() -> Self {
        Self {
            counts: vec![1_000, 4_000, 16_000],
            kmax: 2,
            initial_modes: vec![
                FourierDatum { k: vec![1, 0], re: 0.25, im: 0.0 },
                FourierDatum { k: vec![1, 1], re: 0.0, im: -0.15 },
            ],
        }
    }
}

/// Parameters of the cross-implementation consistency campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceParams {
    /// Noise intensity of the pull-back comparison (weak enough that the
    /// winding spectrum stays inside the band over the horizon).
    pub pullback_intensity: f64,
    /// Modes per axis of the pull-back comparison.
    pub pullback_resolution: usize,
    /// Steps of the pull-back refinement ladder (coarse to fine).
    pub pullback_dts: Vec<f64>,
    /// Horizon of the pull-back comparison.
    pub pullback_t_end: f64,
    /// Members averaged in the pull-back comparison.
    pub pullback_members: u32,
    /// Dyadic refinement levels of the piecewise-linear driver.
    pub wz_levels: Vec<u32>,
    /// Brownian paths averaged in the piecewise-linear comparison.
    pub wz_paths: u32,
    /// Noise intensity of the piecewise-linear comparison.
    pub wz_intensity: f64,
    /// Noise intensity of the scheme-gap ladder (weak, so the deterministic
    /// splitting difference dominates the mean-zero area terms).
    pub scheme_gap_intensity: f64,
    /// `(dt, substeps)` ladder at fixed driver resolution.
    pub scheme_gap_ladder: Vec<(f64, u32)>,
    /// Horizon of the scheme-gap ladder.
    pub scheme_gap_t_end: f64,
    /// Perturbation size of the linearization derivative check.
    pub fd_epsilon: f64,
    /// Number of random perturbation directions.
    pub fd_directions: u32,
    /// Horizon of the derivative check.
    pub fd_t_end: f64,
    /// Noise intensity of the derivative check.
    pub fd_intensity: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self {
            pullback_intensity: 0.1,
            pullback_resolution: 64,
            pullback_dts: vec![2e-3, 1e-3, 5e-4],
            pullback_t_end: 0.5,
            pullback_members: 2,
            wz_levels: vec![4, 6, 8],
            wz_paths: 6,
            wz_intensity: 0.15,
            scheme_gap_intensity: 0.025,
            scheme_gap_ladder: vec![(2e-3, 8), (1e-3, 4), (5e-4, 2)],
            scheme_gap_t_end: 0.1,
            fd_epsilon: 1e-4,
            fd_directions: 3,
            fd_t_end: 0.2,
            fd_intensity: 1.0,
        }
    }
}

/// A full experiment configuration.
///
/// Freshly parsed configurations may leave sections out; [`resolve`]
/// materializes the experiment's presets into them and rejects sections the
/// experiment does not consume. Resolved configurations round-trip through
/// serialization unchanged, which is what makes a run manifest sufficient
/// to reproduce its run.
///
/// [`resolve`]: ExperimentConfig::resolve
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which campaign to run.
    pub experiment: ExperimentId,
    /// Root seed; members and purposes split off it deterministically.
    pub seed: u64,
    /// Output directory for CSV tables and the manifest.
    pub outdir: std::path::PathBuf,
    /// Model section (experiments with field runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    /// Solver section (experiments with field runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    /// Ensemble section (experiments that average over members).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    /// Linear-benchmark table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acw: Option<AcwParams>,
    /// Mixing table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingParams>,
    /// Lyapunov table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovParams>,
    /// Return-to-uniform table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodicity: Option<ErgodicityParams>,
    /// Steady-state table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady: Option<SteadyParams>,
    /// Particle-comparison table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<ParticleParams>,
    /// Consistency table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceParams>,
}

/// Which sections an experiment consumes.
struct SectionUse {
    model: bool,
    solver: bool,
    ensemble: bool,
}

fn section_use(id: ExperimentId) -> SectionUse {
    match id {
        ExperimentId::Acw => SectionUse { model: false, solver: false, ensemble: true },
        ExperimentId::Mixing | ExperimentId::Lyapunov | ExperimentId::Ergodicity => {
            SectionUse { model: true, solver: true, ensemble: true }
        }
        ExperimentId::Steady => SectionUse { model: true, solver: false, ensemble: false },
        ExperimentId::Particles => SectionUse { model: true, solver: true, ensemble: false },
        ExperimentId::Convergence => SectionUse { model: false, solver: false, ensemble: false },
    }
}

fn preset_model(id: ExperimentId) -> Option<ModelSection> {
    let single = PotentialSection::SingleMode { wavevector: vec![1, 1] };
    match id {
        ExperimentId::Mixing => Some(ModelSection {
            nu: 0.0,
            dimension: 2,
            resolution: 32,
            potential: PotentialSection::None,
            // Per-K intensities come from the campaign grid.
            noise: NoiseSection::UnitShell { intensity: 1.0 },
        }),
        ExperimentId::Lyapunov => Some(ModelSection {
            nu: 0.3,
            dimension: 2,
            resolution: 24,
            potential: single,
            // Intensities are derived from the computed threshold.
            noise: NoiseSection::UnitShell { intensity: 1.0 },
        }),
        ExperimentId::Ergodicity => Some(ModelSection {
            nu: 0.3,
            dimension: 2,
            resolution: 32,
            potential: single,
            // Intensity is `k_factor` times the computed threshold.
            noise: NoiseSection::UnitShell { intensity: 1.0 },
        }),
        ExperimentId::Steady => Some(ModelSection {
            nu: 0.5,
            dimension: 2,
            resolution: 32,
            potential: single,
            noise: NoiseSection::None,
        }),
        ExperimentId::Particles => Some(ModelSection {
            nu: 0.3,
            dimension: 2,
            resolution: 32,
            potential: single,
            noise: NoiseSection::UnitShell { intensity: 1.0 },
        }),
        ExperimentId::Acw | ExperimentId::Convergence => None,
    }
}

fn preset_solver(id: ExperimentId) -> Option<SolverSection> {
    let base = |dt: f64, substeps: u32, t_end: f64, record_every: u32| SolverSection {
        scheme: SolverScheme::Strang,
        backend: TransportBackend::ShearSplit,
        dt,
        substeps,
        t_end,
        record_every,
    };
    match id {
        ExperimentId::Mixing => Some(base(1e-3, 1, 3.0, 25)),
        ExperimentId::Lyapunov => Some(base(1e-3, 2, 3.0, 100)),
        ExperimentId::Ergodicity => Some(base(1e-3, 2, 10.0, 25)),
        ExperimentId::Particles => Some(base(1e-3, 1, 0.25, 50)),
        ExperimentId::Acw | ExperimentId::Steady | ExperimentId::Convergence => None,
    }
}

fn preset_ensemble(id: ExperimentId) -> Option<EnsembleSection> {
    match id {
        ExperimentId::Acw => Some(EnsembleSection { members: 32 }),
        ExperimentId::Mixing => Some(EnsembleSection { members: 50 }),
        ExperimentId::Lyapunov => Some(EnsembleSection { members: 6 }),
        ExperimentId::Ergodicity => Some(EnsembleSection { members: 20 }),
        ExperimentId::Steady | ExperimentId::Particles | ExperimentId::Convergence => None,
    }
}

fn preset_seed(id: ExperimentId) -> u64 {
    match id {
        ExperimentId::Acw => 31,
        ExperimentId::Mixing => 7,
        ExperimentId::Lyapunov => 11,
        ExperimentId::Ergodicity => 29,
        ExperimentId::Steady => 1,
        ExperimentId::Particles => 77,
        ExperimentId::Convergence => 21,
    }
}

impl ExperimentConfig {
    /// The acceptance preset for an experiment, fully resolved.
    pub fn preset(id: ExperimentId) -> Self {
        Self {
            experiment: id,
            seed: preset_seed(id),
            outdir: std::path::PathBuf::from("runs"),
            model: None,
            solver: None,
            ensemble: None,
            acw: None,
            mixing: None,
            lyapunov: None,
            ergodicity: None,
            steady: None,
            particles: None,
            convergence: None,
        }
        .resolve()
        .expect("presets resolve by construction")
    }

    /// Parse a TOML configuration (unresolved; unknown keys are errors).
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Serialize back to TOML (pretty, table-per-section).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Materialize presets into missing sections and fail closed on
    /// sections or tables the experiment does not consume.
    pub fn resolve(mut self) -> Result<Self> {
        let id = self.experiment;
        let uses = section_use(id);
        let reject = |present: bool, what: &str| -> Result<()> {
            if present {
                return Err(Error::Config(format!(
                    "the {id} experiment takes no [{what}] section"
                )));
            }
            Ok(())
        };
        if uses.model {
            if self.model.is_none() {
                self.model = preset_model(id);
            }
        } else {
            reject(self.model.is_some(), "model")?;
        }
        if uses.solver {
            if self.solver.is_none() {
                self.solver = preset_solver(id);
            }
        } else {
            reject(self.solver.is_some(), "solver")?;
        }
        if uses.ensemble {
            if self.ensemble.is_none() {
                self.ensemble = preset_ensemble(id);
            }
        } else {
            reject(self.ensemble.is_some(), "ensemble")?;
        }

        // Exactly the matching parameter table, materialized when absent.
        macro_rules! table {
            ($field:ident, $id:ident) => {
                if id == ExperimentId::$id {
                    if self.$field.is_none() {
                        self.$field = Some(Default::default());
                    }
                } else if self.$field.is_some() {
                    return Err(Error::Config(format!(
                        "config for the {id} experiment carries a [{}] table",
                        stringify!($field)
                    )));
                }
            };
        }
        table!(acw, Acw);
        table!(mixing, Mixing);
        table!(lyapunov, Lyapunov);
        table!(ergodicity, Ergodicity);
        table!(steady, Steady);
        table!(particles, Particles);
        table!(convergence, Convergence);
        Ok(self)
    }

    /// The model section, required by this experiment.
    pub fn model(&self) -> Result<&ModelSection> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("configuration is not resolved (no model)".into()))
    }

    /// The solver section, required by this experiment.
    pub fn solver(&self) -> Result<&SolverSection> {
        self.solver
            .as_ref()
            .ok_or_else(|| Error::Config("configuration is not resolved (no solver)".into()))
    }

    /// The ensemble size, required by this experiment.
    pub fn members(&self) -> Result<u32> {
        self.ensemble
            .as_ref()
            .map(|e| e.members)
            .ok_or_else(|| Error::Config("configuration is not resolved (no ensemble)".into()))
    }
}
