//! Time integration of the interacting SPDE and its linearizations.
//!
//! The equation advanced here, in Stratonovich form on `T^d`, is
//!
//! ```text
//! dρ = [ν Δρ + ∇·(ρ ∇(W∗ρ))] dt + √2 K ∇·(ρ ∘ dξ_t),
//! ```
//!
//! with `ξ` the divergence-free band noise of [`crate::noise`]. Two schemes:
//!
//! * **Strang** — the production path. Each macro step composes a
//!   deterministic half step (exponential integrator on the stiff heat
//!   part, explicit dealiased pseudo-spectral interaction), the exact
//!   pull-back of the field through the noise's characteristics over the
//!   macro step (semi-Lagrangian: backward flow of the grid nodes, then
//!   fast band-limited evaluation), and another deterministic half step.
//!   The transport substep is pathwise Stratonovich — no corrector terms —
//!   and inherits the robustness of the flow backends at strong noise.
//! * **ItoEm** — exponential Euler–Maruyama on the Itô form: the
//!   integrating factor (heat part plus the corrector `K²q Δρ` from the
//!   Stratonovich conversion) is applied first, then the interaction and
//!   the explicit divergence noise term `√2K ∇·(ρ ΔV)` are added at the
//!   propagated state. Kept as the independent cross-check scheme; it
//!   loses stability at strong noise where the Strang path does not.
//!
//! Both schemes consume the *same* substep-resolved driver: `ItoEm` sums
//! the substep increments over each macro step, so refining the splitting
//! or switching schemes compares identical noise realizations. The same
//! contract makes the diffusive rescaling `(ν, W, K) ↦ (W/ν, K/√ν)`,
//! `t ↦ νt` an exact pathwise identity, which the tests exploit.
//!
//! The linearized run applies, by construction, the exact derivative of
//! the nonlinear update at the uniform state: the interaction term
//! `Δ(W∗v)` is treated explicitly in the same Lawson half steps, and the
//! transport pull-back is linear as-is. Finite-difference quotients of the
//! nonlinear scheme therefore converge to the linearized scheme as the
//! perturbation size shrinks, with no splitting-bias floor.
//!
//! Mass (the `k = 0` mode) is conserved analytically; the semi-Lagrangian
//! re-banding conserves it only to quadrature accuracy. Density runs
//! transport the fluctuation, carry the mean through unchanged, and re-pin
//! the mean after every step, reporting the largest correction applied.
//! Carrying the mean separately also keeps the uniform state *exactly*
//! invariant: a zero fluctuation evaluates to zero at every preimage.

use num_complex::Complex64;

use crate::flow::{flow_white, Direction, Scheme};
use crate::noise::{IncrementSource, NoiseGeometry, NoiseSpec, PrescribedIncrements, WhiteNoise};
use crate::nufft::Evaluator;
use crate::rng::{Purpose, StreamRng};
use crate::spectral::{SpectralField, TorusGrid};
use crate::{Error, Result};

/// Time-stepping scheme for the SPDE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverScheme {
    /// Strang splitting around the exact transport pull-back.
    Strang,
    /// Exponential Euler–Maruyama on the Itô form.
    ItoEm,
}

/// Flow scheme used for the semi-Lagrangian transport substep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportBackend {
    /// Backward Heun chain (the reference construction).
    HeunChain,
    /// Exact volume-preserving shear palindrome (robust at strong noise).
    ShearSplit,
}

impl TransportBackend {
    pub(crate) fn scheme(self) -> Scheme {
        match self {
            TransportBackend::HeunChain => Scheme::Heun,
            TransportBackend::ShearSplit => Scheme::ShearSplit,
        }
    }
}

/// Integration controls shared by every run entry point.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Scheme for the macro steps.
    pub scheme: SolverScheme,
    /// Flow backend for the transport substep (Strang only).
    pub backend: TransportBackend,
    /// Macro time step.
    pub dt: f64,
    /// Noise substeps per macro step (the driver's resolution).
    pub substeps: u32,
    /// Final time.
    pub t_end: f64,
    /// Record an observable sample every this many macro steps.
    pub record_every: u32,
    /// Abort with a numerics error if the L² norm exceeds this.
    pub max_norm: f64,
    /// Rescale the field to unit L² norm when it leaves `[1e-30, 1e30]`,
    /// accumulating the logarithm (linear dynamics only — decay over long
    /// mixing horizons underflows f64 otherwise).
    pub renormalize: bool,
    /// Fourier modes whose coefficients are recorded with each sample.
    pub track_modes: Vec<Vec<i64>>,
}

impl SolverConfig {
    /// Strang/shear defaults at the given resolution and horizon.
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            scheme: SolverScheme::Strang,
            backend: TransportBackend::ShearSplit,
            dt,
            substeps: 1,
            t_end,
            record_every: 10,
            max_norm: 1e3,
            renormalize: false,
            track_modes: Vec::new(),
        }
    }

    pub(crate) fn validate(&self) -> Result<(u32, u32)> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidSpec("macro step dt must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidSpec("need at least one noise substep".into()));
        }
        if self.t_end < 0.0 {
            return Err(Error::InvalidSpec("t_end must be nonnegative".into()));
        }
        let steps = self.t_end / self.dt;
        let n = steps.round();
        if (steps - n).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "dt = {} does not divide t_end = {}",
                self.dt, self.t_end
            )));
        }
        Ok((n as u32, self.record_every.max(1)))
    }
}

/// The model: diffusion ν, interaction potential W, transport noise.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Diffusion coefficient (≥ 0; 0 is pure transport).
    pub nu: f64,
    /// Interaction potential `W` (real, even — its transform is real).
    pub potential: SpectralField,
    /// Transport-noise specification.
    pub noise: NoiseSpec,
}

impl ModelParams {
    /// Check the standing assumptions (ν ≥ 0, even real potential,
    /// matching dimensions).
    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidSpec("diffusion ν must be ≥ 0".into()));
        }
        if self.potential.grid().dim() != self.noise.dim() {
            return Err(Error::InvalidSpec(
                "potential and noise dimensions disagree".into(),
            ));
        }
        let worst_im = self
            .potential
            .coefficients()
            .iter()
            .map(|c| c.im.abs())
            .fold(0.0, f64::max);
        if worst_im > 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "potential must be even (real transform); max |Im Ŵ| = {worst_im:.3e}"
            )));
        }
        Ok(())
    }
}

/// One recorded observable sample along a trajectory.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Time of the sample.
    pub t: f64,
    /// Mean of the field (`û(0)`).
    pub mass: f64,
    /// L² norm of the (possibly rescaled) field.
    pub l2: f64,
    /// Homogeneous H⁻¹ norm of the fluctuation (k ≠ 0 modes).
    pub hminus1: f64,
    /// Minimum of the physical samples.
    pub min_value: f64,
    /// Accumulated log of renormalization factors (0 unless renormalizing;
    /// `log‖u(t)‖ = log_scale + ln(l2)`).
    pub log_scale: f64,
    /// Coefficients of the tracked modes, in config order.
    pub modes: Vec<Complex64>,
}

/// A completed run: samples, the final field, and bookkeeping flags.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Observable samples (always includes t = 0 and t = t_end).
    pub samples: Vec<Sample>,
    /// Field at t_end (rescaled if renormalization is active).
    pub final_field: SpectralField,
    /// Accumulated log of renormalization factors at t_end.
    pub log_scale: f64,
    /// Set when any recorded physical minimum dropped below −1e-3
    /// (discretization undershoot of a density; the equation preserves
    /// positivity).
    pub negativity_flagged: bool,
    /// Largest mass correction the mean-pinning projection applied.
    pub max_mass_correction: f64,
}

/// Deterministic part of the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Drift {
    /// Full interaction drift `∇·(ρ ∇(W∗ρ))` (plus the heat part).
    McKeanVlasov,
    /// Its derivative at the uniform state, `Δ(W∗v)` (plus the heat part).
    LinearizedUniform,
    /// Heat part only (pure transport when ν = 0).
    DiffusionOnly,
}

/// Advance the full nonlinear SPDE from `u0`.
///
/// `seed`/`member` address the driver stream (common noise); identical
/// arguments reproduce the trajectory exactly.
pub fn run_spde(
    params: &ModelParams,
    cfg: &SolverConfig,
    u0: &SpectralField,
    seed: u64,
    member: u32,
) -> Result<Trajectory> {
    if cfg.renormalize {
        return Err(Error::InvalidSpec(
            "renormalization applies to linear dynamics only".into(),
        ));
    }
    let noise = white_driver(cfg, seed, member);
    integrate(params, cfg, u0, Drift::McKeanVlasov, &noise, 1.0, true)
}

/// Advance the linearization of the SPDE at the uniform state ρ ≡ 1:
/// `dv = [νΔv + Δ(W∗v)] dt + √2K ∇·(v ∘ dξ)`, discretized as the exact
/// derivative of the nonlinear update on the same driver.
pub fn run_linearized(
    params: &ModelParams,
    cfg: &SolverConfig,
    v0: &SpectralField,
    seed: u64,
    member: u32,
) -> Result<Trajectory> {
    let noise = white_driver(cfg, seed, member);
    integrate(params, cfg, v0, Drift::LinearizedUniform, &noise, 1.0, false)
}

/// Advance the linearization, but driven by an explicit increment source
/// instead of a freshly keyed white-noise stream. This is how long Lyapunov
/// runs window one driver path: an offset view of the same [`WhiteNoise`]
/// continues the realization across renormalization chunks.
pub fn run_linearized_driven(
    params: &ModelParams,
    cfg: &SolverConfig,
    v0: &SpectralField,
    source: &impl IncrementSource,
) -> Result<Trajectory> {
    integrate(params, cfg, v0, Drift::LinearizedUniform, source, 1.0, false)
}

/// Advance the passive scalar `du = νΔu dt + √2K ∇·(u ∘ dξ)` (no
/// interaction). With ν = 0 this is pure transport; `ItoEm` realizes the
/// Itô form `(ν + K²q)Δu dt + √2K ∇·(u dV)`.
pub fn run_pure_transport(
    params: &ModelParams,
    cfg: &SolverConfig,
    u0: &SpectralField,
    seed: u64,
    member: u32,
) -> Result<Trajectory> {
    let noise = white_driver(cfg, seed, member);
    integrate(params, cfg, u0, Drift::DiffusionOnly, &noise, 1.0, true)
}

/// Advance the *controlled* nonlinear equation: the transport is driven by
/// prescribed per-substep increments (a deterministic control, integrated
/// pathwise — the scheme must be Strang), with the deterministic drift
/// scaled by `alpha`.
pub fn run_controlled(
    params: &ModelParams,
    cfg: &SolverConfig,
    u0: &SpectralField,
    control: &PrescribedIncrements,
    alpha: f64,
) -> Result<Trajectory> {
    if cfg.scheme != SolverScheme::Strang {
        return Err(Error::InvalidSpec(
            "controlled runs integrate the transport pathwise (Strang)".into(),
        ));
    }
    if cfg.renormalize {
        return Err(Error::InvalidSpec(
            "renormalization applies to linear dynamics only".into(),
        ));
    }
    let (n_steps, _) = cfg.validate()?;
    let needed = n_steps as usize * cfg.substeps as usize;
    if control.len() < needed {
        return Err(Error::InvalidSpec(format!(
            "control path provides {} substeps, needs {needed}",
            control.len()
        )));
    }
    integrate(params, cfg, u0, Drift::McKeanVlasov, control, alpha, true)
}

fn white_driver(cfg: &SolverConfig, seed: u64, member: u32) -> WhiteNoise {
    WhiteNoise::new(
        StreamRng::new(seed, member, Purpose::CommonNoise),
        cfg.dt / f64::from(cfg.substeps),
    )
}

/// Shared integration core.
fn integrate(
    params: &ModelParams,
    cfg: &SolverConfig,
    u0: &SpectralField,
    drift: Drift,
    source: &impl IncrementSource,
    alpha: f64,
    pin_mass: bool,
) -> Result<Trajectory> {
    params.validate()?;
    let (n_steps, record_every) = cfg.validate()?;
    let grid = u0.grid();
    if grid.dim() != params.noise.dim() {
        return Err(Error::InvalidSpec(
            "initial datum and noise dimensions disagree".into(),
        ));
    }
    if drift != Drift::DiffusionOnly && grid != params.potential.grid() {
        return Err(Error::InvalidSpec(
            "initial datum and potential must share a grid".into(),
        ));
    }
    let geom = NoiseGeometry::new(&params.noise);

    // Exponential factors of the heat part (plus, for the Itô scheme, the
    // Stratonovich corrector). The interaction drift stays explicit so the
    // linearized run is the exact derivative of the nonlinear one.
    let corrector = if cfg.scheme == SolverScheme::ItoEm {
        params.noise.ito_corrector()?
    } else {
        0.0
    };
    let mut symbol = vec![0.0; grid.len()];
    {
        let symbol_slice = &mut symbol[..];
        grid.for_each_mode(|flat, k| {
            let lap = TorusGrid::laplace_symbol(k);
            symbol_slice[flat] = -(alpha * params.nu + corrector) * lap;
        });
    }
    let half_factor: Vec<f64> = symbol.iter().map(|s| (0.5 * cfg.dt * s).exp()).collect();
    let full_factor: Vec<f64> = symbol.iter().map(|s| (cfg.dt * s).exp()).collect();

    let mut u = u0.clone();
    u.dealias();
    let target_mass = u.mass();
    let mut log_scale = 0.0;
    let mut max_mass_correction = 0.0f64;
    let mut negativity = false;
    let mut samples = Vec::with_capacity(n_steps as usize / record_every as usize + 2);
    record(&mut samples, 0.0, &u, log_scale, &cfg.track_modes, &mut negativity);

    // Grid nodes in row-major order, reused by the semi-Lagrangian step.
    let nodes: Vec<f64> = {
        let mut pts = Vec::with_capacity(grid.len() * grid.dim());
        grid.for_each_index(|_, idx| {
            for &i in idx {
                pts.push(grid.coord(i));
            }
        });
        pts
    };
    let mut incr = vec![Complex64::new(0.0, 0.0); geom.n_channels()];

    for n in 0..n_steps {
        match cfg.scheme {
            SolverScheme::Strang => {
                half_deterministic(&mut u, params, drift, alpha, &half_factor, cfg.dt)?;
                transport_pullback(&mut u, &geom, source, cfg, n, &nodes)?;
                half_deterministic(&mut u, params, drift, alpha, &half_factor, cfg.dt)?;
            }
            SolverScheme::ItoEm => {
                // Driver increment summed over the macro step. The
                // integrating factor is applied first and the drift/noise
                // terms are evaluated at the propagated state; evaluating
                // them before the factor instead flips the sign of the
                // second-order error and the scheme gap then approaches
                // its first-order rate from below rather than above.
                span_into(source, n * cfg.substeps, (n + 1) * cfg.substeps, &mut incr);
                apply_factor(&mut u, &full_factor);
                let mut update = u.clone();
                if let Some(mut term) = drift_term(&u, params, drift)? {
                    term.scale(alpha * cfg.dt);
                    update.add_scaled(&term, 1.0)?;
                }
                let noise_term = noise_divergence(&u, &geom, &incr)?;
                update.add_scaled(&noise_term, 1.0)?;
                u = update;
            }
        }
        if pin_mass {
            let drift_mass = (u.mass() - target_mass).abs();
            max_mass_correction = max_mass_correction.max(drift_mass);
            u.set_mean(target_mass);
        }
        let l2 = u.l2_norm();
        if !l2.is_finite() || l2 > cfg.max_norm {
            return Err(Error::Numerics(format!(
                "norm blow-up at t = {:.6}: ‖u‖ = {l2:.3e}",
                (f64::from(n) + 1.0) * cfg.dt
            )));
        }
        if cfg.renormalize && l2 > 0.0 && !(1e-30..=1e30).contains(&l2) {
            u.scale(1.0 / l2);
            log_scale += l2.ln();
        }
        if (n + 1) % record_every == 0 || n + 1 == n_steps {
            let t = (f64::from(n) + 1.0) * cfg.dt;
            record(&mut samples, t, &u, log_scale, &cfg.track_modes, &mut negativity);
        }
    }

    Ok(Trajectory {
        samples,
        final_field: u,
        log_scale,
        negativity_flagged: negativity,
        max_mass_correction,
    })
}

/// Explicit (non-heat) part of the deterministic drift.
fn drift_term(
    u: &SpectralField,
    params: &ModelParams,
    drift: Drift,
) -> Result<Option<SpectralField>> {
    match drift {
        Drift::McKeanVlasov => Ok(Some(interaction_divergence(u, &params.potential)?)),
        Drift::LinearizedUniform => Ok(Some(params.potential.convolve(u)?.laplacian())),
        Drift::DiffusionOnly => Ok(None),
    }
}

/// One deterministic half step: explicit (Lawson–Euler) interaction, then
/// the exponential factor of the heat part.
fn half_deterministic(
    u: &mut SpectralField,
    params: &ModelParams,
    drift: Drift,
    alpha: f64,
    half_factor: &[f64],
    dt: f64,
) -> Result<()> {
    if let Some(mut term) = drift_term(u, params, drift)? {
        term.scale(alpha * 0.5 * dt);
        u.add_scaled(&term, 1.0)?;
    }
    apply_factor(u, half_factor);
    Ok(())
}

/// Semi-Lagrangian transport over macro step `n`: pull the grid nodes
/// backward through the substeps, evaluate the current fluctuation there,
/// and re-band. The mean rides along unchanged — constants are exactly
/// invariant under composition with the (volume-preserving) flow.
fn transport_pullback(
    u: &mut SpectralField,
    geom: &NoiseGeometry,
    source: &impl IncrementSource,
    cfg: &SolverConfig,
    n: u32,
    nodes: &[f64],
) -> Result<()> {
    if geom.n_channels() == 0 || geom.spec().intensity() == 0.0 {
        return Ok(());
    }
    let grid = u.grid();
    let mut pts = nodes.to_vec();
    flow_white(
        geom,
        source,
        &mut pts,
        n * cfg.substeps..(n + 1) * cfg.substeps,
        cfg.backend.scheme(),
        Direction::Inverse,
    );
    let mean = u.mass();
    let mut fluct = u.clone();
    fluct.set_mean(0.0);
    let evaluator = Evaluator::new(&fluct)?;
    let vals = evaluator.eval(&pts);
    let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&grid.shape()), vals)
        .expect("value buffer matches grid shape");
    let mut next = SpectralField::from_physical(grid, &arr)?;
    next.dealias();
    next.set_mean(next.mass() + mean);
    *u = next;
    Ok(())
}

/// Dealiased pseudo-spectral interaction term `∇·(u ∇(W∗u))`.
fn interaction_divergence(u: &SpectralField, w: &SpectralField) -> Result<SpectralField> {
    let grid = u.grid();
    let u_phys = u.to_physical();
    let mut components = Vec::with_capacity(grid.dim());
    for g in w.convolve(u)?.grad() {
        let prod = &u_phys * &g.to_physical();
        let mut hat = SpectralField::from_physical(grid, &prod)?;
        hat.dealias();
        components.push(hat);
    }
    let mut div = SpectralField::divergence(&components)?;
    div.dealias();
    Ok(div)
}

/// Dealiased pseudo-spectral Itô noise term `√2K ∇·(u ΔV)` (the √2K and
/// increment magnitudes live inside the velocity assembly).
fn noise_divergence(
    u: &SpectralField,
    geom: &NoiseGeometry,
    incr: &[Complex64],
) -> Result<SpectralField> {
    let grid = u.grid();
    if geom.n_channels() == 0 {
        return Ok(SpectralField::zero(grid));
    }
    let velocity = geom.velocity_field(grid, incr)?;
    let u_phys = u.to_physical();
    let mut components = Vec::with_capacity(grid.dim());
    for vj in &velocity {
        let prod = &u_phys * &vj.to_physical();
        let mut hat = SpectralField::from_physical(grid, &prod)?;
        hat.dealias();
        components.push(hat);
    }
    let mut div = SpectralField::divergence(&components)?;
    div.dealias();
    Ok(div)
}

fn span_into(source: &impl IncrementSource, from: u32, to: u32, buf: &mut [Complex64]) {
    for b in buf.iter_mut() {
        *b = Complex64::new(0.0, 0.0);
    }
    let mut tmp = vec![Complex64::new(0.0, 0.0); buf.len()];
    for s in from..to {
        source.fill(s, &mut tmp);
        for (b, t) in buf.iter_mut().zip(&tmp) {
            *b += t;
        }
    }
}

fn apply_factor(u: &mut SpectralField, factor: &[f64]) {
    for (c, &f) in u
        .coefficients_mut()
        .as_slice_mut()
        .expect("contiguous")
        .iter_mut()
        .zip(factor)
    {
        *c *= f;
    }
}

fn record(
    samples: &mut Vec<Sample>,
    t: f64,
    u: &SpectralField,
    log_scale: f64,
    track_modes: &[Vec<i64>],
    negativity: &mut bool,
) {
    let phys = u.to_physical();
    let min_value = phys.iter().copied().fold(f64::INFINITY, f64::min);
    if min_value < -1e-3 {
        *negativity = true;
    }
    let modes = track_modes.iter().map(|k| u.coefficient(k)).collect();
    samples.push(Sample {
        t,
        mass: u.mass(),
        l2: u.l2_norm(),
        hminus1: u.sobolev_norm(-1.0),
        min_value,
        log_scale,
        modes,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::meanfield::{fourier_potential, PotentialSpec};

    fn unit_noise(k: f64) -> NoiseSpec {
        NoiseSpec::unit_shell(2, k).unwrap()
    }

    fn single_mode_potential(grid: TorusGrid) -> SpectralField {
        fourier_potential(grid, &PotentialSpec::single_mode(vec![1, 1])).unwrap()
    }

    /// Smooth positive test density with a handful of low modes.
    fn bumpy_density(grid: TorusGrid) -> SpectralField {
        let tau = std::f64::consts::TAU;
        SpectralField::from_fn(grid, |x| {
            1.0 + 0.3 * (tau * x[0]).cos() + 0.2 * (tau * (x[0] + x[1])).sin()
                - 0.15 * (tau * 2.0 * x[1]).cos()
        })
    }

    #[test]
    fn uniform_state_is_invariant_for_both_schemes() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let params = ModelParams {
            nu: 0.3,
            potential: single_mode_potential(grid),
            noise: unit_noise(1.5),
        };
        let u0 = SpectralField::constant(grid, 1.0);
        for scheme in [SolverScheme::Strang, SolverScheme::ItoEm] {
            let mut cfg = SolverConfig::new(1e-2, 0.2);
            cfg.scheme = scheme;
            let out = run_spde(&params, &cfg, &u0, 7, 0).unwrap();
            let dev = out
                .final_field
                .coefficients()
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { (c - 1.0).norm() } else { c.norm() })
                .fold(0.0, f64::max);
            assert!(dev < 1e-13, "uniform state drifted ({scheme:?}): {dev:.3e}");
        }
    }

    #[test]
    fn heat_decay_matches_the_exact_semigroup() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let params = ModelParams {
            nu: 0.05,
            potential: SpectralField::zero(grid),
            noise: unit_noise(0.0),
        };
        let tau = std::f64::consts::TAU;
        let u0 = SpectralField::from_fn(grid, |x| {
            1.0 + 0.5 * (tau * x[0]).cos() + 0.25 * (tau * (2.0 * x[0] + x[1])).sin()
        });
        let cfg = SolverConfig::new(1e-2, 1.0);
        let out = run_spde(&params, &cfg, &u0, 1, 0).unwrap();
        let u0_hat = u0.coefficients().as_slice().unwrap().to_vec();
        let final_hat = out.final_field.coefficients().as_slice().unwrap().to_vec();
        let mut worst = 0.0f64;
        grid.for_each_mode(|flat, k| {
            let lam = -params.nu * TorusGrid::laplace_symbol(k);
            let expect = u0_hat[flat] * lam.exp();
            worst = worst.max((final_hat[flat] - expect).norm());
        });
        assert!(worst < 1e-10, "heat semigroup error: {worst:.3e}");
    }

    #[test]
    fn linearized_growth_matches_the_diagonal_spectrum() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let params = ModelParams {
            nu: 0.3,
            potential: single_mode_potential(grid),
            noise: unit_noise(0.0),
        };
        let mut v0 = SpectralField::zero(grid);
        v0.set_mode_pair(&[1, 1], Complex64::new(0.5, -0.25));
        v0.set_mode_pair(&[3, 0], Complex64::new(0.1, 0.0));
        let t_end = 0.05;
        let cfg = SolverConfig::new(1e-4, t_end);
        let out = run_linearized(&params, &cfg, &v0, 3, 0).unwrap();
        // The fastest mode grows at λ_(1,1) = −|2π(1,1)|²(ν + Ŵ) = 8π²·0.2;
        // the explicit treatment of the interaction biases the measured
        // rate by (|2πk|²Ŵ)²·dt/4 ≈ 0.25% here.
        let rate_exact = 15.791_367_041_742_973;
        assert_abs_diff_eq!(
            8.0 * std::f64::consts::PI.powi(2) * 0.2,
            rate_exact,
            epsilon = 1e-12
        );
        let grown = out.final_field.coefficient(&[1, 1]).norm();
        let rate = (grown / v0.coefficient(&[1, 1]).norm()).ln() / t_end;
        assert!(
            (rate - rate_exact).abs() < 5e-3 * rate_exact,
            "measured growth {rate} vs {rate_exact}"
        );
        // Modes the potential does not touch follow the heat semigroup
        // exactly (no splitting bias).
        let lam30 = -0.3 * TorusGrid::laplace_symbol(&[3, 0]);
        let got30 = out.final_field.coefficient(&[3, 0]);
        let expect30 = Complex64::new(0.1, 0.0) * (lam30 * t_end).exp();
        assert!(
            (got30 - expect30).norm() < 1e-12,
            "heat-only mode error {:.3e}",
            (got30 - expect30).norm()
        );
    }

    #[test]
    fn linearization_is_the_derivative_of_the_nonlinear_flow() {
        let grid = TorusGrid::new(2, 24).unwrap();
        let params = ModelParams {
            nu: 0.4,
            potential: single_mode_potential(grid),
            noise: unit_noise(0.5),
        };
        let tau = std::f64::consts::TAU;
        let mut v0 = SpectralField::from_fn(grid, |x| {
            (tau * (x[0] + x[1])).cos() + 0.5 * (tau * x[1]).sin()
        });
        v0.scale(1.0 / v0.l2_norm());
        let eps = 1e-5;
        let mut rho0 = SpectralField::constant(grid, 1.0);
        rho0.add_scaled(&v0, eps).unwrap();
        let cfg = SolverConfig::new(1e-3, 0.05);
        let nonlinear = run_spde(&params, &cfg, &rho0, 11, 2).unwrap();
        let linear = run_linearized(&params, &cfg, &v0, 11, 2).unwrap();
        // (ρ(T) − 1)/ε vs v(T), same driver realization.
        let uniform = SpectralField::constant(grid, 1.0);
        let mut quotient = nonlinear.final_field.clone();
        quotient.add_scaled(&uniform, -1.0).unwrap();
        quotient.scale(1.0 / eps);
        let mut gap = quotient;
        gap.add_scaled(&linear.final_field, -1.0).unwrap();
        let rel = gap.l2_norm() / linear.final_field.l2_norm();
        assert!(rel < 1e-3, "finite-difference consistency: {rel:.3e}");
    }

    #[test]
    fn strang_with_heun_chain_matches_the_pull_back_oracle() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let params = ModelParams {
            nu: 0.0,
            potential: SpectralField::zero(grid),
            noise: unit_noise(0.1),
        };
        let tau = std::f64::consts::TAU;
        let u0 = SpectralField::from_fn(grid, |x| {
            1.0 + 0.4 * (tau * x[0]).cos() + 0.3 * (tau * (x[0] - x[1])).sin()
        });
        let mut cfg = SolverConfig::new(1e-3, 0.25);
        cfg.backend = TransportBackend::HeunChain;
        cfg.record_every = 1000;
        let solved = run_pure_transport(&params, &cfg, &u0, 21, 0).unwrap();
        let noise = WhiteNoise::new(StreamRng::new(21, 0, Purpose::CommonNoise), 1e-3);
        let geom = NoiseGeometry::new(&params.noise);
        let oracle = crate::flow::transport_scalar(&u0, &geom, &noise, 250, Scheme::Heun).unwrap();
        let mut gap = solved.final_field.clone();
        gap.add_scaled(&oracle, -1.0).unwrap();
        // The two paths share the flow maps; the gap is pure re-banding
        // and stays far below the tolerance while the winding spectrum is
        // resolved (it is not at this resolution once K ≳ 0.25).
        assert!(
            gap.l2_norm() < 5e-3,
            "solver vs pull-back oracle: {:.3e}",
            gap.l2_norm()
        );
    }

    #[test]
    fn pure_transport_preserves_l2_and_mixes_hminus1() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let tau = std::f64::consts::TAU;
        let u0 = SpectralField::from_fn(grid, |x| (tau * x[0]).cos() + (tau * x[1]).sin());

        // Weak noise, resolved winding: L² is conserved to a fraction of a
        // percent and the negative norm decays modestly.
        let params = ModelParams {
            nu: 0.0,
            potential: SpectralField::zero(grid),
            noise: unit_noise(0.2),
        };
        let mut cfg = SolverConfig::new(1e-3, 0.5);
        cfg.record_every = 100;
        let out = run_pure_transport(&params, &cfg, &u0, 17, 0).unwrap();
        let l2_end = out.final_field.l2_norm();
        assert!(
            (l2_end / u0.l2_norm() - 1.0).abs() < 2e-2,
            "L² drift: {}",
            l2_end / u0.l2_norm()
        );
        let h_start = out.samples[0].hminus1;
        let h_end = out.samples.last().unwrap().hminus1;
        assert!(
            h_end < 0.85 * h_start,
            "negative-norm mixing too weak: {h_start} → {h_end}"
        );

        // Strong noise: the winding cascades past the band and the scheme
        // dissipates rather than blowing up — the hallmark of transport
        // mixing is the collapse of the negative norm.
        let strong = ModelParams {
            nu: 0.0,
            potential: SpectralField::zero(grid),
            noise: unit_noise(1.0),
        };
        let out = run_pure_transport(&strong, &cfg, &u0, 17, 0).unwrap();
        assert!(out.final_field.l2_norm() <= 1.02 * u0.l2_norm());
        let h_start = out.samples[0].hminus1;
        let h_end = out.samples.last().unwrap().hminus1;
        assert!(
            h_end < 0.05 * h_start,
            "strong-noise mixing too weak: {h_start} → {h_end}"
        );
    }

    #[test]
    fn mass_is_pinned_and_corrections_stay_small() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let params = ModelParams {
            nu: 0.2,
            potential: single_mode_potential(grid),
            noise: unit_noise(0.25),
        };
        let u0 = bumpy_density(grid);
        let mut cfg = SolverConfig::new(1e-3, 0.25);
        cfg.record_every = 20;
        let out = run_spde(&params, &cfg, &u0, 5, 1).unwrap();
        for s in &out.samples {
            assert_abs_diff_eq!(s.mass, u0.mass(), epsilon = 1e-12);
        }
        assert!(
            out.max_mass_correction < 1e-6,
            "re-banding mass drift: {:.3e}",
            out.max_mass_correction
        );
    }

    /// The diffusive rescaling (ν, W, K) → (W/ν, K/√ν), t → νt is an exact
    /// pathwise identity on the same driver stream.
    #[test]
    fn diffusive_rescaling_is_a_pathwise_identity() {
        let grid = TorusGrid::new(2, 24).unwrap();
        let nu = 0.25f64;
        let w = single_mode_potential(grid);
        let mut w_scaled = w.clone();
        w_scaled.scale(1.0 / nu);
        let k = 0.4f64;
        let params = ModelParams {
            nu,
            potential: w,
            noise: unit_noise(k),
        };
        let rescaled = ModelParams {
            nu: 1.0,
            potential: w_scaled,
            noise: unit_noise(k / nu.sqrt()),
        };
        let u0 = bumpy_density(grid);
        let t_end = 0.2;
        let mut cfg = SolverConfig::new(1e-3, t_end);
        cfg.record_every = 50;
        let mut cfg2 = SolverConfig::new(1e-3 * nu, t_end * nu);
        cfg2.record_every = 50;
        for scheme in [SolverScheme::Strang, SolverScheme::ItoEm] {
            cfg.scheme = scheme;
            cfg2.scheme = scheme;
            let a = run_spde(&params, &cfg, &u0, 99, 3).unwrap();
            let b = run_spde(&rescaled, &cfg2, &u0, 99, 3).unwrap();
            let mut gap = a.final_field.clone();
            gap.add_scaled(&b.final_field, -1.0).unwrap();
            assert!(
                gap.l2_norm() < 1e-11,
                "rescaling identity broken ({scheme:?}): {:.3e}",
                gap.l2_norm()
            );
        }
    }

    #[test]
    fn scheme_gap_shrinks_at_first_order_on_a_shared_path() {
        let grid = TorusGrid::new(2, 24).unwrap();
        // Weak noise so the deterministic first-order splitting difference
        // dominates the mean-zero O(√dt) area terms the span-level Itô
        // scheme cannot see.
        let params = ModelParams {
            nu: 0.3,
            potential: single_mode_potential(grid),
            noise: unit_noise(0.025),
        };
        let u0 = bumpy_density(grid);
        // Fixed driver resolution (dt/substeps = 2.5e-4 throughout), so
        // every level sees the identical noise realization and only the
        // macro step changes.
        let gap_at = |dt: f64, substeps: u32| -> f64 {
            let mut cfg = SolverConfig::new(dt, 0.1);
            cfg.substeps = substeps;
            cfg.scheme = SolverScheme::Strang;
            let a = run_spde(&params, &cfg, &u0, 42, 0).unwrap();
            cfg.scheme = SolverScheme::ItoEm;
            let b = run_spde(&params, &cfg, &u0, 42, 0).unwrap();
            let mut gap = a.final_field.clone();
            gap.add_scaled(&b.final_field, -1.0).unwrap();
            gap.l2_norm()
        };
        let g0 = gap_at(2e-3, 8);
        let g1 = gap_at(1e-3, 4);
        let g2 = gap_at(5e-4, 2);
        assert!(
            g1 < g0 && g2 < g1,
            "gaps not decreasing: {g0:.3e}, {g1:.3e}, {g2:.3e}"
        );
        let order = (g0 / g2).log2() / 2.0;
        assert!(
            order > 0.95,
            "scheme gap order {order:.2} from {g0:.3e} → {g2:.3e}"
        );
    }

    #[test]
    fn blow_up_and_invalid_configs_are_reported() {
        let grid = TorusGrid::new(2, 24).unwrap();
        let params = ModelParams {
            nu: 0.01,
            potential: single_mode_potential(grid),
            noise: unit_noise(0.1),
        };
        // Far above the transition with a huge unstable amplitude the
        // interaction steepens the profile past the norm cap.
        let mut huge = SpectralField::constant(grid, 1.0);
        huge.set_mode_pair(&[1, 1], Complex64::new(300.0, 0.0));
        let cfg = SolverConfig::new(1e-2, 1.0);
        let err = run_spde(&params, &cfg, &huge, 1, 0);
        assert!(matches!(err, Err(Error::Numerics(_))), "{err:?}");

        let u0 = SpectralField::constant(grid, 1.0);
        let mut bad = SolverConfig::new(1e-2, 0.1);
        bad.substeps = 0;
        assert!(run_spde(&params, &bad, &u0, 1, 0).is_err());
        let odd = SolverConfig::new(3e-3, 0.1);
        assert!(run_spde(&params, &odd, &u0, 1, 0).is_err());
        let mut renorm = SolverConfig::new(1e-2, 0.1);
        renorm.renormalize = true;
        assert!(run_spde(&params, &renorm, &u0, 1, 0).is_err());

        let mut skew = SpectralField::zero(grid);
        skew.coefficients_mut()[ndarray::IxDyn(&[1, 0])] = Complex64::new(0.0, 0.4);
        let bad_params = ModelParams {
            nu: 0.1,
            potential: skew,
            noise: unit_noise(0.1),
        };
        assert!(bad_params.validate().is_err());
    }

    #[test]
    fn renormalization_tracks_the_log_norm() {
        let grid = TorusGrid::new(2, 16).unwrap();
        // Strong uniform decay: the norm underflows f64 long before t_end
        // without renormalization.
        let params = ModelParams {
            nu: 40.0,
            potential: SpectralField::zero(grid),
            noise: unit_noise(0.0),
        };
        let mut v0 = SpectralField::zero(grid);
        v0.set_mode_pair(&[1, 0], Complex64::new(0.5, 0.0));
        let mut cfg = SolverConfig::new(1e-2, 60.0);
        cfg.renormalize = true;
        cfg.record_every = 1000;
        let out = run_linearized(&params, &cfg, &v0, 2, 0).unwrap();
        let expected = -40.0 * TorusGrid::laplace_symbol(&[1, 0]) * 60.0;
        let got = out.log_scale + out.final_field.l2_norm().ln() - v0.l2_norm().ln();
        let rel = (got - expected).abs() / expected.abs();
        assert!(rel < 1e-10, "log-norm tracking error: {rel:.3e}");
    }
}
