//! Top Lyapunov exponents: noise-induced stabilization, measured.
//!
//! Two systems live here, one as a fully understood benchmark and one as
//! the object of study.
//!
//! **The planar benchmark** is the classical stabilization example of
//! Arnold, Crauel & Wihstutz: the linear Stratonovich SDE on `R²`
//!
//! ```text
//! dX = A·X dt + √2 K R·X ∘ dB,     A = diag(a, b),  R = ((0,1),(-1,0)),
//! ```
//!
//! whose rotational noise averages the quadratic form `⟨As, s⟩` over the
//! circle. Writing `X = r(cos ψ, sin ψ)`, the radius and angle decouple:
//!
//! ```text
//! d log r = (a cos²ψ + b sin²ψ) dt,
//! dψ      = (b − a) sin ψ cos ψ dt − √2 K dB,
//! ```
//!
//! so the top exponent is the stationary average `λ(K) = ∫ (a cos²ψ +
//! b sin²ψ) μ_K(dψ)`. The angular drift is the gradient of the periodic
//! potential `V(ψ) = −(a−b)/4 · cos 2ψ`, hence `μ_K ∝ exp(−V/K²)` is an
//! explicit Gibbs density and `λ(K)` reduces to a one-dimensional
//! quadrature — a genuinely independent check on the Monte-Carlo
//! integrator, with `λ(0⁺ from above) → max(a,b)` and `λ(K→∞) → (a+b)/2`:
//! strong rotation stabilizes whenever `a + b < 0 < max(a, b)`.
//!
//! **The equation itself** enters through its linearization at the uniform
//! state (see [`crate::solver::run_linearized`]). The top exponent is the
//! almost-sure growth rate `lim (1/t) log ‖v_t‖_{L²}`, estimated by
//! renormalizing `‖v‖` to one every `τ` time units and accumulating the
//! log factors; by cocycle additivity the schedule `τ` only controls
//! floating-point range, not the estimate. The split-parameter bound of
//! [`crate::meanfield::decay_margin`] provides the theoretical ceiling
//! `−(2π)² γ*` that the measurement is compared against: above the noise
//! threshold the measured exponent must sit below it.

use rayon::prelude::*;

use crate::meanfield::decay_margin;
use crate::noise::{IncrementSource, WhiteNoise};
use crate::rng::{Purpose, StreamRng};
use crate::solver::{run_linearized_driven, ModelParams, SolverConfig, Trajectory};
use crate::spectral::{SpectralField, TorusGrid};
use crate::{Error, Result};
use num_complex::Complex64;

/// The planar benchmark system: `dX = A·X dt + √2 K R·X ∘ dB` with
/// `A = diag(a, b)` and `R` the clockwise quarter turn `((0,1),(-1,0))`.
#[derive(Clone, Copy, Debug)]
pub struct AcwSystem {
    /// First diagonal entry of `A`.
    pub a: f64,
    /// Second diagonal entry of `A`.
    pub b: f64,
    /// Noise intensity `K ≥ 0`.
    pub intensity: f64,
}

impl AcwSystem {
    fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::InvalidSpec("matrix entries must be finite".into()));
        }
        if !(self.intensity >= 0.0) || !self.intensity.is_finite() {
            return Err(Error::InvalidSpec("noise intensity must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of a top Lyapunov exponent.
#[derive(Clone, Copy, Debug)]
pub struct LyapunovEstimate {
    /// Estimated exponent (per unit time).
    pub value: f64,
    /// Standard error of the ensemble mean (0 for a single member).
    pub stderr: f64,
    /// Time horizon of each member run.
    pub horizon: f64,
    /// Scheduled renormalizations per member.
    pub renormalizations: u32,
    /// Number of ensemble members.
    pub ensemble: usize,
}

/// Reduce per-member growth rates to a [`LyapunovEstimate`].
fn reduce_members(
    rates: &[f64],
    horizon: f64,
    renormalizations: u32,
) -> Result<LyapunovEstimate> {
    let n = rates.len();
    let value = rates.iter().sum::<f64>() / n as f64;
    if !value.is_finite() {
        return Err(Error::Numerics(
            "Lyapunov estimate is not finite (degenerate run)".into(),
        ));
    }
    let stderr = if n > 1 {
        let var = rates.iter().map(|r| (r - value).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(LyapunovEstimate {
        value,
        stderr,
        horizon,
        renormalizations,
        ensemble: n,
    })
}

/// Estimate the benchmark's top exponent by Heun integration of the planar
/// SDE from `x0`, renormalizing `|X|` to one every unit time.
///
/// Step-size guideline: `dt ≲ 1e-3 · min(1, 1/K²)` keeps the Stratonovich
/// (trapezoid) corrector resolved; horizons `T ≳ 100` give the angular
/// process time to equilibrate. Neither is enforced — short deterministic
/// runs (`K = 0`) are legitimate. Members draw disjoint driver streams, so
/// the estimate is independent of worker count.
pub fn acw_simulate(
    sys: &AcwSystem,
    t_end: f64,
    dt: f64,
    ensemble: usize,
    x0: [f64; 2],
    seed: u64,
) -> Result<LyapunovEstimate> {
    sys.validate()?;
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidSpec("need dt > 0 and T > 0".into()));
    }
    if ensemble == 0 {
        return Err(Error::InvalidSpec("ensemble must be nonempty".into()));
    }
    let r0 = (x0[0] * x0[0] + x0[1] * x0[1]).sqrt();
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::InvalidSpec("x0 must be finite and nonzero".into()));
    }
    let n_steps = (t_end / dt).round();
    if (t_end / dt - n_steps).abs() > 1e-9 * n_steps.max(1.0) {
        return Err(Error::InvalidSpec(format!(
            "dt = {dt} does not divide T = {t_end}"
        )));
    }
    if n_steps > f64::from(u32::MAX) {
        return Err(Error::InvalidSpec("too many steps for the counter".into()));
    }
    let n_steps = n_steps as u32;
    let steps_per_unit = ((1.0 / dt).round() as u32).clamp(1, n_steps);

    let rates = (0..ensemble as u32)
        .into_par_iter()
        .map(|member| acw_member(sys, n_steps, dt, steps_per_unit, x0, seed, member))
        .collect::<Result<Vec<f64>>>()?;
    reduce_members(&rates, f64::from(n_steps) * dt, n_steps / steps_per_unit)
}

/// One member of the planar Monte-Carlo run: Heun in both the drift and
/// the noise term (the stochastic trapezoid rule converges to the
/// Stratonovich solution), log-radius accumulated at each renormalization.
fn acw_member(
    sys: &AcwSystem,
    n_steps: u32,
    dt: f64,
    steps_per_unit: u32,
    x0: [f64; 2],
    seed: u64,
    member: u32,
) -> Result<f64> {
    let rng = StreamRng::new(seed, member, Purpose::Auxiliary);
    let sqrt_dt = dt.sqrt();
    let g = std::f64::consts::SQRT_2 * sys.intensity;
    let (a, b) = (sys.a, sys.b);

    let r0 = (x0[0] * x0[0] + x0[1] * x0[1]).sqrt();
    let (mut x, mut y) = (x0[0] / r0, x0[1] / r0);
    let mut log_r = 0.0f64;
    let mut cached = 0.0f64;
    for s in 0..n_steps {
        let db = if s % 2 == 0 {
            let (g0, g1) = rng.normal_pair(s / 2, 0, 0);
            cached = g1;
            g0
        } else {
            cached
        } * sqrt_dt;
        // Drift A·X and noise vector field √2 K R·X at the current point,
        let (fx, fy) = (a * x, b * y);
        let (gx, gy) = (g * y, -g * x);
        // ... Euler predictor, ...
        let xp = x + fx * dt + gx * db;
        let yp = y + fy * dt + gy * db;
        // ... then the trapezoid corrector in both terms.
        x += 0.5 * (fx + a * xp) * dt + 0.5 * (gx + g * yp) * db;
        y += 0.5 * (fy + b * yp) * dt + 0.5 * (gy - g * xp) * db;
        if (s + 1) % steps_per_unit == 0 {
            let r = (x * x + y * y).sqrt();
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Numerics(format!(
                    "planar run degenerated at t = {:.3}: |X| = {r:.3e}",
                    f64::from(s + 1) * dt
                )));
            }
            log_r += r.ln();
            x /= r;
            y /= r;
        }
    }
    let r = (x * x + y * y).sqrt();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Numerics("planar run degenerated at t_end".into()));
    }
    Ok((log_r + r.ln()) / (f64::from(n_steps) * dt))
}

/// Evaluate the benchmark's exponent by quadrature against the stationary
/// angular law: `λ(K) = ∫ (a cos²ψ + b sin²ψ) μ_K(dψ)` with the Gibbs
/// density `μ_K ∝ exp((a−b) cos 2ψ / (4K²))` on the circle.
///
/// `resolution` is the number of trapezoid nodes (the integrand is smooth
/// and periodic, so convergence is spectral; a few hundred nodes reach
/// rounding for moderate `(a−b)/K²`). Requires `K > 0`: without noise the
/// angular process has no unique stationary law in general.
pub fn acw_fk_quadrature(sys: &AcwSystem, resolution: usize) -> Result<f64> {
    sys.validate()?;
    if sys.intensity <= 0.0 {
        return Err(Error::InvalidSpec(
            "the stationary angular law needs K > 0".into(),
        ));
    }
    if resolution < 8 {
        return Err(Error::InvalidSpec("quadrature needs ≥ 8 nodes".into()));
    }
    let beta = (sys.a - sys.b) / (4.0 * sys.intensity * sys.intensity);
    let mut weight_sum = 0.0;
    let mut integral = 0.0;
    for j in 0..resolution {
        let psi = std::f64::consts::TAU * j as f64 / resolution as f64;
        // Shift by the maximum of the exponent so large β cannot overflow;
        // the shift cancels in the ratio.
        let w = (beta * ((2.0 * psi).cos() - 1.0)).exp();
        let c = psi.cos();
        let s = psi.sin();
        weight_sum += w;
        integral += w * (sys.a * c * c + sys.b * s * s);
    }
    Ok(integral / weight_sum)
}

/// Top-exponent estimate for the linearized equation, together with the
/// theoretical ceiling it is measured against.
#[derive(Clone, Debug)]
pub struct SpdeLyapunov {
    /// Monte-Carlo estimate from renormalized linearized runs.
    pub estimate: LyapunovEstimate,
    /// Split-parameter bound `−(2π)² γ*` evaluated for the run's own noise
    /// truncation (0 when no decay is guaranteed at this intensity).
    pub bound: f64,
}

/// A window into a substep-resolved driver: chunked runs see the
/// continuation of one realization, not a replay of its beginning.
struct WindowedDriver<'a> {
    inner: &'a WhiteNoise,
    offset: u32,
}

impl IncrementSource for WindowedDriver<'_> {
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn fill(&self, substep: u32, buf: &mut [Complex64]) {
        self.inner.fill(self.offset + substep, buf);
    }
}

/// Estimate the top Lyapunov exponent of the linearization at the uniform
/// state by long runs with `‖v‖_{L²}` renormalized to one every
/// `renorm_period` time units.
///
/// Each member draws its own mean-free random unit field `v0` (low-mode
/// band, [`Purpose::InitialData`] stream) and its own driver realization;
/// `cfg.t_end` is the per-member horizon, and `renorm_period` must be a
/// multiple of `cfg.dt` dividing it. The norm cap is lifted — exponential
/// growth is what is being measured — and within-chunk extreme-norm
/// rescaling stays active, so arbitrarily steep decay cannot underflow.
pub fn spde_top_lyapunov(
    params: &ModelParams,
    cfg: &SolverConfig,
    ensemble: usize,
    renorm_period: f64,
    seed: u64,
) -> Result<SpdeLyapunov> {
    params.validate()?;
    if ensemble == 0 {
        return Err(Error::InvalidSpec("ensemble must be nonempty".into()));
    }
    if !(renorm_period > 0.0) || !renorm_period.is_finite() {
        return Err(Error::InvalidSpec("renorm period must be positive".into()));
    }
    let steps_per_chunk = (renorm_period / cfg.dt).round();
    if steps_per_chunk < 1.0
        || (renorm_period / cfg.dt - steps_per_chunk).abs() > 1e-9 * steps_per_chunk
    {
        return Err(Error::InvalidSpec(format!(
            "dt = {} does not divide the renorm period {renorm_period}",
            cfg.dt
        )));
    }
    let n_chunks = (cfg.t_end / renorm_period).round();
    if n_chunks < 1.0 || (cfg.t_end / renorm_period - n_chunks).abs() > 1e-9 * n_chunks {
        return Err(Error::InvalidSpec(format!(
            "renorm period {renorm_period} does not divide t_end = {}",
            cfg.t_end
        )));
    }
    let (n_chunks, steps_per_chunk) = (n_chunks as u32, steps_per_chunk as u32);

    let mut chunk_cfg = cfg.clone();
    chunk_cfg.t_end = renorm_period;
    chunk_cfg.renormalize = true;
    chunk_cfg.max_norm = f64::INFINITY;
    chunk_cfg.record_every = u32::MAX;
    chunk_cfg.track_modes = Vec::new();

    let horizon = f64::from(n_chunks) * renorm_period;
    let rates = (0..ensemble as u32)
        .into_par_iter()
        .map(|member| {
            let mut v = random_unit_field(
                params.potential.grid(),
                &StreamRng::new(seed, member, Purpose::InitialData),
            );
            let driver = WhiteNoise::new(
                StreamRng::new(seed, member, Purpose::CommonNoise),
                chunk_cfg.dt / f64::from(chunk_cfg.substeps),
            );
            let mut total_log = 0.0f64;
            for chunk in 0..n_chunks {
                let window = WindowedDriver {
                    inner: &driver,
                    offset: chunk * steps_per_chunk * chunk_cfg.substeps,
                };
                let out: Trajectory = run_linearized_driven(params, &chunk_cfg, &v, &window)?;
                let norm = out.final_field.l2_norm();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::Numerics(format!(
                        "linearized run degenerated in chunk {chunk}: ‖v‖ = {norm:.3e}"
                    )));
                }
                total_log += out.log_scale + norm.ln();
                v = out.final_field;
                v.scale(1.0 / norm);
            }
            Ok(total_log / horizon)
        })
        .collect::<Result<Vec<f64>>>()?;

    let estimate = reduce_members(&rates, horizon, n_chunks)?;
    let margin = decay_margin(&params.potential, params.nu, &params.noise)?;
    Ok(SpdeLyapunov {
        estimate,
        bound: -std::f64::consts::TAU.powi(2) * margin,
    })
}

/// A mean-free random field with unit `L²` norm, supported on the modes
/// `0 < |k|² ≤ 4`: independent complex Gaussian coefficients on the primary
/// half lattice, reflected conjugate-symmetrically.
pub(crate) fn random_unit_field(grid: TorusGrid, rng: &StreamRng) -> SpectralField {
    let mut v = SpectralField::zero(grid);
    let mut slot = 0u32;
    let mut modes: Vec<Vec<i64>> = Vec::new();
    grid.for_each_mode(|_, k| {
        let ksq: i64 = k.iter().map(|&x| x * x).sum();
        let primary = k.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0);
        if primary && ksq <= 4 {
            modes.push(k.to_vec());
        }
    });
    for k in &modes {
        let (g0, g1) = rng.normal_pair(0, slot, 0);
        v.set_mode_pair(k, Complex64::new(g0, g1) / 2.0);
        slot += 1;
    }
    let norm = v.l2_norm();
    v.scale(1.0 / norm);
    v
}
