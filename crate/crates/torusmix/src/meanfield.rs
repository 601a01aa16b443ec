//! Deterministic (K = 0) steady-state theory and the noise threshold.
//!
//! Without noise the equation is the gradient flow of the free energy
//!
//! ```text
//! E[ρ] = ν ∫ ρ log ρ + ½ ∬ W(x−y) ρ(x) ρ(y) dx dy,
//! ```
//!
//! whose critical points are exactly the fixed points of the Gibbs
//! self-consistency map `ρ ↦ exp(−(W∗ρ)/ν)/Z`. This module builds the
//! named interaction potentials, evaluates the free energy, locates steady
//! states by damped Picard iteration on the Gibbs map, diagonalizes the
//! linearization at the uniform state (symbol `−|2πk|²(ν + Ŵ(k))`), and
//! evaluates the sufficient noise intensity `K_crit` beyond which the
//! uniform state is the unique invariant distribution: for a split
//! parameter `ν′ ∈ (0, ν)` the threshold reads
//!
//! ```text
//! C_W^{(ν′)} − (ν − ν′) < ‖θ‖²_{h⁻¹} · C_d · K²,
//! C_W^{(ν′)} = max_{k: ν′+Ŵ(k)<0} |ν′ + Ŵ(k)| |k|²,
//! ```
//!
//! with the dimension constant `C_d` given in closed form. `K_crit`
//! minimizes the admissible `K` over `ν′`.

use num_complex::Complex64;

use crate::noise::NoiseSpec;
use crate::spectral::{SpectralField, TorusGrid};
use crate::{Error, Result};

/// Tolerance below which a Fourier coefficient counts as zero.
const TOL_ZERO: f64 = 1e-12;

/// Named interaction potentials (all normalized to `‖W‖_{L²} = 1`) and
/// explicit Fourier tables.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSpec {
    /// `W(x) = −N_k Π_i cos(2πk_i x_i)` with `N_k = 2^{d/2}`: one negative
    /// mode family, second-order transition at `ν_crit = N_k⁻¹`.
    SingleMode {
        /// Wavevector; every component must be nonzero.
        k: Vec<i64>,
    },
    /// Equal-weight sum of the cosine products at `ℓ` and `k = 2ℓ`, jointly
    /// normalized: first-order transition, with linear stability lost only
    /// below `ν_♯ = 2^{−(d+1)/2}`.
    TwoMode {
        /// Base wavevector; every component must be nonzero.
        l: Vec<i64>,
    },
    /// Explicit coefficient table `(k, Ŵ(k))`; symmetrized so that
    /// `Ŵ(−k) = Ŵ(k)` holds exactly.
    Explicit {
        /// Mode/value pairs; values are real (even potential).
        table: Vec<(Vec<i64>, f64)>,
    },
}

impl PotentialSpec {
    /// Single-mode potential at wavevector `k`.
    pub fn single_mode(k: Vec<i64>) -> Self {
        Self::SingleMode { k }
    }

    /// Two-mode potential with base wavevector `ℓ` (second mode `2ℓ`).
    pub fn two_mode(l: Vec<i64>) -> Self {
        Self::TwoMode { l }
    }

    /// The constant `N` for which the active Fourier coefficients of a
    /// named form equal `−1/N`, so that the uniform state loses linear
    /// stability exactly at `ν = 1/N`. For the single-mode form this is
    /// the cosine-product prefactor `2^{d/2}` itself; for the two-mode
    /// form the joint L² normalization spreads unit norm over twice as
    /// many modes and the constant becomes `2^{(d+1)/2}`. `None` for
    /// explicit tables.
    pub fn mode_normalization(&self, d: usize) -> Option<f64> {
        match self {
            Self::SingleMode { .. } => Some(2f64.powf(d as f64 / 2.0)),
            Self::TwoMode { .. } => Some(2f64.powf((d as f64 + 1.0) / 2.0)),
            Self::Explicit { .. } => None,
        }
    }
}

/// Place `value` at every sign pattern `(±k_1, …, ±k_d)` of `k`.
fn place_patterns(
    field: &mut SpectralField,
    k: &[i64],
    value: f64,
) -> Result<()> {
    let grid = field.grid();
    let d = grid.dim();
    if k.len() != d {
        return Err(Error::InvalidSpec(format!(
            "wavevector has {} components on a {d}-dimensional grid",
            k.len()
        )));
    }
    if k.iter().any(|&x| x == 0) {
        return Err(Error::InvalidSpec(
            "named potentials need all wavevector components nonzero".into(),
        ));
    }
    let mut pattern = vec![0i64; d];
    for signs in 0..(1usize << d) {
        for (i, p) in pattern.iter_mut().enumerate() {
            *p = if signs >> i & 1 == 1 { -k[i] } else { k[i] };
        }
        let Some(pos) = grid.mode_position(&pattern) else {
            return Err(Error::InvalidSpec(format!(
                "mode {pattern:?} falls outside the retained band"
            )));
        };
        field.coefficients_mut().as_slice_mut().unwrap()[pos] = Complex64::new(value, 0.0);
    }
    Ok(())
}

/// Assemble the interaction potential on `grid` with exact coefficients.
pub fn fourier_potential(grid: TorusGrid, spec: &PotentialSpec) -> Result<SpectralField> {
    let d = grid.dim();
    let mut w = SpectralField::zero(grid);
    match spec {
        PotentialSpec::SingleMode { k } => {
            // −N_k · 2^{−d} at each of the 2^d patterns, N_k = 2^{d/2}.
            let value = -2f64.powf(d as f64 / 2.0) / 2f64.powi(d as i32);
            place_patterns(&mut w, k, value)?;
        }
        PotentialSpec::TwoMode { l } => {
            let k2: Vec<i64> = l.iter().map(|&x| 2 * x).collect();
            // Shared prefactor 2^{(d−1)/2} keeps ‖W‖_{L²} = 1 across both
            // mode families.
            let value = -2f64.powf((d as f64 - 1.0) / 2.0) / 2f64.powi(d as i32);
            place_patterns(&mut w, l, value)?;
            place_patterns(&mut w, &k2, value)?;
        }
        PotentialSpec::Explicit { table } => {
            for (k, v) in table {
                if k.len() != d {
                    return Err(Error::InvalidSpec(format!(
                        "table wavevector has {} components on a {d}-dimensional grid",
                        k.len()
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::InvalidSpec("non-finite table value".into()));
                }
                let Some(pos) = grid.mode_position(k) else {
                    return Err(Error::InvalidSpec(format!(
                        "mode {k:?} falls outside the retained band"
                    )));
                };
                let neg: Vec<i64> = k.iter().map(|&x| -x).collect();
                let neg_pos = grid
                    .mode_position(&neg)
                    .expect("band is symmetric under k → −k");
                let coeff = Complex64::new(*v, 0.0);
                w.coefficients_mut().as_slice_mut().unwrap()[pos] = coeff;
                w.coefficients_mut().as_slice_mut().unwrap()[neg_pos] = coeff;
            }
        }
    }
    Ok(w)
}

/// Outcome of the phase-transition criterion: does some nonzero mode carry
/// a strictly negative coefficient?
#[derive(Clone, Debug)]
pub struct TransitionCriterion {
    /// True iff some `Ŵ(k) < −1e-12` with `k ≠ 0`.
    pub has_negative_mode: bool,
    /// The offending modes, in grid enumeration order.
    pub witnesses: Vec<Vec<i64>>,
}

/// Scan the retained coefficients for strictly negative modes — the
/// sufficient condition for a phase transition at small diffusivity.
pub fn phase_transition_criterion(w: &SpectralField) -> TransitionCriterion {
    let slice = w.coefficients().as_slice().unwrap();
    let mut witnesses = Vec::new();
    w.grid().for_each_mode(|flat, k| {
        if k.iter().all(|&x| x == 0) {
            return;
        }
        if slice[flat].re < -TOL_ZERO {
            witnesses.push(k.to_vec());
        }
    });
    TransitionCriterion {
        has_negative_mode: !witnesses.is_empty(),
        witnesses,
    }
}

/// Spectrum of the linearization at the uniform state over `0 < |k| ≤ kmax`:
/// `λ_k = −|2πk|²(ν + Ŵ(k))`, with `Ŵ(k) = 0` outside the retained band.
pub fn spectrum_l(w: &SpectralField, nu: f64, kmax: i64) -> Vec<(Vec<i64>, f64)> {
    let grid = w.grid();
    let d = grid.dim();
    let slice = w.coefficients().as_slice().unwrap();
    let mut out = Vec::new();
    let mut k = vec![-kmax; d];
    'odometer: loop {
        let ksq: i64 = k.iter().map(|&x| x * x).sum();
        if ksq != 0 && ksq <= kmax * kmax {
            let what = grid.mode_position(&k).map_or(0.0, |p| slice[p].re);
            let lam = -TorusGrid::laplace_symbol(&k) * (nu + what);
            out.push((k.clone(), lam));
        }
        for i in (0..d).rev() {
            k[i] += 1;
            if k[i] <= kmax {
                continue 'odometer;
            }
            k[i] = -kmax;
        }
        break;
    }
    out
}

/// Diffusivity below which the uniform state is linearly unstable:
/// `max_k (−Ŵ(k))` over nonzero retained modes (0 if no negative mode).
pub fn linear_stability_threshold(w: &SpectralField) -> f64 {
    let slice = w.coefficients().as_slice().unwrap();
    let mut worst = 0.0f64;
    w.grid().for_each_mode(|flat, k| {
        if k.iter().all(|&x| x == 0) {
            return;
        }
        worst = worst.max(-slice[flat].re);
    });
    worst
}

/// Free energy `E[ρ] = ν ∫ ρ log ρ + ½ Σ_k Ŵ(k)|ρ̂(k)|²`. The entropy is a
/// physical-space quadrature on the grid; the density must be strictly
/// positive there (the argument of the logarithm is clipped at 1e-12 only
/// as floating-point protection once positivity is certified).
pub fn free_energy(rho: &SpectralField, nu: f64, w: &SpectralField) -> Result<f64> {
    if rho.grid() != w.grid() {
        return Err(Error::InvalidSpec(
            "density and potential must share a grid".into(),
        ));
    }
    let phys = rho.to_physical();
    let min = phys.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(Error::Numerics(format!(
            "entropy undefined: density reaches {min:.3e}"
        )));
    }
    let entropy = phys.iter().map(|&r| r * r.max(1e-12).ln()).sum::<f64>() / phys.len() as f64;
    let wk = w.coefficients().as_slice().unwrap();
    let rk = rho.coefficients().as_slice().unwrap();
    let interaction: f64 = wk
        .iter()
        .zip(rk)
        .map(|(wc, rc)| 0.5 * wc.re * rc.norm_sqr())
        .sum();
    Ok(nu * entropy + interaction)
}

/// Result of the damped Picard iteration on the Gibbs map.
#[derive(Clone, Debug)]
pub struct FixedPointRun {
    /// Last iterate (mean exactly 1).
    pub state: SpectralField,
    /// Number of Gibbs-map applications performed.
    pub iterations: usize,
    /// `‖ρ_{n+1} − ρ_n‖_{L²}` at the final iterate.
    pub residual: f64,
    /// True when the residual dropped below the tolerance; false reports
    /// non-convergence (never an error).
    pub converged: bool,
}

/// Damped Picard iteration `ρ_{n+1} = (1−λ)ρ_n + λ·Gibbs(ρ_n)` on the
/// self-consistency map `Gibbs(ρ) = exp(−(W∗ρ)/ν)/Z`, whose fixed points
/// are the steady states of the deterministic dynamics.
pub fn steady_state_fixed_point(
    nu: f64,
    w: &SpectralField,
    rho_init: &SpectralField,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointRun> {
    if !(nu > 0.0) {
        return Err(Error::InvalidSpec("Gibbs map needs ν > 0".into()));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::InvalidSpec("damping must lie in (0, 1]".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec("tolerance must be positive".into()));
    }
    if rho_init.grid() != w.grid() {
        return Err(Error::InvalidSpec(
            "initial density and potential must share a grid".into(),
        ));
    }
    let init_phys = rho_init.to_physical();
    let init_min = init_phys.iter().copied().fold(f64::INFINITY, f64::min);
    if init_min <= 0.0 {
        return Err(Error::InvalidSpec(format!(
            "initial density must be positive (min = {init_min:.3e})"
        )));
    }
    if (rho_init.mass() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidSpec(format!(
            "initial density must have mean 1 (mass = {})",
            rho_init.mass()
        )));
    }

    let grid = w.grid();
    let mut rho = rho_init.clone();
    let mut phys = init_phys;
    for n in 1..=max_iter {
        // Gibbs(ρ) on the grid, overflow-proofed by subtracting the max
        // exponent before exponentiating (the normalization absorbs it).
        let pot = w.convolve(&rho)?.to_physical();
        let top = pot.iter().copied().fold(f64::INFINITY, f64::min) / nu;
        let g = pot.mapv(|p| (-p / nu - (-top)).exp());
        let z = g.iter().sum::<f64>() / g.len() as f64;
        let next_phys = phys.mapv(|r| r * (1.0 - damping)) + g.mapv(|v| damping * v / z);
        let mut next = SpectralField::from_physical(grid, &next_phys)?;
        next.set_mean(1.0);
        let mut diff = next.clone();
        diff.add_scaled(&rho, -1.0)?;
        let residual = diff.l2_norm();
        rho = next;
        phys = next_phys;
        if residual < tol {
            return Ok(FixedPointRun {
                state: rho,
                iterations: n,
                residual,
                converged: true,
            });
        }
        if n == max_iter {
            return Ok(FixedPointRun {
                state: rho,
                iterations: n,
                residual,
                converged: false,
            });
        }
    }
    // max_iter = 0: the initial state is the report.
    Ok(FixedPointRun {
        state: rho,
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    })
}

/// Dimension constant of the uniformization threshold:
/// `C_d = ((d−1)/d)·{1/32 (d=2), 3/160 (d=3), (d−3)/(10d(d−1)) (d≥4)}`,
/// evaluated in reduced form (one rounding) so the low dimensions are
/// exact: 1/64, 1/80, then (d−3)/(10d²).
pub fn dimension_constant(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidSpec("dimension constant needs d ≥ 2".into()));
    }
    let df = d as f64;
    Ok(match d {
        2 => 1.0 / 64.0,
        3 => 1.0 / 80.0,
        _ => (df - 3.0) / (10.0 * df * df),
    })
}

/// Threshold ingredients at a fixed split parameter `ν′`.
#[derive(Clone, Debug)]
pub struct SplitThreshold {
    /// Unstable set `Λ = {k ≠ 0 : ν′ + Ŵ(k) < 0}` of retained modes.
    pub unstable: Vec<Vec<i64>>,
    /// Growth constant `C_W^{(ν′)} = max_{k∈Λ} |ν′+Ŵ(k)||k|²` (0 if Λ = ∅).
    pub c_w: f64,
    /// Smallest admissible squared intensity,
    /// `K² = max(0, (C_W − (ν−ν′)) / (‖θ‖²_{h⁻¹} C_d))`.
    pub k_squared: f64,
}

/// Evaluate the uniformization threshold at one split parameter.
pub fn split_threshold(
    w: &SpectralField,
    nu: f64,
    theta: &NoiseSpec,
    nu_prime: f64,
) -> Result<SplitThreshold> {
    if !(nu > 0.0) {
        return Err(Error::InvalidSpec("threshold needs ν > 0".into()));
    }
    if !(nu_prime > 0.0 && nu_prime < nu) {
        return Err(Error::InvalidSpec(format!(
            "split parameter must lie in (0, ν): got {nu_prime} with ν = {nu}"
        )));
    }
    let slice = w.coefficients().as_slice().unwrap();
    let mut unstable = Vec::new();
    let mut c_w = 0.0f64;
    w.grid().for_each_mode(|flat, k| {
        if k.iter().all(|&x| x == 0) {
            return;
        }
        let shift = nu_prime + slice[flat].re;
        if shift < 0.0 {
            let ksq: i64 = k.iter().map(|&x| x * x).sum();
            unstable.push(k.to_vec());
            c_w = c_w.max(shift.abs() * ksq as f64);
        }
    });
    let denom = theta.h_norm_sq(-1.0) * dimension_constant(w.grid().dim())?;
    let k_squared = ((c_w - (nu - nu_prime)) / denom).max(0.0);
    Ok(SplitThreshold {
        unstable,
        c_w,
        k_squared,
    })
}

/// Stability analysis of the uniform state for a given potential,
/// diffusivity, and noise shape.
#[derive(Clone, Debug)]
pub struct StabilityReport {
    /// Split parameter `ν′` minimizing the admissible intensity.
    pub eta: f64,
    /// Unstable mode set at that `ν′`.
    pub unstable: Vec<Vec<i64>>,
    /// Growth constant `C_W^{(ν′)}` at that `ν′`.
    pub c_w: f64,
    /// Dimension constant `C_d`.
    pub c_d: f64,
    /// Eigenvalues `λ_k` of the linearization over `0 < |k| ≤ 6`.
    pub spectrum: Vec<(Vec<i64>, f64)>,
    /// Sufficient noise intensity: the uniform state is predicted to be
    /// the unique invariant distribution for `K > K_crit` (0 when the
    /// deterministic linearization is already uniformly contracting).
    pub k_crit: f64,
    /// Diffusivities at which mode families change linear stability
    /// (distinct values of `−Ŵ(k)` over negative modes, descending).
    pub nu_crit_candidates: Vec<f64>,
}

/// Number of split-parameter grid points per optimization pass.
const SPLIT_GRID: usize = 200;

/// Optimize the split parameter on a 200-point grid over `(0, ν)`, refined
/// once around the minimizer, and assemble the stability report.
pub fn stability_report(
    w: &SpectralField,
    nu: f64,
    theta: &NoiseSpec,
) -> Result<StabilityReport> {
    if !(nu > 0.0) {
        return Err(Error::InvalidSpec("stability report needs ν > 0".into()));
    }
    let coarse: Vec<f64> = (1..=SPLIT_GRID)
        .map(|j| nu * j as f64 / (SPLIT_GRID as f64 + 1.0))
        .collect();
    let mut best: Option<(f64, SplitThreshold)> = None;
    let consider = |nu_prime: f64, best: &mut Option<(f64, SplitThreshold)>| -> Result<()> {
        let eval = split_threshold(w, nu, theta, nu_prime)?;
        if best
            .as_ref()
            .is_none_or(|(_, b)| eval.k_squared < b.k_squared)
        {
            *best = Some((nu_prime, eval));
        }
        Ok(())
    };
    for &p in &coarse {
        consider(p, &mut best)?;
    }
    let (coarse_min, _) = best.as_ref().expect("grid is nonempty");
    let h = nu / (SPLIT_GRID as f64 + 1.0);
    let lo = (coarse_min - h).max(nu * 1e-9);
    let hi = (coarse_min + h).min(nu * (1.0 - 1e-12));
    for j in 0..=SPLIT_GRID {
        let p = lo + (hi - lo) * j as f64 / SPLIT_GRID as f64;
        consider(p, &mut best)?;
    }
    let (eta, at_eta) = best.expect("grid is nonempty");

    let slice = w.coefficients().as_slice().unwrap();
    let mut candidates: Vec<f64> = Vec::new();
    w.grid().for_each_mode(|flat, k| {
        if k.iter().all(|&x| x == 0) || slice[flat].re >= -TOL_ZERO {
            return;
        }
        let v = -slice[flat].re;
        if !candidates.iter().any(|&c| (c - v).abs() < TOL_ZERO) {
            candidates.push(v);
        }
    });
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());

    Ok(StabilityReport {
        eta,
        unstable: at_eta.unstable,
        c_w: at_eta.c_w,
        c_d: dimension_constant(w.grid().dim())?,
        spectrum: spectrum_l(w, nu, 6),
        k_crit: at_eta.k_squared.sqrt(),
        nu_crit_candidates: candidates,
    })
}

/// Optimal decay margin `γ* = max_{ν′∈(0,ν)} [‖θ‖²_{h⁻¹} C_d K² + (ν−ν′)
/// − C_W^{(ν′)}]` (0 when no split parameter gives a positive margin); the
/// linearized equation's top exponent is then predicted `≤ −(2π)²γ*`.
/// Uses the noise specification's own intensity.
pub fn decay_margin(w: &SpectralField, nu: f64, theta: &NoiseSpec) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::InvalidSpec("decay margin needs ν > 0".into()));
    }
    let scale = theta.h_norm_sq(-1.0)
        * dimension_constant(w.grid().dim())?
        * theta.intensity()
        * theta.intensity();
    let margin_at = |nu_prime: f64| -> Result<f64> {
        let eval = split_threshold(w, nu, theta, nu_prime)?;
        Ok(scale + (nu - nu_prime) - eval.c_w)
    };
    let coarse: Vec<f64> = (1..=SPLIT_GRID)
        .map(|j| nu * j as f64 / (SPLIT_GRID as f64 + 1.0))
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut best_p = coarse[0];
    for &p in &coarse {
        let m = margin_at(p)?;
        if m > best {
            best = m;
            best_p = p;
        }
    }
    let h = nu / (SPLIT_GRID as f64 + 1.0);
    let lo = (best_p - h).max(nu * 1e-9);
    let hi = (best_p + h).min(nu * (1.0 - 1e-12));
    for j in 0..=SPLIT_GRID {
        let p = lo + (hi - lo) * j as f64 / SPLIT_GRID as f64;
        best = best.max(margin_at(p)?);
    }
    Ok(best.max(0.0))
}
