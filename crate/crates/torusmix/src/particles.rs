//! The interacting-particle system behind the equation.
//!
//! `N` diffusions on the torus, coupled through the interaction potential
//! and riding one shared environmental flow:
//!
//! ```text
//! dXⁱ = −(1/N) Σ_{j≠i} ∇W(Xⁱ − Xʲ) dt + √(2ν) dB̃ⁱ + (common transport),
//! ```
//!
//! with independent (idiosyncratic) Brownian motions `B̃ⁱ` and the *same*
//! divergence-free velocity realization that drives the solver — drawn from
//! the identical counter-based stream, so a particle run and an SPDE run
//! are coupled pathwise, not merely in law. As `N → ∞` the empirical
//! measure `μ^N = (1/N) Σ δ_{Xⁱ}` tracks the SPDE solution driven by that
//! common noise, and the low Fourier modes of `μ^N` are the observables the
//! comparison is scored on (`O(N^{-1/2})` fluctuations).
//!
//! Three deliberate mechanics:
//!
//! * **Mode-sum forces.** The interaction force is `−∇(W ∗ μ^N)`, evaluated
//!   exactly through the potential's finitely many Fourier modes in
//!   `O(N · modes)` — no `O(N²)` pair sums. The `j = i` self-term the model
//!   excludes contributes `(1/N)∇W(0) = 0` for an even potential, so the
//!   convolutional form is already the exact pairwise force (asserted
//!   against a finite-difference gradient oracle in the tests).
//! * **Stratonovich transport.** The common kick advances particles through
//!   [`flow_white`] with the solver's own transport backend over the same
//!   substep grid the solver consumes. With the shear-palindrome scheme the
//!   forward map is the *exact* inverse of the semi-Lagrangian pull-back, so
//!   cloud and field ride one discrete flow and their gap is pure sampling
//!   error; the Heun backend shares the path but not the map, leaving an
//!   `O(√dt)` scheme residue at strong noise.
//! * **Inverse-CDF initial data.** Initial positions are drawn coordinate
//!   by coordinate from the conditional laws of a banded density, by
//!   safeguarded Newton on the spectral antiderivative — deterministic
//!   given the stream, and exactly the law the SPDE run starts from.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::flow::{flow_white, wrap01, Direction};
use crate::noise::{NoiseGeometry, WhiteNoise};
use crate::rng::{Purpose, StreamRng};
use crate::solver::{ModelParams, SolverConfig, Trajectory};
use crate::spectral::SpectralField;
use crate::{Error, Result};

/// Particle block size for data-parallel updates.
const BLOCK: usize = 2048;

/// A cloud of `N` torus particles with its two noise-stream identities.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    d: usize,
    /// Row-major `[n][d]` positions, wrapped to `[0,1)^d`.
    positions: Vec<f64>,
    /// Per-particle Brownian kicks.
    idio: StreamRng,
    /// `(seed, member)` of the shared environmental driver.
    common: (u64, u32),
}

impl ParticleEnsemble {
    /// Wrap explicit positions into an ensemble; streams are keyed by
    /// `(seed, member)` for both the idiosyncratic and the common noise.
    pub fn from_positions(
        d: usize,
        positions: Vec<f64>,
        seed: u64,
        member: u32,
    ) -> Result<Self> {
        if d == 0 || positions.is_empty() || positions.len() % d != 0 {
            return Err(Error::InvalidSpec(format!(
                "positions must hold n·d coordinates with n ≥ 1, got {} for d = {d}",
                positions.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("positions must be finite".into()));
        }
        Ok(Self {
            d,
            positions: positions.into_iter().map(wrap01).collect(),
            idio: StreamRng::new(seed, member, Purpose::Idiosyncratic),
            common: (seed, member),
        })
    }

    /// Draw `n` particles from a banded probability density by inverse-CDF
    /// sampling of one conditional coordinate at a time.
    ///
    /// The density must have unit mass and be nonnegative on its grid (a
    /// `1e-9` slack absorbs rounding of band-limited data). Sampling is a
    /// pure function of `(seed, member)` via the [`Purpose::InitialData`]
    /// stream — re-running reproduces the cloud exactly.
    pub fn sample_from_density(
        density: &SpectralField,
        n: usize,
        seed: u64,
        member: u32,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("need at least one particle".into()));
        }
        if (density.mass() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "initial density must have unit mass, got {}",
                density.mass()
            )));
        }
        let phys_min = density
            .to_physical()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if phys_min < -1e-9 {
            return Err(Error::InvalidSpec(format!(
                "initial density is negative (min {phys_min:.3e})"
            )));
        }
        let grid = density.grid();
        let d = grid.dim();
        let m = grid.modes_per_axis();
        let rng = StreamRng::new(seed, member, Purpose::InitialData);

        let per_particle: Vec<Vec<f64>> = (0..n as u32)
            .into_par_iter()
            .map(|i| {
                let mut x = vec![0.0f64; d];
                // Reduced coefficient table over the remaining axes; starts
                // as the full table and loses its leading axis per draw.
                let mut table = density.coefficients().as_slice().unwrap().to_vec();
                for axis in 0..d {
                    let rest: usize = m.pow((d - axis - 1) as u32);
                    // Marginal series of the leading axis: all other
                    // remaining modes at zero (flat offset 0 within a row).
                    let marginal: Vec<Complex64> =
                        (0..m).map(|j| table[j * rest]).collect();
                    let u = rng.uniform_pair(i, axis as u32, 0).0;
                    let xj = invert_cdf(&grid, &marginal, u);
                    x[axis] = xj;
                    if axis + 1 < d {
                        // Contract the sampled axis into the table.
                        let mut next = vec![Complex64::new(0.0, 0.0); rest];
                        for (j, row) in table.chunks_exact(rest).enumerate() {
                            let k = grid.wavenumber(j) as f64;
                            let phase = Complex64::from_polar(
                                1.0,
                                std::f64::consts::TAU * k * xj,
                            );
                            for (acc, &c) in next.iter_mut().zip(row) {
                                *acc += c * phase;
                            }
                        }
                        table = next;
                    }
                }
                x
            })
            .collect();
        Self::from_positions(d, per_particle.concat(), seed, member)
    }

    /// Rebind the idiosyncratic stream (testing the common-noise coupling
    /// requires clouds that share the environment but not the kicks).
    #[must_use]
    pub fn with_idiosyncratic_stream(mut self, seed: u64, member: u32) -> Self {
        self.idio = StreamRng::new(seed, member, Purpose::Idiosyncratic);
        self
    }

    /// Rebind the common-noise stream identity.
    #[must_use]
    pub fn with_common_stream(mut self, seed: u64, member: u32) -> Self {
        self.common = (seed, member);
        self
    }

    /// Number of particles.
    pub fn len(&self) -> usize {
        self.positions.len() / self.d
    }

    /// Never empty by construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Row-major `[n][d]` positions in `[0,1)^d`.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
}

/// Solve `CDF(x) = u` on `[0,1)` for a 1-d spectral density given by FFT-laid
/// coefficients `c` (mean first). Safeguarded Newton on
/// `F(x) = c₀ x + Σ_{k≠0} c_k (e^{2πikx} − 1)/(2πik)`, bisection fallback.
fn invert_cdf(grid: &crate::spectral::TorusGrid, c: &[Complex64], u: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let c0 = c[0].re;
    let target = u * c0;
    let eval = |x: f64| -> (f64, f64) {
        let mut cdf = c0 * x;
        let mut pdf = c0;
        for (j, &cj) in c.iter().enumerate() {
            let k = grid.wavenumber(j);
            if k == 0 {
                continue;
            }
            let e = Complex64::from_polar(1.0, tau * k as f64 * x);
            let ik = Complex64::new(0.0, tau * k as f64);
            cdf += (cj * (e - 1.0) / ik).re;
            pdf += (cj * e).re;
        }
        (cdf, pdf)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = u;
    for _ in 0..128 {
        let (f, df) = eval(x);
        if (f - target).abs() < 1e-13 * c0.max(1.0) {
            return x;
        }
        if f > target {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - (f - target) / df;
        x = if df > 1e-12 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// A recorded particle trajectory: position snapshots on the solver's
/// sampling cadence, plus the common-stream identity for coupling checks.
#[derive(Clone, Debug)]
pub struct ParticleRun {
    /// Spatial dimension.
    pub d: usize,
    /// Sample times (starting at 0).
    pub times: Vec<f64>,
    /// Row-major `[n][d]` position snapshots, one per sample time.
    pub snapshots: Vec<Vec<f64>>,
    /// `(seed, member)` of the common-noise driver consumed.
    pub common: (u64, u32),
}

/// Advance the particle system over `cfg.t_end`.
///
/// Only the time discretization of `cfg` applies (`dt`, `substeps`,
/// `t_end`, `record_every`); the common-noise term always integrates with
/// the Heun (Stratonovich) scheme over the same substep grid the solver
/// uses, so runs sharing `(seed, member)` with an SPDE run consume the
/// identical velocity realization. Each macro step applies the mode-sum
/// interaction force and the `√(2ν dt)` idiosyncratic kicks, then the
/// common transport; positions stay wrapped to `[0,1)^d`.
pub fn simulate_particles(
    ens: &ParticleEnsemble,
    params: &ModelParams,
    cfg: &SolverConfig,
) -> Result<ParticleRun> {
    params.validate()?;
    let (n_steps, record_every) = cfg.validate()?;
    if ens.d != params.noise.dim() {
        return Err(Error::InvalidSpec(
            "ensemble and noise dimensions disagree".into(),
        ));
    }
    if ens.d != params.potential.grid().dim() {
        return Err(Error::InvalidSpec(
            "ensemble and potential dimensions disagree".into(),
        ));
    }
    if cfg.renormalize {
        return Err(Error::InvalidSpec(
            "renormalization is meaningless for particle positions".into(),
        ));
    }
    let d = ens.d;
    let n = ens.len();
    let geom = NoiseGeometry::new(&params.noise);
    let driver = WhiteNoise::new(
        StreamRng::new(ens.common.0, ens.common.1, Purpose::CommonNoise),
        cfg.dt / f64::from(cfg.substeps),
    );
    let transport_on = geom.n_channels() > 0 && params.noise.intensity() > 0.0;

    // Active interaction modes (k ≠ 0, real weight): the force is
    // F(x) = Σ_k 2π k Ŵ(k) Im(μ̂^N(k) e^{2πik·x}).
    let mut w_modes: Vec<(Vec<i64>, f64)> = Vec::new();
    {
        let slice = params.potential.coefficients().as_slice().unwrap();
        params.potential.grid().for_each_mode(|flat, k| {
            if k.iter().any(|&x| x != 0) && slice[flat].re.abs() > 1e-14 {
                w_modes.push((k.to_vec(), slice[flat].re));
            }
        });
    }
    let sigma = (2.0 * params.nu * cfg.dt).sqrt();

    let mut positions = ens.positions.clone();
    let mut times = vec![0.0];
    let mut snapshots = vec![positions.clone()];

    for step in 0..n_steps {
        // Empirical modes of the current cloud at the potential's modes.
        let mu: Vec<Complex64> = if w_modes.is_empty() {
            Vec::new()
        } else {
            // Per-block partial sums are combined in block order so the
            // result does not depend on the worker count (reproducibility
            // is byte-level, and float addition does not associate).
            let partials: Vec<Vec<Complex64>> = positions
                .par_chunks(BLOCK * d)
                .map(|block| {
                    let mut acc = vec![Complex64::new(0.0, 0.0); w_modes.len()];
                    for p in block.chunks_exact(d) {
                        for (a, (k, _)) in acc.iter_mut().zip(&w_modes) {
                            let phase: f64 = k
                                .iter()
                                .zip(p)
                                .map(|(&kj, &xj)| kj as f64 * xj)
                                .sum();
                            *a += Complex64::from_polar(
                                1.0,
                                -std::f64::consts::TAU * phase,
                            );
                        }
                    }
                    acc
                })
                .collect();
            let mut sums = vec![Complex64::new(0.0, 0.0); w_modes.len()];
            for part in partials {
                for (x, y) in sums.iter_mut().zip(part) {
                    *x += y;
                }
            }
            for s in &mut sums {
                *s /= n as f64;
            }
            sums
        };

        // Drift and idiosyncratic kicks, data-parallel over blocks.
        let idio = ens.idio;
        positions
            .par_chunks_mut(BLOCK * d)
            .enumerate()
            .for_each(|(blk, block)| {
                let base = blk * BLOCK;
                let mut force = vec![0.0f64; d];
                for (off, p) in block.chunks_exact_mut(d).enumerate() {
                    let particle = (base + off) as u32;
                    if !w_modes.is_empty() {
                        force.fill(0.0);
                        for ((k, w), &m) in w_modes.iter().zip(&mu) {
                            let phase: f64 = k
                                .iter()
                                .zip(p.iter())
                                .map(|(&kj, &xj)| kj as f64 * xj)
                                .sum();
                            let osc = (m
                                * Complex64::from_polar(
                                    1.0,
                                    std::f64::consts::TAU * phase,
                                ))
                            .im;
                            for (fa, &ka) in force.iter_mut().zip(k.iter()) {
                                *fa += std::f64::consts::TAU * ka as f64 * w * osc;
                            }
                        }
                        for (xa, &fa) in p.iter_mut().zip(&force) {
                            *xa += cfg.dt * fa;
                        }
                    }
                    if sigma > 0.0 {
                        for pair in 0..d.div_ceil(2) {
                            let (g0, g1) = idio.normal_pair(step, particle, pair as u32);
                            p[2 * pair] += sigma * g0;
                            if 2 * pair + 1 < d {
                                p[2 * pair + 1] += sigma * g1;
                            }
                        }
                    }
                }
            });

        // Common transport along the shared realization, then wrap.
        if transport_on {
            positions.par_chunks_mut(BLOCK * d).for_each(|block| {
                flow_white(
                    &geom,
                    &driver,
                    block,
                    step * cfg.substeps..(step + 1) * cfg.substeps,
                    cfg.backend.scheme(),
                    Direction::Forward,
                );
            });
        }
        for x in &mut positions {
            if !x.is_finite() {
                return Err(Error::Numerics(format!(
                    "particle positions degenerated at t = {:.6}",
                    (f64::from(step) + 1.0) * cfg.dt
                )));
            }
            *x = wrap01(*x);
        }

        if (step + 1) % record_every == 0 || step + 1 == n_steps {
            times.push((f64::from(step) + 1.0) * cfg.dt);
            snapshots.push(positions.clone());
        }
    }

    Ok(ParticleRun {
        d,
        times,
        snapshots,
        common: ens.common,
    })
}

/// All lattice modes with `|k|² ≤ kmax²`, lexicographic, zero included —
/// the observable set for empirical-measure comparisons.
pub fn mode_ball(d: usize, kmax: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut k = vec![-kmax; d];
    'odometer: loop {
        if k.iter().map(|&x| x * x).sum::<i64>() <= kmax * kmax {
            out.push(k.clone());
        }
        for j in (0..d).rev() {
            if k[j] < kmax {
                k[j] += 1;
                continue 'odometer;
            }
            k[j] = -kmax;
        }
        return out;
    }
}

/// Fourier modes of the empirical measure, `μ̂^N(k) = (1/N) Σᵢ e^{−2πik·Xᵢ}`,
/// for every `k` in `modes`. `μ̂^N(0) = 1` exactly; the values are symmetric
/// functions of the cloud.
pub fn empirical_modes(d: usize, positions: &[f64], modes: &[Vec<i64>]) -> Result<Vec<Complex64>> {
    if d == 0 || positions.is_empty() || positions.len() % d != 0 {
        return Err(Error::InvalidSpec("positions must hold n·d coordinates".into()));
    }
    if modes.iter().any(|k| k.len() != d) {
        return Err(Error::InvalidSpec("mode dimension mismatch".into()));
    }
    let n = positions.len() / d;
    let mut out: Vec<Complex64> = modes
        .iter()
        .map(|k| {
            if k.iter().all(|&x| x == 0) {
                // Exact by definition — no accumulated rounding on the mass.
                return Complex64::new(n as f64, 0.0);
            }
            positions
                .chunks_exact(d)
                .map(|p| {
                    let phase: f64 = k.iter().zip(p).map(|(&kj, &xj)| kj as f64 * xj).sum();
                    Complex64::from_polar(1.0, -std::f64::consts::TAU * phase)
                })
                .sum()
        })
        .collect();
    for c in &mut out {
        *c /= n as f64;
    }
    Ok(out)
}

/// Per-mode comparison of a particle run against an SPDE trajectory that
/// tracked the same `modes` on the same sampling cadence: returns
/// `max_t |μ̂^N(t,k) − ρ̂(t,k)|` per mode.
///
/// Refuses to compare when the runs did not share the common-noise stream
/// (`spde_stream` is the `(seed, member)` the SPDE was driven with) — the
/// mean-field coupling statement is pathwise, not in law.
pub fn compare_to_spde(
    run: &ParticleRun,
    spde: &Trajectory,
    spde_stream: (u64, u32),
    modes: &[Vec<i64>],
) -> Result<Vec<(Vec<i64>, f64)>> {
    if run.common != spde_stream {
        return Err(Error::InvalidSpec(format!(
            "common-noise streams differ (particles {:?}, field {:?}); refusing to compare",
            run.common, spde_stream
        )));
    }
    if run.times.len() != spde.samples.len() {
        return Err(Error::InvalidSpec(format!(
            "sampling cadences differ: {} particle snapshots vs {} field samples",
            run.times.len(),
            spde.samples.len()
        )));
    }
    let mut errors = vec![0.0f64; modes.len()];
    for (snapshot, (t, sample)) in run
        .snapshots
        .iter()
        .zip(run.times.iter().zip(&spde.samples))
    {
        if (t - sample.t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "sample times diverge: particles at t = {t}, field at t = {}",
                sample.t
            )));
        }
        if sample.modes.len() != modes.len() {
            return Err(Error::InvalidSpec(
                "the field run did not track the comparison modes".into(),
            ));
        }
        let mu = empirical_modes(run.d, snapshot, modes)?;
        for ((e, m), rho) in errors.iter_mut().zip(mu).zip(&sample.modes) {
            *e = e.max((m - rho).norm());
        }
    }
    Ok(modes.iter().cloned().zip(errors).collect())
}
