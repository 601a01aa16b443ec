//! The divergence-free transport-noise model.
//!
//! The driving velocity field is the Gaussian, white-in-time, colored-in-space
//! field
//!
//! ```text
//! ξ(x, dt) = Σ_{k ∈ Z^d_0} Σ_{j=1}^{d-1} θ_k a_k^{(j)} e^{2πik·x} dB^{(j)}(t, k),
//! ```
//!
//! with a radial, finitely supported weight `θ` (a function of `|k|²` only),
//! orthonormal real bases `{a_k^{(j)}}` of the plane `k^⊥` chosen so that
//! `a_k^{(j)} = a_{-k}^{(j)}`, and complex Brownian motions satisfying
//! `B^{(j)}(·, -k) = conj(B^{(j)}(·, k))` and `E|B^{(j)}(t,k)|² = t` (real and
//! imaginary parts are independent with variance `t/2` each). Independent
//! randomness therefore lives on a canonical half lattice — the *primary*
//! modes, whose first nonzero coordinate is positive — and the reflected
//! coefficients are conjugates, which makes `ξ` a real field. Because
//! `a ⊥ k`, every realization is exactly divergence-free: the noise
//! rearranges mass and cannot create it.
//!
//! Conventions verified numerically in this crate's test suite (they pin the
//! factor-of-two ambiguities of complex-mode variance):
//!
//! * the one-step velocity increment used by solvers is
//!   `ΔV(x) = √2 K Σ_{k primary} θ_k Σ_j a_k^{(j)} · 2 Re(e^{2πik·x} ΔB_{k,j})`
//!   with `ΔB` complex of total variance `Δt`;
//! * its pointwise covariance is `E[ΔV ⊗ ΔV] = 2K² Q Δt` with
//!   `Q = Σ_{k ∈ Z^d_0} θ_k² P_k`, `P_k = I − k̂⊗k̂`; for radial `θ`,
//!   `Q = ((d−1)/d)·‖θ‖²_{ℓ²}·I`;
//! * transport along `√2 K ξ` (Stratonovich) preserves every `L^p` norm
//!   pathwise; in Itô form the same dynamics carries the corrector `K² q Δ`.
//!
//! Weighted mode norms follow `‖θ‖²_{h^α} = Σ_{k ∈ Z^d_0} |k|^{2α} θ_k²`,
//! summed over the full (not half) active lattice.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;

use crate::rng::StreamRng;
use crate::spectral::{SpectralField, TorusGrid};
use crate::{Error, Result};

/// Radial spectral weight and intensity of the transport noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    d: usize,
    /// Map `|k|² → θ` over the finitely many active shells.
    shells: BTreeMap<i64, f64>,
    /// Intensity `K` multiplying the whole field.
    intensity: f64,
}

impl NoiseSpec {
    /// Build from explicit shells `(|k|², θ)`; weights must be nonzero and
    /// shells nonempty, `d ≥ 2`, `K ≥ 0`.
    pub fn radial(d: usize, shells: &[(i64, f64)], intensity: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidSpec(
                "transport noise requires dimension d ≥ 2".into(),
            ));
        }
        if !(intensity >= 0.0) {
            return Err(Error::InvalidSpec("noise intensity must be ≥ 0".into()));
        }
        if shells.is_empty() {
            return Err(Error::InvalidSpec("noise weight has empty support".into()));
        }
        let mut map = BTreeMap::new();
        for &(ksq, w) in shells {
            if ksq <= 0 {
                return Err(Error::InvalidSpec(format!(
                    "shell |k|² must be positive, got {ksq}"
                )));
            }
            if w == 0.0 || !w.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "shell weight must be finite and nonzero, got {w}"
                )));
            }
            if lattice_shell(d, ksq).is_empty() {
                return Err(Error::InvalidSpec(format!(
                    "shell |k|² = {ksq} is empty in dimension {d}"
                )));
            }
            if map.insert(ksq, w).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate shell |k|² = {ksq}")));
            }
        }
        Ok(Self {
            d,
            shells: map,
            intensity,
        })
    }

    /// The standard example: `θ = 1` on the shell `|k|² = 1`.
    pub fn unit_shell(d: usize, intensity: f64) -> Result<Self> {
        Self::radial(d, &[(1, 1.0)], intensity)
    }

    /// Build from per-mode weights, verifying radiality: modes on one shell
    /// must carry one weight, and every mode of an active shell must be
    /// present (so the weight really is a function of `|k|²`).
    pub fn from_mode_weights(
        d: usize,
        weights: &[(Vec<i64>, f64)],
        intensity: f64,
    ) -> Result<Self> {
        let mut by_shell: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
        for (k, w) in weights {
            if k.len() != d {
                return Err(Error::InvalidSpec("mode dimension mismatch".into()));
            }
            let ksq: i64 = k.iter().map(|&x| x * x).sum();
            match by_shell.get_mut(&ksq) {
                None => {
                    by_shell.insert(ksq, (*w, 1));
                }
                Some((w0, n)) => {
                    if (*w0 - w).abs() > 1e-14 * w0.abs().max(1.0) {
                        return Err(Error::InvalidSpec(format!(
                            "weight is not radial: shell |k|² = {ksq} carries {w0} and {w}"
                        )));
                    }
                    *n += 1;
                }
            }
        }
        for (&ksq, &(_, n)) in &by_shell {
            let full = lattice_shell(d, ksq).len();
            if n != full {
                return Err(Error::InvalidSpec(format!(
                    "weight is not radial: shell |k|² = {ksq} lists {n} of {full} modes"
                )));
            }
        }
        let shells: Vec<(i64, f64)> = by_shell.iter().map(|(&k, &(w, _))| (k, w)).collect();
        Self::radial(d, &shells, intensity)
    }

    /// Spatial dimension.
    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Intensity `K`.
    #[inline]
    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// Same spec with a different intensity.
    pub fn with_intensity(&self, intensity: f64) -> Self {
        Self {
            intensity,
            ..self.clone()
        }
    }

    /// Weight on the shell `|k|²` (zero off the support).
    #[inline]
    pub fn theta(&self, ksq: i64) -> f64 {
        self.shells.get(&ksq).copied().unwrap_or(0.0)
    }

    /// Active shells `(|k|², θ)`, ascending.
    pub fn shells(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.shells.iter().map(|(&k, &w)| (k, w))
    }

    /// Largest active `|k|²`.
    pub fn max_shell(&self) -> i64 {
        *self.shells.keys().last().expect("support is nonempty")
    }

    /// `‖θ‖²_{h^α} = Σ_{k ∈ Z^d_0 active} |k|^{2α} θ_k²` (full lattice).
    pub fn h_norm_sq(&self, alpha: f64) -> f64 {
        self.shells
            .iter()
            .map(|(&ksq, &w)| {
                let count = lattice_shell(self.d, ksq).len() as f64;
                count * (ksq as f64).powf(alpha) * w * w
            })
            .sum()
    }

    /// Covariance of the normalized field: `Q = Σ_{k active} θ_k² (I − k̂⊗k̂)`.
    pub fn covariance_matrix(&self) -> Array2<f64> {
        let d = self.d;
        let mut q = Array2::<f64>::zeros((d, d));
        for (&ksq, &w) in &self.shells {
            for k in lattice_shell(d, ksq) {
                for i in 0..d {
                    for j in 0..d {
                        let proj = if i == j { 1.0 } else { 0.0 }
                            - (k[i] * k[j]) as f64 / ksq as f64;
                        q[(i, j)] += w * w * proj;
                    }
                }
            }
        }
        q
    }

    /// Scalar `q` with `Q = q·I`; errors if the radial sum is not isotropic
    /// to 1e-12 (it always is for full shells — this guards the enumeration).
    pub fn scalar_covariance(&self) -> Result<f64> {
        let q = self.covariance_matrix();
        let d = self.d;
        let diag = q[(0, 0)];
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { diag } else { 0.0 };
                if (q[(i, j)] - want).abs() > 1e-12 * diag.max(1.0) {
                    return Err(Error::Numerics(format!(
                        "covariance is not isotropic: Q[{i},{j}] = {}",
                        q[(i, j)]
                    )));
                }
            }
        }
        Ok(diag)
    }

    /// Itô corrector coefficient `κ = K² q` of the Stratonovich transport
    /// term, computed from the covariance of the noise actually sampled.
    pub fn ito_corrector(&self) -> Result<f64> {
        Ok(self.intensity * self.intensity * self.scalar_covariance()?)
    }

    /// Primary (canonical half-lattice) modes of the active shells, in a
    /// frozen deterministic order: shells ascending, lexicographic within.
    pub fn primary_modes(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        for &ksq in self.shells.keys() {
            let mut shell: Vec<Vec<i64>> = lattice_shell(self.d, ksq)
                .into_iter()
                .filter(|k| is_primary(k))
                .collect();
            shell.sort();
            out.extend(shell);
        }
        out
    }
}

/// `k` lies on the canonical half lattice: first nonzero coordinate positive.
pub fn is_primary(k: &[i64]) -> bool {
    for &x in k {
        if x != 0 {
            return x > 0;
        }
    }
    false
}

/// All integer vectors with `|k|² = ksq` in dimension `d`.
pub fn lattice_shell(d: usize, ksq: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut k = vec![0i64; d];
    fill_shell(&mut out, &mut k, 0, ksq);
    out
}

fn fill_shell(out: &mut Vec<Vec<i64>>, k: &mut Vec<i64>, axis: usize, remaining: i64) {
    if axis == k.len() {
        if remaining == 0 {
            out.push(k.clone());
        }
        return;
    }
    let bound = (remaining as f64).sqrt().floor() as i64;
    for v in -bound..=bound {
        k[axis] = v;
        fill_shell(out, k, axis + 1, remaining - v * v);
    }
    k[axis] = 0;
}

/// Orthonormal real basis `{a_k^{(j)}}_{j<d}` of `k^⊥` with `a_k = a_{−k}`.
///
/// Constructed on the primary representative and copied to the reflection.
/// In d = 2 the basis is `a_k = (−k₂, k₁)/|k|`; in d ≥ 3 it is the
/// Gram–Schmidt frame seeded by coordinate axes least aligned with `k`.
pub fn mode_basis(k: &[i64]) -> Vec<Vec<f64>> {
    assert!(k.iter().any(|&x| x != 0), "no basis for the zero mode");
    if !is_primary(k) {
        let neg: Vec<i64> = k.iter().map(|&x| -x).collect();
        return mode_basis(&neg);
    }
    let d = k.len();
    let norm = (k.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt();
    let khat: Vec<f64> = k.iter().map(|&x| x as f64 / norm).collect();
    if d == 2 {
        return vec![vec![-khat[1], khat[0]]];
    }
    // Axes sorted by |k_i| ascending: least-aligned seeds first.
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| k[a].abs().cmp(&k[b].abs()).then(a.cmp(&b)));
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    for &ax in &axes {
        if frame.len() == d - 1 {
            break;
        }
        let mut v = vec![0.0; d];
        v[ax] = 1.0;
        // Project out k̂ and the frame built so far.
        let along = v[ax] * khat[ax];
        for (vi, &ki) in v.iter_mut().zip(&khat) {
            *vi -= along * ki;
        }
        for a in &frame {
            let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            for (vi, &ai) in v.iter_mut().zip(a) {
                *vi -= dot * ai;
            }
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            for vi in &mut v {
                *vi /= n;
            }
            frame.push(v);
        }
    }
    assert_eq!(frame.len(), d - 1, "Gram–Schmidt frame is degenerate");
    frame
}

/// One independent noise channel: a primary mode `k`, one basis vector of
/// `k^⊥`, and the combined amplitude `√2·K·θ_k`.
#[derive(Clone, Debug)]
pub struct Channel {
    /// Primary wavevector.
    pub k: Vec<i64>,
    /// Basis vector `a_k^{(j)} ∈ k^⊥`.
    pub a: Vec<f64>,
    /// `√2 · K · θ_k`.
    pub amp: f64,
}

/// The fully enumerated channel table of a [`NoiseSpec`]: slot `i` of every
/// increment buffer corresponds to `channels()[i]`. The ordering is frozen
/// (shells ascending, modes lexicographic, then `j`), so a seed determines a
/// realization independently of scheme, resolution, or worker count.
#[derive(Clone, Debug)]
pub struct NoiseGeometry {
    spec: NoiseSpec,
    channels: Vec<Channel>,
}

impl NoiseGeometry {
    /// Enumerate channels of a spec.
    pub fn new(spec: &NoiseSpec) -> Self {
        let mut channels = Vec::new();
        for k in spec.primary_modes() {
            let ksq: i64 = k.iter().map(|&x| x * x).sum();
            let amp = std::f64::consts::SQRT_2 * spec.intensity() * spec.theta(ksq);
            for a in mode_basis(&k) {
                channels.push(Channel {
                    k: k.clone(),
                    a,
                    amp,
                });
            }
        }
        Self {
            spec: spec.clone(),
            channels,
        }
    }

    /// The underlying spec.
    #[inline]
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// Channel table (slot order).
    #[inline]
    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Number of independent complex channels.
    #[inline]
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Assemble the spectral velocity-increment field
    /// `ΔV_i^(k) = √2 K θ_k a_i^{(j)} ΔB_{k,j}` (conjugate at `−k`), one
    /// [`SpectralField`] per component. `incr[slot]` are channel increments.
    pub fn velocity_field(
        &self,
        grid: TorusGrid,
        incr: &[Complex64],
    ) -> Result<Vec<SpectralField>> {
        let d = self.spec.dim();
        if grid.dim() != d {
            return Err(Error::InvalidSpec("grid/noise dimension mismatch".into()));
        }
        if incr.len() != self.channels.len() {
            return Err(Error::InvalidSpec("increment buffer length mismatch".into()));
        }
        let mut comps: Vec<SpectralField> = (0..d).map(|_| SpectralField::zero(grid)).collect();
        for (chan, &db) in self.channels.iter().zip(incr) {
            let Some(pos) = grid.mode_position(&chan.k) else {
                return Err(Error::InvalidSpec(format!(
                    "noise mode {:?} is outside the grid band",
                    chan.k
                )));
            };
            let neg: Vec<i64> = chan.k.iter().map(|&x| -x).collect();
            let npos = grid.mode_position(&neg).expect("reflection is in band");
            for (i, comp) in comps.iter_mut().enumerate() {
                let c = chan.amp * chan.a[i] * db;
                let slice = comp.coefficients_mut().as_slice_mut().unwrap();
                slice[pos] += c;
                slice[npos] += c.conj();
            }
        }
        Ok(comps)
    }

    /// Evaluate the velocity increment at one point:
    /// `out_i = Σ_slots amp · a_i · 2 Re(ΔB e^{2πik·x})`.
    #[inline]
    pub fn displacement_at(&self, x: &[f64], incr: &[Complex64], out: &mut [f64]) {
        let tau = std::f64::consts::TAU; // 2π
        out.fill(0.0);
        for (chan, &db) in self.channels.iter().zip(incr) {
            let phase: f64 = chan
                .k
                .iter()
                .zip(x)
                .map(|(&kj, &xj)| kj as f64 * xj)
                .sum();
            let (s, c) = (tau * phase).sin_cos();
            // 2 Re(ΔB e^{iφ}) = 2(Re ΔB cos φ − Im ΔB sin φ)
            let w = 2.0 * chan.amp * (db.re * c - db.im * s);
            for (o, &ai) in out.iter_mut().zip(&chan.a) {
                *o += w * ai;
            }
        }
    }

    /// Spatial gradient of the displacement field at one point, row-major
    /// `out[i·d + j] = ∂_j ΔV_i` (for variational/Jacobian integration).
    #[inline]
    pub fn displacement_grad_at(&self, x: &[f64], incr: &[Complex64], out: &mut [f64]) {
        let tau = std::f64::consts::TAU;
        let d = self.spec.dim();
        out.fill(0.0);
        for (chan, &db) in self.channels.iter().zip(incr) {
            let phase: f64 = chan
                .k
                .iter()
                .zip(x)
                .map(|(&kj, &xj)| kj as f64 * xj)
                .sum();
            let (s, c) = (tau * phase).sin_cos();
            // d/dφ of 2(Re ΔB cos φ − Im ΔB sin φ); ∂_j φ = 2π k_j.
            let dw = 2.0 * chan.amp * (-db.re * s - db.im * c) * tau;
            for (i, &ai) in chan.a.iter().enumerate() {
                for (j, &kj) in chan.k.iter().enumerate() {
                    out[i * d + j] += dw * ai * kj as f64;
                }
            }
        }
    }
}

/// White-in-time channel increments, addressed by substep index.
///
/// The increment over substep `s` of length `dt` has independent real and
/// imaginary parts of variance `dt/2` (so `E|ΔB|² = dt`), drawn at counter
/// `(step = s, slot = channel)`. Increments over longer spans are sums of
/// substep draws, which keeps paths consistent across schemes and `dt`
/// refinements that share a substep resolution.
#[derive(Clone, Copy, Debug)]
pub struct WhiteNoise {
    rng: StreamRng,
    /// Substep duration: the resolution at which the path is materialized.
    pub dt: f64,
}

impl WhiteNoise {
    /// Bind a stream to a substep resolution.
    pub fn new(rng: StreamRng, dt: f64) -> Self {
        Self { rng, dt }
    }

    /// Complex increment of one channel over one substep.
    #[inline]
    pub fn substep_increment(&self, slot: u32, substep: u32) -> Complex64 {
        let (re, im) = self.rng.normal_pair(substep, slot, 0);
        let scale = (self.dt / 2.0).sqrt();
        Complex64::new(re * scale, im * scale)
    }

    /// Sum of substep increments over `[from, to)`.
    pub fn span_increment(&self, slot: u32, from: u32, to: u32) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for s in from..to {
            acc += self.substep_increment(slot, s);
        }
        acc
    }

    /// Fill a buffer with one substep's increments for all channels.
    pub fn fill_substep(&self, substep: u32, buf: &mut [Complex64]) {
        for (slot, b) in buf.iter_mut().enumerate() {
            *b = self.substep_increment(slot as u32, substep);
        }
    }

    /// Fill a buffer with span increments for all channels.
    pub fn fill_span(&self, from: u32, to: u32, buf: &mut [Complex64]) {
        for (slot, b) in buf.iter_mut().enumerate() {
            *b = self.span_increment(slot as u32, from, to);
        }
    }
}

/// Anything that can supply per-substep channel increments to a flow:
/// the white-noise driver, or a prescribed (deterministic control) path.
pub trait IncrementSource {
    /// Substep duration.
    fn dt(&self) -> f64;
    /// Write one substep's increments, one complex entry per channel.
    fn fill(&self, substep: u32, buf: &mut [Complex64]);
}

impl IncrementSource for WhiteNoise {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn fill(&self, substep: u32, buf: &mut [Complex64]) {
        self.fill_substep(substep, buf);
    }
}

/// A deterministic driver path, materialized as per-substep increments
/// (`increments[substep][channel]`). Used by controlled runs, where the
/// transport is driven by a chosen control rather than sampled noise.
#[derive(Clone, Debug)]
pub struct PrescribedIncrements {
    dt: f64,
    increments: Vec<Vec<Complex64>>,
}

impl PrescribedIncrements {
    /// Wrap per-substep increments with their substep duration.
    pub fn new(dt: f64, increments: Vec<Vec<Complex64>>) -> Self {
        Self { dt, increments }
    }

    /// Number of substeps provided.
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    /// Whether the path is empty.
    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }
}

impl IncrementSource for PrescribedIncrements {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn fill(&self, substep: u32, buf: &mut [Complex64]) {
        let row = &self.increments[substep as usize];
        buf.copy_from_slice(row);
    }
}

/// A piecewise-linear (Wong–Zakai) driver path on `[0, horizon]`.
///
/// Level `m` places breakpoints on the dyadic grid `2^{-m} N`. Paths are
/// built from level-0 unit increments refined by Brownian-bridge midpoints;
/// every midpoint draw is addressed by `(level, position)` counters, so
/// refining the level *extends* a path without changing the values it
/// already had: level `m+1` restricted to the level-`m` grid is the level-`m`
/// path. Real and imaginary parts are independent with variance `t/2`.
#[derive(Clone, Debug)]
pub struct WongZakaiPath {
    /// Dyadic refinement level.
    pub level: u32,
    /// Whole-unit horizon.
    pub horizon: u32,
    /// `values[channel][j] = B(j·2^{-level})`.
    values: Vec<Vec<Complex64>>,
}

impl WongZakaiPath {
    /// Materialize a path for `n_channels` channels on `[0, horizon]`.
    pub fn sample(rng: StreamRng, n_channels: usize, level: u32, horizon: u32) -> Self {
        let scale0 = (0.5f64).sqrt(); // unit increments, variance 1/2 per part
        let mut values = Vec::with_capacity(n_channels);
        for slot in 0..n_channels as u32 {
            // Level 0: values at integers via unit increments (draw = 0).
            let mut v = vec![Complex64::new(0.0, 0.0); horizon as usize + 1];
            for n in 0..horizon {
                let (re, im) = rng.normal_pair(n, slot, 0);
                v[n as usize + 1] = v[n as usize] + Complex64::new(re * scale0, im * scale0);
            }
            // Bridge refinement: midpoint of an interval of length h gets
            // std √(h/8) per part (bridge variance h/4, halved per part).
            for l in 0..level {
                let h = (0.5f64).powi(l as i32);
                let std = (h / 8.0).sqrt();
                let n_old = v.len() - 1;
                let mut fine = vec![Complex64::new(0.0, 0.0); 2 * n_old + 1];
                for (j, &val) in v.iter().enumerate() {
                    fine[2 * j] = val;
                }
                for j in 0..n_old {
                    let (re, im) = rng.normal_pair(j as u32, slot, l + 1);
                    fine[2 * j + 1] = 0.5 * (v[j] + v[j + 1])
                        + Complex64::new(re * std, im * std);
                }
                v = fine;
            }
            values.push(v);
        }
        Self {
            level,
            horizon,
            values,
        }
    }

    /// Number of channels.
    pub fn n_channels(&self) -> usize {
        self.values.len()
    }

    /// Breakpoint spacing `2^{-level}`.
    pub fn dt(&self) -> f64 {
        (0.5f64).powi(self.level as i32)
    }

    /// Number of linear segments.
    pub fn n_segments(&self) -> usize {
        self.values[0].len() - 1
    }

    /// Path value at breakpoint `j`.
    pub fn value(&self, channel: usize, j: usize) -> Complex64 {
        self.values[channel][j]
    }

    /// Constant derivative of the channel on segment `j` (increment / dt).
    pub fn slope(&self, channel: usize, j: usize) -> Complex64 {
        (self.values[channel][j + 1] - self.values[channel][j]) / self.dt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shell_counts() {
        assert_eq!(lattice_shell(2, 1).len(), 4);
        assert_eq!(lattice_shell(2, 2).len(), 4);
        assert_eq!(lattice_shell(2, 5).len(), 8);
        assert_eq!(lattice_shell(3, 1).len(), 6);
        assert_eq!(lattice_shell(3, 2).len(), 12);
        assert_eq!(lattice_shell(2, 3).len(), 0);
        // Primaries are exactly half of each shell.
        for (d, ksq) in [(2, 1i64), (2, 2), (2, 5), (3, 1), (3, 2)] {
            let shell = lattice_shell(d, ksq);
            let prim = shell.iter().filter(|k| is_primary(k)).count();
            assert_eq!(2 * prim, shell.len());
        }
    }

    #[test]
    fn spec_validation() {
        assert!(NoiseSpec::radial(1, &[(1, 1.0)], 1.0).is_err());
        assert!(NoiseSpec::radial(2, &[], 1.0).is_err());
        assert!(NoiseSpec::radial(2, &[(0, 1.0)], 1.0).is_err());
        assert!(NoiseSpec::radial(2, &[(3, 1.0)], 1.0).is_err(), "empty shell in d=2");
        assert!(NoiseSpec::radial(2, &[(1, 0.0)], 1.0).is_err());
        assert!(NoiseSpec::radial(2, &[(1, 1.0)], -1.0).is_err());
        assert!(NoiseSpec::radial(2, &[(1, 1.0), (2, 0.5)], 2.0).is_ok());
    }

    #[test]
    fn per_mode_weights_must_be_radial() {
        // Inconsistent weights on one shell.
        let bad = NoiseSpec::from_mode_weights(
            2,
            &[
                (vec![1, 0], 1.0),
                (vec![-1, 0], 1.0),
                (vec![0, 1], 2.0),
                (vec![0, -1], 1.0),
            ],
            1.0,
        );
        assert!(bad.is_err());
        // Missing modes of an active shell.
        let partial = NoiseSpec::from_mode_weights(2, &[(vec![1, 0], 1.0)], 1.0);
        assert!(partial.is_err());
        let good = NoiseSpec::from_mode_weights(
            2,
            &[
                (vec![1, 0], 1.0),
                (vec![-1, 0], 1.0),
                (vec![0, 1], 1.0),
                (vec![0, -1], 1.0),
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(good.theta(1), 1.0);
    }

    /// Frozen weighted norms: d=2 unit shell gives ‖θ‖²_{h⁻¹} = 4; adding
    /// the |k|² = 2 shell gives 4 + 4/2 = 6; α = 0 recovers ℓ².
    #[test]
    fn weighted_norms() {
        let one = NoiseSpec::unit_shell(2, 1.0).unwrap();
        assert_abs_diff_eq!(one.h_norm_sq(-1.0), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(one.h_norm_sq(0.0), 4.0, epsilon = 1e-14);
        let two = NoiseSpec::radial(2, &[(1, 1.0), (2, 1.0)], 1.0).unwrap();
        assert_abs_diff_eq!(two.h_norm_sq(-1.0), 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(two.h_norm_sq(0.0), 8.0, epsilon = 1e-14);
        let d3 = NoiseSpec::radial(3, &[(1, 1.0), (2, 1.0)], 1.0).unwrap();
        assert_abs_diff_eq!(d3.h_norm_sq(-1.0), 6.0 + 12.0 / 2.0, epsilon = 1e-14);
    }

    /// Frozen covariances: d=2 unit shell Q = diag(2,2); d=3 unit shell
    /// Q = diag(4,4,4); both match ((d−1)/d)‖θ‖²_{ℓ²}.
    #[test]
    fn covariance_matrices() {
        let d2 = NoiseSpec::unit_shell(2, 3.0).unwrap();
        let q2 = d2.covariance_matrix();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 2.0 } else { 0.0 };
                assert_abs_diff_eq!(q2[(i, j)], want, epsilon = 1e-14);
            }
        }
        assert_abs_diff_eq!(d2.scalar_covariance().unwrap(), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            d2.scalar_covariance().unwrap(),
            0.5 * d2.h_norm_sq(0.0),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(d2.ito_corrector().unwrap(), 18.0, epsilon = 1e-12);

        let d3 = NoiseSpec::unit_shell(3, 1.0).unwrap();
        assert_abs_diff_eq!(d3.scalar_covariance().unwrap(), 4.0, epsilon = 1e-13);
        let d3b = NoiseSpec::radial(3, &[(1, 1.0), (2, 1.0)], 1.0).unwrap();
        assert_abs_diff_eq!(
            d3b.scalar_covariance().unwrap(),
            (2.0 / 3.0) * d3b.h_norm_sq(0.0),
            epsilon = 1e-12
        );
    }

    /// Basis frames: orthonormal, perpendicular to k, reflection-invariant.
    #[test]
    fn basis_invariants() {
        let modes: Vec<Vec<i64>> = vec![
            vec![1, 0],
            vec![0, 1],
            vec![2, -1],
            vec![1, 1, 0],
            vec![1, -2, 3],
            vec![0, 0, 1],
            vec![1, 1, 1, -2],
        ];
        for k in modes {
            let frame = mode_basis(&k);
            let d = k.len();
            assert_eq!(frame.len(), d - 1);
            for (i, a) in frame.iter().enumerate() {
                let kdot: f64 = a.iter().zip(&k).map(|(&ai, &ki)| ai * ki as f64).sum();
                assert_abs_diff_eq!(kdot, 0.0, epsilon = 1e-12);
                for (j, b) in frame.iter().enumerate() {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(dot, want, epsilon = 1e-12);
                }
            }
            let neg: Vec<i64> = k.iter().map(|&x| -x).collect();
            let rframe = mode_basis(&neg);
            for (a, b) in frame.iter().zip(&rframe) {
                for (x, y) in a.iter().zip(b) {
                    assert_abs_diff_eq!(x, y, epsilon = 0.0);
                }
            }
        }
        // The documented d=2 primary formula.
        let a = mode_basis(&[1, 0]);
        assert_eq!(a[0], vec![0.0, 1.0]);
        let a = mode_basis(&[0, 1]);
        assert_eq!(a[0], vec![-1.0, 0.0]);
    }

    /// Sampled velocity-increment fields are exactly divergence-free and
    /// their pointwise covariance matches 2K²QΔt statistically.
    #[test]
    fn velocity_increment_statistics() {
        let spec = NoiseSpec::unit_shell(2, 1.5).unwrap();
        let geom = NoiseGeometry::new(&spec);
        assert_eq!(geom.n_channels(), 2);
        let grid = TorusGrid::new(2, 8).unwrap();
        let dt = 0.01;
        let noise = WhiteNoise::new(StreamRng::new(123, 0, Purpose::CommonNoise), dt);
        let mut buf = vec![Complex64::new(0.0, 0.0); geom.n_channels()];

        let n = 40_000u32;
        let x = [0.3, 0.7];
        let mut cov = [[0.0f64; 2]; 2];
        let mut disp = [0.0f64; 2];
        for step in 0..n {
            noise.fill_substep(step, &mut buf);
            if step == 0 {
                let v = geom.velocity_field(grid, &buf).unwrap();
                let div = SpectralField::divergence(&v).unwrap();
                assert!(div.l2_norm() < 1e-14, "divergence must vanish exactly");
                // Field assembly and point evaluation agree.
                let mut pt = Vec::new();
                grid.for_each_index(|_, idx| {
                    pt.push(grid.coord(idx[0]));
                    pt.push(grid.coord(idx[1]));
                });
                let v0 = v[0].eval_direct(&pt);
                let mut out = [0.0f64; 2];
                for (p, want) in pt.chunks(2).zip(&v0) {
                    geom.displacement_at(p, &buf, &mut out);
                    assert_abs_diff_eq!(out[0], *want, epsilon = 1e-10);
                }
            }
            geom.displacement_at(&x, &buf, &mut disp);
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += disp[i] * disp[j];
                }
            }
        }
        let q = spec.scalar_covariance().unwrap();
        let want = 2.0 * spec.intensity().powi(2) * q * dt; // = 2K²qΔt
        let tol = 6.0 * want / (f64::from(n)).sqrt() * 2.0;
        for (i, row) in cov.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let target = if i == j { want } else { 0.0 };
                assert!(
                    (c / f64::from(n) - target).abs() < tol,
                    "cov[{i}][{j}] = {} vs {target}",
                    c / f64::from(n)
                );
            }
        }
    }

    /// E|ΔB|² = Δt for substep increments; span increments sum substeps.
    #[test]
    fn increment_variance_and_spans() {
        let dt = 0.02;
        let noise = WhiteNoise::new(StreamRng::new(9, 1, Purpose::CommonNoise), dt);
        let n = 50_000u32;
        let mut second = 0.0;
        for s in 0..n {
            second += noise.substep_increment(0, s).norm_sqr();
        }
        let mean = second / f64::from(n);
        assert!(
            (mean - dt).abs() < 5.0 * dt / f64::from(n).sqrt() * 2.0,
            "E|ΔB|² = {mean} vs {dt}"
        );
        let direct = noise.span_increment(3, 10, 20);
        let mut acc = Complex64::new(0.0, 0.0);
        for s in 10..20 {
            acc += noise.substep_increment(3, s);
        }
        assert_eq!(direct, acc);
    }

    /// Refining a Wong–Zakai path never changes existing breakpoints, and
    /// its endpoint variance matches E|B(t)|² = t.
    #[test]
    fn wong_zakai_refinement_consistency() {
        let rng = StreamRng::new(77, 0, Purpose::Bridge);
        let coarse = WongZakaiPath::sample(rng, 2, 3, 2);
        let fine = WongZakaiPath::sample(rng, 2, 6, 2);
        assert_eq!(coarse.n_segments() * 8, fine.n_segments());
        for c in 0..2 {
            for j in 0..=coarse.n_segments() {
                let a = coarse.value(c, j);
                let b = fine.value(c, 8 * j);
                assert!((a - b).norm() < 1e-14);
            }
        }
        // Endpoint second moment over many members.
        let mut second = 0.0;
        let n = 4000;
        for member in 0..n {
            let r = StreamRng::new(2024, member, Purpose::Bridge);
            let p = WongZakaiPath::sample(r, 1, 0, 2);
            second += p.value(0, 2).norm_sqr();
        }
        let mean = second / f64::from(n);
        assert!((mean - 2.0).abs() < 5.0 * 2.0 * (2f64 / f64::from(n)).sqrt());
    }
}
