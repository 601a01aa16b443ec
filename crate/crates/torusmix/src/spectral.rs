//! Fourier representation of scalar fields on the torus `T^d = [0,1)^d`.
//!
//! A field is stored by its Fourier coefficients on the symmetric lattice,
//! normalized so that `û(k) = ∫ u(x) e^{-2πik·x} dx`; equivalently the
//! forward DFT divided by `M^d`. With this convention:
//!
//! * `û(0)` is the mean (the conserved mass for densities),
//! * Parseval reads `∫ |u|² dx = Σ_k |û(k)|²`,
//! * differentiation is the multiplier `∂_j ↔ 2πi k_j`,
//! * convolution of densities is the pointwise product `(W∗ρ)^ = Ŵ ρ̂`.
//!
//! Wavenumbers per axis run over `-M/2 < k_j ≤ M/2` (index `i ↦ i` for
//! `i ≤ M/2`, else `i - M`). The Nyquist plane `|k_j| = M/2` cannot be
//! represented with a sign on a real grid and is forced to zero throughout,
//! so every stored field is a trigonometric polynomial with `|k_j| < M/2`.
//!
//! Homogeneous Sobolev norms always exclude `k = 0`:
//! `‖u‖_{Ḣ^s}² = Σ_{k≠0} |2πk|^{2s} |û(k)|²`, for any real `s` (negative `s`
//! measures the mixing scale; `s = 1` is the Dirichlet energy).
//!
//! Quadratic nonlinearities are evaluated pseudo-spectrally; callers dealias
//! by zeroing every coefficient with any `|k_j| > M/3` (two-thirds rule,
//! [`SpectralField::dealias`]), which is sufficient for the quadratic
//! products formed in this crate.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// A uniform grid on `T^d` with `M` points per axis (`M` even, ≥ 4).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TorusGrid {
    d: usize,
    m: usize,
}

impl TorusGrid {
    /// Create a grid; `d ≥ 1`, `m` even and at least 4.
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSpec("grid dimension must be ≥ 1".into()));
        }
        if m < 4 || m % 2 != 0 {
            return Err(Error::InvalidSpec(format!(
                "modes per axis must be even and ≥ 4, got {m}"
            )));
        }
        Ok(Self { d, m })
    }

    /// Spatial dimension `d`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Grid points (and retained wavenumbers) per axis.
    #[inline]
    pub fn modes_per_axis(&self) -> usize {
        self.m
    }

    /// Total number of lattice sites, `M^d`.
    #[inline]
    pub fn len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    /// True when the grid is empty (never, by construction).
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tensor shape `[M; d]`.
    pub fn shape(&self) -> Vec<usize> {
        vec![self.m; self.d]
    }

    /// Signed wavenumber of per-axis index `i`: `i` for `i ≤ M/2`, else `i−M`.
    #[inline]
    pub fn wavenumber(&self, idx: usize) -> i64 {
        if idx <= self.m / 2 {
            idx as i64
        } else {
            idx as i64 - self.m as i64
        }
    }

    /// Per-axis index carrying the (unrepresentable, always-zero) Nyquist mode.
    #[inline]
    pub fn nyquist_index(&self) -> usize {
        self.m / 2
    }

    /// Physical coordinate of per-axis index `i`.
    #[inline]
    pub fn coord(&self, idx: usize) -> f64 {
        idx as f64 / self.m as f64
    }

    /// Visit every lattice site: `f(flat, idx)` with `idx` the per-axis
    /// indices in row-major order (last axis fastest).
    pub fn for_each_index(&self, mut f: impl FnMut(usize, &[usize])) {
        let mut idx = vec![0usize; self.d];
        for flat in 0..self.len() {
            f(flat, &idx);
            for ax in (0..self.d).rev() {
                idx[ax] += 1;
                if idx[ax] < self.m {
                    break;
                }
                idx[ax] = 0;
            }
        }
    }

    /// Visit every mode: `f(flat, k)` with `k` the signed wavevector.
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, &[i64])) {
        let mut idx = vec![0usize; self.d];
        let mut k = vec![0i64; self.d];
        for flat in 0..self.len() {
            for ax in 0..self.d {
                k[ax] = self.wavenumber(idx[ax]);
            }
            f(flat, &k);
            for ax in (0..self.d).rev() {
                idx[ax] += 1;
                if idx[ax] < self.m {
                    break;
                }
                idx[ax] = 0;
            }
        }
    }

    /// Flat (row-major) position of a signed wavevector, if representable.
    pub fn mode_position(&self, k: &[i64]) -> Option<usize> {
        assert_eq!(k.len(), self.d);
        let half = (self.m / 2) as i64;
        let mut flat = 0usize;
        for &kj in k {
            if kj <= -half || kj > half {
                return None;
            }
            let idx = if kj >= 0 { kj } else { kj + self.m as i64 } as usize;
            flat = flat * self.m + idx;
        }
        Some(flat)
    }

    /// `|2πk|²` for a signed wavevector.
    #[inline]
    pub fn laplace_symbol(k: &[i64]) -> f64 {
        let s: i64 = k.iter().map(|&x| x * x).sum();
        (2.0 * std::f64::consts::PI).powi(2) * s as f64
    }
}

/// A real scalar field stored by its Fourier coefficients.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: TorusGrid,
    coeff: ArrayD<Complex64>,
}

impl SpectralField {
    /// The zero field.
    pub fn zero(grid: TorusGrid) -> Self {
        Self {
            grid,
            coeff: ArrayD::zeros(IxDyn(&grid.shape())),
        }
    }

    /// The constant field `u ≡ c`.
    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        let mut f = Self::zero(grid);
        f.coeff.as_slice_mut().unwrap()[0] = Complex64::new(c, 0.0);
        f
    }

    /// Wrap raw coefficients (row-major `[M; d]`); Nyquist planes are zeroed.
    pub fn from_coefficients(grid: TorusGrid, coeff: ArrayD<Complex64>) -> Result<Self> {
        if coeff.shape() != grid.shape().as_slice() {
            return Err(Error::InvalidSpec(format!(
                "coefficient shape {:?} does not match grid {:?}",
                coeff.shape(),
                grid.shape()
            )));
        }
        let mut f = Self { grid, coeff };
        f.zero_nyquist();
        Ok(f)
    }

    /// Transform physical samples on the grid into coefficients.
    pub fn from_physical(grid: TorusGrid, values: &ArrayD<f64>) -> Result<Self> {
        if values.shape() != grid.shape().as_slice() {
            return Err(Error::InvalidSpec(format!(
                "sample shape {:?} does not match grid {:?}",
                values.shape(),
                grid.shape()
            )));
        }
        let mut coeff = values.mapv(|v| Complex64::new(v, 0.0));
        fft_all_axes(&mut coeff, FftDirection::Forward);
        let scale = 1.0 / grid.len() as f64;
        coeff.mapv_inplace(|c| c * scale);
        let mut f = Self { grid, coeff };
        f.zero_nyquist();
        Ok(f)
    }

    /// Sample a closure at grid points and transform.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
        let slice = values.as_slice_mut().unwrap();
        let mut x = vec![0.0; grid.dim()];
        grid.for_each_index(|flat, idx| {
            for (xi, &i) in x.iter_mut().zip(idx) {
                *xi = grid.coord(i);
            }
            slice[flat] = f(&x);
        });
        Self::from_physical(grid, &values).expect("shape is consistent by construction")
    }

    /// The grid this field lives on.
    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Immutable coefficient tensor.
    #[inline]
    pub fn coefficients(&self) -> &ArrayD<Complex64> {
        &self.coeff
    }

    /// Mutable coefficient tensor (callers must preserve conjugate symmetry).
    #[inline]
    pub fn coefficients_mut(&mut self) -> &mut ArrayD<Complex64> {
        &mut self.coeff
    }

    /// Coefficient of the signed wavevector `k` (zero outside the band).
    pub fn coefficient(&self, k: &[i64]) -> Complex64 {
        match self.grid.mode_position(k) {
            Some(flat) => self.coeff.as_slice().unwrap()[flat],
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Set the coefficients of `k` and `−k` to `c` and `conj(c)`.
    pub fn set_mode_pair(&mut self, k: &[i64], c: Complex64) {
        let neg: Vec<i64> = k.iter().map(|&x| -x).collect();
        let slice = self.coeff.as_slice_mut().unwrap();
        if let Some(p) = self.grid.mode_position(k) {
            slice[p] = c;
        }
        if let Some(p) = self.grid.mode_position(&neg) {
            slice[p] = c.conj();
        }
    }

    /// Inverse transform to physical samples; imaginary residue is dropped
    /// (it is at rounding level for conjugate-symmetric coefficients).
    pub fn to_physical(&self) -> ArrayD<f64> {
        let mut work = self.coeff.clone();
        fft_all_axes(&mut work, FftDirection::Inverse);
        work.mapv(|c| c.re)
    }

    /// Mean of the field, `û(0)`; the mass of a density.
    #[inline]
    pub fn mass(&self) -> f64 {
        self.coeff.as_slice().unwrap()[0].re
    }

    /// `L²(T^d)` norm (includes the mean).
    pub fn l2_norm(&self) -> f64 {
        self.coeff
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Homogeneous Sobolev norm `‖u‖_{Ḣ^s}`; the mean mode never enters.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let slice = self.coeff.as_slice().unwrap();
        let mut total = 0.0;
        self.grid.for_each_mode(|flat, k| {
            if k.iter().all(|&x| x == 0) {
                return;
            }
            let w = TorusGrid::laplace_symbol(k).powf(s);
            total += w * slice[flat].norm_sqr();
        });
        total.sqrt()
    }

    /// Squared homogeneous Sobolev norm (cheaper when the square is wanted).
    pub fn sobolev_norm_sq(&self, s: f64) -> f64 {
        let n = self.sobolev_norm(s);
        n * n
    }

    /// Laplacian: multiplier `−|2πk|²`.
    pub fn laplacian(&self) -> Self {
        let mut out = self.clone();
        let slice = out.coeff.as_slice_mut().unwrap();
        self.grid.for_each_mode(|flat, k| {
            slice[flat] *= -TorusGrid::laplace_symbol(k);
        });
        out
    }

    /// Gradient components: `(∂_j u)^ = 2πi k_j û`.
    pub fn grad(&self) -> Vec<Self> {
        let tau = 2.0 * std::f64::consts::PI;
        (0..self.grid.dim())
            .map(|j| {
                let mut out = self.clone();
                let slice = out.coeff.as_slice_mut().unwrap();
                self.grid.for_each_mode(|flat, k| {
                    slice[flat] *= Complex64::new(0.0, tau * k[j] as f64);
                });
                out
            })
            .collect()
    }

    /// Divergence of a vector field given by components.
    pub fn divergence(components: &[Self]) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidSpec("divergence of empty vector".into()));
        };
        let grid = first.grid;
        if components.len() != grid.dim() {
            return Err(Error::InvalidSpec(format!(
                "divergence needs {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        let tau = 2.0 * std::f64::consts::PI;
        let mut out = Self::zero(grid);
        let slice = out.coeff.as_slice_mut().unwrap();
        for (j, comp) in components.iter().enumerate() {
            if comp.grid != grid {
                return Err(Error::InvalidSpec("mixed grids in divergence".into()));
            }
            let c = comp.coeff.as_slice().unwrap();
            grid.for_each_mode(|flat, k| {
                slice[flat] += Complex64::new(0.0, tau * k[j] as f64) * c[flat];
            });
        }
        Ok(out)
    }

    /// Convolution with this field as kernel: `(self ∗ other)^ = self^ · other^`.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidSpec("convolution across grids".into()));
        }
        let mut out = self.clone();
        let a = other.coeff.as_slice().unwrap();
        let slice = out.coeff.as_slice_mut().unwrap();
        for (c, &o) in slice.iter_mut().zip(a) {
            *c *= o;
        }
        Ok(out)
    }

    /// Pointwise product computed pseudo-spectrally (no dealiasing applied;
    /// callers dealias according to their scheme).
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidSpec("product across grids".into()));
        }
        let a = self.to_physical();
        let b = other.to_physical();
        Self::from_physical(self.grid, &(a * b))
    }

    /// In-place scalar multiple.
    pub fn scale(&mut self, a: f64) {
        for c in self.coeff.iter_mut() {
            *c *= a;
        }
    }

    /// In-place weighted sum `self += a·other`.
    pub fn add_scaled(&mut self, other: &Self, a: f64) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidSpec("sum across grids".into()));
        }
        let src = other.coeff.as_slice().unwrap();
        for (c, &o) in self.coeff.as_slice_mut().unwrap().iter_mut().zip(src) {
            *c += a * o;
        }
        Ok(())
    }

    /// Overwrite the mean (`û(0)`), e.g. to re-pin the mass of a density
    /// after an operation that conserves it only approximately.
    pub fn set_mean(&mut self, mean: f64) {
        self.coeff.as_slice_mut().unwrap()[0] = Complex64::new(mean, 0.0);
    }

    /// Two-thirds-rule dealiasing: zero every coefficient with any
    /// `|k_j| > M/3`. Idempotent.
    pub fn dealias(&mut self) {
        let m = self.grid.modes_per_axis() as i64;
        let slice = self.coeff.as_slice_mut().unwrap();
        self.grid.for_each_mode(|flat, k| {
            if k.iter().any(|&x| 3 * x.abs() > m) {
                slice[flat] = Complex64::new(0.0, 0.0);
            }
        });
    }

    /// Restore exact conjugate symmetry `û(−k) = conj(û(k))` by averaging
    /// (controls rounding drift in long runs).
    pub fn symmetrize(&mut self) {
        let grid = self.grid;
        let slice = self.coeff.as_slice_mut().unwrap();
        let mut neg = vec![0i64; grid.dim()];
        grid.for_each_mode(|flat, k| {
            for (n, &x) in neg.iter_mut().zip(k) {
                *n = -x;
            }
            if let Some(p) = grid.mode_position(&neg) {
                if p > flat {
                    let avg = 0.5 * (slice[flat] + slice[p].conj());
                    slice[flat] = avg;
                    slice[p] = avg.conj();
                } else if p == flat {
                    slice[flat] = Complex64::new(slice[flat].re, 0.0);
                }
            }
        });
    }

    /// Largest deviation from conjugate symmetry (diagnostic).
    pub fn asymmetry(&self) -> f64 {
        let slice = self.coeff.as_slice().unwrap();
        let mut worst = 0.0f64;
        let mut neg = vec![0i64; self.grid.dim()];
        self.grid.for_each_mode(|flat, k| {
            for (n, &x) in neg.iter_mut().zip(k) {
                *n = -x;
            }
            if let Some(p) = self.grid.mode_position(&neg) {
                worst = worst.max((slice[flat] - slice[p].conj()).norm());
            }
        });
        worst
    }

    /// Evaluate the trigonometric polynomial at arbitrary points by direct
    /// mode summation: `u(x) = Σ_k û(k) e^{2πik·x}`. Points are row-major
    /// `[n][d]` coordinates in `[0,1)` (any real values are fine; the
    /// exponential is periodic). O(modes) per point — the reference path;
    /// see [`crate::nufft`] for the fast equivalent.
    pub fn eval_direct(&self, points: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        assert_eq!(points.len() % d, 0, "points buffer must be n·d long");
        let n = points.len() / d;
        let m = self.grid.modes_per_axis();
        let half = m / 2;
        let slice = self.coeff.as_slice().unwrap();
        let tau = 2.0 * std::f64::consts::PI;

        // Nonzero modes only; at dealiased resolution most of the tensor is 0.
        let mut modes: Vec<(Vec<i64>, Complex64)> = Vec::new();
        self.grid.for_each_mode(|flat, k| {
            let c = slice[flat];
            if c.norm_sqr() > 0.0 {
                modes.push((k.to_vec(), c));
            }
        });

        let mut out = vec![0.0; n];
        // Per-axis phase tables p^j for j = -M/2..=M/2, rebuilt per point.
        let mut table = vec![Complex64::new(1.0, 0.0); d * (m + 1)];
        for (pi, val) in out.iter_mut().enumerate() {
            let x = &points[pi * d..(pi + 1) * d];
            for (ax, &xa) in x.iter().enumerate() {
                let base = Complex64::from_polar(1.0, tau * xa);
                let row = &mut table[ax * (m + 1)..(ax + 1) * (m + 1)];
                row[half] = Complex64::new(1.0, 0.0);
                for j in 1..=half {
                    row[half + j] = row[half + j - 1] * base;
                    row[half - j] = row[half - j + 1] * base.conj();
                }
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, c) in &modes {
                let mut phase = Complex64::new(1.0, 0.0);
                for (ax, &kj) in k.iter().enumerate() {
                    phase *= table[ax * (m + 1) + (half as i64 + kj) as usize];
                }
                acc += c * phase;
            }
            *val = acc.re;
        }
        out
    }

    fn zero_nyquist(&mut self) {
        let ny = self.grid.nyquist_index();
        for ax in 0..self.grid.dim() {
            self.coeff
                .index_axis_mut(Axis(ax), ny)
                .fill(Complex64::new(0.0, 0.0));
        }
    }
}

/// In-place FFT along every axis (unnormalized, rustfft conventions).
pub(crate) fn fft_all_axes(data: &mut ArrayD<Complex64>, direction: FftDirection) {
    let ndim = data.ndim();
    for ax in 0..ndim {
        let len = data.shape()[ax];
        let fft = plan(len, direction);
        let mut scratch = vec![Complex64::new(0.0, 0.0); len];
        for mut lane in data.lanes_mut(Axis(ax)) {
            for (s, v) in scratch.iter_mut().zip(lane.iter()) {
                *s = *v;
            }
            fft.process(&mut scratch);
            for (v, s) in lane.iter_mut().zip(&scratch) {
                *v = *s;
            }
        }
    }
}
