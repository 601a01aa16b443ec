//! Fast evaluation of band-limited fields at scattered points.
//!
//! The semi-Lagrangian transport backends need `u(x_p)` for every grid
//! node's preimage `x_p` at every step. Direct summation of the
//! trigonometric series ([`SpectralField::eval_direct`]) costs
//! `O(M^d · M^d)` per evaluation and dominates the run time of ensemble
//! experiments; this module provides the standard gridded alternative
//! (a type-2 nonuniform FFT):
//!
//! 1. divide the coefficients by the window's analytic Fourier transform
//!    (deconvolution),
//! 2. inverse-FFT onto a 2×-oversampled grid,
//! 3. interpolate at each target with a compactly supported Kaiser–Bessel
//!    window (`2J+1` taps per axis).
//!
//! With oversampling 2 and half-width `J` the aliasing error is
//! `O(1/I₀(β))`, `β = 3πJ/2` — about `1e-9` at `J = 5` — uniformly over
//! points, because the window transform transitions from `sinh` to `sin`
//! exactly at the first alias of the band edge. `eval_direct` stays the
//! independent oracle the evaluator is tested against.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use rustfft::FftDirection;

use crate::spectral::{fft_all_axes, SpectralField};
use crate::{Error, Result};

/// Kernel half-width in fine-grid cells (11 taps per axis).
const HALF_WIDTH: i64 = 5;

/// Modified Bessel function `I₀` by its (all-positive) power series.
fn bessel_i0(x: f64) -> f64 {
    let t = 0.25 * x * x;
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut m = 1.0;
    while term > sum * 1e-17 {
        term *= t / (m * m);
        sum += term;
        m += 1.0;
    }
    sum
}

/// Analytic Fourier transform of the Kaiser–Bessel window
/// `ψ(t) = I₀(β√(1−(t/J)²))/I₀(β)` on `|t| ≤ J`, evaluated at frequency ν
/// (cycles per cell): `ψ̂(ν) = 2J·sinh(z)/(z·I₀(β))`, `z = √(β²−(2πJν)²)`,
/// continued with `sin` past the transition.
fn kb_hat(beta: f64, half_width: f64, nu: f64) -> f64 {
    let w = std::f64::consts::TAU * half_width * nu;
    let z2 = beta * beta - w * w;
    let front = 2.0 * half_width / bessel_i0(beta);
    if z2 > 0.0 {
        let z = z2.sqrt();
        if z < 1e-8 {
            front
        } else {
            front * z.sinh() / z
        }
    } else {
        let z = (-z2).sqrt();
        if z < 1e-8 {
            front
        } else {
            front * z.sin() / z
        }
    }
}

/// A band-limited field frozen into an oversampled physical representation
/// for repeated point evaluation.
#[derive(Clone, Debug)]
pub struct Evaluator {
    d: usize,
    fine_m: usize,
    beta: f64,
    /// Real samples of the deconvolved field on the `[2M]^d` grid.
    fine: ArrayD<f64>,
}

impl Evaluator {
    /// Precompute the oversampled grid for `field`.
    pub fn new(field: &SpectralField) -> Result<Self> {
        let grid = field.grid();
        let d = grid.dim();
        let m = grid.modes_per_axis();
        if (m as i64) < 4 * HALF_WIDTH {
            return Err(Error::InvalidSpec(format!(
                "grid with M = {m} is too coarse for the interpolation window; \
                 use eval_direct instead"
            )));
        }
        let fine_m = 2 * m;
        let beta = 1.5 * std::f64::consts::PI * HALF_WIDTH as f64;
        // Per-axis deconvolution factors for |k| ≤ M/2.
        let half = (m / 2) as i64;
        let mut inv_c = vec![0.0; (2 * half + 1) as usize];
        for (i, c) in inv_c.iter_mut().enumerate() {
            let k = i as i64 - half;
            *c = 1.0 / kb_hat(beta, HALF_WIDTH as f64, k as f64 / fine_m as f64);
        }
        let mut padded = ArrayD::from_elem(IxDyn(&vec![fine_m; d]), Complex64::new(0.0, 0.0));
        let mut fine_idx = vec![0usize; d];
        grid.for_each_index(|flat, idx| {
            let c = field.coefficients().as_slice().expect("contiguous")[flat];
            if c == Complex64::new(0.0, 0.0) {
                return;
            }
            let mut scale = 1.0;
            for (axis, &i) in idx.iter().enumerate() {
                let k = grid.wavenumber(i);
                scale *= inv_c[(k + half) as usize];
                fine_idx[axis] = if k >= 0 { k as usize } else { fine_m - (-k) as usize };
            }
            padded[IxDyn(&fine_idx)] = c * scale;
        });
        fft_all_axes(&mut padded, FftDirection::Inverse);
        Ok(Self {
            d,
            fine_m,
            beta,
            fine: padded.mapv(|c| c.re),
        })
    }

    /// Evaluate at `points` (row-major `[n][d]`; coordinates need not be
    /// wrapped into `[0,1)^d`).
    pub fn eval(&self, points: &[f64]) -> Vec<f64> {
        assert_eq!(points.len() % self.d, 0, "points buffer must be n·d long");
        let mut out = vec![0.0; points.len() / self.d];
        self.eval_into(points, &mut out);
        out
    }

    /// Evaluate into a caller-provided buffer (one value per point).
    pub fn eval_into(&self, points: &[f64], out: &mut [f64]) {
        let d = self.d;
        let n = points.len() / d;
        assert_eq!(out.len(), n, "one output slot per point");
        let mf = self.fine_m;
        let j = HALF_WIDTH;
        let taps = (2 * j + 1) as usize;
        let inv_i0 = 1.0 / bessel_i0(self.beta);
        let fine = self.fine.as_slice().expect("contiguous");
        // Per-axis window weights and wrapped base indices for one point.
        let mut weights = vec![0.0; d * taps];
        let mut bases = vec![0usize; d];
        for (p, slot) in points.chunks(d).zip(out.iter_mut()) {
            for axis in 0..d {
                let x = p[axis];
                let s = (x - x.floor()) * mf as f64;
                let center = s.round();
                bases[axis] = (center as i64 - j).rem_euclid(mf as i64) as usize;
                for t in 0..taps {
                    let delta = (center - j as f64 + t as f64 - s) / j as f64;
                    let arg = 1.0 - delta * delta;
                    weights[axis * taps + t] = if arg > 0.0 {
                        bessel_i0(self.beta * arg.sqrt()) * inv_i0
                    } else {
                        0.0
                    };
                }
            }
            *slot = if d == 2 {
                let (b0, b1) = (bases[0], bases[1]);
                let mut acc = 0.0;
                for t0 in 0..taps {
                    let w0 = weights[t0];
                    if w0 == 0.0 {
                        continue;
                    }
                    let row = ((b0 + t0) % mf) * mf;
                    let mut inner = 0.0;
                    for t1 in 0..taps {
                        inner += weights[taps + t1] * fine[row + (b1 + t1) % mf];
                    }
                    acc += w0 * inner;
                }
                acc
            } else {
                self.accumulate_general(fine, &weights, &bases, taps)
            };
        }
    }

    /// Tensor-product accumulation for arbitrary dimension (odometer over
    /// the `taps^d` window).
    fn accumulate_general(
        &self,
        fine: &[f64],
        weights: &[f64],
        bases: &[usize],
        taps: usize,
    ) -> f64 {
        let d = self.d;
        let mf = self.fine_m;
        let mut counter = vec![0usize; d];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            let mut flat = 0usize;
            for axis in 0..d {
                w *= weights[axis * taps + counter[axis]];
                flat = flat * mf + (bases[axis] + counter[axis]) % mf;
            }
            acc += w * fine[flat];
            let mut axis = d;
            loop {
                if axis == 0 {
                    return acc;
                }
                axis -= 1;
                counter[axis] += 1;
                if counter[axis] < taps {
                    break;
                }
                counter[axis] = 0;
            }
        }
    }
}
