//! Stochastic characteristics of the transport noise.
//!
//! The characteristics SDE associated with the transport term is
//!
//! ```text
//! dX_t = −√2 K Σ_{k} Σ_j θ_k a_k^{(j)} e^{2πik·X_t} ∘ dB^{(j)}(t, k),
//! ```
//!
//! whose flow `φ_t` represents pure transport exactly: the solution of
//! `du = √2 K ∇·(u ∘ dξ)` is the pull-back `u_t = u₀ ∘ φ_t⁻¹`. Because every
//! mode's displacement is perpendicular to its own wavevector, the field is
//! divergence-free and the flow is volume-preserving (`det Dφ = 1`).
//!
//! Discretizations provided here:
//!
//! * **Heun** (midpoint predictor) — the Stratonovich one-step scheme used
//!   for white-noise drivers. The Itô–Stratonovich corrector
//!   `Σ_α (σ_α·∇)σ_α` vanishes identically for this field (each mode is a
//!   shear), so Euler–Maruyama must agree with Heun in law; the test suite
//!   checks that numerically rather than assuming it.
//! * **Euler–Maruyama** — the Itô scheme, kept for the agreement check.
//! * **Shear splitting** — a Strang palindrome of per-mode shears. A single
//!   mode's flow is *exact*: the phase `2πk·x` is constant along its own
//!   displacement, so `x ↦ x + v_k(x)` integrates the mode without error for
//!   any increment size. The palindrome is exactly volume-preserving and its
//!   inverse is itself with negated increments, which makes it the robust
//!   backend for strong noise; it is cross-validated against Heun.
//! * **Wong–Zakai** — for piecewise-linear driver paths the characteristics
//!   are an ODE, integrated by classical RK4 within each linear segment.
//!
//! Backward (inverse-flow) integration applies the substep maps in reverse
//! order with opposite sign — preimages for the semi-Lagrangian pull-back —
//! and [`transport_scalar`] combines that with exact trigonometric
//! evaluation of the initial datum: the independent oracle against which the
//! spectral solvers are judged.
//!
//! Positions are *not* wrapped during integration (phases are periodic and
//! exact composition/group-property tests want raw coordinates); use
//! [`wrap01`] when a representative in `[0,1)^d` is needed.

use num_complex::Complex64;

use crate::noise::{IncrementSource, NoiseGeometry, WongZakaiPath};
use crate::spectral::SpectralField;
use crate::{Error, Result};

/// Time-stepping scheme for white-noise drivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Stratonovich midpoint-predictor (default).
    Heun,
    /// Itô Euler–Maruyama (for the scheme-agreement check).
    EulerMaruyama,
    /// Strang palindrome of exact per-mode shears.
    ShearSplit,
}

/// Orientation of a flow integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// The characteristics map `φ` itself.
    Forward,
    /// The inverse map `φ⁻¹` (preimages; substeps reversed, sign flipped).
    Inverse,
}

/// A sampled flow map: material points, optional Jacobians, orientation.
#[derive(Clone, Debug)]
pub struct FlowMap {
    /// Spatial dimension.
    pub d: usize,
    /// Time horizon integrated.
    pub t: f64,
    /// Row-major `[n][d]` positions, wrapped to `[0,1)^d`.
    pub points: Vec<f64>,
    /// Row-major `[n][d·d]` Jacobian matrices, when tracked.
    pub jacobians: Option<Vec<f64>>,
    /// Per-point `det Dφ`, accumulated substep by substep, when tracked.
    pub dets: Option<Vec<f64>>,
    /// Orientation of the map.
    pub direction: Direction,
}

impl FlowMap {
    /// Per-point `det Dφ` (volume-preservation diagnostic).
    ///
    /// The value is accumulated during integration as the product of the
    /// one-substep Jacobian determinants — mathematically identical to the
    /// determinant of the accumulated matrix, but well-conditioned: in a
    /// stretching flow the matrix entries grow like `e^{λt}` and evaluating
    /// `det ≈ 1` from them loses every significant digit to cancellation,
    /// while each one-substep factor stays near 1.
    pub fn determinants(&self) -> Result<Vec<f64>> {
        self.dets.clone().ok_or_else(|| {
            Error::InvalidSpec("Jacobian tracking was not enabled for this flow".into())
        })
    }
}

/// Wrap a coordinate to `[0,1)`.
#[inline]
pub fn wrap01(x: f64) -> f64 {
    x - x.floor()
}

/// One substep of the chosen scheme; `sign·incr` is the effective increment.
#[inline]
fn step_points(
    geom: &NoiseGeometry,
    incr: &[Complex64],
    sign: f64,
    scheme: Scheme,
    points: &mut [f64],
    scratch: &mut Scratch,
) {
    let d = geom.spec().dim();
    match scheme {
        Scheme::EulerMaruyama => {
            for p in points.chunks_mut(d) {
                geom.displacement_at(p, incr, &mut scratch.v1);
                for (x, &v) in p.iter_mut().zip(&scratch.v1) {
                    *x += sign * v;
                }
            }
        }
        Scheme::Heun => {
            for p in points.chunks_mut(d) {
                geom.displacement_at(p, incr, &mut scratch.v1);
                for ((q, &x), &v) in scratch.pred.iter_mut().zip(p.iter()).zip(&scratch.v1) {
                    *q = x + sign * v;
                }
                geom.displacement_at(&scratch.pred, incr, &mut scratch.v2);
                for ((x, &v1), &v2) in p.iter_mut().zip(&scratch.v1).zip(&scratch.v2) {
                    *x += sign * 0.5 * (v1 + v2);
                }
            }
        }
        Scheme::ShearSplit => {
            shear_palindrome(geom, incr, sign, points);
        }
    }
}

/// Strang palindrome of exact per-mode shears: half increments for all modes
/// but the last, the last in full, then the halves in reverse. Each factor
/// is an exact volume-preserving map; the palindrome's inverse is the same
/// palindrome with `sign` negated.
fn shear_palindrome(geom: &NoiseGeometry, incr: &[Complex64], sign: f64, points: &mut [f64]) {
    let d = geom.spec().dim();
    let per_mode = d - 1;
    let n_groups = geom.n_channels() / per_mode;
    if n_groups == 0 {
        return;
    }
    for g in 0..n_groups - 1 {
        shear_group(geom, incr, sign * 0.5, g, per_mode, points);
    }
    shear_group(geom, incr, sign, n_groups - 1, per_mode, points);
    for g in (0..n_groups.saturating_sub(1)).rev() {
        shear_group(geom, incr, sign * 0.5, g, per_mode, points);
    }
}

/// Apply the exact shear of one primary mode (its `d−1` channels share the
/// phase, which their own displacement leaves invariant).
#[inline]
fn shear_group(
    geom: &NoiseGeometry,
    incr: &[Complex64],
    coeff: f64,
    group: usize,
    per_mode: usize,
    points: &mut [f64],
) {
    let channels = geom.channels();
    let d = channels[0].a.len();
    let first = group * per_mode;
    let k = &channels[first].k;
    let tau = std::f64::consts::TAU;
    for p in points.chunks_mut(d) {
        let phase: f64 = k.iter().zip(p.iter()).map(|(&kj, &xj)| kj as f64 * xj).sum();
        let (s, c) = (tau * phase).sin_cos();
        for j in 0..per_mode {
            let chan = &channels[first + j];
            let db = incr[first + j];
            let w = coeff * 2.0 * chan.amp * (db.re * c - db.im * s);
            for (x, &ai) in p.iter_mut().zip(&chan.a) {
                *x += w * ai;
            }
        }
    }
}

struct Scratch {
    v1: Vec<f64>,
    v2: Vec<f64>,
    pred: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            v1: vec![0.0; d],
            v2: vec![0.0; d],
            pred: vec![0.0; d],
        }
    }
}

/// Drive points through white-noise substeps `substeps` (global indices into
/// the driver's substep grid). `Forward` composes ascending substeps of the
/// characteristics (sign −1); `Inverse` composes descending substeps with
/// sign +1, yielding the one-step-map inverses in reverse order.
pub fn flow_white(
    geom: &NoiseGeometry,
    noise: &impl IncrementSource,
    points: &mut [f64],
    substeps: std::ops::Range<u32>,
    scheme: Scheme,
    direction: Direction,
) {
    let mut incr = vec![Complex64::new(0.0, 0.0); geom.n_channels()];
    let mut scratch = Scratch::new(geom.spec().dim());
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    match direction {
        Direction::Forward => {
            for s in substeps {
                noise.fill(s, &mut incr);
                step_points(geom, &incr, sign, scheme, points, &mut scratch);
            }
        }
        Direction::Inverse => {
            for s in substeps.rev() {
                noise.fill(s, &mut incr);
                step_points(geom, &incr, sign, scheme, points, &mut scratch);
            }
        }
    }
}

/// Flow with the exact variational (Jacobian) system alongside.
///
/// `mats` holds row-major d×d matrices per point (initialize to identity for
/// `Dφ`); `dets` holds the per-point running determinant (initialize to 1),
/// multiplied each substep by the one-substep Jacobian's determinant so that
/// volume diagnostics stay well-conditioned even when the matrix entries
/// grow exponentially. The update is the exact derivative of the chosen
/// discrete map, so `det` measures precisely the scheme's volume error:
///
/// * **ShearSplit** — every shear's Jacobian is `I + u⊗k` with `u ⊥ k`, so
///   `det = 1 + u·k ≡ 1` to rounding. This realizes the structural volume
///   preservation (`tr ∇(a_k e_k) = 2πi (k·a_k) = 0`) exactly and is the
///   scheme to use when asserting tight determinant tolerances.
/// * **Heun** — the trace terms cancel (the same `k·a = 0` structure), but
///   the per-substep determinant keeps a mean-zero `O(|∇ΔV|²)` fluctuation,
///   so `log det` performs a random walk with standard deviation
///   `O((2πK)² √(t·dt))`: small over short, weak-noise horizons, order one
///   in the stretching regime — a scheme diagnostic, not a flaw of the flow.
#[allow(clippy::too_many_arguments)]
pub fn flow_white_with_jacobian(
    geom: &NoiseGeometry,
    noise: &impl IncrementSource,
    points: &mut [f64],
    mats: &mut [f64],
    dets: &mut [f64],
    substeps: std::ops::Range<u32>,
    scheme: Scheme,
    direction: Direction,
) {
    let d = geom.spec().dim();
    let dd = d * d;
    let n = points.len() / d;
    assert_eq!(mats.len(), n * dd, "one d×d matrix per point");
    assert_eq!(dets.len(), n, "one determinant per point");
    assert!(
        scheme != Scheme::EulerMaruyama,
        "variational system is provided for the Stratonovich schemes"
    );
    let mut incr = vec![Complex64::new(0.0, 0.0); geom.n_channels()];
    let mut scratch = Scratch::new(d);
    let mut g1 = vec![0.0; dd];
    let mut g2 = vec![0.0; dd];
    let mut jmap = vec![0.0; dd];
    let mut tmp = vec![0.0; dd];
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let order: Vec<u32> = match direction {
        Direction::Forward => substeps.collect(),
        Direction::Inverse => substeps.rev().collect(),
    };
    for s in order {
        noise.fill(s, &mut incr);
        if scheme == Scheme::ShearSplit {
            shear_palindrome_with_jacobian(geom, &incr, sign, points, mats, dets);
            continue;
        }
        for pi in 0..n {
            let p = &mut points[pi * d..(pi + 1) * d];
            geom.displacement_at(p, &incr, &mut scratch.v1);
            geom.displacement_grad_at(p, &incr, &mut g1);
            for ((q, &x), &v) in scratch.pred.iter_mut().zip(p.iter()).zip(&scratch.v1) {
                *q = x + sign * v;
            }
            geom.displacement_at(&scratch.pred, &incr, &mut scratch.v2);
            geom.displacement_grad_at(&scratch.pred, &incr, &mut g2);
            // Exact Jacobian of the Heun map:
            //   J = I + (sign/2)·(G1 + G2·(I + sign·G1)).
            for i in 0..d {
                for j in 0..d {
                    let mut g2g1 = 0.0;
                    for l in 0..d {
                        g2g1 += g2[i * d + l] * g1[l * d + j];
                    }
                    let idd = if i == j { 1.0 } else { 0.0 };
                    jmap[i * d + j] =
                        idd + 0.5 * sign * (g1[i * d + j] + g2[i * d + j] + sign * g2g1);
                }
            }
            dets[pi] *= det_small(&jmap, d);
            // M ← J·M.
            let m = &mut mats[pi * dd..(pi + 1) * dd];
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += jmap[i * d + l] * m[l * d + j];
                    }
                    tmp[i * d + j] = acc;
                }
            }
            m.copy_from_slice(&tmp);
            for ((x, &v1), &v2) in p.iter_mut().zip(&scratch.v1).zip(&scratch.v2) {
                *x += sign * 0.5 * (v1 + v2);
            }
        }
    }
}

/// Shear palindrome updating points, exact Jacobians, and running dets.
fn shear_palindrome_with_jacobian(
    geom: &NoiseGeometry,
    incr: &[Complex64],
    sign: f64,
    points: &mut [f64],
    mats: &mut [f64],
    dets: &mut [f64],
) {
    let d = geom.spec().dim();
    let per_mode = d - 1;
    let n_groups = geom.n_channels() / per_mode;
    if n_groups == 0 {
        return;
    }
    for g in 0..n_groups - 1 {
        shear_group_with_jacobian(geom, incr, sign * 0.5, g, per_mode, points, mats, dets);
    }
    shear_group_with_jacobian(geom, incr, sign, n_groups - 1, per_mode, points, mats, dets);
    for g in (0..n_groups.saturating_sub(1)).rev() {
        shear_group_with_jacobian(geom, incr, sign * 0.5, g, per_mode, points, mats, dets);
    }
}

/// One exact shear with its Jacobian `J = I + u⊗k` (`u ⊥ k`, `det = 1+u·k`).
#[inline]
#[allow(clippy::too_many_arguments)]
fn shear_group_with_jacobian(
    geom: &NoiseGeometry,
    incr: &[Complex64],
    coeff: f64,
    group: usize,
    per_mode: usize,
    points: &mut [f64],
    mats: &mut [f64],
    dets: &mut [f64],
) {
    let channels = geom.channels();
    let d = channels[0].a.len();
    let dd = d * d;
    let first = group * per_mode;
    let k = &channels[first].k;
    let tau = std::f64::consts::TAU;
    let mut u = vec![0.0; d];
    let mut tmp = vec![0.0; dd];
    for ((p, m), det) in points
        .chunks_mut(d)
        .zip(mats.chunks_mut(dd))
        .zip(dets.iter_mut())
    {
        let phase: f64 = k.iter().zip(p.iter()).map(|(&kj, &xj)| kj as f64 * xj).sum();
        let (s, c) = (tau * phase).sin_cos();
        u.fill(0.0);
        for j in 0..per_mode {
            let chan = &channels[first + j];
            let db = incr[first + j];
            let w = coeff * 2.0 * chan.amp * (db.re * c - db.im * s);
            let dw = coeff * 2.0 * chan.amp * (-db.re * s - db.im * c) * tau;
            for ((x, ui), &ai) in p.iter_mut().zip(u.iter_mut()).zip(&chan.a) {
                *x += w * ai;
                *ui += dw * ai;
            }
        }
        let kdotu: f64 = k.iter().zip(&u).map(|(&kl, &ul)| kl as f64 * ul).sum();
        *det *= 1.0 + kdotu;
        // M ← (I + u⊗k)·M, i.e. row i gains u_i · (k·column_j).
        for j in 0..d {
            let mut kdotm = 0.0;
            for l in 0..d {
                kdotm += k[l] as f64 * m[l * d + j];
            }
            for i in 0..d {
                tmp[i * d + j] = m[i * d + j] + u[i] * kdotm;
            }
        }
        m.copy_from_slice(&tmp);
    }
}

/// How to integrate along a piecewise-linear driver path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathScheme {
    /// Classical RK4 with `substeps` stages per linear segment (the ODE view).
    Rk4 { substeps: u32 },
    /// One Heun step per segment consuming the segment increment (the
    /// Stratonovich reference on the same discretized Brownian path).
    HeunIncrement,
}

/// Drive points along a piecewise-linear driver (Wong–Zakai or deterministic
/// control path) over `segments`.
pub fn flow_path(
    geom: &NoiseGeometry,
    path: &WongZakaiPath,
    points: &mut [f64],
    segments: std::ops::Range<usize>,
    scheme: PathScheme,
    direction: Direction,
) {
    let nchan = geom.n_channels();
    assert_eq!(path.n_channels(), nchan, "driver/spec channel mismatch");
    let d = geom.spec().dim();
    let mut incr = vec![Complex64::new(0.0, 0.0); nchan];
    let mut scratch = Scratch::new(d);
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let order: Vec<usize> = match direction {
        Direction::Forward => segments.collect(),
        Direction::Inverse => segments.rev().collect(),
    };
    for seg in order {
        for (c, b) in incr.iter_mut().enumerate() {
            *b = path.value(c, seg + 1) - path.value(c, seg);
        }
        match scheme {
            PathScheme::HeunIncrement => {
                step_points(geom, &incr, sign, Scheme::Heun, points, &mut scratch);
            }
            PathScheme::Rk4 { substeps } => {
                let h = 1.0 / f64::from(substeps.max(1));
                // Velocity per unit segment-time is the increment field; RK4
                // on dx/dτ = sign·V(x), τ ∈ [0,1].
                for _ in 0..substeps.max(1) {
                    for p in points.chunks_mut(d) {
                        rk4_stage(geom, &incr, sign * h, p, &mut scratch);
                    }
                }
            }
        }
    }
}

/// One RK4 step of size `h` (already signed) for one point.
#[inline]
fn rk4_stage(
    geom: &NoiseGeometry,
    incr: &[Complex64],
    h: f64,
    p: &mut [f64],
    scratch: &mut Scratch,
) {
    let d = p.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    geom.displacement_at(p, incr, &mut k1);
    for i in 0..d {
        scratch.pred[i] = p[i] + 0.5 * h * k1[i];
    }
    geom.displacement_at(&scratch.pred, incr, &mut k2);
    for i in 0..d {
        scratch.pred[i] = p[i] + 0.5 * h * k2[i];
    }
    geom.displacement_at(&scratch.pred, incr, &mut k3);
    for i in 0..d {
        scratch.pred[i] = p[i] + h * k3[i];
    }
    geom.displacement_at(&scratch.pred, incr, &mut k4);
    for i in 0..d {
        p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrate the characteristics over `[0, t_end]` from `initial` points.
///
/// The high-level entry point: validates the configuration, runs the chosen
/// scheme, optionally tracks Jacobians (Stratonovich schemes only), and
/// returns a wrapped [`FlowMap`].
#[allow(clippy::too_many_arguments)]
pub fn integrate_characteristics(
    geom: &NoiseGeometry,
    noise: &impl IncrementSource,
    initial: &[f64],
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    direction: Direction,
    track_jacobian: bool,
) -> Result<FlowMap> {
    let d = geom.spec().dim();
    if initial.len() % d != 0 {
        return Err(Error::InvalidSpec("points buffer must be n·d long".into()));
    }
    if !initial.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidSpec("non-finite initial positions".into()));
    }
    if dt <= 0.0 || t_end < 0.0 {
        return Err(Error::InvalidSpec("need dt > 0 and t_end ≥ 0".into()));
    }
    let steps = t_end / dt;
    let n_steps = steps.round();
    if (steps - n_steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::InvalidSpec(format!(
            "dt = {dt} does not divide t_end = {t_end}"
        )));
    }
    if (noise.dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::InvalidSpec(
            "driver substep resolution must equal dt".into(),
        ));
    }
    let n_steps = n_steps as u32;
    let mut points = initial.to_vec();
    let (jacobians, dets) = if track_jacobian {
        if scheme == Scheme::EulerMaruyama {
            return Err(Error::InvalidSpec(
                "Jacobian tracking is implemented for the Stratonovich schemes".into(),
            ));
        }
        let n = points.len() / d;
        let mut mats = vec![0.0; n * d * d];
        for m in mats.chunks_mut(d * d) {
            for i in 0..d {
                m[i * d + i] = 1.0;
            }
        }
        let mut dets = vec![1.0; n];
        flow_white_with_jacobian(
            geom,
            noise,
            &mut points,
            &mut mats,
            &mut dets,
            0..n_steps,
            scheme,
            direction,
        );
        (Some(mats), Some(dets))
    } else {
        flow_white(geom, noise, &mut points, 0..n_steps, scheme, direction);
        (None, None)
    };
    if !points.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerics("flow produced non-finite positions".into()));
    }
    for x in &mut points {
        *x = wrap01(*x);
    }
    Ok(FlowMap {
        d,
        t: t_end,
        points,
        jacobians,
        dets,
        direction,
    })
}

/// Pure-transport pull-back oracle: `u_t = u₀∘φ⁻¹`, computed by integrating
/// grid nodes backward through substeps `0..n_substeps` and evaluating the
/// trigonometric series of `u₀` at the preimages (spectrally accurate
/// semi-Lagrangian; preserves the range of `u₀` up to evaluation error).
pub fn transport_scalar(
    u0: &SpectralField,
    geom: &NoiseGeometry,
    noise: &impl IncrementSource,
    n_substeps: u32,
    scheme: Scheme,
) -> Result<SpectralField> {
    let grid = u0.grid();
    if grid.dim() != geom.spec().dim() {
        return Err(Error::InvalidSpec("grid/noise dimension mismatch".into()));
    }
    let d = grid.dim();
    let mut pts = Vec::with_capacity(grid.len() * d);
    grid.for_each_index(|_, idx| {
        for &i in idx {
            pts.push(grid.coord(i));
        }
    });
    flow_white(geom, noise, &mut pts, 0..n_substeps, scheme, Direction::Inverse);
    let vals = u0.eval_direct(&pts);
    let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&grid.shape()), vals)
        .expect("value buffer matches grid shape");
    SpectralField::from_physical(grid, &arr)
}

/// Determinant of a small row-major d×d matrix (Gaussian elimination).
fn det_small(mat: &[f64], d: usize) -> f64 {
    let mut a = mat.to_vec();
    let mut det = 1.0;
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[piv * d + col].abs() {
                piv = r;
            }
        }
        if a[piv * d + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..d {
                a.swap(col * d + c, piv * d + c);
            }
            det = -det;
        }
        let p = a[col * d + col];
        det *= p;
        for r in col + 1..d {
            let f = a[r * d + col] / p;
            for c in col..d {
                a[r * d + c] -= f * a[col * d + c];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseSpec, WhiteNoise};
    use crate::rng::{Purpose, StreamRng};
    use crate::spectral::TorusGrid;
    use approx::assert_abs_diff_eq;

    fn setup(k: f64) -> (NoiseGeometry, WhiteNoise) {
        let spec = NoiseSpec::unit_shell(2, k).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let noise = WhiteNoise::new(StreamRng::new(31, 0, Purpose::CommonNoise), 1e-3);
        (geom, noise)
    }

    fn test_points() -> Vec<f64> {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                pts.push(0.07 + f64::from(i) * 0.19);
                pts.push(0.13 + f64::from(j) * 0.17);
            }
        }
        pts
    }

    #[test]
    fn zero_intensity_gives_identity() {
        let (geom, noise) = setup(0.0);
        for scheme in [Scheme::Heun, Scheme::EulerMaruyama, Scheme::ShearSplit] {
            let mut pts = test_points();
            flow_white(&geom, &noise, &mut pts, 0..200, scheme, Direction::Forward);
            assert_eq!(pts, test_points());
        }
    }

    #[test]
    fn group_property_is_exact_for_composed_substeps() {
        let (geom, noise) = setup(1.0);
        for scheme in [Scheme::Heun, Scheme::ShearSplit] {
            let mut one_leg = test_points();
            flow_white(&geom, &noise, &mut one_leg, 0..10, scheme, Direction::Forward);
            let mut two_leg = test_points();
            flow_white(&geom, &noise, &mut two_leg, 0..4, scheme, Direction::Forward);
            flow_white(&geom, &noise, &mut two_leg, 4..10, scheme, Direction::Forward);
            assert_eq!(one_leg, two_leg);
        }
    }

    /// The shear palindrome inverts exactly (roundoff only, amplified by the
    /// flow's stretching); the Heun inverse defect vanishes as dt → 0.
    #[test]
    fn inverse_recovers_initial_points() {
        let (geom, noise) = setup(1.0);
        let mut pts = test_points();
        flow_white(&geom, &noise, &mut pts, 0..200, Scheme::ShearSplit, Direction::Forward);
        flow_white(&geom, &noise, &mut pts, 0..200, Scheme::ShearSplit, Direction::Inverse);
        // Algebraically exact; the tolerance covers roundoff amplified by
        // the flow's stretching factor over the 200 substeps.
        for (a, b) in pts.iter().zip(test_points()) {
            assert_abs_diff_eq!(a, &b, epsilon = 1e-8);
        }
        // Heun is not algebraically invertible by sign reversal; the defect
        // is a per-step O(dt²) error, so it shrinks under refinement.
        let spec = NoiseSpec::unit_shell(2, 0.25).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let defect = |dt: f64| -> f64 {
            let steps = (0.25 / dt).round() as u32;
            let noise = WhiteNoise::new(StreamRng::new(31, 0, Purpose::CommonNoise), dt);
            let mut pts = test_points();
            flow_white(&geom, &noise, &mut pts, 0..steps, Scheme::Heun, Direction::Forward);
            flow_white(&geom, &noise, &mut pts, 0..steps, Scheme::Heun, Direction::Inverse);
            pts.iter()
                .zip(test_points())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let coarse = defect(1e-3);
        let fine = defect(2.5e-4);
        assert!(coarse < 1e-2, "Heun inverse defect too large: {coarse:.3e}");
        assert!(
            fine < coarse,
            "Heun inverse defect must shrink with dt: {coarse:.3e} → {fine:.3e}"
        );
    }

    /// Volume preservation: the shear palindrome's determinant is exactly 1
    /// (each factor is `I + u⊗k` with `u ⊥ k`), so |det Dφ − 1| stays at
    /// rounding level even at strong noise over T = 1 with dt = 1e-3. The
    /// Heun determinant carries a mean-zero per-step fluctuation instead;
    /// its error is orders of magnitude larger and shrinks with dt.
    #[test]
    fn volume_preservation_and_refinement() {
        let worst = |k: f64, scheme: Scheme, dt: f64, t: f64| -> f64 {
            let spec = NoiseSpec::unit_shell(2, k).unwrap();
            let geom = NoiseGeometry::new(&spec);
            let noise = WhiteNoise::new(StreamRng::new(5150, 0, Purpose::CommonNoise), dt);
            let flow = integrate_characteristics(
                &geom,
                &noise,
                &test_points(),
                t,
                dt,
                scheme,
                Direction::Forward,
                true,
            )
            .unwrap();
            flow.determinants()
                .unwrap()
                .iter()
                .map(|d| (d - 1.0).abs())
                .fold(0.0, f64::max)
        };
        let shear = worst(1.0, Scheme::ShearSplit, 1e-3, 1.0);
        assert!(shear <= 1e-12, "shear |det−1| = {shear:.3e} at dt = 1e-3");
        // Heun: per-step determinant fluctuations accumulate like
        // (2πK)²√(t·dt); keep the comparison in the weak-noise regime.
        // (Refinement changes the sampled path — substep-keyed draws — so
        // this is a magnitude comparison, not pathwise.)
        let coarse = worst(0.1, Scheme::Heun, 1e-3, 0.5);
        let fine = worst(0.1, Scheme::Heun, 1e-4, 0.5);
        assert!(coarse < 5e-2, "Heun |det−1| = {coarse:.3e} at dt = 1e-3");
        assert!(
            fine < coarse,
            "Heun det error should shrink under refinement: {coarse:.3e} → {fine:.3e}"
        );
        assert!(shear < fine, "exact shears must beat Heun: {shear:.3e} vs {fine:.3e}");
    }

    #[test]
    fn jacobian_unavailable_for_ito_or_untracked() {
        let (geom, noise) = setup(1.0);
        let err = integrate_characteristics(
            &geom,
            &noise,
            &test_points(),
            0.1,
            1e-3,
            Scheme::EulerMaruyama,
            Direction::Forward,
            true,
        );
        assert!(err.is_err());
        let flow = integrate_characteristics(
            &geom,
            &noise,
            &test_points(),
            0.1,
            1e-3,
            Scheme::Heun,
            Direction::Forward,
            false,
        )
        .unwrap();
        assert!(flow.determinants().is_err());
    }

    /// Dφ(t+s) = Dφ_s(φ_t)·Dφ_t within rounding (relative to the entry
    /// scale, which grows exponentially in a stretching flow).
    #[test]
    fn jacobian_product_rule() {
        let (geom, noise) = setup(1.0);
        let d = 2;
        let dd = d * d;
        let eye = |n: usize| {
            let mut m = vec![0.0; n * dd];
            for q in m.chunks_mut(dd) {
                q[0] = 1.0;
                q[3] = 1.0;
            }
            m
        };
        for scheme in [Scheme::Heun, Scheme::ShearSplit] {
            let mut one_pts = test_points();
            let n = one_pts.len() / d;
            let mut one_mats = eye(n);
            let mut one_dets = vec![1.0; n];
            flow_white_with_jacobian(
                &geom, &noise, &mut one_pts, &mut one_mats, &mut one_dets,
                0..400, scheme, Direction::Forward,
            );

            let mut two_pts = test_points();
            let mut m1 = eye(n);
            let mut d1 = vec![1.0; n];
            flow_white_with_jacobian(
                &geom, &noise, &mut two_pts, &mut m1, &mut d1,
                0..150, scheme, Direction::Forward,
            );
            let mut m2 = eye(n);
            let mut d2 = vec![1.0; n];
            flow_white_with_jacobian(
                &geom, &noise, &mut two_pts, &mut m2, &mut d2,
                150..400, scheme, Direction::Forward,
            );

            for pi in 0..n {
                for (a, b) in one_pts[pi * d..(pi + 1) * d]
                    .iter()
                    .zip(&two_pts[pi * d..(pi + 1) * d])
                {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
                let ma = &one_mats[pi * dd..(pi + 1) * dd];
                let m1p = &m1[pi * dd..(pi + 1) * dd];
                let m2p = &m2[pi * dd..(pi + 1) * dd];
                let scale = ma.iter().map(|v| v.abs()).fold(1.0, f64::max);
                for i in 0..d {
                    for j in 0..d {
                        let mut prod = 0.0;
                        for l in 0..d {
                            prod += m2p[i * d + l] * m1p[l * d + j];
                        }
                        assert_abs_diff_eq!(ma[i * d + j], prod, epsilon = 1e-9 * scale);
                    }
                }
                assert_abs_diff_eq!(one_dets[pi], d2[pi] * d1[pi], epsilon = 1e-9);
            }
        }
    }

    /// Itô (Euler–Maruyama) and Stratonovich (Heun) characteristics must
    /// agree in law — the corrector vanishes. Compare smooth statistics over
    /// an ensemble at 4σ.
    #[test]
    fn ito_and_stratonovich_agree_in_law() {
        let spec = NoiseSpec::unit_shell(2, 1.0).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let members = 1500u32;
        let steps = 250u32;
        let dt = 1e-3;
        let tau = std::f64::consts::TAU;
        let stat = |scheme: Scheme| -> (f64, f64) {
            let (mut s1, mut s2) = (0.0, 0.0);
            for m in 0..members {
                let noise = WhiteNoise::new(StreamRng::new(808, m, Purpose::CommonNoise), dt);
                let mut p = vec![0.23, 0.61];
                flow_white(&geom, &noise, &mut p, 0..steps, scheme, Direction::Forward);
                let v = (tau * (p[0] + p[1])).cos();
                s1 += v;
                s2 += v * v;
            }
            let nf = f64::from(members);
            let mean = s1 / nf;
            let var = (s2 / nf - mean * mean).max(0.0);
            (mean, (var / nf).sqrt())
        };
        let (mh, sh) = stat(Scheme::Heun);
        let (me, se) = stat(Scheme::EulerMaruyama);
        let gap = (mh - me).abs();
        let tol = 4.0 * (sh * sh + se * se).sqrt();
        assert!(gap < tol, "law mismatch: {mh} vs {me} (tol {tol})");
    }

    /// Pathwise Heun-vs-EM difference shrinks under dt refinement. The
    /// comparison must stay below the flow's decorrelation horizon (the
    /// stretching rate grows like K²), so it runs at moderate intensity and
    /// short time; gaps are averaged over independent driver streams since
    /// refinement changes the sampled path.
    #[test]
    fn em_heun_difference_decreases_with_dt() {
        let spec = NoiseSpec::unit_shell(2, 0.3).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let gap = |level: i32| -> f64 {
            let dt = 1e-3 * (0.5f64).powi(level);
            let steps = (0.25 / dt).round() as u32;
            let mut total = 0.0;
            for member in 0..8 {
                let noise =
                    WhiteNoise::new(StreamRng::new(99, member, Purpose::CommonNoise), dt);
                let mut a = test_points();
                flow_white(&geom, &noise, &mut a, 0..steps, Scheme::Heun, Direction::Forward);
                let mut b = test_points();
                flow_white(&geom, &noise, &mut b, 0..steps, Scheme::EulerMaruyama, Direction::Forward);
                total += a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
            }
            total / 8.0
        };
        let g0 = gap(0);
        let g2 = gap(2);
        assert!(
            g2 < g0,
            "gap must shrink: dt=1e-3 → {g0:.3e}, dt=2.5e-4 → {g2:.3e}"
        );
    }

    #[test]
    fn transport_scalar_identity_cases() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let u0 = SpectralField::from_fn(grid, |x| {
            (std::f64::consts::TAU * x[0]).cos() + 0.4
        });
        // K = 0: exact identity.
        let spec0 = NoiseSpec::unit_shell(2, 0.0).unwrap();
        let geom0 = NoiseGeometry::new(&spec0);
        let noise = WhiteNoise::new(StreamRng::new(1, 0, Purpose::CommonNoise), 1e-2);
        let out = transport_scalar(&u0, &geom0, &noise, 50, Scheme::Heun).unwrap();
        for (a, b) in out.coefficients().iter().zip(u0.coefficients().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        // Constant datum: unchanged under any driver.
        let c0 = SpectralField::constant(grid, 1.7);
        let spec = NoiseSpec::unit_shell(2, 2.0).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let out = transport_scalar(&c0, &geom, &noise, 50, Scheme::Heun).unwrap();
        assert_abs_diff_eq!(out.mass(), 1.7, epsilon = 1e-12);
        assert!(out.sobolev_norm(0.0) < 1e-12);
    }

    /// L² isometry and range preservation of the pull-back at desk scale.
    ///
    /// Two caveats calibrate this test. First, the discrete norm is
    /// trustworthy only while the pulled-back field stays resolved on the
    /// grid (the flow stretches gradients at a rate ∝ K²). Second, the
    /// isometry is realized numerically only by a volume-preserving map:
    /// the exact shears qualify, while Heun's determinant error
    /// (≈ (2πK)²√(t·dt)) leaks into the norm at the percent level.
    #[test]
    fn transport_preserves_l2_and_range() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let tau = std::f64::consts::TAU;
        let u0 = SpectralField::from_fn(grid, |x| (tau * x[0]).cos());
        let spec = NoiseSpec::unit_shell(2, 0.2).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let noise = WhiteNoise::new(StreamRng::new(41, 3, Purpose::CommonNoise), 1e-3);
        let out = transport_scalar(&u0, &geom, &noise, 500, Scheme::ShearSplit).unwrap();
        let ratio = out.l2_norm() / u0.l2_norm();
        assert!(
            (ratio - 1.0).abs() < 1e-3,
            "L² ratio after volume-exact transport: {ratio}"
        );
        let heun = transport_scalar(&u0, &geom, &noise, 500, Scheme::Heun).unwrap();
        let heun_ratio = heun.l2_norm() / u0.l2_norm();
        assert!(
            (heun_ratio - 1.0).abs() < 1e-2,
            "L² ratio under Heun transport: {heun_ratio}"
        );
        // The semi-Lagrangian samples are exact point values of u₀, so they
        // respect its range to evaluation roundoff …
        let mut pts = Vec::new();
        grid.for_each_index(|_, idx| {
            for &i in idx {
                pts.push(grid.coord(i));
            }
        });
        flow_white(&geom, &noise, &mut pts, 0..500, Scheme::ShearSplit, Direction::Inverse);
        for v in u0.eval_direct(&pts) {
            assert!(v.abs() <= 1.0 + 1e-9, "sampled value out of range: {v}");
        }
        // … while the band-limited re-projection may overshoot slightly
        // (Gibbs) by the unresolved tail mass.
        let phys = out.to_physical();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in phys.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(lo >= -1.0 - 1e-2 && hi <= 1.0 + 1e-2, "range [{lo}, {hi}]");
    }

    /// Piecewise-linear (Wong–Zakai) flows approach the Stratonovich flow on
    /// the same Brownian path as the level grows. Runs below the
    /// decorrelation horizon (moderate K), and averages the sup distance
    /// over independent paths: per path the gap is a mean-zero-driven random
    /// quantity whose magnitude decays ~2^{-level/2}, so single realizations
    /// need not be monotone.
    #[test]
    fn wong_zakai_converges_to_stratonovich_flow() {
        let spec = NoiseSpec::unit_shell(2, 0.15).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let n_paths = 6u32;
        let mut gaps = vec![0.0; 3];
        for member in 0..n_paths {
            let rng = StreamRng::new(404, member, Purpose::Bridge);
            let fine = WongZakaiPath::sample(rng, geom.n_channels(), 11, 1);
            let mut reference = test_points();
            flow_path(
                &geom,
                &fine,
                &mut reference,
                0..fine.n_segments(),
                PathScheme::HeunIncrement,
                Direction::Forward,
            );
            for (slot, level) in [3u32, 5, 7].into_iter().enumerate() {
                let path = WongZakaiPath::sample(rng, geom.n_channels(), level, 1);
                let mut pts = test_points();
                flow_path(
                    &geom,
                    &path,
                    &mut pts,
                    0..path.n_segments(),
                    PathScheme::Rk4 { substeps: 8 },
                    Direction::Forward,
                );
                gaps[slot] += pts
                    .iter()
                    .zip(&reference)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / f64::from(n_paths);
            }
        }
        assert!(
            gaps[0] > gaps[1] && gaps[1] > gaps[2],
            "mean sup distance must decrease over levels 3,5,7: {gaps:?}"
        );
    }

    /// The shear-split backend converges to the Heun flow as dt shrinks
    /// (same driver path; moderate K keeps the comparison below the
    /// decorrelation horizon).
    #[test]
    fn shear_split_cross_validates_against_heun() {
        let spec = NoiseSpec::unit_shell(2, 0.4).unwrap();
        let geom = NoiseGeometry::new(&spec);
        let gap = |dt: f64| -> f64 {
            let steps = (0.25 / dt).round() as u32;
            let noise = WhiteNoise::new(StreamRng::new(2717, 0, Purpose::CommonNoise), dt);
            let mut a = test_points();
            flow_white(&geom, &noise, &mut a, 0..steps, Scheme::Heun, Direction::Forward);
            let mut b = test_points();
            flow_white(&geom, &noise, &mut b, 0..steps, Scheme::ShearSplit, Direction::Forward);
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let coarse = gap(2e-3);
        let fine = gap(2.5e-4);
        assert!(
            fine < coarse,
            "shear/Heun gap must shrink with dt: {coarse:.3e} → {fine:.3e}"
        );
        assert!(fine < 5e-2, "backends must agree closely at fine dt: {fine:.3e}");
    }
}
