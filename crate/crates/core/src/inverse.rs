//! Reconstruction of the source amplitude from measured data, and the
//! noise-ladder fit of the empirical stability exponent.
//!
//! Two routes recover `f`:
//!
//! * slice division: rearrange the equation at the center time and divide by
//!   the source factor. Needs the idealized interior slice of `d_t u`, so it
//!   serves as a discretization-error yardstick rather than as a practical
//!   method.
//! * regularized output least squares on the boundary traces and the center
//!   snapshot. The gradient comes from the exact discrete adjoint of the
//!   stepped forward map: the stepper, the time-differencing stencil and the
//!   one-sided trace stencil are each transposed as the linear maps they
//!   are, so the gradient agrees with finite differences to rounding, not
//!   merely to discretization error.
//!
//! The misfit can optionally carry the exponential space-time weight of the
//! [`crate::carleman`] module (rescaled to peak at one), which concentrates
//! the fit near the center time.

use log::debug;
use rayon::prelude::*;
use serde::Serialize;

use crate::carleman::CarlemanParams;
use crate::error::{CoreError, Result};
use crate::field::{trace_series_h1_sq, SpaceTimeField, SpatialField, TraceField};
use crate::forward::{observe, solve_on, time_derivative, ObservationData, ProblemSpec};
use crate::grid::{FaceId, Grid, Side};
use crate::scalar::{cast, to_f64, Scalar};
use crate::spectral::Torus;

/// Reconstruction route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// One-shot division at the center time; uses the interior slice data.
    DirectSlice,
    /// Iterative least squares; `cg` switches from plain gradient descent
    /// to Polak-Ribiere conjugate directions.
    Tikhonov { cg: bool },
}

/// Knobs of the least-squares reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructionConfig<T> {
    pub method: Method,
    /// Tikhonov weight on `||f||^2`.
    pub gamma: T,
    pub max_iters: usize,
    /// Relative gradient-norm stopping threshold.
    pub grad_tol: T,
    /// Weight of the center-snapshot term of the misfit. A slowly varying
    /// source drives the observed faces through nearly proportional time
    /// signals, so the flux channel alone pins little more than one scalar;
    /// the snapshot supplies the rest and needs a weight large enough to
    /// compete with the time-quotient terms.
    pub snapshot_weight: T,
    /// Optional exponential weight on the misfit integrals.
    pub carleman_weighting: Option<CarlemanParams<T>>,
    /// Error is reported on the nodes farther than this fraction of the box
    /// length from every unobserved face.
    pub interior_margin: T,
}

impl<T: Scalar> ReconstructionConfig<T> {
    /// Least-squares route with light regularization; suits the noiseless
    /// and small-noise regimes.
    pub fn tikhonov() -> Self {
        ReconstructionConfig {
            method: Method::Tikhonov { cg: true },
            gamma: cast::<T>(1e-8),
            max_iters: 80,
            grad_tol: cast::<T>(1e-6),
            snapshot_weight: cast::<T>(1e5),
            carleman_weighting: None,
            interior_margin: cast::<T>(0.1),
        }
    }

    pub fn direct_slice() -> Self {
        ReconstructionConfig {
            method: Method::DirectSlice,
            ..Self::tikhonov()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < T::zero() || self.snapshot_weight < T::zero() {
            return Err(CoreError::InvalidParameter(
                "misfit weights must be nonnegative".into(),
            ));
        }
        if !(self.grad_tol > T::zero()) {
            return Err(CoreError::InvalidParameter(
                "gradient tolerance must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(CoreError::InvalidParameter(
                "iteration budget must be at least 1".into(),
            ));
        }
        if self.interior_margin < T::zero() || self.interior_margin >= cast::<T>(0.5) {
            return Err(CoreError::InvalidParameter(
                "interior margin must lie in [0, 0.5)".into(),
            ));
        }
        if let Some(params) = &self.carleman_weighting {
            params.validate()?;
        }
        Ok(())
    }
}

/// Mask of the nodes farther than `margin * L_axis` from every face that is
/// not observed. The masked region touches the boundary only inside the
/// observed faces, which is where the reconstruction error is meaningful.
pub fn interior_mask<T: Scalar>(grid: &Grid<T>, observed: &[FaceId], margin: T) -> Vec<bool> {
    let mut mask = vec![true; grid.total_nodes()];
    for face in grid.faces() {
        if observed.contains(&face) {
            continue;
        }
        let len = grid.length(face.axis);
        let cutoff = margin * len;
        for (flat, keep) in mask.iter_mut().enumerate() {
            let x = grid.node_coords(flat)[face.axis];
            let dist = match face.side {
                Side::Low => x,
                Side::High => len - x,
            };
            if dist <= cutoff {
                *keep = false;
            }
        }
    }
    mask
}

/// Divide the equation at the center time by the source factor:
///
/// ```text
///   f = (z0 - Lap u0 - (b + alpha u0) . grad u0 - (c + lambda u0) u0) / R(., t0)
/// ```
///
/// with `u0 = u(., t0)` and `z0 = d_t u(., t0)`. The spatial operators are
/// the same spectral ones the stepper uses, so on solver data the error is
/// pure time discretization plus the nodal-product aliasing of the scheme.
/// Refuses when the divisor dips below the configured floor, naming the
/// first offending node.
pub fn direct_slice<T: Scalar>(
    u_t0: &SpatialField<T>,
    z_t0: &SpatialField<T>,
    spec: &ProblemSpec<T>,
) -> Result<SpatialField<T>> {
    spec.grid.same_as(u_t0.grid())?;
    spec.grid.same_as(z_t0.grid())?;
    let r0 = &spec.source.at_t0;
    for (node, &r) in r0.data().iter().enumerate() {
        if r.abs() < spec.r0_floor {
            return Err(CoreError::Degenerate(format!(
                "source factor magnitude {} at node {} is below the floor {}",
                to_f64(r.abs()),
                node,
                to_f64(spec.r0_floor)
            )));
        }
    }
    let torus = Torus::new(spec.grid);
    let mut num = z_t0.clone();
    num.axpy(-T::one(), &torus.laplacian(u_t0));
    let grad = torus.gradient(u_t0);
    for (k, (du, bk)) in grad.iter().zip(&spec.b).enumerate() {
        let mut coeff = bk.clone();
        coeff.axpy(spec.alpha[k], u_t0);
        num.axpy(-T::one(), &coeff.mul_pointwise(du));
    }
    let mut pot = spec.c.clone();
    pot.axpy(spec.lambda, u_t0);
    num.axpy(-T::one(), &pot.mul_pointwise(u_t0));
    let data = num
        .data()
        .iter()
        .zip(r0.data())
        .map(|(&n, &r)| n / r)
        .collect();
    SpatialField::from_vec(spec.grid, data)
}

// ---- data norms ----------------------------------------------------------

/// Spectral realization of the second-order interior norm:
/// `sqrt(||v||^2 + ||Lap v||^2)`.
fn h2_norm<T: Scalar>(torus: &Torus<T>, v: &SpatialField<T>) -> T {
    let lap = torus.laplacian(v);
    (v.dot_l2(v) + lap.dot_l2(&lap)).sqrt()
}

/// Trapezoid-in-time integral of the squared tangential difference
/// quotients along a face (zero in 1D, where a face is a single node).
fn tangential_series_sq<T: Scalar>(traces: &[TraceField<T>], dt: T, h: T, measure: T) -> T {
    let n = traces.len();
    let half = cast::<T>(0.5);
    let mut total = T::zero();
    for (i, tr) in traces.iter().enumerate() {
        let wt = if i == 0 || i == n - 1 { half * dt } else { dt };
        let s: T = tr
            .values
            .windows(2)
            .map(|p| {
                let d = (p[1] - p[0]) / h;
                d * d
            })
            .sum();
        total += wt * s * measure;
    }
    total
}

/// Size of one observation set: first-order space-time norm of the trace
/// series (values, normal derivatives, and tangential quotients on faces
/// with more than one node) plus the second-order norm of the snapshot.
/// The interior slice is auxiliary data and does not enter.
pub fn observation_norm<T: Scalar>(torus: &Torus<T>, data: &ObservationData<T>) -> Result<T> {
    if data.times.len() < 2 {
        return Err(CoreError::InvalidParameter(
            "observation norm needs at least two frames".into(),
        ));
    }
    torus.grid().same_as(data.snapshot.grid())?;
    let grid = torus.grid();
    let dt = data.times[1] - data.times[0];
    let mut tr_sq = T::zero();
    for (fi, &face) in data.faces.iter().enumerate() {
        let m = grid.face_measure(face)?;
        let h_t = if grid.dim() > 1 {
            grid.spacing(1 - face.axis)
        } else {
            T::one()
        };
        for series in [&data.z_trace[fi], &data.dz_trace[fi]] {
            tr_sq += trace_series_h1_sq(series, dt, m);
            tr_sq += tangential_series_sq(series, dt, h_t, m);
        }
    }
    Ok(tr_sq.sqrt() + h2_norm(torus, &data.snapshot))
}

/// Entrywise difference of two observation sets taken on the same grid and
/// clock; metadata is copied from the first argument. Feeding the result to
/// [`observation_norm`] measures the data perturbation.
pub fn observation_diff<T: Scalar>(
    a: &ObservationData<T>,
    b: &ObservationData<T>,
) -> Result<ObservationData<T>> {
    if a.faces != b.faces || a.times.len() != b.times.len() {
        return Err(CoreError::GridMismatch(
            "observation sets cover different faces or clocks".into(),
        ));
    }
    let mut out = a.clone();
    for (fi, _) in a.faces.iter().enumerate() {
        for series in [
            (&mut out.z_trace[fi], &b.z_trace[fi]),
            (&mut out.dz_trace[fi], &b.dz_trace[fi]),
        ] {
            let (dst, src) = series;
            for (d, s) in dst.iter_mut().zip(src) {
                if d.values.len() != s.values.len() {
                    return Err(CoreError::GridMismatch(
                        "observation traces have different node counts".into(),
                    ));
                }
                for (dv, &sv) in d.values.iter_mut().zip(&s.values) {
                    *dv -= sv;
                }
            }
        }
    }
    out.snapshot = a.snapshot.sub(&b.snapshot);
    out.z_slice = a.z_slice.sub(&b.z_slice);
    Ok(out)
}

// ---- misfit assembly ------------------------------------------------------

/// Misfit weights evaluated once per reconstruction: per observed face, per
/// frame, per face node, plus the snapshot-node weights. `None` means the
/// unweighted misfit.
struct MisfitWeights<T> {
    face: Option<Vec<Vec<Vec<T>>>>,
    snap: Option<Vec<T>>,
}

#[inline]
fn weight_at<T: Scalar>(fw: Option<&Vec<Vec<T>>>, i: usize, j: usize) -> T {
    fw.map_or_else(T::one, |w| w[i][j])
}

/// Midpoint weight for the difference-quotient term between frames `i` and
/// `i + 1`.
#[inline]
fn weight_mid<T: Scalar>(fw: Option<&Vec<Vec<T>>>, i: usize, j: usize) -> T {
    fw.map_or_else(T::one, |w| cast::<T>(0.5) * (w[i][j] + w[i + 1][j]))
}

/// Weight-generating values on a face, extrapolated linearly from the two
/// nearest interior layers (nodal fields carry no boundary values).
fn face_values<T: Scalar>(d: &SpatialField<T>, face: FaceId) -> Result<Vec<T>> {
    let grid = d.grid();
    grid.check_face(face)?;
    let axis = face.axis;
    let n_axis = grid.points(axis);
    let n_face = grid.face_nodes(face)?;
    let two = cast::<T>(2.0);
    let mut out = Vec::with_capacity(n_face);
    for j in 0..n_face {
        let at = |i_axis: usize| -> T {
            let (i0, i1) = if axis == 0 { (i_axis, j) } else { (j, i_axis) };
            d.data()[grid.idx(i0, i1)]
        };
        out.push(match face.side {
            Side::Low => two * at(0) - at(1),
            Side::High => two * at(n_axis - 1) - at(n_axis - 2),
        });
    }
    Ok(out)
}

/// Build the misfit weights from the weight parameters: the exponential
/// weight rescaled by its global maximum, so every entry lies in (0, 1] and
/// no intermediate overflows regardless of the weight strength.
fn misfit_weights<T: Scalar>(
    cfg: &ReconstructionConfig<T>,
    spec: &ProblemSpec<T>,
    times: &[T],
) -> Result<MisfitWeights<T>> {
    let params = match &cfg.carleman_weighting {
        None => {
            return Ok(MisfitWeights {
                face: None,
                snap: None,
            })
        }
        Some(p) => p,
    };
    params.validate()?;
    spec.grid.same_as(params.d.grid())?;
    let lam = params.lambda_c;
    let beta = params.beta;
    let s = params.s_c;
    let two = cast::<T>(2.0);

    // Global generating-function maximum, faces included, so the rescaled
    // weight never exceeds one.
    let mut d_max = params
        .d
        .data()
        .iter()
        .fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut face_d = Vec::with_capacity(spec.observed_faces.len());
    for &face in &spec.observed_faces {
        let vals = face_values(&params.d, face)?;
        for &v in &vals {
            d_max = d_max.max(v);
        }
        face_d.push(vals);
    }
    let phi_max = (lam * d_max).exp();

    let scaled = |d_val: T, t: T| -> T {
        let shift = t - params.t0;
        let phi = (lam * (d_val - beta * shift * shift)).exp();
        (two * s * (phi - phi_max)).exp()
    };

    let face = spec
        .observed_faces
        .iter()
        .zip(&face_d)
        .map(|(_, dvals)| {
            times
                .iter()
                .map(|&t| dvals.iter().map(|&dv| scaled(dv, t)).collect())
                .collect()
        })
        .collect();
    let snap = params
        .d
        .data()
        .iter()
        .map(|&dv| scaled(dv, spec.t0))
        .collect();
    Ok(MisfitWeights {
        face: Some(face),
        snap: Some(snap),
    })
}

/// One simulated misfit evaluation, keeping everything the adjoint sweep
/// needs: the trajectory, the per-face trace residuals, and the snapshot
/// residual.
struct Assembled<T> {
    j: T,
    u: SpaceTimeField<T>,
    /// Per face, per frame, per face node: simulated minus observed normal
    /// derivative of the time derivative.
    errs: Vec<Vec<Vec<T>>>,
    snap_diff: SpatialField<T>,
    snap_frame: usize,
    dt: T,
}

fn assemble<T: Scalar>(
    torus: &Torus<T>,
    f: &SpatialField<T>,
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
    weights: &MisfitWeights<T>,
) -> Result<Assembled<T>> {
    if data.times.len() < 3 {
        return Err(CoreError::InvalidParameter(
            "misfit needs at least three observation frames".into(),
        ));
    }
    if data.faces != spec.observed_faces {
        return Err(CoreError::InvalidParameter(
            "observation faces do not match the problem".into(),
        ));
    }
    spec.grid.same_as(data.snapshot.grid())?;
    let dt = data.times[1] - data.times[0];
    let u = solve_on(torus, spec, f, dt, None)?;
    if u.len() != data.times.len() {
        return Err(CoreError::GridMismatch(format!(
            "observation clock has {} frames, the simulation {}",
            data.times.len(),
            u.len()
        )));
    }
    let z = time_derivative(&u)?;
    let grid = &spec.grid;
    let l = u.len();
    let tau = u.time_weights();

    let mut j_total = cfg.gamma * f.dot_l2(f);
    let mut errs = Vec::with_capacity(data.faces.len());
    for (fi, &face) in data.faces.iter().enumerate() {
        let m = grid.face_measure(face)?;
        let fw = weights.face.as_ref().map(|w| &w[fi]);
        let mut face_errs = Vec::with_capacity(l);
        for i in 0..l {
            let sim = z.frame(i).normal_derivative(face)?;
            if sim.values.len() != data.dz_trace[fi][i].values.len() {
                return Err(CoreError::GridMismatch(
                    "observed trace node count does not match the grid".into(),
                ));
            }
            let e: Vec<T> = sim
                .values
                .iter()
                .zip(&data.dz_trace[fi][i].values)
                .map(|(&a, &b)| a - b)
                .collect();
            face_errs.push(e);
        }
        for (i, e_row) in face_errs.iter().enumerate() {
            let s: T = e_row
                .iter()
                .enumerate()
                .map(|(j, &e)| weight_at(fw, i, j) * e * e)
                .sum();
            j_total += m * tau[i] * s;
        }
        for i in 0..l - 1 {
            let s: T = (0..face_errs[i].len())
                .map(|j| {
                    let q = (face_errs[i + 1][j] - face_errs[i][j]) / dt;
                    weight_mid(fw, i, j) * q * q
                })
                .sum();
            j_total += m * dt * s;
        }
        errs.push(face_errs);
    }

    let snap_frame = u.frame_index_at(spec.t0)?;
    let snap_diff = u.frame(snap_frame).sub(&data.snapshot);
    let vol = grid.cell_volume();
    let snap_sq: T = snap_diff
        .data()
        .iter()
        .enumerate()
        .map(|(j, &v)| weights.snap.as_ref().map_or_else(T::one, |w| w[j]) * v * v)
        .sum();
    j_total += cfg.snapshot_weight * vol * snap_sq;
    if !j_total.is_finite() {
        return Err(CoreError::NonFinite("misfit value"));
    }
    Ok(Assembled {
        j: j_total,
        u,
        errs,
        snap_diff,
        snap_frame,
        dt,
    })
}

/// Output-least-squares objective:
///
/// ```text
///   J(f) = sum_faces |e|^2_{first-order in time} + w_snap |u_f(t0) - snapshot|^2
///        + gamma |f|^2,     e = normal trace of d_t u_f minus the data,
/// ```
///
/// every integral optionally carrying the rescaled exponential weight. The
/// value trace of `d_t u` vanishes identically under the boundary condition
/// and is omitted. Solver blow-up propagates as an error.
pub fn forward_misfit<T: Scalar>(
    f: &SpatialField<T>,
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
) -> Result<T> {
    cfg.validate()?;
    let torus = Torus::new(spec.grid);
    let weights = misfit_weights(cfg, spec, &data.times)?;
    Ok(assemble(&torus, f, spec, data, cfg, &weights)?.j)
}

// ---- exact discrete adjoint ------------------------------------------------

/// Scatter one trace-residual derivative back through the one-sided normal
/// stencil: the transpose of [`SpatialField::normal_derivative`] row `j`.
fn scatter_normal_transpose<T: Scalar>(out: &mut SpatialField<T>, face: FaceId, j: usize, psi: T) {
    let grid = *out.grid();
    let axis = face.axis;
    let n_axis = grid.points(axis);
    let two_h = cast::<T>(2.0) * grid.spacing(axis);
    let four = cast::<T>(4.0);
    let mut add = |i_axis: usize, c: T| {
        let (i0, i1) = if axis == 0 { (i_axis, j) } else { (j, i_axis) };
        out.data_mut()[grid.idx(i0, i1)] += c * psi;
    };
    match face.side {
        Side::Low => {
            add(0, four / two_h);
            add(1, -T::one() / two_h);
        }
        Side::High => {
            add(n_axis - 1, -four / two_h);
            add(n_axis - 2, T::one() / two_h);
        }
    }
}

/// Transpose of the second-order time-differencing stencil: scatter each
/// frame of the cotangent back to the frames the stencil row reads.
fn time_stencil_transpose<T: Scalar>(zeta: &[SpatialField<T>], dt: T) -> Vec<SpatialField<T>> {
    let l = zeta.len();
    debug_assert!(l >= 3);
    let grid = *zeta[0].grid();
    let half = cast::<T>(0.5) / dt;
    let three = cast::<T>(3.0);
    let four = cast::<T>(4.0);
    let mut g = vec![SpatialField::zeros(grid); l];
    g[0].axpy(-three * half, &zeta[0]);
    g[1].axpy(four * half, &zeta[0]);
    g[2].axpy(-half, &zeta[0]);
    for i in 1..l - 1 {
        g[i + 1].axpy(half, &zeta[i]);
        g[i - 1].axpy(-half, &zeta[i]);
    }
    g[l - 1].axpy(three * half, &zeta[l - 1]);
    g[l - 2].axpy(-four * half, &zeta[l - 1]);
    g[l - 3].axpy(half, &zeta[l - 1]);
    g
}

/// Transpose of the linearized reaction-transport operator at state `u_n`:
/// the derivative of the stepper's explicit right-hand side is
/// `delta -> (b + alpha u) . grad delta + (c + 2 lambda u + alpha . grad u) delta`,
/// and its transpose routes the multiplier through the derivative adjoint.
fn jacobian_transpose<T: Scalar>(
    torus: &Torus<T>,
    spec: &ProblemSpec<T>,
    u_n: &SpatialField<T>,
    h: &SpatialField<T>,
) -> SpatialField<T> {
    let two = cast::<T>(2.0);
    let mut out = SpatialField::zeros(spec.grid);
    for (k, bk) in spec.b.iter().enumerate() {
        let mut coeff = bk.clone();
        coeff.axpy(spec.alpha[k], u_n);
        out.axpy(T::one(), &torus.gradient_adjoint(&coeff.mul_pointwise(h), k));
    }
    let mut p = spec.c.clone();
    p.axpy(two * spec.lambda, u_n);
    for (k, du) in torus.gradient(u_n).iter().enumerate() {
        p.axpy(spec.alpha[k], du);
    }
    out.axpy(T::one(), &p.mul_pointwise(h));
    out
}

/// Backward sweep of the exact discrete adjoint, starting from the partial
/// derivatives of the misfit with respect to each stored frame. Returns the
/// gradient in its field representation: the directional derivative along
/// `delta` is the discrete inner product of the result with `delta`.
fn gradient_from<T: Scalar>(
    torus: &Torus<T>,
    f: &SpatialField<T>,
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
    weights: &MisfitWeights<T>,
    asm: &Assembled<T>,
) -> Result<SpatialField<T>> {
    let grid = &spec.grid;
    let l = asm.u.len();
    let dt = asm.dt;
    let tau = asm.u.time_weights();
    let two = cast::<T>(2.0);

    // Partials with respect to the time-derivative frames, scattered from
    // the trace residuals through the normal stencil.
    let mut zeta = vec![SpatialField::zeros(*grid); l];
    for (fi, &face) in data.faces.iter().enumerate() {
        let m = grid.face_measure(face)?;
        let fw = weights.face.as_ref().map(|w| &w[fi]);
        let n_face = grid.face_nodes(face)?;
        for i in 0..l {
            for j in 0..n_face {
                let e = asm.errs[fi][i][j];
                let mut psi = two * tau[i] * weight_at(fw, i, j) * e;
                if i > 0 {
                    let q = (asm.errs[fi][i][j] - asm.errs[fi][i - 1][j]) / dt;
                    psi += two * weight_mid(fw, i - 1, j) * q;
                }
                if i < l - 1 {
                    let q = (asm.errs[fi][i + 1][j] - asm.errs[fi][i][j]) / dt;
                    psi -= two * weight_mid(fw, i, j) * q;
                }
                scatter_normal_transpose(&mut zeta[i], face, j, m * psi);
            }
        }
    }
    let mut g = time_stencil_transpose(&zeta, dt);

    // Snapshot partial lands on its frame alone.
    let vol = grid.cell_volume();
    let coef = two * cfg.snapshot_weight * vol;
    {
        let gd = g[asm.snap_frame].data_mut();
        for (j, (gj, &dj)) in gd.iter_mut().zip(asm.snap_diff.data()).enumerate() {
            let w = weights.snap.as_ref().map_or_else(T::one, |w| w[j]);
            *gj += coef * w * dj;
        }
    }

    // Reverse the stepper u^{n+1} = H (u^n + dt A(u^n) + dt R_n f):
    // the cotangent picks up H first (self-adjoint), then the transposed
    // reaction-transport Jacobian, while the source row accumulates the
    // f-derivative.
    let mut accum = SpatialField::zeros(*grid);
    let mut nu = g[l - 1].clone();
    for n in (0..l - 1).rev() {
        let h = torus.heat_solve(&nu, dt);
        let t_n = asm.u.time(n);
        let mut r_n = spec.source.at_t0.clone();
        r_n.axpy(t_n - spec.t0, &spec.source.slope);
        accum.axpy(dt, &r_n.mul_pointwise(&h));
        let mut next = g[n].clone();
        next.axpy(T::one(), &h);
        next.axpy(dt, &jacobian_transpose(torus, spec, asm.u.frame(n), &h));
        nu = next;
    }
    let mut grad = accum.scaled(T::one() / vol);
    grad.axpy(two * cfg.gamma, f);
    if !grad.is_finite() {
        return Err(CoreError::NonFinite("misfit gradient"));
    }
    Ok(grad)
}

/// Gradient of [`forward_misfit`] with respect to `f`, by the exact discrete
/// adjoint. Agrees with central finite differences of the misfit to
/// truncation error in the probe step.
pub fn gradient<T: Scalar>(
    f: &SpatialField<T>,
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
) -> Result<SpatialField<T>> {
    cfg.validate()?;
    let torus = Torus::new(spec.grid);
    let weights = misfit_weights(cfg, spec, &data.times)?;
    let asm = assemble(&torus, f, spec, data, cfg, &weights)?;
    gradient_from(&torus, f, spec, data, cfg, &weights, &asm)
}

// ---- reconstruction --------------------------------------------------------

/// Outcome of one reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructionResult<T> {
    pub f_rec: SpatialField<T>,
    /// Objective after the start and after each accepted step; nonincreasing.
    pub misfit_history: Vec<f64>,
    /// Size of the observation set the run consumed.
    pub data_norm: f64,
    /// Absolute error against the configured truth on the interior mask.
    pub error_interior: f64,
    /// Same, relative to the truth's norm there (absent for zero truth).
    pub relative_error_interior: Option<f64>,
    pub iterations: usize,
    /// False when the gradient tolerance was not reached (budget exhausted
    /// or the line search stalled); the partial history is still returned.
    pub converged: bool,
    /// Final gradient norm relative to the initial one.
    pub grad_ratio: f64,
}

/// Run the configured reconstruction route against one observation set.
/// The iterative route starts from zero, takes Armijo-backtracked descent
/// or conjugate steps, and never accepts an increase of the objective.
pub fn reconstruct<T: Scalar>(
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
) -> Result<ReconstructionResult<T>> {
    cfg.validate()?;
    spec.validate()?;
    let torus = Torus::new(spec.grid);
    let mask = interior_mask(&spec.grid, &spec.observed_faces, cfg.interior_margin);
    let data_norm = to_f64(observation_norm(&torus, data)?);

    let (f_rec, misfit_history, iterations, converged, grad_ratio) = match cfg.method {
        Method::DirectSlice => {
            let f = direct_slice(&data.snapshot, &data.z_slice, spec)?;
            (f, Vec::new(), 0, true, 0.0)
        }
        Method::Tikhonov { cg } => minimize(&torus, spec, data, cfg, cg)?,
    };

    let err = f_rec.sub(&spec.f_true);
    let error_interior = to_f64(err.norm_l2_masked(&mask));
    let truth = to_f64(spec.f_true.norm_l2_masked(&mask));
    let relative_error_interior = if truth > 0.0 {
        Some(error_interior / truth)
    } else {
        None
    };
    Ok(ReconstructionResult {
        f_rec,
        misfit_history,
        data_norm,
        error_interior,
        relative_error_interior,
        iterations,
        converged,
        grad_ratio,
    })
}

const ARMIJO_SLOPE: f64 = 1e-4;

/// Keep `cand` when it satisfies the Armijo bound at `t` and beats the
/// candidate already held.
fn admit<T: Scalar>(
    accepted: &mut Option<(SpatialField<T>, Assembled<T>, T)>,
    cand: Option<(SpatialField<T>, Assembled<T>)>,
    t: T,
    j0: T,
    slope: T,
    c1: T,
) {
    if let Some((trial, a)) = cand {
        let pass = a.j <= j0 + c1 * t * slope;
        if pass && accepted.as_ref().map_or(true, |(_, held, _)| a.j < held.j) {
            *accepted = Some((trial, a, t));
        }
    }
}

/// Evaluate the objective at `f + t * dir`. A solver blow-up or a non-finite
/// objective is an overlong step, not an error: the caller shortens and
/// retries.
#[allow(clippy::too_many_arguments)]
fn try_point<T: Scalar>(
    torus: &Torus<T>,
    f: &SpatialField<T>,
    dir: &SpatialField<T>,
    t: T,
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
    weights: &MisfitWeights<T>,
) -> Result<Option<(SpatialField<T>, Assembled<T>)>> {
    let mut trial = f.clone();
    trial.axpy(t, dir);
    match assemble(torus, &trial, spec, data, cfg, weights) {
        Ok(a) => Ok(Some((trial, a))),
        Err(CoreError::BlowUp { .. }) | Err(CoreError::NonFinite(_)) => Ok(None),
        Err(other) => Err(other),
    }
}

#[allow(clippy::type_complexity)]
fn minimize<T: Scalar>(
    torus: &Torus<T>,
    spec: &ProblemSpec<T>,
    data: &ObservationData<T>,
    cfg: &ReconstructionConfig<T>,
    cg: bool,
) -> Result<(SpatialField<T>, Vec<f64>, usize, bool, f64)> {
    let two = T::one() + T::one();
    let weights = misfit_weights(cfg, spec, &data.times)?;
    let mut f = SpatialField::zeros(spec.grid);
    let mut asm = assemble(torus, &f, spec, data, cfg, &weights)?;
    let mut g = gradient_from(torus, &f, spec, data, cfg, &weights, &asm)?;
    let mut history = vec![to_f64(asm.j)];
    let g0 = g.norm_l2().max(T::min_positive_value());
    let mut dir = g.scaled(-T::one());
    let mut g_prev = g.clone();
    let mut step = T::one();
    let mut converged = false;
    let mut iterations = 0usize;

    for it in 0..cfg.max_iters {
        let gnorm = g.norm_l2();
        if gnorm <= cfg.grad_tol * g0 {
            converged = true;
            break;
        }
        if it > 0 {
            let prev_sq = g_prev.dot_l2(&g_prev);
            if cg && prev_sq > T::zero() {
                // Polak-Ribiere conjugate direction, clamped at zero so a
                // stale direction falls back to steepest descent.
                let beta = ((g.dot_l2(&g) - g.dot_l2(&g_prev)) / prev_sq).max(T::zero());
                let mut d = g.scaled(-T::one());
                d.axpy(beta, &dir);
                dir = d;
            } else {
                dir = g.scaled(-T::one());
            }
        }
        let mut slope = dir.dot_l2(&g);
        if !(slope < T::zero()) {
            dir = g.scaled(-T::one());
            slope = -g.dot_l2(&g);
        }

        // Line search. The objective is a near-quadratic of the source, so
        // one probe at the carried scale fixes the parabola through
        // (0, J, slope) and its vertex is the one-dimensional minimizer;
        // conjugate directions only pay off when the search lands near it.
        // Armijo acceptance still decides, and a plain halving sweep is the
        // fallback when both candidates miss.
        let c1 = cast::<T>(ARMIJO_SLOPE);
        let mut accepted: Option<(SpatialField<T>, Assembled<T>, T)> = None;
        let probe = try_point(torus, &f, &dir, step, spec, data, cfg, &weights)?;
        let vertex = probe.as_ref().and_then(|(_, a)| {
            let curv = (a.j - asm.j - step * slope) * two / (step * step);
            (curv > T::zero()).then(|| {
                let t = -slope / curv;
                t.max(step * cast::<T>(1e-6)).min(step * cast::<T>(1e6))
            })
        });
        admit(&mut accepted, probe, step, asm.j, slope, c1);
        if let Some(t_star) = vertex {
            if (t_star - step).abs() > cast::<T>(0.01) * step {
                let cand = try_point(torus, &f, &dir, t_star, spec, data, cfg, &weights)?;
                admit(&mut accepted, cand, t_star, asm.j, slope, c1);
            }
        }
        if accepted.is_none() {
            let mut t = step * cast::<T>(0.5);
            for _ in 0..60 {
                let cand = try_point(torus, &f, &dir, t, spec, data, cfg, &weights)?;
                admit(&mut accepted, cand, t, asm.j, slope, c1);
                if accepted.is_some() {
                    break;
                }
                t = t * cast::<T>(0.5);
            }
        }
        let Some((new_f, new_asm, t_acc)) = accepted else {
            debug!("line search stalled at iteration {it}");
            break;
        };
        step = t_acc;
        f = new_f;
        asm = new_asm;
        g_prev = g;
        g = gradient_from(torus, &f, spec, data, cfg, &weights, &asm)?;
        history.push(to_f64(asm.j));
        iterations = it + 1;
        debug!(
            "iteration {}: objective {:.6e}, gradient {:.3e}, step {:.3e}",
            iterations,
            to_f64(asm.j),
            to_f64(g.norm_l2()),
            to_f64(t_acc)
        );
    }
    if !converged && g.norm_l2() <= cfg.grad_tol * g0 {
        converged = true;
    }
    let grad_ratio = to_f64(g.norm_l2() / g0);
    Ok((f, history, iterations, converged, grad_ratio))
}

// ---- stability-exponent fit -------------------------------------------------

/// One noise level of the ladder, medians over the seed ensemble.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaLevel {
    pub noise: f64,
    /// Median size of the noisy observation sets.
    pub data_norm: f64,
    /// Median data-perturbation norm against the clean set.
    pub median_pert: f64,
    /// Median reconstruction drift against the clean reconstruction,
    /// measured on the interior mask.
    pub median_error: f64,
    pub error_q1: f64,
    pub error_q3: f64,
}

/// Log-log fit of reconstruction drift against data perturbation.
#[derive(Debug, Clone, Serialize)]
pub struct KappaFit {
    /// Fitted exponent (slope of the log-log regression).
    pub kappa: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-standard-error band around the exponent.
    pub kappa_low: f64,
    pub kappa_high: f64,
    pub levels: Vec<KappaLevel>,
}

/// Estimate the stability exponent empirically: reconstruct once on clean
/// data, then across a noise ladder, and regress the log median drift on the
/// log median perturbation norm. Requires at least 4 levels spanning 1.5
/// decades and at least 10 seeds per level; a ladder whose perturbations
/// vanish is rejected as degenerate.
pub fn kappa_fit<T: Scalar>(
    spec: &ProblemSpec<T>,
    cfg: &ReconstructionConfig<T>,
    dt: T,
    noise_levels: &[T],
    seeds: &[u64],
) -> Result<KappaFit> {
    if noise_levels.len() < 4 {
        return Err(CoreError::InvalidParameter(format!(
            "exponent fit needs at least 4 noise levels, got {}",
            noise_levels.len()
        )));
    }
    if seeds.len() < 10 {
        return Err(CoreError::InvalidParameter(format!(
            "exponent fit needs at least 10 seeds per level, got {}",
            seeds.len()
        )));
    }
    let min = noise_levels.iter().fold(T::infinity(), |m, &v| m.min(v));
    let max = noise_levels.iter().fold(T::zero(), |m, &v| m.max(v));
    if min > T::zero() && to_f64(max / min).log10() < 1.5 - 1e-9 {
        return Err(CoreError::InvalidParameter(
            "noise ladder must span at least 1.5 decades".into(),
        ));
    }
    cfg.validate()?;
    spec.validate()?;

    let torus = Torus::new(spec.grid);
    let u_true = solve_on(&torus, spec, &spec.f_true, dt, None)?;
    let clean = observe(&u_true, spec, T::zero(), seeds[0])?;
    let f_clean = reconstruct(spec, &clean, cfg)?.f_rec;
    let mask = interior_mask(&spec.grid, &spec.observed_faces, cfg.interior_margin);

    let mut levels = Vec::with_capacity(noise_levels.len());
    for &level in noise_levels {
        // Seeds are independent runs; the indexed collect keeps the result
        // order (and every emitted byte) identical to the sequential sweep.
        let runs: Result<Vec<(f64, f64, f64)>> = seeds
            .par_iter()
            .map(|&seed| {
                let noisy = observe(&u_true, spec, level, seed)?;
                let rec = reconstruct(spec, &noisy, cfg)?;
                let err = to_f64(rec.f_rec.sub(&f_clean).norm_l2_masked(&mask));
                let diff = observation_diff(&noisy, &clean)?;
                let pert = to_f64(observation_norm(&torus, &diff)?);
                Ok((err, pert, rec.data_norm))
            })
            .collect();
        let runs = runs?;
        let mut errs: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let mut perts: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let mut norms: Vec<f64> = runs.iter().map(|r| r.2).collect();
        errs.sort_by(f64::total_cmp);
        perts.sort_by(f64::total_cmp);
        norms.sort_by(f64::total_cmp);
        levels.push(KappaLevel {
            noise: to_f64(level),
            data_norm: quantile(&norms, 0.5),
            median_pert: quantile(&perts, 0.5),
            median_error: quantile(&errs, 0.5),
            error_q1: quantile(&errs, 0.25),
            error_q3: quantile(&errs, 0.75),
        });
    }

    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|lv| (lv.median_pert, lv.median_error))
        .collect();
    if points.iter().any(|&(p, e)| p <= 0.0 || e <= 0.0) {
        return Err(CoreError::Degenerate(
            "noise ladder produced a vanishing perturbation or drift; \
             the regression has no spread"
                .into(),
        ));
    }
    let (kappa, intercept, r_squared, se) = log_log_fit(&points)?;
    Ok(KappaFit {
        kappa,
        intercept,
        r_squared,
        kappa_low: kappa - 2.0 * se,
        kappa_high: kappa + 2.0 * se,
        levels,
    })
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Ordinary least squares of `ln y` on `ln x`: returns (slope, intercept,
/// r^2, standard error of the slope).
fn log_log_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64, f64)> {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum();
    if sxx < 1e-12 {
        return Err(CoreError::Degenerate(
            "noise levels collapse to a single perturbation size".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        return Err(CoreError::Degenerate(
            "drift medians collapse to a single value".into(),
        ));
    };
    let dof = (points.len() as f64 - 2.0).max(1.0);
    let se = (ss_res / dof / sxx).sqrt();
    Ok((slope, intercept, r_squared, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: Grid<f64>, rng: &mut ChaCha8Rng) -> SpatialField<f64> {
        let data = (0..grid.total_nodes())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        SpatialField::from_vec(grid, data).unwrap()
    }

    #[test]
    fn slice_division_recovers_the_source() {
        let grid = Grid::line(64, 1.0).unwrap();
        let mut errs = Vec::new();
        for spec in [
            ProblemSpec::defaults(grid.clone()).linearized(),
            ProblemSpec::defaults(grid),
        ] {
            let u = solve(&spec, &spec.f_true, 1e-3).unwrap();
            let obs = observe(&u, &spec, 0.0, 5).unwrap();
            let f_rec = direct_slice(&obs.snapshot, &obs.z_slice, &spec).unwrap();
            let rel = f_rec.sub(&spec.f_true).norm_l2() / spec.f_true.norm_l2();
            errs.push(rel);
        }
        assert!(errs[0] <= errs[1], "linear error above nonlinear: {errs:?}");
        assert!(errs[1] < 0.02, "slice-division errors {errs:?}");
    }

    #[test]
    fn slice_division_is_exact_on_the_zero_problem() {
        let grid = Grid::line(32, 1.0).unwrap();
        let mut spec = ProblemSpec::defaults(grid);
        spec.f_true = SpatialField::zeros(grid);
        spec.u_init = SpatialField::zeros(grid);
        let u = solve(&spec, &spec.f_true, 1e-2).unwrap();
        let obs = observe(&u, &spec, 0.0, 1).unwrap();
        let f_rec = direct_slice(&obs.snapshot, &obs.z_slice, &spec).unwrap();
        assert_eq!(f_rec.norm_inf(), 0.0);
    }

    #[test]
    fn slice_division_refuses_a_vanishing_source_factor() {
        let grid = Grid::line(32, 1.0).unwrap();
        let mut spec = ProblemSpec::defaults(grid);
        // Dip the factor below the floor at an interior node.
        spec.source.at_t0 = SpatialField::from_fn(grid, |x: &[f64]| {
            if (x[0] - 0.5).abs() < 0.02 {
                0.1
            } else {
                1.0
            }
        });
        let zero = SpatialField::zeros(grid);
        match direct_slice(&zero, &zero, &spec) {
            Err(CoreError::Degenerate(msg)) => {
                assert!(msg.contains("node"), "message lacks the node: {msg}")
            }
            other => panic!("expected a degenerate divisor, got {other:?}"),
        }
    }

    #[test]
    fn time_stencil_transpose_is_the_exact_adjoint() {
        let grid = Grid::line(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 0.03;
        let frames: Vec<_> = (0..7).map(|_| random_field(grid, &mut rng)).collect();
        let zeta: Vec<_> = (0..7).map(|_| random_field(grid, &mut rng)).collect();
        let u = SpaceTimeField::new(grid, 0.0, dt, frames.clone()).unwrap();
        let z = time_derivative(&u).unwrap();
        let euclid = |a: &SpatialField<f64>, b: &SpatialField<f64>| -> f64 {
            a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum()
        };
        let lhs: f64 = (0..7).map(|i| euclid(z.frame(i), &zeta[i])).sum();
        let g = time_stencil_transpose(&zeta, dt);
        let rhs: f64 = (0..7).map(|i| euclid(&frames[i], &g[i])).sum();
        assert!(
            (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
            "adjoint defect {lhs} vs {rhs}"
        );
    }

    #[test]
    fn trace_scatter_is_the_exact_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for grid in [Grid::line(32, 1.0).unwrap(), Grid::square(16, 1.0).unwrap()] {
            for face in grid.faces() {
                let v = random_field(grid, &mut rng);
                let d = v.normal_derivative(face).unwrap();
                let psi: Vec<f64> = (0..d.values.len())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let lhs: f64 = d.values.iter().zip(&psi).map(|(&a, &b)| a * b).sum();
                let mut out = SpatialField::zeros(grid);
                for (j, &p) in psi.iter().enumerate() {
                    scatter_normal_transpose(&mut out, face, j, p);
                }
                let rhs: f64 = out
                    .data()
                    .iter()
                    .zip(v.data())
                    .map(|(&a, &b)| a * b)
                    .sum();
                assert!(
                    (lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0),
                    "face {}: {lhs} vs {rhs}",
                    face.name()
                );
            }
        }
    }

    fn fd_check(
        spec: &ProblemSpec<f64>,
        data: &ObservationData<f64>,
        cfg: &ReconstructionConfig<f64>,
        f0: &SpatialField<f64>,
        directions: usize,
        seed: u64,
    ) {
        let grid = spec.grid;
        let grad = gradient(f0, spec, data, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for _ in 0..directions {
            let mut delta = random_field(grid, &mut rng);
            delta.scale(1.0 / delta.norm_l2());
            let mut fp = f0.clone();
            fp.axpy(h, &delta);
            let mut fm = f0.clone();
            fm.axpy(-h, &delta);
            let jp = forward_misfit(&fp, spec, data, cfg).unwrap();
            let jm = forward_misfit(&fm, spec, data, cfg).unwrap();
            let fd = (jp - jm) / (2.0 * h);
            let dd = grad.dot_l2(&delta);
            assert!(
                (dd - fd).abs() <= 1e-3 * dd.abs().max(1e-12),
                "directional derivative {dd} vs finite difference {fd}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.02, 11).unwrap();
        // Probe away from the optimum: a shifted, distorted source.
        let mut f0 = spec.f_true.scaled(0.7);
        f0.axpy(
            0.02,
            &SpatialField::from_fn(grid, |x| (2.0 * PI * x[0]).sin()),
        );
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.gamma = 1e-6;
        fd_check(&spec, &data, &cfg, &f0, 10, 21);
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.02, 13).unwrap();
        let f0 = spec.f_true.scaled(0.5);
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.gamma = 1e-6;
        cfg.carleman_weighting = Some(CarlemanParams::linear_default(grid, spec.t0));
        fd_check(&spec, &data, &cfg, &f0, 3, 23);
    }

    #[test]
    fn matched_source_misfit_reduces_to_the_penalty() {
        let grid = Grid::<f64>::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.0, 1).unwrap();
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.gamma = 0.0;
        // The simulation replays the observed trajectory up to the rounding
        // of the recovered step, so the data term sits at a floor far below
        // any discretization scale without vanishing identically.
        let floor = forward_misfit(&spec.f_true, &spec, &data, &cfg).unwrap();
        assert!((0.0..1e-20).contains(&floor), "floor {floor}");
        cfg.gamma = 1e-3;
        let expected = 1e-3 * spec.f_true.dot_l2(&spec.f_true);
        let j = forward_misfit(&spec.f_true, &spec, &data, &cfg).unwrap();
        assert!((j - expected).abs() <= 1e-20 + 1e-12 * expected, "{j} vs {expected}");
    }

    #[test]
    fn negative_gradient_is_a_descent_direction() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.05, 3).unwrap();
        let cfg = ReconstructionConfig::tikhonov();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f0 = random_field(grid, &mut rng).scaled(0.02);
        let j0 = forward_misfit(&f0, &spec, &data, &cfg).unwrap();
        let g = gradient(&f0, &spec, &data, &cfg).unwrap();
        let t = 1e-3 / g.norm_l2();
        let mut f1 = f0.clone();
        f1.axpy(-t, &g);
        let j1 = forward_misfit(&f1, &spec, &data, &cfg).unwrap();
        assert!(j1 < j0, "no descent: {j0} -> {j1}");
    }

    #[test]
    fn zero_data_reconstructs_zero() {
        let grid = Grid::line(32, 1.0).unwrap();
        let mut spec = ProblemSpec::defaults(grid);
        spec.f_true = SpatialField::zeros(grid);
        spec.u_init = SpatialField::zeros(grid);
        let u = solve(&spec, &spec.f_true, 1e-2).unwrap();
        let data = observe(&u, &spec, 0.0, 1).unwrap();
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.gamma = 1e-6;
        let res = reconstruct(&spec, &data, &cfg).unwrap();
        assert_eq!(res.f_rec.norm_inf(), 0.0);
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn least_squares_recovers_the_source() {
        let grid = Grid::line(64, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 2e-3).unwrap();
        let data = observe(&u, &spec, 0.0, 1).unwrap();
        let cfg = ReconstructionConfig::tikhonov();
        let res = reconstruct(&spec, &data, &cfg).unwrap();
        for w in res.misfit_history.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "objective increased: {:?}",
                &res.misfit_history
            );
        }
        let rel = res.relative_error_interior.unwrap();
        assert!(
            rel <= 0.05,
            "interior error {rel} after {} iterations (grad ratio {})",
            res.iterations,
            res.grad_ratio
        );
    }

    #[test]
    fn plain_descent_also_reduces_the_misfit() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.0, 1).unwrap();
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.method = Method::Tikhonov { cg: false };
        cfg.max_iters = 10;
        let res = reconstruct(&spec, &data, &cfg).unwrap();
        assert!(res.iterations > 0);
        let first = res.misfit_history[0];
        let last = *res.misfit_history.last().unwrap();
        assert!(last < first, "descent made no progress: {first} -> {last}");
    }

    #[test]
    fn interior_error_never_exceeds_the_full_domain_error() {
        let grid = Grid::line(32, 1.0).unwrap();
        let mask = interior_mask(&grid, &[FaceId::high(0)], 0.1);
        // The low face is unobserved: its margin nodes are masked out.
        assert!(!mask[0]);
        assert!(mask[grid.total_nodes() - 1]);
        assert!(mask.iter().filter(|&&m| m).count() < grid.total_nodes());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_field(grid, &mut rng);
        assert!(v.norm_l2_masked(&mask) <= v.norm_l2());
    }

    #[test]
    fn weighting_never_enlarges_the_misfit() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.05, 7).unwrap();
        let mut plain = ReconstructionConfig::tikhonov();
        plain.gamma = 0.0;
        let mut weighted = plain.clone();
        weighted.carleman_weighting = Some(CarlemanParams::linear_default(grid, spec.t0));
        let j_plain = forward_misfit(&spec.f_true, &spec, &data, &plain).unwrap();
        let j_weighted = forward_misfit(&spec.f_true, &spec, &data, &weighted).unwrap();
        assert!(j_weighted > 0.0);
        // The rescaled weight lies in (0, 1], so it can only shrink the fit.
        assert!(j_weighted <= j_plain, "{j_weighted} > {j_plain}");
    }

    #[test]
    fn observation_diff_of_a_set_with_itself_vanishes() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let torus = Torus::new(grid);
        let u = solve(&spec, &spec.f_true, 5e-3).unwrap();
        let data = observe(&u, &spec, 0.03, 2).unwrap();
        let diff = observation_diff(&data, &data).unwrap();
        assert_eq!(observation_norm(&torus, &diff).unwrap(), 0.0);
        assert!(observation_norm(&torus, &data).unwrap() > 0.0);
    }

    #[test]
    fn exact_power_law_is_fitted_exactly() {
        let points: Vec<(f64, f64)> = (0..5)
            .map(|k| {
                let x = 10f64.powi(-k);
                (x, 3.0 * x.powf(0.6))
            })
            .collect();
        let (slope, intercept, r2, se) = log_log_fit(&points).unwrap();
        assert!((slope - 0.6).abs() < 1e-12);
        assert!((intercept - 3f64.ln()).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn ladder_preconditions_are_enforced() {
        let grid = Grid::line(16, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let cfg = ReconstructionConfig::tikhonov();
        let seeds: Vec<u64> = (0..10).collect();
        // Too few levels.
        assert!(matches!(
            kappa_fit(&spec, &cfg, 1e-2, &[0.01, 0.1, 0.5], &seeds),
            Err(CoreError::InvalidParameter(_))
        ));
        // Too narrow a span.
        assert!(matches!(
            kappa_fit(&spec, &cfg, 1e-2, &[0.01, 0.02, 0.05, 0.1], &seeds),
            Err(CoreError::InvalidParameter(_))
        ));
        // Too few seeds.
        assert!(matches!(
            kappa_fit(&spec, &cfg, 1e-2, &[0.01, 0.05, 0.1, 0.5], &seeds[..5]),
            Err(CoreError::InvalidParameter(_))
        ));
    }

    #[test]
    fn all_zero_noise_ladder_is_degenerate() {
        let grid = Grid::line(16, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.max_iters = 1;
        cfg.grad_tol = 0.5;
        let seeds: Vec<u64> = (0..10).collect();
        match kappa_fit(&spec, &cfg, 1e-2, &[0.0; 4], &seeds) {
            Err(CoreError::Degenerate(_)) => {}
            other => panic!("expected a degenerate ladder, got {other:?}"),
        }
    }

    #[test]
    fn noise_ladder_fit_produces_a_positive_exponent() {
        let grid = Grid::line(32, 1.0).unwrap();
        let spec = ProblemSpec::defaults(grid);
        let mut cfg = ReconstructionConfig::tikhonov();
        cfg.max_iters = 25;
        cfg.grad_tol = 1e-4;
        let levels = [0.01, 0.0316, 0.1, 0.32];
        let seeds: Vec<u64> = (0..10).collect();
        let fit = kappa_fit(&spec, &cfg, 5e-3, &levels, &seeds).unwrap();
        assert_eq!(fit.levels.len(), 4);
        assert!(fit.kappa > 0.0 && fit.kappa.is_finite(), "{fit:?}");
        assert!(fit.r_squared > 0.5, "poor fit: {fit:?}");
        assert!(
            fit.levels[3].median_error > fit.levels[0].median_error,
            "drift not increasing with noise: {fit:?}"
        );
        assert!(fit.kappa_low <= fit.kappa && fit.kappa <= fit.kappa_high);
    }
}
