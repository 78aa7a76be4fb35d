//! Time integration of the semilinear parabolic problem
//!
//! ```text
//!   d_t u - Lap u = b . grad u + c u + lambda u^2 + alpha . (u grad u)
//!                   + R(x,t) f(x) + forcing,         u = 0 on the boundary,
//! ```
//!
//! on the window `I = (t0 - delta, t0 + delta)`, plus observation extraction
//! (boundary traces of the time derivative, interior snapshot) and seeded
//! noise injection.
//!
//! The stepper is first-order IMEX: diffusion is inverted spectrally each
//! step, everything else is explicit. Products in the step are nodal, not
//! dealiased: the coefficient fields (`c = -1` by default) extend to square
//! waves on the torus, and cutting those would corrupt the boundary nodes of
//! every step. The dealiased calculus is for the analysis modules; the
//! solver is plain collocation.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::field::{SpaceTimeField, SpatialField, TraceField};
use crate::grid::{FaceId, Grid};
use crate::scalar::{cast, to_f64, Scalar};
use crate::spectral::Torus;

/// Source time factor, affine in time: `R(x,t) = at_t0(x) + (t - t0) slope(x)`.
#[derive(Debug, Clone)]
pub struct SourceFactor<T> {
    pub at_t0: SpatialField<T>,
    pub slope: SpatialField<T>,
}

impl<T: Scalar> SourceFactor<T> {
    /// Default factor `1 + (t - t0)`: unit value and unit rate at the slice.
    pub fn default_for(grid: Grid<T>) -> Self {
        SourceFactor {
            at_t0: SpatialField::constant(grid, T::one()),
            slope: SpatialField::constant(grid, T::one()),
        }
    }

    pub fn value_at(&self, t_minus_t0: T) -> SpatialField<T> {
        let mut v = self.at_t0.clone();
        v.axpy(t_minus_t0, &self.slope);
        v
    }

    /// Smallest `|R(x, t0)|` over the grid.
    pub fn slice_floor(&self) -> T {
        self.at_t0
            .data()
            .iter()
            .fold(T::infinity(), |m, &v| m.min(v.abs()))
    }
}

/// Everything that defines one forward problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec<T> {
    pub grid: Grid<T>,
    /// Drift components, one per axis.
    pub b: Vec<SpatialField<T>>,
    pub c: SpatialField<T>,
    /// Coefficient of `u^2`.
    pub lambda: T,
    /// Coefficients of `u d_k u`, one per axis.
    pub alpha: Vec<T>,
    pub source: SourceFactor<T>,
    pub f_true: SpatialField<T>,
    pub t0: T,
    pub delta: T,
    /// Required positivity floor of `|R(., t0)|`.
    pub r0_floor: T,
    pub observed_faces: Vec<FaceId>,
    /// State at the start of the window, `t = t0 - delta`.
    pub u_init: SpatialField<T>,
}

impl<T: Scalar> ProblemSpec<T> {
    /// Baseline configuration at amplitude `eps`: constant drift 0.5,
    /// constant potential -1, quadratic weight 1, transport weight 0.3 on
    /// the first axis, source factor `1 + (t - t0)`, observation on the
    /// high face of the first axis. Initial state and true source are
    /// low-mode profiles scaled by `eps` so the trajectory stays in the
    /// small-amplitude regime.
    pub fn with_amplitude(grid: Grid<T>, eps: T) -> Self {
        let dim = grid.dim();
        let pi = T::PI();
        let half = cast::<T>(0.5);
        let b = (0..dim)
            .map(|_| SpatialField::constant(grid, half))
            .collect();
        let mut alpha = vec![T::zero(); dim];
        alpha[0] = cast::<T>(0.3);
        let len0 = grid.length(0);
        let u_init = SpatialField::from_fn(grid, |x| {
            let mut v = (pi * x[0] / len0).sin();
            for (axis, &xa) in x.iter().enumerate().take(dim).skip(1) {
                v *= (pi * xa / grid.length(axis)).sin();
            }
            cast::<T>(0.8) * eps * v
        });
        let f_true = SpatialField::from_fn(grid, |x| {
            let s1 = (pi * x[0] / len0).sin();
            let s3 = (cast::<T>(3.0) * pi * x[0] / len0).sin();
            let mut v = s1 + half * s3;
            for (axis, &xa) in x.iter().enumerate().take(dim).skip(1) {
                v *= (pi * xa / grid.length(axis)).sin();
            }
            eps * v
        });
        ProblemSpec {
            grid,
            b,
            c: SpatialField::constant(grid, -T::one()),
            lambda: T::one(),
            alpha,
            source: SourceFactor::default_for(grid),
            f_true,
            t0: half,
            delta: cast::<T>(0.1),
            r0_floor: T::one(),
            observed_faces: vec![FaceId::high(0)],
            u_init,
        }
    }

    pub fn defaults(grid: Grid<T>) -> Self {
        Self::with_amplitude(grid, cast::<T>(0.05))
    }

    /// Same problem with the nonlinearity switched off.
    pub fn linearized(mut self) -> Self {
        self.lambda = T::zero();
        for a in &mut self.alpha {
            *a = T::zero();
        }
        self
    }

    pub fn window_start(&self) -> T {
        self.t0 - self.delta
    }

    pub fn window_end(&self) -> T {
        self.t0 + self.delta
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta <= T::zero() {
            return Err(CoreError::InvalidParameter(
                "window half-width must be positive".into(),
            ));
        }
        if self.b.len() != self.grid.dim() || self.alpha.len() != self.grid.dim() {
            return Err(CoreError::InvalidParameter(
                "drift and transport weights need one entry per axis".into(),
            ));
        }
        for fld in self
            .b
            .iter()
            .chain([&self.c, &self.f_true, &self.u_init])
            .chain([&self.source.at_t0, &self.source.slope])
        {
            self.grid.same_as(fld.grid())?;
            if !fld.is_finite() {
                return Err(CoreError::NonFinite("problem coefficient"));
            }
        }
        let floor = self.source.slice_floor();
        if floor < self.r0_floor {
            return Err(CoreError::InvalidParameter(format!(
                "source factor at the slice dips to {} below the floor {}",
                to_f64(floor),
                to_f64(self.r0_floor)
            )));
        }
        for face in &self.observed_faces {
            if face.axis >= self.grid.dim() {
                return Err(CoreError::InvalidParameter(format!(
                    "observed face {} outside the grid dimension",
                    face.name()
                )));
            }
        }
        Ok(())
    }
}

const BLOW_UP_LIMIT: f64 = 1e6;

/// Integrate the problem with source coefficient `f`. The returned
/// trajectory has `2 delta / dt` steps (must divide evenly) and starts at
/// `u_init`.
pub fn solve<T: Scalar>(
    spec: &ProblemSpec<T>,
    f: &SpatialField<T>,
    dt: T,
) -> Result<SpaceTimeField<T>> {
    let torus = Torus::new(spec.grid);
    solve_on(&torus, spec, f, dt, None)
}

/// `solve` with a reusable torus and an optional extra forcing term `g(t)`
/// added nodally to the right-hand side (used by manufactured-solution
/// tests and the adjoint machinery).
pub fn solve_on<T: Scalar>(
    torus: &Torus<T>,
    spec: &ProblemSpec<T>,
    f: &SpatialField<T>,
    dt: T,
    forcing: Option<&dyn Fn(T) -> SpatialField<T>>,
) -> Result<SpaceTimeField<T>> {
    spec.validate()?;
    spec.grid.same_as(f.grid())?;
    let steps = step_count(spec.delta, dt)?;
    let t_start = spec.window_start();

    // The affine source contributes rf0 + (t - t0) rf1 each step.
    let rf0 = spec.source.at_t0.mul_pointwise(f);
    let rf1 = spec.source.slope.mul_pointwise(f);

    let mut frames = Vec::with_capacity(steps + 1);
    let mut u = spec.u_init.clone();
    frames.push(u.clone());
    let mut worst_cfl = T::zero();

    for n in 0..steps {
        let t = t_start + dt * cast::<T>(n as f64);
        let grad = torus.gradient(&u);
        let mut rhs = rf0.clone();
        rhs.axpy(t - spec.t0, &rf1);
        if let Some(g) = forcing {
            rhs.axpy(T::one(), &g(t));
        }
        for (k, (du, bk)) in grad.iter().zip(&spec.b).enumerate() {
            // (b_k + alpha_k u) d_k u, nodal.
            let mut coeff = bk.clone();
            coeff.axpy(spec.alpha[k], &u);
            rhs.axpy(T::one(), &coeff.mul_pointwise(du));
            let cfl = dt * coeff.norm_inf() / spec.grid.spacing(k);
            worst_cfl = worst_cfl.max(cfl);
        }
        // (c + lambda u) u, nodal.
        let mut pot = spec.c.clone();
        pot.axpy(spec.lambda, &u);
        rhs.axpy(T::one(), &pot.mul_pointwise(&u));

        let mut stage = u;
        stage.axpy(dt, &rhs);
        u = torus.heat_solve(&stage, dt);

        let amp = u.norm_inf();
        if !amp.is_finite() || amp > cast::<T>(BLOW_UP_LIMIT) {
            return Err(CoreError::BlowUp {
                step: n + 1,
                t: to_f64(t + dt),
                norm: to_f64(amp),
            });
        }
        frames.push(u.clone());
    }
    if worst_cfl > T::one() {
        warn!(
            "explicit transport exceeded the step bound: dt |b + alpha u| / h = {}",
            to_f64(worst_cfl)
        );
    }
    SpaceTimeField::new(spec.grid, t_start, dt, frames)
}

fn step_count<T: Scalar>(delta: T, dt: T) -> Result<usize> {
    if dt <= T::zero() {
        return Err(CoreError::InvalidParameter("dt must be positive".into()));
    }
    let raw = to_f64(delta) * 2.0 / to_f64(dt);
    let steps = raw.round();
    if (raw - steps).abs() > 1e-8 * steps.max(1.0) || steps < 2.0 {
        return Err(CoreError::InvalidParameter(format!(
            "window 2 delta = {} is not an even multiple of dt = {}",
            2.0 * to_f64(delta),
            to_f64(dt)
        )));
    }
    Ok(steps as usize)
}

/// Second-order time differencing: centered inside the window, one-sided at
/// the two ends. Exact on trajectories linear in `t`.
pub fn time_derivative<T: Scalar>(u: &SpaceTimeField<T>) -> Result<SpaceTimeField<T>> {
    let frames = u.frames();
    let n = frames.len();
    if n < 3 {
        return Err(CoreError::InvalidParameter(
            "time differencing needs at least 3 frames".into(),
        ));
    }
    let dt = u.dt();
    let half = cast::<T>(0.5) / dt;
    let mut out = Vec::with_capacity(n);
    // (-3 u_0 + 4 u_1 - u_2) / (2 dt)
    let mut first = frames[0].scaled(-cast::<T>(3.0));
    first.axpy(cast::<T>(4.0), &frames[1]);
    first.axpy(-T::one(), &frames[2]);
    out.push(first.scaled(half));
    for i in 1..n - 1 {
        let mut mid = frames[i + 1].clone();
        mid.axpy(-T::one(), &frames[i - 1]);
        out.push(mid.scaled(half));
    }
    let mut last = frames[n - 1].scaled(cast::<T>(3.0));
    last.axpy(-cast::<T>(4.0), &frames[n - 2]);
    last.axpy(T::one(), &frames[n - 3]);
    out.push(last.scaled(half));
    SpaceTimeField::new(*u.grid(), u.t_start(), dt, out)
}

/// Boundary and interior measurements extracted from one trajectory.
#[derive(Debug, Clone)]
pub struct ObservationData<T> {
    pub faces: Vec<FaceId>,
    pub times: Vec<T>,
    /// Per face, per frame: value trace of `z = d_t u` (identically zero
    /// under the Dirichlet condition; kept for completeness).
    pub z_trace: Vec<Vec<TraceField<T>>>,
    /// Per face, per frame: outward-axis normal derivative of `z`.
    pub dz_trace: Vec<Vec<TraceField<T>>>,
    /// `u(., t0)`.
    pub snapshot: SpatialField<T>,
    /// Interior `d_t u(., t0)`. Idealized validation-grade data, beyond the
    /// boundary observation set; only the slice-division reconstruction
    /// reads it.
    pub z_slice: SpatialField<T>,
    pub noise_level: T,
    pub seed: u64,
}

/// Extract traces of the time derivative on the observed faces plus the
/// interior slice at `t0`, then add seeded Gaussian noise scaled to
/// `noise_level` times the RMS of each clean signal.
pub fn observe<T: Scalar>(
    u: &SpaceTimeField<T>,
    spec: &ProblemSpec<T>,
    noise_level: T,
    seed: u64,
) -> Result<ObservationData<T>> {
    spec.grid.same_as(u.grid())?;
    let z = time_derivative(u)?;
    let slice = u.frame_index_at(spec.t0)?;
    let mut data = ObservationData {
        faces: spec.observed_faces.clone(),
        times: u.times(),
        z_trace: Vec::new(),
        dz_trace: Vec::new(),
        snapshot: u.frame(slice).clone(),
        z_slice: z.frame(slice).clone(),
        noise_level,
        seed,
    };
    for &face in &spec.observed_faces {
        let mut zt = Vec::with_capacity(z.frames().len());
        let mut dzt = Vec::with_capacity(z.frames().len());
        for frame in z.frames() {
            zt.push(frame.boundary_trace(face)?);
            dzt.push(frame.normal_derivative(face)?);
        }
        data.z_trace.push(zt);
        data.dz_trace.push(dzt);
    }
    if noise_level > T::zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut perturb = |values: &mut [T], rms: T| {
            let sigma = noise_level * rms;
            for v in values.iter_mut() {
                *v += sigma * cast::<T>(normal.sample(&mut rng));
            }
        };
        for face_series in data.z_trace.iter_mut().chain(data.dz_trace.iter_mut()) {
            let rms = series_rms(face_series);
            for tr in face_series.iter_mut() {
                perturb(&mut tr.values, rms);
            }
        }
        let rms = slice_rms(data.snapshot.data());
        perturb(data.snapshot.data_mut(), rms);
        let rms = slice_rms(data.z_slice.data());
        perturb(data.z_slice.data_mut(), rms);
    }
    Ok(data)
}

fn slice_rms<T: Scalar>(vals: &[T]) -> T {
    let n = cast::<T>(vals.len().max(1) as f64);
    (vals.iter().map(|&v| v * v).sum::<T>() / n).sqrt()
}

fn series_rms<T: Scalar>(series: &[TraceField<T>]) -> T {
    let mut sum = T::zero();
    let mut count = 0usize;
    for tr in series {
        for &v in &tr.values {
            sum += v * v;
            count += 1;
        }
    }
    (sum / cast::<T>(count.max(1) as f64)).sqrt()
}

/// Which algebraic form carries the first-order terms of the
/// time-differentiated equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZForm {
    /// Nodal multiplication by the linearized coefficients
    /// `b + alpha u`, `c + 2 lambda u`; coupling term `alpha . (z grad u)`.
    Exact,
    /// Low-frequency paraproducts of the same symbols; everything else
    /// (diagonal remainders, symbol time-derivatives) moves to the coupling
    /// term.
    Paraproduct,
}

/// Residual of the equation satisfied by `z = d_t u`:
///
/// ```text
///   d_t z - Lap z - b_hat . grad z - c_hat z - (d_t R) f - K(u, z)
/// ```
///
/// with `b_hat = b + alpha u`, `c_hat = c + 2 lambda u`. In the `Exact`
/// form `K = alpha . (z grad u)`; in the `Paraproduct` form the first-order
/// terms are paraproducts and `K` additionally carries the time derivative
/// of the regrouping remainder plus `T_{alpha z} . grad u + T_{2 lambda z} u`.
/// Both forms are algebraic regroupings of the stepped equation, so the
/// residual measures pure time-discretization error.
pub fn residual_z_equation<T: Scalar>(
    u: &SpaceTimeField<T>,
    z: &SpaceTimeField<T>,
    spec: &ProblemSpec<T>,
    f: &SpatialField<T>,
    form: ZForm,
) -> Result<SpaceTimeField<T>> {
    spec.validate()?;
    spec.grid.same_as(u.grid())?;
    spec.grid.same_as(z.grid())?;
    let torus = Torus::new(spec.grid);
    let part = crate::dyadic::DyadicPartition::new(&torus);
    let dz = time_derivative(z)?;
    let dtr_f = spec.source.slope.mul_pointwise(f);

    // Paraproduct form: time-differentiate the regrouping remainder
    //   S(u) = (full nodal right-hand side of the u-equation without source)
    //          - T_{b_hat} . grad u - T_{c_hat,exact} u
    // along the trajectory first.
    let regroup_rate = match form {
        ZForm::Exact => None,
        ZForm::Paraproduct => {
            let mut s_frames = Vec::with_capacity(u.frames().len());
            for frame in u.frames() {
                s_frames.push(regroup_remainder(&torus, &part, spec, frame)?);
            }
            let s_traj = SpaceTimeField::new(spec.grid, u.t_start(), u.dt(), s_frames)?;
            Some(time_derivative(&s_traj)?)
        }
    };

    let mut res_frames = Vec::with_capacity(u.frames().len());
    for (i, (uf, zf)) in u.frames().iter().zip(z.frames()).enumerate() {
        let mut res = dz.frame(i).clone();
        res.axpy(-T::one(), &torus.laplacian(zf));
        res.axpy(-T::one(), &dtr_f);
        let grad_u = torus.gradient(uf);
        let grad_z = torus.gradient(zf);
        match form {
            ZForm::Exact => {
                for (k, (dzk, bk)) in grad_z.iter().zip(&spec.b).enumerate() {
                    let mut coeff = bk.clone();
                    coeff.axpy(spec.alpha[k], uf);
                    res.axpy(-T::one(), &coeff.mul_pointwise(dzk));
                    // K term alpha_k z d_k u.
                    res.axpy(-spec.alpha[k], &zf.mul_pointwise(&grad_u[k]));
                }
                let mut pot = spec.c.clone();
                pot.axpy(cast::<T>(2.0) * spec.lambda, uf);
                res.axpy(-T::one(), &pot.mul_pointwise(zf));
            }
            ZForm::Paraproduct => {
                let two_lambda = cast::<T>(2.0) * spec.lambda;
                for (k, (dzk, bk)) in grad_z.iter().zip(&spec.b).enumerate() {
                    let mut sym = bk.clone();
                    sym.axpy(spec.alpha[k], uf);
                    res.axpy(
                        -T::one(),
                        &crate::paraproduct::paraproduct(&torus, &part, &sym, dzk)?,
                    );
                    // Symbol rate: T_{alpha_k z} d_k u.
                    res.axpy(
                        -spec.alpha[k],
                        &crate::paraproduct::paraproduct(&torus, &part, zf, &grad_u[k])?,
                    );
                }
                let mut pot = spec.c.clone();
                pot.axpy(two_lambda, uf);
                res.axpy(
                    -T::one(),
                    &crate::paraproduct::paraproduct(&torus, &part, &pot, zf)?,
                );
                res.axpy(
                    -two_lambda,
                    &crate::paraproduct::paraproduct(&torus, &part, zf, uf)?,
                );
                res.axpy(-T::one(), regroup_rate.as_ref().unwrap().frame(i));
            }
        }
        res_frames.push(res);
    }
    SpaceTimeField::new(spec.grid, u.t_start(), u.dt(), res_frames)
}

/// Nodal right-hand side of the stepped equation minus its low-frequency
/// paraproduct part:
/// `b_hat . grad u + c_hat_exact u - T_{b_hat} . grad u - T_{c_hat,exact} u`
/// with the exact-form symbols `b + alpha u`, `c + lambda u`.
fn regroup_remainder<T: Scalar>(
    torus: &Torus<T>,
    part: &crate::dyadic::DyadicPartition<T>,
    spec: &ProblemSpec<T>,
    u: &SpatialField<T>,
) -> Result<SpatialField<T>> {
    let grad = torus.gradient(u);
    let mut out = SpatialField::zeros(spec.grid);
    for (k, (du, bk)) in grad.iter().zip(&spec.b).enumerate() {
        let mut sym = bk.clone();
        sym.axpy(spec.alpha[k], u);
        out.axpy(T::one(), &sym.mul_pointwise(du));
        out.axpy(
            -T::one(),
            &crate::paraproduct::paraproduct(torus, part, &sym, du)?,
        );
    }
    let mut pot = spec.c.clone();
    pot.axpy(spec.lambda, u);
    out.axpy(T::one(), &pot.mul_pointwise(u));
    out.axpy(
        -T::one(),
        &crate::paraproduct::paraproduct(torus, part, &pot, u)?,
    );
    Ok(out)
}
