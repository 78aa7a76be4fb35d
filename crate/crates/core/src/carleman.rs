//! Carleman weights, the conjugated heat operator, and quadrature
//! measurements of the weighted inequalities.
//!
//! The weight is phi(x,t) = exp(lambda_c (d(x) - beta (t - t0)^2)) with a
//! caller-supplied generating function d, and w = exp(2 s_c phi). Every
//! weighted integral in this module is computed against the rescaled weight
//! exp(2 s_c (phi - max phi)), which lives in (0, 1]; the boundary term's
//! exp(-c s) factor is folded into the same rescaling, so ratios are exact
//! and no intermediate ever overflows no matter how large s_c grows. The raw
//! pair (phi, w) is only materialized by `build_weights`, which refuses when
//! exp would overflow.
//!
//! d, grad d and lap d travel together as nodal fields. The default d(x) =
//! x_0 has a jump at the far end of its odd extension, so differentiating it
//! spectrally would ring; carrying the analytic derivatives sidesteps that
//! and makes the weight identities exact.

use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::field::{SpaceTimeField, SpatialField};
use crate::forward::{time_derivative, ProblemSpec};
use crate::grid::{FaceId, Grid};
use crate::scalar::{cast, to_f64, Scalar};
use crate::spectral::Torus;

/// exp overflow threshold for f64; exponents beyond this produce inf.
const EXP_LIMIT: f64 = 700.0;

/// Parameters of the weight family. `gamma` lists the observed faces whose
/// traces enter the boundary term of the weighted inequalities.
#[derive(Debug, Clone)]
pub struct CarlemanParams<T> {
    /// Weight-generating function, nodal values.
    pub d: SpatialField<T>,
    /// Analytic gradient of `d`, one component per axis.
    pub grad_d: Vec<SpatialField<T>>,
    /// Analytic Laplacian of `d`.
    pub lap_d: SpatialField<T>,
    pub lambda_c: T,
    pub beta: T,
    pub s_c: T,
    /// Center time; the weight peaks here.
    pub t0: T,
    pub gamma: Vec<FaceId>,
}

impl<T: Scalar> CarlemanParams<T> {
    /// d(x) = x_0: gradient (1, 0, ...), zero Laplacian, |grad d| = 1
    /// everywhere, d = 0 only on the unobserved face x_0 = 0. Observation on
    /// the opposite face.
    pub fn linear_default(grid: Grid<T>, t0: T) -> Self {
        let d = SpatialField::from_fn(grid, |x| x[0]);
        let mut grad_d = vec![SpatialField::zeros(grid); grid.dim()];
        grad_d[0] = SpatialField::constant(grid, T::one());
        CarlemanParams {
            d,
            grad_d,
            lap_d: SpatialField::zeros(grid),
            lambda_c: cast::<T>(2.0),
            beta: T::one(),
            s_c: cast::<T>(4.0),
            t0,
            gamma: vec![FaceId::high(0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= T::one()) {
            return Err(CoreError::InvalidParameter(format!(
                "lambda_c = {} must be >= 1",
                self.lambda_c
            )));
        }
        if !(self.beta > T::zero()) {
            return Err(CoreError::InvalidParameter(format!(
                "beta = {} must be positive",
                self.beta
            )));
        }
        // s_c = 0 is allowed: it degenerates the conjugation to the plain
        // heat operator, which the tests rely on.
        if !(self.s_c >= T::zero()) {
            return Err(CoreError::InvalidParameter(format!(
                "s_c = {} must be nonnegative",
                self.s_c
            )));
        }
        if self.grad_d.len() != self.d.grid().dim() {
            return Err(CoreError::InvalidParameter(
                "grad_d needs one component per axis".into(),
            ));
        }
        let grad_min = min_grad_norm_sq(&self.grad_d);
        if !(grad_min > T::zero()) {
            return Err(CoreError::InvalidParameter(
                "|grad d| must be positive away from the exceptional set; \
                 got a node with grad d = 0"
                    .into(),
            ));
        }
        if self.d.data().iter().any(|&x| x < T::zero()) {
            return Err(CoreError::InvalidParameter(
                "d must be nonnegative on the closed domain".into(),
            ));
        }
        Ok(())
    }

    /// phi(., t) as a nodal field.
    pub fn phi_at(&self, t: T) -> SpatialField<T> {
        let shift = self.beta * (t - self.t0) * (t - self.t0);
        let lam = self.lambda_c;
        self.d.map(|x| (lam * (x - shift)).exp())
    }

    /// Largest phi over the window; attained at t closest to t0 and max d.
    fn max_phi(&self, t_start: T, dt: T, frames: usize) -> T {
        let mut m = T::zero();
        for i in 0..frames {
            let t = t_start + dt * cast::<T>(i as f64);
            let phi = self.phi_at(t);
            let sup = phi.data().iter().cloned().fold(T::zero(), T::max);
            if sup > m {
                m = sup;
            }
        }
        m
    }
}

fn min_grad_norm_sq<T: Scalar>(grad: &[SpatialField<T>]) -> T {
    let n = grad[0].data().len();
    (0..n)
        .map(|i| {
            grad.iter()
                .map(|g| g.data()[i] * g.data()[i])
                .fold(T::zero(), |a, b| a + b)
        })
        .fold(T::infinity(), T::min)
}

/// The weight pair on a frame grid: phi and w = exp(2 s_c phi), both raw.
#[derive(Debug, Clone)]
pub struct WeightPair<T> {
    pub phi: SpaceTimeField<T>,
    pub w: SpaceTimeField<T>,
}

/// Materialize (phi, w) on the given frame times. Refuses when the raw w
/// would overflow; the measurement routines below never need the raw weight
/// and keep working at any s_c.
pub fn build_weights<T: Scalar>(
    params: &CarlemanParams<T>,
    t_start: T,
    dt: T,
    frames: usize,
) -> Result<WeightPair<T>> {
    params.validate()?;
    let two_s = cast::<T>(2.0) * params.s_c;
    let max_phi = params.max_phi(t_start, dt, frames);
    let exponent = to_f64(two_s * max_phi);
    if exponent > EXP_LIMIT {
        return Err(CoreError::WeightOverflow {
            exponent,
            limit: EXP_LIMIT,
            max_phi: to_f64(max_phi),
        });
    }
    let mut phi_frames = Vec::with_capacity(frames);
    let mut w_frames = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = t_start + dt * cast::<T>(i as f64);
        let phi = params.phi_at(t);
        w_frames.push(phi.map(|p| (two_s * p).exp()));
        phi_frames.push(phi);
    }
    let grid = *params.d.grid();
    Ok(WeightPair {
        phi: SpaceTimeField::new(grid, t_start, dt, phi_frames)?,
        w: SpaceTimeField::new(grid, t_start, dt, w_frames)?,
    })
}

/// Per-frame weight context: phi, the rescaled weight in (0, 1], and the
/// log of the discarded scale factor.
struct WeightContext<T> {
    phi: Vec<SpatialField<T>>,
    scaled_w: Vec<SpatialField<T>>,
    /// 2 s_c max(phi): the true w is scaled_w * exp(log_scale).
    log_scale: T,
}

fn weight_context<T: Scalar>(params: &CarlemanParams<T>, v: &SpaceTimeField<T>) -> WeightContext<T> {
    let two_s = cast::<T>(2.0) * params.s_c;
    let max_phi = params.max_phi(v.t_start(), v.dt(), v.len());
    let phi: Vec<_> = (0..v.len()).map(|i| params.phi_at(v.time(i))).collect();
    let scaled_w = phi
        .iter()
        .map(|p| p.map(|x| (two_s * (x - max_phi)).exp()))
        .collect();
    WeightContext {
        phi,
        scaled_w,
        log_scale: two_s * max_phi,
    }
}

/// grad phi = lambda_c phi grad d, one nodal field per axis.
fn grad_phi<T: Scalar>(params: &CarlemanParams<T>, phi: &SpatialField<T>) -> Vec<SpatialField<T>> {
    params
        .grad_d
        .iter()
        .map(|g| phi.mul_pointwise(g).scaled(params.lambda_c))
        .collect()
}

/// The conjugated heat operator, the exact expansion of
/// exp(s phi) (dt - lap) (exp(-s phi) v):
/// dt(v) - lap(v) + 2 s grad(phi).grad(v)
///   - (s dt(phi) - s lap(phi) + s^2 |grad phi|^2) v,
/// with the phi derivatives taken from the analytic identities
/// dt(phi) = -2 lambda beta (t - t0) phi,
/// lap(phi) = lambda phi lap d + lambda^2 phi |grad d|^2.
pub fn conjugated_operator<T: Scalar>(
    torus: &Torus<T>,
    v: &SpaceTimeField<T>,
    params: &CarlemanParams<T>,
) -> Result<SpaceTimeField<T>> {
    params.validate()?;
    torus.grid().same_as(v.grid())?;
    let s = params.s_c;
    let lam = params.lambda_c;
    let two = cast::<T>(2.0);
    let dtv = time_derivative(v)?;
    let mut frames = Vec::with_capacity(v.len());
    for (i, frame) in v.frames().iter().enumerate() {
        let t = v.time(i);
        let phi = params.phi_at(t);
        let gphi = grad_phi(params, &phi);
        // dt(phi) and lap(phi) from the identities; all nodal.
        let dtphi = phi.scaled(-two * lam * params.beta * (t - params.t0));
        let mut lapphi = phi.mul_pointwise(&params.lap_d).scaled(lam);
        let mut gphi_sq = SpatialField::zeros(*v.grid());
        for g in &gphi {
            gphi_sq = gphi_sq.add(&g.mul_pointwise(g));
        }
        {
            // lambda^2 phi |grad d|^2 = |grad phi|^2 / phi.
            let mut gd_sq = SpatialField::zeros(*v.grid());
            for g in &params.grad_d {
                gd_sq = gd_sq.add(&g.mul_pointwise(g));
            }
            lapphi.axpy(lam * lam, &phi.mul_pointwise(&gd_sq));
        }

        let mut out = dtv.frame(i).clone();
        out.axpy(-T::one(), &torus.laplacian(frame));
        for (g, dv) in gphi.iter().zip(torus.gradient(frame)) {
            out.axpy(two * s, &g.mul_pointwise(&dv));
        }
        let mut pot = dtphi.scaled(s);
        pot.axpy(-s, &lapphi);
        pot.axpy(s * s, &gphi_sq);
        out.axpy(-T::one(), &pot.mul_pointwise(frame));
        frames.push(out);
    }
    SpaceTimeField::new(*v.grid(), v.t_start(), v.dt(), frames)
}

/// Boundary magnitude entering the weighted inequalities: H1(I) of the value
/// and normal-derivative traces on the observed faces, plus H1(Omega) of the
/// two endpoint frames.
fn boundary_magnitude_sq<T: Scalar>(
    torus: &Torus<T>,
    v: &SpaceTimeField<T>,
    faces: &[FaceId],
) -> Result<T> {
    let grid = v.grid();
    let mut total = T::zero();
    for &face in faces {
        let measure = grid.face_measure(face)?;
        let vals: Vec<_> = v
            .frames()
            .iter()
            .map(|f| f.boundary_trace(face))
            .collect::<Result<_>>()?;
        let ders: Vec<_> = v
            .frames()
            .iter()
            .map(|f| f.normal_derivative(face))
            .collect::<Result<_>>()?;
        total += crate::field::trace_series_h1_sq(&vals, v.dt(), measure);
        total += crate::field::trace_series_h1_sq(&ders, v.dt(), measure);
    }
    let vol = grid.cell_volume();
    for frame in [v.frame(0), v.frame(v.len() - 1)] {
        let l2 = frame.norm_l2();
        total += l2 * l2;
        for g in torus.gradient(frame) {
            let mut sq = T::zero();
            for &x in g.data() {
                sq += x * x;
            }
            total += sq * vol;
        }
    }
    Ok(total)
}

/// Decay rate of the boundary factor exp(-c s): fitted so that it matches
/// the weight's own pointwise drop between the center time and the window
/// ends, c = 2 min_x [phi(x, t0) - max of phi(x, ends)].
pub fn fitted_boundary_rate<T: Scalar>(
    params: &CarlemanParams<T>,
    t_start: T,
    t_end: T,
) -> T {
    let center = params.phi_at(params.t0);
    let lo = params.phi_at(t_start);
    let hi = params.phi_at(t_end);
    let mut min_drop = T::infinity();
    for i in 0..center.data().len() {
        let drop = center.data()[i] - lo.data()[i].max(hi.data()[i]);
        if drop < min_drop {
            min_drop = drop;
        }
    }
    cast::<T>(2.0) * min_drop
}

/// One measured inequality instance. `ratio` is `None` when both sides sit
/// below the degeneracy floor.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RatioSample {
    pub lhs: f64,
    pub rhs_operator: f64,
    pub rhs_boundary: f64,
    pub c_fit: f64,
    pub ratio: Option<f64>,
}

fn ratio_of<T: Scalar>(lhs: T, rhs: T) -> Option<f64> {
    let floor = cast::<T>(1e-14);
    if lhs < floor && rhs < floor {
        None
    } else {
        Some(to_f64(lhs / rhs))
    }
}

/// Weighted space-time quadrature of the unconjugated inequality:
/// lhs = int (1/s (|dt v|^2 + |lap v|^2) + s |grad v|^2
///            + s^3 |grad phi|^2 v^2) w,
/// rhs = int |conjugated(v)|^2 w + exp(-c_fit s) B(v),
/// everything carried at the common rescale exp(-2 s max phi), which leaves
/// the ratio exact.
pub fn carleman_ratio<T: Scalar>(
    torus: &Torus<T>,
    v: &SpaceTimeField<T>,
    params: &CarlemanParams<T>,
) -> Result<RatioSample> {
    params.validate()?;
    let s = params.s_c;
    if !(s > T::zero()) {
        return Err(CoreError::InvalidParameter(
            "carleman ratio needs s_c > 0 (1/s terms)".into(),
        ));
    }
    let ctx = weight_context(params, v);
    let dtv = time_derivative(v)?;
    let vol = v.grid().cell_volume();
    let weights = v.time_weights();

    let mut lhs = T::zero();
    let mut rhs_op = T::zero();
    let conj = conjugated_operator(torus, v, params)?;
    for i in 0..v.len() {
        let frame = v.frame(i);
        let wt = weights[i] * vol;
        let lap = torus.laplacian(frame);
        let grad = torus.gradient(frame);
        let gphi = grad_phi(params, &ctx.phi[i]);
        let sw = ctx.scaled_w[i].data();
        let mut frame_sum = T::zero();
        for j in 0..frame.data().len() {
            let dt2 = dtv.frame(i).data()[j] * dtv.frame(i).data()[j];
            let lap2 = lap.data()[j] * lap.data()[j];
            let grad2 = grad
                .iter()
                .map(|g| g.data()[j] * g.data()[j])
                .fold(T::zero(), |a, b| a + b);
            let gphi2 = gphi
                .iter()
                .map(|g| g.data()[j] * g.data()[j])
                .fold(T::zero(), |a, b| a + b);
            let vj = frame.data()[j];
            frame_sum += ((dt2 + lap2) / s + s * grad2 + s * s * s * gphi2 * vj * vj) * sw[j];
        }
        lhs += wt * frame_sum;
        let cf = conj.frame(i).data();
        let mut op_sum = T::zero();
        for j in 0..cf.len() {
            op_sum += cf[j] * cf[j] * sw[j];
        }
        rhs_op += wt * op_sum;
    }

    let c_fit = fitted_boundary_rate(params, v.t_start(), v.time(v.len() - 1));
    let b_sq = boundary_magnitude_sq(torus, v, &params.gamma)?;
    // exp(-c s) B, brought to the same rescale as the weighted integrals.
    let scale = (-(c_fit * s) - ctx.log_scale).exp();
    let rhs_boundary = b_sq * scale;

    let rhs = rhs_op + rhs_boundary;
    Ok(RatioSample {
        lhs: to_f64(lhs),
        rhs_operator: to_f64(rhs_op),
        rhs_boundary: to_f64(rhs_boundary),
        c_fit: to_f64(c_fit),
        ratio: ratio_of(lhs, rhs),
    })
}

/// Measured perturbed inequality on solver outputs. The left side is the
/// weighted energy of z; the right side carries the source term of the
/// differentiated equation plus the boundary magnitude; the absorption
/// entries record how much of the left side the coefficient perturbations
/// (the parts that vanish in the linear problem) could consume.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerturbedSample {
    pub lhs: f64,
    pub rhs_source: f64,
    pub rhs_boundary: f64,
    pub absorption: f64,
    /// absorption / lhs; grows with the solution amplitude and must stay
    /// well below 1 for the inequality to close.
    pub absorption_fraction: Option<f64>,
    pub c_fit: f64,
    pub ratio: Option<f64>,
}

/// Evaluate the perturbed inequality with z = dt(u) from the solver:
/// lhs = int (1/s (|dt z|^2 + |lap z|^2) + s |grad z|^2 + s^3 z^2) w,
/// rhs = int |(dt R) f + alpha . (z grad u)|^2 w + exp(-c_fit s) B(z).
pub fn perturbed_ratio<T: Scalar>(
    torus: &Torus<T>,
    z: &SpaceTimeField<T>,
    u: &SpaceTimeField<T>,
    spec: &ProblemSpec<T>,
    params: &CarlemanParams<T>,
) -> Result<PerturbedSample> {
    params.validate()?;
    let s = params.s_c;
    if !(s > T::zero()) {
        return Err(CoreError::InvalidParameter(
            "perturbed ratio needs s_c > 0 (1/s terms)".into(),
        ));
    }
    if z.len() != u.len() {
        return Err(CoreError::GridMismatch(
            "perturbed ratio: z and u must share the frame grid".into(),
        ));
    }
    let ctx = weight_context(params, z);
    let dtz = time_derivative(z)?;
    let vol = z.grid().cell_volume();
    let weights = z.time_weights();
    let two = cast::<T>(2.0);

    let mut lhs = T::zero();
    let mut rhs_src = T::zero();
    let mut absorption = T::zero();
    // (dt R) f: the source profile is affine in t, so its time derivative
    // is the slope field.
    let src = spec.source.slope.mul_pointwise(&spec.f_true);
    for i in 0..z.len() {
        let zf = z.frame(i);
        let uf = u.frame(i);
        let wt = weights[i] * vol;
        let lap = torus.laplacian(zf);
        let gz = torus.gradient(zf);
        let gu = torus.gradient(uf);
        let gphi = grad_phi(params, &ctx.phi[i]);
        let sw = ctx.scaled_w[i].data();

        let mut l_sum = T::zero();
        let mut s_sum = T::zero();
        let mut a_sum = T::zero();
        for j in 0..zf.data().len() {
            let zj = zf.data()[j];
            let dt2 = dtz.frame(i).data()[j] * dtz.frame(i).data()[j];
            let lap2 = lap.data()[j] * lap.data()[j];
            let gz2 = gz
                .iter()
                .map(|g| g.data()[j] * g.data()[j])
                .fold(T::zero(), |a, b| a + b);
            l_sum += ((dt2 + lap2) / s + s * gz2 + s * s * s * zj * zj) * sw[j];

            // K = alpha . (z grad u), nodal like the solver's own products.
            let k: T = spec
                .alpha
                .iter()
                .zip(&gu)
                .map(|(&ak, g)| ak * zj * g.data()[j])
                .fold(T::zero(), |a, b| a + b);
            let r = src.data()[j] + k;
            s_sum += r * r * sw[j];

            // Perturbation load: (b_hat - b).grad z, (c_tilde - c) z and the
            // s (b_hat - b).grad phi cross term, all proportional to u.
            let uj = uf.data()[j];
            let bp: T = spec
                .alpha
                .iter()
                .zip(&gz)
                .map(|(&ak, g)| ak * uj * g.data()[j])
                .fold(T::zero(), |a, b| a + b);
            let cp = two * spec.lambda * uj * zj;
            let bphi: T = spec
                .alpha
                .iter()
                .zip(&gphi)
                .map(|(&ak, g)| ak * uj * g.data()[j])
                .fold(T::zero(), |a, b| a + b);
            a_sum += (bp * bp + cp * cp + s * s * bphi * bphi * zj * zj) * sw[j];
        }
        lhs += wt * l_sum;
        rhs_src += wt * s_sum;
        absorption += wt * a_sum;
    }

    let c_fit = fitted_boundary_rate(params, z.t_start(), z.time(z.len() - 1));
    let b_sq = boundary_magnitude_sq(torus, z, &params.gamma)?;
    let scale = (-(c_fit * s) - ctx.log_scale).exp();
    let rhs_boundary = b_sq * scale;
    let rhs = rhs_src + rhs_boundary;

    let floor = cast::<T>(1e-14);
    Ok(PerturbedSample {
        lhs: to_f64(lhs),
        rhs_source: to_f64(rhs_src),
        rhs_boundary: to_f64(rhs_boundary),
        absorption: to_f64(absorption),
        absorption_fraction: if lhs > floor {
            Some(to_f64(absorption / lhs))
        } else {
            None
        },
        c_fit: to_f64(c_fit),
        ratio: ratio_of(lhs, rhs),
    })
}

/// C-infinity bump: exp(1 - 1/(1 - r^2)) inside |r| < 1, zero outside,
/// normalized to 1 at the center.
pub fn smooth_bump<T: Scalar>(r: T) -> T {
    let one = T::one();
    if r * r >= one {
        T::zero()
    } else {
        (one - one / (one - r * r)).exp()
    }
}

/// Test-function ensemble for ratio sweeps: interior x-bumps carrying a few
/// sine oscillations, times smooth t-bumps over the window interior. All
/// members vanish with all derivatives at the spatial boundary, so the
/// inequality's boundary term is exercised only by solver-output members the
/// caller appends.
pub fn test_ensemble<T: Scalar>(
    grid: Grid<T>,
    t_start: T,
    dt: T,
    frames: usize,
    count: usize,
    seed: u64,
) -> Vec<SpaceTimeField<T>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let window = dt * cast::<T>((frames - 1) as f64);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let k = rng.gen_range(1..=6) as f64;
        let center = rng.gen_range(0.35..0.65);
        let width = rng.gen_range(0.18..0.3);
        let t_center = rng.gen_range(0.4..0.6);
        let t_width = rng.gen_range(0.3..0.45);
        let phase = rng.gen_range(0.0..std::f64::consts::PI);
        let mut frames_v = Vec::with_capacity(frames);
        for i in 0..frames {
            let t = t_start + dt * cast::<T>(i as f64);
            let tau = (t - t_start) / window;
            let env = smooth_bump(
                (tau - cast::<T>(t_center)) / cast::<T>(t_width),
            );
            let profile = SpatialField::from_fn(grid, |x| {
                let r = (x[0] - cast::<T>(center)) / cast::<T>(width);
                let osc = (cast::<T>(k) * T::PI() * x[0] + cast::<T>(phase)).sin();
                smooth_bump(r) * osc * env
            });
            frames_v.push(profile);
        }
        out.push(
            SpaceTimeField::new(grid, t_start, dt, frames_v)
                .expect("ensemble frames share the grid"),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve, ProblemSpec};
    use crate::grid::Grid;

    fn line(n: usize) -> Grid<f64> {
        Grid::line(n, 1.0).unwrap()
    }

    fn bump_trajectory(grid: Grid<f64>, dt: f64) -> SpaceTimeField<f64> {
        let t_start = 0.4;
        let frames = ((0.2 / dt).round() as usize) + 1;
        let window = 0.2;
        let fr = (0..frames)
            .map(|i| {
                let t = t_start + dt * i as f64;
                let tau = (t - t_start) / window;
                let env = smooth_bump((tau - 0.5) / 0.45);
                SpatialField::from_fn(grid, |x| {
                    smooth_bump((x[0] - 0.5) / 0.3) * (3.0 * x[0]).sin() * env
                })
            })
            .collect();
        SpaceTimeField::new(grid, t_start, dt, fr).unwrap()
    }

    #[test]
    fn weight_peaks_at_the_center_time_and_dominates_one() {
        let grid = line(32);
        let params = CarlemanParams::linear_default(grid, 0.5);
        let pair = build_weights(&params, 0.4, 0.01, 21).unwrap();
        let center = pair.phi.frame_index_at(0.5).unwrap();
        for j in 0..grid.points(0) {
            for i in 0..pair.phi.len() {
                assert!(
                    pair.phi.frame(i).data()[j] <= pair.phi.frame(center).data()[j],
                    "phi not maximal at t0"
                );
            }
        }
        assert!(pair.w.frames().iter().all(|f| f.data().iter().all(|&x| x >= 1.0)));
    }

    #[test]
    fn center_slice_is_exactly_the_time_free_weight() {
        let grid = line(16);
        let params = CarlemanParams::linear_default(grid, 0.5);
        let phi = params.phi_at(0.5);
        let expected = params.d.map(|x| (params.lambda_c * x).exp());
        assert_eq!(phi.data(), expected.data());
    }

    #[test]
    fn flat_d_gives_a_spatially_constant_weight() {
        let grid = line(16);
        let mut params = CarlemanParams::linear_default(grid, 0.5);
        params.d = SpatialField::zeros(grid);
        // d = 0 fails validation (d must generate a usable weight), but the
        // pointwise formula is still well defined.
        let phi = params.phi_at(0.47);
        let first = phi.data()[0];
        assert!(phi.data().iter().all(|&x| x == first));
        let expected = (params.lambda_c * (-params.beta * 0.03f64.powi(2))).exp();
        assert!((first - expected).abs() < 1e-14);
    }

    #[test]
    fn weight_identities_match_finite_differences() {
        let grid = line(64);
        let params = CarlemanParams::linear_default(grid, 0.5);
        // dt(phi) = -2 lambda beta (t - t0) phi against a centered quotient.
        let dt = 1e-3;
        let t = 0.46;
        let phi = params.phi_at(t);
        let fd = params
            .phi_at(t + dt)
            .sub(&params.phi_at(t - dt))
            .scaled(0.5 / dt);
        let exact = phi.scaled(-2.0 * params.lambda_c * params.beta * (t - params.t0));
        let err = fd.sub(&exact).norm_inf() / exact.norm_inf();
        assert!(err < 1e-4, "dt identity error {err}");

        // grad(phi) = lambda phi grad d against a centered x-quotient
        // evaluated analytically at shifted nodes.
        let h = 1e-5;
        let shift = |delta: f64| {
            SpatialField::from_fn(grid, |x| {
                (params.lambda_c * ((x[0] + delta) - params.beta * (t - params.t0).powi(2))).exp()
            })
        };
        let fd_x = shift(h).sub(&shift(-h)).scaled(0.5 / h);
        let exact_x = grad_phi(&params, &phi);
        let err_x = fd_x.sub(&exact_x[0]).norm_inf() / exact_x[0].norm_inf();
        assert!(err_x < 1e-8, "grad identity error {err_x}");
    }

    #[test]
    fn oversized_exponent_is_refused() {
        let grid = line(16);
        let mut params = CarlemanParams::linear_default(grid, 0.5);
        params.s_c = 60.0;
        assert!(matches!(
            build_weights(&params, 0.4, 0.01, 21),
            Err(CoreError::WeightOverflow { .. })
        ));
    }

    #[test]
    fn zero_s_degenerates_to_the_heat_operator() {
        let grid = line(32);
        let torus = Torus::new(grid);
        let mut params = CarlemanParams::linear_default(grid, 0.5);
        params.s_c = 0.0;
        let v = bump_trajectory(grid, 1e-2);
        let conj = conjugated_operator(&torus, &v, &params).unwrap();
        let dtv = time_derivative(&v).unwrap();
        for i in 0..v.len() {
            let plain = dtv.frame(i).sub(&torus.laplacian(v.frame(i)));
            assert_eq!(conj.frame(i).data(), plain.data());
        }
    }

    #[test]
    fn conjugation_identity_converges_under_refinement() {
        let mut errors = Vec::new();
        for (n, dt) in [(32, 4e-3), (64, 2e-3)] {
            let grid = line(n);
            let torus = Torus::new(grid);
            let mut params = CarlemanParams::linear_default(grid, 0.5);
            params.s_c = 2.0;
            params.lambda_c = 1.0;
            let v = bump_trajectory(grid, dt);
            let s = params.s_c;
            // e^{s phi} L0 (e^{-s phi} v) assembled with the same discrete
            // derivative operators as the conjugated form.
            let damped = SpaceTimeField::new(
                grid,
                v.t_start(),
                v.dt(),
                (0..v.len())
                    .map(|i| {
                        let phi = params.phi_at(v.time(i));
                        v.frame(i).mul_pointwise(&phi.map(|p| (-s * p).exp()))
                    })
                    .collect(),
            )
            .unwrap();
            let dtg = time_derivative(&damped).unwrap();
            let conj = conjugated_operator(&torus, &v, &params).unwrap();
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for i in 0..v.len() {
                let phi = params.phi_at(v.time(i));
                let lift = phi.map(|p| (s * p).exp());
                let left = dtg
                    .frame(i)
                    .sub(&torus.laplacian(damped.frame(i)))
                    .mul_pointwise(&lift);
                let diff = left.sub(conj.frame(i)).norm_l2();
                num += diff * diff;
                let scale = conj.frame(i).norm_l2();
                den += scale * scale;
            }
            errors.push((num / den).sqrt());
        }
        let order = (errors[0] / errors[1]).log2();
        assert!(
            order >= 0.9,
            "conjugation identity order {order}, errors {errors:?}"
        );
    }

    #[test]
    fn ratio_is_exactly_scale_invariant_and_skips_zero() {
        let grid = line(32);
        let torus = Torus::new(grid);
        let params = CarlemanParams::linear_default(grid, 0.5);
        let v = bump_trajectory(grid, 1e-2);
        let r1 = carleman_ratio(&torus, &v, &params).unwrap();
        let doubled = v.map_frames(|f| f.scaled(2.0));
        let r2 = carleman_ratio(&torus, &doubled, &params).unwrap();
        assert_eq!(r1.ratio, r2.ratio);
        assert!(r1.ratio.unwrap().is_finite());

        let zero = v.map_frames(|f| f.scaled(0.0));
        let rz = carleman_ratio(&torus, &zero, &params).unwrap();
        assert!(rz.ratio.is_none());
    }

    #[test]
    fn ratio_survives_large_parameters_without_overflow() {
        let grid = line(32);
        let torus = Torus::new(grid);
        let mut params = CarlemanParams::linear_default(grid, 0.5);
        params.s_c = 64.0;
        // Raw weights overflow here; the rescaled quadrature must not.
        assert!(build_weights(&params, 0.4, 1e-2, 21).is_err());
        let v = bump_trajectory(grid, 1e-2);
        let r = carleman_ratio(&torus, &v, &params).unwrap();
        assert!(r.ratio.unwrap().is_finite());
    }

    #[test]
    fn linear_problem_has_no_absorption_load() {
        let grid = line(32);
        let spec = ProblemSpec::defaults(grid).linearized();
        let u = solve(&spec, &spec.f_true, 1e-3).unwrap();
        let z = time_derivative(&u).unwrap();
        let torus = Torus::new(grid);
        let mut params = CarlemanParams::linear_default(grid, spec.t0);
        params.beta = 50.0;
        let sample = perturbed_ratio(&torus, &z, &u, &spec, &params).unwrap();
        assert_eq!(sample.absorption, 0.0);
        assert_eq!(sample.absorption_fraction, Some(0.0));
        assert!(sample.ratio.unwrap().is_finite());
    }

    #[test]
    fn absorption_load_grows_with_the_amplitude() {
        let grid = line(32);
        let torus = Torus::new(grid);
        let mut fractions = Vec::new();
        for eps in [0.01, 0.2] {
            let spec = ProblemSpec::with_amplitude(grid, eps);
            let u = solve(&spec, &spec.f_true, 1e-3).unwrap();
            let z = time_derivative(&u).unwrap();
            let mut params = CarlemanParams::linear_default(grid, spec.t0);
            params.beta = 50.0;
            let sample = perturbed_ratio(&torus, &z, &u, &spec, &params).unwrap();
            fractions.push(sample.absorption_fraction.unwrap());
        }
        assert!(
            fractions[1] > fractions[0],
            "absorption did not grow: {fractions:?}"
        );
    }

    #[test]
    fn ensemble_members_are_interior_supported() {
        let grid = line(64);
        let members = test_ensemble(grid, 0.4, 1e-2, 21, 5, 7);
        assert_eq!(members.len(), 5);
        for v in &members {
            assert!(v.frames().iter().any(|f| f.norm_inf() > 0.0));
            for f in v.frames() {
                // Support margin: the bump construction vanishes near x = 0, 1.
                assert_eq!(f.data()[0], 0.0);
                assert_eq!(f.data()[grid.points(0) - 1], 0.0);
            }
        }
    }
}
