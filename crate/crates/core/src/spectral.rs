//! Odd (sine) extension of Dirichlet fields to a torus and the spectral
//! calculus built on it.
//!
//! A grid with `N` interior nodes per axis embeds into a periodic array of
//! `M = 2 (N + 1)` points per axis by odd reflection: the sine modes
//! `sin(k pi x / L)`, `k = 1..N`, become exact eigenvectors of every operator
//! defined here. Frequencies on the torus are `xi_m = m pi / L` for signed
//! bin index `m`, so the representable band per axis is `|xi| <= (N+1) pi / L`.
//!
//! All operators are linear maps on nodal fields:
//!
//! * `laplacian`, `derivative`, `gradient`: exact on sine modes;
//! * `heat_solve`: applies `(I - dt Lap)^{-1}`, self-adjoint in the nodal
//!   inner product;
//! * `gradient_adjoint`: the exact transpose of `derivative`, which works out
//!   to minus the spectral derivative of the even extension;
//! * `dealiased_product`: pointwise torus product with the 2/3-rule cut
//!   applied to both factors and to the result.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{CoreError, Result};
use crate::field::SpatialField;
use crate::grid::{Grid, MAX_DIM};
use crate::scalar::{cast, Scalar};

/// Real values on the padded torus (row-major, axis 1 contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField<T> {
    pub m: [usize; MAX_DIM],
    pub values: Vec<T>,
}

/// FFT context for one grid: plans, frequency tables, dealias mask.
pub struct Torus<T: Scalar> {
    grid: Grid<T>,
    m: [usize; MAX_DIM],
    fwd: [Option<Arc<dyn Fft<T>>>; MAX_DIM],
    inv: [Option<Arc<dyn Fft<T>>>; MAX_DIM],
    /// Signed frequency per axis and bin, `xi = m~ * pi / L`.
    xi: [Vec<T>; MAX_DIM],
    /// `|xi|^2` per flat torus bin.
    xi_sq: Vec<T>,
    /// 2/3-rule survivor mask per flat torus bin.
    dealias_keep: Vec<bool>,
}

impl<T: Scalar> std::fmt::Debug for Torus<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Torus")
            .field("grid", &self.grid)
            .field("m", &self.m)
            .finish()
    }
}

impl<T: Scalar> Torus<T> {
    pub fn new(grid: Grid<T>) -> Self {
        let mut planner = FftPlanner::<T>::new();
        let mut m = [1usize; MAX_DIM];
        let mut fwd: [Option<Arc<dyn Fft<T>>>; MAX_DIM] = [None, None];
        let mut inv: [Option<Arc<dyn Fft<T>>>; MAX_DIM] = [None, None];
        let mut xi: [Vec<T>; MAX_DIM] = [Vec::new(), Vec::new()];
        for axis in 0..grid.dim() {
            let mk = 2 * (grid.points(axis) + 1);
            m[axis] = mk;
            fwd[axis] = Some(planner.plan_fft_forward(mk));
            inv[axis] = Some(planner.plan_fft_inverse(mk));
            let fundamental = T::PI() / grid.length(axis);
            xi[axis] = (0..mk)
                .map(|i| {
                    let signed = if i <= mk / 2 {
                        i as f64
                    } else {
                        i as f64 - mk as f64
                    };
                    cast::<T>(signed) * fundamental
                })
                .collect();
        }
        if grid.dim() == 1 {
            xi[1] = vec![T::zero()];
        }
        let total = m[0] * m[1];
        let mut xi_sq = Vec::with_capacity(total);
        let mut dealias_keep = Vec::with_capacity(total);
        for i0 in 0..m[0] {
            for i1 in 0..m[1] {
                let a = xi[0][i0];
                let b = if grid.dim() > 1 { xi[1][i1] } else { T::zero() };
                xi_sq.push(a * a + b * b);
                let keep0 = signed_bin(i0, m[0]).unsigned_abs() <= m[0] / 3;
                let keep1 = grid.dim() == 1 || signed_bin(i1, m[1]).unsigned_abs() <= m[1] / 3;
                dealias_keep.push(keep0 && keep1);
            }
        }
        Torus {
            grid,
            m,
            fwd,
            inv,
            xi,
            xi_sq,
            dealias_keep,
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn torus_points(&self, axis: usize) -> usize {
        self.m[axis]
    }

    #[inline]
    pub fn torus_len(&self) -> usize {
        self.m[0] * self.m[1]
    }

    #[inline]
    pub fn xi(&self, axis: usize, bin: usize) -> T {
        self.xi[axis][bin]
    }

    /// `|xi|` at a flat torus bin.
    #[inline]
    pub fn xi_abs(&self, flat: usize) -> T {
        self.xi_sq[flat].sqrt()
    }

    #[inline]
    pub fn xi_sq_table(&self) -> &[T] {
        &self.xi_sq
    }

    /// Largest representable `|xi|` (the spectrum corner in 2D).
    pub fn xi_max(&self) -> T {
        let mut s = T::zero();
        for axis in 0..self.grid.dim() {
            let nyq = self.xi[axis][self.m[axis] / 2];
            s = s + nyq * nyq;
        }
        s.sqrt()
    }

    // ---- embedding ----------------------------------------------------

    /// Odd extension to the torus; zero at the boundary planes.
    pub fn embed(&self, u: &SpatialField<T>) -> Result<PeriodicField<T>> {
        self.grid.same_as(u.grid())?;
        let mut values = vec![T::zero(); self.torus_len()];
        self.embed_into_real(u.data(), &mut values);
        Ok(PeriodicField { m: self.m, values })
    }

    /// Interior-node restriction; inverse of `embed` on its image.
    pub fn restrict(&self, p: &PeriodicField<T>) -> Result<SpatialField<T>> {
        if p.m != self.m {
            return Err(CoreError::GridMismatch(
                "periodic field padded sizes do not match the torus".into(),
            ));
        }
        let mut out = SpatialField::zeros(self.grid);
        self.restrict_from(&p.values, out.data_mut());
        Ok(out)
    }

    fn embed_into_real(&self, u: &[T], out: &mut [T]) {
        let (n0, n1) = (self.grid.points(0), self.grid.points(1));
        let (m0, m1) = (self.m[0], self.m[1]);
        debug_assert_eq!(out.len(), m0 * m1);
        for v in out.iter_mut() {
            *v = T::zero();
        }
        if self.grid.dim() == 1 {
            for i in 0..n0 {
                out[i + 1] = u[i];
                out[m0 - (i + 1)] = -u[i];
            }
        } else {
            for i in 0..n0 {
                for j in 0..n1 {
                    let v = u[i * n1 + j];
                    let (p0, q0) = (i + 1, m0 - (i + 1));
                    let (p1, q1) = (j + 1, m1 - (j + 1));
                    out[p0 * m1 + p1] = v;
                    out[q0 * m1 + p1] = -v;
                    out[p0 * m1 + q1] = -v;
                    out[q0 * m1 + q1] = v;
                }
            }
        }
    }

    fn restrict_from(&self, torus: &[T], out: &mut [T]) {
        let (n0, n1) = (self.grid.points(0), self.grid.points(1));
        let m1 = self.m[1];
        if self.grid.dim() == 1 {
            out[..n0].copy_from_slice(&torus[1..=n0]);
        } else {
            for i in 0..n0 {
                for j in 0..n1 {
                    out[i * n1 + j] = torus[(i + 1) * m1 + (j + 1)];
                }
            }
        }
    }

    /// Extension that is even along `even_axis` and odd along the others;
    /// this is what the gradient transpose acts on.
    fn embed_mixed_real(&self, u: &[T], even_axis: usize, out: &mut [T]) {
        let (n0, n1) = (self.grid.points(0), self.grid.points(1));
        let (m0, m1) = (self.m[0], self.m[1]);
        for v in out.iter_mut() {
            *v = T::zero();
        }
        if self.grid.dim() == 1 {
            for i in 0..n0 {
                out[i + 1] = u[i];
                out[m0 - (i + 1)] = u[i];
            }
        } else {
            let s0 = if even_axis == 0 { T::one() } else { -T::one() };
            let s1 = if even_axis == 1 { T::one() } else { -T::one() };
            for i in 0..n0 {
                for j in 0..n1 {
                    let v = u[i * n1 + j];
                    let (p0, q0) = (i + 1, m0 - (i + 1));
                    let (p1, q1) = (j + 1, m1 - (j + 1));
                    out[p0 * m1 + p1] = v;
                    out[q0 * m1 + p1] = s0 * v;
                    out[p0 * m1 + q1] = s1 * v;
                    out[q0 * m1 + q1] = s0 * s1 * v;
                }
            }
        }
    }

    // ---- transforms ----------------------------------------------------

    fn run_fft(&self, buf: &mut [Complex<T>], inverse: bool) {
        let plans = if inverse { &self.inv } else { &self.fwd };
        let (m0, m1) = (self.m[0], self.m[1]);
        if self.grid.dim() == 1 {
            let fft = plans[0].as_ref().unwrap();
            let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(buf, &mut scratch);
            return;
        }
        // Axis 1 (contiguous rows).
        let fft1 = plans[1].as_ref().unwrap();
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft1.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(m1) {
            fft1.process_with_scratch(row, &mut scratch);
        }
        // Axis 0 via transpose.
        let fft0 = plans[0].as_ref().unwrap();
        let mut scratch0 = vec![Complex::new(T::zero(), T::zero()); fft0.get_inplace_scratch_len()];
        let mut tr = vec![Complex::<T>::new(T::zero(), T::zero()); m0 * m1];
        for i in 0..m0 {
            for j in 0..m1 {
                tr[j * m0 + i] = buf[i * m1 + j];
            }
        }
        for col in tr.chunks_exact_mut(m0) {
            fft0.process_with_scratch(col, &mut scratch0);
        }
        for j in 0..m1 {
            for i in 0..m0 {
                buf[i * m1 + j] = tr[j * m0 + i];
            }
        }
    }

    /// Unnormalized spectrum of the odd extension of `u`.
    pub fn spectrum(&self, u: &SpatialField<T>) -> Vec<Complex<T>> {
        let mut real = vec![T::zero(); self.torus_len()];
        self.embed_into_real(u.data(), &mut real);
        self.spectrum_of_torus(&real)
    }

    fn norm_factor(&self) -> T {
        T::one() / cast::<T>(self.torus_len() as f64)
    }

    /// Inverse transform to torus values (real part, normalized).
    pub fn synthesize_torus(&self, spec: &[Complex<T>]) -> Vec<T> {
        let mut buf = spec.to_vec();
        self.run_fft(&mut buf, true);
        let s = self.norm_factor();
        buf.into_iter().map(|z| z.re * s).collect()
    }

    /// Inverse transform restricted to the interior nodes.
    pub fn synthesize_spatial(&self, spec: &[Complex<T>]) -> SpatialField<T> {
        let torus = self.synthesize_torus(spec);
        let mut out = SpatialField::zeros(self.grid);
        self.restrict_from(&torus, out.data_mut());
        out
    }

    /// Two inverse transforms for the price of one: `spec_a` and `spec_b`
    /// must both synthesize real fields.
    pub fn synthesize_torus_pair(&self, spec_a: &[Complex<T>], spec_b: &[Complex<T>]) -> (Vec<T>, Vec<T>) {
        let mut buf: Vec<Complex<T>> = spec_a
            .iter()
            .zip(spec_b)
            .map(|(&a, &b)| a + Complex::new(T::zero(), T::one()) * b)
            .collect();
        self.run_fft(&mut buf, true);
        let s = self.norm_factor();
        let mut va = Vec::with_capacity(buf.len());
        let mut vb = Vec::with_capacity(buf.len());
        for z in buf {
            va.push(z.re * s);
            vb.push(z.im * s);
        }
        (va, vb)
    }

    /// Forward transform of raw torus values.
    pub fn spectrum_of_torus(&self, vals: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = vals
            .iter()
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        self.run_fft(&mut buf, false);
        buf
    }

    // ---- multipliers ----------------------------------------------------

    /// Table of a radial multiplier `f(|xi|)` over the flat torus bins.
    pub fn radial_table(&self, f: impl Fn(T) -> T) -> Vec<T> {
        self.xi_sq.iter().map(|&s| f(s.sqrt())).collect()
    }

    pub fn scale_by_table(&self, spec: &mut [Complex<T>], table: &[T]) {
        debug_assert_eq!(spec.len(), table.len());
        for (z, &t) in spec.iter_mut().zip(table) {
            *z = *z * t;
        }
    }

    /// Apply a real radial Fourier multiplier to a Dirichlet field.
    pub fn apply_radial(&self, u: &SpatialField<T>, f: impl Fn(T) -> T) -> SpatialField<T> {
        let mut spec = self.spectrum(u);
        for (z, &s) in spec.iter_mut().zip(&self.xi_sq) {
            *z = *z * f(s.sqrt());
        }
        self.synthesize_spatial(&spec)
    }

    /// Zero every bin outside the 2/3 band (in place).
    pub fn dealias_spectrum(&self, spec: &mut [Complex<T>]) {
        for (z, &keep) in spec.iter_mut().zip(&self.dealias_keep) {
            if !keep {
                *z = Complex::new(T::zero(), T::zero());
            }
        }
    }

    // ---- differential operators ----------------------------------------

    /// Spectral Laplacian; exact on sine modes.
    pub fn laplacian(&self, u: &SpatialField<T>) -> SpatialField<T> {
        let mut spec = self.spectrum(u);
        for (z, &s) in spec.iter_mut().zip(&self.xi_sq) {
            *z = *z * (-s);
        }
        self.synthesize_spatial(&spec)
    }

    /// Spectral derivative along one axis. The Nyquist bin derivative is set
    /// to zero, which keeps real fields real; odd extensions carry no Nyquist
    /// content anyway.
    pub fn derivative(&self, u: &SpatialField<T>, axis: usize) -> SpatialField<T> {
        let spec = self.spectrum(u);
        let spec = self.derivative_spectrum(&spec, axis);
        self.synthesize_spatial(&spec)
    }

    /// Derivative multiplier `i xi_axis` applied to a spectrum.
    pub fn derivative_spectrum(&self, spec: &[Complex<T>], axis: usize) -> Vec<Complex<T>> {
        let (m0, m1) = (self.m[0], self.m[1]);
        let mut out = vec![Complex::new(T::zero(), T::zero()); spec.len()];
        for i0 in 0..m0 {
            for i1 in 0..m1 {
                let flat = i0 * m1 + i1;
                let bin = if axis == 0 { i0 } else { i1 };
                let mk = self.m[axis];
                let xi = if bin == mk / 2 {
                    T::zero()
                } else {
                    self.xi[axis][bin]
                };
                let z = spec[flat];
                out[flat] = Complex::new(-z.im * xi, z.re * xi);
            }
        }
        out
    }

    pub fn gradient(&self, u: &SpatialField<T>) -> Vec<SpatialField<T>> {
        let spec = self.spectrum(u);
        (0..self.grid.dim())
            .map(|axis| {
                let d = self.derivative_spectrum(&spec, axis);
                self.synthesize_spatial(&d)
            })
            .collect()
    }

    /// Mixed or repeated second derivative, `d^2 / dx_a dx_b`.
    pub fn second_derivative(&self, u: &SpatialField<T>, a: usize, b: usize) -> SpatialField<T> {
        let spec = self.spectrum(u);
        let spec = self.derivative_spectrum(&spec, a);
        let spec = self.derivative_spectrum(&spec, b);
        self.synthesize_spatial(&spec)
    }

    /// Exact transpose of `derivative` in the nodal inner product:
    /// minus the spectral derivative of the mixed (even-along-axis) extension.
    pub fn gradient_adjoint(&self, v: &SpatialField<T>, axis: usize) -> SpatialField<T> {
        let mut real = vec![T::zero(); self.torus_len()];
        self.embed_mixed_real(v.data(), axis, &mut real);
        let spec = self.spectrum_of_torus(&real);
        let spec = self.derivative_spectrum(&spec, axis);
        let mut out = self.synthesize_spatial(&spec);
        out.scale(-T::one());
        out
    }

    /// `(I - dt Lap)^{-1}`; unconditionally stable diffusion step,
    /// self-adjoint in the nodal inner product.
    pub fn heat_solve(&self, u: &SpatialField<T>, dt: T) -> SpatialField<T> {
        let mut spec = self.spectrum(u);
        for (z, &s) in spec.iter_mut().zip(&self.xi_sq) {
            *z = *z / (T::one() + dt * s);
        }
        self.synthesize_spatial(&spec)
    }

    // ---- products -------------------------------------------------------

    /// Pointwise torus product with the 2/3-rule cut on both factors and on
    /// the result. Bilinear; exact for factors band-limited below the cut.
    pub fn dealiased_product(&self, a: &SpatialField<T>, b: &SpatialField<T>) -> SpatialField<T> {
        let mut sa = self.spectrum(a);
        let mut sb = self.spectrum(b);
        self.dealias_spectrum(&mut sa);
        self.dealias_spectrum(&mut sb);
        let (ta, tb) = self.synthesize_torus_pair(&sa, &sb);
        let prod: Vec<T> = ta.iter().zip(&tb).map(|(&x, &y)| x * y).collect();
        let mut sp = self.spectrum_of_torus(&prod);
        self.dealias_spectrum(&mut sp);
        self.synthesize_spatial(&sp)
    }

    /// Dealiased torus values of a field (used to batch several products
    /// against precomputed factors).
    pub fn dealiased_torus_values(&self, u: &SpatialField<T>) -> Vec<T> {
        let mut s = self.spectrum(u);
        self.dealias_spectrum(&mut s);
        self.synthesize_torus(&s)
    }

    /// Product of two dealiased torus-value arrays, cut and restricted.
    pub fn product_of_torus_values(&self, ta: &[T], tb: &[T]) -> SpatialField<T> {
        let prod: Vec<T> = ta.iter().zip(tb).map(|(&x, &y)| x * y).collect();
        self.torus_values_to_field(&prod)
    }

    /// Cut-and-restrict of raw torus values (the tail of every dealiased
    /// product; exposed so batched products can accumulate nodally first).
    pub fn torus_values_to_field(&self, vals: &[T]) -> SpatialField<T> {
        let mut sp = self.spectrum_of_torus(vals);
        self.dealias_spectrum(&mut sp);
        self.synthesize_spatial(&sp)
    }
}

#[inline]
fn signed_bin(i: usize, m: usize) -> isize {
    if i <= m / 2 {
        i as isize
    } else {
        i as isize - m as isize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn torus_1d(n: usize) -> Torus<f64> {
        Torus::new(Grid::line(n, 1.0).unwrap())
    }

    fn random_field(grid: Grid<f64>, seed: u64) -> SpatialField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = SpatialField::zeros(grid);
        for x in u.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        u
    }

    #[test]
    fn embed_restrict_round_trips_exactly() {
        let t = torus_1d(64);
        let u = random_field(*t.grid(), 1);
        let p = t.embed(&u).unwrap();
        // Odd symmetry with zeros at both boundary planes.
        assert_eq!(p.values[0], 0.0);
        assert_eq!(p.values[65], 0.0);
        assert_eq!(p.values[1], -p.values[129]);
        let back = t.restrict(&p).unwrap();
        assert_eq!(back.data(), u.data());
    }

    #[test]
    fn laplacian_is_exact_on_sine_modes() {
        let t = torus_1d(64);
        for k in [1usize, 3, 17] {
            let u = SpatialField::from_fn(*t.grid(), |x| (k as f64 * PI * x[0]).sin());
            let lap = t.laplacian(&u);
            let lam = -(k as f64 * PI).powi(2);
            for (a, b) in lap.data().iter().zip(u.data()) {
                assert!((a - lam * b).abs() < 1e-9 * (k as f64 * PI).powi(2));
            }
        }
    }

    #[test]
    fn gradient_matches_cosine_on_sine_modes() {
        let t = torus_1d(64);
        let k = 5.0;
        let u = SpatialField::from_fn(*t.grid(), |x| (k * PI * x[0]).sin());
        let du = t.derivative(&u, 0);
        let exact = SpatialField::from_fn(*t.grid(), |x| k * PI * (k * PI * x[0]).cos());
        let err = du.sub(&exact).norm_inf();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn heat_solve_inverts_the_implicit_operator() {
        let t = torus_1d(32);
        let dt = 1e-2;
        let u = random_field(*t.grid(), 7);
        let v = t.heat_solve(&u, dt);
        // (I - dt Lap) v == u
        let residual = v.sub(&t.laplacian(&v).scaled(dt)).sub(&u);
        assert!(residual.norm_inf() < 1e-11);
    }

    #[test]
    fn second_derivative_agrees_with_double_first() {
        let t = torus_1d(32);
        let u = SpatialField::from_fn(*t.grid(), |x| (3.0 * PI * x[0]).sin());
        let a = t.second_derivative(&u, 0, 0);
        let b = t.laplacian(&u);
        assert!(a.sub(&b).norm_inf() < 1e-9);
    }

    #[test]
    fn gradient_adjoint_identity() {
        for grid in [Grid::line(64, 1.0).unwrap(), Grid::square(16, 2.0).unwrap()] {
            let t = Torus::new(grid);
            for axis in 0..grid.dim() {
                let u = random_field(grid, 11 + axis as u64);
                let v = random_field(grid, 23 + axis as u64);
                let lhs: f64 = t
                    .derivative(&u, axis)
                    .data()
                    .iter()
                    .zip(v.data())
                    .map(|(a, b)| a * b)
                    .sum();
                let rhs: f64 = u
                    .data()
                    .iter()
                    .zip(t.gradient_adjoint(&v, axis).data())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(
                    (lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()),
                    "axis {axis}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn heat_solve_is_self_adjoint() {
        let t = torus_1d(32);
        let u = random_field(*t.grid(), 3);
        let v = random_field(*t.grid(), 4);
        let a: f64 = t
            .heat_solve(&u, 0.05)
            .data()
            .iter()
            .zip(v.data())
            .map(|(x, y)| x * y)
            .sum();
        let b: f64 = u
            .data()
            .iter()
            .zip(t.heat_solve(&v, 0.05).data())
            .map(|(x, y)| x * y)
            .sum();
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn dealiased_product_exact_for_low_band_factors() {
        let t = torus_1d(64);
        // sin(2 pi x) * sin(3 pi x) has modes 1 and 5, far below the cut.
        let a = SpatialField::from_fn(*t.grid(), |x| (2.0 * PI * x[0]).sin());
        let b = SpatialField::from_fn(*t.grid(), |x| (3.0 * PI * x[0]).sin());
        let p = t.dealiased_product(&a, &b);
        let exact = a.mul_pointwise(&b);
        assert!(p.sub(&exact).norm_inf() < 1e-12);
    }

    #[test]
    fn dealiased_product_is_bilinear_in_powers_of_two() {
        let t = torus_1d(32);
        let a = random_field(*t.grid(), 5);
        let b = random_field(*t.grid(), 6);
        let p1 = t.dealiased_product(&a, &b);
        let p2 = t.dealiased_product(&a.scaled(2.0), &b.scaled(2.0));
        for (x, y) in p1.data().iter().zip(p2.data()) {
            assert_eq!(4.0 * x, *y);
        }
    }

    #[test]
    fn two_dimensional_laplacian_on_product_mode() {
        let grid = Grid::square(32, 1.0).unwrap();
        let t = Torus::new(grid);
        let u = SpatialField::from_fn(grid, |x| (2.0 * PI * x[0]).sin() * (PI * x[1]).sin());
        let lap = t.laplacian(&u);
        let lam = -(4.0 + 1.0) * PI * PI;
        let err = lap.sub(&u.scaled(lam)).norm_inf();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn synthesize_pair_matches_single_synthesis() {
        let t = torus_1d(32);
        let u = random_field(*t.grid(), 8);
        let v = random_field(*t.grid(), 9);
        let su = t.spectrum(&u);
        let sv = t.spectrum(&v);
        let (tu, tv) = t.synthesize_torus_pair(&su, &sv);
        let ru = t.synthesize_torus(&su);
        let rv = t.synthesize_torus(&sv);
        for (a, b) in tu.iter().zip(&ru) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tv.iter().zip(&rv) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
