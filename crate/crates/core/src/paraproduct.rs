//! Bony product splitting and the paradifferential form of the quadratic
//! nonlinearity `lambda u^2 + alpha . (u grad u)`.
//!
//! Every product here is the dealiased torus product, which is bilinear to
//! machine precision. That makes the three-way splitting
//!
//! ```text
//!   u v = T_u v + T_v u + R(u, v)
//!   T_u v  = sum_q  (S_{q-1} u) (Delta_q v)
//!   R(u,v) = sum_{|q - q'| <= 1} (Delta_q u) (Delta_{q'} v)
//! ```
//!
//! an identity up to roundoff, not an approximation: the pair sums on the
//! right enumerate exactly the block pairs of the product on the left.
//!
//! All splittings share one batched kernel: both fields are decomposed once,
//! block values are synthesized on the torus (two per inverse transform),
//! the partial accumulations happen nodally, and a single cut-and-restrict
//! finishes each output field.

use crate::dyadic::DyadicPartition;
use crate::error::{CoreError, Result};
use crate::field::{SpaceTimeField, SpatialField};
use crate::scalar::{cast, Scalar};
use crate::spectral::Torus;

/// The three pieces of one product `u v`.
#[derive(Debug, Clone)]
pub struct BonySplit<T> {
    /// `T_u v`: low frequencies of the first factor times blocks of the second.
    pub low_high: SpatialField<T>,
    /// `T_v u`.
    pub high_low: SpatialField<T>,
    /// Diagonal interaction `R(u, v)`.
    pub remainder: SpatialField<T>,
}

impl<T: Scalar> BonySplit<T> {
    /// Reassembled product; equals the dealiased product of the factors.
    pub fn sum(&self) -> SpatialField<T> {
        let mut s = self.low_high.clone();
        s.axpy(T::one(), &self.high_low);
        s.axpy(T::one(), &self.remainder);
        s
    }
}

fn check_grids<T: Scalar>(torus: &Torus<T>, fields: &[&SpatialField<T>]) -> Result<()> {
    for f in fields {
        torus.grid().same_as(f.grid())?;
    }
    Ok(())
}

/// Dealiased nodal torus values of every block of a field, two blocks per
/// inverse transform.
fn block_values<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    u: &SpatialField<T>,
) -> Vec<Vec<T>> {
    let mut parent = torus.spectrum(u);
    torus.dealias_spectrum(&mut parent);
    let count = (part.q_max() + 2) as usize;
    let mut specs = Vec::with_capacity(count);
    for q in part.block_range() {
        let mut s = parent.clone();
        torus.scale_by_table(&mut s, part.table(q));
        specs.push(s);
    }
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while i + 1 < count {
        let (a, b) = torus.synthesize_torus_pair(&specs[i], &specs[i + 1]);
        out.push(a);
        out.push(b);
        i += 2;
    }
    if i < count {
        out.push(torus.synthesize_torus(&specs[i]));
    }
    out
}

#[inline]
fn acc_product<T: Scalar>(acc: &mut [T], a: &[T], b: &[T]) {
    for ((s, &x), &y) in acc.iter_mut().zip(a).zip(b) {
        *s += x * y;
    }
}

#[inline]
fn acc_into<T: Scalar>(acc: &mut [T], a: &[T]) {
    for (s, &x) in acc.iter_mut().zip(a) {
        *s += x;
    }
}

/// Low-frequency paraproduct `T_u v`.
pub fn paraproduct<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    u: &SpatialField<T>,
    v: &SpatialField<T>,
) -> Result<SpatialField<T>> {
    check_grids(torus, &[u, v])?;
    let bu = block_values(torus, part, u);
    let bv = block_values(torus, part, v);
    Ok(torus.torus_values_to_field(&low_high_values(torus, part, &bu, &bv)))
}

fn low_high_values<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    bu: &[Vec<T>],
    bv: &[Vec<T>],
) -> Vec<T> {
    let len = torus.torus_len();
    let mut low = vec![T::zero(); len];
    let mut acc = vec![T::zero(); len];
    // At stage q the running sum holds S_{q-1} u = blocks -1 ..= q-2.
    for q in 1..=part.q_max() {
        acc_into(&mut low, &bu[(q - 1) as usize]); // block q - 2
        acc_product(&mut acc, &low, &bv[(q + 1) as usize]);
    }
    acc
}

fn remainder_values<T: Scalar>(torus: &Torus<T>, bu: &[Vec<T>], bv: &[Vec<T>]) -> Vec<T> {
    let len = torus.torus_len();
    let mut acc = vec![T::zero(); len];
    // Diagonal first, then off-diagonal pairs added as commuted couples so
    // that swapping the factors reproduces the identical rounding sequence.
    for k in 0..bu.len() {
        acc_product(&mut acc, &bu[k], &bv[k]);
    }
    for k in 0..bu.len().saturating_sub(1) {
        for ((s, (&x0, &y1)), (&x1, &y0)) in acc
            .iter_mut()
            .zip(bu[k].iter().zip(&bv[k + 1]))
            .zip(bu[k + 1].iter().zip(&bv[k]))
        {
            *s += x0 * y1 + x1 * y0;
        }
    }
    acc
}

/// Diagonal remainder `R(u, v)`; symmetric in its arguments bit for bit.
pub fn bony_remainder<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    u: &SpatialField<T>,
    v: &SpatialField<T>,
) -> Result<SpatialField<T>> {
    check_grids(torus, &[u, v])?;
    let bu = block_values(torus, part, u);
    let bv = block_values(torus, part, v);
    Ok(torus.torus_values_to_field(&remainder_values(torus, &bu, &bv)))
}

/// Full three-way splitting of the product `u v`.
pub fn bony_split<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    u: &SpatialField<T>,
    v: &SpatialField<T>,
) -> Result<BonySplit<T>> {
    check_grids(torus, &[u, v])?;
    let bu = block_values(torus, part, u);
    let bv = block_values(torus, part, v);
    Ok(BonySplit {
        low_high: torus.torus_values_to_field(&low_high_values(torus, part, &bu, &bv)),
        high_low: torus.torus_values_to_field(&low_high_values(torus, part, &bv, &bu)),
        remainder: torus.torus_values_to_field(&remainder_values(torus, &bu, &bv)),
    })
}

/// `[Delta_q, a] d_k u` for every axis `k`: frequency localization applied
/// to the product minus the product with the localized factor.
///
/// Multiplication by `a` is nodal here (not the torus product), so a
/// constant `a` commutes with the block multiplier to machine precision.
pub fn commutator<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    a: &SpatialField<T>,
    u: &SpatialField<T>,
    q: i32,
) -> Result<Vec<SpatialField<T>>> {
    check_grids(torus, &[a, u])?;
    torus
        .gradient(u)
        .iter()
        .map(|du| {
            let inside = part.block(torus, &a.mul_pointwise(du), q);
            let outside = a.mul_pointwise(&part.block(torus, du, q));
            Ok(inside.sub(&outside))
        })
        .collect()
}

/// Weighted commutator sum `sum_q 2^{q s} || [Delta_q, a] . grad u ||_{L2}`
/// divided by `||grad a||_{B^{n/2}} ||u||_{B^s}`; the measured constant of
/// the one-derivative gain.
pub fn commutator_constant<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    a: &SpatialField<T>,
    u: &SpatialField<T>,
    s: T,
) -> Result<T> {
    check_grids(torus, &[a, u])?;
    let two = cast::<T>(2.0);
    let mut weighted = T::zero();
    for q in part.block_range() {
        let comps = commutator(torus, part, a, u, q)?;
        let norm_sq: T = comps
            .iter()
            .map(|c| {
                let n = c.norm_l2();
                n * n
            })
            .sum();
        weighted += two.powf(s * cast::<T>(q as f64)) * norm_sq.sqrt();
    }
    let half_dim = cast::<T>(torus.grid().dim() as f64 / 2.0);
    let grad_a_norm: T = torus
        .gradient(a)
        .iter()
        .map(|da| part.besov_norm(torus, da, half_dim))
        .sum();
    let u_norm = part.besov_norm(torus, u, s);
    let denom = grad_a_norm * u_norm;
    if denom < cast::<T>(1e-300) {
        return Err(CoreError::Degenerate(
            "commutator constant: zero factor norms".into(),
        ));
    }
    Ok(weighted / denom)
}

/// Paradifferential form of the quadratic nonlinearity.
#[derive(Debug, Clone)]
pub struct Paralinearization<T> {
    /// Zeroth-order symbol `2 lambda u`.
    pub a_of_u: SpatialField<T>,
    /// First-order symbol `alpha_k u`, one component per axis.
    pub d_of_u: Vec<SpatialField<T>>,
    /// Everything quadratic-small: `lambda R(u,u) +
    /// sum_k alpha_k (T_{d_k u} u + R(u, d_k u))`.
    pub remainder: SpatialField<T>,
    /// `T_{2 lambda u} u`, kept so the splitting can be reassembled.
    pub para_zeroth: SpatialField<T>,
    /// `sum_k T_{alpha_k u} (d_k u)`.
    pub para_first: SpatialField<T>,
}

impl<T: Scalar> Paralinearization<T> {
    /// `para_zeroth + para_first + remainder`; equals the dealiased
    /// nonlinearity by bilinearity.
    pub fn total(&self) -> SpatialField<T> {
        let mut s = self.para_zeroth.clone();
        s.axpy(T::one(), &self.para_first);
        s.axpy(T::one(), &self.remainder);
        s
    }
}

/// Split `lambda u^2 + alpha . (u grad u)` into paraproducts acting on `u`
/// and `grad u` plus a remainder that scales quadratically in `u`.
pub fn paralinearize<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    u: &SpatialField<T>,
    lambda: T,
    alpha: &[T],
) -> Result<Paralinearization<T>> {
    check_grids(torus, &[u])?;
    let dim = torus.grid().dim();
    assert_eq!(alpha.len(), dim, "one transport weight per axis");
    let two = cast::<T>(2.0);

    let uu = bony_split(torus, part, u, u)?;
    let mut remainder = uu.remainder.scaled(lambda);
    let para_zeroth = uu.low_high.scaled(two * lambda);

    let mut para_first = SpatialField::zeros(*u.grid());
    for (k, &ak) in alpha.iter().enumerate() {
        let du = torus.derivative(u, k);
        // low_high = T_{du} u, high_low = T_u du, remainder = R(du, u).
        let split = bony_split(torus, part, &du, u)?;
        para_first.axpy(ak, &split.high_low);
        remainder.axpy(ak, &split.low_high);
        remainder.axpy(ak, &split.remainder);
    }

    Ok(Paralinearization {
        a_of_u: u.scaled(two * lambda),
        d_of_u: alpha.iter().map(|&ak| u.scaled(ak)).collect(),
        remainder,
        para_zeroth,
        para_first,
    })
}

/// The nonlinearity itself under the dealiased product:
/// `lambda P(u,u) + sum_k alpha_k P(u, d_k u)`.
pub fn nonlinearity<T: Scalar>(
    torus: &Torus<T>,
    u: &SpatialField<T>,
    lambda: T,
    alpha: &[T],
) -> SpatialField<T> {
    let mut out = torus.dealiased_product(u, u).scaled(lambda);
    for (k, &ak) in alpha.iter().enumerate() {
        let du = torus.derivative(u, k);
        out.axpy(ak, &torus.dealiased_product(u, &du));
    }
    out
}

/// Coefficients of the equation rewritten with the nonlinearity absorbed by
/// nodal multiplication: drift `b + alpha u`, potential `c + lambda u`.
/// This form has zero remainder by construction.
#[derive(Debug, Clone)]
pub struct ExactCoefficients<T> {
    pub b_hat: Vec<SpatialField<T>>,
    pub c_hat: SpatialField<T>,
}

pub fn exact_coefficients<T: Scalar>(
    u: &SpatialField<T>,
    b: &[SpatialField<T>],
    c: &SpatialField<T>,
    lambda: T,
    alpha: &[T],
) -> ExactCoefficients<T> {
    let b_hat = b
        .iter()
        .zip(alpha)
        .map(|(bk, &ak)| {
            let mut out = bk.clone();
            out.axpy(ak, u);
            out
        })
        .collect();
    let mut c_hat = c.clone();
    c_hat.axpy(lambda, u);
    ExactCoefficients { b_hat, c_hat }
}

/// Coefficients of the equation satisfied by a first variation around `u`
/// (and hence by the time derivative): same drift, potential `c + 2 lambda u`.
pub fn linearized_coefficients<T: Scalar>(
    u: &SpatialField<T>,
    b: &[SpatialField<T>],
    c: &SpatialField<T>,
    lambda: T,
    alpha: &[T],
) -> ExactCoefficients<T> {
    let mut coeffs = exact_coefficients(u, b, c, lambda, alpha);
    coeffs.c_hat.axpy(lambda, u);
    coeffs
}

/// One row of the quadratic-remainder scaling table.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RemainderScalingRow {
    pub eps: f64,
    /// `||remainder||_{L1(I; B^s)} / (eps ||u||_{L1(I; B^{s+2})})`;
    /// `None` when the denominator vanishes.
    pub ratio: Option<f64>,
}

/// Remainder-to-field ratio for one trajectory of known amplitude `eps`.
pub fn remainder_scaling_row<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    u: &SpaceTimeField<T>,
    eps: T,
    lambda: T,
    alpha: &[T],
    s: T,
) -> Result<RemainderScalingRow> {
    let two = cast::<T>(2.0);
    let mut rem_l1 = T::zero();
    let mut field_l1 = T::zero();
    let weights = u.time_weights();
    for (frame, &wt) in u.frames().iter().zip(&weights) {
        let norms = part.block_l2_norms(torus, frame);
        field_l1 += wt * crate::dyadic::besov_from_block_norms(&norms, s + two);
        let para = paralinearize(torus, part, frame, lambda, alpha)?;
        rem_l1 += wt * part.besov_norm(torus, &para.remainder, s);
    }
    let denom = eps * field_l1;
    let ratio = if denom > cast::<T>(1e-300) {
        Some(crate::scalar::to_f64(rem_l1 / denom))
    } else {
        None
    };
    Ok(RemainderScalingRow {
        eps: crate::scalar::to_f64(eps),
        ratio,
    })
}

/// Measured constants of the product inequalities over a sample ensemble.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ProductConstants {
    /// max over samples of `||uv||_{B^s} / (||u||_{B^s} ||v||_{B^s})`.
    pub algebra: f64,
    /// max of `||T_u v||_{B^s} / (||u||_inf ||v||_{B^s})`.
    pub low_high: f64,
    /// max of `||R(u,v)||_{B^s} / (||u||_{B^s} ||v||_{B^s})`.
    pub remainder: f64,
    pub samples: usize,
}

/// Sample the product inequalities on seeded random low-band pairs.
pub fn product_constants<T: Scalar>(
    torus: &Torus<T>,
    part: &DyadicPartition<T>,
    s: T,
    trials: usize,
    seed: u64,
) -> Result<ProductConstants> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grid = *torus.grid();
    let mut algebra = 0.0f64;
    let mut low_high_c = 0.0f64;
    let mut remainder_c = 0.0f64;
    let mut kept = 0usize;
    for _ in 0..trials {
        let mut u = SpatialField::zeros(grid);
        let mut v = SpatialField::zeros(grid);
        for x in u.data_mut() {
            *x = cast::<T>(rng.gen_range(-1.0f64..1.0));
        }
        for x in v.data_mut() {
            *x = cast::<T>(rng.gen_range(-1.0f64..1.0));
        }
        // Low-band samples: keep the constants free of cut-edge effects.
        let u = torus.apply_radial(&u, |r| crate::dyadic::chi(r / cast::<T>(32.0)));
        let v = torus.apply_radial(&v, |r| crate::dyadic::chi(r / cast::<T>(32.0)));
        let bu = part.besov_norm(torus, &u, s);
        let bv = part.besov_norm(torus, &v, s);
        if bu < cast::<T>(1e-12) || bv < cast::<T>(1e-12) {
            continue;
        }
        kept += 1;
        let split = bony_split(torus, part, &u, &v)?;
        let prod_norm = part.besov_norm(torus, &split.sum(), s);
        let t_norm = part.besov_norm(torus, &split.low_high, s);
        let r_norm = part.besov_norm(torus, &split.remainder, s);
        let to = crate::scalar::to_f64::<T>;
        algebra = algebra.max(to(prod_norm / (bu * bv)));
        low_high_c = low_high_c.max(to(t_norm / (u.norm_inf() * bv)));
        remainder_c = remainder_c.max(to(r_norm / (bu * bv)));
    }
    if kept == 0 {
        return Err(CoreError::Degenerate(
            "product constants: all samples degenerate".into(),
        ));
    }
    Ok(ProductConstants {
        algebra,
        low_high: low_high_c,
        remainder: remainder_c,
        samples: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(n: usize) -> (Torus<f64>, DyadicPartition<f64>) {
        let torus = Torus::new(Grid::line(n, 1.0).unwrap());
        let part = DyadicPartition::new(&torus);
        (torus, part)
    }

    fn low_band(torus: &Torus<f64>, seed: u64) -> SpatialField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = SpatialField::zeros(*torus.grid());
        for x in u.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        torus.apply_radial(&u, |r| crate::dyadic::chi(r / 24.0))
    }

    #[test]
    fn three_way_split_reassembles_the_product() {
        let (torus, part) = setup(128);
        for seed in 0..10 {
            let u = low_band(&torus, seed);
            let v = low_band(&torus, 100 + seed);
            let split = bony_split(&torus, &part, &u, &v).unwrap();
            let direct = torus.dealiased_product(&u, &v);
            let rel = split.sum().sub(&direct).norm_l2() / direct.norm_l2();
            assert!(rel < 1e-12, "seed {seed}: relative error {rel}");
        }
    }

    #[test]
    fn batched_paraproduct_matches_blockwise_products() {
        let (torus, part) = setup(64);
        let u = low_band(&torus, 1);
        let v = low_band(&torus, 2);
        let mut direct = SpatialField::zeros(*torus.grid());
        for q in 1..=part.q_max() {
            let low = part.low_pass(&torus, &u, q - 1);
            let blk = part.block(&torus, &v, q);
            direct.axpy(1.0, &torus.dealiased_product(&low, &blk));
        }
        let batched = paraproduct(&torus, &part, &u, &v).unwrap();
        let rel = batched.sub(&direct).norm_l2() / (1.0 + direct.norm_l2());
        assert!(rel < 1e-12, "relative error {rel}");
    }

    #[test]
    fn remainder_is_bitwise_symmetric() {
        let (torus, part) = setup(64);
        let u = low_band(&torus, 5);
        let v = low_band(&torus, 6);
        let ruv = bony_remainder(&torus, &part, &u, &v).unwrap();
        let rvu = bony_remainder(&torus, &part, &v, &u).unwrap();
        assert_eq!(ruv.data(), rvu.data());
    }

    #[test]
    fn separated_spectra_leave_no_remainder() {
        let (torus, part) = setup(128);
        // Two pure modes four octaves apart: xi = 2 pi and 64 pi.
        let u = SpatialField::from_fn(*torus.grid(), |x| (2.0 * PI * x[0]).sin());
        let v = SpatialField::from_fn(*torus.grid(), |x| (64.0 * PI * x[0]).sin());
        let r = bony_remainder(&torus, &part, &u, &v).unwrap();
        assert!(r.norm_l2() < 1e-10, "remainder {}", r.norm_l2());
    }

    #[test]
    fn constant_factor_flows_through_the_identity() {
        let (torus, part) = setup(256);
        let v = low_band(&torus, 9);
        let kappa0 = 0.7;
        let u = SpatialField::constant(*torus.grid(), kappa0);
        let split = bony_split(&torus, &part, &u, &v).unwrap();
        let direct = torus.dealiased_product(&u, &v);
        // The identity itself is machine exact.
        let rel = split.sum().sub(&direct).norm_l2() / direct.norm_l2();
        assert!(rel < 1e-12, "identity error {rel}");
        // The product approximates kappa0 v away from the boundary layer
        // created by cutting the square-wave extension of the constant.
        let interior = direct.sub(&v.scaled(kappa0));
        let margin = 0.1;
        let mask = SpatialField::from_fn(*torus.grid(), |x| {
            if x[0] > margin && x[0] < 1.0 - margin {
                1.0
            } else {
                0.0
            }
        });
        let masked_err = interior.mul_pointwise(&mask).norm_l2() / (kappa0 * v.norm_l2());
        assert!(masked_err < 2e-2, "interior error {masked_err}");
    }

    #[test]
    fn paraproduct_is_bilinear() {
        let (torus, part) = setup(64);
        let u1 = low_band(&torus, 11);
        let u2 = low_band(&torus, 12);
        let v = low_band(&torus, 13);
        let lhs = paraproduct(&torus, &part, &u1.add(&u2), &v).unwrap();
        let mut rhs = paraproduct(&torus, &part, &u1, &v).unwrap();
        rhs.axpy(1.0, &paraproduct(&torus, &part, &u2, &v).unwrap());
        let rel = lhs.sub(&rhs).norm_l2() / rhs.norm_l2();
        assert!(rel < 1e-12);
    }

    #[test]
    fn commutator_vanishes_for_constant_symbol() {
        let (torus, part) = setup(64);
        let a = SpatialField::constant(*torus.grid(), 3.25);
        let u = low_band(&torus, 21);
        let scale = u.norm_inf();
        for q in [0, 3, 6] {
            for comp in commutator(&torus, &part, &a, &u, q).unwrap() {
                assert!(
                    comp.norm_inf() < 1e-11 * scale,
                    "q = {q}: {}",
                    comp.norm_inf()
                );
            }
        }
    }

    #[test]
    fn commutator_constant_is_finite_on_smooth_symbols() {
        let (torus, part) = setup(128);
        let a = SpatialField::from_fn(*torus.grid(), |x| (PI * x[0]).sin());
        let u = low_band(&torus, 30);
        let c = commutator_constant(&torus, &part, &a, &u, 1.0).unwrap();
        assert!(c.is_finite() && c > 0.0, "constant {c}");
        assert!(c < 100.0, "constant unexpectedly large: {c}");
    }

    #[test]
    fn paralinearization_reassembles_the_nonlinearity() {
        let (torus, part) = setup(128);
        let lambda = 1.0;
        let alpha = [0.3];
        for seed in [40, 41, 42] {
            let u = low_band(&torus, seed);
            let para = paralinearize(&torus, &part, &u, lambda, &alpha).unwrap();
            let n = nonlinearity(&torus, &u, lambda, &alpha);
            let rel = para.total().sub(&n).norm_l2() / n.norm_l2();
            assert!(rel < 1e-11, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn paralinearization_symbols_are_rescaled_fields() {
        let (torus, part) = setup(64);
        let u = SpatialField::constant(*torus.grid(), 0.5);
        let para = paralinearize(&torus, &part, &u, 1.0, &[0.3]).unwrap();
        for &x in para.a_of_u.data() {
            assert_eq!(x, 1.0);
        }
        for &x in para.d_of_u[0].data() {
            assert_eq!(x, 0.15);
        }
    }

    #[test]
    fn remainder_scales_exactly_quadratically() {
        let (torus, part) = setup(64);
        let u = low_band(&torus, 50);
        let r1 = paralinearize(&torus, &part, &u, 1.0, &[0.3])
            .unwrap()
            .remainder;
        let r2 = paralinearize(&torus, &part, &u.scaled(2.0), 1.0, &[0.3])
            .unwrap()
            .remainder;
        // Doubling the field quadruples the remainder bit for bit: every
        // constituent operation is linear or bilinear and the scale factor
        // is a power of two.
        assert_eq!(r2.data(), r1.scaled(4.0).data());
    }

    #[test]
    fn exact_coefficients_absorb_the_nonlinearity_nodally() {
        let (torus, _) = setup(64);
        let u = low_band(&torus, 60);
        let b = vec![SpatialField::constant(*torus.grid(), 0.5)];
        let c = SpatialField::constant(*torus.grid(), -1.0);
        let lambda = 1.0;
        let alpha = [0.3];
        let coeffs = exact_coefficients(&u, &b, &c, lambda, &alpha);
        let du = torus.derivative(&u, 0);
        // (b_hat - b) . grad u + (c_hat - c) u == alpha u du + lambda u^2.
        let lhs = coeffs.b_hat[0]
            .sub(&b[0])
            .mul_pointwise(&du)
            .add(&coeffs.c_hat.sub(&c).mul_pointwise(&u));
        let rhs = u.mul_pointwise(&du).scaled(alpha[0]).add(
            &u.mul_pointwise(&u).scaled(lambda),
        );
        let rel = lhs.sub(&rhs).norm_inf() / rhs.norm_inf();
        assert!(rel < 1e-13, "mismatch {rel}");
    }

    #[test]
    fn linearized_potential_carries_twice_the_slope() {
        let (torus, _) = setup(64);
        let u = low_band(&torus, 61);
        let b = vec![SpatialField::constant(*torus.grid(), 0.5)];
        let c = SpatialField::constant(*torus.grid(), -1.0);
        let lin = linearized_coefficients(&u, &b, &c, 1.0, &[0.3]);
        let exact = exact_coefficients(&u, &b, &c, 1.0, &[0.3]);
        let diff = lin.c_hat.sub(&exact.c_hat);
        let err = diff.sub(&u).norm_inf();
        assert!(err < 1e-14 * (1.0 + u.norm_inf()));
        assert_eq!(lin.b_hat[0].data(), exact.b_hat[0].data());
    }

    #[test]
    fn product_constants_are_finite_and_modest() {
        let (torus, part) = setup(128);
        let pc = product_constants(&torus, &part, 1.0, 25, 7).unwrap();
        assert_eq!(pc.samples, 25);
        assert!(pc.algebra > 0.0 && pc.algebra < 50.0, "{pc:?}");
        assert!(pc.low_high > 0.0 && pc.low_high < 50.0, "{pc:?}");
        assert!(pc.remainder > 0.0 && pc.remainder < 50.0, "{pc:?}");
    }
}
