//! Smooth dyadic frequency localization and the norms built from it.
//!
//! The partition of unity on the representable spectrum is generated by a
//! raised-cosine cutoff `chi`:
//!
//! ```text
//!   chi(r)  = 1                       for r <= 1
//!           = cos^2(pi (r - 1) / 2)   for 1 <= r <= 2
//!           = 0                       for r >= 2
//!   phi(r)  = chi(r / 2) - chi(r),    supported on 1 <= r <= 4
//! ```
//!
//! Block `q = -1` carries the multiplier `chi(|xi|)`, blocks `0 <= q < q_max`
//! carry `phi(2^-q |xi|)`, and the top block carries `1 - chi(2^-q_max |xi|)`
//! so that the multipliers sum to exactly one at every grid frequency even
//! when a caller forces a small `q_max` (any content above the top ring is
//! folded into it, with a warning). Adjacent rings overlap; rings three or
//! more indices apart have disjoint supports, exactly, because the cutoff is
//! a literal 0 or 1 outside its transition annulus.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::field::SpatialField;
use crate::scalar::{cast, Scalar};
use crate::spectral::Torus;

/// Shape of the generating cutoff. `Broken` deliberately violates the
/// telescoping property and exists as a negative control for the
/// verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionProfile {
    RaisedCosine,
    Broken,
}

/// Raised-cosine low-pass profile; exactly 1 inside the unit ball and
/// exactly 0 outside radius 2.
pub fn chi<T: Scalar>(r: T) -> T {
    let one = T::one();
    let two = cast::<T>(2.0);
    let r = r.abs();
    if r <= one {
        one
    } else if r >= two {
        T::zero()
    } else {
        let c = (T::PI() * (r - one) / two).cos();
        c * c
    }
}

/// Ring profile `chi(r/2) - chi(r)`, supported on `1 <= r <= 4`.
pub fn phi_ring<T: Scalar>(r: T) -> T {
    chi(r / cast::<T>(2.0)) - chi(r)
}

/// Dyadic partition bound to one torus: cached multiplier tables per block.
pub struct DyadicPartition<T: Scalar> {
    q_max: i32,
    dim: usize,
    profile: PartitionProfile,
    /// `tables[k]` is the multiplier of block `q = k - 1` over flat torus bins.
    tables: Vec<Vec<T>>,
}

impl<T: Scalar> std::fmt::Debug for DyadicPartition<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DyadicPartition")
            .field("q_max", &self.q_max)
            .field("profile", &self.profile)
            .finish()
    }
}

impl<T: Scalar> DyadicPartition<T> {
    /// Partition with the natural block count: `q_max` is the largest `q`
    /// with `2^q` at or below the largest representable `|xi|`.
    pub fn new(torus: &Torus<T>) -> Self {
        let q_max = crate::scalar::to_f64(torus.xi_max()).log2().floor() as i32;
        Self::with_q_max(torus, q_max, PartitionProfile::RaisedCosine)
    }

    pub fn with_q_max(torus: &Torus<T>, q_max: i32, profile: PartitionProfile) -> Self {
        assert!(q_max >= 1, "need at least blocks -1, 0, 1");
        let fold_threshold = cast::<T>((2.0f64).powi(q_max + 1));
        if torus.xi_max() > fold_threshold {
            warn!(
                "dyadic partition: content above 2^{} is folded into the top block",
                q_max + 1
            );
        }
        let mut tables = Vec::with_capacity((q_max + 2) as usize);
        for q in -1..=q_max {
            let table = torus.radial_table(|r| block_multiplier(profile, q, q_max, r));
            tables.push(table);
        }
        DyadicPartition {
            q_max,
            dim: torus.grid().dim(),
            profile,
            tables,
        }
    }

    #[inline]
    pub fn q_max(&self) -> i32 {
        self.q_max
    }

    #[inline]
    pub fn profile(&self) -> PartitionProfile {
        self.profile
    }

    /// Block indices, `-1..=q_max`.
    pub fn block_range(&self) -> impl Iterator<Item = i32> {
        -1..=self.q_max
    }

    /// Multiplier of block `q` evaluated at radius `r` (table-free form,
    /// used for support checks).
    pub fn multiplier_at(&self, q: i32, r: T) -> T {
        block_multiplier(self.profile, q, self.q_max, r)
    }

    pub(crate) fn table(&self, q: i32) -> &[T] {
        &self.tables[(q + 1) as usize]
    }

    /// Frequency block `Delta_q u`.
    pub fn block(&self, torus: &Torus<T>, u: &SpatialField<T>, q: i32) -> SpatialField<T> {
        let mut spec = torus.spectrum(u);
        torus.scale_by_table(&mut spec, self.table(q));
        torus.synthesize_spatial(&spec)
    }

    /// All blocks of `u`, from a single forward transform.
    pub fn decompose(&self, torus: &Torus<T>, u: &SpatialField<T>) -> BlockSet<T> {
        let spec = torus.spectrum(u);
        let blocks = self
            .block_range()
            .map(|q| {
                let mut s = spec.clone();
                torus.scale_by_table(&mut s, self.table(q));
                torus.synthesize_spatial(&s)
            })
            .collect();
        BlockSet { blocks }
    }

    /// Low-frequency partial sum `S_q u = sum_{k < q} Delta_k u`, evaluated
    /// directly as the multiplier `chi(2^-q |xi|)`. `S_{q_max + 1}` is the
    /// identity by the partition property.
    pub fn low_pass(&self, torus: &Torus<T>, u: &SpatialField<T>, q: i32) -> SpatialField<T> {
        assert!(
            (-1..=self.q_max + 1).contains(&q),
            "low-pass index {q} outside -1..={}",
            self.q_max + 1
        );
        if q <= -1 {
            return SpatialField::zeros(*u.grid());
        }
        if q == self.q_max + 1 {
            // Sum of all blocks; exact identity even for folded partitions.
            return u.clone();
        }
        let scale = cast::<T>((2.0f64).powi(-q));
        match self.profile {
            PartitionProfile::RaisedCosine => torus.apply_radial(u, |r| chi(r * scale)),
            // The broken profile does not telescope; sum blocks literally.
            PartitionProfile::Broken => {
                let mut acc = SpatialField::zeros(*u.grid());
                for k in -1..q {
                    acc.axpy(T::one(), &self.block(torus, u, k));
                }
                acc
            }
        }
    }

    /// L2(Omega) norms of every block (one transform, `q_max + 2` syntheses).
    pub fn block_l2_norms(&self, torus: &Torus<T>, u: &SpatialField<T>) -> Vec<T> {
        let spec = torus.spectrum(u);
        self.block_range()
            .map(|q| {
                let mut s = spec.clone();
                torus.scale_by_table(&mut s, self.table(q));
                torus.synthesize_spatial(&s).norm_l2()
            })
            .collect()
    }

    /// Weighted block-norm sum `sum_q 2^{q s} ||Delta_q u||_{L2}`.
    pub fn besov_norm(&self, torus: &Torus<T>, u: &SpatialField<T>, s: T) -> T {
        let norms = self.block_l2_norms(torus, u);
        besov_from_block_norms(&norms, s)
    }

    /// Ratio statistics of the two Bernstein inequalities on random fields
    /// localized to ring `q`.
    pub fn bernstein_stats(
        &self,
        torus: &Torus<T>,
        q: i32,
        trials: usize,
        seed: u64,
    ) -> Result<BernsteinStats<T>> {
        if !(0..=self.q_max).contains(&q) {
            return Err(CoreError::InvalidParameter(format!(
                "ring index {q} outside 0..={}",
                self.q_max
            )));
        }
        let grid = *torus.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let two_pow_q = cast::<T>((2.0f64).powi(q));
        let vol_exp = cast::<T>(self.dim as f64 / 2.0);
        let mut stats = BernsteinStats::empty();
        let mut kept = 0usize;
        for _ in 0..trials {
            let mut white = SpatialField::zeros(grid);
            for x in white.data_mut() {
                *x = cast::<T>(rng.gen_range(-1.0f64..1.0));
            }
            let blk = self.block(torus, &white, q);
            let l2 = blk.norm_l2();
            if !(l2 > cast::<T>(1e-13)) {
                continue;
            }
            kept += 1;
            let grad_sq: T = torus
                .gradient(&blk)
                .iter()
                .map(|g| {
                    let n = g.norm_l2();
                    n * n
                })
                .sum();
            let grad_ratio = grad_sq.sqrt() / (two_pow_q * l2);
            let inf_ratio = blk.norm_inf() / (two_pow_q.powf(vol_exp) * l2);
            stats.absorb(grad_ratio, inf_ratio);
        }
        if kept == 0 {
            return Err(CoreError::Degenerate(format!(
                "ring {q} produced no nonzero samples"
            )));
        }
        stats.samples = kept;
        Ok(stats)
    }
}

fn block_multiplier<T: Scalar>(profile: PartitionProfile, q: i32, q_max: i32, r: T) -> T {
    debug_assert!((-1..=q_max).contains(&q));
    match profile {
        PartitionProfile::RaisedCosine => {
            if q == -1 {
                chi(r)
            } else if q == q_max {
                // Fold form: equals phi(2^-q r) wherever r <= 2^(q+1).
                T::one() - chi(r * cast::<T>((2.0f64).powi(-q)))
            } else {
                phi_ring(r * cast::<T>((2.0f64).powi(-q)))
            }
        }
        PartitionProfile::Broken => {
            // Squared profiles: individually supported on the same rings but
            // their sum is not a partition of unity.
            let m = block_multiplier::<T>(PartitionProfile::RaisedCosine, q, q_max, r);
            m * m
        }
    }
}

/// Sum of all block multipliers at radius `r`; equals 1 for the raised-cosine
/// profile on the representable band.
pub fn partition_sum<T: Scalar>(p: &DyadicPartition<T>, r: T) -> T {
    p.block_range().map(|q| p.multiplier_at(q, r)).sum()
}

pub fn besov_from_block_norms<T: Scalar>(norms: &[T], s: T) -> T {
    let two = cast::<T>(2.0);
    norms
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let q = k as i32 - 1;
            two.powf(s * cast::<T>(q as f64)) * n
        })
        .sum()
}

/// Frequency blocks of one field, indexed `q = -1..=q_max`.
#[derive(Debug, Clone)]
pub struct BlockSet<T> {
    blocks: Vec<SpatialField<T>>,
}

impl<T: Scalar> BlockSet<T> {
    #[inline]
    pub fn q_max(&self) -> i32 {
        self.blocks.len() as i32 - 2
    }

    /// Block `Delta_q`; zero field outside the stored range.
    pub fn block(&self, q: i32) -> Option<&SpatialField<T>> {
        if q < -1 {
            None
        } else {
            self.blocks.get((q + 1) as usize)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, &SpatialField<T>)> {
        self.blocks.iter().enumerate().map(|(k, b)| (k as i32 - 1, b))
    }

    /// Exact reconstruction: sum of all blocks.
    pub fn sum(&self) -> SpatialField<T> {
        let mut acc = self.blocks[0].clone();
        for b in &self.blocks[1..] {
            acc.axpy(T::one(), b);
        }
        acc
    }
}

/// Min/max Bernstein ratios over a sampled ring ensemble.
#[derive(Debug, Clone, Copy)]
pub struct BernsteinStats<T> {
    pub grad_ratio_min: T,
    pub grad_ratio_max: T,
    pub inf_ratio_min: T,
    pub inf_ratio_max: T,
    pub samples: usize,
}

impl<T: Scalar> BernsteinStats<T> {
    fn empty() -> Self {
        BernsteinStats {
            grad_ratio_min: T::infinity(),
            grad_ratio_max: T::zero(),
            inf_ratio_min: T::infinity(),
            inf_ratio_max: T::zero(),
            samples: 0,
        }
    }

    fn absorb(&mut self, grad_ratio: T, inf_ratio: T) {
        self.grad_ratio_min = self.grad_ratio_min.min(grad_ratio);
        self.grad_ratio_max = self.grad_ratio_max.max(grad_ratio);
        self.inf_ratio_min = self.inf_ratio_min.min(inf_ratio);
        self.inf_ratio_max = self.inf_ratio_max.max(inf_ratio);
    }

    /// max/min spread of the gradient ratio.
    pub fn grad_spread(&self) -> T {
        self.grad_ratio_max / self.grad_ratio_min
    }
}
