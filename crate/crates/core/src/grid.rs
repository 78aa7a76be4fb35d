//! Interior-node grids on a box with homogeneous Dirichlet boundary.
//!
//! A `Grid` covers the open box `(0, L_1) x ... x (0, L_d)` (d = 1 or 2) with
//! `N_k` interior nodes per axis at `x_i = (i + 1) h_k`, `h_k = L_k / (N_k + 1)`.
//! Boundary points are never stored: every field carried on the grid is
//! understood to vanish on the boundary unless an operation says otherwise.

use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::scalar::{cast, Scalar};

pub const MAX_DIM: usize = 2;

/// Side of the box along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Low,
    High,
}

/// One face of the box boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FaceId {
    pub axis: usize,
    pub side: Side,
}

impl FaceId {
    pub const fn new(axis: usize, side: Side) -> Self {
        FaceId { axis, side }
    }

    pub const fn low(axis: usize) -> Self {
        FaceId::new(axis, Side::Low)
    }

    pub const fn high(axis: usize) -> Self {
        FaceId::new(axis, Side::High)
    }

    /// Stable name used in file schemas, e.g. `x1_high`.
    pub fn name(&self) -> String {
        let side = match self.side {
            Side::Low => "low",
            Side::High => "high",
        };
        format!("x{}_{}", self.axis + 1, side)
    }

    pub fn parse(s: &str) -> Option<FaceId> {
        let (axis, side) = s.split_once('_')?;
        let axis = axis.strip_prefix('x')?.parse::<usize>().ok()?;
        if axis == 0 || axis > MAX_DIM {
            return None;
        }
        let side = match side {
            "low" => Side::Low,
            "high" => Side::High,
            _ => return None,
        };
        Some(FaceId::new(axis - 1, side))
    }
}

/// Uniform interior-node grid. Unused axes carry one node of unit length so
/// that index arithmetic is dimension-agnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    n: [usize; MAX_DIM],
    len: [T; MAX_DIM],
}

impl<T: Scalar> Grid<T> {
    pub fn new(dim: usize, points: &[usize], lengths: &[T]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(CoreError::InvalidParameter(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if points.len() != dim || lengths.len() != dim {
            return Err(CoreError::InvalidParameter(
                "points/lengths must have one entry per axis".into(),
            ));
        }
        let mut n = [1usize; MAX_DIM];
        let mut len = [T::one(); MAX_DIM];
        for k in 0..dim {
            if !points[k].is_power_of_two() || points[k] < 16 {
                return Err(CoreError::InvalidParameter(format!(
                    "interior node count must be a power of two >= 16, got {} on axis {}",
                    points[k], k
                )));
            }
            if !(lengths[k] > T::zero()) || !lengths[k].is_finite() {
                return Err(CoreError::InvalidParameter(format!(
                    "box length must be positive and finite on axis {k}"
                )));
            }
            n[k] = points[k];
            len[k] = lengths[k];
        }
        Ok(Grid { dim, n, len })
    }

    /// 1D grid on `(0, length)`.
    pub fn line(points: usize, length: T) -> Result<Self> {
        Self::new(1, &[points], &[length])
    }

    /// Square 2D grid on `(0, length)^2`.
    pub fn square(points: usize, length: T) -> Result<Self> {
        Self::new(2, &[points, points], &[length, length])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn points(&self, axis: usize) -> usize {
        self.n[axis]
    }

    #[inline]
    pub fn length(&self, axis: usize) -> T {
        self.len[axis]
    }

    /// Node spacing `h = L / (N + 1)`.
    #[inline]
    pub fn spacing(&self, axis: usize) -> T {
        self.len[axis] / cast::<T>((self.n[axis] + 1) as f64)
    }

    /// Volume element for the discrete L2 inner product.
    #[inline]
    pub fn cell_volume(&self) -> T {
        let mut v = T::one();
        for k in 0..self.dim {
            v = v * self.spacing(k);
        }
        v
    }

    #[inline]
    pub fn total_nodes(&self) -> usize {
        self.n[0] * self.n[1]
    }

    /// Row-major flat index; the last active axis is contiguous.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n[0] && j < self.n[1]);
        i * self.n[1] + j
    }

    /// Coordinate of interior node `i` along `axis` (0-based, strictly inside).
    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> T {
        cast::<T>((i + 1) as f64) * self.spacing(axis)
    }

    /// Coordinates of the flat node index.
    pub fn node_coords(&self, flat: usize) -> [T; MAX_DIM] {
        let i = flat / self.n[1];
        let j = flat % self.n[1];
        let mut out = [T::zero(); MAX_DIM];
        out[0] = self.coord(0, i);
        if self.dim > 1 {
            out[1] = self.coord(1, j);
        }
        out
    }

    pub fn faces(&self) -> Vec<FaceId> {
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            out.push(FaceId::new(axis, Side::Low));
            out.push(FaceId::new(axis, Side::High));
        }
        out
    }

    pub fn check_face(&self, face: FaceId) -> Result<()> {
        if face.axis >= self.dim {
            return Err(CoreError::InvalidParameter(format!(
                "face axis {} out of range for dimension {}",
                face.axis, self.dim
            )));
        }
        Ok(())
    }

    /// Number of nodes on a face (1 in 1D, the opposite-axis count in 2D).
    pub fn face_nodes(&self, face: FaceId) -> Result<usize> {
        self.check_face(face)?;
        Ok(if self.dim == 1 { 1 } else { self.n[1 - face.axis] })
    }

    /// Surface element of a face for trace integrals (1 in 1D).
    pub fn face_measure(&self, face: FaceId) -> Result<T> {
        self.check_face(face)?;
        Ok(if self.dim == 1 {
            T::one()
        } else {
            self.spacing(1 - face.axis)
        })
    }

    pub fn same_as(&self, other: &Grid<T>) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(CoreError::GridMismatch(format!(
                "expected {:?}, got {:?}",
                self, other
            )))
        }
    }
}
