//! Nodal fields: spatial snapshots, space-time trajectories, boundary traces.

use crate::error::{CoreError, Result};
use crate::grid::{FaceId, Grid, Side};
use crate::scalar::{cast, Scalar};

/// Scalar field sampled on the interior nodes of a [`Grid`].
///
/// The implied boundary value is zero; operations that need a different
/// convention (coefficient fields, weights) say so explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField<T> {
    grid: Grid<T>,
    data: Vec<T>,
}

impl<T: Scalar> SpatialField<T> {
    pub fn zeros(grid: Grid<T>) -> Self {
        SpatialField {
            grid,
            data: vec![T::zero(); grid.total_nodes()],
        }
    }

    pub fn constant(grid: Grid<T>, value: T) -> Self {
        SpatialField {
            grid,
            data: vec![value; grid.total_nodes()],
        }
    }

    pub fn from_vec(grid: Grid<T>, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.total_nodes() {
            return Err(CoreError::GridMismatch(format!(
                "field length {} does not match grid with {} nodes",
                data.len(),
                grid.total_nodes()
            )));
        }
        Ok(SpatialField { grid, data })
    }

    /// Sample a closure of the node coordinates.
    pub fn from_fn(grid: Grid<T>, f: impl Fn(&[T]) -> T) -> Self {
        let mut data = Vec::with_capacity(grid.total_nodes());
        for flat in 0..grid.total_nodes() {
            let c = grid.node_coords(flat);
            data.push(f(&c[..grid.dim()]));
        }
        SpatialField { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        SpatialField {
            grid: self.grid,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        self.grid.same_as(other.grid())
    }

    pub fn scale(&mut self, a: T) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: T, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(T::one(), other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-T::one(), other);
        out
    }

    /// Pointwise (nodal) product. Exact at the nodes; see the paraproduct
    /// module for the dealiased torus product.
    pub fn mul_pointwise(&self, other: &Self) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        SpatialField {
            grid: self.grid,
            data,
        }
    }

    /// Discrete L2(Omega) inner product (cell-volume weighted).
    pub fn dot_l2(&self, other: &Self) -> T {
        debug_assert_eq!(self.data.len(), other.data.len());
        let s: T = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum();
        s * self.grid.cell_volume()
    }

    pub fn norm_l2(&self) -> T {
        self.dot_l2(self).sqrt()
    }

    pub fn norm_inf(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    /// L2 norm over the nodes selected by `mask` (same layout as the data).
    pub fn norm_l2_masked(&self, mask: &[bool]) -> T {
        debug_assert_eq!(mask.len(), self.data.len());
        let s: T = self
            .data
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x * x)
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Dirichlet trace on a face. Solution fields vanish there by convention,
    /// so this returns zeros; it exists so observation plumbing is explicit.
    pub fn boundary_trace(&self, face: FaceId) -> Result<TraceField<T>> {
        let n = self.grid.face_nodes(face)?;
        Ok(TraceField {
            face,
            values: vec![T::zero(); n],
        })
    }

    /// One-sided second-order derivative along the face axis, using the
    /// implied zero boundary value. The sign is that of the coordinate axis
    /// (not flipped by outward orientation).
    pub fn normal_derivative(&self, face: FaceId) -> Result<TraceField<T>> {
        self.grid.check_face(face)?;
        let axis = face.axis;
        let n_axis = self.grid.points(axis);
        let h = self.grid.spacing(axis);
        let two_h = cast::<T>(2.0) * h;
        let four = cast::<T>(4.0);
        let n_face = self.grid.face_nodes(face)?;
        let mut values = Vec::with_capacity(n_face);
        for j in 0..n_face {
            let at = |i_axis: usize| -> T {
                let (i0, i1) = if axis == 0 { (i_axis, j) } else { (j, i_axis) };
                self.data[self.grid.idx(i0, i1)]
            };
            let v = match face.side {
                // f'(0) = (-3 f(0) + 4 f(h) - f(2h)) / 2h with f(0) = 0
                Side::Low => (four * at(0) - at(1)) / two_h,
                // f'(L) = (3 f(L) - 4 f(L-h) + f(L-2h)) / 2h with f(L) = 0
                Side::High => (-four * at(n_axis - 1) + at(n_axis - 2)) / two_h,
            };
            values.push(v);
        }
        Ok(TraceField { face, values })
    }
}

/// Values of a field on one boundary face (a single value in 1D).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceField<T> {
    pub face: FaceId,
    pub values: Vec<T>,
}

impl<T: Scalar> TraceField<T> {
    pub fn norm_sq(&self, measure: T) -> T {
        let s: T = self.values.iter().map(|&x| x * x).sum();
        s * measure
    }
}

/// Squared H1-in-time norm of a trace signal over its whole window:
/// trapezoid of the squared values plus the squared forward difference
/// quotients, both against the given surface measure.
pub fn trace_series_h1_sq<T: Scalar>(traces: &[TraceField<T>], dt: T, measure: T) -> T {
    let n = traces.len();
    let half = cast::<T>(0.5);
    let mut total = T::zero();
    for (i, tr) in traces.iter().enumerate() {
        let wt = if i == 0 || i == n - 1 { half * dt } else { dt };
        total += wt * tr.norm_sq(measure);
    }
    for i in 0..n - 1 {
        let dq: T = traces[i + 1]
            .values
            .iter()
            .zip(&traces[i].values)
            .map(|(&a, &b)| {
                let d = (a - b) / dt;
                d * d
            })
            .sum();
        total += dt * dq * measure;
    }
    total
}

/// Uniformly sampled trajectory of spatial fields on a shared grid.
#[derive(Debug, Clone)]
pub struct SpaceTimeField<T> {
    grid: Grid<T>,
    t_start: T,
    dt: T,
    frames: Vec<SpatialField<T>>,
}

impl<T: Scalar> SpaceTimeField<T> {
    pub fn new(grid: Grid<T>, t_start: T, dt: T, frames: Vec<SpatialField<T>>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(CoreError::InvalidParameter("dt must be positive".into()));
        }
        if frames.len() < 2 {
            return Err(CoreError::InvalidParameter(
                "a trajectory needs at least two frames".into(),
            ));
        }
        for f in &frames {
            grid.same_as(f.grid())?;
        }
        Ok(SpaceTimeField {
            grid,
            t_start,
            dt,
            frames,
        })
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    #[inline]
    pub fn t_start(&self) -> T {
        self.t_start
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn time(&self, i: usize) -> T {
        self.t_start + cast::<T>(i as f64) * self.dt
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    #[inline]
    pub fn frame(&self, i: usize) -> &SpatialField<T> {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[SpatialField<T>] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [SpatialField<T>] {
        &mut self.frames
    }

    /// Index of the frame at time `t` (must sit on the time grid).
    pub fn frame_index_at(&self, t: T) -> Result<usize> {
        let rel = (t - self.t_start) / self.dt;
        let i = rel.round();
        let idx = i.to_usize().ok_or_else(|| {
            CoreError::InvalidParameter("requested time precedes the trajectory".into())
        })?;
        if idx >= self.len() || (rel - i).abs() > cast::<T>(1e-8) {
            return Err(CoreError::InvalidParameter(format!(
                "time {t} is not a frame of the trajectory"
            )));
        }
        Ok(idx)
    }

    /// Trapezoid quadrature weights over the frame times.
    pub fn time_weights(&self) -> Vec<T> {
        let n = self.len();
        let half = cast::<T>(0.5) * self.dt;
        (0..n)
            .map(|i| if i == 0 || i == n - 1 { half } else { self.dt })
            .collect()
    }

    pub fn map_frames(&self, f: impl Fn(&SpatialField<T>) -> SpatialField<T>) -> Self {
        SpaceTimeField {
            grid: self.grid,
            t_start: self.t_start,
            dt: self.dt,
            frames: self.frames.iter().map(f).collect(),
        }
    }

    /// Max over frames of the supplied frame functional.
    pub fn sup_over_frames(&self, f: impl Fn(&SpatialField<T>) -> T) -> T {
        self.frames
            .iter()
            .map(|u| f(u))
            .fold(T::zero(), |m, x| if x > m { x } else { m })
    }

    /// Trapezoid-in-time integral of a frame functional.
    pub fn integrate_frames(&self, f: impl Fn(&SpatialField<T>) -> T) -> T {
        let w = self.time_weights();
        self.frames
            .iter()
            .zip(w)
            .map(|(u, wi)| wi * f(u))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn line() -> Grid<f64> {
        Grid::line(64, 1.0).unwrap()
    }

    #[test]
    fn arithmetic_and_norms() {
        let g = line();
        let u = SpatialField::from_fn(g, |x| (std::f64::consts::PI * x[0]).sin());
        let v = SpatialField::constant(g, 2.0);
        let w = u.mul_pointwise(&v);
        assert_eq!(w.data()[10], 2.0 * u.data()[10]);
        // The nodal rule integrates sin^2(pi x) exactly: ||.|| = sqrt(1/2).
        assert!((u.norm_l2() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(v.norm_inf(), 2.0);
    }

    #[test]
    fn normal_derivative_is_second_order_exact_on_quadratics() {
        let g = line();
        let l = 1.0;
        // u = x (L - x) / L^2 vanishes on the boundary; u'(L) = -1/L exactly
        // for a second-order one-sided stencil.
        let u = SpatialField::from_fn(g, |x| x[0] * (l - x[0]) / (l * l));
        let high = u.normal_derivative(FaceId::new(0, Side::High)).unwrap();
        assert!((high.values[0] + 1.0 / l).abs() < 1e-12);
        let low = u.normal_derivative(FaceId::new(0, Side::Low)).unwrap();
        assert!((low.values[0] - 1.0 / l).abs() < 1e-12);
    }

    #[test]
    fn normal_derivative_converges_at_second_order() {
        let fid = FaceId::new(0, Side::Low);
        let exact = std::f64::consts::PI; // d/dx sin(pi x) at x = 0
        let mut errs = Vec::new();
        for n in [64usize, 128] {
            let g = Grid::line(n, 1.0).unwrap();
            let u = SpatialField::from_fn(g, |x| (std::f64::consts::PI * x[0]).sin());
            let d = u.normal_derivative(fid).unwrap().values[0];
            errs.push((d - exact).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "observed order {order}");
    }

    #[test]
    fn boundary_trace_is_zero() {
        let g = Grid::square(16, 1.0).unwrap();
        let u = SpatialField::from_fn(g, |x| x[0] + x[1]);
        for face in g.faces() {
            let tr = u.boundary_trace(face).unwrap();
            assert!(tr.values.iter().all(|&v| v == 0.0));
            assert_eq!(tr.values.len(), 16);
        }
    }

    #[test]
    fn trajectory_time_bookkeeping() {
        let g = line();
        let frames = vec![SpatialField::zeros(g); 5];
        let st = SpaceTimeField::new(g, 0.4, 0.05, frames).unwrap();
        assert_eq!(st.frame_index_at(0.5).unwrap(), 2);
        assert!(st.frame_index_at(0.52).is_err());
        let w = st.time_weights();
        assert_eq!(w[0], 0.025);
        assert_eq!(w[2], 0.05);
        let total: f64 = w.iter().sum();
        assert!((total - 0.2).abs() < 1e-15);
    }
}
