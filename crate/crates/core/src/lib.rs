//! Desk-scale numerical workbench for a semilinear parabolic initial-boundary
//! value problem
//!
//! ```text
//!     d_t u - Lap u = b . grad u + c u + lambda u^2 + alpha . (u grad u) + R(x,t) f(x)
//! ```
//!
//! on a box with homogeneous Dirichlet data, together with the frequency-space
//! machinery used to analyse it:
//!
//! * [`grid`] / [`field`] / [`spectral`]: interior-node grids, odd (sine)
//!   extension to a torus, exact spectral derivatives and heat solves.
//! * [`dyadic`]: smooth dyadic frequency blocks, block decomposition,
//!   Besov-type norms and Bernstein ratio measurements.
//! * [`paraproduct`]: low-high paraproducts, the three-way product split,
//!   commutators and the paralinearization of the nonlinearity.
//! * [`forward`]: IMEX time stepper, boundary observations, time derivative
//!   of the state and the residual of the differentiated equation.
//! * [`estimates`]: measured constants for the frequency-localized energy
//!   inequality of the forward problem.
//! * [`carleman`]: exponential space-time weights, the conjugated operator,
//!   and measured constants for the weighted inequalities.
//! * [`inverse`]: one-shot slice reconstruction of the source amplitude,
//!   Tikhonov output-least-squares with an exact discrete adjoint gradient,
//!   and the noise-ladder exponent fit.
//!
//! Everything is generic over the scalar type through [`scalar::Scalar`]
//! (f32 or f64); the crate root exports f64 aliases for the common types.

pub mod carleman;
pub mod dyadic;
pub mod error;
pub mod estimates;
pub mod field;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod paraproduct;
pub mod report;
pub mod scalar;
pub mod spectral;

pub use error::CoreError;

/// Default scalar type for workbench runs.
pub type Real = f64;

pub type Grid64 = grid::Grid<f64>;
pub type SpatialField64 = field::SpatialField<f64>;
pub type SpaceTimeField64 = field::SpaceTimeField<f64>;
pub type TraceField64 = field::TraceField<f64>;
pub type Torus64 = spectral::Torus<f64>;
pub type DyadicPartition64 = dyadic::DyadicPartition<f64>;
pub type ProblemSpec64 = forward::ProblemSpec<f64>;
pub type CarlemanParams64 = carleman::CarlemanParams<f64>;
pub type ReconstructionConfig64 = inverse::ReconstructionConfig<f64>;
