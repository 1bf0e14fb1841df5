//! Geodesic chord laboratory for model Finsler manifolds.
//!
//! The crate solves, classifies and counts geodesics joining two fixed points
//! on a small catalog of analytically tractable manifolds (a flat torus with a
//! Randers drift, a flat cylinder, and the Riemannian product of a circle with
//! the round 2-sphere). Every numerical result can be checked against a
//! closed-form oracle carried by the manifold itself.
//!
//! Module map:
//! * [`metrics`] — the manifold catalog: norm, fundamental tensor, asymmetric
//!   distance and exact geodesic oracles.
//! * [`pathspace`] — broken-geodesic paths, discrete energy, the shortening
//!   retraction, first-order descent and the finite-difference Morse index.
//! * [`homotopy`] — homotopy classes via covering-space lifts, word-length
//!   balls in finitely generated groups and growth-degree fits.
//! * [`minmax`] — sweepout families over a class, their relaxation to a
//!   saddle geodesic, and the energy sandwich check.
//! * [`census`] — primitive-chord decomposition, geometric counting functions,
//!   growth fits, carrier bookkeeping and recurrence lower bounds.
//! * [`config`], [`runner`], [`database`] — experiment plumbing for the CLI.
//! * [`verify`] — the end-to-end check battery used by `verify-all` and the
//!   acceptance test target.

pub mod census;
pub mod config;
pub mod database;
pub mod error;
pub mod homotopy;
pub mod metrics;
pub mod minmax;
pub mod pathspace;
pub mod runner;
pub mod verify;

use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type for all numerical kernels: `f32` or `f64`.
pub trait Real:
    nalgebra::RealField
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + std::fmt::Display
    + std::fmt::LowerExp
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Pulls an `f64` literal into the working scalar type.
#[inline]
pub(crate) fn real<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("literal must be representable")
}

pub use error::{GeodesicError, LabResult};
pub use homotopy::HomotopyClass;
pub use metrics::{ChartPoint, ModelManifold, OracleGeodesic, TangentVec};
pub use pathspace::{DiscretePath, GeodesicRecord};

/// Concrete double-precision aliases; the generic types are the library API,
/// these are what the runner and the CLI use.
pub type Manifold = ModelManifold<f64>;
pub type Chart = ChartPoint<f64>;
pub type Tangent = TangentVec<f64>;
pub type Path = DiscretePath<f64>;
pub type Record = GeodesicRecord<f64>;
pub type Sweepout = minmax::Sweepout<f64>;
pub type MinmaxResult = minmax::MinmaxResult<f64>;
