//! Certified entrywise covariance bounds for extended Kalman filters.
//!
//! For a nonlinear discrete-time system the standard EKF propagates its
//! error covariance through a linearization, which can underestimate the
//! true uncertainty. This crate runs the EKF alongside a certified bound
//! pipeline: the process and measurement models are decomposed exactly into
//! a linear part plus a structured static nonlinearity, the nonlinearity is
//! bounded by a quadratic constraint on a user-chosen validity set, and a
//! small semidefinite program per covariance entry certifies an upper and a
//! lower bound on that entry at every time and measurement update. A Monte
//! Carlo oracle provides the empirical ground truth the intervals are
//! validated against.
//!
//! Modules:
//! * [`model`] / [`catalog`]: systems and their exact linear + nonlinear
//!   decompositions;
//! * [`qc`]: quadratic constraints and their lifting into state space;
//! * [`sdp`]: the small SDP family and its interior-point solver;
//! * [`bounds`]: the per-entry bound programs and interval propagation;
//! * [`filter`]: the EKF runtime with the bound pipeline attached;
//! * [`oracle`]: Monte Carlo ensembles and violation reports;
//! * [`config`]: scenario configuration and run records.
//!
//! The numeric core is generic over the scalar type (f32/f64) via
//! [`scalar::Scalar`]; the aliases below pin the default f64 instantiation.

pub mod bounds;
pub mod catalog;
pub mod config;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod qc;
pub mod scalar;
pub mod sdp;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type used by the CLI and the aliases below.
pub type DefaultScalar = f64;

pub type NonlinearSystemF64 = model::NonlinearSystem<f64>;
pub type DecomposedDynamicsF64 = model::DecomposedDynamics<f64>;
pub type DecomposedMeasurementF64 = model::DecomposedMeasurement<f64>;
pub type QuadraticConstraintF64 = qc::QuadraticConstraint<f64>;
pub type LiftedConstraintF64 = qc::LiftedConstraint<f64>;
pub type CovarianceIntervalF64 = bounds::CovarianceInterval<f64>;
pub type SdpProblemF64 = sdp::SdpProblem<f64>;
pub type SdpSolutionF64 = sdp::SdpSolution<f64>;
pub type FilterStateF64 = filter::FilterState<f64>;
pub type EnsembleResultF64 = oracle::EnsembleResult<f64>;
