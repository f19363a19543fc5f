//! Synthetic control estimation with nonlinear-aware donor weights.
//!
//! The crate covers the whole pipeline: panel ingestion and matching
//! matrices ([`panel`]), the penalised adding-up least-squares solver and
//! eigenvalue penalty scaling ([`solvers`]), the four weight estimators
//! ([`estimators`]), cross-validated tuning ([`tuning`]), placebo and
//! variance-based inference ([`inference`]), convex-hull diagnostics
//! ([`hull`]) and a Monte Carlo harness ([`simulation`]).
//!
//! All numerical code is generic over [`Scalar`] (implemented for `f32` and
//! `f64`). The aliases at the bottom of this file pin the common `f64`
//! instantiations.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod hull;
pub mod inference;
pub mod panel;
pub mod simulation;
pub mod solvers;
pub mod tuning;

use std::fmt::{Debug, Display};
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, Result};
pub use estimators::{EffectEstimate, Estimator, Method, WeightVector};
pub use hull::{HullQuery, HullVerdict};
pub use inference::{PermutationResult, TuningPolicy, VarianceEstimate};
pub use panel::{build_matching, MatchingMatrix, MatchingSpec, PanelData, T0Spec};
pub use solvers::{SolverOptions, SolverProblem, SolverResult};
pub use tuning::{CvScheme, CvSurface, TuningParams};

/// Real scalar used throughout the crate.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + FromStr + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Panel = PanelData<f64>;
pub type Matching = MatchingMatrix<f64>;
pub type Weights = WeightVector<f64>;
pub type Effect = EffectEstimate<f64>;
pub type Tuning = TuningParams<f64>;
