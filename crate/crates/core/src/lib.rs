//! Curve classification by functional mixture discriminant analysis with
//! hidden logistic process regression.
//!
//! Each class of curves is modeled by a mixture of regression models whose
//! regimes are switched by a logistic process over time ([`mixrhlp`]); a new
//! curve is assigned to the class with the highest posterior probability
//! ([`discriminant`]). Polynomial, spline and single-model baselines are the
//! special cases with one sub-class and/or one regime.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod data;
pub mod discriminant;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod mixrhlp;
pub mod numeric;

pub use error::{FmdaError, Result};
