//! Mixture of regressions with hidden logistic processes (MixRHLP).
//!
//! Each class of curves is a mixture of `K` sub-classes; each sub-class is
//! an RHLP model in which a logistic process over time switches between
//! `R_k` Gaussian polynomial (or spline) regimes. With `K = 1` this is a
//! single RHLP, with `R = 1` a plain regression mixture, and with
//! `K = R = 1` a single regression model.

mod em;
mod init;
mod model;

pub use em::{
    em_fit, em_fit_with, initial_params, run_em, EmRun, FitConfig, FitDiagnostics, FitResult,
    IterationEvent, RestartSummary,
};
pub use init::{
    initialize, random_cuts, segment_fit, segmentation_weights, uniform_cuts, InitRegistry,
    KMeansInit, RandomInit, SubclassInit,
};
pub use model::{
    curve_log_density, e_step, log_likelihood, m_step, regime_mean_curve, MStep, MStepEvent,
    MixRhlpParams, ModelShape, Posteriors, SubclassParams, EMPTY_MASS,
};

use serde::{Deserialize, Serialize};

use crate::data::TimeGrid;
use crate::error::{FmdaError, Result};

pub const MODEL_VERSION: &str = "mixrhlp-v1";

/// Serialized form of one fitted class model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub version: String,
    pub shape: ModelShape,
    pub grid_hash: String,
    pub params: MixRhlpParams,
    pub diagnostics: FitDiagnostics,
}

impl ClassModel {
    pub fn new(shape: ModelShape, grid: &TimeGrid, fit: &FitResult) -> Self {
        ClassModel {
            version: MODEL_VERSION.to_string(),
            shape,
            grid_hash: grid.hash(),
            params: fit.params.clone(),
            diagnostics: fit.diagnostics.clone(),
        }
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(FmdaError::invalid(format!(
                "unsupported model version '{}', expected '{}'",
                self.version, MODEL_VERSION
            )));
        }
        Ok(())
    }
}
