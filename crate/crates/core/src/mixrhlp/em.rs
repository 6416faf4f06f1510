use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, logistic_covariates, DesignMatrix};
use crate::data::{Curve, TimeGrid};
use crate::error::{FmdaError, Result};
use crate::numeric::IrlsOptions;

use super::init::{initialize, InitRegistry, SubclassInit};
use super::model::{e_step, m_step, MStepEvent, MixRhlpParams, ModelShape, Posteriors};

/// Settings of the EM fit of one class model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|L(q+1) - L(q)| / |L(q)|`.
    pub rel_tol: f64,
    pub restarts: usize,
    /// Name of the sub-class initialization strategy.
    pub init: String,
    pub seed: u64,
    /// Variance floor as a fraction of the class's pooled data variance.
    pub variance_floor: f64,
    /// Newton iterations of the logistic-weight update per M-step.
    pub irls_max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 300,
            rel_tol: 1e-8,
            restarts: 10,
            init: "kmeans".to_string(),
            seed: 0,
            variance_floor: 1e-8,
            irls_max_iter: 50,
        }
    }
}

/// Absolute lower bound on any variance, used when the data are constant.
const MIN_VARIANCE: f64 = 1e-12;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(FmdaError::invalid("max_iters must be >= 1"));
        }
        if self.restarts == 0 {
            return Err(FmdaError::invalid("restarts must be >= 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(FmdaError::invalid("rel_tol must be > 0"));
        }
        if !(self.variance_floor >= 0.0) {
            return Err(FmdaError::invalid("variance floor must be >= 0"));
        }
        Ok(())
    }

    pub fn absolute_variance_floor(&self, curves: &[Curve]) -> f64 {
        let count = curves.iter().map(|c| c.len()).sum::<usize>().max(1) as f64;
        let mean = curves.iter().flat_map(|c| c.values()).sum::<f64>() / count;
        let var = curves
            .iter()
            .flat_map(|c| c.values())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / count;
        (self.variance_floor * var).max(MIN_VARIANCE)
    }

    pub fn irls_options(&self) -> IrlsOptions {
        IrlsOptions {
            max_iter: self.irls_max_iter,
            ..IrlsOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEvent {
    pub iteration: usize,
    #[serde(flatten)]
    pub event: MStepEvent,
}

/// Outcome of one EM run from a given starting point.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: MixRhlpParams,
    pub posteriors: Posteriors,
    /// `L(Psi^(q))` for `q = 0..=iterations`.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub events: Vec<IterationEvent>,
}

impl EmRun {
    pub fn log_likelihood(&self) -> f64 {
        self.posteriors.log_likelihood
    }

    /// Iterations whose M-step re-seeded a sub-class; the likelihood may
    /// drop across these.
    pub fn reseed_iterations(&self) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| matches!(e.event, MStepEvent::SubclassReseeded { .. }))
            .map(|e| e.iteration)
            .collect()
    }
}

/// Alternates E- and M-steps from `init` until the relative change of the
/// log-likelihood drops below `cfg.rel_tol` or `cfg.max_iters` M-steps ran.
/// `observe` sees the posteriors of every E-step.
pub fn run_em(
    init: MixRhlpParams,
    curves: &[Curve],
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
    cfg: &FitConfig,
    observe: &mut dyn FnMut(&Posteriors),
) -> Result<EmRun> {
    let mut params = init;
    let mut post = e_step(&params, curves, design, covariates)?;
    observe(&post);
    let mut trace = vec![post.log_likelihood];
    let mut events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let step = m_step(&post, curves, design, covariates, &params, cfg)?;
        let reseeded = step
            .events
            .iter()
            .any(|e| matches!(e, MStepEvent::SubclassReseeded { .. }));
        events.extend(step.events.into_iter().map(|event| IterationEvent {
            iteration: iterations,
            event,
        }));
        params = step.params;
        let prev = post.log_likelihood;
        post = e_step(&params, curves, design, covariates)?;
        observe(&post);
        trace.push(post.log_likelihood);
        if !reseeded && (post.log_likelihood - prev).abs() <= cfg.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        params,
        posteriors: post,
        trace,
        iterations,
        converged,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration log-likelihood; kept in memory only.
    #[serde(skip)]
    pub trace: Vec<f64>,
    #[serde(skip)]
    pub reseed_iterations: Vec<usize>,
}

/// Summary of a multi-restart fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    /// Log-likelihood trace of the retained run.
    pub trace: Vec<f64>,
    pub events: Vec<IterationEvent>,
    pub restarts: Vec<RestartSummary>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MixRhlpParams,
    pub posteriors: Posteriors,
    pub diagnostics: FitDiagnostics,
}

/// Fits a class model with the built-in initialization strategies.
pub fn em_fit(
    curves: &[Curve],
    shape: &ModelShape,
    grid: &TimeGrid,
    cfg: &FitConfig,
) -> Result<FitResult> {
    em_fit_with(curves, shape, grid, cfg, &InitRegistry::builtin())
}

/// Runs `cfg.restarts` independent EM runs and keeps the one with the
/// highest final log-likelihood (ties go to the lower restart index).
/// Restart `r` draws from the ChaCha stream `r` of `cfg.seed`.
pub fn em_fit_with(
    curves: &[Curve],
    shape: &ModelShape,
    grid: &TimeGrid,
    cfg: &FitConfig,
    registry: &InitRegistry,
) -> Result<FitResult> {
    cfg.validate()?;
    if curves.is_empty() {
        return Err(FmdaError::invalid("cannot fit a model to zero curves"));
    }
    shape.validate(grid.len())?;
    if let Some(i) = curves.iter().position(|c| c.len() != grid.len()) {
        return Err(FmdaError::shape(format!(
            "curve {} has {} values, grid has {}",
            i,
            curves[i].len(),
            grid.len()
        )));
    }
    if curves.len() < shape.subclasses() {
        return Err(FmdaError::invalid(format!(
            "{} sub-classes requested for {} curves",
            shape.subclasses(),
            curves.len()
        )));
    }
    let strategy = registry.get(&cfg.init)?;
    let design = build_design(&shape.basis, grid)?;
    let covariates = logistic_covariates(grid);

    let runs: Vec<Result<EmRun>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let init = initial_params(
                curves,
                shape,
                &design,
                &covariates,
                cfg,
                strategy.as_ref(),
                restart,
            )?;
            run_em(init, curves, &design, &covariates, cfg, &mut |_| {})
        })
        .collect();

    let mut best: Option<(usize, EmRun)> = None;
    let mut summaries = Vec::new();
    let mut first_err = None;
    for (restart, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                summaries.push(RestartSummary {
                    restart,
                    log_likelihood: run.log_likelihood(),
                    iterations: run.iterations,
                    converged: run.converged,
                    trace: run.trace.clone(),
                    reseed_iterations: run.reseed_iterations(),
                });
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| run.log_likelihood() > b.log_likelihood());
                if better {
                    best = Some((restart, run));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let (best_restart, run) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one restart")),
    };
    let diagnostics = FitDiagnostics {
        log_likelihood: run.log_likelihood(),
        iterations: run.iterations,
        converged: run.converged,
        best_restart,
        trace: run.trace,
        events: run.events,
        restarts: summaries,
    };
    Ok(FitResult {
        params: run.params,
        posteriors: run.posteriors,
        diagnostics,
    })
}

/// Starting parameters of restart `restart`, as used by [`em_fit_with`].
pub fn initial_params(
    curves: &[Curve],
    shape: &ModelShape,
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
    cfg: &FitConfig,
    strategy: &dyn SubclassInit,
    restart: usize,
) -> Result<MixRhlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let floor = cfg.absolute_variance_floor(curves);
    initialize(
        curves, shape, design, covariates, strategy, restart, floor, &mut rng,
    )
}
