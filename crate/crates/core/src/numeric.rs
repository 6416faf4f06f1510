//! Numerical building blocks shared by the EM algorithm: weighted least
//! squares, log-space Gaussian and softmax evaluation, and the weighted
//! multi-class IRLS solver for the logistic regime process.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FmdaError, Result};

/// Condition number of the weighted normal matrix above which ridge is added.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Ridge strength relative to `trace / d`.
pub const RIDGE_SCALE: f64 = 1e-8;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `min_beta sum_i weights_i (targets_i - design_i . beta)^2`
#[derive(Debug, Clone, Copy)]
pub struct WlsProblem<'a> {
    pub design: &'a DMatrix<f64>,
    pub targets: &'a [f64],
    pub weights: &'a [f64],
}

/// Solution of a [`WlsProblem`] with the diagnostics of the solve.
#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub coefficients: Vec<f64>,
    /// Condition estimate of the weighted normal matrix before any ridge.
    pub condition: f64,
    pub ridge: f64,
}

/// Solves a weighted least-squares problem.
///
/// Works on the SVD of `diag(sqrt(w)) X`, whose squared singular values are
/// the eigenvalues of the weighted normal matrix `X' W X`. When that matrix
/// has condition above [`RIDGE_CONDITION`], `lambda = 1e-8 * trace / d` is
/// added to its diagonal.
pub fn solve_wls(problem: WlsProblem<'_>) -> Result<WlsSolution> {
    let WlsProblem {
        design,
        targets,
        weights,
    } = problem;
    let (n, d) = design.shape();
    if targets.len() != n || weights.len() != n {
        return Err(FmdaError::shape(format!(
            "design has {} rows, targets {}, weights {}",
            n,
            targets.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(FmdaError::Domain(
            "WLS weights must be finite and non-negative".into(),
        ));
    }
    let rows = n.max(d);
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    for i in 0..n {
        let s = weights[i].sqrt();
        for c in 0..d {
            a[(i, c)] = s * design[(i, c)];
        }
        b[i] = s * targets[i];
    }
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let eig: Vec<f64> = sv.iter().map(|s| s * s).collect();
    let trace: f64 = eig.iter().sum();
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(FmdaError::Singular { condition, dim: d });
    }
    let ridge = if condition > RIDGE_CONDITION {
        RIDGE_SCALE * trace / d as f64
    } else {
        0.0
    };
    let utb = u.transpose() * &b;
    let mut coef = DVector::zeros(d);
    for (k, &s) in sv.iter().enumerate() {
        let denom = s * s + ridge;
        if denom > 0.0 {
            let scale = s * utb[k] / denom;
            coef += v_t.row(k).transpose() * scale;
        }
    }
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(FmdaError::Singular { condition, dim: d });
    }
    Ok(WlsSolution {
        coefficients: coef.iter().copied().collect(),
        condition,
        ridge,
    })
}

/// `log N(x; mean, var)`.
pub fn log_gaussian(x: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(FmdaError::Domain(format!(
            "variance must be positive, got {var}"
        )));
    }
    Ok(log_gaussian_unchecked(x, mean, var))
}

#[inline]
pub(crate) fn log_gaussian_unchecked(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln()) - r * r / (2.0 * var)
}

/// `log sum_i exp(v_i)`, shifted by the maximum. Entries of `-inf` are allowed.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(FmdaError::invalid("log_sum_exp of an empty vector"));
    }
    Ok(lse(v))
}

#[inline]
pub(crate) fn lse(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax weights of the regime process. Regime `R` is the reference
/// category with coefficients pinned at zero; `free` holds `(w_r0, w_r1)`
/// for the first `R - 1` regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticWeights {
    free: Vec<[f64; 2]>,
}

impl LogisticWeights {
    pub fn zeros(regimes: usize) -> Self {
        assert!(regimes >= 1, "at least one regime");
        LogisticWeights {
            free: vec![[0.0; 2]; regimes - 1],
        }
    }

    pub fn from_free(free: Vec<[f64; 2]>) -> Result<Self> {
        if free.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FmdaError::Numerical("non-finite logistic weight".into()));
        }
        Ok(LogisticWeights { free })
    }

    /// Builds pinned weights from unconstrained per-regime coefficients by
    /// subtracting the last regime's pair.
    pub fn from_unpinned(all: &[[f64; 2]]) -> Result<Self> {
        let last = *all.last().ok_or_else(|| FmdaError::invalid("no regimes"))?;
        Self::from_free(
            all[..all.len() - 1]
                .iter()
                .map(|w| [w[0] - last[0], w[1] - last[1]])
                .collect(),
        )
    }

    pub fn n_regimes(&self) -> usize {
        self.free.len() + 1
    }

    pub fn free(&self) -> &[[f64; 2]] {
        &self.free
    }

    /// Coefficients of regime `r` (the reference regime returns zeros).
    pub fn pair(&self, r: usize) -> [f64; 2] {
        self.free.get(r).copied().unwrap_or([0.0; 2])
    }

    fn flat(&self) -> Vec<f64> {
        self.free.iter().flatten().copied().collect()
    }

    fn from_flat(v: &[f64]) -> Self {
        LogisticWeights {
            free: v.chunks(2).map(|c| [c[0], c[1]]).collect(),
        }
    }
}

/// Row-wise `log pi_r(x_j)`.
pub fn log_logistic_proportions(w: &LogisticWeights, covariates: &DMatrix<f64>) -> DMatrix<f64> {
    let n = covariates.nrows();
    let regimes = w.n_regimes();
    let mut out = DMatrix::zeros(n, regimes);
    let mut scores = vec![0.0; regimes];
    for j in 0..n {
        let (x0, x1) = (covariates[(j, 0)], covariates[(j, 1)]);
        for (r, s) in scores.iter_mut().enumerate() {
            let p = w.pair(r);
            *s = p[0] * x0 + p[1] * x1;
        }
        let norm = lse(&scores);
        for r in 0..regimes {
            out[(j, r)] = scores[r] - norm;
        }
    }
    out
}

/// `pi_r(x_j) = exp(w_r . x_j) / sum_l exp(w_l . x_j)`, an `n x R` matrix.
pub fn logistic_proportions(w: &LogisticWeights, covariates: &DMatrix<f64>) -> DMatrix<f64> {
    log_logistic_proportions(w, covariates).map(f64::exp)
}

/// `sum_{j,r} targets_jr log pi_r(x_j; w)`.
pub fn weighted_multinomial_loglik(
    w: &LogisticWeights,
    covariates: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> f64 {
    let logp = log_logistic_proportions(w, covariates);
    let mut total = 0.0;
    for (t, lp) in targets.iter().zip(logp.iter()) {
        if *t != 0.0 {
            total += t * lp;
        }
    }
    total
}

/// Gradient of [`weighted_multinomial_loglik`] over the free weights,
/// ordered `(w_10, w_11, w_20, w_21, ...)`.
pub fn weighted_multinomial_gradient(
    w: &LogisticWeights,
    covariates: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Vec<f64> {
    let probs = logistic_proportions(w, covariates);
    gradient_from_probs(&probs, covariates, targets)
}

fn gradient_from_probs(
    probs: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Vec<f64> {
    let free = probs.ncols() - 1;
    let mut grad = vec![0.0; 2 * free];
    for j in 0..cov.nrows() {
        let total: f64 = targets.row(j).sum();
        for r in 0..free {
            let resid = targets[(j, r)] - total * probs[(j, r)];
            grad[2 * r] += resid * cov[(j, 0)];
            grad[2 * r + 1] += resid * cov[(j, 1)];
        }
    }
    grad
}

/// Negative Hessian of the weighted multinomial log-likelihood.
fn neg_hessian(probs: &DMatrix<f64>, cov: &DMatrix<f64>, targets: &DMatrix<f64>) -> DMatrix<f64> {
    let free = probs.ncols() - 1;
    let dim = 2 * free;
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..cov.nrows() {
        let total: f64 = targets.row(j).sum();
        if total == 0.0 {
            continue;
        }
        let x = [cov[(j, 0)], cov[(j, 1)]];
        for r in 0..free {
            for l in 0..free {
                let kron = if r == l { 1.0 } else { 0.0 };
                let c = total * probs[(j, r)] * (kron - probs[(j, l)]);
                for a in 0..2 {
                    for b in 0..2 {
                        h[(2 * r + a, 2 * l + b)] += c * x[a] * x[b];
                    }
                }
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 50,
            grad_tol: 1e-6,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsOutcome {
    pub weights: LogisticWeights,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    pub grad_norm: f64,
}

impl IrlsOutcome {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace has the initial value")
    }
}

/// Weighted multinomial logistic regression by Newton-Raphson (IRLS).
///
/// `covariates` is `N x 2` and `targets` is `N x R`; rows are independent
/// observations, so `n x m x R` responsibility arrays are passed either
/// stacked or summed over curves (the objective is linear in the targets).
/// Each Newton step is halved until the objective does not decrease; the
/// Hessian is ridge-damped when not positive definite. Stops once the
/// gradient max-norm reaches `grad_tol` or after `max_iter` steps.
pub fn irls_fit(
    covariates: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    init: &LogisticWeights,
    opts: IrlsOptions,
) -> Result<IrlsOutcome> {
    let regimes = init.n_regimes();
    if covariates.ncols() != 2
        || targets.nrows() != covariates.nrows()
        || targets.ncols() != regimes
    {
        return Err(FmdaError::shape(format!(
            "IRLS: covariates {:?}, targets {:?}, {} regimes",
            covariates.shape(),
            targets.shape(),
            regimes
        )));
    }
    if targets.iter().any(|&t| !(t >= 0.0)) {
        return Err(FmdaError::Domain(
            "IRLS soft targets must be non-negative".into(),
        ));
    }
    let mut w = init.clone();
    let mut obj = weighted_multinomial_loglik(&w, covariates, targets);
    if !obj.is_finite() {
        return Err(FmdaError::Numerical(format!(
            "IRLS objective is {obj} at the initial weights"
        )));
    }
    let mut trace = vec![obj];
    if regimes == 1 {
        return Ok(IrlsOutcome {
            weights: w,
            iterations: 0,
            objective_trace: trace,
            grad_norm: 0.0,
        });
    }

    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let probs = logistic_proportions(&w, covariates);
        let grad = gradient_from_probs(&probs, covariates, targets);
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm <= opts.grad_tol || iterations >= opts.max_iter {
            break;
        }
        let h = neg_hessian(&probs, covariates, targets);
        let g = DVector::from_vec(grad);
        let step = damped_newton_step(&h, &g)?;
        let base = w.flat();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = base
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand = LogisticWeights::from_flat(&cand);
            let cand_obj = weighted_multinomial_loglik(&cand, covariates, targets);
            if cand_obj.is_finite() && cand_obj >= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, cand_obj)) => {
                let gain = cand_obj - obj;
                w = cand;
                obj = cand_obj;
                trace.push(obj);
                if gain <= f64::EPSILON * obj.abs() {
                    break;
                }
            }
            None => break,
        }
    }
    if w.free.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FmdaError::Numerical(
            "IRLS produced non-finite weights".into(),
        ));
    }
    Ok(IrlsOutcome {
        weights: w,
        iterations,
        objective_trace: trace,
        grad_norm,
    })
}

/// Solves `(H + lambda I) step = g`, raising `lambda` until `H + lambda I`
/// admits a Cholesky factorization.
fn damped_newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = h.nrows();
    let scale = (h.trace() / dim as f64).abs().max(1e-12);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let mut damped = h.clone();
        for i in 0..dim {
            damped[(i, i)] += lambda;
        }
        if let Some(chol) = damped.cholesky() {
            let step = chol.solve(g);
            if step.iter().all(|v| v.is_finite()) {
                return Ok(step);
            }
        }
        lambda = if lambda == 0.0 {
            1e-10 * scale
        } else {
            lambda * 10.0
        };
    }
    Err(FmdaError::Numerical(
        "IRLS Hessian could not be damped to positive definite".into(),
    ))
}
