use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, DesignMatrix};
use crate::data::Curve;
use crate::error::{FmdaError, Result};
use crate::numeric::{
    irls_fit, log_logistic_proportions, logistic_proportions, lse, solve_wls, IrlsOptions,
    LogisticWeights, WlsProblem, LN_2PI,
};

use super::FitConfig;

/// Sub-class responsibility mass below which a component is re-seeded
/// (relative to the number of curves).
pub const EMPTY_MASS: f64 = 1e-12;

/// Number of sub-classes, regimes per sub-class and regression basis of one
/// class model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub regimes: Vec<usize>,
    pub basis: BasisSpec,
}

impl ModelShape {
    pub fn new(subclasses: usize, regimes: usize, basis: BasisSpec) -> Self {
        ModelShape {
            regimes: vec![regimes; subclasses],
            basis,
        }
    }

    pub fn with_regimes(regimes: Vec<usize>, basis: BasisSpec) -> Self {
        ModelShape { regimes, basis }
    }

    pub fn subclasses(&self) -> usize {
        self.regimes.len()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(FmdaError::invalid("model needs at least one sub-class"));
        }
        if self.regimes.contains(&0) {
            return Err(FmdaError::invalid(
                "every sub-class needs at least one regime",
            ));
        }
        self.basis.validate(m)?;
        let max_r = *self.regimes.iter().max().unwrap_or(&1);
        if max_r > m {
            return Err(FmdaError::invalid(format!(
                "{max_r} regimes cannot be fitted on {m} sampling points"
            )));
        }
        Ok(())
    }
}

/// Parameters `theta_k` of one RHLP component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassParams {
    pub weights: LogisticWeights,
    /// One coefficient vector of length `d` per regime.
    pub beta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
}

impl SubclassParams {
    pub fn n_regimes(&self) -> usize {
        self.beta.len()
    }

    /// `m x R` regime means `beta_r . t_j`.
    fn means(&self, design: &DesignMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(design.rows(), self.n_regimes(), |j, r| {
            design.row_dot(j, &self.beta[r])
        })
    }
}

/// Parameters of one class: mixing proportions and per-sub-class RHLP parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRhlpParams {
    pub alpha: Vec<f64>,
    pub components: Vec<SubclassParams>,
}

impl MixRhlpParams {
    pub fn n_subclasses(&self) -> usize {
        self.alpha.len()
    }

    pub fn shape(&self, basis: BasisSpec) -> ModelShape {
        ModelShape::with_regimes(
            self.components.iter().map(|c| c.n_regimes()).collect(),
            basis,
        )
    }

    /// Checks internal consistency and dimensions against a design.
    pub fn check(&self, design: &DesignMatrix, covariates: &DMatrix<f64>) -> Result<()> {
        if self.alpha.len() != self.components.len() || self.alpha.is_empty() {
            return Err(FmdaError::shape(format!(
                "{} mixing proportions for {} components",
                self.alpha.len(),
                self.components.len()
            )));
        }
        if covariates.nrows() != design.rows() || covariates.ncols() != 2 {
            return Err(FmdaError::shape(
                "logistic covariates do not match the design".to_string(),
            ));
        }
        let total: f64 = self.alpha.iter().sum();
        if self.alpha.iter().any(|&a| !(a > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(FmdaError::invalid(
                "mixing proportions must be positive and sum to 1",
            ));
        }
        for (k, c) in self.components.iter().enumerate() {
            let r = c.n_regimes();
            if r == 0 || c.sigma2.len() != r || c.weights.n_regimes() != r {
                return Err(FmdaError::shape(format!(
                    "sub-class {} has inconsistent regime counts",
                    k + 1
                )));
            }
            if c.beta.iter().any(|b| b.len() != design.dim()) {
                return Err(FmdaError::shape(format!(
                    "sub-class {}: coefficient length differs from basis dimension {}",
                    k + 1,
                    design.dim()
                )));
            }
            if c.sigma2.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(FmdaError::invalid(format!(
                    "sub-class {}: variances must be positive",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Posterior laws of the latent sub-class and regime labels.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `n x K`, row `i` is the posterior over sub-classes of curve `i`.
    pub gamma: DMatrix<f64>,
    /// `tau[k][i]` is `m x R_k`; row `j` is the regime posterior at `t_j`
    /// given sub-class `k`.
    pub tau: Vec<Vec<DMatrix<f64>>>,
    /// `log p(x_i)` for each curve.
    pub curve_log_density: Vec<f64>,
    pub log_likelihood: f64,
}

/// Per-component quantities reused across curves.
struct ComponentTerms {
    log_pi: DMatrix<f64>,
    means: DMatrix<f64>,
    log_var: Vec<f64>,
    var: Vec<f64>,
}

impl ComponentTerms {
    fn new(c: &SubclassParams, design: &DesignMatrix, covariates: &DMatrix<f64>) -> Self {
        ComponentTerms {
            log_pi: log_logistic_proportions(&c.weights, covariates),
            means: c.means(design),
            log_var: c.sigma2.iter().map(|s| s.ln()).collect(),
            var: c.sigma2.clone(),
        }
    }

    /// `log pi_r(t_j) + log N(x_j; mean_jr, var_r)`
    #[inline]
    fn log_joint(&self, j: usize, r: usize, x: f64) -> f64 {
        let resid = x - self.means[(j, r)];
        self.log_pi[(j, r)] - 0.5 * (LN_2PI + self.log_var[r]) - resid * resid / (2.0 * self.var[r])
    }

    /// `sum_j log sum_r exp(log_joint)`; fills `tau` with the normalized
    /// regime posteriors when given.
    fn curve_term(&self, x: &[f64], mut tau: Option<&mut DMatrix<f64>>) -> f64 {
        let regimes = self.var.len();
        let mut buf = [0.0f64; 16];
        let mut heap;
        let scratch: &mut [f64] = if regimes <= buf.len() {
            &mut buf[..regimes]
        } else {
            heap = vec![0.0; regimes];
            &mut heap
        };
        let mut total = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            for (r, s) in scratch.iter_mut().enumerate() {
                *s = self.log_joint(j, r, xj);
            }
            let norm = lse(scratch);
            total += norm;
            if let Some(t) = tau.as_deref_mut() {
                for r in 0..regimes {
                    t[(j, r)] = (scratch[r] - norm).exp();
                }
            }
        }
        total
    }
}

fn check_curves(curves: &[Curve], design: &DesignMatrix) -> Result<()> {
    if let Some(i) = curves.iter().position(|c| c.len() != design.rows()) {
        return Err(FmdaError::shape(format!(
            "curve {} has {} values, design has {} rows",
            i,
            curves[i].len(),
            design.rows()
        )));
    }
    Ok(())
}

/// `log p(x | Psi) = log sum_k alpha_k prod_j sum_r pi_kr(t_j) N(x_j; beta_kr . t_j, sigma2_kr)`,
/// evaluated in log space.
pub fn curve_log_density(
    params: &MixRhlpParams,
    curve: &Curve,
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
) -> Result<f64> {
    params.check(design, covariates)?;
    check_curves(std::slice::from_ref(curve), design)?;
    let terms: Vec<ComponentTerms> = params
        .components
        .iter()
        .map(|c| ComponentTerms::new(c, design, covariates))
        .collect();
    let per_k: Vec<f64> = terms
        .iter()
        .zip(&params.alpha)
        .map(|(t, a)| a.ln() + t.curve_term(curve.values(), None))
        .collect();
    Ok(lse(&per_k))
}

/// Observed-data log-likelihood of a set of curves from one class.
pub fn log_likelihood(
    params: &MixRhlpParams,
    curves: &[Curve],
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
) -> Result<f64> {
    if curves.is_empty() {
        return Err(FmdaError::invalid("log-likelihood of an empty set"));
    }
    params.check(design, covariates)?;
    check_curves(curves, design)?;
    let terms: Vec<ComponentTerms> = params
        .components
        .iter()
        .map(|c| ComponentTerms::new(c, design, covariates))
        .collect();
    let mut per_k = vec![0.0; terms.len()];
    Ok(curves
        .iter()
        .map(|curve| {
            for (k, t) in terms.iter().enumerate() {
                per_k[k] = params.alpha[k].ln() + t.curve_term(curve.values(), None);
            }
            lse(&per_k)
        })
        .sum())
}

/// Sub-class posteriors `gamma` and regime posteriors `tau`.
pub fn e_step(
    params: &MixRhlpParams,
    curves: &[Curve],
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
) -> Result<Posteriors> {
    params.check(design, covariates)?;
    check_curves(curves, design)?;
    let n = curves.len();
    let m = design.rows();
    let k_count = params.n_subclasses();
    let terms: Vec<ComponentTerms> = params
        .components
        .iter()
        .map(|c| ComponentTerms::new(c, design, covariates))
        .collect();
    let mut gamma = DMatrix::zeros(n, k_count);
    let mut tau: Vec<Vec<DMatrix<f64>>> = params
        .components
        .iter()
        .map(|c| (0..n).map(|_| DMatrix::zeros(m, c.n_regimes())).collect())
        .collect();
    let mut densities = Vec::with_capacity(n);
    let mut per_k = vec![0.0; k_count];
    for (i, curve) in curves.iter().enumerate() {
        for (k, t) in terms.iter().enumerate() {
            per_k[k] = params.alpha[k].ln() + t.curve_term(curve.values(), Some(&mut tau[k][i]));
        }
        let norm = lse(&per_k);
        if !norm.is_finite() {
            return Err(FmdaError::Numerical(format!(
                "log-density of curve {i} is {norm}"
            )));
        }
        for k in 0..k_count {
            gamma[(i, k)] = (per_k[k] - norm).exp();
        }
        densities.push(norm);
    }
    let log_likelihood = densities.iter().sum();
    Ok(Posteriors {
        gamma,
        tau,
        curve_log_density: densities,
        log_likelihood,
    })
}

/// Something the M-step did besides the closed-form updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MStepEvent {
    /// Sub-class lost its responsibility mass and was re-seeded from the
    /// worst-fitted curve.
    SubclassReseeded { subclass: usize, curve: usize },
    /// Regime carried no mass; its regression parameters were left unchanged.
    RegimeFrozen { subclass: usize, regime: usize },
}

#[derive(Debug, Clone)]
pub struct MStep {
    pub params: MixRhlpParams,
    pub events: Vec<MStepEvent>,
}

/// Closed-form updates of `alpha`, `beta`, `sigma2` and a bounded IRLS update
/// of the logistic weights, all weighted by `gamma_ik * tau_ijkr`.
pub fn m_step(
    post: &Posteriors,
    curves: &[Curve],
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
    prev: &MixRhlpParams,
    cfg: &FitConfig,
) -> Result<MStep> {
    prev.check(design, covariates)?;
    check_curves(curves, design)?;
    let n = curves.len();
    let k_count = prev.n_subclasses();
    if post.gamma.shape() != (n, k_count) || post.tau.len() != k_count {
        return Err(FmdaError::shape("posteriors do not match the parameters"));
    }
    let floor = cfg.absolute_variance_floor(curves);
    let irls = cfg.irls_options();
    let threshold = EMPTY_MASS * n as f64;
    let mut events = Vec::new();

    let mut alpha: Vec<f64> = (0..k_count)
        .map(|k| post.gamma.column(k).sum() / n as f64)
        .collect();
    let mut components = Vec::with_capacity(k_count);
    for k in 0..k_count {
        if alpha[k] * (n as f64) < threshold {
            let worst = (0..n)
                .min_by(|&a, &b| post.curve_log_density[a].total_cmp(&post.curve_log_density[b]))
                .expect("nonempty set");
            let regimes = prev.components[k].n_regimes();
            let reseeded = super::init::segment_fit(
                &curves[worst..=worst],
                design,
                covariates,
                regimes,
                None,
                floor,
            )?;
            components.push(reseeded);
            alpha[k] = 1.0 / n as f64;
            events.push(MStepEvent::SubclassReseeded {
                subclass: k + 1,
                curve: worst,
            });
            continue;
        }
        let (comp, frozen) = update_component(
            post,
            k,
            curves,
            design,
            covariates,
            &prev.components[k],
            floor,
            irls,
        )?;
        events.extend(frozen.into_iter().map(|r| MStepEvent::RegimeFrozen {
            subclass: k + 1,
            regime: r + 1,
        }));
        components.push(comp);
    }
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
    Ok(MStep {
        params: MixRhlpParams { alpha, components },
        events,
    })
}

#[allow(clippy::too_many_arguments)]
fn update_component(
    post: &Posteriors,
    k: usize,
    curves: &[Curve],
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
    prev: &SubclassParams,
    floor: f64,
    irls: IrlsOptions,
) -> Result<(SubclassParams, Vec<usize>)> {
    let n = curves.len();
    let m = design.rows();
    let regimes = prev.n_regimes();
    // Responsibilities summed over curves: mass[j, r] and weighted sums of x.
    let mut mass = DMatrix::zeros(m, regimes);
    let mut wx: DMatrix<f64> = DMatrix::zeros(m, regimes);
    for (i, curve) in curves.iter().enumerate() {
        let g = post.gamma[(i, k)];
        if g == 0.0 {
            continue;
        }
        let tau = &post.tau[k][i];
        for (j, &x) in curve.values().iter().enumerate() {
            for r in 0..regimes {
                let w = g * tau[(j, r)];
                mass[(j, r)] += w;
                wx[(j, r)] += w * x;
            }
        }
    }
    let threshold = EMPTY_MASS * n as f64;
    let mut beta = prev.beta.clone();
    let mut sigma2 = prev.sigma2.clone();
    let mut frozen = Vec::new();
    for r in 0..regimes {
        let weights: Vec<f64> = mass.column(r).iter().copied().collect();
        let total: f64 = weights.iter().sum();
        if total < threshold {
            frozen.push(r);
            continue;
        }
        let targets: Vec<f64> = (0..m)
            .map(|j| {
                if weights[j] > 0.0 {
                    wx[(j, r)] / weights[j]
                } else {
                    0.0
                }
            })
            .collect();
        let sol = solve_wls(WlsProblem {
            design: design.matrix(),
            targets: &targets,
            weights: &weights,
        })?;
        let mu: Vec<f64> = (0..m)
            .map(|j| design.row_dot(j, &sol.coefficients))
            .collect();
        let mut sse = 0.0;
        for (i, curve) in curves.iter().enumerate() {
            let g = post.gamma[(i, k)];
            if g == 0.0 {
                continue;
            }
            let tau = &post.tau[k][i];
            for (j, &x) in curve.values().iter().enumerate() {
                let resid = x - mu[j];
                sse += g * tau[(j, r)] * resid * resid;
            }
        }
        beta[r] = sol.coefficients;
        sigma2[r] = (sse / total).max(floor);
    }
    let weights = irls_fit(covariates, &mass, &prev.weights, irls)?.weights;
    Ok((
        SubclassParams {
            weights,
            beta,
            sigma2,
        },
        frozen,
    ))
}

/// Pointwise conditional mean `sum_r pi_kr(t_j) beta_kr . t_j` of sub-class `k` (0-based).
pub fn regime_mean_curve(
    params: &MixRhlpParams,
    k: usize,
    design: &DesignMatrix,
    covariates: &DMatrix<f64>,
) -> Result<Curve> {
    let comp = params.components.get(k).ok_or_else(|| {
        FmdaError::invalid(format!(
            "sub-class index {} out of range (model has {})",
            k + 1,
            params.n_subclasses()
        ))
    })?;
    params.check(design, covariates)?;
    let pi = logistic_proportions(&comp.weights, covariates);
    let means = comp.means(design);
    let values = (0..design.rows())
        .map(|j| {
            (0..comp.n_regimes())
                .map(|r| pi[(j, r)] * means[(j, r)])
                .sum()
        })
        .collect();
    Curve::new(values)
}
