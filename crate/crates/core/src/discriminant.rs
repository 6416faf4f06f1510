//! Supervised layer: per-class model fitting, class priors and the MAP rule.
//!
//! Classification methods are strategies registered by name in a
//! [`MethodRegistry`]. A method turns a [`MethodSpec`] (basis, sub-class and
//! regime counts) into one [`ModelShape`] per class; every built-in method
//! is then fitted by the same MixRHLP EM, since functional linear
//! discriminant analysis (one model per class) and the polynomial / spline
//! regression mixtures are special cases of it.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, logistic_covariates, BasisSpec};
use crate::data::{Curve, LabeledCurveSet, TimeGrid};
use crate::error::{FmdaError, Result};
use crate::mixrhlp::{self, em_fit_with, ClassModel, FitConfig, InitRegistry, ModelShape};
use crate::numeric::lse;

pub const CLASSIFIER_VERSION: &str = "fmda-clf-v1";

/// Seed offset between consecutive classes.
const CLASS_SEED_STRIDE: u64 = 1_000_003;

/// A method name plus the hyperparameters it expands into per-class shapes.
///
/// `subclasses` and `regimes` hold one entry per class, or a single entry
/// used for every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: String,
    pub basis: BasisSpec,
    pub subclasses: Vec<usize>,
    pub regimes: Vec<usize>,
}

impl MethodSpec {
    /// Built-in defaults of a registered method.
    pub fn named(name: &str) -> Result<Self> {
        Ok(MethodRegistry::builtin().get(name)?.default_spec())
    }
}

fn per_class(values: &[usize], n_classes: usize, what: &str) -> Result<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; n_classes]),
        n if n == n_classes => Ok(values.to_vec()),
        n => Err(FmdaError::invalid(format!(
            "{what}: got {n} values for {n_classes} classes (give one or one per class)"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// One model per class.
    Flda,
    /// A mixture of models per class.
    Fmda,
}

/// A classification method: validates hyperparameters and expands them
/// into per-class model shapes.
pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn family(&self) -> Family;
    fn default_spec(&self) -> MethodSpec;
    fn validate(&self, spec: &MethodSpec) -> Result<()>;

    fn shapes(&self, spec: &MethodSpec, n_classes: usize) -> Result<Vec<ModelShape>> {
        self.validate(spec)?;
        let ks = per_class(&spec.subclasses, n_classes, "sub-class counts")?;
        let rs = per_class(&spec.regimes, n_classes, "regime counts")?;
        Ok(ks
            .into_iter()
            .zip(rs)
            .map(|(k, r)| ModelShape::new(k, r, spec.basis))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BasisKind {
    Polynomial,
    Bspline,
}

/// Built-in method described by the constraints it places on the shape.
struct StandardMethod {
    name: &'static str,
    description: &'static str,
    family: Family,
    basis_kind: BasisKind,
    /// Regime switching (R > 1) instead of a single regression per component.
    hidden_process: bool,
    defaults: (BasisSpec, Vec<usize>, usize),
}

impl Method for StandardMethod {
    fn name(&self) -> &'static str {
        self.name
    }

    fn description(&self) -> &'static str {
        self.description
    }

    fn family(&self) -> Family {
        self.family
    }

    fn default_spec(&self) -> MethodSpec {
        let (basis, ref ks, r) = self.defaults;
        MethodSpec {
            method: self.name.to_string(),
            basis,
            subclasses: ks.clone(),
            regimes: vec![r],
        }
    }

    fn validate(&self, spec: &MethodSpec) -> Result<()> {
        let bad = |msg: String| Err(FmdaError::invalid(format!("{}: {}", self.name, msg)));
        let kind = match spec.basis {
            BasisSpec::Polynomial { .. } => BasisKind::Polynomial,
            BasisSpec::Bspline { .. } => BasisKind::Bspline,
        };
        if kind != self.basis_kind {
            return bad(format!("basis {} not allowed", spec.basis));
        }
        if spec.subclasses.is_empty() || spec.regimes.is_empty() {
            return bad("sub-class and regime counts must be given".into());
        }
        if spec.subclasses.contains(&0) || spec.regimes.contains(&0) {
            return bad("counts must be >= 1".into());
        }
        if self.family == Family::Flda && spec.subclasses.iter().any(|&k| k != 1) {
            return bad("one model per class requires K = 1".into());
        }
        if self.hidden_process && spec.regimes.iter().any(|&r| r < 2) {
            return bad("hidden process regression requires R >= 2".into());
        }
        if !self.hidden_process && spec.regimes.iter().any(|&r| r != 1) {
            return bad("plain regression requires R = 1".into());
        }
        Ok(())
    }
}

/// Name-indexed set of classification methods.
#[derive(Clone)]
pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Arc<dyn Method>>,
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry {
            methods: BTreeMap::new(),
        }
    }

    /// The six built-in methods.
    pub fn builtin() -> Self {
        let poly6 = BasisSpec::Polynomial { degree: 6 };
        let cubic = BasisSpec::Bspline { order: 4, knots: 8 };
        let constant = BasisSpec::Polynomial { degree: 0 };
        let mut reg = Self::empty();
        for m in [
            StandardMethod {
                name: "flda-poly",
                description: "one polynomial regression per class",
                family: Family::Flda,
                basis_kind: BasisKind::Polynomial,
                hidden_process: false,
                defaults: (poly6, vec![1], 1),
            },
            StandardMethod {
                name: "flda-spline",
                description: "one B-spline regression per class",
                family: Family::Flda,
                basis_kind: BasisKind::Bspline,
                hidden_process: false,
                defaults: (cubic, vec![1], 1),
            },
            StandardMethod {
                name: "flda-rhlp",
                description: "one hidden logistic process regression per class",
                family: Family::Flda,
                basis_kind: BasisKind::Polynomial,
                hidden_process: true,
                defaults: (constant, vec![1], 3),
            },
            StandardMethod {
                name: "fmda-polymix",
                description: "polynomial regression mixture per class",
                family: Family::Fmda,
                basis_kind: BasisKind::Polynomial,
                hidden_process: false,
                defaults: (poly6, vec![3], 1),
            },
            StandardMethod {
                name: "fmda-splinemix",
                description: "B-spline regression mixture per class",
                family: Family::Fmda,
                basis_kind: BasisKind::Bspline,
                hidden_process: false,
                defaults: (cubic, vec![3], 1),
            },
            StandardMethod {
                name: "fmda-mixrhlp",
                description: "mixture of hidden logistic process regressions per class",
                family: Family::Fmda,
                basis_kind: BasisKind::Polynomial,
                hidden_process: true,
                defaults: (constant, vec![3, 1], 3),
            },
        ] {
            reg.register(Arc::new(m));
        }
        reg
    }

    pub fn register(&mut self, method: Arc<dyn Method>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Method>> {
        self.methods
            .get(name)
            .cloned()
            .ok_or_else(|| FmdaError::Unknown {
                kind: "method",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Method>> {
        self.methods.values()
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Names of the built-in methods in benchmark-table order.
pub const TABLE_ORDER: [&str; 6] = [
    "flda-poly",
    "flda-spline",
    "flda-rhlp",
    "fmda-polymix",
    "fmda-splinemix",
    "fmda-mixrhlp",
];

/// Fitted class models, class priors and the MAP decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub version: String,
    pub method: MethodSpec,
    pub priors: Vec<f64>,
    pub grid: TimeGrid,
    pub fit_config: FitConfig,
    pub classes: Vec<ClassModel>,
}

impl Classifier {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CLASSIFIER_VERSION {
            return Err(FmdaError::invalid(format!(
                "unsupported classifier version '{}', expected '{}'",
                self.version, CLASSIFIER_VERSION
            )));
        }
        if self.classes.is_empty() || self.priors.len() != self.classes.len() {
            return Err(FmdaError::invalid(
                "classifier needs one prior per class model",
            ));
        }
        let total: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(FmdaError::invalid(
                "class priors must be positive and sum to 1",
            ));
        }
        let hash = self.grid.hash();
        for (g, class) in self.classes.iter().enumerate() {
            class.check_version()?;
            if class.grid_hash != hash {
                return Err(FmdaError::invalid(format!(
                    "class {} was fitted on a different grid",
                    g + 1
                )));
            }
        }
        Ok(())
    }

    /// Checks that data sampled on `grid` can be scored by this classifier.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if grid.len() != self.grid.len() {
            return Err(FmdaError::shape(format!(
                "data has {} time points, classifier grid has {}",
                grid.len(),
                self.grid.len()
            )));
        }
        let tol = 1e-9 * (self.grid.end() - self.grid.start());
        if let Some(j) =
            (0..grid.len()).find(|&j| (grid.times()[j] - self.grid.times()[j]).abs() > tol)
        {
            return Err(FmdaError::shape(format!(
                "time point {} is {} in the data but {} in the classifier grid",
                j + 1,
                grid.times()[j],
                self.grid.times()[j]
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let clf: Classifier = serde_json::from_str(text)?;
        clf.validate()?;
        Ok(clf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| FmdaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FmdaError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Trains with the built-in method registry and init strategies.
pub fn train(set: &LabeledCurveSet, method: &MethodSpec, cfg: &FitConfig) -> Result<Classifier> {
    train_with(
        set,
        method,
        cfg,
        &MethodRegistry::builtin(),
        &InitRegistry::builtin(),
    )
}

/// Fits one class model per class on that class's curves; priors are the
/// empirical class frequencies. Class `g` (1-based) uses seed
/// `cfg.seed + (g - 1) * 1_000_003`.
pub fn train_with(
    set: &LabeledCurveSet,
    method: &MethodSpec,
    cfg: &FitConfig,
    methods: &MethodRegistry,
    inits: &InitRegistry,
) -> Result<Classifier> {
    if !set.is_labeled() || set.is_empty() {
        return Err(FmdaError::invalid("training needs a nonempty labeled set"));
    }
    let n_classes = set.n_classes();
    let counts = set.class_counts();
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(FmdaError::invalid(format!(
            "class {} has no training curves",
            g + 1
        )));
    }
    let shapes = methods.get(&method.method)?.shapes(method, n_classes)?;
    let grid = set.grid();
    let fits: Vec<Result<ClassModel>> = shapes
        .par_iter()
        .enumerate()
        .map(|(g, shape)| {
            let class_cfg = FitConfig {
                seed: cfg.seed.wrapping_add(g as u64 * CLASS_SEED_STRIDE),
                ..cfg.clone()
            };
            let curves = set.class_curves(g + 1);
            em_fit_with(&curves, shape, grid, &class_cfg, inits)
                .map(|fit| ClassModel::new(shape.clone(), grid, &fit))
                .map_err(|e| FmdaError::Training {
                    class: g + 1,
                    source: Box::new(e),
                })
        })
        .collect();
    let classes = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let n = set.len() as f64;
    Ok(Classifier {
        version: CLASSIFIER_VERSION.to_string(),
        method: method.clone(),
        priors: counts.iter().map(|&c| c as f64 / n).collect(),
        grid: grid.clone(),
        fit_config: cfg.clone(),
        classes,
    })
}

/// `log w_g + log p(x | g)` for every class and curve (`n x G`, row-major).
pub fn class_log_scores(clf: &Classifier, curves: &[Curve]) -> Result<Vec<Vec<f64>>> {
    let m = clf.grid.len();
    if let Some(i) = curves.iter().position(|c| c.len() != m) {
        return Err(FmdaError::shape(format!(
            "curve {} has {} values, classifier grid has {}",
            i,
            curves[i].len(),
            m
        )));
    }
    let covariates = logistic_covariates(&clf.grid);
    let mut scores = vec![vec![0.0; clf.n_classes()]; curves.len()];
    for (g, class) in clf.classes.iter().enumerate() {
        let design = build_design(&class.shape.basis, &clf.grid)?;
        let log_prior = clf.priors[g].ln();
        for (i, curve) in curves.iter().enumerate() {
            scores[i][g] =
                log_prior + mixrhlp::curve_log_density(&class.params, curve, &design, &covariates)?;
        }
    }
    Ok(scores)
}

fn normalize(scores: &[f64]) -> Vec<f64> {
    let z = lse(scores);
    scores.iter().map(|s| (s - z).exp()).collect()
}

/// Posterior class probabilities of one curve.
pub fn predict_proba(clf: &Classifier, curve: &Curve) -> Result<Vec<f64>> {
    Ok(predict_proba_batch(clf, std::slice::from_ref(curve))?.remove(0))
}

pub fn predict_proba_batch(clf: &Classifier, curves: &[Curve]) -> Result<Vec<Vec<f64>>> {
    Ok(class_log_scores(clf, curves)?
        .iter()
        .map(|s| normalize(s))
        .collect())
}

/// Index of the largest score, ties to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (g, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = g;
        }
    }
    best
}

/// MAP class labels (1-based).
pub fn predict(clf: &Classifier, curves: &[Curve]) -> Result<Vec<usize>> {
    Ok(class_log_scores(clf, curves)?
        .iter()
        .map(|s| argmax(s) + 1)
        .collect())
}
