//! Cross-validated misclassification error and benchmark tables.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{split_kfold, Fold, LabeledCurveSet};
use crate::discriminant::{predict, train, MethodSpec};
use crate::error::{FmdaError, Result};
use crate::mixrhlp::FitConfig;

/// Fraction of positions where `predicted` differs from `truth`.
pub fn misclassification_rate(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(FmdaError::shape(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(FmdaError::invalid("misclassification rate of an empty set"));
    }
    let wrong = truth.iter().zip(predicted).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Result of one train/test fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldOutcome {
    /// 1-based fold number.
    pub fold: usize,
    pub n_test: usize,
    pub error: Option<f64>,
    pub failure: Option<String>,
    /// Final log-likelihood of each class model.
    pub class_log_likelihoods: Vec<f64>,
    pub class_iterations: Vec<usize>,
    pub class_converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub method: String,
    pub spec: MethodSpec,
    /// Errors of the folds that trained successfully.
    pub fold_errors: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divisor = number of folds).
    pub std: f64,
    /// True when some folds failed and the summary covers the rest only.
    pub partial: bool,
    pub folds: Vec<FoldOutcome>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_fold(
    set: &LabeledCurveSet,
    method: &MethodSpec,
    cfg: &FitConfig,
    index: usize,
    fold: &Fold,
) -> FoldOutcome {
    let train_set = set.subset(&fold.train);
    let test_set = set.subset(&fold.test);
    let mut outcome = FoldOutcome {
        fold: index + 1,
        n_test: fold.test.len(),
        error: None,
        failure: None,
        class_log_likelihoods: vec![],
        class_iterations: vec![],
        class_converged: vec![],
    };
    let result = train(&train_set, method, cfg).and_then(|clf| {
        let predicted = predict(&clf, test_set.curves())?;
        let err = misclassification_rate(test_set.labels(), &predicted)?;
        Ok((clf, err))
    });
    match result {
        Ok((clf, err)) => {
            outcome.error = Some(err);
            for class in &clf.classes {
                outcome
                    .class_log_likelihoods
                    .push(class.diagnostics.log_likelihood);
                outcome.class_iterations.push(class.diagnostics.iterations);
                outcome.class_converged.push(class.diagnostics.converged);
            }
        }
        Err(e) => outcome.failure = Some(e.to_string()),
    }
    outcome
}

/// Cross-validates `method` on precomputed folds.
pub fn cross_validate_on(
    set: &LabeledCurveSet,
    method: &MethodSpec,
    folds: &[Fold],
    cfg: &FitConfig,
) -> Result<CvResult> {
    let outcomes: Vec<FoldOutcome> = folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| run_fold(set, method, cfg, i, fold))
        .collect();
    let fold_errors: Vec<f64> = outcomes.iter().filter_map(|o| o.error).collect();
    if fold_errors.is_empty() {
        let reason = outcomes
            .iter()
            .find_map(|o| o.failure.clone())
            .unwrap_or_else(|| "no folds".to_string());
        return Err(FmdaError::Numerical(format!(
            "{}: every fold failed ({})",
            method.method, reason
        )));
    }
    let (mean, std) = mean_std(&fold_errors);
    Ok(CvResult {
        method: method.method.clone(),
        spec: method.clone(),
        partial: fold_errors.len() < outcomes.len(),
        fold_errors,
        mean,
        std,
        folds: outcomes,
    })
}

/// Stratified `k`-fold cross-validation; `seed` drives the split and
/// `cfg.seed` the model fits.
pub fn cross_validate(
    set: &LabeledCurveSet,
    method: &MethodSpec,
    k: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<CvResult> {
    let folds = split_kfold(set, k, seed)?;
    cross_validate_on(set, method, &folds, cfg)
}

/// Cross-validates every method on the same folds.
pub fn benchmark_table(
    set: &LabeledCurveSet,
    methods: &[MethodSpec],
    k: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<Vec<CvResult>> {
    let folds = split_kfold(set, k, seed)?;
    methods
        .iter()
        .map(|m| cross_validate_on(set, m, &folds, cfg))
        .collect()
}

/// `method,fold,error` rows; failed folds have an empty error.
pub fn results_csv(results: &[CvResult]) -> String {
    let mut out = String::from("method,fold,error\n");
    for r in results {
        for f in &r.folds {
            match f.error {
                Some(e) => writeln!(out, "{},{},{}", r.method, f.fold, e).unwrap(),
                None => writeln!(out, "{},{},", r.method, f.fold).unwrap(),
            }
        }
    }
    out
}

pub fn write_results_csv(results: &[CvResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, results_csv(results)).map_err(|e| FmdaError::io(path, e))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    mean: f64,
    std: f64,
    folds: usize,
    failed_folds: usize,
    partial: bool,
}

/// Per-method mean and population std as pretty JSON.
pub fn summary_json(results: &[CvResult]) -> Result<String> {
    let rows: Vec<SummaryRow> = results
        .iter()
        .map(|r| SummaryRow {
            method: &r.method,
            mean: r.mean,
            std: r.std,
            folds: r.folds.len(),
            failed_folds: r.folds.len() - r.fold_errors.len(),
            partial: r.partial,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "std": "population",
        "methods": rows,
    }))?)
}

/// Plain-text table of error rates in percent.
pub fn format_table(results: &[CvResult]) -> String {
    let width = results
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>14}  {:>22}",
        "method", "mean error (%)", "population std (%)"
    )
    .unwrap();
    for r in results {
        let flag = if r.partial { "  (partial)" } else { "" };
        writeln!(
            out,
            "{:<width$}  {:>14.2}  {:>22.2}{}",
            r.method,
            100.0 * r.mean,
            100.0 * r.std,
            flag
        )
        .unwrap();
    }
    out
}
