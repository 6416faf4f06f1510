//! Per-class plot data: sub-class assignments, logistic proportions and
//! mean curves of a fitted classifier.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::basis::{build_design, logistic_covariates};
use crate::data::{Curve, LabeledCurveSet, TimeGrid};
use crate::discriminant::{argmax, predict, Classifier};
use crate::error::{FmdaError, Result};
use crate::mixrhlp::{e_step, regime_mean_curve};
use crate::numeric::logistic_proportions;

#[derive(Debug, Clone)]
pub struct SubclassCurves {
    pub alpha: f64,
    /// `m x R`: `pi_r(t_j)`.
    pub proportions: DMatrix<f64>,
    pub mean: Curve,
}

#[derive(Debug, Clone)]
pub struct ClassExport {
    /// 1-based class label.
    pub class: usize,
    /// Row indices (0-based) of the curves attributed to this class.
    pub curve_indices: Vec<usize>,
    /// MAP sub-class (1-based) of each of those curves.
    pub assignments: Vec<usize>,
    pub subclasses: Vec<SubclassCurves>,
}

/// Plot data of every class. Curves are attributed to classes by their
/// label, or by the classifier's prediction when `set` is unlabeled.
pub fn plot_data(clf: &Classifier, set: &LabeledCurveSet) -> Result<Vec<ClassExport>> {
    clf.check_grid(set.grid())?;
    let labels = if set.is_labeled() {
        if set.n_classes() > clf.n_classes() {
            return Err(FmdaError::invalid(format!(
                "data has label {} but the classifier has {} classes",
                set.n_classes(),
                clf.n_classes()
            )));
        }
        set.labels().to_vec()
    } else {
        predict(clf, set.curves())?
    };
    let covariates = logistic_covariates(&clf.grid);
    let mut out = Vec::with_capacity(clf.n_classes());
    for (g, class) in clf.classes.iter().enumerate() {
        let design = build_design(&class.shape.basis, &clf.grid)?;
        let params = &class.params;
        let curve_indices: Vec<usize> = (0..set.len()).filter(|&i| labels[i] == g + 1).collect();
        let curves: Vec<Curve> = curve_indices
            .iter()
            .map(|&i| set.curves()[i].clone())
            .collect();
        let assignments = if curves.is_empty() {
            vec![]
        } else {
            let post = e_step(params, &curves, &design, &covariates)?;
            (0..curves.len())
                .map(|i| {
                    let row: Vec<f64> = post.gamma.row(i).iter().copied().collect();
                    argmax(&row) + 1
                })
                .collect()
        };
        let subclasses = (0..params.n_subclasses())
            .map(|k| {
                Ok(SubclassCurves {
                    alpha: params.alpha[k],
                    proportions: logistic_proportions(&params.components[k].weights, &covariates),
                    mean: regime_mean_curve(params, k, &design, &covariates)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ClassExport {
            class: g + 1,
            curve_indices,
            assignments,
            subclasses,
        });
    }
    Ok(out)
}

fn write_file(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| FmdaError::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `class{g}_assignments.csv` (`index,subclass`) and
/// `class{g}_subclass{k}.csv` (`t,pi_1..pi_R,mean`) into `dir`.
pub fn write_plot_files(
    exports: &[ClassExport],
    grid: &TimeGrid,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| FmdaError::io(dir, e))?;
    let mut written = Vec::new();
    for class in exports {
        let mut text = String::from("index,subclass\n");
        for (i, s) in class.curve_indices.iter().zip(&class.assignments) {
            writeln!(text, "{i},{s}").unwrap();
        }
        write_file(
            dir.join(format!("class{}_assignments.csv", class.class)),
            &text,
            &mut written,
        )?;

        for (k, sub) in class.subclasses.iter().enumerate() {
            let regimes = sub.proportions.ncols();
            let mut text = String::from("t");
            for r in 1..=regimes {
                write!(text, ",pi_{r}").unwrap();
            }
            text.push_str(",mean\n");
            for (j, t) in grid.times().iter().enumerate() {
                write!(text, "{t}").unwrap();
                for r in 0..regimes {
                    write!(text, ",{}", sub.proportions[(j, r)]).unwrap();
                }
                writeln!(text, ",{}", sub.mean.values()[j]).unwrap();
            }
            write_file(
                dir.join(format!("class{}_subclass{}.csv", class.class, k + 1)),
                &text,
                &mut written,
            )?;
        }
    }
    Ok(written)
}
