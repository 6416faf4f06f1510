//! Regression design matrices (polynomial and clamped B-spline bases) and the
//! covariates of the logistic regime process.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TimeGrid;
use crate::error::{FmdaError, Result};

/// Function basis behind each regression mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BasisSpec {
    /// `1, t, ..., t^degree`.
    Polynomial { degree: usize },
    /// B-splines of the given order (degree + 1) over `knots` uniform
    /// interior knots with clamped boundary knots.
    Bspline { order: usize, knots: usize },
}

impl BasisSpec {
    pub fn dim(&self) -> usize {
        match *self {
            BasisSpec::Polynomial { degree } => degree + 1,
            BasisSpec::Bspline { order, knots } => order + knots,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if let BasisSpec::Bspline { order: 0, .. } = self {
            return Err(FmdaError::invalid("B-spline order must be >= 1"));
        }
        if self.dim() > m {
            return Err(FmdaError::invalid(format!(
                "basis dimension {} exceeds {} sampling points (underdetermined design)",
                self.dim(),
                m
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisSpec::Polynomial { degree } => write!(f, "poly(degree={degree})"),
            BasisSpec::Bspline { order, knots } => {
                write!(f, "bspline(order={order}, knots={knots})")
            }
        }
    }
}

/// `m x d` matrix whose row `j` holds the basis functions evaluated at `t_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(DMatrix<f64>);

impl DesignMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(FmdaError::Numerical(
                "design matrix has non-finite entries".into(),
            ));
        }
        Ok(DesignMatrix(matrix))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    /// `row_j . beta`
    pub fn row_dot(&self, j: usize, beta: &[f64]) -> f64 {
        beta.iter()
            .enumerate()
            .map(|(c, b)| self.0[(j, c)] * b)
            .sum()
    }
}

pub fn build_design(spec: &BasisSpec, grid: &TimeGrid) -> Result<DesignMatrix> {
    let m = grid.len();
    spec.validate(m)?;
    let t = grid.times();
    let matrix = match *spec {
        BasisSpec::Polynomial { degree } => {
            DMatrix::from_fn(m, degree + 1, |j, c| t[j].powi(c as i32))
        }
        BasisSpec::Bspline { order, knots } => bspline_design(t, order, knots),
    };
    DesignMatrix::from_matrix(matrix)
}

/// Clamped knot vector: `order` copies of each end plus `interior` uniform knots.
pub fn clamped_knots(start: f64, end: f64, order: usize, interior: usize) -> Vec<f64> {
    let mut knots = Vec::with_capacity(2 * order + interior);
    knots.extend(std::iter::repeat_n(start, order));
    for i in 1..=interior {
        knots.push(start + (end - start) * i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(end, order));
    knots
}

fn bspline_design(t: &[f64], order: usize, interior: usize) -> DMatrix<f64> {
    let m = t.len();
    let degree = order - 1;
    let n_basis = order + interior;
    let knots = clamped_knots(t[0], t[m - 1], order, interior);
    let mut matrix = DMatrix::zeros(m, n_basis);
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    let mut values = vec![0.0; order];
    for (j, &x) in t.iter().enumerate() {
        let span = find_span(&knots, degree, n_basis, x);
        // de Boor / Cox recursion on the non-zero triangle.
        values[0] = 1.0;
        for d in 1..=degree {
            left[d] = x - knots[span + 1 - d];
            right[d] = knots[span + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let temp = values[r] / (right[r + 1] + left[d - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            values[d] = saved;
        }
        for (r, &v) in values.iter().enumerate() {
            matrix[(j, span - degree + r)] = v;
        }
    }
    matrix
}

/// Index `s` with `knots[s] <= x < knots[s + 1]`; the right end maps to the last span.
fn find_span(knots: &[f64], degree: usize, n_basis: usize, x: f64) -> usize {
    if x >= knots[n_basis] {
        return n_basis - 1;
    }
    let (mut lo, mut hi) = (degree, n_basis);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// `m x 2` matrix with rows `(1, t_j)`.
pub fn logistic_covariates(grid: &TimeGrid) -> DMatrix<f64> {
    let t = grid.times();
    DMatrix::from_fn(t.len(), 2, |j, c| if c == 0 { 1.0 } else { t[j] })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive Cox-de Boor definition, right-continuous except at
    /// the last knot.
    fn cox_de_boor(knots: &[f64], i: usize, order: usize, x: f64, n_basis: usize) -> f64 {
        if order == 1 {
            let last = *knots.last().unwrap();
            let inside = knots[i] <= x && x < knots[i + 1];
            return if inside || (x == last && i == n_basis - 1) {
                1.0
            } else {
                0.0
            };
        }
        let mut out = 0.0;
        let d1 = knots[i + order - 1] - knots[i];
        if d1 > 0.0 {
            out += (x - knots[i]) / d1 * cox_de_boor(knots, i, order - 1, x, n_basis);
        }
        let d2 = knots[i + order] - knots[i + 1];
        if d2 > 0.0 {
            out += (knots[i + order] - x) / d2 * cox_de_boor(knots, i + 1, order - 1, x, n_basis);
        }
        out
    }

    #[test]
    fn constant_polynomial() {
        let grid = TimeGrid::uniform(0.0, 3.0, 7).unwrap();
        let d = build_design(&BasisSpec::Polynomial { degree: 0 }, &grid).unwrap();
        assert_eq!(d.dim(), 1);
        assert!(d.matrix().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn vandermonde_rows() {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let d = build_design(&BasisSpec::Polynomial { degree: 2 }, &grid).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 4.0]);
        assert_eq!(d.matrix(), &expected);
    }

    #[test]
    fn underdetermined_rejected() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        assert!(build_design(&BasisSpec::Polynomial { degree: 4 }, &grid).is_err());
        assert!(build_design(&BasisSpec::Bspline { order: 4, knots: 0 }, &grid).is_ok());
        assert!(build_design(&BasisSpec::Bspline { order: 4, knots: 1 }, &grid).is_err());
        assert!(build_design(&BasisSpec::Bspline { order: 0, knots: 2 }, &grid).is_err());
    }

    #[test]
    fn bspline_matches_recursive_definition() {
        let grid = TimeGrid::new(vec![-1.0, -0.7, -0.2, 0.0, 0.13, 0.5, 0.9, 1.4, 2.0]).unwrap();
        for order in 1..=4 {
            for interior in 0..=3 {
                let d = build_design(
                    &BasisSpec::Bspline {
                        order,
                        knots: interior,
                    },
                    &grid,
                )
                .unwrap();
                let knots = clamped_knots(-1.0, 2.0, order, interior);
                let n_basis = order + interior;
                for (j, &x) in grid.times().iter().enumerate() {
                    for i in 0..n_basis {
                        let expected = cox_de_boor(&knots, i, order, x, n_basis);
                        let got = d.matrix()[(j, i)];
                        assert!(
                            (got - expected).abs() < 1e-12,
                            "order {order} q {interior} j {j} i {i}: {got} vs {expected}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bspline_partition_of_unity_and_support() {
        let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        let d = build_design(&BasisSpec::Bspline { order: 4, knots: 8 }, &grid).unwrap();
        assert_eq!(d.dim(), 12);
        for row in d.matrix().row_iter() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-12);
            let nz: Vec<usize> = (0..row.len()).filter(|&c| row[c] != 0.0).collect();
            assert!(nz.len() <= 4);
            assert!(nz.windows(2).all(|w| w[1] == w[0] + 1));
        }
        // Clamped ends interpolate.
        assert_eq!(d.matrix()[(0, 0)], 1.0);
        assert_eq!(d.matrix()[(199, 11)], 1.0);
    }

    #[test]
    fn covariates() {
        let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let c = logistic_covariates(&grid);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        let grid = TimeGrid::new(vec![-3.0, 0.25, 7.0]).unwrap();
        let c = logistic_covariates(&grid);
        assert!(c.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(
            c.column(1).iter().copied().collect::<Vec<_>>(),
            grid.times()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn polynomial_entries_are_powers(mut ts in prop::collection::vec(-3.0f64..3.0, 4..20), degree in 0usize..4) {
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                prop_assume!(ts.len() > degree + 1);
                let grid = TimeGrid::new(ts.clone()).unwrap();
                let d = build_design(&BasisSpec::Polynomial { degree }, &grid).unwrap();
                for (j, t) in ts.iter().enumerate() {
                    for c in 0..=degree {
                        prop_assert_eq!(d.matrix()[(j, c)], t.powi(c as i32));
                    }
                }
            }

            #[test]
            fn bspline_rows_sum_to_one(mut ts in prop::collection::vec(-5.0f64..5.0, 12..40), order in 1usize..5, knots in 0usize..6) {
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                prop_assume!(ts.len() >= order + knots && ts.len() >= 2);
                let grid = TimeGrid::new(ts).unwrap();
                let d = build_design(&BasisSpec::Bspline { order, knots }, &grid).unwrap();
                for row in d.matrix().row_iter() {
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
