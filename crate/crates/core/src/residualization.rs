//! Regressing covariates out of every feature column by ordinary least
//! squares. The fit happens on training rows only; applying the model to
//! other rows never refits.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Qr;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel<T> {
    pub covariate_names: Vec<String>,
    /// `(1 + covariates, features)`; row 0 holds the intercepts.
    pub coefficients: Array2<T>,
    pub fit_n: usize,
    /// Per-covariate range seen at fit time, for extrapolation warnings.
    pub fit_min: Vec<T>,
    pub fit_max: Vec<T>,
}

fn design<T: Scalar>(c: ArrayView2<T>) -> Array2<T> {
    let mut d = Array2::<T>::ones((c.nrows(), c.ncols() + 1));
    d.slice_mut(s![.., 1..]).assign(&c);
    d
}

/// Per-feature OLS of `x` on `[1, c]`.
pub fn fit_residualizer<T: Scalar>(x: ArrayView2<T>, c: ArrayView2<T>, names: &[String]) -> Result<ResidualModel<T>> {
    if x.nrows() != c.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: c.nrows(),
        });
    }
    if names.len() != c.ncols() {
        return Err(Error::CovariateMismatch(format!("{} names for {} covariate columns", names.len(), c.ncols())));
    }
    if x.nrows() < c.ncols() + 1 {
        return Err(Error::TooFewRows {
            need: c.ncols() + 1,
            got: x.nrows(),
        });
    }
    let qr = Qr::new(design(c).view());
    let deficient = qr.deficient_columns();
    if !deficient.is_empty() {
        let cols = deficient
            .iter()
            .map(|&k| if k == 0 { "intercept".to_string() } else { names[k - 1].clone() })
            .collect();
        return Err(Error::RankDeficient(cols));
    }
    let coefficients = qr.solve(x);
    let fold = |init: T, pick: fn(T, T) -> T| -> Vec<T> { c.axis_iter(Axis(1)).map(|col| col.iter().fold(init, |a, &b| pick(a, b))).collect() };
    Ok(ResidualModel {
        covariate_names: names.to_vec(),
        coefficients,
        fit_n: x.nrows(),
        fit_min: fold(T::infinity(), T::min),
        fit_max: fold(T::neg_infinity(), T::max),
    })
}

impl<T: Scalar> ResidualModel<T> {
    /// `x - [1, c] B`. Rows with any covariate outside the fit range are
    /// counted and logged; their residuals are still computed.
    pub fn apply(&self, x: ArrayView2<T>, c: ArrayView2<T>, names: &[String]) -> Result<(Array2<T>, usize)> {
        if names != self.covariate_names.as_slice() {
            return Err(Error::CovariateMismatch(format!(
                "expected covariates {:?}, got {:?}",
                self.covariate_names, names
            )));
        }
        if c.ncols() != names.len() || x.nrows() != c.nrows() {
            return Err(Error::CovariateMismatch("covariate matrix does not match the feature rows".into()));
        }
        if x.ncols() != self.coefficients.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.ncols(),
                got: x.ncols(),
            });
        }
        let predicted = design(c).dot(&self.coefficients);
        let extrapolated = c
            .axis_iter(Axis(0))
            .filter(|row| {
                row.iter()
                    .enumerate()
                    .any(|(k, &v)| v < self.fit_min[k] || v > self.fit_max[k])
            })
            .count();
        if extrapolated > 0 {
            log::warn!("{extrapolated} rows have covariates outside the fitted range; residuals are extrapolated");
        }
        Ok((&x - &predicted, extrapolated))
    }
}

/// Drops covariate columns that are constant over the given rows (they
/// duplicate the intercept). Returns the kept column indices.
pub fn non_constant_columns<T: Scalar>(c: ArrayView2<T>) -> Vec<usize> {
    c.axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().any(|&v| v != col[0]))
        .map(|(k, _)| k)
        .collect()
}
