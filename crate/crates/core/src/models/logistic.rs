//! L2-penalized logistic regression fit by damped Newton steps.
//!
//! Objective: `sum_i [log(1 + e^{z_i}) - y_i z_i] + |w|^2 / (2C)` with
//! `z = X w + b`; the intercept is not penalized.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{sigmoid, LrHyper, TrainingSummary};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams<T> {
    pub weights: Array1<T>,
    pub intercept: T,
}

impl<T: Scalar> LinearParams<T> {
    pub fn decision(&self, x: ArrayView2<T>) -> Array1<T> {
        x.dot(&self.weights) + self.intercept
    }

    pub fn proba(&self, x: ArrayView2<T>) -> Vec<T> {
        self.decision(x).iter().map(|&z| sigmoid(z)).collect()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(xa: &Array2<f64>, y: &[f64], theta: &Array1<f64>, inv_c: f64) -> f64 {
    let d = theta.len() - 1;
    let z = xa.dot(theta);
    let data: f64 = z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum();
    let pen: f64 = theta.iter().take(d).map(|w| w * w).sum::<f64>() * inv_c / 2.0;
    data + pen
}

/// Newton iterations run in f64 regardless of `T`; only the result is cast.
pub(super) fn fit<T: Scalar>(x: ArrayView2<T>, y: &[bool], h: &LrHyper, summary: &mut TrainingSummary) -> Result<LinearParams<T>> {
    if !(h.c > 0.0) {
        return Err(Error::InvalidConfig("LR C must be positive".into()));
    }
    let (n, d) = x.dim();
    // augmented design: last column is the intercept
    let mut xa = Array2::<f64>::ones((n, d + 1));
    for ((i, j), v) in x.indexed_iter() {
        xa[[i, j]] = v.as_f64();
    }
    let yf: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let inv_c = 1.0 / h.c;
    let mut theta = Array1::<f64>::zeros(d + 1);
    let mut obj = objective(&xa, &yf, &theta, inv_c);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..h.max_iter {
        let z = xa.dot(&theta);
        let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
        let resid = Array1::from_iter(p.iter().zip(&yf).map(|(p, y)| p - y));
        let mut grad = xa.t().dot(&resid);
        for j in 0..d {
            grad[j] += theta[j] * inv_c;
        }
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < h.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut weighted = xa.clone();
        for (mut row, &pi) in weighted.axis_iter_mut(Axis(0)).zip(&p) {
            row *= (pi * (1.0 - pi)).max(1e-12);
        }
        let mut hess = xa.t().dot(&weighted);
        for j in 0..d {
            hess[[j, j]] += inv_c;
        }
        let step = match cholesky_solve(hess.view(), grad.view()) {
            Some(s) => s,
            None => grad.clone(),
        };
        // backtracking until the objective decreases
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &theta - &(&step * t);
            let cand_obj = objective(&xa, &yf, &cand, inv_c);
            if cand_obj <= obj {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        summary.loss_curve.push(obj);
        if !accepted {
            break;
        }
    }
    if !converged {
        log::warn!("logistic regression stopped after {iterations} iterations without reaching tol {}", h.tol);
    }
    summary.iterations = iterations;
    summary.converged = converged;
    Ok(LinearParams {
        weights: theta.iter().take(d).map(|&v| T::lit(v)).collect(),
        intercept: T::lit(theta[d]),
    })
}
