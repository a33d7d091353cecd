//! Linear SVM (L2-regularized hinge loss) by dual coordinate descent, with
//! Platt scaling on the training decision values for probabilities.
//!
//! The bias is handled as an extra constant feature, so it is regularized
//! along with the weights.

use ndarray::{Array1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sigmoid, SvmHyper, TrainingSummary};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams<T> {
    pub weights: Array1<T>,
    pub intercept: T,
    /// Platt sigmoid: `P(y = 1 | f) = 1 / (1 + exp(a f + b))`.
    pub platt_a: T,
    pub platt_b: T,
}

impl<T: Scalar> SvmParams<T> {
    pub fn decision(&self, x: ArrayView2<T>) -> Array1<T> {
        x.dot(&self.weights) + self.intercept
    }

    pub fn proba(&self, x: ArrayView2<T>) -> Vec<T> {
        self.decision(x)
            .iter()
            .map(|&f| sigmoid(-(self.platt_a * f + self.platt_b)))
            .collect()
    }
}

pub(super) fn fit<T: Scalar>(x: ArrayView2<T>, y: &[bool], h: &SvmHyper, seed: u64, summary: &mut TrainingSummary) -> SvmParams<T> {
    let (n, d) = x.dim();
    let rows: Vec<Vec<f64>> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.as_f64()).chain(std::iter::once(1.0)).collect())
        .collect();
    let sign: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let qii: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let c = h.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, &["svm"]);
    let mut converged = false;
    let mut epochs = 0;
    while epochs < h.max_epochs {
        epochs += 1;
        order.shuffle(&mut r);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = sign[i] * rows[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 && qii[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * sign[i];
                for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                    *wj += delta * xj;
                }
            }
        }
        if pg_max - pg_min < h.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("linear SVM stopped after {epochs} epochs without reaching tol {}", h.tol);
    }
    summary.iterations = epochs;
    summary.converged = converged;

    let decisions: Vec<f64> = rows.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let (a, b) = platt(&decisions, y);
    SvmParams {
        weights: w.iter().take(d).map(|&v| T::lit(v)).collect(),
        intercept: T::lit(w[d]),
        platt_a: T::lit(a),
        platt_b: T::lit(b),
    }
}

/// Platt's sigmoid fit with the regularized targets and the Newton /
/// backtracking scheme of Lin, Lin and Weng.
pub(super) fn platt(f: &[f64], y: &[bool]) -> (f64, f64) {
    let n_pos = y.iter().filter(|&&l| l).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = y.iter().map(|&l| if l { hi } else { lo }).collect();
    let (mut a, mut b) = (0.0, ((n_neg + 1.0) / (n_pos + 1.0)).ln());
    let sigma = 1e-12;
    let fval = |a: f64, b: f64| -> f64 {
        f.iter()
            .zip(&t)
            .map(|(&fi, &ti)| {
                let fa = fi * a + b;
                if fa >= 0.0 {
                    ti * fa + (-fa).exp().ln_1p()
                } else {
                    (ti - 1.0) * fa + fa.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut obj = fval(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&fi, &ti) in f.iter().zip(&t) {
            let fa = fi * a + b;
            let (p, q) = if fa >= 0.0 {
                let e = (-fa).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = fa.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = ti - p;
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nobj = fval(na, nb);
            if nobj < obj + 1e-4 * step * gd {
                a = na;
                b = nb;
                obj = nobj;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}
