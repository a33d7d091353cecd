//! Small dense solvers used by the linear models and the residualizer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::scalar::Scalar;

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky.
/// Returns `None` if a pivot is not strictly positive.
pub fn cholesky_solve<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> Option<Array1<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

/// Householder QR of a tall matrix, kept in compact form.
pub struct Qr<T> {
    /// Householder vectors below the diagonal, R on and above it.
    qr: Array2<T>,
    /// Diagonal of R.
    rdiag: Array1<T>,
}

impl<T: Scalar> Qr<T> {
    pub fn new(a: ArrayView2<T>) -> Self {
        let (m, n) = a.dim();
        let mut qr = a.to_owned();
        let mut rdiag = Array1::<T>::zeros(n);
        for k in 0..n.min(m) {
            let mut nrm = T::zero();
            for i in k..m {
                nrm = nrm.hypot(qr[[i, k]]);
            }
            if nrm != T::zero() {
                if qr[[k, k]] < T::zero() {
                    nrm = -nrm;
                }
                for i in k..m {
                    qr[[i, k]] = qr[[i, k]] / nrm;
                }
                qr[[k, k]] = qr[[k, k]] + T::one();
                for j in (k + 1)..n {
                    let mut s = T::zero();
                    for i in k..m {
                        s = s + qr[[i, k]] * qr[[i, j]];
                    }
                    s = -s / qr[[k, k]];
                    for i in k..m {
                        qr[[i, j]] = qr[[i, j]] + s * qr[[i, k]];
                    }
                }
            }
            rdiag[k] = -nrm;
        }
        Qr { qr, rdiag }
    }

    /// Column indices whose R diagonal is negligible relative to the largest.
    pub fn deficient_columns(&self) -> Vec<usize> {
        let max = self
            .rdiag
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
        let (m, n) = self.qr.dim();
        let tol = max * T::epsilon() * T::from_usize_lossy(m.max(n)) * T::lit(10.0);
        self.rdiag
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() <= tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Least-squares solution for each column of `b`. Assumes full column rank.
    pub fn solve(&self, b: ArrayView2<T>) -> Array2<T> {
        let (m, n) = self.qr.dim();
        let mut x = b.to_owned();
        let nb = x.ncols();
        for k in 0..n {
            for j in 0..nb {
                let mut s = T::zero();
                for i in k..m {
                    s = s + self.qr[[i, k]] * x[[i, j]];
                }
                s = -s / self.qr[[k, k]];
                for i in k..m {
                    x[[i, j]] = x[[i, j]] + s * self.qr[[i, k]];
                }
            }
        }
        for k in (0..n).rev() {
            for j in 0..nb {
                x[[k, j]] = x[[k, j]] / self.rdiag[k];
            }
            for i in 0..k {
                for j in 0..nb {
                    x[[i, j]] = x[[i, j]] - x[[k, j]] * self.qr[[i, k]];
                }
            }
        }
        x.slice(ndarray::s![0..n, ..]).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a: Array2<f64> = array![[4.0, 2.0], [2.0, 3.0]];
        let b: Array1<f64> = array![2.0, 1.0];
        let x = cholesky_solve(a.view(), b.view()).unwrap();
        assert!((a.dot(&x) - &b).iter().all(|v| v.abs() < 1e-12));
        assert!(cholesky_solve::<f64>(array![[0.0]].view(), array![1.0].view()).is_none());
    }

    #[test]
    fn qr_least_squares_exact_fit() {
        let a: Array2<f64> = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let b = array![[1.0], [3.0], [5.0], [7.0]];
        let qr = Qr::new(a.view());
        assert!(qr.deficient_columns().is_empty());
        let x = qr.solve(b.view());
        assert!((x[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((x[[1, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn qr_flags_collinear_column() {
        let a: Array2<f64> = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert_eq!(Qr::new(a.view()).deficient_columns(), vec![1]);
    }
}
