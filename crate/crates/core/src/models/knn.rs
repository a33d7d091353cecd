//! k-nearest-neighbour voting with Euclidean distance. Distance ties go to
//! the lower training index.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::KnnHyper;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnParams<T> {
    pub k: usize,
    pub train_x: Array2<T>,
    pub train_y: Vec<bool>,
}

/// Squared Euclidean distance with eight independent accumulators, so the
/// loop vectorizes while the summation order stays fixed.
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] = acc[l] + d * d;
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + (x - y) * (x - y);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl<T: Scalar> KnnParams<T> {
    pub fn proba(&self, x: ArrayView2<T>) -> Vec<T> {
        let k = self.k.min(self.train_y.len()).max(1);
        let train = self.train_x.as_standard_layout();
        let train = train.as_slice().expect("standard layout");
        let d = self.train_x.ncols();
        let mut dist: Vec<(T, usize)> = Vec::with_capacity(self.train_y.len());
        x.rows()
            .into_iter()
            .map(|q| {
                let q = q.to_vec();
                dist.clear();
                dist.extend((0..self.train_y.len()).map(|i| (sq_dist(&train[i * d..(i + 1) * d], &q), i)));
                let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, cmp);
                }
                let votes = dist[..k].iter().filter(|(_, i)| self.train_y[*i]).count();
                T::from_usize_lossy(votes) / T::from_usize_lossy(k)
            })
            .collect()
    }
}

pub(super) fn fit<T: Scalar>(x: ArrayView2<T>, y: &[bool], h: &KnnHyper) -> KnnParams<T> {
    KnnParams {
        k: h.k.max(1),
        train_x: x.to_owned(),
        train_y: y.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vote_fraction_with_index_tiebreak() {
        // query at 0: distances 1,1,1,2,2,3; the k=5 set takes indices 0..4
        let x = array![[1.0], [-1.0], [1.0], [2.0], [-2.0], [3.0]];
        let y = [true, false, true, false, true, true];
        let p = fit(x.view(), &y, &KnnHyper { k: 5 });
        assert_eq!(p.proba(array![[0.0]].view()), vec![3.0 / 5.0]);
        let p1 = fit(x.view(), &y, &KnnHyper { k: 1 });
        assert_eq!(p1.proba(array![[0.0]].view()), vec![1.0]);
    }

    #[test]
    fn k_clamped_to_training_size() {
        let x = array![[0.0], [1.0]];
        let p = fit(x.view(), &[true, false], &KnnHyper { k: 5 });
        assert_eq!(p.proba(array![[0.0]].view()), vec![0.5]);
    }
}
