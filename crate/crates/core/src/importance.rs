//! Feature impact: per-view scores scaled to [0, 1], their average, and
//! leave-one-region-out drop counts.

use std::io::Write;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{RoiId, RoiRegistry};
use crate::ensemble_eval::{compute_metrics, Metric};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng;
use crate::scalar::Scalar;

/// `(v - min) / (max - min)`; a constant vector maps to zeros.
pub fn normalize01(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| (x - lo) / span).collect()
}

/// Per-feature mean over the views that are present. Computed as offsets
/// from the first view so identical views reproduce it exactly.
pub fn aggregate_views(views: &[Option<&[f64]>]) -> Vec<f64> {
    let present: Vec<&[f64]> = views.iter().flatten().copied().collect();
    let Some(first) = present.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|j| first[j] + present.iter().map(|v| v[j] - first[j]).sum::<f64>() / present.len() as f64)
        .collect()
}

fn score<T: Scalar, P: Predictor<T> + ?Sized>(model: &P, x: ArrayView2<T>, y: &[bool], metric: Metric) -> Result<f64> {
    let probs = model.predict_proba(x)?;
    let labels: Vec<bool> = probs.iter().map(|&p| p >= T::lit(0.5)).collect();
    Ok(compute_metrics(y, &probs, &labels)?.get(metric).unwrap_or(0.0))
}

/// Baseline metric minus the mean metric over `repeats` shuffles of each
/// column, floored at 0. Each column and repeat uses its own keyed stream.
pub fn permutation_importance<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    x: ArrayView2<T>,
    y: &[bool],
    repeats: usize,
    metric: Metric,
    seed: u64,
) -> Result<Vec<f64>> {
    let baseline = score(model, x, y, metric)?;
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut xs = x.to_owned();
            let mut total = 0.0;
            for r in 0..repeats.max(1) {
                let mut col: Vec<T> = x.column(j).to_vec();
                col.shuffle(&mut rng::stream(seed, &["permutation-importance", &j.to_string(), &r.to_string()]));
                xs.column_mut(j).iter_mut().zip(col).for_each(|(d, s)| *d = s);
                total += score(model, xs.view(), y, metric)?;
            }
            Ok((baseline - total / repeats.max(1) as f64).max(0.0))
        })
        .collect()
}

/// Replaces column `r` by `fill[r]` and counts classifiers whose accuracy
/// strictly drops, for every column.
pub fn leave_one_region_out<T: Scalar>(classifiers: &[&dyn Predictor<T>], x: ArrayView2<T>, y: &[bool], fill: &[T]) -> Result<Vec<usize>> {
    if fill.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: fill.len(),
        });
    }
    let baselines = classifiers
        .iter()
        .map(|c| score(*c, x, y, Metric::Accuracy))
        .collect::<Result<Vec<_>>>()?;
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut xs = x.to_owned();
            xs.column_mut(j).fill(fill[j]);
            let mut drops = 0;
            for (c, &base) in classifiers.iter().zip(&baselines) {
                if score(*c, xs.view(), y, Metric::Accuracy)? < base {
                    drops += 1;
                }
            }
            Ok(drops)
        })
        .collect()
}

/// Column means, used as the neutral fill for leave-one-region-out.
pub fn column_means<T: Scalar>(x: ArrayView2<T>) -> Vec<T> {
    let n = T::from_usize_lossy(x.nrows().max(1));
    x.axis_iter(Axis(1)).map(|c| c.iter().copied().sum::<T>() / n).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub roi_ids: Vec<RoiId>,
    pub forest: Option<Vec<f64>>,
    pub linear: Option<Vec<f64>>,
    pub permutation: Option<Vec<f64>>,
    pub aggregated: Vec<f64>,
    pub loro_drop_counts: Vec<usize>,
    pub n_classifiers: usize,
}

impl ImportanceMap {
    /// Normalizes each raw view to [0, 1] and averages the present ones.
    pub fn from_raw(
        roi_ids: Vec<RoiId>,
        forest: Option<Vec<f64>>,
        linear: Option<Vec<f64>>,
        permutation: Option<Vec<f64>>,
        loro_drop_counts: Vec<usize>,
        n_classifiers: usize,
    ) -> Self {
        let forest = forest.map(|v| normalize01(&v));
        let linear = linear.map(|v| normalize01(&v));
        let permutation = permutation.map(|v| normalize01(&v));
        let aggregated = aggregate_views(&[forest.as_deref(), linear.as_deref(), permutation.as_deref()]);
        ImportanceMap {
            roi_ids,
            forest,
            linear,
            permutation,
            aggregated,
            loro_drop_counts,
            n_classifiers,
        }
    }

    /// ROIs ordered by aggregated importance, highest first (ties by id).
    pub fn top(&self, k: usize) -> Vec<RoiId> {
        let mut order: Vec<usize> = (0..self.roi_ids.len()).collect();
        order.sort_by(|&a, &b| {
            self.aggregated[b]
                .partial_cmp(&self.aggregated[a])
                .expect("finite")
                .then(self.roi_ids[a].cmp(&self.roi_ids[b]))
        });
        order.into_iter().take(k).map(|j| self.roi_ids[j]).collect()
    }

    /// One row per registry ROI; ROIs outside the map get zeros.
    pub fn write_csv<W: Write>(&self, registry: &RoiRegistry, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "roi_id",
            "roi_name",
            "atlas",
            "view_forest",
            "view_linear",
            "view_permutation",
            "aggregated",
            "loro_drop_count",
        ])?;
        let view = |v: &Option<Vec<f64>>, j: Option<usize>| match (v, j) {
            (Some(v), Some(j)) => v[j].to_string(),
            (None, _) => String::new(),
            (Some(_), None) => "0".to_string(),
        };
        for e in registry.entries() {
            let j = self.roi_ids.iter().position(|&r| r == e.id);
            out.write_record([
                e.id.0.to_string(),
                e.name.clone(),
                e.atlas.as_str().to_string(),
                view(&self.forest, j),
                view(&self.linear, j),
                view(&self.permutation, j),
                j.map_or("0".to_string(), |j| self.aggregated[j].to_string()),
                j.map_or("0".to_string(), |j| self.loro_drop_counts[j].to_string()),
            ])?;
        }
        out.flush().map_err(|e| Error::io("importance csv", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, Family, ModelSpec};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize01(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize01(&[5.0, 5.0, 5.0]), vec![0.0; 3]);
        assert_eq!(normalize01(&[3.0]), vec![0.0]);
    }

    #[test]
    fn aggregate_examples() {
        let (a, b, c) = ([0.2], [0.4], [0.6]);
        assert!((aggregate_views(&[Some(&a), Some(&b), Some(&c)])[0] - 0.4).abs() < 1e-15);
        assert!((aggregate_views(&[Some(&a), None, Some(&c)])[0] - 0.4).abs() < 1e-15);
        let v = [0.1, 0.9];
        assert_eq!(aggregate_views(&[Some(&v), Some(&v), Some(&v)]), v.to_vec());
    }

    fn label_copy(n: usize, noise_cols: usize, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, 1 + noise_cols), |(i, j)| if j == 0 { f64::from(u8::from(y[i])) } else { r.random() });
        (x, y)
    }

    fn ids(d: usize) -> Vec<RoiId> {
        (1..=d as u16).map(RoiId).collect()
    }

    #[test]
    fn label_copy_importance_near_one_half() {
        let (x, y) = label_copy(200, 0, 1);
        let m = fit(&ModelSpec::new(Family::Dt, 0), x.view(), &y, &ids(1)).unwrap();
        let imp = permutation_importance(&m, x.view(), &y, 10, Metric::Accuracy, 3).unwrap();
        assert!(imp[0] > 0.0 && (imp[0] - 0.5).abs() < 0.1, "{imp:?}");
    }

    #[test]
    fn unused_noise_column_scores_exactly_zero() {
        let (x, y) = label_copy(100, 1, 2);
        let mut spec = ModelSpec::new(Family::Dt, 0);
        spec.hyper = crate::models::Hyper::Dt(crate::models::TreeHyper {
            max_depth: 1,
            min_samples_split: 2,
        });
        let m = fit(&spec, x.view(), &y, &ids(2)).unwrap();
        let imp = permutation_importance(&m, x.view(), &y, 10, Metric::Accuracy, 3).unwrap();
        assert_eq!(imp[1], 0.0);
    }

    #[test]
    fn duplicated_columns_share_credit() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let signal: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 } + 0.8 * r.random::<f64>() - 0.4).collect();
        let single = Array2::from_shape_fn((n, 1), |(i, _)| signal[i]);
        let double = Array2::from_shape_fn((n, 2), |(i, _)| signal[i]);
        let m1 = fit(&ModelSpec::new(Family::Lr, 0), single.view(), &y, &ids(1)).unwrap();
        let m2 = fit(&ModelSpec::new(Family::Lr, 0), double.view(), &y, &ids(2)).unwrap();
        let i1 = permutation_importance(&m1, single.view(), &y, 10, Metric::Accuracy, 1).unwrap();
        let i2 = permutation_importance(&m2, double.view(), &y, 10, Metric::Accuracy, 1).unwrap();
        assert!(i2[0] < i1[0] && i2[1] < i1[0], "{i1:?} {i2:?}");
    }

    #[test]
    fn repeated_runs_agree() {
        let (x, y) = label_copy(120, 3, 5);
        let m = fit(&ModelSpec::new(Family::Rf, 0), x.view(), &y, &ids(4)).unwrap();
        let a = permutation_importance(&m, x.view(), &y, 10, Metric::Accuracy, 1).unwrap();
        let b = permutation_importance(&m, x.view(), &y, 10, Metric::Accuracy, 2).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 0.05);
        }
    }

    #[test]
    fn loro_counts_and_untouched_columns() {
        let (x, y) = label_copy(100, 2, 6);
        let dt = fit(&ModelSpec::new(Family::Dt, 0), x.view(), &y, &ids(3)).unwrap();
        let lr = fit(&ModelSpec::new(Family::Lr, 0), x.view(), &y, &ids(3)).unwrap();
        let fill = column_means(x.view());
        let counts = leave_one_region_out(&[&dt, &lr], x.view(), &y, &fill).unwrap();
        assert_eq!(counts[0], 2);
        assert!(counts.iter().all(|&c| c <= 2));
        // the tree never splits on column 2, so neutralizing it changes nothing
        let mut xs = x.clone();
        xs.column_mut(2).fill(fill[2]);
        let Params::Dt(t) = &dt.params else { unreachable!() };
        assert!(t.nodes.iter().all(|n| !matches!(n, crate::models::Node::Split { feature: 2, .. })));
        assert_eq!(dt.predict_proba(xs.view()).unwrap(), dt.predict_proba(x.view()).unwrap());
    }

    use crate::models::Params;

    #[test]
    fn csv_covers_registry() {
        let reg = RoiRegistry::standard();
        let map = ImportanceMap::from_raw(
            vec![RoiId(2), RoiId(5)],
            Some(vec![0.1, 0.3]),
            None,
            Some(vec![0.0, 0.2]),
            vec![1, 4],
            6,
        );
        assert_eq!(map.aggregated, vec![0.0, 1.0]);
        assert_eq!(map.top(1), vec![RoiId(5)]);
        let mut buf = Vec::new();
        map.write_csv(&reg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + reg.len());
        assert!(lines[0].starts_with("roi_id,roi_name,atlas,view_forest"));
        assert!(lines[5].ends_with(",1,,1,1,4"), "{}", lines[5]);
        assert!(lines[1].ends_with(",0,,0,0,0"), "{}", lines[1]);
    }
}
