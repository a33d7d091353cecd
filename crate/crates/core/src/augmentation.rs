//! Segment balancing for training folds: SMOTE interpolation inside each
//! (subject, condition) segment, a light Gaussian perturbation, and trimming
//! or extension to a fixed number of runs per segment.
//!
//! Only training rows ever reach this module; callers pass the train slice.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Condition, RoiId, SampleMeta};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub target_runs_per_segment: usize,
    pub k_cap: usize,
    /// Noise SD as a fraction of the column SD.
    pub noise_level: f64,
    pub retention_degree: f64,
    /// Fraction of columns perturbed per pass.
    pub interpolation_proportion: f64,
    pub seed: u64,
    /// Also perturb original rows, not only synthetic ones.
    pub perturb_originals: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            target_runs_per_segment: 27,
            k_cap: 5,
            noise_level: 0.05,
            retention_degree: 0.5,
            interpolation_proportion: 0.8,
            seed: 42,
            perturb_originals: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("augment: {m}")));
        if self.target_runs_per_segment < 1 {
            return bad("target_runs_per_segment must be >= 1");
        }
        if self.k_cap < 1 {
            return bad("k_cap must be >= 1");
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.retention_degree) {
            return bad("retention_degree must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.interpolation_proportion) {
            return bad("interpolation_proportion must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Neighbour count for a class of `min_class_size` rows: `min(cap, size - 1)`.
/// `None` when SMOTE is infeasible.
pub fn smote_k(min_class_size: usize, k_cap: usize) -> Option<usize> {
    (min_class_size >= 2).then(|| k_cap.min(min_class_size - 1))
}

fn sq_dist<T: Scalar>(a: ndarray::ArrayView1<T>, b: ndarray::ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// `n_new` synthetic rows `x_i + u (x_nn - x_i)`, with base rows cycled in
/// order and `x_nn` drawn from the `k` nearest neighbours of `x_i`.
pub fn smote_interpolate<T: Scalar, R: Rng + ?Sized>(x: ArrayView2<T>, n_new: usize, k: usize, rng: &mut R) -> Result<Array2<T>> {
    let (n, d) = x.dim();
    if n_new == 0 {
        return Ok(Array2::zeros((0, d)));
    }
    if n < 2 {
        return Err(Error::TooFewRows { need: 2, got: n });
    }
    if k < 1 || k > n - 1 {
        return Err(Error::InvalidConfig(format!("k = {k} outside 1..={}", n - 1)));
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<(T, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(x.row(i), x.row(j)), j)).collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    let mut out = Array2::zeros((n_new, d));
    for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let base = j % n;
        let nn = neighbours[base][rng.random_range(0..k)];
        let u = T::lit(rng.random::<f64>());
        for c in 0..d {
            let a = x[[base, c]];
            row[c] = a + u * (x[[nn, c]] - a);
        }
    }
    Ok(out)
}

/// Population SD of each column.
pub fn column_sd<T: Scalar>(x: ArrayView2<T>) -> Vec<T> {
    let n = T::from_usize_lossy(x.nrows().max(1));
    x.axis_iter(Axis(1))
        .map(|col| {
            let mean = col.iter().copied().sum::<T>() / n;
            (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt()
        })
        .collect()
}

/// Blends `ceil(interpolation_proportion * d)` randomly chosen columns with
/// Gaussian noise: `x' = r x + (1 - r)(x + e)`, `e ~ N(0, (noise_level sd)^2)`.
pub fn perturb<T: Scalar, R: Rng + ?Sized>(x: ArrayView2<T>, col_sd: &[T], cfg: &AugmentConfig, rng: &mut R) -> Array2<T> {
    let mut out = x.to_owned();
    let d = x.ncols();
    if d == 0 || x.nrows() == 0 {
        return out;
    }
    let m = ((cfg.interpolation_proportion * d as f64).ceil() as usize).min(d);
    let cols = index::sample(rng, d, m).into_vec();
    let keep = T::lit(cfg.retention_degree);
    let blend = T::one() - keep;
    for mut row in out.axis_iter_mut(Axis(0)) {
        for &c in &cols {
            let z: f64 = StandardNormal.sample(rng);
            let eps = T::lit(z * cfg.noise_level) * col_sd[c];
            let v = row[c];
            row[c] = keep * v + blend * (v + eps);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalanceStrategy {
    /// Already at or above target; only relabelled (and trimmed).
    NoSynthesis,
    /// SMOTE within run-id classes.
    RunClassSmote { k: usize },
    /// Run classes too small; all runs pooled into one pseudo-class.
    PseudoClassSmote { k: usize },
    /// Single row: replicated, then perturbed.
    Replication,
}

impl BalanceStrategy {
    pub fn k(self) -> Option<usize> {
        match self {
            BalanceStrategy::RunClassSmote { k } | BalanceStrategy::PseudoClassSmote { k } => Some(k),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BalancedSegment<T> {
    pub rows: Array2<T>,
    /// Index of the original row for kept originals, `None` for synthetics.
    pub source: Vec<Option<usize>>,
    /// Fresh sequential run labels `1..=target`.
    pub run_ids: Vec<u32>,
    pub strategy: BalanceStrategy,
}

impl<T> BalancedSegment<T> {
    pub fn synthetic(&self) -> impl Iterator<Item = bool> + '_ {
        self.source.iter().map(Option::is_none)
    }
}

/// Brings one segment to exactly `cfg.target_runs_per_segment` rows.
///
/// `col_sd` are the column SDs of the original training rows.
pub fn balance_segment<T: Scalar, R: Rng + ?Sized>(
    rows: ArrayView2<T>,
    run_ids: &[u32],
    col_sd: &[T],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<BalancedSegment<T>> {
    let (n, d) = rows.dim();
    if n == 0 {
        return Err(Error::EmptySegment);
    }
    if run_ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: run_ids.len(),
        });
    }
    if col_sd.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: col_sd.len(),
        });
    }
    let target = cfg.target_runs_per_segment;
    let relabel = (1..=target as u32).collect::<Vec<_>>();

    if n >= target {
        // never synthesise; surplus originals beyond the target are dropped from the end
        let mut out = rows.slice(s![0..target, ..]).to_owned();
        if cfg.perturb_originals {
            out = perturb(out.view(), col_sd, cfg, rng);
        }
        return Ok(BalancedSegment {
            rows: out,
            source: (0..target).map(Some).collect(),
            run_ids: relabel,
            strategy: BalanceStrategy::NoSynthesis,
        });
    }

    let need = target - n;
    let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &r) in run_ids.iter().enumerate() {
        classes.entry(r).or_default().push(i);
    }
    let min_class = classes.values().map(Vec::len).min().unwrap_or(0);

    let (synthetic, strategy) = if let Some(k) = smote_k(min_class, cfg.k_cap) {
        let per_class = distribute(need, classes.len());
        let mut parts = Vec::new();
        for ((_, idx), count) in classes.iter().zip(per_class) {
            let sub = rows.select(Axis(0), idx);
            parts.push(smote_interpolate(sub.view(), count, k, rng)?);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::DegenerateFit(e.to_string()))?;
        (stacked, BalanceStrategy::RunClassSmote { k })
    } else if let Some(k) = smote_k(n, cfg.k_cap) {
        (smote_interpolate(rows, need, k, rng)?, BalanceStrategy::PseudoClassSmote { k })
    } else {
        let row = rows.row(0);
        let copies = Array2::from_shape_fn((need, d), |(_, c)| row[c]);
        (copies, BalanceStrategy::Replication)
    };

    let synthetic = perturb(synthetic.view(), col_sd, cfg, rng);
    let originals = if cfg.perturb_originals {
        perturb(rows, col_sd, cfg, rng)
    } else {
        rows.to_owned()
    };
    let out = ndarray::concatenate(Axis(0), &[originals.view(), synthetic.view()])
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let mut source: Vec<Option<usize>> = (0..n).map(Some).collect();
    source.extend(std::iter::repeat_n(None, need));
    Ok(BalancedSegment {
        rows: out,
        source,
        run_ids: relabel,
        strategy,
    })
}

fn distribute(total: usize, buckets: usize) -> Vec<usize> {
    (0..buckets).map(|b| total / buckets + usize::from(b < total % buckets)).collect()
}

/// Balanced training matrix with provenance for every row.
#[derive(Clone, Debug)]
pub struct BalancedSet<T> {
    pub features: Array2<T>,
    pub labels: Vec<bool>,
    pub subjects: Vec<String>,
    pub conditions: Vec<Condition>,
    pub run_ids: Vec<u32>,
    /// Sample id of the original row, `None` for synthetic rows.
    pub source_ids: Vec<Option<String>>,
    pub strategies: BTreeMap<String, BalanceStrategy>,
}

impl<T: Scalar> BalancedSet<T> {
    pub fn n_synthetic(&self) -> usize {
        self.source_ids.iter().filter(|s| s.is_none()).count()
    }

    /// Audit dump with a boolean `synthetic` column.
    pub fn write_csv<W: Write>(&self, writer: W, feature_ids: &[RoiId]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["sample_id", "subject_id", "condition", "run_id", "label", "synthetic"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(feature_ids.iter().map(|id| id.column_name()));
        wtr.write_record(&header)?;
        for i in 0..self.labels.len() {
            let id = match &self.source_ids[i] {
                Some(s) => s.clone(),
                None => format!("{}:{}#syn{}", self.subjects[i], self.conditions[i], self.run_ids[i]),
            };
            let mut rec = vec![
                id,
                self.subjects[i].clone(),
                self.conditions[i].to_string(),
                self.run_ids[i].to_string(),
                u8::from(self.labels[i]).to_string(),
                self.source_ids[i].is_none().to_string(),
            ];
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<augmented>", e))?;
        Ok(())
    }
}

/// Balances every (subject, condition) segment of a training slice. Each
/// segment draws from its own stream keyed by `key` plus the segment key.
pub fn balance_training<T: Scalar>(
    x: ArrayView2<T>,
    meta: &[SampleMeta],
    labels: &[bool],
    cfg: &AugmentConfig,
    key: &[&str],
) -> Result<BalancedSet<T>> {
    cfg.validate()?;
    if x.nrows() != meta.len() || meta.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: meta.len(),
        });
    }
    let col_sd = column_sd(x);
    let mut segments: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        segments.entry(m.segment_key()).or_default().push(i);
    }
    let segments: Vec<(String, Vec<usize>)> = segments.into_iter().collect();
    let balanced: Vec<Result<BalancedSegment<T>>> = segments
        .par_iter()
        .map(|(seg, idx)| {
            let mut full_key: Vec<&str> = key.to_vec();
            full_key.push("segment");
            full_key.push(seg);
            let mut r = rng::stream(cfg.seed, &full_key);
            let rows = x.select(Axis(0), idx);
            let runs: Vec<u32> = idx.iter().map(|&i| meta[i].run_id).collect();
            balance_segment(rows.view(), &runs, &col_sd, cfg, &mut r)
        })
        .collect();

    let mut parts = Vec::with_capacity(segments.len());
    let mut out = BalancedSet {
        features: Array2::zeros((0, x.ncols())),
        labels: Vec::new(),
        subjects: Vec::new(),
        conditions: Vec::new(),
        run_ids: Vec::new(),
        source_ids: Vec::new(),
        strategies: BTreeMap::new(),
    };
    for ((seg, idx), b) in segments.iter().zip(balanced) {
        let b = b?;
        let first = &meta[idx[0]];
        for (src, run) in b.source.iter().zip(&b.run_ids) {
            out.labels.push(labels[idx[0]]);
            out.subjects.push(first.subject_id.clone());
            out.conditions.push(first.condition);
            out.run_ids.push(*run);
            out.source_ids.push(src.map(|j| meta[idx[j]].sample_id.clone()));
        }
        out.strategies.insert(seg.clone(), b.strategy);
        parts.push(b.rows);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if !views.is_empty() {
        out.features = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::DegenerateFit(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Cohort;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_point_class_stays_on_segment() {
        let x: Array2<f64> = array![[0.0, 0.0], [1.0, 1.0]];
        let out = smote_interpolate(x.view(), 50, 1, &mut rng(1)).unwrap();
        for r in out.axis_iter(Axis(0)) {
            assert_eq!(r[0], r[1]);
            assert!((0.0..=1.0).contains(&r[0]));
        }
    }

    #[test]
    fn zero_new_rows() {
        let x: Array2<f64> = array![[0.0], [1.0]];
        assert_eq!(smote_interpolate(x.view(), 0, 1, &mut rng(1)).unwrap().dim(), (0, 1));
    }

    #[test]
    fn smote_stays_in_class_envelope() {
        let mut r = rng(5);
        let x = Array2::from_shape_fn((10, 3), |_| r.random::<f64>() * 10.0 - 5.0);
        let out = smote_interpolate(x.view(), 1000, 5, &mut r).unwrap();
        for c in 0..3 {
            let col = x.column(c);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(out.column(c).iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn smote_rejects_bad_inputs() {
        let x: Array2<f64> = array![[0.0]];
        assert!(matches!(smote_interpolate(x.view(), 3, 1, &mut rng(0)), Err(Error::TooFewRows { .. })));
        let x: Array2<f64> = array![[0.0], [1.0]];
        assert!(smote_interpolate(x.view(), 3, 2, &mut rng(0)).is_err());
    }

    #[test]
    fn perturb_identities() {
        let mut r = rng(2);
        let x = Array2::from_shape_fn((20, 4), |_| r.random::<f64>());
        let sd = column_sd(x.view());
        let cfg = AugmentConfig {
            noise_level: 0.0,
            ..AugmentConfig::default()
        };
        assert_eq!(perturb(x.view(), &sd, &cfg, &mut r), x);
        let cfg = AugmentConfig {
            retention_degree: 1.0,
            ..AugmentConfig::default()
        };
        assert_eq!(perturb(x.view(), &sd, &cfg, &mut r), x);
    }

    #[test]
    fn perturb_touches_ceil_fraction_of_columns() {
        let x = Array2::<f64>::zeros((1, 10));
        let sd = vec![1.0; 10];
        let out = perturb(x.view(), &sd, &AugmentConfig::default(), &mut rng(8));
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 8);
    }

    #[test]
    fn perturb_noise_scale_monte_carlo() {
        // SD of x' - x should be (1 - 0.5) * 0.05 * sd_col
        let sd_col = 2.0;
        let x = Array2::<f64>::zeros((10_000, 1));
        let out = perturb(x.view(), &[sd_col], &AugmentConfig::default(), &mut rng(4));
        let n = out.len() as f64;
        let mean = out.sum() / n;
        let emp = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = 0.5 * 0.05 * sd_col;
        assert!((emp - expected).abs() / expected < 0.05, "{emp} vs {expected}");
    }

    #[test]
    fn full_segment_only_relabelled() {
        let mut r = rng(3);
        let x = Array2::from_shape_fn((27, 5), |_| r.random::<f64>());
        let runs: Vec<u32> = (100..127).collect();
        let sd = column_sd(x.view());
        let b = balance_segment(x.view(), &runs, &sd, &AugmentConfig::default(), &mut r).unwrap();
        assert_eq!(b.rows, x);
        assert_eq!(b.run_ids, (1..=27).collect::<Vec<_>>());
        assert_eq!(b.synthetic().filter(|&s| s).count(), 0);
        assert_eq!(b.strategy, BalanceStrategy::NoSynthesis);
    }

    #[test]
    fn oversized_segment_keeps_first_originals() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| (i * 2 + j) as f64);
        let runs: Vec<u32> = (1..=30).collect();
        let b = balance_segment(x.view(), &runs, &[1.0, 1.0], &AugmentConfig::default(), &mut rng(0)).unwrap();
        assert_eq!(b.rows.nrows(), 27);
        assert_eq!(b.rows, x.slice(s![0..27, ..]));
    }

    #[test]
    fn single_run_replicates_within_noise_band() {
        let cfg = AugmentConfig::default();
        let sd = vec![1.5, 0.5, 3.0];
        for trial in 0..100 {
            let mut r = rng(trial);
            let x = Array2::from_shape_fn((1, 3), |_| r.random::<f64>());
            let b = balance_segment(x.view(), &[4], &sd, &cfg, &mut r).unwrap();
            assert_eq!(b.rows.nrows(), 27);
            assert_eq!(b.strategy, BalanceStrategy::Replication);
            for row in b.rows.axis_iter(Axis(0)) {
                for c in 0..3 {
                    assert!((row[c] - x[[0, c]]).abs() <= 6.0 * cfg.noise_level * sd[c]);
                }
            }
        }
    }

    #[test]
    fn four_runs_use_k_three() {
        let mut r = rng(6);
        let x = Array2::from_shape_fn((4, 3), |_| r.random::<f64>());
        let sd = column_sd(x.view());
        let b = balance_segment(x.view(), &[1, 2, 3, 4], &sd, &AugmentConfig::default(), &mut r).unwrap();
        assert_eq!(b.strategy, BalanceStrategy::PseudoClassSmote { k: 3 });
        assert_eq!(b.rows.nrows(), 27);
        assert_eq!(b.rows.slice(s![0..4, ..]), x);
    }

    #[test]
    fn repeated_runs_smote_within_run_classes() {
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i + j) as f64);
        let b = balance_segment(x.view(), &[1, 1, 1, 2, 2, 2], &[1.0, 1.0], &AugmentConfig::default(), &mut rng(1)).unwrap();
        assert_eq!(b.strategy, BalanceStrategy::RunClassSmote { k: 2 });
    }

    #[test]
    fn empty_segment_is_an_error() {
        let x = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            balance_segment(x.view(), &[], &[1.0, 1.0], &AugmentConfig::default(), &mut rng(0)),
            Err(Error::EmptySegment)
        ));
    }

    #[test]
    fn k_rule() {
        assert_eq!(smote_k(1, 5), None);
        assert_eq!(smote_k(2, 5), Some(1));
        assert_eq!(smote_k(6, 5), Some(5));
        assert_eq!(smote_k(10, 5), Some(5));
    }

    fn training_meta() -> (Array2<f64>, Vec<SampleMeta>, Vec<bool>) {
        let mut meta = Vec::new();
        let mut labels = Vec::new();
        for s in 0..3 {
            for (c, l) in [(Condition::J1, true), (Condition::Counting, false)] {
                for run in 1..=(s + 1) as u32 {
                    meta.push(SampleMeta {
                        sample_id: format!("s{s}-{c}-{run}"),
                        subject_id: format!("s{s}"),
                        cohort: Cohort::Group,
                        condition: c,
                        run_id: run,
                    });
                    labels.push(l);
                }
            }
        }
        let mut r = rng(10);
        let x = Array2::from_shape_fn((meta.len(), 4), |_| r.random::<f64>());
        (x, meta, labels)
    }

    #[test]
    fn training_balance_is_exact_and_deterministic() {
        let (x, meta, labels) = training_meta();
        let cfg = AugmentConfig::default();
        let a = balance_training(x.view(), &meta, &labels, &cfg, &["c", "0"]).unwrap();
        let b = balance_training(x.view(), &meta, &labels, &cfg, &["c", "0"]).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels.len(), 6 * 27);
        let mut keys = std::collections::HashSet::new();
        for i in 0..a.labels.len() {
            assert!(keys.insert((a.subjects[i].clone(), a.conditions[i], a.run_ids[i])));
        }
        assert_eq!(a.n_synthetic(), 6 * 27 - meta.len());
    }

    #[test]
    fn audit_dump_marks_synthetics() {
        let (x, meta, labels) = training_meta();
        let set = balance_training(x.view(), &meta, &labels, &AugmentConfig::default(), &["k"]).unwrap();
        let mut buf = Vec::new();
        let ids: Vec<RoiId> = (1..=4).map(RoiId).collect();
        set.write_csv(&mut buf, &ids).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample_id,subject_id,condition,run_id,label,synthetic,roi_0001"));
        assert_eq!(text.lines().filter(|l| l.contains(",true,")).count(), set.n_synthetic());
    }
}
