//! Multi-view consensus ranking, pre-keep, guarded recursive feature
//! elimination and cross-fold consensus.

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::RoiId;
use crate::ensemble_eval::{compute_metrics, Metric};
use crate::error::{Error, Result};
use crate::models::{fit, Family, ModelConfigs, Predictor};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EliminationRule {
    /// Drop the `ceil(step * |current|)` least important features.
    #[default]
    BottomFraction,
    /// Drop every feature whose min-max normalized importance is below
    /// `threshold` (at least one per round).
    NormalizedThreshold { threshold: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusPolicy {
    Union,
    #[default]
    Majority,
    Intersection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub prekeep_fraction: f64,
    pub rfe_step_fraction: f64,
    pub rfe_min_features: usize,
    /// Allowed drop below the best validation score before RFE stops.
    pub rfe_delta: f64,
    pub mi_bins: usize,
    pub guard_metric: Metric,
    pub elimination: EliminationRule,
    pub consensus: ConsensusPolicy,
    /// Optional prior ROI mask applied before ranking.
    pub prior_mask: Option<Vec<RoiId>>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            prekeep_fraction: 0.5,
            rfe_step_fraction: 0.05,
            rfe_min_features: 10,
            rfe_delta: 0.01,
            mi_bins: 10,
            guard_metric: Metric::Kappa,
            elimination: EliminationRule::BottomFraction,
            consensus: ConsensusPolicy::Majority,
            prior_mask: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.prekeep_fraction) || !in_unit(self.rfe_step_fraction) {
            return Err(Error::InvalidConfig("selection fractions must lie in (0, 1]".into()));
        }
        if self.rfe_min_features < 1 {
            return Err(Error::InvalidConfig("rfe_min_features must be at least 1".into()));
        }
        if self.rfe_delta.is_nan() || self.rfe_delta < 0.0 {
            return Err(Error::InvalidConfig("rfe_delta must be non-negative".into()));
        }
        if self.mi_bins < 2 {
            return Err(Error::InvalidConfig("mi_bins must be at least 2".into()));
        }
        if let EliminationRule::NormalizedThreshold { threshold } = self.elimination {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::InvalidConfig("elimination threshold must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Plug-in mutual information (nats) between `x`, cut into equal-frequency
/// bins, and the binary labels.
pub fn mutual_information<T: Scalar>(x: &[T], y: &[bool], bins: usize) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let bins = bins.clamp(1, n);
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let cuts: Vec<T> = (1..bins).map(|j| sorted[j * n / bins]).collect();
    let mut joint = vec![[0usize; 2]; bins];
    for (&v, &l) in x.iter().zip(y) {
        let b = cuts.partition_point(|&c| c <= v);
        joint[b][usize::from(l)] += 1;
    }
    let nf = n as f64;
    let py = [
        y.iter().filter(|&&l| !l).count() as f64 / nf,
        y.iter().filter(|&&l| l).count() as f64 / nf,
    ];
    let mut mi = 0.0;
    for cell in &joint {
        let pb = (cell[0] + cell[1]) as f64 / nf;
        for c in 0..2 {
            if cell[c] > 0 {
                let pj = cell[c] as f64 / nf;
                mi += pj * (pj / (pb * py[c])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Percentile ranks in [0, 1]; 0 marks the largest score. Tied scores share
/// their average position.
pub fn percentile_ranks(scores: &[f64]) -> Vec<f64> {
    let d = scores.len();
    if d <= 1 {
        return vec![0.0; d];
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut out = vec![0.0; d];
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j + 1 < d && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = pos / (d - 1) as f64;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiviewRank {
    pub forest: Vec<f64>,
    pub linear: Vec<f64>,
    pub mutual_information: Vec<f64>,
    /// Mean of the three percentile ranks; lower is more important.
    pub consensus: Vec<f64>,
}

/// Scores every column with forest impurity importance, |LR coefficient| on
/// standardized columns and mutual information, then averages their
/// percentile ranks. Columns are processed in ascending ROI order
/// internally, so the result follows any permutation of the input columns.
pub fn rank_multiview<T: Scalar>(
    x: ArrayView2<T>,
    y: &[bool],
    feature_ids: &[RoiId],
    models: &ModelConfigs,
    mi_bins: usize,
    seed: u64,
) -> Result<MultiviewRank> {
    let pos = y.iter().filter(|&&l| l).count();
    if pos < 2 || y.len() - pos < 2 {
        return Err(Error::DegenerateFit("ranking needs at least 2 samples per class".into()));
    }
    let mut canon: Vec<usize> = (0..feature_ids.len()).collect();
    canon.sort_by_key(|&j| feature_ids[j]);
    let xc = x.select(Axis(1), &canon);
    let ids: Vec<RoiId> = canon.iter().map(|&j| feature_ids[j]).collect();

    let degenerate = |view: &str, e: Error| Error::DegenerateFit(format!("{view} view: {e}"));
    let rf = fit(&models.spec(Family::Rf, seed), xc.view(), y, &ids).map_err(|e| degenerate("forest", e))?;
    let forest = rf.impurity_importances().expect("forest importances");
    let lr = fit(&models.spec(Family::Lr, seed), xc.view(), y, &ids).map_err(|e| degenerate("linear", e))?;
    let linear: Vec<f64> = lr
        .linear_coefficients()
        .expect("linear coefficients")
        .iter()
        .map(|w| w.as_f64().abs())
        .collect();
    let columns: Vec<Vec<T>> = xc.columns().into_iter().map(|c| c.to_vec()).collect();
    let mi: Vec<f64> = columns.par_iter().map(|col| mutual_information(col, y, mi_bins)).collect();

    let ranks = [percentile_ranks(&forest), percentile_ranks(&linear), percentile_ranks(&mi)];
    let consensus_c: Vec<f64> = (0..ids.len()).map(|j| (ranks[0][j] + ranks[1][j] + ranks[2][j]) / 3.0).collect();

    let mut out = MultiviewRank {
        forest: vec![0.0; ids.len()],
        linear: vec![0.0; ids.len()],
        mutual_information: vec![0.0; ids.len()],
        consensus: vec![0.0; ids.len()],
    };
    for (c, &orig) in canon.iter().enumerate() {
        out.forest[orig] = forest[c];
        out.linear[orig] = linear[c];
        out.mutual_information[orig] = mi[c];
        out.consensus[orig] = consensus_c[c];
    }
    Ok(out)
}

/// Keeps the `ceil(fraction * d)` lowest-rank features, ties broken by lower
/// ROI id. Returned in ascending ROI order.
pub fn prekeep(consensus: &[f64], feature_ids: &[RoiId], fraction: f64) -> Vec<RoiId> {
    let d = feature_ids.len();
    let keep = ((fraction * d as f64).ceil() as usize).min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        consensus[a]
            .partial_cmp(&consensus[b])
            .expect("finite ranks")
            .then(feature_ids[a].cmp(&feature_ids[b]))
    });
    let mut kept: Vec<RoiId> = order[..keep].iter().map(|&j| feature_ids[j]).collect();
    kept.sort();
    kept
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeStep {
    pub n_features: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RfeStop {
    Guard,
    MinFeatures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeOutcome {
    pub trace: Vec<RfeStep>,
    /// Positions (into the start set) of the best-scoring subset.
    pub best: Vec<usize>,
    pub best_score: f64,
    pub stop: RfeStop,
}

/// The elimination loop with a pluggable scorer. `score_fn` receives the
/// current subset (positions into the start set, ascending) and returns the
/// validation score and one importance per subset member.
pub fn rfe_loop<F>(n_start: usize, cfg: &SelectionConfig, mut score_fn: F) -> Result<RfeOutcome>
where
    F: FnMut(&[usize]) -> Result<(f64, Vec<f64>)>,
{
    if n_start == 0 {
        return Err(Error::InvalidConfig("RFE needs a non-empty start set".into()));
    }
    let min = cfg.rfe_min_features.min(n_start);
    let mut current: Vec<usize> = (0..n_start).collect();
    let mut trace = Vec::new();
    let mut best = current.clone();
    let mut best_score = f64::NEG_INFINITY;
    let stop = loop {
        let (score, importances) = score_fn(&current)?;
        trace.push(RfeStep {
            n_features: current.len(),
            score,
        });
        if score < best_score - cfg.rfe_delta {
            break RfeStop::Guard;
        }
        if score > best_score {
            best_score = score;
            best = current.clone();
        }
        if current.len() <= min {
            break RfeStop::MinFeatures;
        }
        let max_drop = current.len() - min;
        let n_drop = match cfg.elimination {
            EliminationRule::BottomFraction => (cfg.rfe_step_fraction * current.len() as f64).ceil() as usize,
            EliminationRule::NormalizedThreshold { threshold } => {
                let (lo, hi) = importances
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let span = hi - lo;
                importances
                    .iter()
                    .filter(|&&v| span > 0.0 && (v - lo) / span < threshold)
                    .count()
            }
        }
        .clamp(1, max_drop);
        // least important first; among equals the later (higher id) column goes
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| {
            importances[a]
                .partial_cmp(&importances[b])
                .expect("finite importances")
                .then(b.cmp(&a))
        });
        let mut drop: Vec<usize> = order[..n_drop].to_vec();
        drop.sort_unstable();
        current = current
            .iter()
            .enumerate()
            .filter(|(k, _)| drop.binary_search(k).is_err())
            .map(|(_, &j)| j)
            .collect();
    };
    Ok(RfeOutcome {
        trace,
        best,
        best_score,
        stop,
    })
}

/// Guarded RFE with a random forest scored on the (unaugmented) validation
/// rows. Columns of `x_train` / `x_val` are the start set, in `start_ids`
/// order.
#[allow(clippy::too_many_arguments)]
pub fn rfe_with_guard<T: Scalar>(
    x_train: ArrayView2<T>,
    y_train: &[bool],
    x_val: ArrayView2<T>,
    y_val: &[bool],
    start_ids: &[RoiId],
    cfg: &SelectionConfig,
    models: &ModelConfigs,
    seed: u64,
) -> Result<(RfeOutcome, Vec<RoiId>)> {
    let outcome = rfe_loop(start_ids.len(), cfg, |subset| {
        let ids: Vec<RoiId> = subset.iter().map(|&j| start_ids[j]).collect();
        let xt = x_train.select(Axis(1), subset);
        let xv = x_val.select(Axis(1), subset);
        let s = rng::derive_seed(seed, &["rfe", &subset.len().to_string()]);
        let rf = fit(&models.spec(Family::Rf, s), xt.view(), y_train, &ids)?;
        let probs = rf.predict_proba(xv.view())?;
        let labels: Vec<bool> = probs.iter().map(|&p| p >= T::lit(0.5)).collect();
        let score = compute_metrics(y_val, &probs, &labels)?.get(cfg.guard_metric).unwrap_or_else(|| {
            log::debug!("RFE guard metric undefined at {} features; scored as 0", subset.len());
            0.0
        });
        Ok((score, rf.impurity_importances().expect("forest")))
    })?;
    let selected = outcome.best.iter().map(|&j| start_ids[j]).collect();
    Ok((outcome, selected))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub feature_ids: Vec<RoiId>,
    pub ranks: MultiviewRank,
    pub prekeep: Vec<RoiId>,
    pub rfe_trace: Vec<RfeStep>,
    pub rfe_stop: RfeStop,
    pub best_score: f64,
    pub selected: Vec<RoiId>,
}

/// Rank, pre-keep and RFE for one fold.
#[allow(clippy::too_many_arguments)]
pub fn select_features<T: Scalar>(
    x_train: ArrayView2<T>,
    y_train: &[bool],
    x_val: ArrayView2<T>,
    y_val: &[bool],
    feature_ids: &[RoiId],
    cfg: &SelectionConfig,
    models: &ModelConfigs,
    seed: u64,
) -> Result<SelectionResult> {
    let ranks = rank_multiview(x_train, y_train, feature_ids, models, cfg.mi_bins, rng::derive_seed(seed, &["rank"]))?;
    let kept = prekeep(&ranks.consensus, feature_ids, cfg.prekeep_fraction);
    let pos: BTreeMap<RoiId, usize> = feature_ids.iter().enumerate().map(|(j, &r)| (r, j)).collect();
    let cols: Vec<usize> = kept.iter().map(|r| pos[r]).collect();
    let (outcome, selected) = rfe_with_guard(
        x_train.select(Axis(1), &cols).view(),
        y_train,
        x_val.select(Axis(1), &cols).view(),
        y_val,
        &kept,
        cfg,
        models,
        seed,
    )?;
    Ok(SelectionResult {
        feature_ids: feature_ids.to_vec(),
        ranks,
        prekeep: kept,
        rfe_trace: outcome.trace,
        rfe_stop: outcome.stop,
        best_score: outcome.best_score,
        selected,
    })
}

/// Combines per-fold selections. Intersection falls back to majority when
/// empty, and majority falls back to union.
pub fn consensus_global(per_fold: &[Vec<RoiId>], policy: ConsensusPolicy) -> Result<Vec<RoiId>> {
    if per_fold.is_empty() {
        return Err(Error::InvalidConfig("consensus needs at least one fold".into()));
    }
    let k = per_fold.len();
    let mut counts: BTreeMap<RoiId, usize> = BTreeMap::new();
    for set in per_fold {
        let mut uniq = set.clone();
        uniq.sort();
        uniq.dedup();
        for r in uniq {
            *counts.entry(r).or_default() += 1;
        }
    }
    let pick = |keep: &dyn Fn(usize) -> bool| -> Vec<RoiId> { counts.iter().filter(|(_, &c)| keep(c)).map(|(&r, _)| r).collect() };
    let union = pick(&|_| true);
    let majority = pick(&|c| 2 * c > k);
    Ok(match policy {
        ConsensusPolicy::Union => union,
        ConsensusPolicy::Majority if majority.is_empty() => {
            log::warn!("no feature was selected in a majority of folds; using the union");
            union
        }
        ConsensusPolicy::Majority => majority,
        ConsensusPolicy::Intersection => {
            let all = pick(&|c| c == k);
            if !all.is_empty() {
                all
            } else if !majority.is_empty() {
                log::warn!("fold selections have an empty intersection; using the majority rule");
                majority
            } else {
                log::warn!("fold selections have an empty intersection and no majority; using the union");
                union
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(d: usize) -> Vec<RoiId> {
        (1..=d as u16).map(RoiId).collect()
    }

    /// Column 0 copies the label; the rest are noise.
    fn planted(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, d), |(i, j)| if j == 0 { f64::from(u8::from(y[i])) } else { r.random::<f64>() });
        (x, y)
    }

    #[test]
    fn mi_of_label_copy_is_ln2() {
        let y: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let x: Vec<f64> = y.iter().map(|&l| f64::from(u8::from(l))).collect();
        assert!((mutual_information(&x, &y, 10) - std::f64::consts::LN_2).abs() < 1e-6);
        assert_eq!(mutual_information(&[3.0; 50], &y[..50], 10), 0.0);
    }

    #[test]
    fn mi_of_independent_noise_is_small() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
        let y: Vec<bool> = (0..10_000).map(|_| r.random_bool(0.5)).collect();
        assert!(mutual_information(&x, &y, 10) < 0.01);
    }

    #[test]
    fn percentile_ranks_with_ties() {
        assert_eq!(percentile_ranks(&[3.0, 1.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(percentile_ranks(&[1.0, 1.0, 0.0]), vec![0.25, 0.25, 1.0]);
        assert_eq!(percentile_ranks(&[5.0]), vec![0.0]);
    }

    #[test]
    fn planted_label_copy_ranks_first_and_survives_prekeep() {
        let (x, y) = planted(80, 12, 1);
        let r = rank_multiview(x.view(), &y, &ids(12), &ModelConfigs::default(), 10, 0).unwrap();
        let best = r.consensus.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.consensus[0], best);
        assert!(r.consensus[1..].iter().all(|&c| c > best));
        assert!(prekeep(&r.consensus, &ids(12), 0.1).contains(&RoiId(1)));
    }

    #[test]
    fn ranking_follows_column_permutation() {
        let (x, y) = planted(60, 6, 2);
        let fid = ids(6);
        let a = rank_multiview(x.view(), &y, &fid, &ModelConfigs::default(), 10, 5).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = x.select(Axis(1), &perm);
        let fp: Vec<RoiId> = perm.iter().map(|&j| fid[j]).collect();
        let b = rank_multiview(xp.view(), &y, &fp, &ModelConfigs::default(), 10, 5).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            assert_eq!(b.consensus[k], a.consensus[j]);
        }
    }

    #[test]
    fn prekeep_counts_and_ties() {
        let fid = ids(498);
        let ranks = vec![0.5; 498];
        let kept = prekeep(&ranks, &fid, 0.5);
        assert_eq!(kept.len(), 249);
        assert_eq!(kept, fid[..249].to_vec());
        assert_eq!(prekeep(&ranks, &fid, 1.0).len(), 498);
    }

    #[test]
    fn stubbed_trace_stops_at_guard() {
        let scores = [0.50, 0.55, 0.54, 0.40, 0.9];
        let mut call = 0;
        let mut sizes = Vec::new();
        let cfg = SelectionConfig {
            rfe_min_features: 1,
            ..SelectionConfig::default()
        };
        let out = rfe_loop(20, &cfg, |s| {
            sizes.push(s.len());
            let v = scores[call];
            call += 1;
            Ok((v, s.iter().map(|&j| j as f64).collect()))
        })
        .unwrap();
        assert_eq!(out.stop, RfeStop::Guard);
        assert_eq!(out.trace.iter().map(|t| t.score).collect::<Vec<_>>(), scores[..4].to_vec());
        assert_eq!(out.best_score, 0.55);
        // one feature dropped per round from 20, the least important (lowest index)
        assert_eq!(sizes, vec![20, 19, 18, 17]);
        assert_eq!(out.best, (1..20).collect::<Vec<_>>());
        let max = out.trace.iter().map(|t| t.score).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_score, max);
    }

    #[test]
    fn infinite_delta_runs_to_minimum() {
        let cfg = SelectionConfig {
            rfe_delta: f64::INFINITY,
            rfe_min_features: 10,
            ..SelectionConfig::default()
        };
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let out = rfe_loop(100, &cfg, |s| Ok((r.random::<f64>(), vec![1.0; s.len()]))).unwrap();
        assert_eq!(out.stop, RfeStop::MinFeatures);
        assert_eq!(out.trace.last().unwrap().n_features, 10);
        // ceil(5% of |current|) per round, never overshooting the minimum
        for w in out.trace.windows(2) {
            let expect = ((0.05 * w[0].n_features as f64).ceil() as usize).min(w[0].n_features - 10);
            assert_eq!(w[0].n_features - w[1].n_features, expect);
        }
    }

    #[test]
    fn threshold_rule_drops_low_normalized_importances() {
        let cfg = SelectionConfig {
            rfe_delta: f64::INFINITY,
            rfe_min_features: 2,
            elimination: EliminationRule::NormalizedThreshold { threshold: 0.5 },
            ..SelectionConfig::default()
        };
        let mut sizes = Vec::new();
        rfe_loop(6, &cfg, |s| {
            sizes.push(s.len());
            Ok((0.5, s.iter().map(|&j| [0.0, 0.1, 0.2, 0.8, 0.9, 1.0][j]).collect()))
        })
        .unwrap();
        assert_eq!(sizes, vec![6, 3, 2]);
    }

    #[test]
    fn guarded_rfe_on_planted_data() {
        let (x, y) = planted(120, 30, 6);
        let (xt, xv) = x.view().split_at(Axis(0), 80);
        let cfg = SelectionConfig {
            rfe_min_features: 3,
            rfe_step_fraction: 0.2,
            ..SelectionConfig::default()
        };
        let (out, selected) = rfe_with_guard(xt, &y[..80], xv, &y[80..], &ids(30), &cfg, &ModelConfigs::default(), 1).unwrap();
        assert!(selected.contains(&RoiId(1)));
        assert!(selected.len() >= 3);
        assert_eq!(out.best_score, 1.0);
    }

    #[test]
    fn consensus_policies() {
        let s = |v: &[u16]| v.iter().map(|&i| RoiId(i)).collect::<Vec<_>>();
        let folds = vec![s(&[1, 2]), s(&[1, 3]), s(&[1, 2]), s(&[4]), s(&[2, 1])];
        assert_eq!(consensus_global(&folds, ConsensusPolicy::Majority).unwrap(), s(&[1, 2]));
        assert_eq!(consensus_global(&[s(&[1]), s(&[2])], ConsensusPolicy::Union).unwrap(), s(&[1, 2]));
        assert_eq!(
            consensus_global(&[s(&[3, 5]), s(&[3, 5])], ConsensusPolicy::Intersection).unwrap(),
            s(&[3, 5])
        );
        // empty intersection falls back to majority
        assert_eq!(consensus_global(&folds, ConsensusPolicy::Intersection).unwrap(), s(&[1, 2]));
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::default().validate().is_ok());
        let bad = SelectionConfig {
            prekeep_fraction: 0.0,
            ..SelectionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SelectionConfig {
            rfe_min_features: 0,
            ..SelectionConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn agreeing_views_preserve_order(scores in prop::collection::vec(0.0f64..1.0, 2..30)) {
            let r = percentile_ranks(&scores);
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] > scores[j] {
                        prop_assert!(r[i] < r[j]);
                    }
                }
            }
        }

        #[test]
        fn selected_within_prekeep(seed in 0u64..20) {
            let (x, y) = planted(60, 16, seed);
            let (xt, xv) = x.view().split_at(Axis(0), 40);
            let cfg = SelectionConfig { rfe_min_features: 2, rfe_step_fraction: 0.25, ..SelectionConfig::default() };
            let models = ModelConfigs { rf: crate::models::ForestHyper { n_trees: 10, ..Default::default() }, ..Default::default() };
            let r = select_features(xt, &y[..40], xv, &y[40..], &ids(16), &cfg, &models, seed).unwrap();
            prop_assert!(r.selected.iter().all(|s| r.prekeep.contains(s)));
            prop_assert_eq!(r.prekeep.len(), 8);
        }
    }
}
