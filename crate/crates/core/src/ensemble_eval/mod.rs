//! Top-L model selection, probability-averaged ensembles, metrics and
//! permutation significance.

mod metrics;
mod permutation;

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data_model::RoiId;
use crate::error::{Error, Result};
use crate::models::{Family, Predictor, TrainedModel};
use crate::scalar::Scalar;

pub use metrics::{auc, compute_metrics, summarize, Confusion, Metric, MetricStat, MetricsReport};
pub use permutation::{p_value, permutation_test, subject_wise_permutation, PermutationResult};

/// Equal-weight average of member probabilities, thresholded at 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<T> {
    pub members: Vec<TrainedModel<T>>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(members: Vec<TrainedModel<T>>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::TooFewCandidates { need: 1, got: 0 });
        };
        if let Some(m) = members.iter().find(|m| m.feature_ids != first.feature_ids) {
            return Err(Error::InvalidConfig(format!(
                "ensemble member {} was fit on different columns",
                m.family()
            )));
        }
        Ok(Ensemble { members })
    }

    pub fn families(&self) -> Vec<Family> {
        self.members.iter().map(|m| m.family()).collect()
    }

    /// Probabilities and labels (`prob >= 0.5`).
    pub fn predict_with_labels(&self, x: ArrayView2<T>) -> Result<(Vec<T>, Vec<bool>)> {
        let probs = self.predict_proba(x)?;
        let labels = probs.iter().map(|&p| p >= T::lit(0.5)).collect();
        Ok((probs, labels))
    }
}

impl<T: Scalar> Predictor<T> for Ensemble<T> {
    fn predict_proba(&self, x: ArrayView2<T>) -> Result<Vec<T>> {
        let per_member = self
            .members
            .iter()
            .map(|m| m.predict_proba(x))
            .collect::<Result<Vec<_>>>()?;
        let k = T::from_usize_lossy(self.members.len());
        let mut row = Vec::with_capacity(self.members.len());
        Ok((0..x.nrows())
            .map(|i| {
                // sorted summation makes the mean independent of member order
                row.clear();
                row.extend(per_member.iter().map(|p| p[i]));
                row.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                row.iter().copied().sum::<T>() / k
            })
            .collect())
    }

    fn feature_ids(&self) -> &[RoiId] {
        &self.members[0].feature_ids
    }
}

/// One candidate's validation scores, used for ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub family: Family,
    /// Value of the selection metric (kappa by default).
    pub score: Option<f64>,
    pub auc: Option<f64>,
}

fn desc(a: Option<f64>, b: Option<f64>) -> Ordering {
    // absent sorts after every defined value
    match (a, b) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Orders candidates by score, then AUC (both descending), then family order.
pub fn rank_candidates(scores: &[CandidateScore]) -> Vec<CandidateScore> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| desc(a.score, b.score).then(desc(a.auc, b.auc)).then(a.family.cmp(&b.family)));
    v
}

/// The `l` best families from precomputed scores.
pub fn select_top_families(scores: &[CandidateScore], l: usize) -> Result<Vec<Family>> {
    if scores.len() < l || l == 0 {
        return Err(Error::TooFewCandidates {
            need: l.max(1),
            got: scores.len(),
        });
    }
    Ok(rank_candidates(scores).into_iter().take(l).map(|c| c.family).collect())
}

/// Scores each candidate on validation rows and keeps the best `l`.
pub fn select_top<T: Scalar>(
    candidates: Vec<TrainedModel<T>>,
    x_val: ArrayView2<T>,
    y_val: &[bool],
    l: usize,
    metric: Metric,
) -> Result<(Vec<TrainedModel<T>>, Vec<CandidateScore>)> {
    let scores = candidates
        .iter()
        .map(|m| {
            let probs = m.predict_proba(x_val)?;
            let labels: Vec<bool> = probs.iter().map(|&p| p >= T::lit(0.5)).collect();
            let r = compute_metrics(y_val, &probs, &labels)?;
            Ok(CandidateScore {
                family: m.family(),
                score: r.get(metric),
                auc: r.auc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let top = select_top_families(&scores, l)?;
    let mut chosen: Vec<Option<TrainedModel<T>>> = candidates.into_iter().map(Some).collect();
    let models = top
        .iter()
        .map(|f| {
            let i = chosen
                .iter()
                .position(|m| m.as_ref().is_some_and(|m| m.family() == *f))
                .expect("family present");
            chosen[i].take().expect("taken once")
        })
        .collect();
    Ok((models, scores))
}

/// Mean selection score and AUC per family over folds, for choosing the
/// families that are refit on all group data.
pub fn cv_summary_scores(per_fold: &[Vec<CandidateScore>]) -> Vec<CandidateScore> {
    Family::ALL
        .into_iter()
        .filter_map(|f| {
            let rows: Vec<&CandidateScore> = per_fold.iter().flatten().filter(|c| c.family == f).collect();
            if rows.is_empty() {
                return None;
            }
            let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            Some(CandidateScore {
                family: f,
                score: mean(rows.iter().filter_map(|c| c.score).collect()),
                auc: mean(rows.iter().filter_map(|c| c.auc).collect()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, LinearParams, ModelSpec, Params, TrainingSummary};
    use ndarray::{array, Array1};

    fn constant_model(family: Family, p: f64) -> TrainedModel<f64> {
        // LR with zero weights and a fixed intercept scores a constant
        TrainedModel {
            spec: ModelSpec::new(family, 0),
            feature_ids: vec![RoiId(1)],
            standardizer: None,
            params: Params::Lr(LinearParams {
                weights: Array1::zeros(1),
                intercept: (p / (1.0 - p)).ln(),
            }),
            summary: TrainingSummary::default(),
        }
    }

    fn cs(family: Family, k: f64, a: f64) -> CandidateScore {
        CandidateScore {
            family,
            score: Some(k),
            auc: Some(a),
        }
    }

    #[test]
    fn top_three_by_kappa() {
        let scores = vec![
            cs(Family::Lr, 0.3, 0.5),
            cs(Family::Dt, 0.1, 0.5),
            cs(Family::Rf, 0.2, 0.5),
            cs(Family::SvmLinear, 0.25, 0.5),
            cs(Family::Knn, 0.28, 0.5),
            cs(Family::Mlp, 0.05, 0.5),
        ];
        assert_eq!(
            select_top_families(&scores, 3).unwrap(),
            vec![Family::Lr, Family::Knn, Family::SvmLinear]
        );
    }

    #[test]
    fn ties_fall_back_to_auc_then_family_order() {
        let scores = vec![cs(Family::Mlp, 0.2, 0.7), cs(Family::Dt, 0.2, 0.6), cs(Family::Rf, 0.2, 0.6)];
        assert_eq!(
            select_top_families(&scores, 3).unwrap(),
            vec![Family::Mlp, Family::Dt, Family::Rf]
        );
        let undefined = CandidateScore {
            family: Family::Lr,
            score: None,
            auc: None,
        };
        assert_eq!(select_top_families(&[undefined, cs(Family::Knn, -0.5, 0.1)], 1).unwrap(), vec![Family::Knn]);
    }

    #[test]
    fn too_few_candidates() {
        assert!(matches!(
            select_top_families(&[cs(Family::Lr, 0.1, 0.1)], 3),
            Err(Error::TooFewCandidates { need: 3, got: 1 })
        ));
    }

    #[test]
    fn averaging_and_boundary() {
        let x = array![[0.0]];
        let e = Ensemble::new(vec![
            constant_model(Family::Lr, 0.6),
            constant_model(Family::Dt, 0.7),
            constant_model(Family::Rf, 0.8),
        ])
        .unwrap();
        let (p, l) = e.predict_with_labels(x.view()).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-12 && l[0]);
        let e = Ensemble::new(vec![
            constant_model(Family::Lr, 0.4),
            constant_model(Family::Dt, 0.5),
            constant_model(Family::Rf, 0.6),
        ])
        .unwrap();
        let (p, l) = e.predict_with_labels(x.view()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert_eq!(l[0], p[0] >= 0.5);
    }

    #[test]
    fn single_member_is_identity_and_order_is_irrelevant() {
        let (x, y) = crate::models::tests::blobs(40, 2, 1.0, 3);
        let ids = vec![RoiId(1), RoiId(2)];
        let members: Vec<_> = [Family::Lr, Family::Knn, Family::Dt]
            .iter()
            .map(|&f| fit(&ModelSpec::new(f, 1), x.view(), &y, &ids).unwrap())
            .collect();
        let solo = Ensemble::new(vec![members[1].clone()]).unwrap();
        assert_eq!(solo.predict_proba(x.view()).unwrap(), members[1].predict_proba(x.view()).unwrap());
        let a = Ensemble::new(members.clone()).unwrap();
        let b = Ensemble::new(members.into_iter().rev().collect()).unwrap();
        assert_eq!(a.predict_proba(x.view()).unwrap(), b.predict_proba(x.view()).unwrap());
    }

    #[test]
    fn mismatched_members_rejected() {
        let mut m = constant_model(Family::Dt, 0.5);
        m.feature_ids = vec![RoiId(2)];
        assert!(Ensemble::new(vec![constant_model(Family::Lr, 0.5), m]).is_err());
        assert!(Ensemble::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn select_top_returns_models_in_rank_order() {
        let (x, y) = crate::models::tests::blobs(60, 2, 2.0, 4);
        let ids = vec![RoiId(1), RoiId(2)];
        let cands: Vec<_> = Family::ALL
            .iter()
            .map(|&f| fit(&ModelSpec::new(f, 1), x.view(), &y, &ids).unwrap())
            .collect();
        let (top, scores) = select_top(cands, x.view(), &y, 3, Metric::Kappa).unwrap();
        assert_eq!(top.len(), 3);
        let expect = select_top_families(&scores, 3).unwrap();
        assert_eq!(top.iter().map(|m| m.family()).collect::<Vec<_>>(), expect);
    }

    #[test]
    fn cv_summary_averages_defined_scores() {
        let folds = vec![
            vec![cs(Family::Lr, 0.2, 0.6)],
            vec![CandidateScore {
                family: Family::Lr,
                score: None,
                auc: Some(0.8),
            }],
        ];
        let s = cv_summary_scores(&folds);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].score, Some(0.2));
        assert!((s[0].auc.unwrap() - 0.7).abs() < 1e-12);
    }
}
