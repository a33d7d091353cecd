//! Binary classification metrics. A metric whose denominator is zero is
//! reported as absent rather than as 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    pub fn from_labels(y_true: &[bool], y_pred: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.n())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    /// Harmonic mean of precision and recall, as `2tp / (2tp + fp + fn)`.
    pub fn f1(&self) -> Option<f64> {
        self.precision()?;
        self.recall()?;
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Cohen's kappa, evaluated in integers as
    /// `(n (tp + tn) - S) / (n^2 - S)` with `S` the marginal cross-products,
    /// so the only rounding is the final division.
    pub fn kappa(&self) -> Option<f64> {
        let (tp, fp, fn_, tn) = (self.tp as i128, self.fp as i128, self.fn_ as i128, self.tn as i128);
        let n = tp + fp + fn_ + tn;
        let s = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
        let den = n * n - s;
        (den != 0).then(|| (n * (tp + tn) - s) as f64 / den as f64)
    }
}

/// Mann-Whitney AUC with half credit for tied scores (midranks).
pub fn auc<T: Scalar>(y_true: &[bool], scores: &[T]) -> Option<f64> {
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // twice the rank sum keeps midranks integral
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        rank2_pos += mid2 * order[i..=j].iter().filter(|&&k| y_true[k]).count() as u128;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = rank2_pos - p * (p + 1);
    Some(u2 as f64 / (2 * p * q) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "Acc")]
    Accuracy,
    #[serde(rename = "CK")]
    Kappa,
    #[serde(rename = "AUC")]
    Auc,
    Precision,
    Recall,
    F1,
    Specificity,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Accuracy,
        Metric::Kappa,
        Metric::Auc,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::Specificity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc",
            Metric::Kappa => "CK",
            Metric::Auc => "AUC",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::F1 => "F1",
            Metric::Specificity => "Specificity",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "acc" | "accuracy" => Metric::Accuracy,
            "ck" | "kappa" => Metric::Kappa,
            "auc" => Metric::Auc,
            "precision" => Metric::Precision,
            "recall" | "sensitivity" => Metric::Recall,
            "f1" => Metric::F1,
            "specificity" => Metric::Specificity,
            _ => return Err(format!("unknown metric `{s}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "Acc")]
    pub accuracy: Option<f64>,
    #[serde(rename = "CK")]
    pub kappa: Option<f64>,
    #[serde(rename = "AUC")]
    pub auc: Option<f64>,
    #[serde(rename = "Precision")]
    pub precision: Option<f64>,
    #[serde(rename = "Recall")]
    pub recall: Option<f64>,
    #[serde(rename = "F1")]
    pub f1: Option<f64>,
    #[serde(rename = "Specificity")]
    pub specificity: Option<f64>,
    #[serde(rename = "p-Value")]
    pub p_value: Option<f64>,
    pub confusion: Confusion,
    pub n: u64,
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Kappa => self.kappa,
            Metric::Auc => self.auc,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Specificity => self.specificity,
        }
    }

    pub fn require(&self, m: Metric) -> Result<f64> {
        self.get(m).ok_or(Error::UndefinedMetric(m.name()))
    }

    pub fn undefined(&self) -> Vec<Metric> {
        Metric::ALL.into_iter().filter(|&m| self.get(m).is_none()).collect()
    }
}

pub fn compute_metrics<T: Scalar>(y_true: &[bool], probs: &[T], labels: &[bool]) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(Error::TooFewRows { need: 1, got: 0 });
    }
    for len in [probs.len(), labels.len()] {
        if len != y_true.len() {
            return Err(Error::DimensionMismatch {
                expected: y_true.len(),
                got: len,
            });
        }
    }
    let c = Confusion::from_labels(y_true, labels);
    Ok(MetricsReport {
        accuracy: c.accuracy(),
        kappa: c.kappa(),
        auc: auc(y_true, probs),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        specificity: c.specificity(),
        p_value: None,
        confusion: c,
        n: c.n(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two defined values.
    pub sd: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

/// Mean and SD per metric over the reports where that metric is defined.
pub fn summarize(reports: &[MetricsReport]) -> BTreeMap<Metric, MetricStat> {
    Metric::ALL
        .into_iter()
        .map(|m| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(m)).collect();
            let k = vals.len();
            let mean = (k > 0).then(|| vals.iter().sum::<f64>() / k as f64);
            let sd = match mean {
                Some(mu) if k > 1 => Some((vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()),
                _ => None,
            };
            if k < reports.len() {
                log::info!("{} undefined in {} of {} reports", m.name(), reports.len() - k, reports.len());
            }
            (
                m,
                MetricStat {
                    mean,
                    sd,
                    n_defined: k,
                    n_undefined: reports.len() - k,
                },
            )
        })
        .collect()
}
