//! Subject-wise stratified K-fold plans.
//!
//! The stratification unit is the subject: each subject gets the majority
//! label of its samples (ties go to class 1), subjects are shuffled within
//! their stratum and dealt round-robin to folds. All samples of a subject
//! land in the same validation fold.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_model::SampleMeta;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn make_folds(meta: &[SampleMeta], labels: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if meta.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: meta.len(),
            got: labels.len(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidConfig("K must be at least 2".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::SingleClass);
    }
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        by_subject.entry(m.subject_id.as_str()).or_default().push(i);
    }
    if by_subject.len() < k {
        return Err(Error::TooFewSubjects {
            need: k,
            got: by_subject.len(),
        });
    }

    let mut strata: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (subject, idx) in &by_subject {
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        let majority_positive = 2 * pos >= idx.len();
        strata[usize::from(majority_positive)].push(subject);
    }

    let mut warnings = Vec::new();
    let minority = strata[0].len().min(strata[1].len());
    if minority < k {
        let msg = format!("K = {k} exceeds the {minority} minority-stratum subjects; some validation folds may lack a class");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0usize;
    // class 1 stratum first, then class 0, continuing the deal position
    let [stratum0, stratum1] = &mut strata;
    for (name, stratum) in [("stratum1", stratum1), ("stratum0", stratum0)] {
        let mut r = rng::stream(seed, &["folds", name]);
        stratum.shuffle(&mut r);
        for subject in stratum.iter() {
            fold_of.insert(subject, next % k);
            next += 1;
        }
    }

    let folds = (0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..meta.len()).partition(|&i| fold_of[meta[i].subject_id.as_str()] == f);
            Fold { train, val }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds, warnings })
}

/// `repeats` independent plans; the first uses `seed` itself.
pub fn make_repeated_folds(meta: &[SampleMeta], labels: &[bool], k: usize, seed: u64, repeats: usize) -> Result<Vec<FoldPlan>> {
    (0..repeats.max(1))
        .map(|r| {
            let s = if r == 0 {
                seed
            } else {
                rng::derive_seed(seed, &["repeat", &r.to_string()])
            };
            make_folds(meta, labels, k, s)
        })
        .collect()
}
