//! Right-tailed permutation significance with subject-level label shuffles.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::Condition;
use crate::error::Result;
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed: f64,
    pub iterations: usize,
    /// Null statistics in iteration order (failed iterations omitted).
    pub nulls: Vec<f64>,
    pub failed: usize,
    pub p_value: f64,
}

/// `(1 + #{null >= observed}) / (1 + #nulls)`.
pub fn p_value(observed: f64, nulls: &[f64]) -> f64 {
    let exceed = nulls.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (1 + nulls.len()) as f64
}

/// Runs `null_stat` once per iteration, each with its own keyed stream, in
/// parallel; results are reduced in iteration order. Iterations whose refit
/// fails are logged and left out of the null distribution.
pub fn permutation_test<F>(iterations: usize, seed: u64, observed: f64, null_stat: F) -> PermutationResult
where
    F: Fn(&mut Stream) -> Result<f64> + Sync,
{
    let results: Vec<Result<f64>> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &["permutation", &i.to_string()]);
            null_stat(&mut r)
        })
        .collect();
    let mut nulls = Vec::with_capacity(iterations);
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => nulls.push(v),
            Err(e) => {
                failed += 1;
                log::warn!("permutation iteration {i} failed: {e}");
            }
        }
    }
    PermutationResult {
        observed,
        iterations,
        p_value: p_value(observed, &nulls),
        nulls,
        failed,
    }
}

/// Shuffles labels at the subject level.
///
/// When every subject carries one class, subject labels are permuted across
/// subjects. When subjects contribute to both classes, the labels of each
/// subject's (subject, condition) segments are permuted within that subject.
/// Either way all rows of a unit receive the same permuted label and the
/// class count per exchange block is preserved.
pub fn subject_wise_permutation(subjects: &[&str], conditions: &[Condition], labels: &[bool], rng: &mut Stream) -> Vec<bool> {
    let mut per_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        per_subject.entry(s).or_default().push(i);
    }
    let pure = per_subject.values().all(|rows| rows.iter().all(|&i| labels[i] == labels[rows[0]]));

    // exchange block -> unit -> rows
    let mut blocks: BTreeMap<&str, BTreeMap<(&str, Condition), Vec<usize>>> = BTreeMap::new();
    for (i, (&s, &c)) in subjects.iter().zip(conditions).enumerate() {
        let block = if pure { "" } else { s };
        let unit = if pure { (s, Condition::J1) } else { (s, c) };
        blocks.entry(block).or_default().entry(unit).or_default().push(i);
    }
    let mut out = labels.to_vec();
    for units in blocks.values() {
        let unit_rows: Vec<&Vec<usize>> = units.values().collect();
        let mut unit_labels: Vec<bool> = unit_rows
            .iter()
            .map(|rows| 2 * rows.iter().filter(|&&i| labels[i]).count() >= rows.len())
            .collect();
        unit_labels.shuffle(rng);
        for (rows, &l) in unit_rows.iter().zip(&unit_labels) {
            for &i in rows.iter() {
                out[i] = l;
            }
        }
    }
    out
}
