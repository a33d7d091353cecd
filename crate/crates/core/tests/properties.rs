use std::collections::{BTreeMap, BTreeSet};

use absorbkit::augmentation::{balance_segment, column_sd, smote_k, AugmentConfig};
use absorbkit::data_model::{select_contrast, Cohort, Condition, Contrast, Dataset, RoiId, SampleMeta};
use absorbkit::ensemble_eval::{compute_metrics, Metric};
use absorbkit::splitting::make_folds;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kappa_brute(y: &[bool], p: &[bool]) -> Option<f64> {
    let n = y.len() as f64;
    let agree = y.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / n;
    let py = y.iter().filter(|&&v| v).count() as f64 / n;
    let pp = p.iter().filter(|&&v| v).count() as f64 / n;
    let chance = py * pp + (1.0 - py) * (1.0 - pp);
    (chance < 1.0).then(|| (agree - chance) / (1.0 - chance))
}

/// Per subject: (positive rows, negative rows).
fn cohort(shape: &[(usize, usize)]) -> (Vec<SampleMeta>, Vec<bool>) {
    let mut meta = Vec::new();
    let mut labels = Vec::new();
    for (s, &(pos, neg)) in shape.iter().enumerate() {
        for (cond, n, label) in [(Condition::J1, pos, true), (Condition::Counting, neg, false)] {
            for r in 0..n {
                meta.push(SampleMeta {
                    sample_id: format!("s{s}_{cond}_{r}"),
                    subject_id: format!("s{s}"),
                    cohort: Cohort::Group,
                    condition: cond,
                    run_id: r as u32 + 1,
                });
                labels.push(label);
            }
        }
    }
    (meta, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kappa_matches_the_rate_formula(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 4..60)) {
        let y: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
        let scores: Vec<f64> = p.iter().map(|&v| if v { 0.9 } else { 0.1 }).collect();
        let m = compute_metrics(&y, &scores, &p).unwrap();
        match (m.get(Metric::Kappa), kappa_brute(&y, &p)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }

    #[test]
    fn folds_keep_subjects_whole(
        shape in prop::collection::vec((1usize..5, 1usize..5), 5..14),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(shape.len() >= k);
        let (meta, labels) = cohort(&shape);
        let plan = make_folds(&meta, &labels, k, seed).unwrap();
        prop_assert_eq!(plan.folds.len(), k);
        let mut seen = vec![0usize; meta.len()];
        for f in &plan.folds {
            let val: BTreeSet<&str> = f.val.iter().map(|&i| meta[i].subject_id.as_str()).collect();
            let train: BTreeSet<&str> = f.train.iter().map(|&i| meta[i].subject_id.as_str()).collect();
            prop_assert!(val.is_disjoint(&train));
            prop_assert_eq!(f.train.len() + f.val.len(), meta.len());
            for &i in &f.val {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(make_folds(&meta, &labels, k, seed).unwrap(), plan);
    }

    #[test]
    fn contrast_selection_ignores_row_order(
        shape in prop::collection::vec((0usize..4, 0usize..4), 2..8),
        seed in any::<u64>(),
    ) {
        let (meta, _) = cohort(&shape);
        prop_assume!(meta.iter().any(|m| m.condition == Condition::J1));
        prop_assume!(meta.iter().any(|m| m.condition == Condition::Counting));
        let n = meta.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let ds = Dataset::new(x, meta, vec![RoiId(1), RoiId(2)]).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let shuffled = ds.select_rows(&order);
        let c = Contrast::new("J1 vs counting", [Condition::J1], [Condition::Counting]).unwrap();
        let collect = |d: &Dataset<f64>| -> BTreeMap<String, (bool, Vec<f64>)> {
            let (sub, y) = select_contrast(d, &c).unwrap();
            sub.meta()
                .iter()
                .zip(y)
                .zip(sub.features().rows())
                .map(|((m, l), r)| (m.sample_id.clone(), (l, r.to_vec())))
                .collect()
        };
        prop_assert_eq!(collect(&ds), collect(&shuffled));
    }

    #[test]
    fn balanced_segments_hit_target_inside_noise_band(
        runs in prop::collection::vec(1u32..6, 1..40),
        seed in any::<u64>(),
    ) {
        let n = runs.len();
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + j as f64);
        let sd = column_sd(x.view());
        let cfg = AugmentConfig::default();
        let seg = balance_segment(x.view(), &runs, &sd, &cfg, &mut rng).unwrap();
        prop_assert_eq!(seg.rows.nrows(), cfg.target_runs_per_segment);
        prop_assert_eq!(seg.run_ids, (1..=27).collect::<Vec<u32>>());
        for c in 0..d {
            let col = x.column(c);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let band = 6.0 * (1.0 - cfg.retention_degree) * cfg.noise_level * sd[c];
            for v in seg.rows.column(c) {
                prop_assert!(*v >= lo - band - 1e-9 && *v <= hi + band + 1e-9);
            }
        }
    }
}

#[test]
fn k_rule_for_small_segments() {
    for size in 2..=10 {
        assert_eq!(smote_k(size, 5), Some(5.min(size - 1)));
    }
    assert_eq!(smote_k(1, 5), None);
}
