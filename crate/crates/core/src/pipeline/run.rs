//! The two-step protocol: subject-wise cross-validation on the group
//! cohort, then a refit on all group rows and one test on the case subject.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{FoldTuning, PipelineConfig};
use crate::augmentation::{balance_training, BalanceStrategy, BalancedSet};
use crate::data_model::{load_covariates, load_feature_table, select_contrast, Cohort, Contrast, Covariates, Dataset, RoiId, RoiRegistry, SampleMeta};
use crate::ensemble_eval::{
    compute_metrics, cv_summary_scores, permutation_test, select_top, select_top_families, subject_wise_permutation, summarize, CandidateScore,
    Ensemble, Metric, MetricStat, MetricsReport,
};
use crate::error::{Error, Result};
use crate::feature_selection::{consensus_global, select_features, SelectionResult};
use crate::importance::{column_means, leave_one_region_out, permutation_importance, ImportanceMap};
use crate::models::{fit, Family, ModelSpec, Predictor, TrainedModel};
use crate::residualization::{fit_residualizer, non_constant_columns, ResidualModel};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::splitting::{make_folds, Fold, FoldPlan};

/// Raw features, or features with covariates regressed out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Residual,
}

impl Variant {
    pub fn dir(self, out: &Path) -> PathBuf {
        match self {
            Variant::Raw => out.to_path_buf(),
            Variant::Residual => out.join("residual"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Residual => "residual",
        }
    }
}

fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// OLS residualizer that drops covariates constant over its fit rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Residualizer<T> {
    pub kept: Vec<usize>,
    pub dropped: Vec<String>,
    pub model: ResidualModel<T>,
}

impl<T: Scalar> Residualizer<T> {
    pub fn fit(x: ArrayView2<T>, c: ArrayView2<T>, names: &[String]) -> Result<Self> {
        let kept = non_constant_columns(c);
        let dropped: Vec<String> = (0..names.len()).filter(|k| !kept.contains(k)).map(|k| names[k].clone()).collect();
        if !dropped.is_empty() {
            log::info!("covariates constant over the fit rows are dropped: {dropped:?}");
        }
        let kept_names: Vec<String> = kept.iter().map(|&k| names[k].clone()).collect();
        let model = fit_residualizer(x, c.select(Axis(1), &kept).view(), &kept_names)?;
        Ok(Residualizer { kept, dropped, model })
    }

    pub fn apply(&self, x: ArrayView2<T>, c: ArrayView2<T>) -> Result<Array2<T>> {
        let cs = c.select(Axis(1), &self.kept);
        Ok(self.model.apply(x, cs.view(), &self.model.covariate_names)?.0)
    }
}

/// Group rows of one contrast, with aligned covariates in residual mode.
#[derive(Clone, Debug)]
pub struct ContrastData<T> {
    pub contrast: Contrast,
    pub data: Dataset<T>,
    pub labels: Vec<bool>,
    /// Covariate table (selected columns only) and its rows aligned to `data`.
    pub covariates: Option<(Covariates<T>, Array2<T>)>,
}

impl<T: Scalar> ContrastData<T> {
    pub fn new(group: &Dataset<T>, contrast: &Contrast, covariates: Option<&Covariates<T>>) -> Result<Self> {
        let (data, labels) = select_contrast(group, contrast)?;
        let covariates = match covariates {
            Some(table) => {
                let aligned = table.aligned(data.meta())?;
                Some((table.clone(), aligned))
            }
            None => None,
        };
        Ok(ContrastData {
            contrast: contrast.clone(),
            data,
            labels,
            covariates,
        })
    }

    pub fn variant(&self) -> Variant {
        if self.covariates.is_some() {
            Variant::Residual
        } else {
            Variant::Raw
        }
    }
}

/// One read of the case table, shared by every contrast and logged.
pub struct CaseStore<T> {
    path: PathBuf,
    registry: RoiRegistry,
    data: Mutex<Option<Arc<Dataset<T>>>>,
    log: Mutex<Vec<AccessEvent>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub path: PathBuf,
    pub phase: String,
    pub contrast: String,
    /// `read` for a file read, `cached` for reuse of the loaded rows.
    pub action: String,
}

impl<T: Scalar> CaseStore<T> {
    pub fn new(path: impl Into<PathBuf>, registry: RoiRegistry) -> Self {
        CaseStore {
            path: path.into(),
            registry,
            data: Mutex::new(None),
            log: Mutex::new(Vec::new()),
        }
    }

    fn get(&self, contrast: &str) -> Result<Arc<Dataset<T>>> {
        let mut slot = self.data.lock().expect("case store poisoned");
        let action = if slot.is_some() { "cached" } else { "read" };
        self.log.lock().expect("case log poisoned").push(AccessEvent {
            path: self.path.clone(),
            phase: "finalize_and_test".into(),
            contrast: contrast.into(),
            action: action.into(),
        });
        if let Some(ds) = slot.as_ref() {
            return Ok(ds.clone());
        }
        let ds: Dataset<T> = load_feature_table(&self.path, &self.registry)?;
        if let Some(m) = ds.meta().iter().find(|m| m.cohort != Cohort::Case) {
            return Err(Error::InvalidDataset(format!("case table holds non-case sample `{}`", m.sample_id)));
        }
        let ds = Arc::new(ds);
        *slot = Some(ds.clone());
        Ok(ds)
    }

    pub fn access_log(&self) -> Vec<AccessEvent> {
        self.log.lock().expect("case log poisoned").clone()
    }

    pub fn reads(&self) -> usize {
        self.access_log().iter().filter(|e| e.action == "read").count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Rows used to pick features and ensemble members.
    pub n_tune: usize,
    pub n_train_balanced: usize,
    pub n_synthetic: usize,
    pub selected: Vec<RoiId>,
    pub candidates: Vec<CandidateScore>,
    /// Index of the chosen hyper-parameter candidate per family.
    pub hyper_choice: BTreeMap<Family, usize>,
    pub ensemble: Vec<Family>,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvOutcome {
    pub contrast: String,
    pub variant: Variant,
    #[serde(skip)]
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub summary: BTreeMap<Metric, MetricStat>,
}

impl CvOutcome {
    pub fn mean(&self, m: Metric) -> Option<f64> {
        self.summary.get(&m).and_then(|s| s.mean)
    }
}

#[derive(Serialize)]
struct FoldsFile<'a> {
    contrast: &'a str,
    n_samples: usize,
    plan: &'a FoldPlan,
}

#[derive(Serialize)]
struct SelectionFile<'a, T: Serialize> {
    fold: usize,
    selection: &'a SelectionResult,
    balance: &'a BTreeMap<String, BalanceStrategy>,
    residualizer: Option<&'a Residualizer<T>>,
}

fn fold_seed(cfg: &PipelineConfig, c: &Contrast, fold: &str, part: &str) -> u64 {
    derive_seed(cfg.seed, &[c.name(), fold, part])
}

fn selection_metric_of<T: Scalar>(m: &TrainedModel<T>, x: ArrayView2<T>, y: &[bool], metric: Metric) -> Result<Option<f64>> {
    let probs = m.predict_proba(x)?;
    let labels: Vec<bool> = probs.iter().map(|&p| p >= T::lit(0.5)).collect();
    Ok(compute_metrics(y, &probs, &labels)?.get(metric))
}

/// Fits the listed families; with grid search on, each family keeps the candidate
/// that scores best on `(x_val, y_val)`. Families that fail are left out.
fn fit_families<T: Scalar>(
    cfg: &PipelineConfig,
    seed_of: &(dyn Fn(Family) -> u64 + Sync),
    families: &[Family],
    pinned: Option<&BTreeMap<Family, usize>>,
    balanced: &BalancedSet<T>,
    feature_ids: &[RoiId],
    val: Option<(ArrayView2<T>, &[bool])>,
) -> Result<Vec<(TrainedModel<T>, usize)>> {
    let fitted: Vec<Result<Option<(TrainedModel<T>, usize)>>> = families
        .par_iter()
        .map(|&family| {
            let specs = cfg.candidate_specs(family, seed_of(family));
            let specs: Vec<(usize, ModelSpec)> = match pinned.and_then(|p| p.get(&family)) {
                Some(&i) if i < specs.len() => vec![(i, specs[i].clone())],
                _ => specs.into_iter().enumerate().collect(),
            };
            let mut best: Option<(TrainedModel<T>, usize, f64)> = None;
            for (i, spec) in specs.iter() {
                let m = match fit(spec, balanced.features.view(), &balanced.labels, feature_ids) {
                    Ok(m) => m,
                    Err(e) => {
                        log::warn!("{family} candidate {i} failed to fit: {e}");
                        continue;
                    }
                };
                let score = match (specs.len(), val) {
                    (1, _) | (_, None) => 0.0,
                    (_, Some((x, y))) => selection_metric_of(&m, x, y, cfg.selection_metric)?.unwrap_or(f64::NEG_INFINITY),
                };
                if best.as_ref().is_none_or(|b| score > b.2) {
                    best = Some((m, *i, score));
                }
            }
            Ok(best.map(|(m, i, _)| (m, i)))
        })
        .collect();
    let mut out = Vec::new();
    for r in fitted {
        if let Some(m) = r? {
            out.push(m);
        }
    }
    Ok(out)
}

fn columns_of<T: Scalar>(ds: &Dataset<T>, ids: &[RoiId]) -> Result<Vec<usize>> {
    let missing: Vec<RoiId> = ids.iter().copied().filter(|&id| ds.column_of(id).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::CaseMissingFeatures(missing));
    }
    Ok(ids.iter().map(|&id| ds.column_of(id).expect("checked")).collect())
}

fn masked_ids<T: Scalar>(cfg: &PipelineConfig, ds: &Dataset<T>) -> Result<Vec<RoiId>> {
    let ids = ds.feature_ids();
    match &cfg.selection.prior_mask {
        None => Ok(ids.to_vec()),
        Some(mask) => {
            let kept: Vec<RoiId> = ids.iter().copied().filter(|id| mask.contains(id)).collect();
            if kept.is_empty() {
                return Err(Error::InvalidConfig("prior_mask matches no feature column".into()));
            }
            Ok(kept)
        }
    }
}

/// Splits training-fold positions into (fit, holdout) along subject lines.
fn inner_split(cfg: &PipelineConfig, c: &Contrast, fs: &str, meta: &[SampleMeta], y: &[bool]) -> Result<(Vec<usize>, Vec<usize>)> {
    let subjects: BTreeSet<&str> = meta.iter().map(|m| m.subject_id.as_str()).collect();
    let k = cfg.k.min(subjects.len());
    let plan = make_folds(meta, y, k, fold_seed(cfg, c, fs, "inner"))?;
    let first = plan.folds.into_iter().next().expect("k >= 2 folds");
    Ok((first.train, first.val))
}

fn run_fold<T: Scalar>(cfg: &PipelineConfig, cd: &ContrastData<T>, f: usize, fold: &Fold, dir: &Path) -> Result<FoldOutcome> {
    let c = &cd.contrast;
    let fs = f.to_string();
    let ds = &cd.data;
    let yt: Vec<bool> = fold.train.iter().map(|&i| cd.labels[i]).collect();
    let yv: Vec<bool> = fold.val.iter().map(|&i| cd.labels[i]).collect();
    let mut xt = ds.features().select(Axis(0), &fold.train);
    let mut xv = ds.features().select(Axis(0), &fold.val);
    let mut residualizer = None;
    if let Some((table, cov)) = &cd.covariates {
        let ct = cov.select(Axis(0), &fold.train);
        let cv = cov.select(Axis(0), &fold.val);
        let r = Residualizer::fit(xt.view(), ct.view(), &table.names)?;
        xt = r.apply(xt.view(), ct.view())?;
        xv = r.apply(xv.view(), cv.view())?;
        residualizer = Some(r);
    }
    let meta_train: Vec<SampleMeta> = fold.train.iter().map(|&i| ds.meta()[i].clone()).collect();

    // tuning rows: an inner holdout, or the validation rows themselves
    let inner = match cfg.fold_tuning {
        FoldTuning::Inner => Some(inner_split(cfg, c, &fs, &meta_train, &yt)?),
        FoldTuning::Validation => None,
    };
    let pick = |idx: &[usize]| -> Vec<bool> { idx.iter().map(|&i| yt[i]).collect() };
    let (x_fit, y_fit, x_tune, y_tune) = match &inner {
        Some((a, b)) => (xt.select(Axis(0), a), pick(a), xt.select(Axis(0), b), pick(b)),
        None => (xt.clone(), yt.clone(), xv.clone(), yv.clone()),
    };

    let ids = masked_ids(cfg, ds)?;
    let mask_cols: Vec<usize> = ids.iter().map(|&id| ds.column_of(id).expect("own column")).collect();
    let selection = select_features(
        x_fit.select(Axis(1), &mask_cols).view(),
        &y_fit,
        x_tune.select(Axis(1), &mask_cols).view(),
        &y_tune,
        &ids,
        &cfg.selection,
        &cfg.models,
        fold_seed(cfg, c, &fs, "select"),
    )?;
    let cols = columns_of(ds, &selection.selected)?;
    let xt_s = xt.select(Axis(1), &cols);
    let xv_s = xv.select(Axis(1), &cols);
    let x_tune_s = x_tune.select(Axis(1), &cols);

    let balanced = balance_training(xt_s.view(), &meta_train, &yt, &cfg.augment, &[c.name(), "fold", &fs])?;
    balanced.write_csv(create(&dir.join(format!("augmented_{}_fold{f}.csv", c.slug())))?, &selection.selected)?;
    write_json(
        &dir.join(format!("selection_{}_fold{f}.json", c.slug())),
        &SelectionFile {
            fold: f,
            selection: &selection,
            balance: &balanced.strategies,
            residualizer: residualizer.as_ref(),
        },
    )?;

    let seed_of = |fam: Family| fold_seed(cfg, c, &fs, fam.as_str());
    let mut hyper_choice = BTreeMap::new();
    let (members, candidates) = match &inner {
        Some((a, _)) => {
            let meta_fit: Vec<SampleMeta> = a.iter().map(|&i| meta_train[i].clone()).collect();
            let x_fit_s = x_fit.select(Axis(1), &cols);
            let bal_fit = balance_training(x_fit_s.view(), &meta_fit, &y_fit, &cfg.augment, &[c.name(), "fold", &fs, "inner"])?;
            let tune = Some((x_tune_s.view(), y_tune.as_slice()));
            let mut models = Vec::new();
            for (m, i) in fit_families(cfg, &seed_of, &Family::ALL, None, &bal_fit, &selection.selected, tune)? {
                m.save_json(&dir.join(format!("model_{}_{}_fold{f}_inner.json", m.family(), c.slug())))?;
                hyper_choice.insert(m.family(), i);
                models.push(m);
            }
            let (top, candidates) = select_top(models, x_tune_s.view(), &y_tune, cfg.ensemble_top_l, cfg.selection_metric)?;
            let chosen: Vec<Family> = top.iter().map(|m| m.family()).collect();
            let refit = fit_families(cfg, &seed_of, &chosen, Some(&hyper_choice), &balanced, &selection.selected, None)?;
            let mut members = Vec::new();
            for fam in &chosen {
                let (m, _) = refit
                    .iter()
                    .find(|(m, _)| m.family() == *fam)
                    .ok_or_else(|| Error::DegenerateFit(format!("{fam} failed to refit on fold {f}")))?;
                m.save_json(&dir.join(format!("model_{}_{}_fold{f}.json", m.family(), c.slug())))?;
                members.push(m.clone());
            }
            (members, candidates)
        }
        None => {
            let mut models = Vec::new();
            for (m, i) in fit_families(cfg, &seed_of, &Family::ALL, None, &balanced, &selection.selected, Some((xv_s.view(), &yv)))? {
                m.save_json(&dir.join(format!("model_{}_{}_fold{f}.json", m.family(), c.slug())))?;
                hyper_choice.insert(m.family(), i);
                models.push(m);
            }
            select_top(models, xv_s.view(), &yv, cfg.ensemble_top_l, cfg.selection_metric)?
        }
    };
    let ensemble = Ensemble::new(members)?;
    let (probs, labels) = ensemble.predict_with_labels(xv_s.view())?;
    let metrics = compute_metrics(&yv, &probs, &labels)?;
    Ok(FoldOutcome {
        fold: f,
        n_train: fold.train.len(),
        n_val: fold.val.len(),
        n_tune: inner.as_ref().map_or(fold.val.len(), |(_, b)| b.len()),
        n_train_balanced: balanced.labels.len(),
        n_synthetic: balanced.n_synthetic(),
        selected: selection.selected,
        candidates,
        hyper_choice,
        ensemble: ensemble.families(),
        metrics,
    })
}

/// Subject-wise K-fold CV for one contrast. Writes folds.json,
/// selection/augmented/model artifacts per fold and cv_metrics.json
/// into `dir`.
pub fn run_group_cv<T: Scalar>(cfg: &PipelineConfig, cd: &ContrastData<T>, dir: &Path) -> Result<CvOutcome> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &cd.contrast;
    // same seed for raw and residual runs, so both see identical folds
    let plan = make_folds(cd.data.meta(), &cd.labels, cfg.k, derive_seed(cfg.seed, &[c.name(), "folds"]))
        .map_err(|e| e.in_contrast(c.name(), None))?;
    for w in &plan.warnings {
        log::warn!("{}: {w}", c.name());
    }
    write_json(
        &dir.join("folds.json"),
        &FoldsFile {
            contrast: c.name(),
            n_samples: cd.data.n_samples(),
            plan: &plan,
        },
    )?;
    let folds = plan
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| run_fold(cfg, cd, f, fold, dir).map_err(|e| e.in_contrast(c.name(), Some(f))))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.metrics.clone()).collect();
    let out = CvOutcome {
        contrast: c.name().to_string(),
        variant: cd.variant(),
        plan,
        folds,
        summary: summarize(&reports),
    };
    write_json(&dir.join("cv_metrics.json"), &out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub metric: Metric,
    pub iterations: usize,
    pub failed: usize,
    pub observed: f64,
    pub null_mean: Option<f64>,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalOutcome {
    pub contrast: String,
    pub variant: Variant,
    pub features: Vec<RoiId>,
    pub cv_scores: Vec<CandidateScore>,
    pub families: Vec<Family>,
    pub hyper_choice: BTreeMap<Family, usize>,
    pub n_group: usize,
    pub n_group_balanced: usize,
    pub n_case: usize,
    pub metrics: MetricsReport,
    pub permutation: Option<PermutationSummary>,
    pub cv_summary: BTreeMap<Metric, MetricStat>,
    #[serde(skip)]
    pub case_truth: Vec<bool>,
    #[serde(skip)]
    pub case_predictions: Vec<bool>,
    #[serde(skip)]
    pub importance: Option<ImportanceMap>,
}

/// Most frequent candidate index per family over folds (ties: lower index).
fn pooled_hyper_choice(cv: &CvOutcome) -> BTreeMap<Family, usize> {
    let mut counts: BTreeMap<Family, BTreeMap<usize, usize>> = BTreeMap::new();
    for f in &cv.folds {
        for (&fam, &i) in &f.hyper_choice {
            *counts.entry(fam).or_default().entry(i).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(fam, c)| {
            let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&i, _)| i).unwrap_or(0);
            (fam, best)
        })
        .collect()
}

/// Refits on all group rows of the contrast and evaluates once on the case
/// rows. Writes the final augmented set, models, metrics_<slug>.json and
/// importance_<slug>.csv into `dir`.
pub fn finalize_and_test<T: Scalar>(
    cfg: &PipelineConfig,
    cd: &ContrastData<T>,
    cv: &CvOutcome,
    case: &CaseStore<T>,
    registry: &RoiRegistry,
    dir: &Path,
) -> Result<FinalOutcome> {
    let c = &cd.contrast;
    let ds = &cd.data;
    let per_fold: Vec<Vec<RoiId>> = cv.folds.iter().map(|f| f.selected.clone()).collect();
    let features = consensus_global(&per_fold, cfg.selection.consensus)?;
    let cols = columns_of(ds, &features)?;
    let mut x = ds.features().select(Axis(1), &cols);
    let mut residualizer = None;
    if let Some((table, cov)) = &cd.covariates {
        let r = Residualizer::fit(x.view(), cov.view(), &table.names)?;
        x = r.apply(x.view(), cov.view())?;
        residualizer = Some(r);
    }
    let balanced = balance_training(x.view(), ds.meta(), &cd.labels, &cfg.augment, &[c.name(), "final"])?;
    balanced.write_csv(create(&dir.join(format!("augmented_{}_final.csv", c.slug())))?, &features)?;

    let hyper_choice = pooled_hyper_choice(cv);
    let seed_of = |fam: Family| derive_seed(cfg.seed, &[c.name(), "final", fam.as_str()]);
    let fitted = fit_families(cfg, &seed_of, &Family::ALL, Some(&hyper_choice), &balanced, &features, None)?;
    let models: Vec<TrainedModel<T>> = fitted.into_iter().map(|(m, _)| m).collect();
    for m in &models {
        m.save_json(&dir.join(format!("model_{}_{}_final.json", m.family(), c.slug())))?;
    }
    let fitted_families: Vec<Family> = models.iter().map(|m| m.family()).collect();
    let cv_scores: Vec<CandidateScore> = cv_summary_scores(&cv.folds.iter().map(|f| f.candidates.clone()).collect::<Vec<_>>())
        .into_iter()
        .filter(|s| fitted_families.contains(&s.family))
        .collect();
    let families = select_top_families(&cv_scores, cfg.ensemble_top_l)?;
    let members: Vec<TrainedModel<T>> = families
        .iter()
        .map(|f| models.iter().find(|m| m.family() == *f).expect("fitted").clone())
        .collect();
    let ensemble = Ensemble::new(members)?;

    // the only place case rows are touched
    let case_all = case.get(c.name())?;
    let (case_ds, y_case) = select_contrast(&case_all, c)?;
    let case_cols = columns_of(&case_ds, &features)?;
    let mut x_case = case_ds.features().select(Axis(1), &case_cols);
    if let (Some(r), Some((table, _))) = (&residualizer, &cd.covariates) {
        let c_case = table.aligned(case_ds.meta())?;
        x_case = r.apply(x_case.view(), c_case.view())?;
    }
    let (probs, predictions) = ensemble.predict_with_labels(x_case.view())?;
    let mut metrics = compute_metrics(&y_case, &probs, &predictions)?;

    let permutation = if cfg.wants_permutation(c) {
        let observed = metrics.get(cfg.permutation_metric).unwrap_or(0.0);
        let subjects: Vec<&str> = balanced.subjects.iter().map(String::as_str).collect();
        let specs: Vec<ModelSpec> = ensemble.members.iter().map(|m| m.spec.clone()).collect();
        let res = permutation_test(cfg.permutation_iterations, derive_seed(cfg.seed, &[c.name(), "permutation"]), observed, |r| {
            let y_perm = subject_wise_permutation(&subjects, &balanced.conditions, &balanced.labels, r);
            let members = specs
                .iter()
                .map(|s| fit(s, balanced.features.view(), &y_perm, &features))
                .collect::<Result<Vec<_>>>()?;
            let (p, l) = Ensemble::new(members)?.predict_with_labels(x_case.view())?;
            Ok(compute_metrics(&y_case, &p, &l)?.get(cfg.permutation_metric).unwrap_or(0.0))
        });
        metrics.p_value = Some(res.p_value);
        Some(PermutationSummary {
            metric: cfg.permutation_metric,
            iterations: res.iterations,
            failed: res.failed,
            observed,
            null_mean: (!res.nulls.is_empty()).then(|| res.nulls.iter().sum::<f64>() / res.nulls.len() as f64),
            p_value: res.p_value,
        })
    } else {
        None
    };

    // importance is probed on the held-out case rows; nothing here feeds
    // back into any fitted model
    let rf = models.iter().find(|m| m.family() == Family::Rf);
    let lr = models.iter().find(|m| m.family() == Family::Lr);
    let forest_view = rf.and_then(|m| m.impurity_importances());
    let linear_view = lr.and_then(|m| m.linear_coefficients()).map(|w| w.iter().map(|v| v.as_f64().abs()).collect());
    let perm_view = permutation_importance(
        &ensemble,
        x_case.view(),
        &y_case,
        cfg.importance_repeats,
        cfg.importance_metric,
        derive_seed(cfg.seed, &[c.name(), "importance"]),
    )?;
    let fill = column_means(balanced.features.view());
    let probes: Vec<&dyn Predictor<T>> = models.iter().map(|m| m as &dyn Predictor<T>).collect();
    let loro = leave_one_region_out(&probes, x_case.view(), &y_case, &fill)?;
    let importance = ImportanceMap::from_raw(features.clone(), forest_view, linear_view, Some(perm_view), loro, probes.len());
    importance.write_csv(registry, create(&dir.join(format!("importance_{}.csv", c.slug())))?)?;

    let out = FinalOutcome {
        contrast: c.name().to_string(),
        variant: cd.variant(),
        features,
        cv_scores,
        families,
        hyper_choice,
        n_group: ds.n_samples(),
        n_group_balanced: balanced.labels.len(),
        n_case: y_case.len(),
        metrics,
        permutation,
        cv_summary: cv.summary.clone(),
        case_truth: y_case,
        case_predictions: predictions,
        importance: Some(importance),
    };
    write_json(&dir.join(format!("metrics_{}.json", c.slug())), &out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub name: String,
    pub cv: BTreeMap<Metric, MetricStat>,
    #[serde(rename = "final")]
    pub final_metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastFailure {
    pub contrast: String,
    pub variant: Variant,
    pub error: String,
    pub data_error: bool,
}

/// Per-contrast finals plus their means, in contrast order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: Variant,
    pub contrasts: Vec<ContrastSummary>,
    /// Mean (and SD) of each final metric over contrasts where it is defined.
    pub overall: BTreeMap<Metric, MetricStat>,
    pub failed: Vec<ContrastFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub raw: Option<f64>,
    pub residual: Option<f64>,
    pub delta: Option<f64>,
}

impl Delta {
    fn new(raw: Option<f64>, residual: Option<f64>) -> Self {
        Delta {
            raw,
            residual,
            delta: raw.zip(residual).map(|(a, b)| b - a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualComparison {
    pub contrast: String,
    pub accuracy: Delta,
    pub kappa: Delta,
    pub cv_accuracy: Delta,
    pub cv_kappa: Delta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualVsRaw {
    pub contrasts: Vec<ResidualComparison>,
    pub overall_accuracy: Delta,
    pub overall_kappa: Delta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastEntry {
    pub contrast: String,
    pub variant: Variant,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
    pub seconds_cv: f64,
    pub seconds_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub version: String,
    /// `ok`, `partial` or `error`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub threads: usize,
    pub timings: BTreeMap<String, f64>,
    pub contrasts: Vec<ContrastEntry>,
    pub summaries: Vec<PathBuf>,
    pub case_access: Vec<AccessEvent>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summaries: Vec<Summary>,
    pub finals: Vec<FinalOutcome>,
}

impl RunOutcome {
    pub fn failures(&self) -> Vec<&ContrastFailure> {
        self.summaries.iter().flat_map(|s| &s.failed).collect()
    }
}

struct ContrastRun {
    cv: CvOutcome,
    fin: FinalOutcome,
    seconds_cv: f64,
    seconds_final: f64,
}

fn run_contrast<T: Scalar>(
    cfg: &PipelineConfig,
    group: &Dataset<T>,
    covariates: Option<&Covariates<T>>,
    contrast: &Contrast,
    case: &CaseStore<T>,
    registry: &RoiRegistry,
    dir: &Path,
) -> Result<ContrastRun> {
    let cd = ContrastData::new(group, contrast, covariates)?;
    let t0 = Instant::now();
    let cv = run_group_cv(cfg, &cd, dir)?;
    let seconds_cv = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let fin = finalize_and_test(cfg, &cd, &cv, case, registry, dir)?;
    Ok(ContrastRun {
        cv,
        fin,
        seconds_cv,
        seconds_final: t1.elapsed().as_secs_f64(),
    })
}

fn list_artifacts(dir: &Path, root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .map(|p| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn load_inputs<T: Scalar>(cfg: &PipelineConfig, registry: &RoiRegistry) -> Result<(Dataset<T>, Option<Covariates<T>>)> {
    let group: Dataset<T> = load_feature_table(&cfg.paths.group_csv, registry)?;
    if let Some(m) = group.meta().iter().find(|m| m.cohort != Cohort::Group) {
        return Err(Error::InvalidDataset(format!("group table holds non-group sample `{}`", m.sample_id)));
    }
    let covariates = match (&cfg.paths.covariates_csv, cfg.residualize) {
        (Some(p), true) => {
            let table: Covariates<T> = load_covariates(p)?;
            let names = cfg.residual_covariates.clone().unwrap_or_else(|| table.names.clone());
            let cols = names
                .iter()
                .map(|n| {
                    table
                        .names
                        .iter()
                        .position(|t| t == n)
                        .ok_or_else(|| Error::CovariateMismatch(format!("covariate `{n}` not in {}", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Covariates {
                values: table.values.select(Axis(1), &cols),
                names,
                sample_ids: table.sample_ids,
            })
        }
        _ => None,
    };
    Ok((group, covariates))
}

/// Runs every configured contrast (and the residual rerun when enabled),
/// writing per-contrast artifacts, summary.json, residual_vs_raw.json and
/// manifest.json. Contrast failures are recorded and do not stop the
/// others; the manifest is written on every exit path after validation.
pub fn run_all<T: Scalar>(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    cfg.prepare_out_dir()?;
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| run_all_inner::<T>(cfg)),
        None => run_all_inner::<T>(cfg),
    }
}

fn run_all_inner<T: Scalar>(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let out = cfg.paths.out_dir.clone();
    let started = Instant::now();
    let mut manifest = RunManifest {
        toolkit: "absorbkit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status: "error".into(),
        error: None,
        config: cfg.clone(),
        threads: rayon::current_num_threads(),
        timings: BTreeMap::new(),
        contrasts: Vec::new(),
        summaries: Vec::new(),
        case_access: Vec::new(),
    };
    let fail = |mut m: RunManifest, e: Error| -> Result<RunOutcome> {
        m.error = Some(e.to_string());
        write_json(&out.join("manifest.json"), &m)?;
        Err(e)
    };

    let registry = match &cfg.paths.roi_labels {
        Some(p) => match RoiRegistry::standard().with_labels(p) {
            Ok(r) => r,
            Err(e) => return fail(manifest, e),
        },
        None => RoiRegistry::standard(),
    };
    let t_load = Instant::now();
    let (group, covariates) = match load_inputs::<T>(cfg, &registry) {
        Ok(v) => v,
        Err(e) => return fail(manifest, e),
    };
    manifest.timings.insert("load".into(), t_load.elapsed().as_secs_f64());
    let contrasts = cfg.resolved_contrasts()?;
    let case = CaseStore::<T>::new(&cfg.paths.case_csv, registry.clone());

    let mut variants = vec![(Variant::Raw, None)];
    if let Some(cov) = covariates.as_ref() {
        variants.push((Variant::Residual, Some(cov)));
    }
    let mut summaries = Vec::new();
    let mut finals = Vec::new();
    for (variant, cov) in variants {
        let t_variant = Instant::now();
        let root = variant.dir(&out);
        let results: Vec<Result<ContrastRun>> = contrasts
            .par_iter()
            .map(|c| {
                let dir = root.join(c.slug());
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                run_contrast(cfg, &group, cov, c, &case, &registry, &dir).map_err(|e| e.in_contrast(c.name(), None))
            })
            .collect();
        let mut summary = Summary {
            variant,
            contrasts: Vec::new(),
            overall: BTreeMap::new(),
            failed: Vec::new(),
        };
        for (c, r) in contrasts.iter().zip(results) {
            let dir = root.join(c.slug());
            let mut entry = ContrastEntry {
                contrast: c.name().to_string(),
                variant,
                status: "ok".into(),
                error: None,
                artifacts: list_artifacts(&dir, &out),
                seconds_cv: 0.0,
                seconds_final: 0.0,
            };
            match r {
                Ok(run) => {
                    entry.seconds_cv = run.seconds_cv;
                    entry.seconds_final = run.seconds_final;
                    summary.contrasts.push(ContrastSummary {
                        name: c.name().to_string(),
                        cv: run.cv.summary.clone(),
                        final_metrics: run.fin.metrics.clone(),
                    });
                    finals.push(run.fin);
                }
                Err(e) => {
                    log::error!("{e}");
                    entry.status = "failed".into();
                    entry.error = Some(e.to_string());
                    summary.failed.push(ContrastFailure {
                        contrast: c.name().to_string(),
                        variant,
                        error: e.to_string(),
                        data_error: e.is_data_error(),
                    });
                }
            }
            manifest.contrasts.push(entry);
        }
        let reports: Vec<MetricsReport> = summary.contrasts.iter().map(|s| s.final_metrics.clone()).collect();
        summary.overall = summarize(&reports);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let path = root.join("summary.json");
        write_json(&path, &summary)?;
        manifest.summaries.push(path.strip_prefix(&out).map(Path::to_path_buf).unwrap_or(path));
        manifest.timings.insert(variant.as_str().into(), t_variant.elapsed().as_secs_f64());
        summaries.push(summary);
    }

    if let [raw, resid] = summaries.as_slice() {
        let cmp = compare_residual(raw, resid);
        write_json(&out.join("residual_vs_raw.json"), &cmp)?;
    }
    manifest.case_access = case.access_log();
    manifest.timings.insert("total".into(), started.elapsed().as_secs_f64());
    let failed = summaries.iter().any(|s| !s.failed.is_empty());
    manifest.status = if failed { "partial" } else { "ok" }.into();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        manifest,
        summaries,
        finals,
    })
}

fn compare_residual(raw: &Summary, resid: &Summary) -> ResidualVsRaw {
    let find = |s: &Summary, name: &str| s.contrasts.iter().find(|c| c.name == name).cloned();
    let cv_mean = |c: &Option<ContrastSummary>, m: Metric| c.as_ref().and_then(|c| c.cv.get(&m)).and_then(|s| s.mean);
    let fin = |c: &Option<ContrastSummary>, m: Metric| c.as_ref().and_then(|c| c.final_metrics.get(m));
    let contrasts = raw
        .contrasts
        .iter()
        .map(|r| {
            let a = Some(r.clone());
            let b = find(resid, &r.name);
            ResidualComparison {
                contrast: r.name.clone(),
                accuracy: Delta::new(fin(&a, Metric::Accuracy), fin(&b, Metric::Accuracy)),
                kappa: Delta::new(fin(&a, Metric::Kappa), fin(&b, Metric::Kappa)),
                cv_accuracy: Delta::new(cv_mean(&a, Metric::Accuracy), cv_mean(&b, Metric::Accuracy)),
                cv_kappa: Delta::new(cv_mean(&a, Metric::Kappa), cv_mean(&b, Metric::Kappa)),
            }
        })
        .collect();
    let overall = |s: &Summary, m: Metric| s.overall.get(&m).and_then(|v| v.mean);
    ResidualVsRaw {
        contrasts,
        overall_accuracy: Delta::new(overall(raw, Metric::Accuracy), overall(resid, Metric::Accuracy)),
        overall_kappa: Delta::new(overall(raw, Metric::Kappa), overall(resid, Metric::Kappa)),
    }
}
