//! Synthetic cohorts with a known planted signal, standing in for real
//! parcellated ReHo tables.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{write_covariates, Cohort, Condition, Covariates, Dataset, RoiId, SampleMeta, N_ROIS};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_subjects: usize,
    pub runs_per_condition: u32,
    pub conditions: Vec<Condition>,
    /// Columns roi_0001..roi_<n_features>.
    pub n_features: usize,
    pub n_informative: usize,
    /// Explicit informative ROIs; drawn at random when absent.
    pub informative: Option<Vec<RoiId>>,
    /// Shift of informative ROIs, in marginal SD units.
    pub effect: f64,
    /// SD of the per-(subject, ROI) random intercept.
    pub subject_sd: f64,
    pub noise_sd: f64,
    pub positive_conditions: Vec<Condition>,
    pub case: bool,
    pub case_stage_runs: u32,
    pub case_control_runs: u32,
    /// Added to every feature per SD of the attention-stability covariate.
    pub covariate_loading: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let mut conditions = Condition::STAGES.to_vec();
        conditions.extend([Condition::Counting, Condition::Memory]);
        GeneratorSpec {
            seed: 42,
            n_subjects: 22,
            runs_per_condition: 2,
            conditions,
            n_features: N_ROIS,
            n_informative: 10,
            informative: None,
            effect: 1.5,
            subject_sd: 0.5,
            noise_sd: 1.0,
            positive_conditions: Condition::STAGES.to_vec(),
            case: true,
            case_stage_runs: 27,
            case_control_runs: 16,
            covariate_loading: 0.0,
        }
    }
}

/// Names of the generated covariate columns.
pub const COVARIATE_NAMES: [&str; 5] = ["stability", "width", "quality", "intensity", "meditation"];

#[derive(Clone, Debug)]
pub struct SyntheticCohort<T> {
    pub group: Dataset<T>,
    pub case: Option<Dataset<T>>,
    /// Covariates for group and case rows.
    pub covariates: Covariates<T>,
    pub informative: Vec<RoiId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticFiles {
    pub group_csv: PathBuf,
    pub case_csv: Option<PathBuf>,
    pub covariates_csv: PathBuf,
    pub truth_json: PathBuf,
    pub config_toml: PathBuf,
}

impl GeneratorSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidSpec(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_subjects < 2 {
            return bad("n_subjects must be at least 2".into());
        }
        if self.runs_per_condition == 0 {
            return bad("runs_per_condition must be positive".into());
        }
        if self.conditions.is_empty() {
            return bad("conditions must not be empty".into());
        }
        if self.conditions.iter().collect::<BTreeSet<_>>().len() != self.conditions.len() {
            return bad("conditions contain duplicates".into());
        }
        if self.n_features == 0 || self.n_features > N_ROIS {
            return bad(format!("n_features must lie in 1..={N_ROIS}"));
        }
        match &self.informative {
            Some(ids) => {
                let uniq: BTreeSet<_> = ids.iter().collect();
                if uniq.len() != ids.len() {
                    return bad("informative ROIs contain duplicates".into());
                }
                if let Some(id) = ids.iter().find(|id| id.0 == 0 || usize::from(id.0) > self.n_features) {
                    return bad(format!("informative ROI {id} is outside the generated columns"));
                }
            }
            None if self.n_informative > self.n_features => {
                return bad("n_informative exceeds n_features".into());
            }
            None => {}
        }
        for (name, v) in [("effect", self.effect), ("subject_sd", self.subject_sd), ("noise_sd", self.noise_sd), ("covariate_loading", self.covariate_loading)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.subject_sd < 0.0 || self.noise_sd <= 0.0 {
            return bad("subject_sd must be >= 0 and noise_sd > 0".into());
        }
        if self.case && self.case_stage_runs + self.case_control_runs == 0 {
            return bad("case cohort would be empty".into());
        }
        Ok(())
    }

    fn informative_ids(&self) -> Vec<RoiId> {
        let mut ids = match &self.informative {
            Some(ids) => ids.clone(),
            None => {
                let mut r = rng::stream(self.seed, &["synth", "informative"]);
                index::sample(&mut r, self.n_features, self.n_informative)
                    .into_iter()
                    .map(|j| RoiId((j + 1) as u16))
                    .collect()
            }
        };
        ids.sort();
        ids
    }

    /// Marginal SD of a feature, used to scale the effect.
    pub fn marginal_sd(&self) -> f64 {
        (self.noise_sd.powi(2) + self.subject_sd.powi(2)).sqrt()
    }
}

struct Rows<T> {
    values: Vec<T>,
    meta: Vec<SampleMeta>,
    cov: Vec<T>,
}

impl<T: Scalar> Rows<T> {
    fn new() -> Self {
        Rows {
            values: Vec::new(),
            meta: Vec::new(),
            cov: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn subject(&mut self, spec: &GeneratorSpec, informative: &[bool], subject: &str, cohort: Cohort, runs: &dyn Fn(Condition) -> u32, r: &mut Stream) {
        let d = spec.n_features;
        let intercept = Normal::new(0.0, spec.subject_sd).expect("finite sd");
        let noise = Normal::new(0.0, spec.noise_sd).expect("finite sd");
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let shift = spec.effect * spec.marginal_sd();
        let b: Vec<f64> = (0..d).map(|_| intercept.sample(r)).collect();
        for &cond in &spec.conditions {
            let positive = spec.positive_conditions.contains(&cond);
            for run in 1..=runs(cond) {
                let stability_z: f64 = std.sample(r);
                let width: f64 = 5.0 + 1.5 * std.sample(r);
                let (quality, intensity, meditation) = if cond.is_stage() {
                    (6.0 + 1.5 * std.sample(r), 6.0 + 1.5 * std.sample(r), 1.0)
                } else {
                    (0.0, 0.0, 0.0)
                };
                for j in 0..d {
                    let mut v = b[j] + noise.sample(r) + spec.covariate_loading * stability_z;
                    if positive && informative[j] {
                        v += shift;
                    }
                    self.values.push(T::lit(v));
                }
                let sample_id = format!("{subject}_{cond}_r{run:02}");
                self.cov.extend([5.0 + 1.5 * stability_z, width, quality, intensity, meditation].map(T::lit));
                self.meta.push(SampleMeta {
                    sample_id,
                    subject_id: subject.to_string(),
                    cohort,
                    condition: cond,
                    run_id: run,
                });
            }
        }
    }

    fn into_dataset(self, d: usize) -> Result<(Dataset<T>, Vec<String>, Vec<T>)> {
        let n = self.meta.len();
        let x = Array2::from_shape_vec((n, d), self.values).map_err(|e| Error::InvalidDataset(e.to_string()))?;
        let ids: Vec<String> = self.meta.iter().map(|m| m.sample_id.clone()).collect();
        let ds = Dataset::new(x, self.meta, (1..=d).map(|j| RoiId(j as u16)).collect())?;
        Ok((ds, ids, self.cov))
    }
}

/// Draws a group cohort of `n_subjects` and, optionally, one held-out case
/// subject with the stage/control run counts of the spec.
pub fn generate_synthetic<T: Scalar>(spec: &GeneratorSpec) -> Result<SyntheticCohort<T>> {
    spec.validate()?;
    let informative = spec.informative_ids();
    let mut mask = vec![false; spec.n_features];
    for id in &informative {
        mask[usize::from(id.0) - 1] = true;
    }
    let width = format!("{}", spec.n_subjects).len().max(2);
    let mut group = Rows::<T>::new();
    for s in 0..spec.n_subjects {
        let name = format!("s{:0width$}", s + 1);
        let mut r = rng::stream(spec.seed, &["synth", "subject", &name]);
        group.subject(spec, &mask, &name, Cohort::Group, &|_| spec.runs_per_condition, &mut r);
    }
    let (group, mut cov_ids, mut cov_vals) = group.into_dataset(spec.n_features)?;

    let case = if spec.case {
        let mut rows = Rows::<T>::new();
        let mut r = rng::stream(spec.seed, &["synth", "case"]);
        let runs = |c: Condition| if c.is_stage() { spec.case_stage_runs } else { spec.case_control_runs };
        rows.subject(spec, &mask, "case01", Cohort::Case, &runs, &mut r);
        let (ds, ids, vals) = rows.into_dataset(spec.n_features)?;
        cov_ids.extend(ids);
        cov_vals.extend(vals);
        Some(ds)
    } else {
        None
    };
    let values = Array2::from_shape_vec((cov_ids.len(), COVARIATE_NAMES.len()), cov_vals)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Ok(SyntheticCohort {
        group,
        case,
        covariates: Covariates {
            names: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            sample_ids: cov_ids,
            values,
        },
        informative,
    })
}

#[derive(Serialize)]
struct Truth<'a> {
    informative: &'a [RoiId],
    spec: &'a GeneratorSpec,
}

/// Writes group.csv, case.csv, covariates.csv, truth.json and a ready-made
/// config.toml into `out`.
pub fn write_synthetic<T: Scalar>(spec: &GeneratorSpec, cohort: &SyntheticCohort<T>, out: &Path) -> Result<SyntheticFiles> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
        let p = out.join(name);
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, BufWriter::new(f)))
    };
    let (group_csv, w) = create("group.csv")?;
    crate::data_model::write_feature_table(w, &cohort.group)?;
    let case_csv = match &cohort.case {
        Some(case) => {
            let (p, w) = create("case.csv")?;
            crate::data_model::write_feature_table(w, case)?;
            Some(p)
        }
        None => None,
    };
    let (covariates_csv, w) = create("covariates.csv")?;
    write_covariates(w, &cohort.covariates)?;
    let (truth_json, w) = create("truth.json")?;
    serde_json::to_writer_pretty(
        w,
        &Truth {
            informative: &cohort.informative,
            spec,
        },
    )?;

    let mut cfg = super::PipelineConfig::default();
    cfg.set_seed(spec.seed);
    cfg.paths.group_csv = "group.csv".into();
    cfg.paths.case_csv = "case.csv".into();
    cfg.paths.covariates_csv = Some("covariates.csv".into());
    cfg.paths.out_dir = "run".into();
    let text = toml::to_string(&cfg).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let config_toml = out.join("config.toml");
    std::fs::write(&config_toml, text).map_err(|e| Error::io(&config_toml, e))?;
    Ok(SyntheticFiles {
        group_csv,
        case_csv,
        covariates_csv,
        truth_json,
        config_toml,
    })
}

/// Accuracy of the midpoint threshold on one column, predicting positive
/// above the midpoint of the two class means.
pub fn midpoint_threshold_accuracy<T: Scalar>(x: &[T], y: &[bool]) -> f64 {
    let mean = |want: bool| {
        let v: Vec<f64> = x.iter().zip(y).filter(|(_, &l)| l == want).map(|(v, _)| v.as_f64()).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let (mp, mn) = (mean(true), mean(false));
    let cut = 0.5 * (mp + mn);
    let up = mp >= mn;
    let hits = x.iter().zip(y).filter(|(v, &l)| ((v.as_f64() > cut) == up) == l).count();
    hits as f64 / x.len().max(1) as f64
}
