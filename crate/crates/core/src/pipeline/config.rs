use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentConfig;
use crate::data_model::{default_contrasts, Contrast};
use crate::ensemble_eval::Metric;
use crate::error::{Error, Result};
use crate::feature_selection::SelectionConfig;
use crate::models::{Family, ForestHyper, Hyper, KnnHyper, LrHyper, MlpHyper, ModelConfigs, ModelSpec, SvmHyper, TreeHyper};

/// A contrast given either by the name of a default contrast or in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContrastRef {
    Named(String),
    Custom(Contrast),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub group_csv: PathBuf,
    pub case_csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_labels: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Extra hyper-parameter candidates per family, tried next to the
/// configured values when `grid_search` is on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lr: Vec<LrHyper>,
    pub dt: Vec<TreeHyper>,
    pub rf: Vec<ForestHyper>,
    pub svm: Vec<SvmHyper>,
    pub knn: Vec<KnnHyper>,
    pub mlp: Vec<MlpHyper>,
}

/// Which rows drive feature selection and ensemble membership inside a CV fold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldTuning {
    /// A subject-wise holdout carved out of the training fold; the chosen
    /// families are then refit on the whole training fold.
    #[default]
    Inner,
    /// The fold's own validation rows. Scores come out optimistic.
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    pub ensemble_top_l: usize,
    /// Metric used to rank candidate families.
    pub selection_metric: Metric,
    pub fold_tuning: FoldTuning,
    pub selection: SelectionConfig,
    pub augment: AugmentConfig,
    pub models: ModelConfigs,
    pub grid_search: bool,
    pub grid: GridConfig,
    /// Empty means every default contrast.
    pub contrasts: Vec<ContrastRef>,
    pub permutation_iterations: usize,
    /// Contrast names that get a permutation p-value; `None` means all.
    pub permutation_contrasts: Option<Vec<String>>,
    pub permutation_metric: Metric,
    pub importance_repeats: usize,
    pub importance_metric: Metric,
    pub residualize: bool,
    /// Covariate columns used for residualization; `None` means all.
    pub residual_covariates: Option<Vec<String>>,
    /// Worker threads; `None` uses the ambient pool.
    pub threads: Option<usize>,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            k: 5,
            ensemble_top_l: 3,
            selection_metric: Metric::Kappa,
            fold_tuning: FoldTuning::default(),
            selection: SelectionConfig::default(),
            augment: AugmentConfig::default(),
            models: ModelConfigs::default(),
            grid_search: false,
            grid: GridConfig::default(),
            contrasts: Vec::new(),
            permutation_iterations: 1000,
            permutation_contrasts: None,
            permutation_metric: Metric::Accuracy,
            importance_repeats: 10,
            importance_metric: Metric::Accuracy,
            residualize: false,
            residual_covariates: None,
            threads: None,
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.group_csv);
        fix(&mut self.paths.case_csv);
        fix(&mut self.paths.out_dir);
        if let Some(p) = self.paths.covariates_csv.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.roi_labels.as_mut() {
            fix(p);
        }
    }

    /// Applies a new global seed to every seeded sub-config.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.augment.seed = seed;
    }

    /// Resolved contrast list in configured order.
    pub fn resolved_contrasts(&self) -> Result<Vec<Contrast>> {
        if self.contrasts.is_empty() {
            return Ok(default_contrasts());
        }
        let defaults = default_contrasts();
        self.contrasts
            .iter()
            .map(|c| match c {
                ContrastRef::Custom(c) => Ok(c.clone()),
                ContrastRef::Named(name) => defaults
                    .iter()
                    .find(|d| d.name().eq_ignore_ascii_case(name.trim()))
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown contrast `{name}`"))),
            })
            .collect()
    }

    /// Keeps only the named contrasts, which may be default names or names
    /// of configured custom contrasts.
    pub fn restrict_contrasts(&mut self, names: &[String]) -> Result<()> {
        let all = self.resolved_contrasts()?;
        let mut picked = Vec::new();
        for n in names {
            let c = all
                .iter()
                .find(|c| c.name().eq_ignore_ascii_case(n.trim()))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown contrast `{n}`")))?;
            picked.push(ContrastRef::Custom(c.clone()));
        }
        if let Some(perm) = self.permutation_contrasts.as_mut() {
            perm.retain(|n| picked.iter().any(|c| matches!(c, ContrastRef::Custom(c) if c.name().eq_ignore_ascii_case(n.trim()))));
        }
        self.contrasts = picked;
        Ok(())
    }

    pub fn wants_permutation(&self, contrast: &Contrast) -> bool {
        self.permutation_iterations > 0
            && self
                .permutation_contrasts
                .as_ref()
                .is_none_or(|names| names.iter().any(|n| n.eq_ignore_ascii_case(contrast.name())))
    }

    /// Candidate specs for one family; index 0 is the configured value.
    pub fn candidate_specs(&self, family: Family, seed: u64) -> Vec<ModelSpec> {
        let mut out = vec![self.models.spec(family, seed)];
        if self.grid_search {
            let extra: Vec<Hyper> = match family {
                Family::Lr => self.grid.lr.iter().cloned().map(Hyper::Lr).collect(),
                Family::Dt => self.grid.dt.iter().cloned().map(Hyper::Dt).collect(),
                Family::Rf => self.grid.rf.iter().cloned().map(Hyper::Rf).collect(),
                Family::SvmLinear => self.grid.svm.iter().cloned().map(Hyper::Svm).collect(),
                Family::Knn => self.grid.knn.iter().cloned().map(Hyper::Knn).collect(),
                Family::Mlp => self.grid.mlp.iter().cloned().map(Hyper::Mlp).collect(),
            };
            out.extend(extra.into_iter().map(|hyper| ModelSpec { family, hyper, seed }));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 2 {
            return bad("K must be at least 2".into());
        }
        if self.ensemble_top_l == 0 || self.ensemble_top_l > Family::ALL.len() {
            return bad(format!("ensemble_top_l must lie in 1..={}", Family::ALL.len()));
        }
        if self.importance_repeats == 0 {
            return bad("importance_repeats must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        self.selection.validate()?;
        self.augment.validate()?;
        self.validate_models()?;

        let contrasts = self.resolved_contrasts()?;
        let mut names = BTreeSet::new();
        let mut slugs = BTreeSet::new();
        for c in &contrasts {
            if !names.insert(c.name().to_ascii_lowercase()) || !slugs.insert(c.slug()) {
                return bad(format!("contrast `{}` is listed twice or collides with another", c.name()));
            }
        }
        if let Some(perm) = &self.permutation_contrasts {
            for n in perm {
                if !contrasts.iter().any(|c| c.name().eq_ignore_ascii_case(n)) {
                    return bad(format!("permutation contrast `{n}` is not in the contrast list"));
                }
            }
        }
        for (name, p) in [("group_csv", &self.paths.group_csv), ("case_csv", &self.paths.case_csv), ("out_dir", &self.paths.out_dir)] {
            if p.as_os_str().is_empty() {
                return bad(format!("paths.{name} is required"));
            }
        }
        if self.residualize && self.paths.covariates_csv.is_none() {
            return bad("residualize needs paths.covariates_csv".into());
        }
        Ok(())
    }

    fn validate_models(&self) -> Result<()> {
        let check = |spec: &ModelSpec| -> Result<()> {
            let ok = match &spec.hyper {
                Hyper::Lr(h) => h.c > 0.0 && h.max_iter > 0,
                Hyper::Dt(h) => h.max_depth > 0 && h.min_samples_split >= 2,
                Hyper::Rf(h) => h.n_trees > 0 && h.max_depth > 0 && h.min_samples_split >= 2,
                Hyper::Svm(h) => h.c > 0.0 && h.max_epochs > 0,
                Hyper::Knn(h) => h.k > 0,
                Hyper::Mlp(h) => {
                    !h.hidden.is_empty()
                        && h.hidden.iter().all(|&w| w > 0)
                        && h.learning_rate > 0.0
                        && h.epochs > 0
                        && h.batch_size > 0
                        && (0.0..1.0).contains(&h.validation_fraction)
                }
            };
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("invalid {} hyper-parameters", spec.family)))
            }
        };
        let mut all = self.clone();
        all.grid_search = true;
        for f in Family::ALL {
            for spec in all.candidate_specs(f, 0) {
                check(&spec)?;
            }
        }
        Ok(())
    }

    /// Creates the output directory, reporting failure as a config error.
    pub fn prepare_out_dir(&self) -> Result<()> {
        let dir = &self.paths.out_dir;
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::InvalidConfig(format!("out_dir {} is not writable: {e}", dir.display())))?;
        let probe = dir.join(".write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| Error::InvalidConfig(format!("out_dir {} is not writable: {e}", dir.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_paths(mut c: PipelineConfig) -> PipelineConfig {
        c.paths = Paths {
            group_csv: "g.csv".into(),
            case_csv: "c.csv".into(),
            covariates_csv: None,
            roi_labels: None,
            out_dir: "out".into(),
        };
        c
    }

    #[test]
    fn defaults_validate() {
        let c = with_paths(PipelineConfig::default());
        c.validate().unwrap();
        assert_eq!(c.resolved_contrasts().unwrap().len(), 20);
        assert_eq!((c.seed, c.k, c.ensemble_top_l, c.permutation_iterations), (42, 5, 3, 1000));
    }

    #[test]
    fn fold_tuning_parses_both_modes() {
        assert_eq!(PipelineConfig::default().fold_tuning, FoldTuning::Inner);
        let c: PipelineConfig = toml::from_str("fold_tuning = \"validation\"").unwrap();
        assert_eq!(c.fold_tuning, FoldTuning::Validation);
        assert!(toml::from_str::<PipelineConfig>("fold_tuning = \"outer\"").is_err());
    }

    #[test]
    fn toml_with_mixed_contrasts() {
        let text = r#"
seed = 7
K = 4
contrasts = ["J1 vs J2", { name = "early vs late", positive = ["J1", "J2"], negative = ["J5", "J6"] }]
permutation_contrasts = ["J1 vs J2"]

[paths]
group_csv = "g.csv"
case_csv = "c.csv"
out_dir = "out"

[models.mlp]
hidden = [16]
"#;
        let c = PipelineConfig::from_toml(text).unwrap();
        c.validate().unwrap();
        let cs = c.resolved_contrasts().unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[1].name(), "early vs late");
        assert_eq!(c.models.mlp.hidden, vec![16]);
        assert!(c.wants_permutation(&cs[0]));
        assert!(!c.wants_permutation(&cs[1]));
    }

    #[test]
    fn json_roundtrip() {
        let c = with_paths(PipelineConfig::default());
        let back = PipelineConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = with_paths(PipelineConfig::default());
        c.k = 1;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = with_paths(PipelineConfig::default());
        c.contrasts = vec![ContrastRef::Named("J9 vs J1".into())];
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = with_paths(PipelineConfig::default());
        c.residualize = true;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        assert!(PipelineConfig::from_toml("bogus_key = 1").is_err());
        let mut c = with_paths(PipelineConfig::default());
        c.grid_search = true;
        c.grid.knn.push(KnnHyper { k: 0 });
        assert!(c.validate().is_err());
    }

    #[test]
    fn restrict_and_seed() {
        let mut c = with_paths(PipelineConfig::default());
        c.restrict_contrasts(&["j1 vs j6".into()]).unwrap();
        assert_eq!(c.resolved_contrasts().unwrap()[0].name(), "J1 vs J6");
        assert!(c.restrict_contrasts(&["nope".into()]).is_err());
        c.set_seed(9);
        assert_eq!((c.seed, c.augment.seed), (9, 9));
    }
}
