//! The six classifier families behind one fit / probability contract.
//!
//! Every model is fit on a binary label vector and scores `P(class = 1)` per
//! row. LR, SVM and MLP standardize their inputs with column statistics fit
//! on the training rows; the standardizer travels inside the model so later
//! scoring uses the frozen transform.

mod forest;
mod knn;
mod logistic;
mod mlp;
mod svm;
mod tree;

use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data_model::RoiId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use forest::Forest;
pub use knn::KnnParams;
pub use logistic::LinearParams;
pub use mlp::{MlpGradients, MlpParams};
pub use svm::SvmParams;
pub use tree::{Node, Tree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "SVM")]
    SvmLinear,
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "MLP")]
    Mlp,
}

impl Family {
    /// Fixed order; also the final tie-breaker when ranking models.
    pub const ALL: [Family; 6] = [Family::Lr, Family::Dt, Family::Rf, Family::SvmLinear, Family::Knn, Family::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lr => "LR",
            Family::Dt => "DT",
            Family::Rf => "RF",
            Family::SvmLinear => "SVM",
            Family::Knn => "KNN",
            Family::Mlp => "MLP",
        }
    }

    fn standardizes(self) -> bool {
        matches!(self, Family::Lr | Family::SvmLinear | Family::Mlp)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrHyper {
    pub c: f64,
    /// Convergence threshold on the gradient infinity norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LrHyper {
    fn default() -> Self {
        LrHyper {
            c: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeHyper {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeHyper {
    fn default() -> Self {
        TreeHyper {
            max_depth: 10,
            min_samples_split: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            n_trees: 100,
            max_depth: 20,
            min_samples_split: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmHyper {
    pub c: f64,
    /// Stop when the projected-gradient spread falls below this.
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            c: 1.0,
            tol: 1e-3,
            max_epochs: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnHyper {
    pub k: usize,
}

impl Default for KnnHyper {
    fn default() -> Self {
        KnnHyper { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyper {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stopping: bool,
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for MlpHyper {
    fn default() -> Self {
        MlpHyper {
            hidden: vec![128, 64],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 32,
            early_stopping: true,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

/// Fixed hyper-parameters for every family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfigs {
    pub lr: LrHyper,
    pub dt: TreeHyper,
    pub rf: ForestHyper,
    pub svm: SvmHyper,
    pub knn: KnnHyper,
    pub mlp: MlpHyper,
}

impl ModelConfigs {
    pub fn spec(&self, family: Family, seed: u64) -> ModelSpec {
        let hyper = match family {
            Family::Lr => Hyper::Lr(self.lr.clone()),
            Family::Dt => Hyper::Dt(self.dt.clone()),
            Family::Rf => Hyper::Rf(self.rf.clone()),
            Family::SvmLinear => Hyper::Svm(self.svm.clone()),
            Family::Knn => Hyper::Knn(self.knn.clone()),
            Family::Mlp => Hyper::Mlp(self.mlp.clone()),
        };
        ModelSpec { family, hyper, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Hyper {
    Lr(LrHyper),
    Dt(TreeHyper),
    Rf(ForestHyper),
    Svm(SvmHyper),
    Knn(KnnHyper),
    Mlp(MlpHyper),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub hyper: Hyper,
    pub seed: u64,
}

impl ModelSpec {
    /// Spec with the default hyper-parameters of `family`.
    pub fn new(family: Family, seed: u64) -> Self {
        ModelConfigs::default().spec(family, seed)
    }
}

/// Column centring and scaling fit on training rows. Zero-variance columns
/// keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: ArrayView2<T>) -> Self {
        let n = T::from_usize_lossy(x.nrows().max(1));
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let m = col.iter().copied().sum::<T>() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > T::zero() { sd } else { T::one() });
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<T>) -> ndarray::Array2<T> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.scale[c];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Params<T> {
    Lr(LinearParams<T>),
    Dt(Tree<T>),
    Rf(Forest<T>),
    Svm(SvmParams<T>),
    Knn(KnnParams<T>),
    Mlp(MlpParams<T>),
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n: usize,
    pub d: usize,
    /// Per-epoch (MLP) or per-iteration (LR) training loss.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_curve: Vec<f64>,
    /// `(epoch, monitored loss)` each time a new best checkpoint was taken.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub spec: ModelSpec,
    pub feature_ids: Vec<RoiId>,
    pub standardizer: Option<Standardizer<T>>,
    pub params: Params<T>,
    pub summary: TrainingSummary,
}

/// Anything that scores rows with `P(class = 1)`.
pub trait Predictor<T: Scalar>: Sync {
    fn predict_proba(&self, x: ArrayView2<T>) -> Result<Vec<T>>;

    fn feature_ids(&self) -> &[RoiId];

    fn predict(&self, x: ArrayView2<T>) -> Result<Vec<bool>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| p >= T::lit(0.5)).collect())
    }
}

fn check_inputs<T: Scalar>(x: ArrayView2<T>, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !y.iter().any(|&l| l) || y.iter().all(|&l| l) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Fits one model. `feature_ids` name the columns of `x`.
pub fn fit<T: Scalar>(spec: &ModelSpec, x: ArrayView2<T>, y: &[bool], feature_ids: &[RoiId]) -> Result<TrainedModel<T>> {
    check_inputs(x, y)?;
    if x.ncols() != feature_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: feature_ids.len(),
            got: x.ncols(),
        });
    }
    let standardizer = spec.family.standardizes().then(|| Standardizer::fit(x));
    let xs = match &standardizer {
        Some(s) => s.transform(x),
        None => x.to_owned(),
    };
    let xs = xs.view();
    let mut summary = TrainingSummary {
        n: x.nrows(),
        d: x.ncols(),
        ..TrainingSummary::default()
    };
    let params = match (&spec.family, &spec.hyper) {
        (Family::Lr, Hyper::Lr(h)) => Params::Lr(logistic::fit(xs, y, h, &mut summary)?),
        (Family::Dt, Hyper::Dt(h)) => Params::Dt(tree::fit_single(xs, y, h, &mut summary)),
        (Family::Rf, Hyper::Rf(h)) => Params::Rf(forest::fit(xs, y, h, spec.seed, &mut summary)),
        (Family::SvmLinear, Hyper::Svm(h)) => Params::Svm(svm::fit(xs, y, h, spec.seed, &mut summary)),
        (Family::Knn, Hyper::Knn(h)) => Params::Knn(knn::fit(xs, y, h)),
        (Family::Mlp, Hyper::Mlp(h)) => Params::Mlp(mlp::fit(xs, y, h, spec.seed, &mut summary)?),
        (f, _) => return Err(Error::InvalidConfig(format!("hyper-parameters do not match family {f}"))),
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_ids: feature_ids.to_vec(),
        standardizer,
        params,
        summary,
    })
}

impl<T: Scalar> TrainedModel<T> {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    fn prepare(&self, x: ArrayView2<T>) -> Result<ndarray::Array2<T>> {
        if x.ncols() != self.feature_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_ids.len(),
                got: x.ncols(),
            });
        }
        Ok(match &self.standardizer {
            Some(s) => s.transform(x),
            None => x.to_owned(),
        })
    }

    /// Decision values for the linear families, in standardized space.
    pub fn decision_function(&self, x: ArrayView2<T>) -> Result<Option<Array1<T>>> {
        let xs = self.prepare(x)?;
        Ok(match &self.params {
            Params::Lr(p) => Some(p.decision(xs.view())),
            Params::Svm(p) => Some(p.decision(xs.view())),
            _ => None,
        })
    }

    /// Coefficients on standardized inputs (LR and SVM only).
    pub fn linear_coefficients(&self) -> Option<&[T]> {
        match &self.params {
            Params::Lr(p) => p.weights.as_slice(),
            Params::Svm(p) => p.weights.as_slice(),
            _ => None,
        }
    }

    /// Normalized impurity-decrease importances (DT and RF only).
    pub fn impurity_importances(&self) -> Option<Vec<f64>> {
        match &self.params {
            Params::Dt(t) => Some(t.importances(self.feature_ids.len())),
            Params::Rf(f) => Some(f.importances(self.feature_ids.len())),
            _ => None,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let artifact = ModelArtifact {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string(&artifact)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: ModelArtifact<T> = serde_json::from_str(&text)?;
        if artifact.format != ARTIFACT_FORMAT || artifact.version != ARTIFACT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model artifact {} v{}",
                artifact.format, artifact.version
            )));
        }
        Ok(artifact.model)
    }
}

impl<T: Scalar> Predictor<T> for TrainedModel<T> {
    fn predict_proba(&self, x: ArrayView2<T>) -> Result<Vec<T>> {
        let xs = self.prepare(x)?;
        let xs = xs.view();
        Ok(match &self.params {
            Params::Lr(p) => p.proba(xs),
            Params::Dt(t) => xs.axis_iter(Axis(0)).map(|r| t.leaf_prob(r)).collect(),
            Params::Rf(f) => f.proba(xs),
            Params::Svm(p) => p.proba(xs),
            Params::Knn(p) => p.proba(xs),
            Params::Mlp(p) => p.proba(xs),
        })
    }

    fn feature_ids(&self) -> &[RoiId] {
        &self.feature_ids
    }
}

const ARTIFACT_FORMAT: &str = "absorbkit-model";
const ARTIFACT_VERSION: u32 = 1;

/// On-disk model: `{"format": "absorbkit-model", "version": 1, "model": {...}}`.
#[derive(Serialize, Deserialize)]
struct ModelArtifact<T> {
    format: String,
    version: u32,
    model: TrainedModel<T>,
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two Gaussian blobs; class 1 is shifted by `shift` in the first two
    /// columns.
    pub(crate) fn blobs(n: usize, d: usize, shift: f64, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, d), |(i, j)| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r);
            z + if y[i] && j < 2 { shift } else { 0.0 }
        });
        (x, y)
    }

    fn ids(d: usize) -> Vec<RoiId> {
        (1..=d as u16).map(RoiId).collect()
    }

    #[test]
    fn every_family_fits_and_scores_in_unit_interval() {
        let (x, y) = blobs(80, 4, 2.0, 1);
        for family in Family::ALL {
            let m = fit(&ModelSpec::new(family, 7), x.view(), &y, &ids(4)).unwrap();
            let p = m.predict_proba(x.view()).unwrap();
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{family}");
            let acc = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == **y).count() as f64 / 80.0;
            assert!(acc > 0.75, "{family}: {acc}");
        }
    }

    #[test]
    fn fits_are_deterministic_and_round_trip() {
        let (x, y) = blobs(60, 3, 1.5, 2);
        let dir = tempfile::tempdir().unwrap();
        for family in Family::ALL {
            let a = fit(&ModelSpec::new(family, 3), x.view(), &y, &ids(3)).unwrap();
            let b = fit(&ModelSpec::new(family, 3), x.view(), &y, &ids(3)).unwrap();
            assert_eq!(a, b, "{family}");
            let path = dir.path().join(format!("model_{family}.json"));
            a.save_json(&path).unwrap();
            let back = TrainedModel::<f64>::load_json(&path).unwrap();
            assert_eq!(back.predict_proba(x.view()).unwrap(), a.predict_proba(x.view()).unwrap());
        }
    }

    #[test]
    fn single_class_and_non_finite_rejected() {
        let x = Array2::<f64>::zeros((4, 1));
        assert!(matches!(
            fit(&ModelSpec::new(Family::Lr, 0), x.view(), &[true; 4], &ids(1)),
            Err(Error::SingleClass)
        ));
        let mut x = Array2::<f64>::zeros((2, 1));
        x[[0, 0]] = f64::NAN;
        assert!(matches!(
            fit(&ModelSpec::new(Family::Knn, 0), x.view(), &[true, false], &ids(1)),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let (x, y) = blobs(20, 3, 1.0, 4);
        let m = fit(&ModelSpec::new(Family::Dt, 0), x.view(), &y, &ids(3)).unwrap();
        assert!(matches!(
            m.predict_proba(Array2::<f64>::zeros((2, 2)).view()),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let (x, y) = blobs(40, 3, 2.0, 5);
        let x32 = x.mapv(|v| v as f32);
        for family in Family::ALL {
            let m = fit(&ModelSpec::new(family, 1), x32.view(), &y, &ids(3)).unwrap();
            assert!(m.predict_proba(x32.view()).unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn linear_decision_is_affine_under_column_rescaling() {
        // scaling a standardized column by c and its weight by 1/c keeps w.x
        let (x, y) = blobs(50, 3, 1.0, 6);
        for family in [Family::Lr, Family::SvmLinear] {
            let m = fit(&ModelSpec::new(family, 0), x.view(), &y, &ids(3)).unwrap();
            let xs = m.standardizer.as_ref().unwrap().transform(x.view());
            let w = m.linear_coefficients().unwrap().to_vec();
            let base = m.decision_function(x.view()).unwrap().unwrap();
            let c = 3.7;
            let mut xs2 = xs.clone();
            xs2.column_mut(1).mapv_inplace(|v| v * c);
            let mut w2 = w.clone();
            w2[1] /= c;
            let intercept = base[0] - xs.row(0).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            for (i, row) in xs2.axis_iter(Axis(0)).enumerate() {
                let v = row.iter().zip(&w2).map(|(a, b)| a * b).sum::<f64>() + intercept;
                assert!((v - base[i]).abs() < 1e-10, "{family}");
            }
        }
    }

    #[test]
    fn lr_without_signal_learns_the_base_rate() {
        let x = Array2::<f64>::from_elem((8, 1), 3.0);
        let y = [true, false, false, true, false, false, false, true];
        let m = fit(&ModelSpec::new(Family::Lr, 0), x.view(), &y, &ids(1)).unwrap();
        let Params::Lr(p) = &m.params else { unreachable!() };
        assert_eq!(p.weights[0], 0.0);
        assert!((p.intercept - (3.0f64 / 5.0).ln()).abs() < 1e-6);
    }

    #[test]
    fn zero_weight_lr_scores_one_half() {
        let m = TrainedModel {
            spec: ModelSpec::new(Family::Lr, 0),
            feature_ids: ids(2),
            standardizer: None,
            params: Params::Lr(LinearParams {
                weights: Array1::zeros(2),
                intercept: 0.0,
            }),
            summary: TrainingSummary::default(),
        };
        let (x, _) = blobs(5, 2, 0.0, 0);
        assert_eq!(m.predict_proba(x.view()).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn separable_single_feature_gives_stump() {
        let x = Array2::from_shape_vec((6, 1), vec![0.1, 0.4, 0.2, 2.0, 2.5, 3.0]).unwrap();
        let y = [false, false, false, true, true, true];
        let m = fit(&ModelSpec::new(Family::Dt, 0), x.view(), &y, &ids(1)).unwrap();
        let Params::Dt(t) = &m.params else { unreachable!() };
        assert_eq!(t.depth(), 1);
        assert_eq!(m.predict(x.view()).unwrap(), y.to_vec());
    }

    #[test]
    fn knn_k1_on_a_training_point_returns_its_label() {
        let (x, y) = blobs(30, 3, 1.0, 8);
        let mut spec = ModelSpec::new(Family::Knn, 0);
        spec.hyper = Hyper::Knn(KnnHyper { k: 1 });
        let m = fit(&spec, x.view(), &y, &ids(3)).unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        for (p, &l) in p.iter().zip(&y) {
            assert_eq!(*p, if l { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn rf_score_equals_enumerated_tree_votes() {
        let (x, y) = blobs(50, 5, 1.0, 9);
        let m = fit(&ModelSpec::new(Family::Rf, 4), x.view(), &y, &ids(5)).unwrap();
        let Params::Rf(forest) = &m.params else { unreachable!() };
        assert_eq!(forest.trees.len(), 100);
        let p = m.predict_proba(x.view()).unwrap();
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let votes = forest.trees.iter().filter(|t| t.leaf_prob(row) >= 0.5).count();
            assert_eq!(p[i], votes as f64 / 100.0);
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
    }
}
