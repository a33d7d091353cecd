//! Feature datasets, the ROI registry, conditions and contrasts, and CSV
//! ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const N_ROIS: usize = 498;

/// Identifier of one parcel, `1..=498`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoiId(pub u16);

impl RoiId {
    /// Column name in the feature table, e.g. `roi_0007`.
    pub fn column_name(self) -> String {
        format!("roi_{:04}", self.0)
    }

    pub fn parse_column(name: &str) -> Option<RoiId> {
        let digits = name.strip_prefix("roi_")?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse::<u16>().ok().map(RoiId)
    }
}

impl fmt::Display for RoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Atlas {
    Cortical,
    Subcortical,
    Brainstem,
    Cerebellar,
    /// Ids 497 and 498: the stated atlas sizes account for 496 parcels only.
    Unattributed,
}

impl Atlas {
    pub fn as_str(self) -> &'static str {
        match self {
            Atlas::Cortical => "cortical",
            Atlas::Subcortical => "subcortical",
            Atlas::Brainstem => "brainstem",
            Atlas::Cerebellar => "cerebellar",
            Atlas::Unattributed => "unattributed",
        }
    }

    fn scheme(self) -> &'static str {
        match self {
            Atlas::Cortical => "Schaefer400",
            Atlas::Subcortical => "Tian32",
            Atlas::Brainstem => "Bianciardi54",
            Atlas::Cerebellar => "MDTB10",
            Atlas::Unattributed => "Unattributed",
        }
    }
}

/// Parcel counts per atlas, in id order.
pub const ATLAS_LAYOUT: [(Atlas, usize); 5] = [
    (Atlas::Cortical, 400),
    (Atlas::Subcortical, 32),
    (Atlas::Brainstem, 54),
    (Atlas::Cerebellar, 10),
    (Atlas::Unattributed, 2),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiEntry {
    pub id: RoiId,
    pub name: String,
    pub atlas: Atlas,
    pub network_tag: Option<String>,
}

/// Ordered list of the 498 parcels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiRegistry {
    entries: Vec<RoiEntry>,
}

impl RoiRegistry {
    /// The default registry with placeholder names keyed by atlas and index.
    pub fn standard() -> Self {
        let mut entries = Vec::with_capacity(N_ROIS);
        let mut next = 1u16;
        for (atlas, count) in ATLAS_LAYOUT {
            for i in 1..=count {
                entries.push(RoiEntry {
                    id: RoiId(next),
                    name: format!("{}_{:03}", atlas.scheme(), i),
                    atlas,
                    network_tag: None,
                });
                next += 1;
            }
        }
        RoiRegistry { entries }
    }

    /// Overrides names and network tags from a label CSV with header
    /// `roi_id,name[,network_tag]`. Ids not listed keep their placeholder.
    pub fn with_labels(mut self, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let id_col = col("roi_id").ok_or_else(|| Error::MissingColumn("roi_id".into()))?;
        let name_col = col("name").ok_or_else(|| Error::MissingColumn("name".into()))?;
        let tag_col = col("network_tag");
        for rec in rdr.records() {
            let rec = rec?;
            let raw = &rec[id_col];
            let id = raw
                .trim()
                .parse::<u16>()
                .ok()
                .and_then(|v| self.index_of(RoiId(v)))
                .ok_or_else(|| Error::UnknownRoiId(raw.to_string()))?;
            self.entries[id].name = rec[name_col].to_string();
            if let Some(t) = tag_col {
                let tag = rec[t].trim();
                self.entries[id].network_tag = (!tag.is_empty()).then(|| tag.to_string());
            }
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RoiEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = RoiId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn contains(&self, id: RoiId) -> bool {
        self.index_of(id).is_some()
    }

    pub fn get(&self, id: RoiId) -> Option<&RoiEntry> {
        self.index_of(id).map(|i| &self.entries[i])
    }

    fn index_of(&self, id: RoiId) -> Option<usize> {
        // ids are contiguous from 1
        let i = usize::from(id.0).checked_sub(1)?;
        (i < self.entries.len()).then_some(i)
    }

    pub fn atlas_counts(&self) -> BTreeMap<Atlas, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.atlas).or_insert(0) += 1;
        }
        counts
    }
}

impl Default for RoiRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Group,
    Case,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Group => "group",
            Cohort::Case => "case",
        }
    }
}

impl FromStr for Cohort {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "group" => Ok(Cohort::Group),
            "case" => Ok(Cohort::Case),
            other => Err(format!("unknown cohort `{other}`")),
        }
    }
}

/// Task condition of a segment. J1..J8 are the absorption stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    J1,
    J2,
    J3,
    J4,
    J5,
    J6,
    J7,
    J8,
    #[serde(rename = "access")]
    Access,
    #[serde(rename = "afterglow")]
    Afterglow,
    #[serde(rename = "counting")]
    Counting,
    #[serde(rename = "memory")]
    Memory,
}

impl Condition {
    pub const ALL: [Condition; 12] = [
        Condition::J1,
        Condition::J2,
        Condition::J3,
        Condition::J4,
        Condition::J5,
        Condition::J6,
        Condition::J7,
        Condition::J8,
        Condition::Access,
        Condition::Afterglow,
        Condition::Counting,
        Condition::Memory,
    ];

    /// The six stages analysed by the default contrasts.
    pub const STAGES: [Condition; 6] = [
        Condition::J1,
        Condition::J2,
        Condition::J3,
        Condition::J4,
        Condition::J5,
        Condition::J6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::J1 => "J1",
            Condition::J2 => "J2",
            Condition::J3 => "J3",
            Condition::J4 => "J4",
            Condition::J5 => "J5",
            Condition::J6 => "J6",
            Condition::J7 => "J7",
            Condition::J8 => "J8",
            Condition::Access => "access",
            Condition::Afterglow => "afterglow",
            Condition::Counting => "counting",
            Condition::Memory => "memory",
        }
    }

    pub fn is_stage(self) -> bool {
        matches!(
            self,
            Condition::J1
                | Condition::J2
                | Condition::J3
                | Condition::J4
                | Condition::J5
                | Condition::J6
                | Condition::J7
                | Condition::J8
        )
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        let t = t.strip_prefix("ACAM-").unwrap_or(t);
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub subject_id: String,
    pub cohort: Cohort,
    pub condition: Condition,
    pub run_id: u32,
}

impl SampleMeta {
    /// Segment key: one (subject, condition) pair.
    pub fn segment_key(&self) -> String {
        format!("{}:{}", self.subject_id, self.condition)
    }
}

/// Feature matrix with row metadata and column ROI ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    features: Array2<T>,
    meta: Vec<SampleMeta>,
    feature_ids: Vec<RoiId>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Array2<T>, meta: Vec<SampleMeta>, feature_ids: Vec<RoiId>) -> Result<Self> {
        if features.nrows() != meta.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} metadata rows",
                features.nrows(),
                meta.len()
            )));
        }
        if features.ncols() != feature_ids.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature columns but {} feature ids",
                features.ncols(),
                feature_ids.len()
            )));
        }
        let mut seen_ids = HashSet::new();
        for id in &feature_ids {
            if !seen_ids.insert(*id) {
                return Err(Error::InvalidDataset(format!("duplicate feature column {}", id.column_name())));
            }
        }
        if let Some((row, _)) = features
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidDataset(format!("missing or non-finite value in row {row}")));
        }
        validate_meta(&meta)?;
        Ok(Dataset {
            features,
            meta,
            feature_ids,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, T> {
        self.features.view()
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn feature_ids(&self) -> &[RoiId] {
        &self.feature_ids
    }

    pub fn n_samples(&self) -> usize {
        self.meta.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn column_of(&self, id: RoiId) -> Option<usize> {
        self.feature_ids.iter().position(|&f| f == id)
    }

    /// Rows at `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset<T> {
        Dataset {
            features: self.features.select(Axis(0), idx),
            meta: idx.iter().map(|&i| self.meta[i].clone()).collect(),
            feature_ids: self.feature_ids.clone(),
        }
    }

    /// Restricts to the listed ROI columns, in the listed order.
    pub fn select_features(&self, ids: &[RoiId]) -> Result<Dataset<T>> {
        let missing: Vec<RoiId> = ids.iter().copied().filter(|&id| self.column_of(id).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::CaseMissingFeatures(missing));
        }
        let cols: Vec<usize> = ids.iter().map(|&id| self.column_of(id).unwrap_or(0)).collect();
        Ok(Dataset {
            features: self.features.select(Axis(1), &cols),
            meta: self.meta.clone(),
            feature_ids: ids.to_vec(),
        })
    }

    /// Same rows and columns with replaced feature values.
    pub fn with_features(&self, features: Array2<T>) -> Result<Dataset<T>> {
        Dataset::new(features, self.meta.clone(), self.feature_ids.clone())
    }

    pub fn into_parts(self) -> (Array2<T>, Vec<SampleMeta>, Vec<RoiId>) {
        (self.features, self.meta, self.feature_ids)
    }

    pub fn check_registry(&self, registry: &RoiRegistry) -> Result<()> {
        match self.feature_ids.iter().find(|id| !registry.contains(**id)) {
            Some(id) => Err(Error::UnknownRoiId(id.column_name())),
            None => Ok(()),
        }
    }
}

fn validate_meta(meta: &[SampleMeta]) -> Result<()> {
    let mut ids = HashSet::new();
    let mut keys = HashSet::new();
    let mut case_subjects = BTreeSet::new();
    for (row, m) in meta.iter().enumerate() {
        if m.sample_id.is_empty() {
            return Err(Error::InvalidMeta {
                row,
                msg: "empty sample_id".into(),
            });
        }
        if m.run_id == 0 {
            return Err(Error::InvalidMeta {
                row,
                msg: "run_id must be positive".into(),
            });
        }
        if !ids.insert(m.sample_id.as_str()) {
            return Err(Error::DuplicateSampleId(m.sample_id.clone()));
        }
        if !keys.insert((m.cohort, m.subject_id.as_str(), m.condition, m.run_id)) {
            return Err(Error::InvalidMeta {
                row,
                msg: format!(
                    "duplicate (subject, condition, run) = ({}, {}, {})",
                    m.subject_id, m.condition, m.run_id
                ),
            });
        }
        if m.cohort == Cohort::Case {
            case_subjects.insert(m.subject_id.as_str());
            if case_subjects.len() > 1 {
                return Err(Error::InvalidMeta {
                    row,
                    msg: "case cohort must contain exactly one subject".into(),
                });
            }
        }
    }
    Ok(())
}

const META_COLUMNS: [&str; 5] = ["sample_id", "subject_id", "cohort", "condition", "run_id"];

/// Loads a feature table from CSV and validates it against the registry.
pub fn load_feature_table<T: Scalar>(path: &Path, registry: &RoiRegistry) -> Result<Dataset<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_table(file, registry)
}

pub fn read_feature_table<T: Scalar, R: Read>(reader: R, registry: &RoiRegistry) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut meta_pos = [0usize; 5];
    for (slot, name) in meta_pos.iter_mut().zip(META_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut roi_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if META_COLUMNS.contains(&h) {
            continue;
        }
        if h.starts_with("roi_") {
            let id = RoiId::parse_column(h)
                .filter(|id| registry.contains(*id))
                .ok_or_else(|| Error::UnknownRoiId(h.to_string()))?;
            roi_cols.push((i, id));
        } else {
            log::warn!("ignoring unrecognised column `{h}`");
        }
    }
    let feature_ids: Vec<RoiId> = roi_cols.iter().map(|(_, id)| *id).collect();

    let mut values = Vec::new();
    let mut meta = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let cohort = field(meta_pos[2])
            .parse::<Cohort>()
            .map_err(|msg| Error::InvalidMeta { row, msg })?;
        let condition = field(meta_pos[3])
            .parse::<Condition>()
            .map_err(|msg| Error::InvalidMeta { row, msg })?;
        let run_id = field(meta_pos[4]).parse::<u32>().map_err(|_| Error::NonNumericValue {
            row,
            col: "run_id".into(),
        })?;
        meta.push(SampleMeta {
            sample_id: field(meta_pos[0]).to_string(),
            subject_id: field(meta_pos[1]).to_string(),
            cohort,
            condition,
            run_id,
        });
        for &(c, id) in &roi_cols {
            let v = field(c)
                .parse::<T>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericValue {
                    row,
                    col: id.column_name(),
                })?;
            values.push(v);
        }
    }
    let features = Array2::from_shape_vec((meta.len(), feature_ids.len()), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Dataset::new(features, meta, feature_ids)
}

pub fn write_feature_table<T: Scalar, W: Write>(writer: W, ds: &Dataset<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(ds.feature_ids.iter().map(|id| id.column_name()));
    wtr.write_record(&header)?;
    for (m, row) in ds.meta.iter().zip(ds.features.axis_iter(Axis(0))) {
        let mut rec = vec![
            m.sample_id.clone(),
            m.subject_id.clone(),
            m.cohort.as_str().to_string(),
            m.condition.to_string(),
            m.run_id.to_string(),
        ];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<feature table>", e))?;
    Ok(())
}

pub fn save_feature_table<T: Scalar>(path: &Path, ds: &Dataset<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_table(std::io::BufWriter::new(file), ds)
}

/// A binary comparison between two disjoint condition sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ContrastRepr")]
pub struct Contrast {
    name: String,
    positive: BTreeSet<Condition>,
    negative: BTreeSet<Condition>,
}

#[derive(Deserialize)]
struct ContrastRepr {
    name: String,
    positive: BTreeSet<Condition>,
    negative: BTreeSet<Condition>,
}

impl TryFrom<ContrastRepr> for Contrast {
    type Error = Error;
    fn try_from(r: ContrastRepr) -> Result<Self> {
        Contrast::new(r.name, r.positive, r.negative)
    }
}

impl Contrast {
    pub fn new(
        name: impl Into<String>,
        positive: impl IntoIterator<Item = Condition>,
        negative: impl IntoIterator<Item = Condition>,
    ) -> Result<Self> {
        let name = name.into();
        let positive: BTreeSet<_> = positive.into_iter().collect();
        let negative: BTreeSet<_> = negative.into_iter().collect();
        if positive.is_empty() || negative.is_empty() {
            return Err(Error::InvalidContrast(format!("`{name}` has an empty side")));
        }
        if let Some(c) = positive.intersection(&negative).next() {
            return Err(Error::InvalidContrast(format!("`{name}` lists {c} on both sides")));
        }
        Ok(Contrast {
            name,
            positive,
            negative,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positive(&self) -> &BTreeSet<Condition> {
        &self.positive
    }

    pub fn negative(&self) -> &BTreeSet<Condition> {
        &self.negative
    }

    /// `Some(true)` for the positive side, `Some(false)` for the negative side.
    pub fn label_of(&self, c: Condition) -> Option<bool> {
        if self.positive.contains(&c) {
            Some(true)
        } else if self.negative.contains(&c) {
            Some(false)
        } else {
            None
        }
    }

    /// File-system friendly form of the name.
    pub fn slug(&self) -> String {
        self.name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect()
    }
}

/// Rows of `ds` that belong to the contrast, with label 1 for the positive side.
pub fn select_contrast<T: Scalar>(ds: &Dataset<T>, c: &Contrast) -> Result<(Dataset<T>, Vec<bool>)> {
    let mut idx = Vec::new();
    let mut labels = Vec::new();
    for (i, m) in ds.meta.iter().enumerate() {
        if let Some(l) = c.label_of(m.condition) {
            idx.push(i);
            labels.push(l);
        }
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::EmptyClass("positive"));
    }
    if labels.iter().all(|&l| l) {
        return Err(Error::EmptyClass("negative"));
    }
    Ok((ds.select_rows(&idx), labels))
}

/// The twenty comparisons reported by the toolkit: stage vs control,
/// per-stage vs each control task, successive stages, and J1 vs J6.
pub fn default_contrasts() -> Vec<Contrast> {
    use Condition::*;
    let mk = |name: String, p: Vec<Condition>, n: Vec<Condition>| {
        Contrast::new(name, p, n).expect("default contrasts are well formed")
    };
    let mut out = vec![
        mk("J vs control".into(), Condition::STAGES.to_vec(), vec![Counting, Memory]),
        mk("J vs counting".into(), Condition::STAGES.to_vec(), vec![Counting]),
    ];
    for control in [Counting, Memory] {
        for stage in Condition::STAGES {
            out.push(mk(format!("{stage} vs {control}"), vec![stage], vec![control]));
        }
    }
    for pair in Condition::STAGES.windows(2) {
        out.push(mk(format!("{} vs {}", pair[0], pair[1]), vec![pair[0]], vec![pair[1]]));
    }
    out.push(mk("J1 vs J6".into(), vec![J1], vec![J6]));
    out
}

/// Phenomenology covariates keyed by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates<T> {
    pub names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub values: Array2<T>,
}

impl<T: Scalar> Covariates<T> {
    /// Rows aligned to `meta`; every sample must have a covariate row.
    pub fn aligned(&self, meta: &[SampleMeta]) -> Result<Array2<T>> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let rows = meta
            .iter()
            .map(|m| {
                index
                    .get(m.sample_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::CovariateMismatch(format!("no covariates for sample `{}`", m.sample_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.values.select(Axis(0), &rows))
    }
}

pub fn load_covariates<T: Scalar>(path: &Path) -> Result<Covariates<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_covariates(file)
}

pub fn read_covariates<T: Scalar, R: Read>(reader: R) -> Result<Covariates<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "sample_id")
        .ok_or_else(|| Error::MissingColumn("sample_id".into()))?;
    let cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut sample_ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateSampleId(id));
        }
        sample_ids.push(id);
        for (c, name) in &cols {
            let v = rec
                .get(*c)
                .unwrap_or("")
                .parse::<T>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericValue { row, col: name.clone() })?;
            values.push(v);
        }
    }
    let values = Array2::from_shape_vec((sample_ids.len(), cols.len()), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Ok(Covariates {
        names: cols.into_iter().map(|(_, n)| n).collect(),
        sample_ids,
        values,
    })
}

pub fn write_covariates<T: Scalar, W: Write>(writer: W, cov: &Covariates<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["sample_id".to_string()];
    header.extend(cov.names.iter().cloned());
    wtr.write_record(&header)?;
    for (id, row) in cov.sample_ids.iter().zip(cov.values.axis_iter(Axis(0))) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<covariates>", e))?;
    Ok(())
}
