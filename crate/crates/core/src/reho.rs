//! Regional homogeneity: Kendall's coefficient of concordance over voxel
//! neighbourhoods, followed by in-mask z-scoring, Gaussian smoothing and
//! parcellation into the ROI feature vector.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayView1, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{RoiId, RoiRegistry};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Time series volume `[X, Y, Z, T]` with a brain mask.
#[derive(Clone, Debug)]
pub struct Volume4D<T> {
    data: Array4<T>,
    voxel_size_mm: [f64; 3],
    mask: Array3<bool>,
}

impl<T: Scalar> Volume4D<T> {
    pub fn new(data: Array4<T>, voxel_size_mm: [f64; 3], mask: Array3<bool>) -> Result<Self> {
        let (x, y, z, t) = data.dim();
        if mask.dim() != (x, y, z) {
            return Err(Error::InvalidVolume(format!(
                "mask shape {:?} does not match volume {:?}",
                mask.dim(),
                (x, y, z)
            )));
        }
        if t < 2 {
            return Err(Error::TooFewSeries { need: 2, got: t });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidVolume("mask is empty".into()));
        }
        if voxel_size_mm.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidVolume("voxel sizes must be positive".into()));
        }
        Ok(Volume4D {
            data,
            voxel_size_mm,
            mask,
        })
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }

    pub fn mask(&self) -> &Array3<bool> {
        &self.mask
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }
}

/// Parcel labels, `0` for background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    labels: Array3<u32>,
}

impl LabelVolume {
    pub fn new(labels: Array3<u32>, registry: &RoiRegistry) -> Result<Self> {
        for &l in labels.iter().filter(|&&l| l != 0) {
            let ok = u16::try_from(l).map(|v| registry.contains(RoiId(v))).unwrap_or(false);
            if !ok {
                return Err(Error::UnknownRoiId(l.to_string()));
            }
        }
        Ok(LabelVolume { labels })
    }

    pub fn labels(&self) -> &Array3<u32> {
        &self.labels
    }
}

/// Neighbourhood size for ReHo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Cluster {
    /// Faces only.
    #[serde(rename = "7")]
    Faces7,
    /// Faces and edges.
    #[serde(rename = "19")]
    Edges19,
    /// Full 3x3x3 cube.
    #[default]
    #[serde(rename = "27")]
    Corners27,
}

impl Cluster {
    pub fn from_size(n: usize) -> Option<Cluster> {
        match n {
            7 => Some(Cluster::Faces7),
            19 => Some(Cluster::Edges19),
            27 => Some(Cluster::Corners27),
            _ => None,
        }
    }

    fn offsets(self) -> Vec<[isize; 3]> {
        let max_l1 = match self {
            Cluster::Faces7 => 1,
            Cluster::Edges19 => 2,
            Cluster::Corners27 => 3,
        };
        let mut out = Vec::new();
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    if dx.abs() + dy.abs() + dz.abs() <= max_l1 {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Ranks of one series (average ranks for ties) and its tie term
/// `sum(t^3 - t)` over tie groups.
struct RankedSeries<T> {
    ranks: Vec<T>,
    tie_term: T,
}

fn rank_series<T: Scalar>(series: ArrayView1<T>) -> RankedSeries<T> {
    let n = series.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| series[a].partial_cmp(&series[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); n];
    let mut tie_term = T::zero();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && series[order[j]] == series[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1)..=j
        let avg = T::from_usize_lossy(i + 1 + j) / T::lit(2.0);
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        let t = T::from_usize_lossy(j - i);
        tie_term = tie_term + t * t * t - t;
        i = j;
    }
    RankedSeries { ranks, tie_term }
}

fn concordance<T: Scalar>(block: &[&RankedSeries<T>]) -> Result<T> {
    let m = block.len();
    if m < 2 {
        return Err(Error::TooFewSeries { need: 2, got: m });
    }
    let n = block[0].ranks.len();
    if n < 2 {
        return Err(Error::TooFewSeries { need: 2, got: n });
    }
    let mf = T::from_usize_lossy(m);
    let nf = T::from_usize_lossy(n);
    let mean = mf * (nf + T::one()) / T::lit(2.0);
    let mut s = T::zero();
    for t in 0..n {
        let r: T = block.iter().map(|b| b.ranks[t]).sum();
        s = s + (r - mean) * (r - mean);
    }
    let ties: T = block.iter().map(|b| b.tie_term).sum();
    let denom = mf * mf * (nf * nf * nf - nf) - mf * ties;
    if !(denom > T::zero()) {
        return Err(Error::ConstantAllSeries);
    }
    let w = T::lit(12.0) * s / denom;
    Ok(w.max(T::zero()).min(T::one()))
}

/// Kendall's W for `m >= 2` series of equal length `T >= 2`, tie corrected.
pub fn kendalls_w<T: Scalar>(block: &[ArrayView1<T>]) -> Result<T> {
    if let Some(first) = block.first() {
        if let Some(bad) = block.iter().find(|s| s.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
            });
        }
    }
    let ranked: Vec<RankedSeries<T>> = block.iter().map(|s| rank_series(*s)).collect();
    let refs: Vec<&RankedSeries<T>> = ranked.iter().collect();
    concordance(&refs)
}

#[derive(Clone, Debug)]
pub struct RehoMap<T> {
    pub values: Array3<T>,
    /// Voxels whose whole neighbourhood was constant; they were set to 0.
    pub constant_voxels: usize,
}

/// ReHo for every in-mask voxel. Neighbourhoods shrink at the mask edge.
pub fn reho_map<T: Scalar>(v: &Volume4D<T>, cluster: Cluster) -> Result<RehoMap<T>> {
    let (nx, ny, nz, _) = v.data.dim();
    let ranked: Array3<Option<RankedSeries<T>>> = Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
        v.mask[[x, y, z]].then(|| rank_series(v.data.slice(ndarray::s![x, y, z, ..])))
    });
    let offsets = cluster.offsets();
    let slabs: Vec<Result<(Vec<T>, usize)>> = (0..nx)
        .into_par_iter()
        .map(|x| {
            let mut out = Vec::with_capacity(ny * nz);
            let mut constant = 0usize;
            for y in 0..ny {
                for z in 0..nz {
                    if !v.mask[[x, y, z]] {
                        out.push(T::zero());
                        continue;
                    }
                    let block: Vec<&RankedSeries<T>> = offsets
                        .iter()
                        .filter_map(|o| {
                            let (px, py, pz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                            if px < 0 || py < 0 || pz < 0 {
                                return None;
                            }
                            ranked.get([px as usize, py as usize, pz as usize])?.as_ref()
                        })
                        .collect();
                    match concordance(&block) {
                        Ok(w) => out.push(w),
                        Err(Error::ConstantAllSeries) => {
                            constant += 1;
                            out.push(T::zero());
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok((out, constant))
        })
        .collect();
    let mut flat = Vec::with_capacity(nx * ny * nz);
    let mut constant_voxels = 0;
    for slab in slabs {
        let (vals, c) = slab?;
        flat.extend(vals);
        constant_voxels += c;
    }
    if constant_voxels > 0 {
        log::warn!("{constant_voxels} voxels had constant neighbourhoods; ReHo set to 0");
    }
    let values = Array3::from_shape_vec((nx, ny, nz), flat).map_err(|e| Error::InvalidVolume(e.to_string()))?;
    Ok(RehoMap {
        values,
        constant_voxels,
    })
}

/// Z-scores in-mask values (population SD); out-of-mask voxels become 0.
pub fn standardize_map<T: Scalar>(map: &Array3<T>, mask: &Array3<bool>) -> Result<Array3<T>> {
    let vals: Vec<T> = map.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(Error::ZeroVariance);
    }
    let n = T::from_usize_lossy(vals.len());
    let mean = vals.iter().copied().sum::<T>() / n;
    let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    if !(var > T::zero()) {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    let mut out = Array3::<T>::zeros(map.dim());
    Zip::from(&mut out).and(map).and(mask).for_each(|o, &v, &m| {
        if m {
            *o = (v - mean) / sd;
        }
    });
    Ok(out)
}

/// `sigma = fwhm / (2 sqrt(2 ln 2))`.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Unit-sum Gaussian kernel truncated at `ceil(3 sigma)` voxels.
pub fn gaussian_kernel<T: Scalar>(sigma_vox: f64) -> Vec<T> {
    let radius = (3.0 * sigma_vox).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| T::lit(w / total)).collect()
}

fn convolve_axis<T: Scalar>(input: &Array3<T>, kernel: &[T], axis: usize) -> Array3<T> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = Array3::<T>::zeros(input.dim());
    let len = input.len_of(Axis(axis)) as isize;
    for (mut dst, src) in out.lanes_mut(Axis(axis)).into_iter().zip(input.lanes(Axis(axis))) {
        for i in 0..len {
            let mut acc = T::zero();
            for (k, &w) in kernel.iter().enumerate() {
                let j = i + k as isize - radius;
                if j >= 0 && j < len {
                    acc = acc + w * src[j as usize];
                }
            }
            dst[i as usize] = acc;
        }
    }
    out
}

/// Separable Gaussian smoothing normalised by the smoothed mask, so values
/// outside the mask never bleed in. Out-of-mask output is 0.
pub fn smooth_gaussian<T: Scalar>(
    map: &Array3<T>,
    mask: &Array3<bool>,
    fwhm_mm: f64,
    voxel_size_mm: [f64; 3],
) -> Result<Array3<T>> {
    if !(fwhm_mm > 0.0) {
        return Err(Error::InvalidConfig("fwhm must be positive".into()));
    }
    let sigma_mm = fwhm_to_sigma(fwhm_mm);
    let mut num = Array3::<T>::zeros(map.dim());
    let mut den = Array3::<T>::zeros(map.dim());
    Zip::from(&mut num).and(&mut den).and(map).and(mask).for_each(|n, d, &v, &m| {
        if m {
            *n = v;
            *d = T::one();
        }
    });
    for (axis, &vs) in voxel_size_mm.iter().enumerate() {
        let kernel = gaussian_kernel::<T>(sigma_mm / vs);
        num = convolve_axis(&num, &kernel, axis);
        den = convolve_axis(&den, &kernel, axis);
    }
    let mut out = Array3::<T>::zeros(map.dim());
    Zip::from(&mut out).and(&num).and(&den).and(mask).for_each(|o, &n, &d, &m| {
        if m && d > T::zero() {
            *o = n / d;
        }
    });
    Ok(out)
}

/// Per-ROI means, `None` for ROIs without voxels.
pub fn parcellate_partial<T: Scalar>(map: &Array3<T>, labels: &LabelVolume, registry: &RoiRegistry) -> Result<Vec<Option<T>>> {
    if map.dim() != labels.labels.dim() {
        return Err(Error::InvalidVolume(format!(
            "label shape {:?} does not match map {:?}",
            labels.labels.dim(),
            map.dim()
        )));
    }
    let n = registry.len();
    let mut sums = vec![T::zero(); n];
    let mut counts = vec![0usize; n];
    for (&v, &l) in map.iter().zip(labels.labels.iter()) {
        if l == 0 {
            continue;
        }
        let i = l as usize - 1;
        if i >= n {
            return Err(Error::UnknownRoiId(l.to_string()));
        }
        sums[i] = sums[i] + v;
        counts[i] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / T::from_usize_lossy(c)))
        .collect())
}

/// Per-ROI means in registry order. Every ROI must have at least one voxel.
pub fn parcellate<T: Scalar>(map: &Array3<T>, labels: &LabelVolume, registry: &RoiRegistry) -> Result<Vec<T>> {
    parcellate_partial(map, labels, registry)?
        .into_iter()
        .zip(registry.ids())
        .map(|(v, id)| v.ok_or(Error::EmptyRoi(id)))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RehoConfig {
    pub cluster: Cluster,
    pub fwhm_mm: f64,
    /// Drop ROIs without voxels instead of failing.
    pub allow_missing_rois: bool,
}

impl Default for RehoConfig {
    fn default() -> Self {
        RehoConfig {
            cluster: Cluster::Corners27,
            fwhm_mm: 2.0,
            allow_missing_rois: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RehoFeatures<T> {
    pub roi_ids: Vec<RoiId>,
    pub values: Vec<T>,
    pub constant_voxels: usize,
}

/// ReHo map, then z-score, then smoothing, then parcellation.
pub fn reho_features<T: Scalar>(
    v: &Volume4D<T>,
    labels: &LabelVolume,
    registry: &RoiRegistry,
    cfg: &RehoConfig,
) -> Result<RehoFeatures<T>> {
    let map = reho_map(v, cfg.cluster)?;
    let z = standardize_map(&map.values, &v.mask)?;
    let smooth = smooth_gaussian(&z, &v.mask, cfg.fwhm_mm, v.voxel_size_mm)?;
    let (roi_ids, values) = if cfg.allow_missing_rois {
        parcellate_partial(&smooth, labels, registry)?
            .into_iter()
            .zip(registry.ids())
            .filter_map(|(v, id)| v.map(|v| (id, v)))
            .unzip()
    } else {
        (registry.ids().collect(), parcellate(&smooth, labels, registry)?)
    };
    Ok(RehoFeatures {
        roi_ids,
        values,
        constant_voxels: map.constant_voxels,
    })
}

/// JSON sidecar describing a flat little-endian `f64` volume in C order
/// `[X, Y, Z, T]`. Masks are one byte per voxel (non-zero = inside), labels
/// are little-endian `u32` per voxel. Relative paths resolve against the
/// sidecar's directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 4],
    pub voxel_size_mm: [f64; 3],
    #[serde(default)]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub labels_path: Option<PathBuf>,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Sidecar> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

fn read_bytes(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::InvalidVolume(format!(
            "{} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    Ok(bytes)
}

/// Reads a volume and its mask. Without a mask file every voxel is in-mask.
pub fn load_volume(volume_path: &Path, sidecar_path: &Path) -> Result<(Volume4D<f64>, Sidecar)> {
    let sc = Sidecar::load(sidecar_path)?;
    let [x, y, z, t] = sc.dims;
    let n = x * y * z * t;
    let bytes = read_bytes(volume_path, n * 8)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let data = Array4::from_shape_vec((x, y, z, t), data).map_err(|e| Error::InvalidVolume(e.to_string()))?;
    let mask = match &sc.mask_path {
        Some(p) => {
            let p = Sidecar::resolve(sidecar_path, p);
            let bytes = read_bytes(&p, x * y * z)?;
            Array3::from_shape_vec((x, y, z), bytes.into_iter().map(|b| b != 0).collect())
                .map_err(|e| Error::InvalidVolume(e.to_string()))?
        }
        None => Array3::from_elem((x, y, z), true),
    };
    let vol = Volume4D::new(data, sc.voxel_size_mm, mask)?;
    Ok((vol, sc))
}

pub fn load_labels(path: &Path, dims: [usize; 3], registry: &RoiRegistry) -> Result<LabelVolume> {
    let [x, y, z] = dims;
    let bytes = read_bytes(path, x * y * z * 4)?;
    let vals: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    let arr = Array3::from_shape_vec((x, y, z), vals).map_err(|e| Error::InvalidVolume(e.to_string()))?;
    LabelVolume::new(arr, registry)
}

/// Resolves the label file from an explicit path or the sidecar.
pub fn labels_path_for(sidecar_path: &Path, sc: &Sidecar, explicit: Option<&Path>) -> Result<PathBuf> {
    match (explicit, &sc.labels_path) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(p)) => Ok(Sidecar::resolve(sidecar_path, p)),
        (None, None) => Err(Error::InvalidConfig("no labels file given".into())),
    }
}
