//! Datasets: IDX ingestion, synthetic Gaussian blobs, stratified splits and
//! in-distribution / out-of-distribution pairing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::fsutil;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    /// Pixels divided by 255, so every value lies in `[0, 1]`.
    UnitInterval,
}

/// Images `[N, ...]` with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub name: String,
    pub normalization: Normalization,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        name: impl Into<String>,
        normalization: Normalization,
    ) -> Result<Self> {
        if images.rank() < 2 || images.rows() != labels.len() {
            return Err(UqError::Data(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(UqError::Data(format!("label {bad} out of range for {n_classes} classes")));
        }
        if normalization == Normalization::UnitInterval
            && images.data().iter().any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(UqError::Data("unit-interval dataset has pixels outside [0, 1]".into()));
        }
        Ok(LabeledDataset {
            images,
            labels,
            n_classes,
            name: name.into(),
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Same samples viewed with a different per-sample shape (for example
    /// `[28, 28]` → `[1, 28, 28]` for convolutional input).
    pub fn with_sample_shape(mut self, shape: &[usize]) -> Result<Self> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        self.images = self.images.reshape(full)?;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(LabeledDataset {
            images,
            labels,
            n_classes: self.n_classes,
            name: self.name.clone(),
            normalization: self.normalization,
        })
    }

    /// Rows `[start, end)`, clamped to the dataset size.
    pub fn range(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.len());
        if start >= end {
            return Err(UqError::EmptyInput(format!(
                "range {start}..{end} of {} is empty",
                self.name
            )));
        }
        self.subset(&(start..end).collect::<Vec<_>>())
    }

    pub fn take(&self, n: usize) -> Result<Self> {
        self.range(0, n)
    }

    /// Keeps only the listed classes, relabeled `0..keep.len()` in the given order.
    pub fn filter_classes(&self, keep: &[usize]) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(&self.labels[i]))
            .collect();
        let mut out = self.subset(&idx)?;
        for l in out.labels.iter_mut() {
            *l = keep.iter().position(|k| k == l).unwrap();
        }
        out.n_classes = keep.len();
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Writes the dataset as an IDX image/label file pair. Pixels are mapped
    /// back to bytes by `round(v * 255)` for unit-interval data.
    pub fn write_idx(&self, images_path: &Path, labels_path: &Path) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 3 {
            return Err(UqError::Data(format!("IDX images need [N, H, W], got {shape:?}")));
        }
        let mut img = Vec::with_capacity(16 + self.images.len());
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        for &d in shape {
            img.extend_from_slice(&(d as u32).to_be_bytes());
        }
        let factor = match self.normalization {
            Normalization::UnitInterval => 255.0,
            Normalization::Raw => 1.0,
        };
        img.extend(self.images.data().iter().map(|&v| (v * factor).round().clamp(0.0, 255.0) as u8));
        let mut lab = Vec::with_capacity(8 + self.len());
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(self.len() as u32).to_be_bytes());
        for &l in &self.labels {
            if l > 255 {
                return Err(UqError::Data(format!("label {l} does not fit in a byte")));
            }
            lab.push(l as u8);
        }
        fsutil::write_atomic(images_path, &img)?;
        fsutil::write_atomic(labels_path, &lab)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| UqError::Parse {
            offset: at as u64,
            detail: format!("truncated header: missing {what}"),
        })
}

/// Parses an IDX image file (`0x00000803`, `[N, H, W]` unsigned bytes) into
/// unit-interval pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(UqError::Parse {
            offset: 0,
            detail: format!("image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let h = be_u32(bytes, 8, "row count")? as usize;
    let w = be_u32(bytes, 12, "column count")? as usize;
    let need = 16 + n * h * w;
    if bytes.len() < need {
        return Err(UqError::Parse {
            offset: bytes.len() as u64,
            detail: format!("truncated pixel payload: need {need} bytes"),
        });
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(UqError::Parse {
            offset: 4,
            detail: format!("empty image file ({n} x {h} x {w})"),
        });
    }
    let data = bytes[16..need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, h, w], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(UqError::Parse {
            offset: 0,
            detail: format!("label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    if bytes.len() < 8 + n {
        return Err(UqError::Parse {
            offset: bytes.len() as u64,
            detail: format!("truncated label payload: need {} bytes", 8 + n),
        });
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| UqError::io(path, e))
}

/// Loads images only (labels are irrelevant for out-of-distribution sets).
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    parse_idx_images(&read_file(path)?)
}

/// Loads an IDX image/label pair; the class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = load_idx_images(images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    if labels.len() != images.rows() {
        return Err(UqError::Parse {
            offset: 4,
            detail: format!(
                "label count {} does not match image count {}",
                labels.len(),
                images.rows()
            ),
        });
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(images, labels, n_classes, name, Normalization::UnitInterval)
}

/// Gaussian clusters around centers drawn uniformly from a cube of side
/// `center_spread` centred on the origin. Samples are class-major.
pub fn make_blobs(
    rng: &mut Rng,
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    center_spread: f64,
    sigma: f64,
) -> Result<LabeledDataset> {
    if n_classes < 2 || n_per_class == 0 || dim == 0 {
        return Err(UqError::Parameter(format!(
            "blobs need n_classes >= 2, n_per_class >= 1, dim >= 1 (got {n_classes}, {n_per_class}, {dim})"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) || !(center_spread >= 0.0 && center_spread.is_finite()) {
        return Err(UqError::Parameter(format!(
            "blobs need sigma > 0 and finite spread (got sigma {sigma}, spread {center_spread})"
        )));
    }
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| (rng.uniform() - 0.5) * center_spread).collect())
        .collect();
    let mut data = Vec::with_capacity(n_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in center {
                data.push(m + sigma * rng.standard_normal());
            }
            labels.push(c);
        }
    }
    let images = Tensor::new(vec![n_classes * n_per_class, dim], data)?;
    LabeledDataset::new(images, labels, n_classes, "blobs", Normalization::Raw)
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    /// Source row indices of each split, in the order the rows appear.
    pub indices: [Vec<usize>; 3],
}

/// Stratified random partition. Split sizes follow largest-remainder
/// rounding of `N * fraction`; each class contributes within one sample of
/// its proportional share to every split.
pub fn split(ds: &LabeledDataset, fractions: SplitFractions, rng: &mut Rng) -> Result<Splits> {
    let f = [fractions.train, fractions.val, fractions.test];
    if f.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(UqError::Split(format!("fractions {f:?} must all be positive")));
    }
    if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(UqError::Split(format!("fractions {f:?} must sum to 1")));
    }
    let totals = largest_remainder(ds.len(), &f);
    if let Some(k) = totals.iter().position(|&t| t == 0) {
        return Err(UqError::Split(format!(
            "split {k} would be empty for {} samples",
            ds.len()
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in by_class.iter_mut() {
        rng.shuffle(members);
    }

    // floor quotas per class, then hand out remainders so column sums hit the
    // global totals with at most one extra per (class, split)
    let mut quota: Vec<[usize; 3]> = by_class
        .iter()
        .map(|m| {
            let n = m.len() as f64;
            [(n * f[0]).floor() as usize, (n * f[1]).floor() as usize, (n * f[2]).floor() as usize]
        })
        .collect();
    let mut deficit: [usize; 3] = std::array::from_fn(|k| totals[k] - quota.iter().map(|q| q[k]).sum::<usize>());
    let mut order: Vec<usize> = (0..ds.n_classes).collect();
    let remainder = |c: usize, q: &[usize; 3]| by_class[c].len() - q.iter().sum::<usize>();
    order.sort_by_key(|&c| std::cmp::Reverse(remainder(c, &quota[c])));
    for &c in &order {
        let mut r = remainder(c, &quota[c]);
        let mut ks = [0usize, 1, 2];
        ks.sort_by_key(|&k| std::cmp::Reverse(deficit[k]));
        for &k in &ks {
            if r == 0 {
                break;
            }
            if deficit[k] > 0 {
                quota[c][k] += 1;
                deficit[k] -= 1;
                r -= 1;
            }
        }
        // no deficit left anywhere: the greedy fill ran out, keep the sample in train
        quota[c][0] += r;
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (c, members) in by_class.iter().enumerate() {
        let mut at = 0;
        for (k, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&members[at..at + quota[c][k]]);
            at += quota[c][k];
        }
    }
    for part in parts.iter_mut() {
        rng.shuffle(part);
    }
    Ok(Splits {
        train: ds.subset(&parts[0])?,
        val: ds.subset(&parts[1])?,
        test: ds.subset(&parts[2])?,
        indices: parts,
    })
}

fn largest_remainder(n: usize, f: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = f.iter().map(|&x| x * n as f64).collect();
    let mut out: [usize; 3] = std::array::from_fn(|k| exact[k].floor() as usize);
    let mut left = n - out.iter().sum::<usize>();
    let mut ks = [0usize, 1, 2];
    ks.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in ks.iter().cycle() {
        if left == 0 {
            break;
        }
        out[k] += 1;
        left -= 1;
    }
    out
}

/// An in-distribution dataset paired with a shape-matched OOD set whose
/// labels are ignored.
#[derive(Debug, Clone)]
pub struct OodPair {
    pub in_distribution: LabeledDataset,
    pub out_of_distribution: LabeledDataset,
}

impl OodPair {
    pub fn new(in_distribution: LabeledDataset, out_of_distribution: LabeledDataset) -> Result<Self> {
        if in_distribution.sample_shape() != out_of_distribution.sample_shape() {
            return Err(UqError::Data(format!(
                "OOD sample shape {:?} does not match in-distribution {:?}",
                out_of_distribution.sample_shape(),
                in_distribution.sample_shape()
            )));
        }
        Ok(OodPair {
            in_distribution,
            out_of_distribution,
        })
    }
}

/// Wraps an unlabeled image tensor as a dataset with every label 0.
pub fn unlabeled(images: Tensor, name: &str) -> Result<LabeledDataset> {
    let n = images.rows();
    LabeledDataset::new(images, vec![0; n], 1, name, Normalization::UnitInterval)
}
