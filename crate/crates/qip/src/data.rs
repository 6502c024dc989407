//! Synthetic blobs, IDX ingestion, train/test splits and the QFV1 feature
//! file.

use std::fs;
use std::io::Write;
use std::path::Path;

use qip_core::Matrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{FormatError, QipError, Result};
use crate::fsutil::write_atomic;

pub const FEATURE_MAGIC: &[u8; 4] = b"QFV1";
const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            samples_per_class: 200,
            input_dim: 8,
            center_scale: 3.0,
            noise_sigma: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(qip_core::Error::Config("need at least two classes".into()).into());
        }
        if self.samples_per_class == 0 || self.input_dim == 0 {
            return Err(qip_core::Error::Config("sample count and input dim must be positive".into()).into());
        }
        if !(self.center_scale > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(qip_core::Error::Config("center scale must be positive, noise non-negative".into()).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Class-major samples: every sample of class 0, then class 1, ...
pub fn generate_blobs(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let centers: Vec<f64> = (0..spec.n_classes * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.center_scale * z
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let n = spec.n_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.n_classes {
        for _ in 0..spec.samples_per_class {
            data.extend(centers[c * d..(c + 1) * d].iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Ok(Dataset {
        inputs: Matrix::from_vec(n, d, data)?,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Every class appears in both parts, `train_fraction` of each class in
    /// the training part.
    Stratified,
    /// Train on the lower half of the class ids, evaluate on the upper half.
    DisjointClasses,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stratified" => Ok(Self::Stratified),
            "disjoint" => Ok(Self::DisjointClasses),
            _ => Err(format!("unknown split `{s}` (stratified|disjoint)")),
        }
    }
}

/// Returns `(train, test)`. Disjoint splits relabel each part to `0..C'`.
pub fn split(ds: &Dataset, mode: SplitMode, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(qip_core::Error::Config("train fraction must lie in (0, 1)".into()).into());
    }
    let c = ds.n_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    match mode {
        SplitMode::Stratified => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151_7a7a);
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for members in by_class.iter_mut() {
                members.shuffle(&mut rng);
                let cut = ((members.len() as f64) * train_fraction).round() as usize;
                let cut = if members.len() < 2 { members.len() } else { cut.clamp(1, members.len() - 1) };
                tr.extend_from_slice(&members[..cut]);
                te.extend_from_slice(&members[cut..]);
            }
            tr.sort_unstable();
            te.sort_unstable();
            Ok((ds.subset(&tr), ds.subset(&te)))
        }
        SplitMode::DisjointClasses => {
            if c < 4 {
                return Err(qip_core::Error::Config("disjoint split needs at least four classes".into()).into());
            }
            let half = c / 2;
            let part = |lo: usize, hi: usize| {
                let idx: Vec<usize> = (0..ds.len()).filter(|&i| (lo..hi).contains(&ds.labels[i])).collect();
                let mut d = ds.subset(&idx);
                d.labels.iter_mut().for_each(|y| *y -= lo);
                d
            };
            Ok((part(0, half), part(half, c)))
        }
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn need(path: &Path, bytes: &[u8], needed: u64) -> Result<()> {
    if (bytes.len() as u64) < needed {
        return Err(QipError::format(path, FormatError::Truncated { needed, actual: bytes.len() as u64 }));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| QipError::io(path, e))
}

/// IDX image and label files. Pixels are flattened row-major and scaled to
/// `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;
    need(images_path, &img, 4)?;
    if read_u32_be(&img, 0) != IDX_IMAGES {
        return Err(QipError::format(
            images_path,
            FormatError::BadMagic { expected: IDX_IMAGES.to_be_bytes().to_vec(), found: img[..4].to_vec() },
        ));
    }
    need(labels_path, &lab, 4)?;
    if read_u32_be(&lab, 0) != IDX_LABELS {
        return Err(QipError::format(
            labels_path,
            FormatError::BadMagic { expected: IDX_LABELS.to_be_bytes().to_vec(), found: lab[..4].to_vec() },
        ));
    }
    need(images_path, &img, 16)?;
    need(labels_path, &lab, 8)?;
    let n = read_u32_be(&img, 4) as usize;
    let (rows, cols) = (read_u32_be(&img, 8) as usize, read_u32_be(&img, 12) as usize);
    let n_labels = read_u32_be(&lab, 4) as usize;
    if n != n_labels {
        return Err(QipError::format(labels_path, FormatError::CountMismatch { images: n, labels: n_labels }));
    }
    let d = rows * cols;
    need(images_path, &img, 16 + (n * d) as u64)?;
    need(labels_path, &lab, 8 + n as u64)?;
    let data = img[16..16 + n * d].iter().map(|&p| p as f64 / 255.0).collect();
    let labels = lab[8..8 + n].iter().map(|&l| l as usize).collect();
    Ok(Dataset {
        inputs: Matrix::from_vec(n, d, data)?,
        labels,
    })
}

fn to_u32(what: &'static str, value: usize, path: &Path) -> Result<u32> {
    u32::try_from(value).map_err(|_| QipError::format(path, FormatError::Overflow { what, value }))
}

/// QFV1: magic, LE u32 rows and dim, LE f64 rows, then a one-byte label flag
/// followed by LE u32 labels when set.
pub fn encode_features(path: &Path, x: &Matrix, labels: Option<&[usize]>) -> Result<Vec<u8>> {
    let rows = to_u32("rows", x.rows(), path)?;
    let dim = to_u32("dim", x.cols(), path)?;
    let mut out = Vec::with_capacity(13 + x.as_slice().len() * 8 + x.rows() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match labels {
        Some(l) => {
            if l.len() != x.rows() {
                return Err(qip_core::Error::Dimension { expected: x.rows(), actual: l.len() }.into());
            }
            out.push(1);
            for &y in l {
                out.extend_from_slice(&to_u32("label", y, path)?.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    Ok(out)
}

pub fn save_features(path: &Path, x: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    let bytes = encode_features(path, x, labels)?;
    write_atomic(path, &bytes)
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<(Matrix, Option<Vec<usize>>)> {
    need(path, bytes, 12)?;
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(QipError::format(
            path,
            FormatError::BadMagic { expected: FEATURE_MAGIC.to_vec(), found: bytes[..4].to_vec() },
        ));
    }
    let rd = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, dim) = (rd(4), rd(8));
    let body = (rows as u64) * (dim as u64) * 8;
    need(path, bytes, 12 + body + 1)?;
    let body = body as usize;
    let data = bytes[12..12 + body]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let flag_at = 12 + body;
    let (labels, end) = match bytes[flag_at] {
        0 => (None, flag_at + 1),
        1 => {
            need(path, bytes, (flag_at + 1 + rows * 4) as u64)?;
            let l = (0..rows).map(|i| rd(flag_at + 1 + 4 * i)).collect();
            (Some(l), flag_at + 1 + rows * 4)
        }
        f => return Err(QipError::format(path, FormatError::Invalid(format!("label flag {f}")))),
    };
    if bytes.len() > end {
        return Err(QipError::format(path, FormatError::Trailing { trailing: (bytes.len() - end) as u64 }));
    }
    Ok((Matrix::from_vec(rows, dim, data)?, labels))
}

pub fn load_features(path: &Path) -> Result<(Matrix, Option<Vec<usize>>)> {
    decode_features(path, &read_file(path)?)
}

/// Named feature blocks for one split; every block has one row per label.
pub struct FeatureTable<'a> {
    pub split: &'a str,
    pub labels: &'a [usize],
    pub blocks: Vec<(&'a str, &'a Matrix)>,
}

/// One CSV row per sample, `split,index,label,<block>_0,...`. Column names
/// come from the first table.
pub fn features_csv(tables: &[FeatureTable<'_>]) -> String {
    let mut out = String::from("split,index,label");
    if let Some(first) = tables.first() {
        for (name, m) in &first.blocks {
            for j in 0..m.cols() {
                out.push_str(&format!(",{name}_{j}"));
            }
        }
    }
    out.push('\n');
    for t in tables {
        for (i, label) in t.labels.iter().enumerate() {
            out.push_str(&format!("{},{i},{label}", t.split));
            for (_, m) in &t.blocks {
                for v in m.row(i) {
                    out.push_str(&format!(",{v:?}"));
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_idx_images(w: &mut impl Write, images: &[Vec<u8>], rows: u32, cols: u32) -> std::io::Result<()> {
    w.write_all(&IDX_IMAGES.to_be_bytes())?;
    w.write_all(&(images.len() as u32).to_be_bytes())?;
    w.write_all(&rows.to_be_bytes())?;
    w.write_all(&cols.to_be_bytes())?;
    for img in images {
        w.write_all(img)?;
    }
    Ok(())
}

pub fn write_idx_labels(w: &mut impl Write, labels: &[u8]) -> std::io::Result<()> {
    w.write_all(&IDX_LABELS.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}
