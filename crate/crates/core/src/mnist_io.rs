//! MNIST IDX container parsing and dataset assembly.
//!
//! Files must be decompressed beforehand; gzip is not handled here.
//!
//! ```text
//! images: [0x00000803][count][rows][cols] then count*rows*cols u8 pixels
//! labels: [0x00000801][count]             then count u8 labels
//! ```
//! All header fields are big-endian u32. Trailing bytes after the declared
//! payload are rejected.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` intensity bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl RawImageSet {
    pub fn image(&self, index: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[index * size..(index + 1) * size]
    }

    /// Serializes back into IDX bytes; the inverse of [`parse_idx_images`].
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for field in [
            IMAGE_MAGIC,
            self.count as u32,
            self.rows as u32,
            self.cols as u32,
        ] {
            out.extend_from_slice(&field.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    pub labels: Vec<u8>,
}

impl LabelSet {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Shape(format!("label {bad} outside 0..=9")));
        }
        Ok(Self { labels })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

/// Real-valued input vectors of a common length paired with class labels.
///
/// Vectors are stored contiguously; `input(i)` borrows the i-th one.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    values: Vec<f64>,
    labels: LabelSet,
    vector_length: usize,
}

impl LabeledDataset {
    pub fn new(values: Vec<f64>, labels: LabelSet, vector_length: usize) -> Result<Self> {
        let expected = labels
            .count()
            .checked_mul(vector_length)
            .ok_or_else(|| Error::Shape("dataset size overflows".into()))?;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values cannot hold {} vectors of length {vector_length}",
                values.len(),
                labels.count()
            )));
        }
        Ok(Self {
            values,
            labels,
            vector_length,
        })
    }

    /// Builds a dataset from one vector per sample.
    pub fn from_vectors(inputs: Vec<Vec<f64>>, labels: LabelSet) -> Result<Self> {
        if inputs.len() != labels.count() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.count()
            )));
        }
        let vector_length = inputs.first().map_or(0, Vec::len);
        if let Some(pos) = inputs.iter().position(|v| v.len() != vector_length) {
            return Err(Error::Shape(format!(
                "input {pos} has length {} but vector_length is {vector_length}",
                inputs[pos].len()
            )));
        }
        let values = inputs.into_iter().flatten().collect();
        Self::new(values, labels, vector_length)
    }

    pub fn len(&self) -> usize {
        self.labels.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector_length(&self) -> usize {
        self.vector_length
    }

    pub fn input(&self, index: usize) -> &[f64] {
        &self.values[index * self.vector_length..(index + 1) * self.vector_length]
    }

    pub fn inputs(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.input(i))
    }

    pub fn label(&self, index: usize) -> u8 {
        self.labels.labels[index]
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    /// New dataset holding the given samples in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.vector_length);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            values.extend_from_slice(self.input(i));
            labels.push(self.label(i));
        }
        Self::new(values, LabelSet { labels }, self.vector_length)
    }

    /// Applies `f` to every input vector, keeping labels and order.
    pub fn map_inputs<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut values = Vec::new();
        let mut out_len = None;
        for (i, v) in self.inputs().enumerate() {
            let mapped = f(v)?;
            match out_len {
                None => out_len = Some(mapped.len()),
                Some(len) if len != mapped.len() => {
                    return Err(Error::Shape(format!(
                        "mapped input {i} has length {} instead of {len}",
                        mapped.len()
                    )))
                }
                Some(_) => {}
            }
            values.extend_from_slice(&mapped);
        }
        Self::new(values, self.labels.clone(), out_len.unwrap_or(0))
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header: missing {what}")))
}

fn check_payload(bytes: &[u8], header: usize, payload: usize, kind: &str) -> Result<()> {
    let expected = header
        .checked_add(payload)
        .ok_or_else(|| Error::Format(format!("{kind} payload size overflows")))?;
    match bytes.len() {
        len if len < expected => Err(Error::Format(format!(
            "truncated {kind} file: {len} bytes, header declares {expected}"
        ))),
        len if len > expected => Err(Error::Format(format!(
            "{} trailing bytes after {kind} payload",
            len - expected
        ))),
        _ => Ok(()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImageSet> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic} (0x{magic:08x}), expected {IMAGE_MAGIC}"
        )));
    }
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")? as usize;
    let cols = read_be_u32(bytes, 12, "column count")? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::Format("image payload size overflows".into()))?;
    check_payload(bytes, 16, payload, "image")?;
    Ok(RawImageSet {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelSet> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic} (0x{magic:08x}), expected {LABEL_MAGIC}"
        )));
    }
    let count = read_be_u32(bytes, 4, "label count")? as usize;
    check_payload(bytes, 8, count, "label")?;
    let labels = bytes[8..].to_vec();
    if let Some((pos, bad)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= NUM_CLASSES)
    {
        return Err(Error::Format(format!(
            "label {bad} at index {pos} is not a digit class"
        )));
    }
    Ok(LabelSet { labels })
}

/// Unpacks each image row-major into a vector scaled from [0,255] to [0,1].
pub fn assemble_dataset(images: &RawImageSet, labels: &LabelSet) -> Result<LabeledDataset> {
    if images.count != labels.count() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.count,
            labels.count()
        )));
    }
    let values = images
        .pixels
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    LabeledDataset::new(values, labels.clone(), images.rows * images.cols)
}

/// Indices of a seeded deterministic shuffle of `0..len`, truncated to `n`.
pub fn subset_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Shape(format!("subset of {n} from {len} samples")));
    }
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(n);
    Ok(indices)
}

pub fn subset(data: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    data.select(&subset_indices(data.len(), n, seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
            Split::Test => (TEST_IMAGES, TEST_LABELS),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads one split from a directory holding the four decompressed MNIST files.
pub fn load_split(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let (image_name, label_name) = split.file_names();
    let image_path = dir.join(image_name);
    let label_path = dir.join(label_name);
    let images = parse_idx_images(&read_file(&image_path)?)
        .map_err(|e| e.context(image_path.display().to_string()))?;
    let labels = parse_idx_labels(&read_file(&label_path)?)
        .map_err(|e| e.context(label_path.display().to_string()))?;
    assemble_dataset(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for f in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&f.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    fn label_bytes(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_two_images() {
        let pixels: Vec<u8> = (0..1568).map(|i| (i % 256) as u8).collect();
        let set = parse_idx_images(&image_bytes(2, 28, 28, &pixels)).unwrap();
        assert_eq!((set.count, set.rows, set.cols), (2, 28, 28));
        assert_eq!(set.image(1), &pixels[784..]);
    }

    #[test]
    fn image_parser_rejects_label_magic() {
        let mut bytes = image_bytes(0, 28, 28, &[]);
        bytes[..4].copy_from_slice(&LABEL_MAGIC.to_be_bytes());
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn image_parser_rejects_truncation_and_trailing() {
        let short = image_bytes(2, 28, 28, &[0; 1567]);
        assert!(matches!(parse_idx_images(&short), Err(Error::Format(_))));
        let long = image_bytes(2, 28, 28, &[0; 1569]);
        assert!(matches!(parse_idx_images(&long), Err(Error::Format(_))));
        assert!(matches!(
            parse_idx_images(&[0, 0, 8]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn parses_labels() {
        let set = parse_idx_labels(&label_bytes(LABEL_MAGIC, &[7, 0, 9])).unwrap();
        assert_eq!(set.labels, vec![7, 0, 9]);
    }

    #[test]
    fn label_parser_errors() {
        assert!(matches!(
            parse_idx_labels(&label_bytes(LABEL_MAGIC, &[1, 12])),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_idx_labels(&label_bytes(IMAGE_MAGIC, &[1])),
            Err(Error::Format(_))
        ));
        let mut truncated = label_bytes(LABEL_MAGIC, &[1, 2, 3]);
        truncated.pop();
        assert!(matches!(
            parse_idx_labels(&truncated),
            Err(Error::Format(_))
        ));
        let mut trailing = label_bytes(LABEL_MAGIC, &[1, 2, 3]);
        trailing.push(0);
        assert!(matches!(parse_idx_labels(&trailing), Err(Error::Format(_))));
    }

    #[test]
    fn assembles_scaled_vectors_in_order() {
        let mut pixels = vec![0u8; 1568];
        pixels[784] = 255;
        pixels[785] = 51;
        let images = parse_idx_images(&image_bytes(2, 28, 28, &pixels)).unwrap();
        let labels = LabelSet::new(vec![3, 8]).unwrap();
        let data = assemble_dataset(&images, &labels).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.vector_length(), 784);
        assert!(data.input(0).iter().all(|&v| v == 0.0));
        assert_eq!(data.input(1)[0], 1.0);
        assert_eq!(data.input(1)[1], 0.2);
        assert_eq!((data.label(0), data.label(1)), (3, 8));
    }

    #[test]
    fn assemble_rejects_count_mismatch() {
        let images = parse_idx_images(&image_bytes(2, 28, 28, &[0; 1568])).unwrap();
        let labels = LabelSet::new(vec![1]).unwrap();
        assert!(matches!(
            assemble_dataset(&images, &labels),
            Err(Error::Shape(_))
        ));
    }

    fn toy(n: usize) -> LabeledDataset {
        let inputs = (0..n).map(|i| vec![i as f64; 3]).collect();
        let labels = LabelSet::new((0..n).map(|i| (i % 10) as u8).collect()).unwrap();
        LabeledDataset::from_vectors(inputs, labels).unwrap()
    }

    #[test]
    fn full_subset_is_a_permutation() {
        let data = toy(37);
        let sub = subset(&data, 37, 5).unwrap();
        let mut a = data.labels().labels.clone();
        let mut b = sub.labels().labels.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_ne!(
            sub, data,
            "a seeded shuffle of 37 items should move something"
        );
    }

    #[test]
    fn subset_edges() {
        let data = toy(10);
        assert!(subset(&data, 0, 1).unwrap().is_empty());
        assert!(matches!(subset(&data, 11, 1), Err(Error::Shape(_))));
        assert_eq!(
            subset_indices(100, 20, 9).unwrap(),
            subset_indices(100, 20, 9).unwrap()
        );
        assert_ne!(
            subset_indices(100, 20, 9).unwrap(),
            subset_indices(100, 20, 10).unwrap()
        );
    }

    #[test]
    fn subset_rows_follow_labels() {
        let data = toy(50);
        let sub = subset(&data, 20, 3).unwrap();
        for i in 0..sub.len() {
            let original = sub.input(i)[0] as usize;
            assert_eq!(sub.label(i) as usize, original % 10);
        }
    }
}
