//! CIFAR-10 ingestion and the center-mask task built on top of it.
//!
//! Images are kept as their original bytes (HWC order) and only turned into
//! `f64` tensors per batch; a pixel's value is always `byte / 255`.

pub mod png;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = SIDE * SIDE * CHANNELS;
pub const PLANE_LEN: usize = SIDE * SIDE;
pub const RECORD_LEN: usize = 1 + IMAGE_LEN;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const NUM_CLASSES: usize = 10;

pub const PATCH_SIDE: usize = 8;
/// First masked row/column: (32 − 8) / 2.
pub const PATCH_OFFSET: usize = (SIDE - PATCH_SIDE) / 2;
pub const LABEL_LEN: usize = PATCH_SIDE * PATCH_SIDE * CHANNELS;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

pub fn image_shape() -> Shape {
    Shape::new(&[SIDE, SIDE, CHANNELS]).expect("static shape")
}

pub fn label_shape() -> Shape {
    Shape::new(&[LABEL_LEN]).expect("static shape")
}

/// One 32x32 RGB image with its class.
#[derive(Clone, PartialEq, Eq)]
pub struct RawImage {
    /// HWC, row-major.
    bytes: [u8; IMAGE_LEN],
    class: u8,
}

impl std::fmt::Debug for RawImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RawImage").field("class", &self.class).finish_non_exhaustive()
    }
}

impl RawImage {
    pub fn from_hwc(bytes: &[u8], class: u8) -> Result<RawImage> {
        let bytes: [u8; IMAGE_LEN] = bytes
            .try_into()
            .map_err(|_| Error::Shape(format!("image needs {IMAGE_LEN} bytes, got {}", bytes.len())))?;
        if class as usize >= NUM_CLASSES {
            return Err(Error::Range(format!("class {class} is not in 0..{NUM_CLASSES}")));
        }
        Ok(RawImage { bytes, class })
    }

    /// Decodes a 3,073-byte record: label byte, then the R, G and B planes.
    pub fn from_record(record: &[u8]) -> Result<RawImage> {
        if record.len() != RECORD_LEN {
            return Err(Error::Shape(format!("record must be {RECORD_LEN} bytes, got {}", record.len())));
        }
        let class = record[0];
        if class as usize >= NUM_CLASSES {
            return Err(Error::Range(format!("label byte {class} > 9")));
        }
        let planes = &record[1..];
        let mut bytes = [0u8; IMAGE_LEN];
        for (p, px) in bytes.chunks_exact_mut(CHANNELS).enumerate() {
            for (c, v) in px.iter_mut().enumerate() {
                *v = planes[c * PLANE_LEN + p];
            }
        }
        Ok(RawImage { bytes, class })
    }

    pub fn to_record(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[0] = self.class;
        for (p, px) in self.bytes.chunks_exact(CHANNELS).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[1 + c * PLANE_LEN + p] = v;
            }
        }
        out
    }

    pub fn bytes(&self) -> &[u8; IMAGE_LEN] {
        &self.bytes
    }

    pub fn class(&self) -> u8 {
        self.class
    }

    /// `(32, 32, 3)` tensor with values in [0, 1].
    pub fn pixels(&self) -> Tensor {
        Tensor::from_parts(image_shape(), self.bytes.iter().map(|&b| to_unit(b)).collect())
    }
}

#[inline]
pub fn to_unit(byte: u8) -> f64 {
    byte as f64 / 255.0
}

#[inline]
pub fn in_patch(row: usize, col: usize) -> bool {
    (PATCH_OFFSET..PATCH_OFFSET + PATCH_SIDE).contains(&row)
        && (PATCH_OFFSET..PATCH_OFFSET + PATCH_SIDE).contains(&col)
}

fn dataset_root(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn read_batch_file(path: &Path, out: &mut Vec<RawImage>) -> Result<()> {
    let data = std::fs::read(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    let expected = RECORDS_PER_FILE * RECORD_LEN;
    if data.len() != expected {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            offset: data.len() as u64,
            message: format!("file is {} bytes, expected {expected}", data.len()),
        });
    }
    for (i, record) in data.chunks_exact(RECORD_LEN).enumerate() {
        let img = RawImage::from_record(record).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            offset: (i * RECORD_LEN) as u64,
            message: e.to_string(),
        })?;
        out.push(img);
    }
    Ok(())
}

/// Reads the five training batches then the test batch (60,000 images in
/// file order). Accepts either the batch directory itself or its parent.
pub fn load_cifar10(dir: &Path) -> Result<Vec<RawImage>> {
    let root = dataset_root(dir);
    let mut images = Vec::with_capacity(6 * RECORDS_PER_FILE);
    for name in TRAIN_FILES.iter().chain(std::iter::once(&TEST_FILE)) {
        read_batch_file(&root.join(name), &mut images)?;
    }
    Ok(images)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> SplitSpec {
        SplitSpec {
            train: 50_000,
            dev: 5_000,
            test: 5_000,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        })
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Lookup {
                kind: "split",
                name: s.into(),
            }),
        }
    }
}

/// A subset of the loaded images; `indices` are positions in the original
/// 60,000-image list.
#[derive(Clone, Debug, Default)]
pub struct ImageSet {
    pub images: Vec<RawImage>,
    pub indices: Vec<usize>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The first `k` images.
    pub fn truncated(&self, k: usize) -> ImageSet {
        let k = k.min(self.len());
        ImageSet {
            images: self.images[..k].to_vec(),
            indices: self.indices[..k].to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: ImageSet,
    pub dev: ImageSet,
    pub test: ImageSet,
}

impl Splits {
    pub fn get(&self, which: SplitName) -> &ImageSet {
        match which {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }
}

/// Training files become the train split; the test file is shuffled with
/// `spec.seed` and cut into dev (first) and test (rest).
pub fn split(images: Vec<RawImage>, spec: &SplitSpec) -> Result<Splits> {
    let total = spec.train + spec.dev + spec.test;
    if images.len() != total {
        return Err(Error::Contract(format!(
            "split expects {total} images, got {}",
            images.len()
        )));
    }
    let mut order: Vec<usize> = (spec.train..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (dev_idx, test_idx) = order.split_at(spec.dev);
    let (mut dev_idx, mut test_idx) = (dev_idx.to_vec(), test_idx.to_vec());
    // sorted membership keeps evaluation order independent of the shuffle
    dev_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick = |idx: &[usize]| ImageSet {
        images: idx.iter().map(|&i| images[i].clone()).collect(),
        indices: idx.to_vec(),
    };
    let dev = pick(&dev_idx);
    let test = pick(&test_idx);
    let mut images = images;
    images.truncate(spec.train);
    Ok(Splits {
        train: ImageSet {
            indices: (0..spec.train).collect(),
            images,
        },
        dev,
        test,
    })
}

/// Masked input plus the flattened center patch it hides.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: Tensor,
    pub class: u8,
}

/// Zeros rows/cols 12–19 of an HxWxC image (all channels).
pub fn apply_mask(image: &Tensor) -> Result<Tensor> {
    let mut out = image.clone();
    let &[_, _, c] = image.dims() else {
        return Err(Error::Shape(format!("mask expects HxWxC, got {}", image.shape())));
    };
    out.write_region(PATCH_OFFSET, PATCH_OFFSET, &Tensor::zeros(&Shape::new(&[PATCH_SIDE, PATCH_SIDE, c])?))?;
    Ok(out)
}

pub fn make_example(img: &RawImage) -> Example {
    let pixels = img.pixels();
    let label = pixels
        .slice_region(PATCH_OFFSET, PATCH_OFFSET, PATCH_SIDE, PATCH_SIDE)
        .and_then(|p| p.into_shape(&label_shape()))
        .expect("static geometry");
    let input = apply_mask(&pixels).expect("static geometry");
    Example {
        input,
        label,
        class: img.class,
    }
}

/// Puts a 192-value prediction back into the masked center of `input`.
pub fn recompose(input: &Tensor, prediction: &Tensor) -> Result<Tensor> {
    if input.dims() != image_shape().dims() {
        return Err(Error::Shape(format!("recompose expects a 32x32x3 input, got {}", input.shape())));
    }
    if let Some(v) = prediction.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("prediction value {v} outside [0, 1]")));
    }
    let patch = prediction.reshape(&Shape::new(&[PATCH_SIDE, PATCH_SIDE, CHANNELS])?)?;
    let mut out = input.clone();
    out.write_region(PATCH_OFFSET, PATCH_OFFSET, &patch)?;
    Ok(out)
}

/// Stacks masked inputs `(N, 32, 32, 3)` and labels `(N, 192)` for a batch.
pub fn batch_tensors<'a>(images: impl ExactSizeIterator<Item = &'a RawImage>) -> Result<(Tensor, Tensor)> {
    let n = images.len();
    let mut inputs = Vec::with_capacity(n * IMAGE_LEN);
    let mut labels = Vec::with_capacity(n * LABEL_LEN);
    for img in images {
        for (p, px) in img.bytes.chunks_exact(CHANNELS).enumerate() {
            let (r, c) = (p / SIDE, p % SIDE);
            if in_patch(r, c) {
                inputs.extend_from_slice(&[0.0; CHANNELS]);
                labels.extend(px.iter().map(|&b| to_unit(b)));
            } else {
                inputs.extend(px.iter().map(|&b| to_unit(b)));
            }
        }
    }
    Ok((
        Tensor::from_parts(image_shape().batched(n)?, inputs),
        Tensor::from_parts(label_shape().batched(n)?, labels),
    ))
}
