//! Procedural stand-in for CIFAR-10 written in the same binary layout.
//!
//! Each image is a smooth four-corner color gradient with a few soft shapes
//! whose kind and palette depend on the class, plus mild pixel noise. The
//! center of such an image is predictable from its surroundings but not
//! from a single average patch, which keeps the task meaningful.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RawImage, CHANNELS, NUM_CLASSES, RECORDS_PER_FILE, SIDE, TEST_FILE, TRAIN_FILES};
use crate::error::Result;

#[derive(Clone, Copy)]
enum ShapeKind {
    Disk,
    Band,
    Square,
}

fn class_palette(class: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; NUM_CLASSES] = [
        [0.85, 0.25, 0.20],
        [0.20, 0.65, 0.30],
        [0.25, 0.35, 0.85],
        [0.90, 0.80, 0.25],
        [0.70, 0.30, 0.75],
        [0.25, 0.75, 0.80],
        [0.95, 0.55, 0.15],
        [0.45, 0.30, 0.20],
        [0.80, 0.80, 0.85],
        [0.15, 0.15, 0.20],
    ];
    PALETTE[class]
}

fn class_shape(class: usize) -> ShapeKind {
    match class % 3 {
        0 => ShapeKind::Disk,
        1 => ShapeKind::Band,
        _ => ShapeKind::Square,
    }
}

fn smoothstep(edge: f64, width: f64, d: f64) -> f64 {
    // 1 inside, 0 outside, linear ramp of `width` pixels at the edge
    ((edge - d) / width + 0.5).clamp(0.0, 1.0)
}

/// Draws one image and its class from `rng`.
pub fn synth_image<R: Rng>(rng: &mut R) -> RawImage {
    let class = rng.random_range(0..NUM_CLASSES);
    let corners: [[f64; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.1..0.9)));

    struct Blob {
        kind: ShapeKind,
        cy: f64,
        cx: f64,
        size: f64,
        angle: f64,
        color: [f64; 3],
        alpha: f64,
    }
    let base = class_palette(class);
    let count = rng.random_range(1..=3);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| Blob {
            kind: class_shape(class),
            cy: rng.random_range(6.0..26.0),
            cx: rng.random_range(6.0..26.0),
            size: rng.random_range(4.0..11.0),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            color: std::array::from_fn(|c| (base[c] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)),
            alpha: rng.random_range(0.6..0.95),
        })
        .collect();

    let mut bytes = [0u8; SIDE * SIDE * CHANNELS];
    let last = (SIDE - 1) as f64;
    for r in 0..SIDE {
        for c in 0..SIDE {
            let (u, v) = (c as f64 / last, r as f64 / last);
            let mut px: [f64; 3] = std::array::from_fn(|k| {
                (1.0 - u) * (1.0 - v) * corners[0][k]
                    + u * (1.0 - v) * corners[1][k]
                    + (1.0 - u) * v * corners[2][k]
                    + u * v * corners[3][k]
            });
            for b in &blobs {
                let (dy, dx) = (r as f64 - b.cy, c as f64 - b.cx);
                let d = match b.kind {
                    ShapeKind::Disk => (dy * dy + dx * dx).sqrt(),
                    ShapeKind::Band => (dx * b.angle.cos() + dy * b.angle.sin()).abs() * 2.5,
                    ShapeKind::Square => dy.abs().max(dx.abs()),
                };
                let w = b.alpha * smoothstep(b.size, 2.0, d);
                for k in 0..3 {
                    px[k] = (1.0 - w) * px[k] + w * b.color[k];
                }
            }
            for k in 0..3 {
                let noisy = px[k] * 255.0 + rng.random_range(-4.0..4.0);
                bytes[(r * SIDE + c) * CHANNELS + k] = noisy.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RawImage::from_hwc(&bytes, class as u8).expect("valid synthetic image")
}

pub fn synth_images(n: usize, seed: u64, stream: u64) -> Vec<RawImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| synth_image(&mut rng)).collect()
}

/// Writes `data_batch_1..5.bin` and `test_batch.bin` (10,000 records each)
/// into `dir`, creating it if needed.
pub fn write_synthetic_cifar(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (stream, name) in TRAIN_FILES.iter().chain(std::iter::once(&TEST_FILE)).enumerate() {
        let images = synth_images(RECORDS_PER_FILE, seed, stream as u64);
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        for img in &images {
            out.write_all(&img.to_record())?;
        }
        out.flush()?;
    }
    Ok(())
}
