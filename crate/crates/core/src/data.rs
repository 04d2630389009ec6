//! Dataset ingestion and partitioning.
//!
//! MNIST arrives as IDX files (big-endian dims), is filtered to classes
//! 0..=3 and down-sampled 28×28 → 4×4 by exact 7×7 block means. A synthetic
//! four-blob generator provides an offline fallback with the same shape.
//! Shards are carved per device with per-class Dirichlet proportions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;
pub const FEATURES: usize = 16;
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One classified sample: 16 features in [0,1] and a label in 0..=3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != FEATURES {
            return Err(Error::Validation(format!(
                "example has {} features, expected {FEATURES}",
                self.features.len()
            )));
        }
        if self.features.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Validation("feature outside [0,1]".into()));
        }
        if usize::from(self.label) >= NUM_CLASSES {
            return Err(Error::Validation(format!(
                "label {} out of range 0..{NUM_CLASSES}",
                self.label
            )));
        }
        Ok(())
    }
}

/// Raw 28×28 image with its label, straight from the IDX pair.
#[derive(Debug, Clone)]
pub struct RawExample {
    pub pixels: Vec<u8>,
    pub label: u8,
}

/// Dirichlet partitioning knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Concentration α > 0; small values skew shards toward few classes.
    pub alpha: f64,
    pub devices: usize,
    pub samples_per_device: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            devices: 10,
            samples_per_device: 128,
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Ingestion {
            field: field.into(),
            detail: "file truncated".into(),
        })
}

/// Parse an IDX image/label pair into raw examples.
pub fn read_idx(path_images: &Path, path_labels: &Path) -> Result<Vec<RawExample>> {
    let images = fs::read(path_images).map_err(|source| Error::Io {
        path: path_images.display().to_string(),
        source,
    })?;
    let labels = fs::read(path_labels).map_err(|source| Error::Io {
        path: path_labels.display().to_string(),
        source,
    })?;

    let magic = read_u32_be(&images, 0, "images.magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Ingestion {
            field: "images.magic".into(),
            detail: format!("expected {IDX_IMAGES_MAGIC:#010x}, got {magic:#010x}"),
        });
    }
    let n_images = read_u32_be(&images, 4, "images.count")? as usize;
    let rows = read_u32_be(&images, 8, "images.rows")? as usize;
    let cols = read_u32_be(&images, 12, "images.cols")? as usize;
    let image_len = rows * cols;
    if images.len() != 16 + n_images * image_len {
        return Err(Error::Ingestion {
            field: "images.data".into(),
            detail: format!(
                "expected {} pixel bytes, found {}",
                n_images * image_len,
                images.len().saturating_sub(16)
            ),
        });
    }

    let magic = read_u32_be(&labels, 0, "labels.magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Ingestion {
            field: "labels.magic".into(),
            detail: format!("expected {IDX_LABELS_MAGIC:#010x}, got {magic:#010x}"),
        });
    }
    let n_labels = read_u32_be(&labels, 4, "labels.count")? as usize;
    if labels.len() != 8 + n_labels {
        return Err(Error::Ingestion {
            field: "labels.data".into(),
            detail: format!(
                "expected {n_labels} label bytes, found {}",
                labels.len().saturating_sub(8)
            ),
        });
    }
    if n_images != n_labels {
        return Err(Error::Ingestion {
            field: "count".into(),
            detail: format!("{n_images} images vs {n_labels} labels"),
        });
    }

    Ok((0..n_images)
        .map(|i| RawExample {
            pixels: images[16 + i * image_len..16 + (i + 1) * image_len].to_vec(),
            label: labels[8 + i],
        })
        .collect())
}

/// 28×28 → 4×4 by exact 7×7 block means, scaled into [0,1].
pub fn downsample_4x4(image: &[u8]) -> Result<Vec<f64>> {
    if image.len() != 28 * 28 {
        return Err(Error::Validation(format!(
            "expected 784 pixels (28x28), got {}",
            image.len()
        )));
    }
    let mut out = Vec::with_capacity(FEATURES);
    for block_row in 0..4 {
        for block_col in 0..4 {
            let mut sum = 0u32;
            for r in 0..7 {
                for c in 0..7 {
                    sum += u32::from(image[(block_row * 7 + r) * 28 + block_col * 7 + c]);
                }
            }
            out.push(f64::from(sum) / (49.0 * 255.0));
        }
    }
    Ok(out)
}

/// Filter to the first four classes and down-sample each kept image.
pub fn prepare_examples(raw: &[RawExample]) -> Result<Vec<Example>> {
    raw.iter()
        .filter(|r| usize::from(r.label) < NUM_CLASSES)
        .map(|r| {
            Ok(Example {
                features: downsample_4x4(&r.pixels)?,
                label: r.label,
            })
        })
        .collect()
}

/// Load a train or test split from an MNIST directory, trying both the
/// classic `train-images-idx3-ubyte` and dotted `train-images.idx3-ubyte`
/// layouts.
pub fn load_mnist_split(dir: &Path, train: bool) -> Result<Vec<Example>> {
    let stem = if train { "train" } else { "t10k" };
    let candidates = [
        (
            format!("{stem}-images-idx3-ubyte"),
            format!("{stem}-labels-idx1-ubyte"),
        ),
        (
            format!("{stem}-images.idx3-ubyte"),
            format!("{stem}-labels.idx1-ubyte"),
        ),
    ];
    for (img, lab) in &candidates {
        let (ip, lp) = (dir.join(img), dir.join(lab));
        if ip.exists() && lp.exists() {
            return prepare_examples(&read_idx(&ip, &lp)?);
        }
    }
    Err(Error::Ingestion {
        field: "mnist_dir".into(),
        detail: format!("no IDX pair for split '{stem}' under {}", dir.display()),
    })
}

/// Per-class Dirichlet(α·1_K) proportions drawn as normalized Gamma samples.
fn dirichlet_proportions<R: Rng>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0 checked by caller");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let total: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= total;
    }
    draws
}

/// Largest-remainder rounding of `total` items to the given proportions.
fn largest_remainder(total: usize, proportions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Split examples into K shards of exactly `samples_per_device` each.
///
/// Per class the full sample pool is dealt to devices by Dirichlet(α·1_K)
/// proportions with largest-remainder rounding. Devices holding more than
/// their quota release a random surplus, devices holding less draw from the
/// pooled surplus, so totals come out exact whenever enough samples exist.
pub fn dirichlet_partition<R: Rng>(
    examples: &[Example],
    cfg: &PartitionConfig,
    rng: &mut R,
) -> Result<Vec<Vec<Example>>> {
    if cfg.alpha <= 0.0 {
        return Err(Error::Config(format!("alpha must be > 0, got {}", cfg.alpha)));
    }
    if cfg.devices == 0 || cfg.samples_per_device == 0 {
        return Err(Error::Config("devices and samples_per_device must be positive".into()));
    }
    let demand = cfg.devices * cfg.samples_per_device;
    if examples.len() < demand {
        return Err(Error::Config(format!(
            "insufficient samples: need {demand}, have {}",
            examples.len()
        )));
    }
    for e in examples {
        e.validate()?;
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, e) in examples.iter().enumerate() {
        by_class[usize::from(e.label)].push(i);
    }

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); cfg.devices];
    for class_pool in by_class.iter_mut() {
        if class_pool.is_empty() {
            continue;
        }
        class_pool.shuffle(rng);
        let props = dirichlet_proportions(cfg.alpha, cfg.devices, rng);
        let counts = largest_remainder(class_pool.len(), &props);
        let mut cursor = 0;
        for (device, &n) in counts.iter().enumerate() {
            pools[device].extend_from_slice(&class_pool[cursor..cursor + n]);
            cursor += n;
        }
    }

    // Trim over-full devices into a surplus pool, preserving each device's
    // class mix via largest-remainder rounding; then top up short ones.
    let mut surplus: Vec<usize> = Vec::new();
    for pool in pools.iter_mut() {
        if pool.len() <= cfg.samples_per_device {
            continue;
        }
        let mut device_classes: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for &idx in pool.iter() {
            device_classes[usize::from(examples[idx].label)].push(idx);
        }
        let props: Vec<f64> = device_classes
            .iter()
            .map(|v| v.len() as f64 / pool.len() as f64)
            .collect();
        let keep_counts = largest_remainder(cfg.samples_per_device, &props);
        let mut kept = Vec::with_capacity(cfg.samples_per_device);
        for (ids, &keep) in device_classes.iter_mut().zip(&keep_counts) {
            ids.shuffle(rng);
            kept.extend_from_slice(&ids[..keep]);
            surplus.extend_from_slice(&ids[keep..]);
        }
        *pool = kept;
    }
    surplus.shuffle(rng);
    for pool in pools.iter_mut() {
        while pool.len() < cfg.samples_per_device {
            match surplus.pop() {
                Some(idx) => pool.push(idx),
                None => {
                    return Err(Error::Config(
                        "insufficient samples to fill every device".into(),
                    ))
                }
            }
        }
    }

    Ok(pools
        .into_iter()
        .map(|pool| pool.into_iter().map(|i| examples[i].clone()).collect())
        .collect())
}

/// Four Gaussian blobs in [0,1]^16: class c is centered high on features
/// 4c..4c+3 and low elsewhere (corner-to-corner distance 0.6·√8 ≈ 1.70),
/// σ = 0.1, clipped into range.
pub fn synthetic_blobs<R: Rng>(n_per_class: usize, rng: &mut R) -> Vec<Example> {
    const LOW: f64 = 0.2;
    const HIGH: f64 = 0.8;
    const SIGMA: f64 = 0.1;
    let normal = rand_distr::Normal::new(0.0, SIGMA).expect("valid sigma");
    let mut out = Vec::with_capacity(NUM_CLASSES * n_per_class);
    for _ in 0..n_per_class {
        for class in 0..NUM_CLASSES {
            let features = (0..FEATURES)
                .map(|j| {
                    let mean = if j / 4 == class { HIGH } else { LOW };
                    (mean + normal.sample(rng)).clamp(0.0, 1.0)
                })
                .collect();
            out.push(Example {
                features,
                label: class as u8,
            });
        }
    }
    out
}
