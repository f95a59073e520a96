//! FER2013-format data handling: CSV parsing, the label/pixel file split,
//! PGM export, positional train/validation split, class histograms and
//! deterministic mini-batch iteration.

mod batches;
mod fer;
mod files;
mod pgm;
pub mod synth;

pub use batches::{batches, Batch, Batches};
pub use fer::{parse_fer_csv, read_fer_csv, write_fer_csv};
pub use files::{recombine_label_pixel_files, split_label_pixel_files};
pub use pgm::{export_images, read_pgm, write_pgm, Pgm};

use std::path::PathBuf;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 48;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 7;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "angry",
    "disgusted",
    "fearful",
    "happy",
    "sad",
    "surprised",
    "neutral",
];

/// One labeled 48x48 grayscale face, pixels scaled from 0..=255 into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub label: u8,
    pub pixels: Vec<f32>,
}

impl Example {
    pub fn new(label: u8, pixels: Vec<f32>) -> Result<Self> {
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::Data(format!("label {label} outside 0..=6")));
        }
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::Data(format!(
                "expected {IMAGE_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { label, pixels })
    }

    /// Builds an example from raw 0..=255 intensities.
    pub fn from_bytes(label: u8, bytes: &[u8]) -> Result<Self> {
        Self::new(label, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    /// Pixels rescaled to 0..=255 and rounded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Where a dataset came from: source file and the data-row range it covers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: Option<PathBuf>,
    pub first_row: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Self {
            examples,
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `n` examples (all of them when `n >= len`).
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples[..n.min(self.len())].to_vec(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Number of leading examples assigned to the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_count: 24_000 }
    }
}

/// Positional split: the first `train_count` examples train, the rest
/// validate. Order is preserved and nothing is shuffled.
pub fn train_val_split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let total = dataset.len();
    if spec.train_count == 0 || spec.train_count >= total {
        return Err(Error::config(format!(
            "train_count must satisfy 0 < train_count < {total}, got {}",
            spec.train_count
        )));
    }
    let (train, val) = dataset.examples.split_at(spec.train_count);
    let source = dataset.provenance.source.clone();
    Ok((
        Dataset {
            examples: train.to_vec(),
            provenance: Provenance {
                source: source.clone(),
                first_row: dataset.provenance.first_row,
            },
        },
        Dataset {
            examples: val.to_vec(),
            provenance: Provenance {
                source,
                first_row: dataset.provenance.first_row + spec.train_count,
            },
        },
    ))
}

pub fn class_histogram(dataset: &Dataset) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for ex in &dataset.examples {
        counts[usize::from(ex.label)] += 1;
    }
    counts
}
