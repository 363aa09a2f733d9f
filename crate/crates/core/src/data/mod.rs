//! Labelled image splits, the procedural synthetic task, and the binary
//! dataset file format.

mod format;
mod synthetic;

pub use format::{decode, encode, load_raw, sha256_hex, write_raw, MAGIC};
pub use synthetic::{class_template, gen_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[N, 1, H, W]` with values in `[0, 1]` and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::invalid(
                "Split",
                format!(
                    "{} labels for images of shape {:?}",
                    labels.len(),
                    images.shape()
                ),
            ));
        }
        Ok(Split { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Contiguous rows `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> Split {
        Split {
            images: self.images.slice_rows(start, len),
            labels: self.labels[start..start + len].to_vec(),
        }
    }

    /// Shuffles once, then returns `(first, second)` with `round(len * fraction)` rows in `first`.
    pub fn split_shuffled<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> (Split, Split) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let k = ((self.len() as f64 * fraction).round() as usize).min(self.len());
        (self.select(&idx[..k]), self.select(&idx[k..]))
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &y in &self.labels {
            if y < classes {
                c[y] += 1;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub classes: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    File { sha256: String },
}

impl DatasetBundle {
    /// `(height, width)` of every image.
    pub fn image_size(&self) -> (usize, usize) {
        let s = self.train.images.shape();
        (s[2], s[3])
    }

    pub fn splits(&self) -> [(&'static str, &Split); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }
}
