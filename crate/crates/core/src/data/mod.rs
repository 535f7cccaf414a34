//! Per-view feature grids, the dataset container, and dataset sources.

mod format;
mod ingest;
mod synthetic;

pub use format::{read_dataset, write_dataset, MAGIC, VERSION};
pub use ingest::{ingest_external, parse_manifest, ManifestEntry};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticSplit};

use crate::error::{Error, Result};
use crate::viewspace::{GridIndex, ViewSpace};

/// One shape's `rows x cols` grid of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub id: String,
    pub label: usize,
    rows: usize,
    cols: usize,
    dim: usize,
    features: Vec<f32>,
    confidences: Option<Vec<f32>>,
}

impl FeatureGrid {
    /// `features` is row-major over cells, `dim` values per cell.
    pub fn new(
        id: impl Into<String>,
        label: usize,
        space: ViewSpace,
        dim: usize,
        features: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        let expected = space.cells() * dim;
        if features.len() != expected {
            return Err(Error::Dimension {
                op: "feature grid",
                left: vec![space.rows, space.cols, dim],
                right: vec![features.len()],
            });
        }
        Ok(Self {
            id,
            label,
            rows: space.rows,
            cols: space.cols,
            dim,
            features,
            confidences: None,
        })
    }

    pub fn space(&self) -> ViewSpace {
        ViewSpace {
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Feature vector rendered from cell `g`.
    pub fn view(&self, g: GridIndex) -> &[f32] {
        let off = self.space().offset(g) * self.dim;
        &self.features[off..off + self.dim]
    }

    pub fn view_at(&self, offset: usize) -> &[f32] {
        &self.features[offset * self.dim..(offset + 1) * self.dim]
    }

    pub fn confidences(&self) -> Option<&[f32]> {
        self.confidences.as_deref()
    }

    pub fn confidence(&self, g: GridIndex) -> Option<f32> {
        let off = self.space().offset(g);
        self.confidences.as_ref().map(|c| c[off])
    }

    pub fn set_confidences(&mut self, conf: Vec<f32>) -> Result<()> {
        if conf.len() != self.rows * self.cols {
            return Err(Error::Dimension {
                op: "confidence grid",
                left: vec![self.rows, self.cols],
                right: vec![conf.len()],
            });
        }
        self.confidences = Some(conf);
        Ok(())
    }

    pub fn clear_confidences(&mut self) {
        self.confidences = None;
    }
}

/// Collection of feature grids sharing geometry, width and class list.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub space: ViewSpace,
    pub dim: usize,
    pub shapes: Vec<FeatureGrid>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, space: ViewSpace, dim: usize) -> Self {
        Self {
            class_names,
            space,
            dim,
            shapes: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn push(&mut self, shape: FeatureGrid) -> Result<()> {
        if shape.space() != self.space || shape.dim != self.dim {
            return Err(Error::Dimension {
                op: "dataset push",
                left: vec![self.space.rows, self.space.cols, self.dim],
                right: vec![shape.rows, shape.cols, shape.dim],
            });
        }
        if shape.label >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: shape.label,
                classes: self.num_classes(),
            });
        }
        self.shapes.push(shape);
        Ok(())
    }

    /// True when every shape carries a confidence grid (and there is at
    /// least one shape).
    pub fn has_confidences(&self) -> bool {
        !self.shapes.is_empty() && self.shapes.iter().all(|s| s.confidences.is_some())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.shapes {
            counts[s.label] += 1;
        }
        counts
    }

    /// FNV-1a over the serialized payload.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(&format::encode_payload(self));
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Self(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}
