//! Datasets, IDX ingestion, checkpointing, and the synthetic image fixture.

pub mod checkpoint;
pub mod idx;
pub mod synthetic;

pub use checkpoint::{Checkpoint, NamedTensor};

use std::path::Path;

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 10;

/// Whether the images came from an external source or from a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        }
    }
}

/// Labeled images stored as a flat row-major pixel buffer in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<f64>,
    labels: Vec<u8>,
    width: usize,
    height: usize,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<f64>,
        labels: Vec<u8>,
        width: usize,
        height: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let dim = width * height;
        if images.len() != labels.len() * dim {
            return Err(Error::Data(format!(
                "{} pixels cannot hold {} images of {} pixels each",
                images.len(),
                labels.len(),
                dim
            )));
        }
        if let Some((i, &p)) = images
            .iter()
            .enumerate()
            .find(|(_, &p)| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::Data(format!(
                "pixel {i} is {p}, outside [0, 1]"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::InvalidLabel {
                label: bad,
                n_classes: N_CLASSES,
            });
        }
        Ok(LabeledDataset {
            images,
            labels,
            width,
            height,
            provenance,
        })
    }

    /// Load and cross-validate an IDX image/label file pair.
    pub fn from_idx_pair(
        images_path: &Path,
        labels_path: &Path,
        provenance: Provenance,
    ) -> Result<Self> {
        let imgs = idx::read_idx_images(images_path)?;
        let labels = idx::read_idx_labels(labels_path)?;
        if imgs.count != labels.len() {
            return Err(Error::Data(format!(
                "{} images in {} but {} labels in {}",
                imgs.count,
                images_path.display(),
                labels.len(),
                labels_path.display()
            )));
        }
        LabeledDataset::new(imgs.pixels, labels, imgs.width, imgs.height, provenance)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn image_dim(&self) -> usize {
        self.width * self.height
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.image_dim();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.images
    }

    /// New dataset holding the given records, in order. Indices may repeat.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let d = self.image_dim();
        let mut images = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!(
                    "index {i} out of range for a dataset of {}",
                    self.len()
                )));
            }
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(images, labels, self.width, self.height, self.provenance)
    }
}

// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        let images = vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125];
        LabeledDataset::new(images, vec![3, 7], 3, 1, Provenance::Real).unwrap()
    }

    #[test]
    fn accessors_slice_rows() {
        let d = tiny();
        assert_eq!(d.len(), 2);
        assert_eq!(d.image_dim(), 3);
        assert_eq!(d.image(0), &[0.0, 0.5, 1.0]);
        assert_eq!(d.image(1), &[0.25, 0.75, 0.125]);
        assert_eq!(d.label(1), 7);
        assert_eq!(d.provenance(), Provenance::Real);
    }

    #[test]
    fn validation_rejects_bad_input() {
        assert!(LabeledDataset::new(vec![0.0; 5], vec![1, 2], 3, 1, Provenance::Real).is_err());
        assert!(LabeledDataset::new(vec![1.5, 0.0, 0.0], vec![1], 3, 1, Provenance::Real).is_err());
        assert!(LabeledDataset::new(vec![-0.1, 0.0, 0.0], vec![1], 3, 1, Provenance::Real).is_err());
        assert!(matches!(
            LabeledDataset::new(vec![0.0; 3], vec![10], 3, 1, Provenance::Real),
            Err(Error::InvalidLabel { label: 10, .. })
        ));
        assert!(LabeledDataset::new(vec![], vec![], 0, 1, Provenance::Real).is_err());
    }

    #[test]
    fn subset_reorders_and_repeats() {
        let d = tiny();
        let s = d.subset(&[1, 1, 0]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.image(0), d.image(1));
        assert_eq!(s.image(2), d.image(0));
        assert_eq!(s.labels(), &[7, 7, 3]);
        assert!(d.subset(&[2]).is_err());
    }

    #[test]
    fn empty_dataset_is_allowed() {
        let d = LabeledDataset::new(vec![], vec![], 28, 28, Provenance::Synthetic).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.image_dim(), 784);
    }
}
