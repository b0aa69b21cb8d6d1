//! Assignment of boundary faces to material regions `S_1..S_M`.

use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("material count must be at least 2, got {0}")]
    TooFewMaterials(usize),
    #[error("face {face} has label {label}, expected 1..={materials}")]
    LabelOutOfRange { face: usize, label: usize, materials: usize },
}

/// One label in `1..=M` per boundary face.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryPartition {
    labels: Vec<usize>,
    materials: usize,
}

impl BoundaryPartition {
    pub fn new(labels: Vec<usize>, materials: usize) -> Result<Self, PartitionError> {
        if materials < 2 {
            return Err(PartitionError::TooFewMaterials(materials));
        }
        if let Some((face, &label)) = labels.iter().enumerate().find(|(_, &l)| l == 0 || l > materials) {
            return Err(PartitionError::LabelOutOfRange { face, label, materials });
        }
        Ok(BoundaryPartition { labels, materials })
    }

    pub fn uniform(faces: usize, materials: usize, label: usize) -> Result<Self, PartitionError> {
        Self::new(vec![label; faces], materials)
    }

    pub fn materials(&self) -> usize {
        self.materials
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, face: usize) -> usize {
        self.labels[face]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn set_label(&mut self, face: usize, label: usize) -> Result<(), PartitionError> {
        if label == 0 || label > self.materials {
            return Err(PartitionError::LabelOutOfRange { face, label, materials: self.materials });
        }
        self.labels[face] = label;
        Ok(())
    }

    /// Faces carrying `label`, in index order.
    pub fn region_faces(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&f| self.labels[f] == label).collect()
    }

    /// Face count per region; entry `i` is region `i + 1`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.materials];
        for &l in &self.labels {
            h[l - 1] += 1;
        }
        h
    }

    /// Surface area per region; entry `i` is region `i + 1`.
    pub fn region_areas(&self, mesh: &Mesh) -> Vec<f64> {
        let mut a = vec![0.0; self.materials];
        for (f, &l) in self.labels.iter().enumerate() {
            a[l - 1] += mesh.face(f).area;
        }
        a
    }

    /// Total area of faces whose labels differ between `self` and `other`.
    pub fn mismatch_area(&self, other: &BoundaryPartition, mesh: &Mesh) -> f64 {
        self.labels
            .iter()
            .zip(&other.labels)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(f, _)| mesh.face(f).area)
            .sum()
    }
}
