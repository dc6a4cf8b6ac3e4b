//! Multi-view dataset model, file ingestion, and synthetic view generators.

mod csv;
mod mvds;
mod synth;

pub use csv::load_csv_dir;
pub use mvds::{load_mvds, save_mvds, write_embeddings, RangeCode};
pub use synth::{
    gaussian_multiview_with_latents, make_gaussian_multiview, make_noisy_view, make_paired_views,
    make_rotated_view, rotate_image,
};

use crate::error::{DemvcError, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Spatial layout of an image view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ViewShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// N samples described by V per-view feature matrices. Row i of every view
/// refers to the same underlying object. Features live in [0, 1]; views
/// loaded from raw-range files (embeddings dumps) are exempt.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    views: Vec<Tensor>,
    labels: Option<Vec<usize>>,
    shapes: Vec<Option<ViewShape>>,
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<Tensor>,
        labels: Option<Vec<usize>>,
        shapes: Vec<Option<ViewShape>>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(DemvcError::Usage(
                "a dataset needs at least one view".into(),
            ));
        }
        if shapes.len() != views.len() {
            return Err(DemvcError::Usage(
                "one shape hint slot is required per view".into(),
            ));
        }
        let n = views[0].rows();
        if n == 0 {
            return Err(DemvcError::Usage(
                "a dataset needs at least one sample".into(),
            ));
        }
        for (v, view) in views.iter().enumerate() {
            if view.shape().len() != 2 {
                return Err(DemvcError::Ingestion(format!("view {v} is not a matrix")));
            }
            if view.rows() != n {
                return Err(DemvcError::Ingestion(format!(
                    "view {v} has {} rows, view 0 has {n}",
                    view.rows()
                )));
            }
            if let Some(shape) = &shapes[v] {
                if shape.pixels() != view.cols() {
                    return Err(DemvcError::Ingestion(format!(
                        "view {v}: shape hint {shape:?} does not cover {} features",
                        view.cols()
                    )));
                }
            }
            for i in 0..n {
                for &x in view.row(i) {
                    if !x.is_finite() {
                        return Err(DemvcError::Ingestion(format!(
                            "view {v} row {i} holds a non-finite value"
                        )));
                    }
                    if !(0.0..=1.0).contains(&x) {
                        return Err(DemvcError::Ingestion(format!(
                            "view {v} row {i} holds {x}, outside [0, 1]"
                        )));
                    }
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(DemvcError::Ingestion(format!(
                    "label vector has {} entries for {n} samples",
                    l.len()
                )));
            }
        }
        Ok(MultiViewDataset {
            views,
            labels,
            shapes,
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].rows()
    }

    pub fn view(&self, v: usize) -> &Tensor {
        &self.views[v]
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn shape_hint(&self, v: usize) -> Option<&ViewShape> {
        self.shapes[v].as_ref()
    }

    pub fn shape_hints(&self) -> &[Option<ViewShape>] {
        &self.shapes
    }

    #[cfg(test)]
    pub(crate) fn view_mut(&mut self, v: usize) -> &mut Tensor {
        &mut self.views[v]
    }

    /// Loads a dataset from an MVDS file or from a directory of per-view CSV
    /// matrices with an optional labels.csv.
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            load_csv_dir(path)
        } else {
            load_mvds(path)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_mvds(self, path)
    }
}

/// Rounds every value through f32, the storage precision of MVDS files.
/// Generators apply this so save -> load round-trips are bit-identical.
pub(crate) fn quantize_to_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_row_counts() {
        let a = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let b = Tensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        let err = MultiViewDataset::new(vec![a, b], None, vec![None, None]).unwrap_err();
        assert!(err.to_string().contains("view 1"));
    }

    #[test]
    fn rejects_out_of_range_features() {
        let a = Tensor::matrix(1, 2, vec![0.5, 1.5]).unwrap();
        let err = MultiViewDataset::new(vec![a], None, vec![None]).unwrap_err();
        assert!(err.to_string().contains("1.5"));
    }

    #[test]
    fn rejects_wrong_label_length() {
        let a = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(MultiViewDataset::new(vec![a], Some(vec![0]), vec![None]).is_err());
    }

    #[test]
    fn shape_hint_must_cover_features() {
        let a = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        let bad = ViewShape {
            height: 3,
            width: 1,
            channels: 1,
        };
        assert!(MultiViewDataset::new(vec![a], None, vec![Some(bad)]).is_err());
    }
}
