//! CSV directory ingestion: one header-free matrix per view plus an optional
//! labels.csv, sorted by filename. Views whose values exceed 1 are taken as
//! raw 0-255 pixels and rescaled.

use super::{quantize_to_f32, MultiViewDataset};
use crate::error::{DemvcError, Result};
use crate::tensor::Tensor;
use std::path::Path;

fn parse_matrix(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                DemvcError::Ingestion(format!(
                    "{} line {}: cannot parse '{}' as a number",
                    path.display(),
                    lineno + 1,
                    field.trim()
                ))
            })?;
            if !v.is_finite() {
                return Err(DemvcError::Ingestion(format!(
                    "{} line {}: non-finite value",
                    path.display(),
                    lineno + 1
                )));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DemvcError::Ingestion(format!(
                    "{} line {}: {} fields, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DemvcError::Ingestion(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Tensor::matrix(n, d, rows.into_iter().flatten().collect())
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line.parse().map_err(|_| {
            DemvcError::Ingestion(format!(
                "{} line {}: cannot parse '{}' as an integer label",
                path.display(),
                lineno + 1,
                line
            ))
        })?;
        if v < 0 {
            return Err(DemvcError::Ingestion(format!(
                "{} line {}: negative label",
                path.display(),
                lineno + 1
            )));
        }
        labels.push(v as usize);
    }
    Ok(labels)
}

/// Loads every *.csv in `dir` (except labels.csv) as one view, in filename
/// order. Values outside [0, 1] but within [0, 255] are scaled by 1/255.
pub fn load_csv_dir(dir: &Path) -> Result<MultiViewDataset> {
    let mut view_files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name().is_some_and(|n| n != "labels.csv")
        })
        .collect();
    view_files.sort();
    if view_files.is_empty() {
        return Err(DemvcError::Ingestion(format!(
            "{}: no view CSV files found",
            dir.display()
        )));
    }
    let mut views = Vec::with_capacity(view_files.len());
    for path in &view_files {
        let mut t = parse_matrix(path)?;
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
        if min < 0.0 || max > 255.0 {
            return Err(DemvcError::Ingestion(format!(
                "{}: values span [{min}, {max}], expected [0, 1] or raw [0, 255]",
                path.display()
            )));
        }
        if max > 1.0 {
            for v in t.data_mut() {
                *v /= 255.0;
            }
        }
        quantize_to_f32(&mut t);
        views.push(t);
    }
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(parse_labels(&labels_path)?)
    } else {
        None
    };
    let shapes = vec![None; views.len()];
    MultiViewDataset::new(views, labels, shapes)
}
