//! MVDS container: magic "MVDS", u16 version, u16 view count, u64 sample
//! count, per-view headers (u32 dim, shape hint, range code), per-view
//! row-major f32 blocks, then optional i32 labels. Little-endian throughout.

use super::{MultiViewDataset, ViewShape};
use crate::error::{DemvcError, Result};
use crate::tensor::Tensor;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MVDS";
const VERSION: u16 = 1;

/// Declared value range of a stored view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeCode {
    /// Values already in [0, 1].
    Unit,
    /// Raw 0-255 pixel values; scaled by 1/255 on load.
    Byte255,
    /// Unconstrained values (embedding dumps). No scaling, no range check.
    Raw,
}

impl RangeCode {
    fn to_byte(self) -> u8 {
        match self {
            RangeCode::Unit => 0,
            RangeCode::Byte255 => 1,
            RangeCode::Raw => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(RangeCode::Unit),
            1 => Ok(RangeCode::Byte255),
            2 => Ok(RangeCode::Raw),
            other => Err(DemvcError::Ingestion(format!("unknown range code {other}"))),
        }
    }
}

struct ViewHeader {
    dim: usize,
    shape: Option<ViewShape>,
    range: RangeCode,
}

fn write_header<W: Write>(w: &mut W, n_views: usize, n_samples: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(n_views as u16).to_le_bytes())?;
    w.write_all(&(n_samples as u64).to_le_bytes())?;
    Ok(())
}

fn write_view_header<W: Write>(w: &mut W, h: &ViewHeader) -> Result<()> {
    w.write_all(&(h.dim as u32).to_le_bytes())?;
    match &h.shape {
        Some(s) => {
            w.write_all(&[1u8])?;
            for v in [s.height, s.width, s.channels] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.write_all(&[h.range.to_byte()])?;
    Ok(())
}

/// Serializes the dataset. Views are written with the unit range code since
/// dataset features are already scaled to [0, 1].
pub fn save_mvds(ds: &MultiViewDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, ds.n_views(), ds.n_samples())?;
    for v in 0..ds.n_views() {
        write_view_header(
            &mut w,
            &ViewHeader {
                dim: ds.view(v).cols(),
                shape: ds.shape_hint(v).copied(),
                range: RangeCode::Unit,
            },
        )?;
    }
    for v in 0..ds.n_views() {
        for x in ds.view(v).data() {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
    }
    match ds.labels() {
        Some(labels) => {
            w.write_all(&[1u8])?;
            for &l in labels {
                w.write_all(&(l as i32).to_le_bytes())?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Writes per-view embedding matrices in the same container with the raw
/// range code (values are unconstrained).
pub fn write_embeddings(embeddings: &[Tensor], path: &Path) -> Result<()> {
    if embeddings.is_empty() {
        return Err(DemvcError::Usage("no embeddings to write".into()));
    }
    let n = embeddings[0].rows();
    for (i, e) in embeddings.iter().enumerate() {
        if e.rows() != n {
            return Err(DemvcError::dimension(
                format!("embeddings view {i}"),
                &[n],
                &[e.rows()],
            ));
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, embeddings.len(), n)?;
    for e in embeddings {
        write_view_header(
            &mut w,
            &ViewHeader {
                dim: e.cols(),
                shape: None,
                range: RangeCode::Raw,
            },
        )?;
    }
    for e in embeddings {
        for x in e.data() {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
    }
    w.write_all(&[0u8])?;
    w.flush()?;
    Ok(())
}

fn read_exact_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_exact_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_exact_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Parses and validates an MVDS file.
pub fn load_mvds(path: &Path) -> Result<MultiViewDataset> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DemvcError::Ingestion(format!(
            "{}: bad magic {magic:?}, not an MVDS file",
            path.display()
        )));
    }
    let version = read_exact_u16(&mut r)?;
    if version != VERSION {
        return Err(DemvcError::Ingestion(format!(
            "{}: unsupported MVDS version {version}",
            path.display()
        )));
    }
    let n_views = read_exact_u16(&mut r)? as usize;
    let n_samples = read_exact_u64(&mut r)? as usize;
    if n_views == 0 || n_samples == 0 {
        return Err(DemvcError::Ingestion(format!(
            "{}: empty dataset ({n_views} views, {n_samples} samples)",
            path.display()
        )));
    }
    let mut headers = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let dim = read_exact_u32(&mut r)? as usize;
        let shape = if read_exact_u8(&mut r)? == 1 {
            Some(ViewShape {
                height: read_exact_u32(&mut r)? as usize,
                width: read_exact_u32(&mut r)? as usize,
                channels: read_exact_u32(&mut r)? as usize,
            })
        } else {
            None
        };
        let range = RangeCode::from_byte(read_exact_u8(&mut r)?)?;
        headers.push(ViewHeader { dim, shape, range });
    }

    let mut views = Vec::with_capacity(n_views);
    let mut buf = [0u8; 4];
    for (v, h) in headers.iter().enumerate() {
        let mut data = Vec::with_capacity(n_samples * h.dim);
        for i in 0..n_samples {
            for _ in 0..h.dim {
                r.read_exact(&mut buf)?;
                let raw = f32::from_le_bytes(buf) as f64;
                if !raw.is_finite() {
                    return Err(DemvcError::Ingestion(format!(
                        "view {v} row {i}: non-finite value"
                    )));
                }
                let value = match h.range {
                    RangeCode::Unit => raw,
                    RangeCode::Byte255 => (raw / 255.0) as f32 as f64,
                    RangeCode::Raw => raw,
                };
                if h.range != RangeCode::Raw && !(0.0..=1.0).contains(&value) {
                    return Err(DemvcError::Ingestion(format!(
                        "view {v} row {i}: value {value} outside [0, 1] after scaling"
                    )));
                }
                data.push(value);
            }
        }
        views.push(Tensor::matrix(n_samples, h.dim, data)?);
    }

    let labels = if read_exact_u8(&mut r)? == 1 {
        let mut labels = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            r.read_exact(&mut buf)?;
            let l = i32::from_le_bytes(buf);
            if l < 0 {
                return Err(DemvcError::Ingestion(format!(
                    "label {i} is negative ({l})"
                )));
            }
            labels.push(l as usize);
        }
        Some(labels)
    } else {
        None
    };

    let shapes: Vec<Option<ViewShape>> = headers.iter().map(|h| h.shape).collect();
    let raw_views: Vec<bool> = headers.iter().map(|h| h.range == RangeCode::Raw).collect();
    if raw_views.iter().any(|&b| b) {
        // embedding dumps bypass the [0, 1] dataset invariant
        build_unchecked(views, labels, shapes)
    } else {
        MultiViewDataset::new(views, labels, shapes)
    }
}

fn build_unchecked(
    views: Vec<Tensor>,
    labels: Option<Vec<usize>>,
    shapes: Vec<Option<ViewShape>>,
) -> Result<MultiViewDataset> {
    let n = views[0].rows();
    for (v, view) in views.iter().enumerate() {
        if view.rows() != n {
            return Err(DemvcError::Ingestion(format!(
                "view {v} has {} rows, view 0 has {n}",
                view.rows()
            )));
        }
    }
    Ok(MultiViewDataset {
        views,
        labels,
        shapes,
    })
}
