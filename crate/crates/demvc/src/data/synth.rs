//! Synthetic view constructions: same-label paired views, a uniform-noise
//! view, a random-rotation view, and the well-separated Gaussian multi-view
//! benchmark generator. All generators are pure functions of their inputs
//! and seed; per-row randomness is keyed by (seed, row) so row order never
//! leaks between rows.

use super::{quantize_to_f32, MultiViewDataset, ViewShape};
use crate::error::{DemvcError, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use std::f64::consts::PI;

/// View 1 is the base; each extra view's row i is a uniformly chosen sample
/// sharing row i's label (self-pairing allowed). Labels carry over.
pub fn make_paired_views(
    base: &MultiViewDataset,
    n_views: usize,
    seed: u64,
) -> Result<MultiViewDataset> {
    if base.n_views() != 1 {
        return Err(DemvcError::Usage(format!(
            "pairing starts from a single-view dataset, got {} views",
            base.n_views()
        )));
    }
    let labels = base
        .labels()
        .ok_or_else(|| DemvcError::Usage("pairing requires ground-truth labels".into()))?;
    if n_views == 0 {
        return Err(DemvcError::Usage("n_views must be at least 1".into()));
    }
    let features = base.view(0);
    let n = base.n_samples();
    let d = features.cols();

    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }

    let mut views = vec![features.clone()];
    for v in 1..n_views {
        let mut data = Vec::with_capacity(n * d);
        for (i, &l) in labels.iter().enumerate() {
            let pool = &by_label[&l];
            let mut row_rng = rng::rng_for(
                seed,
                rng::streams::DATAGEN ^ ((v as u64) << 40) ^ (i as u64),
            );
            let pick = pool[row_rng.gen_range(0..pool.len())];
            data.extend_from_slice(features.row(pick));
        }
        views.push(Tensor::matrix(n, d, data)?);
    }
    let shapes = vec![base.shape_hint(0).copied(); n_views];
    MultiViewDataset::new(views, Some(labels.to_vec()), shapes)
}

/// Masks every pixel with independent uniform noise drawn in 0-255 space,
/// truncates to [0, 255], and rescales to [0, 1].
pub fn make_noisy_view(images: &Tensor, shape: Option<&ViewShape>, seed: u64) -> Result<Tensor> {
    if shape.is_none() {
        return Err(DemvcError::Usage(
            "noise masking applies to image views only (no shape hint present)".into(),
        ));
    }
    let (n, d) = (images.rows(), images.cols());
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let mut row_rng = rng::rng_for(seed, rng::streams::DATAGEN ^ 0x4e6f_0000 ^ (i as u64));
        let src = images.row(i);
        let dst = out.row_mut(i);
        for (o, &x) in dst.iter_mut().zip(src) {
            let noised = x * 255.0 + row_rng.gen_range(0.0..255.0);
            *o = noised.clamp(0.0, 255.0) / 255.0;
        }
    }
    quantize_to_f32(&mut out);
    Ok(out)
}

/// Rotates one (height x width) channel plane by `angle` radians about its
/// center with inverse-mapping bilinear resampling; out-of-frame reads are 0.
pub fn rotate_image(src: &[f64], height: usize, width: usize, angle: f64) -> Vec<f64> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut dst = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            // inverse rotation of the destination coordinate
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let sample = |yy: f64, xx: f64| -> f64 {
                if yy < 0.0 || xx < 0.0 || yy >= height as f64 || xx >= width as f64 {
                    0.0
                } else {
                    src[yy as usize * width + xx as usize]
                }
            };
            let v00 = sample(y0, x0);
            let v01 = sample(y0, x0 + 1.0);
            let v10 = sample(y0 + 1.0, x0);
            let v11 = sample(y0 + 1.0, x0 + 1.0);
            dst[y * width + x] = v00 * (1.0 - fy) * (1.0 - fx)
                + v01 * (1.0 - fy) * fx
                + v10 * fy * (1.0 - fx)
                + v11 * fy * fx;
        }
    }
    dst
}

/// Rotates every image by an independent Uniform(-pi/4, pi/4) angle.
/// Requires square images.
pub fn make_rotated_view(images: &Tensor, shape: Option<&ViewShape>, seed: u64) -> Result<Tensor> {
    let shape = shape.ok_or_else(|| {
        DemvcError::Usage("rotation applies to image views only (no shape hint present)".into())
    })?;
    if shape.height != shape.width {
        return Err(DemvcError::Usage(format!(
            "rotation requires square images, got {}x{}",
            shape.height, shape.width
        )));
    }
    let (n, d) = (images.rows(), images.cols());
    let plane = shape.height * shape.width;
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let mut row_rng = rng::rng_for(seed, rng::streams::DATAGEN ^ 0x526f_0000 ^ (i as u64));
        let angle = row_rng.gen_range(-PI / 4.0..PI / 4.0);
        let src = images.row(i);
        let dst = out.row_mut(i);
        for c in 0..shape.channels {
            let rotated = rotate_image(
                &src[c * plane..(c + 1) * plane],
                shape.height,
                shape.width,
                angle,
            );
            dst[c * plane..(c + 1) * plane].copy_from_slice(&rotated);
        }
    }
    quantize_to_f32(&mut out);
    Ok(out)
}

fn box_muller<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// K well-separated unit-variance Gaussian clusters in latent space (center
/// spacing >= 10 sigma by construction), mapped into each view by an
/// independent random affine map plus tanh, then min-max rescaled to [0, 1].
/// Returns the dataset together with the latent points for oracle checks.
pub fn gaussian_multiview_with_latents(
    n_per_class: usize,
    k: usize,
    d_latent: usize,
    view_dims: &[usize],
    seed: u64,
) -> Result<(MultiViewDataset, Tensor)> {
    if n_per_class == 0 || k == 0 || d_latent == 0 || view_dims.is_empty() {
        return Err(DemvcError::Usage(
            "gaussian benchmark needs n_per_class, K, d_latent and at least one view".into(),
        ));
    }
    if view_dims.contains(&0) {
        return Err(DemvcError::Usage("view dimensions must be positive".into()));
    }
    let mut grng = rng::rng_for(seed, rng::streams::DATAGEN ^ 0x6761_0000);

    // centers on a jittered axis lattice: spacing 15 on axis (j mod d), ring
    // multiplier grows every d clusters; pairwise distance stays >= 10 sigma
    let mut centers = vec![vec![0.0f64; d_latent]; k];
    for (j, c) in centers.iter_mut().enumerate() {
        let axis = j % d_latent;
        let ring = (j / d_latent + 1) as f64;
        c[axis] = 15.0 * ring;
        for v in c.iter_mut() {
            *v += grng.gen_range(-0.5..0.5);
        }
    }

    let n = n_per_class * k;
    let mut latents = Tensor::zeros(&[n, d_latent]);
    let mut labels = Vec::with_capacity(n);
    for class in 0..k {
        for s in 0..n_per_class {
            let i = class * n_per_class + s;
            let row = latents.row_mut(i);
            for (c, v) in row.iter_mut().enumerate() {
                *v = centers[class][c] + box_muller(&mut grng);
            }
            labels.push(class);
        }
    }

    let mut views = Vec::with_capacity(view_dims.len());
    for (v, &dim) in view_dims.iter().enumerate() {
        let mut vrng = rng::rng_for(seed, rng::streams::DATAGEN ^ 0x7669_0000 ^ (v as u64));
        let scale = 1.0 / (d_latent as f64).sqrt();
        let a: Vec<f64> = (0..dim * d_latent)
            .map(|_| box_muller(&mut vrng) * scale)
            .collect();
        let b: Vec<f64> = (0..dim).map(|_| box_muller(&mut vrng) * 0.1).collect();
        let mut features = Tensor::zeros(&[n, dim]);
        for i in 0..n {
            let z = latents.row(i);
            let row = features.row_mut(i);
            for (f, fv) in row.iter_mut().enumerate() {
                let mut acc = b[f];
                for (c, zv) in z.iter().enumerate() {
                    acc += a[f * d_latent + c] * zv;
                }
                *fv = (0.5 * acc).tanh();
            }
        }
        // per-feature min-max to [0, 1]
        for f in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let v = features.row(i)[f];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let span = hi - lo;
            for i in 0..n {
                let v = &mut features.row_mut(i)[f];
                *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
            }
        }
        quantize_to_f32(&mut features);
        views.push(features);
    }

    let shapes = vec![None; view_dims.len()];
    let ds = MultiViewDataset::new(views, Some(labels), shapes)?;
    Ok((ds, latents))
}

/// [`gaussian_multiview_with_latents`] without the latent oracle data.
pub fn make_gaussian_multiview(
    n_per_class: usize,
    k: usize,
    d_latent: usize,
    view_dims: &[usize],
    seed: u64,
) -> Result<MultiViewDataset> {
    gaussian_multiview_with_latents(n_per_class, k, d_latent, view_dims, seed).map(|(ds, _)| ds)
}
