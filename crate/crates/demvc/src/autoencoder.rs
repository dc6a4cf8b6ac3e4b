//! Per-view autoencoder: an encoder/decoder pair of layer stacks, the
//! mean-squared reconstruction loss, and the per-view pretraining loop.

use crate::error::{DemvcError, Result};
use crate::rng;
use crate::tensor::{
    Activation, AdamState, LayerCache, LayerGrads, LayerKind, LayerParams, Tensor,
};
use rand::seq::SliceRandom;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Encoder/decoder pair for one view. The encoder maps (N, input_dim) rows to
/// (N, embed_dim) embedded points; the decoder maps them back.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub view_index: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
    /// (c, h, w) the encoder's first conv layer expects, for conv stacks.
    encoder_input_shape: Option<[usize; 3]>,
    /// (c, h, w) the decoder's first deconv layer expects, for conv stacks.
    decoder_mid_shape: Option<[usize; 3]>,
}

/// Forward-pass caches for one training step.
pub struct ForwardCaches {
    pub embedding: Tensor,
    pub reconstruction: Tensor,
    enc: Vec<LayerCache>,
    dec: Vec<LayerCache>,
}

impl Autoencoder {
    /// Fully connected autoencoder: input -> hidden... -> embed with ReLU on
    /// hidden layers, linear embedded and output layers, decoder mirrored.
    pub fn new_affine<R: Rng>(
        view_index: usize,
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut encoder = Vec::with_capacity(hidden.len() + 1);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        for w in dims.windows(2) {
            encoder.push(LayerParams::affine(w[0], w[1], Activation::Relu, rng));
        }
        encoder.push(LayerParams::affine(
            *dims.last().unwrap(),
            embed_dim,
            Activation::Linear,
            rng,
        ));
        let mut decoder = Vec::with_capacity(hidden.len() + 1);
        let mut up = vec![embed_dim];
        up.extend(hidden.iter().rev());
        for w in up.windows(2) {
            decoder.push(LayerParams::affine(w[0], w[1], Activation::Relu, rng));
        }
        decoder.push(LayerParams::affine(
            *up.last().unwrap(),
            input_dim,
            Activation::Linear,
            rng,
        ));
        Autoencoder {
            view_index,
            input_dim,
            embed_dim,
            encoder,
            decoder,
            encoder_input_shape: None,
            decoder_mid_shape: None,
        }
    }

    /// Convolutional autoencoder: stride-2 valid convolutions followed by a
    /// linear embedded layer; the decoder mirrors with transposed
    /// convolutions of the same kernels and stride.
    ///
    /// Every stage must satisfy (extent - kernel) % stride == 0, otherwise the
    /// transposed mirror cannot reproduce the input extent and construction
    /// fails with a usage error.
    pub fn new_conv<R: Rng>(
        view_index: usize,
        input_chw: (usize, usize, usize),
        channels: &[usize],
        kernels: &[usize],
        stride: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels.len() != kernels.len() || channels.is_empty() {
            return Err(DemvcError::Usage(
                "conv autoencoder needs matching, non-empty channel and kernel lists".into(),
            ));
        }
        let (c0, h0, w0) = input_chw;
        let mut encoder = Vec::new();
        let (mut c, mut h, mut w) = (c0, h0, w0);
        for (i, (&oc, &k)) in channels.iter().zip(kernels).enumerate() {
            if h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0 {
                return Err(DemvcError::Usage(format!(
                    "conv stage {i}: spatial extent {h}x{w} is not invertible for kernel {k} stride {stride}; pad the input so (extent - kernel) is a multiple of stride"
                )));
            }
            encoder.push(LayerParams::conv2d(c, oc, k, stride, Activation::Relu, rng));
            c = oc;
            h = (h - k) / stride + 1;
            w = (w - k) / stride + 1;
        }
        let flat = c * h * w;
        encoder.push(LayerParams::affine(
            flat,
            embed_dim,
            Activation::Linear,
            rng,
        ));

        let mut decoder = vec![LayerParams::affine(embed_dim, flat, Activation::Relu, rng)];
        let mut dc = c;
        let up_channels: Vec<usize> = channels
            .iter()
            .rev()
            .skip(1)
            .copied()
            .chain(std::iter::once(c0))
            .collect();
        for (i, (&target_c, &k)) in up_channels.iter().zip(kernels.iter().rev()).enumerate() {
            let act = if i + 1 == kernels.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            decoder.push(LayerParams::deconv2d(dc, target_c, k, stride, act, rng));
            dc = target_c;
        }
        Ok(Autoencoder {
            view_index,
            input_dim: c0 * h0 * w0,
            embed_dim,
            encoder,
            decoder,
            encoder_input_shape: Some([c0, h0, w0]),
            decoder_mid_shape: Some([c, h, w]),
        })
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.input_dim {
            return Err(DemvcError::dimension(
                "autoencoder input",
                &[batch.rows(), self.input_dim],
                batch.shape(),
            ));
        }
        Ok(())
    }

    /// Reshapes `t` to whatever `layer` expects, if they disagree.
    fn adapt(t: Tensor, layer: &LayerParams, chw: Option<[usize; 3]>) -> Result<Tensor> {
        match layer.kind {
            LayerKind::Conv2d { .. } | LayerKind::Deconv2d { .. } if t.shape().len() == 2 => {
                let [c, h, w] = chw.ok_or_else(|| {
                    DemvcError::Usage("conv layer reached without a spatial shape hint".into())
                })?;
                t.reshaped(&[t.rows(), c, h, w])
            }
            _ => Ok(t),
        }
    }

    fn run_stack(
        &self,
        layers: &[LayerParams],
        input: Tensor,
        chw: Option<[usize; 3]>,
    ) -> Result<Tensor> {
        let mut cur = input;
        for layer in layers {
            cur = layer.forward(&Self::adapt(cur, layer, chw)?)?;
        }
        Ok(cur)
    }

    /// Embedded points z = f(x), one row per sample.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let z = self.run_stack(&self.encoder, batch.clone(), self.encoder_input_shape)?;
        z.ensure_finite("encode")?;
        Ok(z)
    }

    /// Reconstruction g(f(x)) flattened back to (N, input_dim).
    pub fn reconstruct(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let z = self.run_stack(&self.encoder, batch.clone(), self.encoder_input_shape)?;
        let out = self.run_stack(&self.decoder, z, self.decoder_mid_shape)?;
        let flat = out.reshaped(&[batch.rows(), self.input_dim])?;
        flat.ensure_finite("reconstruct")?;
        Ok(flat)
    }

    /// Mean over the batch of the squared Euclidean reconstruction error.
    pub fn reconstruction_loss(&self, batch: &Tensor) -> Result<f64> {
        let xhat = self.reconstruct(batch)?;
        Ok(mean_squared_norm(batch, &xhat))
    }

    /// Forward pass keeping per-layer caches for a later backward pass.
    pub fn forward_cached(&self, batch: &Tensor) -> Result<ForwardCaches> {
        self.check_batch(batch)?;
        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut cur = batch.clone();
        for layer in &self.encoder {
            let (out, cache) =
                layer.forward_cached(&Self::adapt(cur, layer, self.encoder_input_shape)?)?;
            enc.push(cache);
            cur = out;
        }
        let embedding = cur.clone();
        let mut dec = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (out, cache) =
                layer.forward_cached(&Self::adapt(cur, layer, self.decoder_mid_shape)?)?;
            dec.push(cache);
            cur = out;
        }
        let reconstruction = cur.reshaped(&[batch.rows(), self.input_dim])?;
        Ok(ForwardCaches {
            embedding,
            reconstruction,
            enc,
            dec,
        })
    }

    /// Backpropagates `grad_reconstruction` through the decoder, adds
    /// `extra_embed_grad` (e.g. a clustering-loss gradient) at the embedding,
    /// and continues through the encoder. Gradients are returned in
    /// `params_mut` order.
    pub fn backward(
        &self,
        caches: &ForwardCaches,
        grad_reconstruction: &Tensor,
        extra_embed_grad: Option<&Tensor>,
    ) -> Result<Vec<Tensor>> {
        let mut grad = grad_reconstruction.clone();
        let mut dec_grads: Vec<LayerGrads> = Vec::with_capacity(self.decoder.len());
        for (layer, cache) in self.decoder.iter().zip(&caches.dec).rev() {
            let shaped = grad.reshaped(cache.pre_shape())?;
            let (g_in, g_params) = layer.backward(cache, &shaped)?;
            dec_grads.push(g_params);
            grad = g_in;
        }
        dec_grads.reverse();

        let mut grad_z = grad.reshaped(caches.embedding.shape())?;
        if let Some(extra) = extra_embed_grad {
            if extra.shape() != grad_z.shape() {
                return Err(DemvcError::dimension(
                    "embedding gradient",
                    grad_z.shape(),
                    extra.shape(),
                ));
            }
            for (g, e) in grad_z.data_mut().iter_mut().zip(extra.data()) {
                *g += e;
            }
        }

        let mut enc_grads: Vec<LayerGrads> = Vec::with_capacity(self.encoder.len());
        let mut grad = grad_z;
        for (layer, cache) in self.encoder.iter().zip(&caches.enc).rev() {
            let shaped = grad.reshaped(cache.pre_shape())?;
            let (g_in, g_params) = layer.backward(cache, &shaped)?;
            enc_grads.push(g_params);
            grad = g_in;
        }
        enc_grads.reverse();

        let mut flat = Vec::with_capacity(2 * (enc_grads.len() + dec_grads.len()));
        for g in enc_grads.into_iter().chain(dec_grads) {
            flat.push(g.weights);
            flat.push(g.bias);
        }
        Ok(flat)
    }

    /// All trainable tensors in a stable order: encoder then decoder, each
    /// layer contributing (weights, bias).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut layer.weights);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(self.decoder.iter()) {
            out.push(&layer.weights);
            out.push(&layer.bias);
        }
        out
    }

    /// Order-dependent checksum over every parameter tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0;
        for p in self.params() {
            h = h.rotate_left(1) ^ p.checksum();
        }
        h
    }

    /// Minimizes the reconstruction loss with Adam over shuffled mini-batches.
    /// Returns the per-epoch mean loss. Shuffling is reseeded per epoch from
    /// `seed`, so identical seeds give identical trained parameters.
    pub fn pretrain(
        &mut self,
        data: &Tensor,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if epochs == 0 {
            return Err(DemvcError::Usage("pretrain requires epochs >= 1".into()));
        }
        if batch_size == 0 {
            return Err(DemvcError::Usage(
                "pretrain requires batch_size >= 1".into(),
            ));
        }
        let n = data.rows();
        if n == 0 {
            return Err(DemvcError::Usage(
                "pretrain requires a non-empty dataset".into(),
            ));
        }
        self.check_batch(data)?;

        let mut adam = AdamState::new();
        let mut curve = Vec::with_capacity(epochs);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..epochs {
            let mut epoch_rng = rng::rng_for(seed, rng::streams::PRETRAIN ^ ((epoch as u64) << 8));
            order.shuffle(&mut epoch_rng);
            let mut sq_sum = 0.0;
            for chunk in order.chunks(batch_size) {
                let batch = data.gather_rows(chunk);
                let caches = self.forward_cached(&batch)?;
                sq_sum += squared_norm_sum(&batch, &caches.reconstruction);
                let grad_xhat = recon_grad(&batch, &caches.reconstruction);
                let grads = self.backward(&caches, &grad_xhat, None)?;
                adam.step(&mut self.params_mut(), &grads)?;
            }
            curve.push(sq_sum / n as f64);
        }
        Ok(curve)
    }

    pub(crate) fn shape_hints(&self) -> (Option<[usize; 3]>, Option<[usize; 3]>) {
        (self.encoder_input_shape, self.decoder_mid_shape)
    }

    pub(crate) fn with_shape_hints(
        mut self,
        enc: Option<[usize; 3]>,
        dec: Option<[usize; 3]>,
    ) -> Self {
        self.encoder_input_shape = enc;
        self.decoder_mid_shape = dec;
        self
    }
}

/// Sum over rows of the squared Euclidean distance between matching rows.
pub fn squared_norm_sum(x: &Tensor, xhat: &Tensor) -> f64 {
    x.data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Mean over rows of the squared Euclidean reconstruction error.
pub fn mean_squared_norm(x: &Tensor, xhat: &Tensor) -> f64 {
    squared_norm_sum(x, xhat) / x.rows() as f64
}

/// Gradient of `mean_squared_norm` with respect to the reconstruction.
pub fn recon_grad(x: &Tensor, xhat: &Tensor) -> Tensor {
    let n = x.rows() as f64;
    let mut g = xhat.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        *gv = 2.0 * (*gv - xv) / n;
    }
    g
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "AECP", version, layer descriptors, raw f64
// parameters, optional Adam state. Little-endian throughout.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"AECP";
const CHECKPOINT_VERSION: u16 = 1;

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u8).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let ndim = read_u8(r)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::from_vec(&shape, data)
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_layer<W: Write>(w: &mut W, layer: &LayerParams) -> Result<()> {
    let (kind, stride) = match layer.kind {
        LayerKind::Affine => (0u8, 0u32),
        LayerKind::Conv2d { stride } => (1, stride as u32),
        LayerKind::Deconv2d { stride } => (2, stride as u32),
    };
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&stride.to_le_bytes())?;
    let act = match layer.activation {
        Activation::Linear => 0u8,
        Activation::Relu => 1,
    };
    w.write_all(&act.to_le_bytes())?;
    write_tensor(w, &layer.weights)?;
    write_tensor(w, &layer.bias)
}

fn read_layer<R: Read>(r: &mut R) -> Result<LayerParams> {
    let kind_code = read_u8(r)?;
    let stride = read_u32(r)? as usize;
    let kind = match kind_code {
        0 => LayerKind::Affine,
        1 => LayerKind::Conv2d { stride },
        2 => LayerKind::Deconv2d { stride },
        other => {
            return Err(DemvcError::Ingestion(format!(
                "checkpoint declares unknown layer kind {other}"
            )))
        }
    };
    let activation = match read_u8(r)? {
        0 => Activation::Linear,
        1 => Activation::Relu,
        other => {
            return Err(DemvcError::Ingestion(format!(
                "checkpoint declares unknown activation {other}"
            )))
        }
    };
    let weights = read_tensor(r)?;
    let bias = read_tensor(r)?;
    Ok(LayerParams {
        kind,
        activation,
        weights,
        bias,
    })
}

fn write_shape_hint<W: Write>(w: &mut W, hint: Option<[usize; 3]>) -> Result<()> {
    match hint {
        Some([c, h, wd]) => {
            w.write_all(&[1u8])?;
            for v in [c, h, wd] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    Ok(())
}

fn read_shape_hint<R: Read>(r: &mut R) -> Result<Option<[usize; 3]>> {
    if read_u8(r)? == 0 {
        return Ok(None);
    }
    Ok(Some([
        read_u32(r)? as usize,
        read_u32(r)? as usize,
        read_u32(r)? as usize,
    ]))
}

/// Writes an autoencoder (and optionally its Adam state) to `path`.
pub fn save_checkpoint(ae: &Autoencoder, adam: Option<&AdamState>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ae.view_index as u32).to_le_bytes())?;
    w.write_all(&(ae.input_dim as u64).to_le_bytes())?;
    w.write_all(&(ae.embed_dim as u64).to_le_bytes())?;
    let (enc_hint, dec_hint) = ae.shape_hints();
    write_shape_hint(&mut w, enc_hint)?;
    write_shape_hint(&mut w, dec_hint)?;
    w.write_all(&(ae.encoder.len() as u32).to_le_bytes())?;
    w.write_all(&(ae.decoder.len() as u32).to_le_bytes())?;
    for layer in ae.encoder.iter().chain(&ae.decoder) {
        write_layer(&mut w, layer)?;
    }
    match adam {
        Some(state) => {
            w.write_all(&[1u8])?;
            for v in [state.learning_rate, state.beta1, state.beta2, state.epsilon] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&state.step_count().to_le_bytes())?;
            let (m, v) = state.moments();
            w.write_all(&(m.len() as u32).to_le_bytes())?;
            for t in m.iter().chain(v) {
                write_tensor(&mut w, t)?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Autoencoder, Option<AdamState>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DemvcError::Ingestion(format!(
            "not an autoencoder checkpoint: bad magic {magic:?}"
        )));
    }
    let version = read_u16(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(DemvcError::Ingestion(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let view_index = read_u32(&mut r)? as usize;
    let input_dim = read_u64(&mut r)? as usize;
    let embed_dim = read_u64(&mut r)? as usize;
    let enc_hint = read_shape_hint(&mut r)?;
    let dec_hint = read_shape_hint(&mut r)?;
    let n_enc = read_u32(&mut r)? as usize;
    let n_dec = read_u32(&mut r)? as usize;
    let mut encoder = Vec::with_capacity(n_enc);
    for _ in 0..n_enc {
        encoder.push(read_layer(&mut r)?);
    }
    let mut decoder = Vec::with_capacity(n_dec);
    for _ in 0..n_dec {
        decoder.push(read_layer(&mut r)?);
    }
    let ae = Autoencoder {
        view_index,
        input_dim,
        embed_dim,
        encoder,
        decoder,
        encoder_input_shape: None,
        decoder_mid_shape: None,
    }
    .with_shape_hints(enc_hint, dec_hint);

    let adam = if read_u8(&mut r)? == 1 {
        let lr = read_f64(&mut r)?;
        let b1 = read_f64(&mut r)?;
        let b2 = read_f64(&mut r)?;
        let eps = read_f64(&mut r)?;
        let step = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(read_tensor(&mut r)?);
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(read_tensor(&mut r)?);
        }
        let mut state = AdamState::with_hyperparams(lr, b1, b2, eps);
        state.restore_moments(step, m, v);
        Some(state)
    } else {
        None
    };
    Ok((ae, adam))
}
