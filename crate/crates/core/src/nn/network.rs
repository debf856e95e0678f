//! Forward propagation and backpropagation for the six-layer network:
//!
//! ```text
//! 28x28x1 -conv4x4,relu-> 25x25x32 -conv4x4,relu-> 22x22x32 -maxpool2x2-> 11x11x32
//!   -dropout-> fc,relu -> 128 -dropout-> fc,softmax -> C
//! ```
//!
//! Feature maps are stored `[y][x][channel]`, so a convolution is an
//! im2col gather followed by one matrix product per image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm, Op};
use super::params::{NetworkParams, ParamGroup};
use super::{CONV1_SIDE, CONV2_SIDE, CONV_CHANNELS, FLAT, HIDDEN, INPUT_SIDE, KERNEL, POOL_SIDE};
use crate::error::{Error, Result};

const K2: usize = KERNEL * KERNEL;
const CONV1_POS: usize = CONV1_SIDE * CONV1_SIDE;
const CONV2_POS: usize = CONV2_SIDE * CONV2_SIDE;
const PATCH2: usize = K2 * CONV_CHANNELS;

/// Dropout rates applied after the pooling layer and after the hidden layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub pool: f64,
    pub hidden: f64,
}

impl Dropout {
    pub const NONE: Dropout = Dropout { pool: 0.0, hidden: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for r in [self.pool, self.hidden] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

impl Default for Dropout {
    fn default() -> Self {
        Dropout {
            pool: 0.25,
            hidden: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Inverted dropout with masks drawn from `seed`.
    Train { seed: u64, dropout: Dropout },
    /// Dropout is the identity.
    Infer,
}

/// Per-image activations of the convolutional part.
#[derive(Debug, Clone)]
struct ConvCache {
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    argmax: Vec<u32>,
}

/// Every layer's activations for one batch.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    batch: usize,
    classes: usize,
    convs: Vec<ConvCache>,
    /// Pooled maps before dropout, `batch x 3872`.
    pooled: Vec<f64>,
    /// Pooled maps after dropout.
    pooled_dropped: Vec<f64>,
    pool_mask: Option<Vec<f64>>,
    /// Hidden layer after ReLU, before dropout, `batch x 128`.
    hidden: Vec<f64>,
    hidden_dropped: Vec<f64>,
    hidden_mask: Option<Vec<f64>>,
    /// Softmax outputs, `batch x classes`.
    probs: Vec<f64>,
    /// Log-sum-exp of each row of logits.
    log_norm: Vec<f64>,
    logits: Vec<f64>,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Layer 2 output of image `i`: 25x25x32, post-ReLU.
    pub fn conv1(&self, i: usize) -> &[f64] {
        &self.convs[i].conv1
    }

    /// Layer 3 output of image `i`: 22x22x32, post-ReLU.
    pub fn conv2(&self, i: usize) -> &[f64] {
        &self.convs[i].conv2
    }

    /// Layer 4 output of image `i`: 11x11x32, before dropout.
    pub fn pooled(&self, i: usize) -> &[f64] {
        &self.pooled[i * FLAT..(i + 1) * FLAT]
    }

    /// Layer 5 output of image `i`: 128 post-ReLU values, before dropout.
    pub fn hidden(&self, i: usize) -> &[f64] {
        &self.hidden[i * HIDDEN..(i + 1) * HIDDEN]
    }

    /// Layer 6 softmax output of image `i`.
    pub fn probabilities(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn predicted_class(&self, i: usize) -> usize {
        argmax(self.probabilities(i))
    }

    /// Layer sizes per image, from the first convolution to the output.
    pub fn shape_chain(&self) -> [(usize, usize, usize); 5] {
        [
            (CONV1_SIDE, CONV1_SIDE, CONV_CHANNELS),
            (CONV2_SIDE, CONV2_SIDE, CONV_CHANNELS),
            (POOL_SIDE, POOL_SIDE, CONV_CHANNELS),
            (1, 1, self.hidden.len() / self.batch.max(1)),
            (1, 1, self.probs.len() / self.batch.max(1)),
        ]
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_images(images: &[&[f64]]) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        if img.len() != INPUT_SIDE * INPUT_SIDE {
            return Err(Error::shape(format!(
                "image {i} has {} pixels, expected {}",
                img.len(),
                INPUT_SIDE * INPUT_SIDE
            )));
        }
    }
    Ok(())
}

fn im2col1(img: &[f64], col: &mut [f64]) {
    for oy in 0..CONV1_SIDE {
        for ox in 0..CONV1_SIDE {
            let row = &mut col[(oy * CONV1_SIDE + ox) * K2..][..K2];
            for ky in 0..KERNEL {
                let src = &img[(oy + ky) * INPUT_SIDE + ox..][..KERNEL];
                row[ky * KERNEL..][..KERNEL].copy_from_slice(src);
            }
        }
    }
}

fn im2col2(a1: &[f64], col: &mut [f64]) {
    let span = KERNEL * CONV_CHANNELS;
    for oy in 0..CONV2_SIDE {
        for ox in 0..CONV2_SIDE {
            let row = &mut col[(oy * CONV2_SIDE + ox) * PATCH2..][..PATCH2];
            for ky in 0..KERNEL {
                let src = &a1[((oy + ky) * CONV1_SIDE + ox) * CONV_CHANNELS..][..span];
                row[ky * span..][..span].copy_from_slice(src);
            }
        }
    }
}

/// Adds the patch gradients in `dcol` back onto the 25x25x32 map.
fn col2im2(dcol: &[f64], da1: &mut [f64]) {
    let span = KERNEL * CONV_CHANNELS;
    for oy in 0..CONV2_SIDE {
        for ox in 0..CONV2_SIDE {
            let row = &dcol[(oy * CONV2_SIDE + ox) * PATCH2..][..PATCH2];
            for ky in 0..KERNEL {
                let dst = &mut da1[((oy + ky) * CONV1_SIDE + ox) * CONV_CHANNELS..][..span];
                dst.iter_mut().zip(&row[ky * span..][..span]).for_each(|(d, s)| *d += s);
            }
        }
    }
}

fn add_bias_relu(z: &mut [f64], bias: &[f64]) {
    for row in z.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = (*v + b).max(0.0);
        }
    }
}

fn conv_forward(params: &NetworkParams, img: &[f64], col1: &mut [f64], col2: &mut [f64]) -> (ConvCache, Vec<f64>) {
    im2col1(img, col1);
    let mut conv1 = vec![0.0; CONV1_POS * CONV_CHANNELS];
    gemm(
        CONV1_POS,
        K2,
        CONV_CHANNELS,
        col1,
        Op::N,
        params.group(ParamGroup::Conv1Weight),
        Op::T,
        0.0,
        &mut conv1,
    );
    add_bias_relu(&mut conv1, params.group(ParamGroup::Conv1Bias));

    im2col2(&conv1, col2);
    let mut conv2 = vec![0.0; CONV2_POS * CONV_CHANNELS];
    gemm(
        CONV2_POS,
        PATCH2,
        CONV_CHANNELS,
        col2,
        Op::N,
        params.group(ParamGroup::Conv2Weight),
        Op::T,
        0.0,
        &mut conv2,
    );
    add_bias_relu(&mut conv2, params.group(ParamGroup::Conv2Bias));

    let mut pooled = vec![0.0; FLAT];
    let mut argmax = vec![0u32; FLAT];
    for py in 0..POOL_SIDE {
        for px in 0..POOL_SIDE {
            for c in 0..CONV_CHANNELS {
                let mut best_idx = ((2 * py) * CONV2_SIDE + 2 * px) * CONV_CHANNELS + c;
                let mut best = conv2[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * py + dy) * CONV2_SIDE + 2 * px + dx) * CONV_CHANNELS + c;
                    if conv2[idx] > best {
                        best = conv2[idx];
                        best_idx = idx;
                    }
                }
                let out = (py * POOL_SIDE + px) * CONV_CHANNELS + c;
                pooled[out] = best;
                argmax[out] = best_idx as u32;
            }
        }
    }
    (ConvCache { conv1, conv2, argmax }, pooled)
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 })
        .collect()
}

pub fn forward(params: &NetworkParams, images: &[&[f64]], mode: Mode) -> Result<ForwardPass> {
    check_images(images)?;
    let batch = images.len();
    let classes = params.classes();
    let mut col1 = vec![0.0; CONV1_POS * K2];
    let mut col2 = vec![0.0; CONV2_POS * PATCH2];
    let mut convs = Vec::with_capacity(batch);
    let mut pooled = Vec::with_capacity(batch * FLAT);
    for img in images {
        let (cache, p) = conv_forward(params, img, &mut col1, &mut col2);
        convs.push(cache);
        pooled.extend_from_slice(&p);
    }

    let (mut rng, dropout) = match mode {
        Mode::Train { seed, dropout } => {
            dropout.validate()?;
            (Some(ChaCha8Rng::seed_from_u64(seed)), dropout)
        }
        Mode::Infer => (None, Dropout::NONE),
    };

    let pool_mask = rng.as_mut().map(|r| dropout_mask(r, batch * FLAT, dropout.pool));
    let pooled_dropped = match &pool_mask {
        Some(m) => pooled.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => pooled.clone(),
    };

    let mut hidden = vec![0.0; batch * HIDDEN];
    gemm(
        batch,
        FLAT,
        HIDDEN,
        &pooled_dropped,
        Op::N,
        params.group(ParamGroup::FcWeight),
        Op::N,
        0.0,
        &mut hidden,
    );
    add_bias_relu(&mut hidden, params.group(ParamGroup::FcBias));

    let hidden_mask = rng.as_mut().map(|r| dropout_mask(r, batch * HIDDEN, dropout.hidden));
    let hidden_dropped = match &hidden_mask {
        Some(m) => hidden.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => hidden.clone(),
    };

    let mut logits = vec![0.0; batch * classes];
    gemm(
        batch,
        HIDDEN,
        classes,
        &hidden_dropped,
        Op::N,
        params.group(ParamGroup::OutWeight),
        Op::N,
        0.0,
        &mut logits,
    );
    let out_bias = params.group(ParamGroup::OutBias);
    let mut probs = vec![0.0; batch * classes];
    let mut log_norm = vec![0.0; batch];
    for i in 0..batch {
        let z = &mut logits[i * classes..(i + 1) * classes];
        z.iter_mut().zip(out_bias).for_each(|(v, b)| *v += b);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        log_norm[i] = m + sum.ln();
        for (p, v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(z.iter()) {
            *p = (v - log_norm[i]).exp();
        }
    }

    Ok(ForwardPass {
        batch,
        classes,
        convs,
        pooled,
        pooled_dropped,
        pool_mask,
        hidden,
        hidden_dropped,
        hidden_mask,
        probs,
        log_norm,
        logits,
    })
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if labels.len() != batch {
        return Err(Error::shape(format!("{} labels for {batch} images", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean cross-entropy of a completed forward pass.
pub fn cross_entropy(pass: &ForwardPass, labels: &[usize]) -> Result<f64> {
    check_labels(labels, pass.batch, pass.classes)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| pass.log_norm[i] - pass.logits[i * pass.classes + y])
        .sum();
    Ok(total / pass.batch as f64)
}

/// Mean cross-entropy loss and its gradient with respect to every parameter.
/// In train mode the dropout masks are those drawn by [`forward`] for the
/// same seed.
pub fn loss_and_gradients(
    params: &NetworkParams,
    images: &[&[f64]],
    labels: &[usize],
    mode: Mode,
) -> Result<(f64, NetworkParams)> {
    check_labels(labels, images.len(), params.classes())?;
    let pass = forward(params, images, mode)?;
    let loss = cross_entropy(&pass, labels)?;
    let grads = backward(params, images, labels, &pass);
    Ok((loss, grads))
}

fn backward(params: &NetworkParams, images: &[&[f64]], labels: &[usize], pass: &ForwardPass) -> NetworkParams {
    let batch = pass.batch;
    let classes = pass.classes;
    let inv_b = 1.0 / batch as f64;
    let mut grads = NetworkParams::zeros(classes).expect("classes validated by params");

    // Softmax + cross-entropy.
    let mut d_logits = pass.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        d_logits[i * classes + y] -= 1.0;
    }
    d_logits.iter_mut().for_each(|v| *v *= inv_b);

    gemm(
        HIDDEN,
        batch,
        classes,
        &pass.hidden_dropped,
        Op::T,
        &d_logits,
        Op::N,
        0.0,
        grads.group_mut(ParamGroup::OutWeight),
    );
    column_sums(&d_logits, classes, grads.group_mut(ParamGroup::OutBias));

    let mut d_hidden = vec![0.0; batch * HIDDEN];
    gemm(
        batch,
        classes,
        HIDDEN,
        &d_logits,
        Op::N,
        params.group(ParamGroup::OutWeight),
        Op::T,
        0.0,
        &mut d_hidden,
    );
    if let Some(mask) = &pass.hidden_mask {
        d_hidden.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }
    d_hidden.iter_mut().zip(&pass.hidden).for_each(|(d, &a)| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });

    gemm(
        FLAT,
        batch,
        HIDDEN,
        &pass.pooled_dropped,
        Op::T,
        &d_hidden,
        Op::N,
        0.0,
        grads.group_mut(ParamGroup::FcWeight),
    );
    column_sums(&d_hidden, HIDDEN, grads.group_mut(ParamGroup::FcBias));

    let mut d_pooled = vec![0.0; batch * FLAT];
    gemm(
        batch,
        HIDDEN,
        FLAT,
        &d_hidden,
        Op::N,
        params.group(ParamGroup::FcWeight),
        Op::T,
        0.0,
        &mut d_pooled,
    );
    if let Some(mask) = &pass.pool_mask {
        d_pooled.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }

    let mut col1 = vec![0.0; CONV1_POS * K2];
    let mut col2 = vec![0.0; CONV2_POS * PATCH2];
    let mut dcol2 = vec![0.0; CONV2_POS * PATCH2];
    let mut d_conv2 = vec![0.0; CONV2_POS * CONV_CHANNELS];
    let mut d_conv1 = vec![0.0; CONV1_POS * CONV_CHANNELS];
    let mut d_w2 = vec![0.0; CONV_CHANNELS * PATCH2];
    let mut d_b2 = vec![0.0; CONV_CHANNELS];
    let mut d_w1 = vec![0.0; CONV_CHANNELS * K2];
    let mut d_b1 = vec![0.0; CONV_CHANNELS];

    for (i, img) in images.iter().enumerate() {
        let cache = &pass.convs[i];
        d_conv2.iter_mut().for_each(|v| *v = 0.0);
        for (j, &src) in cache.argmax.iter().enumerate() {
            let src = src as usize;
            if cache.conv2[src] > 0.0 {
                d_conv2[src] += d_pooled[i * FLAT + j];
            }
        }
        im2col2(&cache.conv1, &mut col2);
        gemm(
            CONV_CHANNELS,
            CONV2_POS,
            PATCH2,
            &d_conv2,
            Op::T,
            &col2,
            Op::N,
            1.0,
            &mut d_w2,
        );
        column_sums_acc(&d_conv2, CONV_CHANNELS, &mut d_b2);

        gemm(
            CONV2_POS,
            CONV_CHANNELS,
            PATCH2,
            &d_conv2,
            Op::N,
            params.group(ParamGroup::Conv2Weight),
            Op::N,
            0.0,
            &mut dcol2,
        );
        d_conv1.iter_mut().for_each(|v| *v = 0.0);
        col2im2(&dcol2, &mut d_conv1);
        d_conv1.iter_mut().zip(&cache.conv1).for_each(|(d, &a)| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });

        im2col1(img, &mut col1);
        gemm(
            CONV_CHANNELS,
            CONV1_POS,
            K2,
            &d_conv1,
            Op::T,
            &col1,
            Op::N,
            1.0,
            &mut d_w1,
        );
        column_sums_acc(&d_conv1, CONV_CHANNELS, &mut d_b1);
    }
    grads.group_mut(ParamGroup::Conv2Weight).copy_from_slice(&d_w2);
    grads.group_mut(ParamGroup::Conv2Bias).copy_from_slice(&d_b2);
    grads.group_mut(ParamGroup::Conv1Weight).copy_from_slice(&d_w1);
    grads.group_mut(ParamGroup::Conv1Bias).copy_from_slice(&d_b1);
    grads
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    column_sums_acc(m, cols, out);
}

fn column_sums_acc(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

/// Layer-5 activations (128 values per image, post-ReLU, dropout off),
/// computed in chunks to bound memory.
pub fn hidden_activations(params: &NetworkParams, images: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let pass = forward(params, chunk, Mode::Infer)?;
        out.extend((0..chunk.len()).map(|i| pass.hidden(i).to_vec()));
    }
    Ok(out)
}

/// Arg-max class per image in infer mode.
pub fn predict(params: &NetworkParams, images: &[&[f64]]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let pass = forward(params, chunk, Mode::Infer)?;
        out.extend((0..chunk.len()).map(|i| pass.predicted_class(i)));
    }
    Ok(out)
}
