//! Forward and backward kernels for the closed set of layer types.
//!
//! All kernels are plain loops over row-major rows × cols × channels data.

use rand::Rng;

use super::spec::{check_dropout_rate, ActivationKind, Conv2dSpec, PoolSpec};
use crate::error::{Error, Result};
use crate::tensor::{Dims3, Tensor};

/// Gradients of a parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Output extents of a valid convolution, or an error naming the extents
/// that do not fit.
pub fn conv2d_output_dims(input: Dims3, spec: &Conv2dSpec) -> Result<Dims3> {
    if spec.filters == 0 || spec.filter_rows == 0 || spec.filter_cols == 0 {
        return Err(Error::Shape(format!(
            "conv needs positive extents, got {} filters of {}x{}",
            spec.filters, spec.filter_rows, spec.filter_cols
        )));
    }
    if spec.filter_rows > input.rows || spec.filter_cols > input.cols {
        return Err(Error::Shape(format!(
            "{}x{} filter does not fit {} input",
            spec.filter_rows, spec.filter_cols, input
        )));
    }
    Ok(Dims3::new(
        input.rows - spec.filter_rows + 1,
        input.cols - spec.filter_cols + 1,
        spec.filters,
    ))
}

pub fn conv2d_weight_len(spec: &Conv2dSpec, in_channels: usize) -> usize {
    spec.filters * spec.filter_rows * spec.filter_cols * in_channels
}

fn check_conv_params(spec: &Conv2dSpec, cin: usize, weights: &[f64], biases: &[f64]) -> Result<()> {
    let expected = conv2d_weight_len(spec, cin);
    if weights.len() != expected || biases.len() != spec.filters {
        return Err(Error::Shape(format!(
            "conv with {} filters of {}x{}x{} needs {expected} weights and {} biases, got {} and {}",
            spec.filters,
            spec.filter_rows,
            spec.filter_cols,
            cin,
            spec.filters,
            weights.len(),
            biases.len()
        )));
    }
    Ok(())
}

/// Valid cross-correlation with stride 1. Weights are laid out
/// filter × filter_row × filter_col × input_channel.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &[f64],
    biases: &[f64],
    spec: &Conv2dSpec,
) -> Result<Tensor> {
    let in_dims = input.dims3()?;
    let out_dims = conv2d_output_dims(in_dims, spec)?;
    check_conv_params(spec, in_dims.channels, weights, biases)?;

    let x = input.data();
    let cin = in_dims.channels;
    let (fr, fc) = (spec.filter_rows, spec.filter_cols);
    let filter_len = fr * fc * cin;
    let mut out = vec![0.0; out_dims.len()];
    for r in 0..out_dims.rows {
        for c in 0..out_dims.cols {
            let out_base = out_dims.index(r, c, 0);
            for (f, bias) in biases.iter().enumerate() {
                let w = &weights[f * filter_len..(f + 1) * filter_len];
                let mut acc = *bias;
                for i in 0..fr {
                    let x_row = in_dims.index(r + i, c, 0);
                    let x_win = &x[x_row..x_row + fc * cin];
                    let w_win = &w[i * fc * cin..(i + 1) * fc * cin];
                    acc += x_win.iter().zip(w_win).map(|(a, b)| a * b).sum::<f64>();
                }
                out[out_base + f] = acc;
            }
        }
    }
    Tensor::new(out_dims.to_vec(), out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &[f64],
    spec: &Conv2dSpec,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    let in_dims = input.dims3()?;
    let out_dims = conv2d_output_dims(in_dims, spec)?;
    let cin = in_dims.channels;
    let expected = conv2d_weight_len(spec, cin);
    if weights.len() != expected {
        return Err(Error::Shape(format!(
            "conv needs {expected} weights, got {}",
            weights.len()
        )));
    }
    if upstream.len() != out_dims.len() || upstream.dims3()? != out_dims {
        return Err(Error::Shape(format!(
            "conv upstream gradient is {:?}, forward output is {out_dims}",
            upstream.shape()
        )));
    }

    let x = input.data();
    let g = upstream.data();
    let (fr, fc) = (spec.filter_rows, spec.filter_cols);
    let row_len = fc * cin;
    let filter_len = fr * row_len;
    let mut dx = vec![0.0; in_dims.len()];
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; spec.filters];
    for r in 0..out_dims.rows {
        for c in 0..out_dims.cols {
            let out_base = out_dims.index(r, c, 0);
            for f in 0..spec.filters {
                let grad = g[out_base + f];
                if grad == 0.0 {
                    continue;
                }
                db[f] += grad;
                let w = &weights[f * filter_len..(f + 1) * filter_len];
                let dwf = &mut dw[f * filter_len..(f + 1) * filter_len];
                for i in 0..fr {
                    let x_row = in_dims.index(r + i, c, 0);
                    for k in 0..row_len {
                        dwf[i * row_len + k] += grad * x[x_row + k];
                        dx[x_row + k] += grad * w[i * row_len + k];
                    }
                }
            }
        }
    }
    Ok(LayerGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: dw,
        biases: db,
    })
}

pub fn maxpool_output_dims(input: Dims3, spec: &PoolSpec) -> Result<Dims3> {
    if spec.pool_rows == 0 || spec.pool_cols == 0 {
        return Err(Error::Shape("pool extents must be positive".into()));
    }
    if spec.pool_rows > input.rows || spec.pool_cols > input.cols {
        return Err(Error::Shape(format!(
            "{}x{} pool larger than {} input",
            spec.pool_rows, spec.pool_cols, input
        )));
    }
    Ok(Dims3::new(
        input.rows / spec.pool_rows,
        input.cols / spec.pool_cols,
        input.channels,
    ))
}

/// Winning input positions of a max-pool forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub output_dims: Dims3,
    /// Flat input index of the maximum for every output element.
    pub argmax: Vec<usize>,
}

/// Non-overlapping max pooling. Trailing rows/cols that do not fill a window
/// are dropped; ties go to the smallest flat input index.
pub fn maxpool_forward(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, PoolIndices)> {
    let in_dims = input.dims3()?;
    let out_dims = maxpool_output_dims(in_dims, spec)?;
    let x = input.data();
    let mut out = vec![0.0; out_dims.len()];
    let mut argmax = vec![0; out_dims.len()];
    for r in 0..out_dims.rows {
        for c in 0..out_dims.cols {
            for ch in 0..out_dims.channels {
                let mut best_idx = in_dims.index(r * spec.pool_rows, c * spec.pool_cols, ch);
                let mut best = x[best_idx];
                for i in 0..spec.pool_rows {
                    for j in 0..spec.pool_cols {
                        let idx = in_dims.index(r * spec.pool_rows + i, c * spec.pool_cols + j, ch);
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = out_dims.index(r, c, ch);
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((
        Tensor::new(out_dims.to_vec(), out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            output_dims: out_dims,
            argmax,
        },
    ))
}

pub fn maxpool_backward(indices: &PoolIndices, upstream: &Tensor) -> Result<Tensor> {
    if upstream.len() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "pool upstream gradient has {} values, indices cover {} ({})",
            upstream.len(),
            indices.argmax.len(),
            indices.output_dims
        )));
    }
    let mut dx = Tensor::zeros(indices.input_shape.clone());
    let buf = dx.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(upstream.data()) {
        buf[idx] += g;
    }
    Ok(dx)
}

/// `out_j = sum_i in_i * W_ij + b_j` with W stored row-major as in × out.
pub fn dense_forward(input: &Tensor, weights: &[f64], biases: &[f64]) -> Result<Tensor> {
    let n = input.len();
    let m = biases.len();
    if weights.len() != n * m {
        return Err(Error::Shape(format!(
            "dense layer expects {} inputs, got {n}",
            weights.len().checked_div(m).unwrap_or(0)
        )));
    }
    let mut out = biases.to_vec();
    for (x, row) in input.data().iter().zip(weights.chunks_exact(m)) {
        if *x == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    Ok(Tensor::vector(out))
}

pub fn dense_backward(input: &Tensor, weights: &[f64], upstream: &Tensor) -> Result<LayerGrads> {
    let n = input.len();
    let m = upstream.len();
    if weights.len() != n * m {
        return Err(Error::Shape(format!(
            "dense backward: {n} inputs and {m} upstream values do not match {} weights",
            weights.len()
        )));
    }
    let g = upstream.data();
    let mut dw = vec![0.0; n * m];
    let mut dx = vec![0.0; n];
    for (i, &x) in input.data().iter().enumerate() {
        let row = &weights[i * m..(i + 1) * m];
        let drow = &mut dw[i * m..(i + 1) * m];
        let mut acc = 0.0;
        for j in 0..m {
            drow[j] = x * g[j];
            acc += row[j] * g[j];
        }
        dx[i] = acc;
    }
    Ok(LayerGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: dw,
        biases: g.to_vec(),
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation_forward(input: &Tensor, kind: ActivationKind) -> Tensor {
    let mut out = input.clone();
    match kind {
        ActivationKind::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        ActivationKind::Sigmoid => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
    }
    out
}

/// Multiplies the upstream gradient by the activation derivative. ReLU uses
/// the pre-activation input (derivative 0 at exactly 0); sigmoid uses the
/// forward output.
pub fn activation_backward(
    kind: ActivationKind,
    input: &Tensor,
    output: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    if upstream.len() != input.len() {
        return Err(Error::Shape(format!(
            "activation upstream has {} values, input has {}",
            upstream.len(),
            input.len()
        )));
    }
    let mut dx = upstream.clone();
    match kind {
        ActivationKind::Relu => {
            for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        ActivationKind::Sigmoid => {
            for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
                *d *= y * (1.0 - y);
            }
        }
    }
    Ok(dx)
}

/// Max-shifted softmax over a flat tensor.
pub fn softmax_forward(logits: &Tensor) -> Tensor {
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::vector(exps.into_iter().map(|e| e / total).collect())
}

/// Vector-Jacobian product of softmax: `dz_i = p_i (g_i - sum_j g_j p_j)`.
pub fn softmax_backward(probabilities: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if probabilities.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "softmax upstream has {} values, output has {}",
            upstream.len(),
            probabilities.len()
        )));
    }
    let p = probabilities.data();
    let g = upstream.data();
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    Ok(Tensor::vector(
        p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect(),
    ))
}

/// Inverted dropout.
///
/// In training mode one uniform draw is taken per element, in flat order;
/// an element survives when its draw is `>= rate` and is then scaled by
/// `1 / (1 - rate)`. The returned mask holds the per-element multiplier.
/// Inference mode, or a zero rate, is the identity and consumes no draws.
pub fn dropout_apply<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor, Vec<f64>)> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((input.clone(), vec![1.0; input.len()]));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.random::<f64>() >= rate { scale } else { 0.0 })
        .collect();
    let mut out = input.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, mask))
}

pub fn dropout_backward(mask: &[f64], upstream: &Tensor) -> Result<Tensor> {
    if mask.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "dropout mask has {} values, upstream has {}",
            mask.len(),
            upstream.len()
        )));
    }
    let mut dx = upstream.clone();
    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
        *d *= m;
    }
    Ok(dx)
}
