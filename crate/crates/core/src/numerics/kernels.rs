//! Forward kernels shared by the tape and by tape-free callers.

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Variance stabiliser used by [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise `softmax(x / √d)`.
pub fn softmax_rows_scaled(x: &Tensor, d: usize) -> Result<Tensor> {
    masked_softmax_rows(x, (d as f64).sqrt(), None)
}

/// Row-wise softmax of `x / scale`, where columns with `key_mask[j] == false`
/// receive zero weight.
pub fn masked_softmax_rows(x: &Tensor, scale: f64, key_mask: Option<&[bool]>) -> Result<Tensor> {
    if !(scale > 0.0) {
        return Err(Error::Contract("softmax scale must be positive".into()));
    }
    let (rows, cols) = (x.rows(), x.cols());
    if let Some(m) = key_mask {
        if m.len() != cols {
            return dim_err(format!("key mask of length {} for {} columns", m.len(), cols));
        }
        if !m.iter().any(|&v| v) {
            return Err(Error::Contract("every key is masked".into()));
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = x.row(i);
        let dst = &mut out[i * cols..(i + 1) * cols];
        let valid = |j: usize| key_mask.is_none_or(|m| m[j]);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if valid(j) && v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if valid(j) {
                let e = ((v - max) / scale).exp();
                dst[j] = e;
                sum += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::matrix(rows, cols, out)?.ensure_finite("softmax")
}

/// Cached statistics from a layer-norm forward pass, reused by the backward rule.
pub(crate) struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Row-wise layer normalisation followed by an elementwise affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    layer_norm_cached(x, gain, bias).map(|(t, _)| t)
}

pub(crate) fn layer_norm_cached(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let (rows, d) = (x.rows(), x.cols());
    if d == 0 {
        return dim_err("layer norm over zero columns");
    }
    if gain.len() != d || bias.len() != d {
        return dim_err(format!(
            "layer norm width {} with gain {} and bias {}",
            d,
            gain.len(),
            bias.len()
        ));
    }
    let (g, b) = (gain.data(), bias.data());
    let mut out = vec![0.0; rows * d];
    let mut normalized = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let n = (row[j] - mean) * is;
            normalized[i * d + j] = n;
            out[i * d + j] = n * g[j] + b[j];
        }
    }
    let t = Tensor::matrix(rows, d, out)?.ensure_finite("layer_norm")?;
    Ok((t, LayerNormCache { normalized, inv_std }))
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
