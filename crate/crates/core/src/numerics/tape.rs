//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Each
//! primitive stores its operands by index, so the recorded nodes are already
//! in topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use setseq::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
//! let x = tape.constant(Tensor::from_rows(&[[1.0], [1.0]]).unwrap());
//! let y = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
//! ```

use std::sync::Arc;

use super::kernels::{layer_norm_cached, masked_softmax_rows, sigmoid, LayerNormCache};
use super::tensor::{gemm, Layout, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// Adds a `1×n` row to every row of an `m×n` matrix.
    AddRow(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        scale: f64,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    /// Scalar function of `input` with a precomputed gradient.
    ScalarFn {
        input: Var,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Counters collected while recording; used to check attention cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpStats {
    /// Total number of attention weights computed by softmax primitives.
    pub attention_entries: usize,
    /// Multiply-accumulate count across matrix products.
    pub matmul_macs: usize,
}

/// Single-owner record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    stats: OpStats,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for `v`, or zeros of `shape` when the
    /// node did not influence the loss.
    pub fn take(&mut self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> OpStats {
        self.stats
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, needs_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push_shared(value.into(), Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push_shared(value.into(), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let (m, k, n) = (self.value(a).rows(), self.value(a).cols(), out.cols());
        self.stats.matmul_macs += m * k * n;
        let out = out.ensure_finite("matmul")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return dim_err(format!("matmul_nt {}x{} by ({}x{})ᵀ", m, k, n, tb.cols()));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            Layout::Normal,
            tb.data(),
            Layout::Transposed,
            &mut out,
            false,
        );
        self.stats.matmul_macs += m * k * n;
        let out = Tensor::matrix(m, n, out)?.ensure_finite("matmul_nt")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMulNT(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return dim_err(format!("{} of {:?} and {:?}", op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?.ensure_finite("add")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.len() != n {
            return dim_err(format!("add_row of width {} onto {} columns", tr.len(), n));
        }
        let r = tr.data();
        let data = ta.data().iter().enumerate().map(|(i, x)| x + r[i % n]).collect();
        let out = Tensor::matrix(ta.rows(), n, data)?.ensure_finite("add_row")?;
        let ng = self.needs(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?.ensure_finite("mul")?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Relu(a), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| sigmoid(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Sigmoid(a), ng))
    }

    /// Row-wise `softmax(x / √d)`, optionally ignoring masked key columns.
    pub fn softmax_rows_scaled(&mut self, x: Var, d: usize, key_mask: Option<&[bool]>) -> Result<Var> {
        if d == 0 {
            return Err(Error::Contract("softmax scale dimension must be positive".into()));
        }
        let scale = (d as f64).sqrt();
        let out = masked_softmax_rows(self.value(x), scale, key_mask)?;
        self.stats.attention_entries += out.len();
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Softmax { input: x, scale }, ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, cache) = layer_norm_cached(self.value(x), self.value(gain), self.value(bias))?;
        let ng = self.needs(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                cache,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let rows = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return dim_err("concat_cols with differing row counts");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let out = Tensor::scalar(s).ensure_finite("sum")?;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Sum(a), ng))
    }

    /// Records a scalar `f(input)` whose value and gradient were computed
    /// outside the tape (used for loss functions).
    pub fn scalar_fn(&mut self, input: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(input).len() {
            return dim_err(format!(
                "scalar_fn gradient of length {} for input of {}",
                grad.len(),
                self.value(input).len()
            ));
        }
        let out = Tensor::scalar(value).ensure_finite("scalar_fn")?;
        let ng = self.needs(&[input]);
        Ok(self.push(out, Op::ScalarFn { input, grad }, ng))
    }

    /// Propagates `d loss / d node` back through every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        Layout::Normal,
                        tb.data(),
                        Layout::Transposed,
                        &mut da,
                        false,
                    );
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        Layout::Transposed,
                        g.data(),
                        Layout::Normal,
                        &mut db,
                        false,
                    );
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.nodes[a.0].needs_grad {
                    // dA = G · B
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        Layout::Normal,
                        tb.data(),
                        Layout::Normal,
                        &mut da,
                        false,
                    );
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; n * k];
                    gemm(
                        n,
                        m,
                        k,
                        g.data(),
                        Layout::Transposed,
                        ta.data(),
                        Layout::Normal,
                        &mut db,
                        false,
                    );
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[row.0].needs_grad {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for (i, v) in g.data().iter().enumerate() {
                        dr[i % n] += v;
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.accumulate(grads, *row, Tensor::new(shape, dr)?);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), d)?);
                }
                if self.nodes[b.0].needs_grad {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), d)?);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, s)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::Softmax { input, scale } => {
                let (rows, cols) = (out.rows(), out.cols());
                let mut d = vec![0.0; rows * cols];
                for i in 0..rows {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[i * cols + j] = y[j] * (gy[j] - dot) / scale;
                    }
                }
                self.accumulate(grads, *input, Tensor::matrix(rows, cols, d)?);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                cache,
            } => {
                let (rows, cols) = (out.rows(), out.cols());
                let gv = self.value(*gain).data();
                if self.nodes[gain.0].needs_grad || self.nodes[bias.0].needs_grad {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            let gij = g.data()[i * cols + j];
                            dg[j] += gij * cache.normalized[i * cols + j];
                            db[j] += gij;
                        }
                    }
                    let gs = self.value(*gain).shape().to_vec();
                    let bs = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *gain, Tensor::new(gs, dg)?);
                    self.accumulate(grads, *bias, Tensor::new(bs, db)?);
                }
                if self.nodes[input.0].needs_grad {
                    let mut dx = vec![0.0; rows * cols];
                    let nf = cols as f64;
                    for i in 0..rows {
                        let xh = &cache.normalized[i * cols..(i + 1) * cols];
                        let dxh: Vec<f64> = (0..cols).map(|j| g.data()[i * cols + j] * gv[j]).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / nf;
                        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / nf;
                        for j in 0..cols {
                            dx[i * cols + j] = cache.inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    self.accumulate(grads, *input, Tensor::matrix(rows, cols, dx)?);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        let shape = self.value(*p).shape().to_vec();
                        self.accumulate(grads, *p, Tensor::new(shape, d)?);
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                let shape = self.value(*a).shape().to_vec();
                let n = self.value(*a).len();
                self.accumulate(grads, *a, Tensor::new(shape, vec![s; n])?);
            }
            Op::ScalarFn { input, grad } => {
                let s = g.data()[0];
                let shape = self.value(*input).shape().to_vec();
                self.accumulate(grads, *input, Tensor::new(shape, grad.iter().map(|v| v * s).collect())?);
            }
        }
        Ok(())
    }
}
