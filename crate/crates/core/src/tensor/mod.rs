//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every value that participates in training lives on a [`Tape`]: an arena of
//! tensors plus one operation record per tensor, appended in topological
//! order. [`Tape::backward`] walks the records once, in reverse, accumulating
//! gradients. A tape and its tensors belong to one thread; independent tapes
//! may run on different threads freely.
//!
//! The op set is deliberately small: elementwise arithmetic, matrix multiply,
//! valid 1-D convolution, 1-D max-pooling, the usual pointwise
//! nonlinearities, row softmax, concatenation, sum/mean reductions, an affine
//! layer, embedding lookup and the slicing/transposition glue the encoders
//! need. A gated recurrent (LSTM) cell step is provided as a composite over
//! these primitives. There is no broadcasting beyond scalar-tensor ops.

mod check;

pub use check::{grad_check, grad_check_multi};

use std::fmt;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense row-major tensor. `grad` is filled by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    /// Index of this tensor's record on its tape.
    pub tape_id: usize,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are not conformable for the requested op.
    Shape { op: &'static str, detail: String },
    /// Pooling/convolution window exceeds the input length.
    Window { op: &'static str, window: usize, len: usize },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalar { numel: usize },
    /// The tape cannot record or replay: gradients disabled, or backward
    /// already ran without a reset.
    Tape { detail: &'static str },
    /// A non-finite value where a finite one is required.
    NonFinite { op: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::Shape { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            TensorError::Window { op, window, len } => {
                write!(f, "{op}: window {window} larger than input length {len}")
            }
            TensorError::NonScalar { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            TensorError::Tape { detail } => write!(f, "tape error: {detail}"),
            TensorError::NonFinite { op } => write!(f, "{op}: non-finite value encountered"),
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// One backward rule per tensor. `Leaf` marks inputs and is also used as a
/// placeholder when the tape records no gradients.
#[derive(Debug, Clone)]
enum Record {
    Leaf,
    Add { lhs: usize, rhs: usize },
    Sub { lhs: usize, rhs: usize },
    Mul { lhs: usize, rhs: usize },
    Scale { input: usize, factor: f64 },
    MatMul { lhs: usize, rhs: usize, m: usize, k: usize, n: usize },
    Conv1d { input: usize, kernel: usize },
    MaxPool1d { input: usize, argmax: Vec<usize> },
    Sigmoid { input: usize },
    Tanh { input: usize },
    Exp { input: usize },
    Log { input: usize },
    SoftmaxRows { input: usize, cols: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    SumAll { input: usize },
    MeanAll { input: usize },
    MeanRows { input: usize },
    Affine { weight: usize, x: usize, bias: usize },
    Embed { table: usize, ids: Vec<usize> },
    Row { input: usize, row: usize },
    Transpose { input: usize },
    Reshape { input: usize },
}

/// Arena of tensors plus their operation records, in topological order.
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Record>,
    grad_enabled: bool,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A recording tape: every op appends a backward record.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), records: Vec::new(), grad_enabled: true, backward_done: false }
    }

    /// A forward-only tape. Values are computed by the exact same code paths
    /// (bit-identical results) but no records are kept and `backward` fails.
    pub fn no_grad() -> Self {
        Tape { nodes: Vec::new(), records: Vec::new(), grad_enabled: false, backward_done: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, record: Record) -> TensorId {
        let id = self.nodes.len();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Tensor { shape, data, grad: None, tape_id: id });
        let record = if self.grad_enabled { record } else { Record::Leaf };
        self.records.push(record);
        TensorId(id)
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::Shape {
                op: "leaf",
                detail: format!("data length {} vs shape {:?}", data.len(), shape),
            });
        }
        Ok(self.push(data, shape.to_vec(), Record::Leaf))
    }

    /// Registers a scalar input with shape `[1]`.
    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.push(vec![value], vec![1], Record::Leaf)
    }

    pub fn value(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].data
    }

    pub fn shape(&self, t: TensorId) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn tensor(&self, t: TensorId) -> &Tensor {
        &self.nodes[t.0]
    }

    /// Gradient of the last `backward` loss w.r.t. `t`. Empty before backward.
    pub fn grad(&self, t: TensorId) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    /// Clears gradients and re-arms `backward`.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn binary_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            });
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Record::Add { lhs: a.0, rhs: b.0 }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Record::Sub { lhs: a.0, rhs: b.0 }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Record::Mul { lhs: a.0, rhs: b.0 }))
    }

    /// Scalar-tensor product.
    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * factor).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, Record::Scale { input: a.0, factor })
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                detail: format!("{ashape:?} x {bshape:?}"),
            });
        }
        let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(data, vec![m, n], Record::MatMul { lhs: a.0, rhs: b.0, m, k, n }))
    }

    /// `y = W x + b` with `W: [out,in]`, `x: [in]`, `b: [out]`.
    pub fn affine(&mut self, weight: TensorId, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let wshape = &self.nodes[weight.0].shape;
        if wshape.len() != 2 {
            return Err(TensorError::Shape {
                op: "affine",
                detail: format!("weight must be 2-D, got {wshape:?}"),
            });
        }
        let (out_dim, in_dim) = (wshape[0], wshape[1]);
        if self.nodes[x.0].numel() != in_dim || self.nodes[x.0].shape.len() != 1 {
            return Err(TensorError::Shape {
                op: "affine",
                detail: format!("x {:?} vs weight {wshape:?}", self.nodes[x.0].shape),
            });
        }
        if self.nodes[bias.0].numel() != out_dim || self.nodes[bias.0].shape.len() != 1 {
            return Err(TensorError::Shape {
                op: "affine",
                detail: format!("bias {:?} vs weight {wshape:?}", self.nodes[bias.0].shape),
            });
        }
        let w = &self.nodes[weight.0].data;
        let xv = &self.nodes[x.0].data;
        let bv = &self.nodes[bias.0].data;
        let mut data = Vec::with_capacity(out_dim);
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(xv) {
                acc += wi * xi;
            }
            data.push(acc + bv[o]);
        }
        Ok(self.push(data, vec![out_dim], Record::Affine { weight: weight.0, x: x.0, bias: bias.0 }))
    }

    /// `[r,c] -> [c,r]`.
    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = &self.nodes[a.0].shape;
        if shape.len() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                detail: format!("need 2-D, got {shape:?}"),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(data, vec![c, r], Record::Transpose { input: a.0 }))
    }

    // ── sequence ops ────────────────────────────────────────────────

    /// Valid 1-D convolution (cross-correlation, no kernel flip).
    /// `input: [in_ch, time]`, `kernel: [out_ch, in_ch, width]`
    /// `-> [out_ch, time - width + 1]`.
    pub fn conv1d(&mut self, input: TensorId, kernel: TensorId) -> Result<TensorId> {
        let ishape = &self.nodes[input.0].shape;
        let kshape = &self.nodes[kernel.0].shape;
        if ishape.len() != 2 || kshape.len() != 3 || ishape[0] != kshape[1] {
            return Err(TensorError::Shape {
                op: "conv1d",
                detail: format!("input {ishape:?} vs kernel {kshape:?}"),
            });
        }
        let (in_ch, time) = (ishape[0], ishape[1]);
        let (out_ch, width) = (kshape[0], kshape[2]);
        if width > time {
            return Err(TensorError::Window { op: "conv1d", window: width, len: time });
        }
        let out_len = time - width + 1;
        let x = &self.nodes[input.0].data;
        let k = &self.nodes[kernel.0].data;
        let mut data = vec![0.0; out_ch * out_len];
        for o in 0..out_ch {
            for t in 0..out_len {
                let mut acc = 0.0;
                for c in 0..in_ch {
                    let xrow = &x[c * time + t..c * time + t + width];
                    let krow = &k[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
                    for (kv, xv) in krow.iter().zip(xrow) {
                        acc += kv * xv;
                    }
                }
                data[o * out_len + t] = acc;
            }
        }
        Ok(self.push(data, vec![out_ch, out_len], Record::Conv1d { input: input.0, kernel: kernel.0 }))
    }

    /// Max pooling over time with stride equal to the window.
    /// `input: [ch, time] -> [ch, time / window]` (floor). Ties resolve to
    /// the lowest time index; the backward pass routes gradient only there.
    pub fn max_pool1d(&mut self, input: TensorId, window: usize) -> Result<TensorId> {
        let ishape = &self.nodes[input.0].shape;
        if ishape.len() != 2 {
            return Err(TensorError::Shape {
                op: "max_pool1d",
                detail: format!("need 2-D, got {ishape:?}"),
            });
        }
        let (ch, time) = (ishape[0], ishape[1]);
        if window == 0 || window > time {
            return Err(TensorError::Window { op: "max_pool1d", window, len: time });
        }
        let out_len = time / window;
        let x = &self.nodes[input.0].data;
        let mut data = vec![0.0; ch * out_len];
        let mut argmax = vec![0usize; ch * out_len];
        for c in 0..ch {
            for p in 0..out_len {
                let start = c * time + p * window;
                let mut best = x[start];
                let mut best_idx = start;
                for off in 1..window {
                    let v = x[start + off];
                    if v > best {
                        best = v;
                        best_idx = start + off;
                    }
                }
                data[c * out_len + p] = best;
                argmax[c * out_len + p] = best_idx;
            }
        }
        Ok(self.push(data, vec![ch, out_len], Record::MaxPool1d { input: input.0, argmax }))
    }

    // ── pointwise nonlinearities ────────────────────────────────────

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, Record::Sigmoid { input: a.0 })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, Record::Tanh { input: a.0 })
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.exp()).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, Record::Exp { input: a.0 })
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, Record::Log { input: a.0 })
    }

    /// Row-wise softmax with max subtraction. 1-D input is one row.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => {
                return Err(TensorError::Shape {
                    op: "softmax_rows",
                    detail: format!("need 1-D or 2-D, got {shape:?}"),
                })
            }
        };
        if cols == 0 {
            return Err(TensorError::Shape { op: "softmax_rows", detail: "empty row".into() });
        }
        let x = &self.nodes[a.0].data;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let out = &mut data[r * cols..(r + 1) * cols];
            softmax_row(row, out);
        }
        Ok(self.push(data, shape, Record::SoftmaxRows { input: a.0, cols }))
    }

    // ── shape ops ───────────────────────────────────────────────────

    /// Concatenates along `axis`. 1-D tensors concatenate along axis 0;
    /// 2-D tensors along axis 0 (stack rows) or axis 1 (widen rows).
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::Shape { op: "concat", detail: "no inputs".into() });
        }
        let ndim = self.nodes[parts[0].0].shape.len();
        if axis >= ndim.max(1) {
            return Err(TensorError::Shape {
                op: "concat",
                detail: format!("axis {axis} out of range for {ndim}-D"),
            });
        }
        for p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != ndim {
                return Err(TensorError::Shape {
                    op: "concat",
                    detail: format!("rank mismatch: {:?} vs {:?}", self.nodes[parts[0].0].shape, s),
                });
            }
            for d in 0..ndim {
                if d != axis && s[d] != self.nodes[parts[0].0].shape[d] {
                    return Err(TensorError::Shape {
                        op: "concat",
                        detail: format!("dim {d}: {:?} vs {:?}", self.nodes[parts[0].0].shape, s),
                    });
                }
            }
        }
        let (data, shape) = match (ndim, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for p in parts {
                    data.extend_from_slice(&self.nodes[p.0].data);
                }
                let len = data.len();
                (data, vec![len])
            }
            (2, 0) => {
                let cols = self.nodes[parts[0].0].shape[1];
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    rows += self.nodes[p.0].shape[0];
                    data.extend_from_slice(&self.nodes[p.0].data);
                }
                (data, vec![rows, cols])
            }
            (2, 1) => {
                let rows = self.nodes[parts[0].0].shape[0];
                let total_cols: usize = parts.iter().map(|p| self.nodes[p.0].shape[1]).sum();
                let mut data = vec![0.0; rows * total_cols];
                let mut col_off = 0;
                for p in parts {
                    let c = self.nodes[p.0].shape[1];
                    for r in 0..rows {
                        data[r * total_cols + col_off..r * total_cols + col_off + c]
                            .copy_from_slice(&self.nodes[p.0].data[r * c..(r + 1) * c]);
                    }
                    col_off += c;
                }
                (data, vec![rows, total_cols])
            }
            _ => {
                return Err(TensorError::Shape {
                    op: "concat",
                    detail: format!("unsupported rank {ndim} / axis {axis}"),
                })
            }
        };
        let inputs = parts.iter().map(|p| p.0).collect();
        Ok(self.push(data, shape, Record::Concat { inputs, axis }))
    }

    /// Same data, new shape; numel must be preserved.
    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if self.nodes[a.0].numel() != shape.iter().product::<usize>() {
            return Err(TensorError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.nodes[a.0].shape),
            });
        }
        let data = self.nodes[a.0].data.clone();
        Ok(self.push(data, shape.to_vec(), Record::Reshape { input: a.0 }))
    }

    /// Extracts row `row` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, a: TensorId, row: usize) -> Result<TensorId> {
        let shape = &self.nodes[a.0].shape;
        if shape.len() != 2 || row >= shape[0] {
            return Err(TensorError::Shape {
                op: "row",
                detail: format!("row {row} of {shape:?}"),
            });
        }
        let cols = shape[1];
        let data = self.nodes[a.0].data[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(data, vec![cols], Record::Row { input: a.0, row }))
    }

    /// Looks up embedding rows: `table: [vocab, dim]`, ids -> `[len(ids), dim]`.
    /// Gradient accumulates into the looked-up table rows.
    pub fn embed(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let tshape = &self.nodes[table.0].shape;
        if tshape.len() != 2 {
            return Err(TensorError::Shape {
                op: "embed",
                detail: format!("table must be 2-D, got {tshape:?}"),
            });
        }
        let (vocab, dim) = (tshape[0], tshape[1]);
        if ids.is_empty() {
            return Err(TensorError::Shape { op: "embed", detail: "empty id list".into() });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::Shape {
                op: "embed",
                detail: format!("token id {bad} out of vocabulary (size {vocab})"),
            });
        }
        let t = &self.nodes[table.0].data;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&t[i * dim..(i + 1) * dim]);
        }
        let shape = vec![ids.len(), dim];
        Ok(self.push(data, shape, Record::Embed { table: table.0, ids: ids.to_vec() }))
    }

    // ── reductions ──────────────────────────────────────────────────

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![s], vec![1], Record::SumAll { input: a.0 })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![s / n], vec![1], Record::MeanAll { input: a.0 })
    }

    /// Mean over axis 0: `[r,c] -> [c]`.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = &self.nodes[a.0].shape;
        if shape.len() != 2 {
            return Err(TensorError::Shape {
                op: "mean_rows",
                detail: format!("need 2-D, got {shape:?}"),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let x = &self.nodes[a.0].data;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += x[i * c + j];
            }
        }
        for v in &mut data {
            *v /= r as f64;
        }
        Ok(self.push(data, vec![c], Record::MeanRows { input: a.0 }))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Visits each record exactly once, in
    /// reverse topological order; every tensor's `grad` then holds
    /// d(loss)/d(tensor). A second call without [`Tape::reset_grads`] fails.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.grad_enabled {
            return Err(TensorError::Tape { detail: "gradients disabled on this tape" });
        }
        if self.backward_done {
            return Err(TensorError::Tape { detail: "backward already ran; reset_grads first" });
        }
        if self.nodes[loss.0].numel() != 1 {
            return Err(TensorError::NonScalar { numel: self.nodes[loss.0].numel() });
        }
        self.backward_done = true;
        for node in &mut self.nodes {
            node.grad = Some(vec![0.0; node.data.len()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            // Take this node's grad out to appease the borrow checker; the
            // node never feeds itself, so the temporary move is safe.
            let g = self.nodes[i].grad.take().unwrap();
            match &self.records[i] {
                Record::Leaf => {}
                &Record::Add { lhs, rhs } => {
                    accumulate(self.nodes[lhs].grad.as_mut().unwrap(), &g, 1.0);
                    accumulate(self.nodes[rhs].grad.as_mut().unwrap(), &g, 1.0);
                }
                &Record::Sub { lhs, rhs } => {
                    accumulate(self.nodes[lhs].grad.as_mut().unwrap(), &g, 1.0);
                    accumulate(self.nodes[rhs].grad.as_mut().unwrap(), &g, -1.0);
                }
                &Record::Mul { lhs, rhs } => {
                    if lhs == rhs {
                        let x = self.nodes[lhs].data.clone();
                        let xg = self.nodes[lhs].grad.as_mut().unwrap();
                        for ((gi, xv), gx) in g.iter().zip(&x).zip(xg.iter_mut()) {
                            *gx += 2.0 * gi * xv;
                        }
                    } else {
                        let (a, b) = if lhs < rhs {
                            let (lo, hi) = self.nodes.split_at_mut(rhs);
                            (&mut lo[lhs], &mut hi[0])
                        } else {
                            let (lo, hi) = self.nodes.split_at_mut(lhs);
                            (&mut hi[0], &mut lo[rhs])
                        };
                        let ag = a.grad.as_mut().unwrap();
                        for ((agi, gi), bv) in ag.iter_mut().zip(&g).zip(&b.data) {
                            *agi += gi * bv;
                        }
                        let bg = b.grad.as_mut().unwrap();
                        for ((bgi, gi), av) in bg.iter_mut().zip(&g).zip(&a.data) {
                            *bgi += gi * av;
                        }
                    }
                }
                &Record::Scale { input, factor } => {
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &g, factor);
                }
                &Record::MatMul { lhs, rhs, m, k, n } => {
                    // dA = G B^T ; dB = A^T G
                    let bt = transpose_raw(&self.nodes[rhs].data, k, n);
                    let da = matmul_raw(&g, &bt, m, n, k);
                    let at = transpose_raw(&self.nodes[lhs].data, m, k);
                    let db = matmul_raw(&at, &g, k, m, n);
                    accumulate(self.nodes[lhs].grad.as_mut().unwrap(), &da, 1.0);
                    accumulate(self.nodes[rhs].grad.as_mut().unwrap(), &db, 1.0);
                }
                Record::Conv1d { input, kernel } => {
                    let (input, kernel) = (*input, *kernel);
                    let in_ch = self.nodes[input].shape[0];
                    let time = self.nodes[input].shape[1];
                    let out_ch = self.nodes[kernel].shape[0];
                    let width = self.nodes[kernel].shape[2];
                    let out_len = time - width + 1;
                    let x = self.nodes[input].data.clone();
                    let kdata = self.nodes[kernel].data.clone();
                    {
                        let kg = self.nodes[kernel].grad.as_mut().unwrap();
                        for o in 0..out_ch {
                            for c in 0..in_ch {
                                for j in 0..width {
                                    let mut acc = 0.0;
                                    for t in 0..out_len {
                                        acc += g[o * out_len + t] * x[c * time + t + j];
                                    }
                                    kg[(o * in_ch + c) * width + j] += acc;
                                }
                            }
                        }
                    }
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    for o in 0..out_ch {
                        for t in 0..out_len {
                            let gv = g[o * out_len + t];
                            for c in 0..in_ch {
                                let krow = &kdata[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
                                for (j, kv) in krow.iter().enumerate() {
                                    xg[c * time + t + j] += gv * kv;
                                }
                            }
                        }
                    }
                }
                Record::MaxPool1d { input, argmax } => {
                    let input = *input;
                    let argmax = argmax.clone();
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    for (out_idx, &src_idx) in argmax.iter().enumerate() {
                        xg[src_idx] += g[out_idx];
                    }
                }
                &Record::Sigmoid { input } => {
                    let out = &self.nodes[i].data;
                    let dg: Vec<f64> =
                        g.iter().zip(out).map(|(gi, &s)| gi * s * (1.0 - s)).collect();
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &dg, 1.0);
                }
                &Record::Tanh { input } => {
                    let out = &self.nodes[i].data;
                    let dg: Vec<f64> =
                        g.iter().zip(out).map(|(gi, &t)| gi * (1.0 - t * t)).collect();
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &dg, 1.0);
                }
                &Record::Exp { input } => {
                    let out = &self.nodes[i].data;
                    let dg: Vec<f64> = g.iter().zip(out).map(|(gi, &e)| gi * e).collect();
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &dg, 1.0);
                }
                &Record::Log { input } => {
                    let x = &self.nodes[input].data;
                    let dg: Vec<f64> = g.iter().zip(x).map(|(gi, &v)| gi / v).collect();
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &dg, 1.0);
                }
                &Record::SoftmaxRows { input, cols } => {
                    let p = &self.nodes[i].data;
                    let rows = p.len() / cols;
                    let mut dg = vec![0.0; p.len()];
                    for r in 0..rows {
                        let prow = &p[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = prow.iter().zip(grow).map(|(pi, gi)| pi * gi).sum();
                        for j in 0..cols {
                            dg[r * cols + j] = prow[j] * (grow[j] - dot);
                        }
                    }
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &dg, 1.0);
                }
                Record::Concat { inputs, axis } => {
                    let inputs = inputs.clone();
                    let axis = *axis;
                    let out_shape = self.nodes[i].shape.clone();
                    match (out_shape.len(), axis) {
                        (1, 0) | (2, 0) => {
                            let mut off = 0;
                            for id in inputs {
                                let len = self.nodes[id].data.len();
                                let slice = &g[off..off + len];
                                accumulate(self.nodes[id].grad.as_mut().unwrap(), slice, 1.0);
                                off += len;
                            }
                        }
                        (2, 1) => {
                            let rows = out_shape[0];
                            let total_cols = out_shape[1];
                            let mut col_off = 0;
                            for id in inputs {
                                let c = self.nodes[id].shape[1];
                                let pg = self.nodes[id].grad.as_mut().unwrap();
                                for r in 0..rows {
                                    for j in 0..c {
                                        pg[r * c + j] += g[r * total_cols + col_off + j];
                                    }
                                }
                                col_off += c;
                            }
                        }
                        _ => unreachable!("concat axis validated at forward time"),
                    }
                }
                &Record::Row { input, row } => {
                    let cols = g.len();
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    for (j, gi) in g.iter().enumerate() {
                        xg[row * cols + j] += gi;
                    }
                }
                Record::Embed { table, ids } => {
                    let table = *table;
                    let ids = ids.clone();
                    let dim = self.nodes[i].shape[1];
                    let tg = self.nodes[table].grad.as_mut().unwrap();
                    for (t, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            tg[id * dim + j] += g[t * dim + j];
                        }
                    }
                }
                &Record::Reshape { input } => {
                    accumulate(self.nodes[input].grad.as_mut().unwrap(), &g, 1.0);
                }
                &Record::Transpose { input } => {
                    let (c, r) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    // g has shape [c, r]; route back to [r, c].
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    for jc in 0..c {
                        for ir in 0..r {
                            xg[ir * c + jc] += g[jc * r + ir];
                        }
                    }
                }
                &Record::SumAll { input } => {
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    for v in xg.iter_mut() {
                        *v += g[0];
                    }
                }
                &Record::MeanAll { input } => {
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    let n = xg.len() as f64;
                    for v in xg.iter_mut() {
                        *v += g[0] / n;
                    }
                }
                &Record::MeanRows { input } => {
                    let (r, c) = (self.nodes[input].shape[0], self.nodes[input].shape[1]);
                    let xg = self.nodes[input].grad.as_mut().unwrap();
                    for ir in 0..r {
                        for j in 0..c {
                            xg[ir * c + j] += g[j] / r as f64;
                        }
                    }
                }
                &Record::Affine { weight, x, bias } => {
                    let in_dim = self.nodes[weight].shape[1];
                    let xv = self.nodes[x].data.clone();
                    let wv = self.nodes[weight].data.clone();
                    {
                        let wg = self.nodes[weight].grad.as_mut().unwrap();
                        for (o, gi) in g.iter().enumerate() {
                            for (j, xi) in xv.iter().enumerate() {
                                wg[o * in_dim + j] += gi * xi;
                            }
                        }
                    }
                    {
                        let xg = self.nodes[x].grad.as_mut().unwrap();
                        for (o, gi) in g.iter().enumerate() {
                            let row = &wv[o * in_dim..(o + 1) * in_dim];
                            for (j, wi) in row.iter().enumerate() {
                                xg[j] += gi * wi;
                            }
                        }
                    }
                    accumulate(self.nodes[bias].grad.as_mut().unwrap(), &g, 1.0);
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }
}

/// Parameters of one gated recurrent (LSTM) cell. Each gate applies an
/// affine map to `[x ; h]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmGates {
    pub w_input: TensorId,
    pub b_input: TensorId,
    pub w_forget: TensorId,
    pub b_forget: TensorId,
    pub w_candidate: TensorId,
    pub b_candidate: TensorId,
    pub w_output: TensorId,
    pub b_output: TensorId,
}

/// One step of a standard LSTM cell, composed from primitive ops:
/// input/forget/output gates (sigmoid) plus a tanh candidate.
/// `x: [d]`, `h_prev`/`c_prev: [hidden]`; gate weights are `[hidden, d+hidden]`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
    gates: &LstmGates,
) -> Result<(TensorId, TensorId)> {
    let xh = tape.concat(&[x, h_prev], 0)?;
    let pre_i = tape.affine(gates.w_input, xh, gates.b_input)?;
    let i = tape.sigmoid(pre_i);
    let pre_f = tape.affine(gates.w_forget, xh, gates.b_forget)?;
    let f = tape.sigmoid(pre_f);
    let pre_g = tape.affine(gates.w_candidate, xh, gates.b_candidate)?;
    let cand = tape.tanh(pre_g);
    let pre_o = tape.affine(gates.w_output, xh, gates.b_output)?;
    let o = tape.sigmoid(pre_o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, cand)?;
    let c_new = tape.add(keep, write)?;
    let c_act = tape.tanh(c_new);
    let h_new = tape.mul(o, c_act)?;
    Ok((h_new, c_new))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stable softmax of one row into `out`.
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn accumulate(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * factor;
    }
}
