//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] owns every tensor created during a forward pass and records the
//! primitive that produced it. [`Tape::backward`] replays the record in
//! reverse, accumulating gradients in tape order, which makes repeated runs
//! bit-identical. One tape corresponds to one forward/backward pair; tapes are
//! cheap to build and thrown away after use.

use crate::error::{Error, Result};
use std::cell::Cell;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Matmul {
        lhs: TensorId,
        rhs: TensorId,
        m: usize,
        k: usize,
        n: usize,
    },
    BiasAdd {
        input: TensorId,
        bias: TensorId,
    },
    Relu(TensorId),
    Softmax {
        input: TensorId,
        rows: usize,
        cols: usize,
    },
    CrossEntropyMean {
        logits: TensorId,
        labels: Vec<usize>,
        rows: usize,
        cols: usize,
    },
    L2SquaredNorm(TensorId),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed primitives. Nodes are appended in execution
/// order, so the vector itself is a topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

thread_local! {
    static BACKWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Total backward passes executed on the current thread. Per-thread because
/// tapes are single-threaded; concurrent tapes count on their own threads.
pub fn backward_pass_count() -> u64 {
    BACKWARD_PASSES.with(|c| c.get())
}

/// Snapshot handle for counting backward passes over a region of work.
#[derive(Debug, Clone, Copy)]
pub struct BackwardPassCounter {
    start: u64,
}

impl BackwardPassCounter {
    pub fn start() -> Self {
        Self {
            start: backward_pass_count(),
        }
    }

    /// Backward passes executed since this counter was started.
    pub fn since_start(&self) -> u64 {
        backward_pass_count() - self.start
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        let len = data.len();
        self.nodes.push(Node {
            shape,
            data,
            grad: vec![0.0; len],
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Register an input tensor.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<TensorId> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(shape.to_vec(), data, requires_grad, Op::Leaf))
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> Result<f64> {
        let node = &self.nodes[id.0];
        if node.data.len() != 1 {
            return Err(Error::NonScalarOutput {
                shape: node.shape.clone(),
            });
        }
        Ok(node.data[0])
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    /// Elementwise addition of identically shaped tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(shape, data, rg, Op::Add(a, b)))
    }

    /// Elementwise subtraction of identically shaped tensors.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(shape, data, rg, Op::Sub(a, b)))
    }

    /// Matrix product of `[m,k] x [k,n]` tensors.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        {
            let lhs = &self.nodes[a.0].data;
            let rhs = &self.nodes[b.0].data;
            for i in 0..m {
                for p in 0..k {
                    let l = lhs[i * k + p];
                    if l == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        data[i * n + j] += l * rhs[p * n + j];
                    }
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(vec![m, n], data, rg, Op::Matmul { lhs: a, rhs: b, m, k, n }))
    }

    /// Broadcast-add a `[n]` bias across the rows of a `[rows,n]` tensor.
    pub fn bias_add(&mut self, input: TensorId, bias: TensorId) -> Result<TensorId> {
        let (si, sb) = (&self.nodes[input.0].shape, &self.nodes[bias.0].shape);
        if si.len() != 2 || sb.len() != 1 || si[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                lhs: si.clone(),
                rhs: sb.clone(),
            });
        }
        let (rows, cols) = (si[0], si[1]);
        let mut data = self.nodes[input.0].data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += self.nodes[bias.0].data[c];
            }
        }
        let rg = self.requires(input) || self.requires(bias);
        Ok(self.push(vec![rows, cols], data, rg, Op::BiasAdd { input, bias }))
    }

    /// Elementwise `max(x, 0)`. The subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, input: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.nodes[input.0].data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[input.0].shape.clone();
        let rg = self.requires(input);
        Ok(self.push(shape, data, rg, Op::Relu(input)))
    }

    /// Row-wise softmax of a `[rows,cols]` tensor, computed with row-max
    /// subtraction.
    pub fn softmax(&mut self, input: TensorId) -> Result<TensorId> {
        let shape = self.nodes[input.0].shape.clone();
        let (rows, cols) = match shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    lhs: shape,
                    rhs: vec![],
                })
            }
        };
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.nodes[input.0].data[r * cols..(r + 1) * cols];
            softmax_row(row, &mut data[r * cols..(r + 1) * cols]);
        }
        let rg = self.requires(input);
        Ok(self.push(shape, data, rg, Op::Softmax { input, rows, cols }))
    }

    /// Mean cross-entropy of `[rows,cols]` logits against integer labels.
    /// Computed as `logsumexp(row) - row[label]` per row for stability.
    pub fn cross_entropy_mean(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let shape = self.nodes[logits.0].shape.clone();
        let (rows, cols) = match shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "cross_entropy",
                    lhs: shape,
                    rhs: vec![labels.len()],
                })
            }
        };
        if labels.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![rows, cols],
                rhs: vec![labels.len()],
            });
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= cols {
                return Err(Error::LabelOutOfRange { label, classes: cols });
            }
            let row = &self.nodes[logits.0].data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let mean = total / rows as f64;
        let rg = self.requires(logits);
        Ok(self.push(
            vec![1],
            vec![mean],
            rg,
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
                rows,
                cols,
            },
        ))
    }

    /// Cross-entropy of a single logit row against one label.
    pub fn cross_entropy(&mut self, logits: TensorId, label: usize) -> Result<TensorId> {
        self.cross_entropy_mean(logits, &[label])
    }

    /// Squared l2 norm: sum of squares of every element, as a scalar.
    pub fn l2_squared_norm(&mut self, input: TensorId) -> Result<TensorId> {
        let sum: f64 = self.nodes[input.0].data.iter().map(|v| v * v).sum();
        let rg = self.requires(input);
        Ok(self.push(vec![1], vec![sum], rg, Op::L2SquaredNorm(input)))
    }

    /// Accumulate gradients of every `requires_grad` tensor reachable from the
    /// given scalar output. Visits each recorded operation exactly once, in
    /// reverse tape order.
    pub fn backward(&mut self, output: TensorId) -> Result<()> {
        let out = &self.nodes[output.0];
        if out.data.len() != 1 {
            return Err(Error::NonScalarOutput {
                shape: out.shape.clone(),
            });
        }
        BACKWARD_PASSES.with(|c| c.set(c.get() + 1));
        self.nodes[output.0].grad[0] = 1.0;

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = self.nodes[idx].grad.clone();
                    self.accumulate(a, |gi, i| gi + g[i]);
                    self.accumulate(b, |gi, i| gi + g[i]);
                }
                Op::Sub(a, b) => {
                    let g = self.nodes[idx].grad.clone();
                    self.accumulate(a, |gi, i| gi + g[i]);
                    self.accumulate(b, |gi, i| gi - g[i]);
                }
                Op::Matmul { lhs, rhs, m, k, n } => {
                    let g = self.nodes[idx].grad.clone();
                    if self.requires(lhs) {
                        let rhs_data = self.nodes[rhs.0].data.clone();
                        let gl = &mut self.nodes[lhs.0].grad;
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * rhs_data[p * n + j];
                                }
                                gl[i * k + p] += acc;
                            }
                        }
                    }
                    if self.requires(rhs) {
                        let lhs_data = self.nodes[lhs.0].data.clone();
                        let gr = &mut self.nodes[rhs.0].grad;
                        for p in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += lhs_data[i * k + p] * g[i * n + j];
                                }
                                gr[p * n + j] += acc;
                            }
                        }
                    }
                }
                Op::BiasAdd { input, bias } => {
                    let g = self.nodes[idx].grad.clone();
                    let cols = self.nodes[bias.0].shape[0];
                    self.accumulate(input, |gi, i| gi + g[i]);
                    if self.requires(bias) {
                        let gb = &mut self.nodes[bias.0].grad;
                        for (i, gv) in g.iter().enumerate() {
                            gb[i % cols] += gv;
                        }
                    }
                }
                Op::Relu(input) => {
                    let g = self.nodes[idx].grad.clone();
                    let x = self.nodes[input.0].data.clone();
                    self.accumulate(input, |gi, i| if x[i] > 0.0 { gi + g[i] } else { gi });
                }
                Op::Softmax { input, rows, cols } => {
                    let g = self.nodes[idx].grad.clone();
                    let s = self.nodes[idx].data.clone();
                    if self.requires(input) {
                        let gi = &mut self.nodes[input.0].grad;
                        for r in 0..rows {
                            let base = r * cols;
                            let dot: f64 = (0..cols).map(|c| g[base + c] * s[base + c]).sum();
                            for c in 0..cols {
                                gi[base + c] += s[base + c] * (g[base + c] - dot);
                            }
                        }
                    }
                }
                Op::CrossEntropyMean {
                    logits,
                    labels,
                    rows,
                    cols,
                } => {
                    let g = self.nodes[idx].grad[0];
                    if self.requires(logits) {
                        let data = self.nodes[logits.0].data.clone();
                        let gl = &mut self.nodes[logits.0].grad;
                        let scale = g / rows as f64;
                        let mut probs = vec![0.0; cols];
                        for (r, &label) in labels.iter().enumerate() {
                            let row = &data[r * cols..(r + 1) * cols];
                            softmax_row(row, &mut probs);
                            for c in 0..cols {
                                let onehot = if c == label { 1.0 } else { 0.0 };
                                gl[r * cols + c] += scale * (probs[c] - onehot);
                            }
                        }
                    }
                }
                Op::L2SquaredNorm(input) => {
                    let g = self.nodes[idx].grad[0];
                    let x = self.nodes[input.0].data.clone();
                    self.accumulate(input, |gi, i| gi + 2.0 * x[i] * g);
                }
            }
        }
        Ok(())
    }

    fn accumulate<F: Fn(f64, usize) -> f64>(&mut self, id: TensorId, f: F) {
        if !self.requires(id) {
            return;
        }
        let grad = &mut self.nodes[id.0].grad;
        for (i, g) in grad.iter_mut().enumerate() {
            *g = f(*g, i);
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Central finite differences `(f(θ+h·e_i) − f(θ−h·e_i)) / (2h)` per index.
/// Test oracle for gradients; independent of the tape.
pub fn finite_difference_gradient<F>(mut func: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut perturbed = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        perturbed[i] = theta[i] + h;
        let plus = func(&perturbed);
        perturbed[i] = theta[i] - h;
        let minus = func(&perturbed);
        perturbed[i] = theta[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}
