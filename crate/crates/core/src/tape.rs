//! Reverse-mode automatic differentiation over dense scalar arrays.
//!
//! Operations are recorded on an append-only tape during the forward pass and
//! replayed in reverse to deposit adjoints. Node ids strictly increase from
//! inputs to outputs, so the provenance graph is acyclic by construction.
//! `backward` overwrites the gradient store on every call; replaying it twice
//! without touching the tape yields identical gradients.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{PgtError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive logit bias for the fused attention op. Entries flagged in `mask`
/// receive exactly zero attention weight after the softmax; their `values`
/// hold a large negative sentinel so intermediate arithmetic stays finite.
#[derive(Debug, Clone)]
pub struct AttnBias<T> {
    pub values: Arc<Tensor<T>>,
    pub mask: Option<Arc<Vec<bool>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Sin,
    Exp,
    Log,
    Square,
    Tanh,
    Gelu,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    SoftmaxRows {
        x: Var,
    },
    LayerNorm {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    SliceRows {
        x: Var,
        r0: usize,
        r1: usize,
    },
    SliceCols {
        x: Var,
        c0: usize,
        c1: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    RepeatRows {
        x: Var,
        n: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        scale: T,
        probs: Tensor<T>,
        mask: Option<Arc<Vec<bool>>>,
    },
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Unary { kind, .. } => match kind {
            UnaryKind::Sin => "sin",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Square => "square",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Softplus => "softplus",
        },
        Op::Binary { kind, .. } => match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        },
        Op::Scale { .. } => "scale",
        Op::Matmul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::LayerNorm { .. } => "layernorm",
        Op::SumAll { .. } => "sum_all",
        Op::MeanAll { .. } => "mean_all",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols { .. } => "concat_cols",
        Op::ConcatRows { .. } => "concat_rows",
        Op::RepeatRows { .. } => "repeat_rows",
        Op::Attention { .. } => "attention",
    }
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

pub const LAYERNORM_EPS: f64 = 1e-5;

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Learnable leaf; participates in backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-learnable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.scalar_value()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoint deposited by the last `backward`, if any reached this node.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Attention probability matrices of every fused attention op recorded
    /// so far, in recording order. Lets invariant checks inspect post-softmax
    /// weights at each layer and head.
    pub fn attention_probs(&self) -> Vec<&Tensor<T>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { probs, .. } => Some(probs),
                _ => None,
            })
            .collect()
    }

    /// Counts of each operation kind recorded so far.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for node in &self.nodes {
            *counts.entry(op_name(&node.op)).or_insert(0) += 1;
        }
        counts
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── Elementwise primitives ───────────────────────────────────────────

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if kind == UnaryKind::Log {
            if let Some(&bad) = xv.data().iter().find(|&&v| v <= T::zero()) {
                return Err(PgtError::Domain {
                    op: "log",
                    detail: format!("operand {bad} is not positive"),
                });
            }
        }
        let value = match kind {
            UnaryKind::Sin => xv.map(|v| v.sin()),
            UnaryKind::Exp => xv.map(|v| v.exp()),
            UnaryKind::Log => xv.map(|v| v.ln()),
            UnaryKind::Square => xv.map(|v| v * v),
            UnaryKind::Tanh => xv.map(|v| v.tanh()),
            UnaryKind::Gelu => xv.map(gelu),
            UnaryKind::Softplus => xv.map(softplus),
        };
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::Unary { kind, x }))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sin, x).expect("sin is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x).expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x).expect("square is total")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x).expect("tanh is total")
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Gelu, x).expect("gelu is total")
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x).expect("softplus is total")
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        if kind == BinaryKind::Div {
            if let Some(&bad) = self.nodes[b.0].value.data().iter().find(|&&v| v == T::zero()) {
                return Err(PgtError::Domain {
                    op: "div",
                    detail: format!("divisor {bad} is zero"),
                });
            }
        }
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = match kind {
            BinaryKind::Add => av.broadcast_zip(bv, "add", |x, y| x + y)?,
            BinaryKind::Sub => av.broadcast_zip(bv, "sub", |x, y| x - y)?,
            BinaryKind::Mul => av.broadcast_zip(bv, "mul", |x, y| x * y)?,
            BinaryKind::Div => av.broadcast_zip(bv, "div", |x, y| x / y)?,
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.nodes[x.0].value.map(|v| v * c);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::Scale { x, c })
    }

    // ── Linear algebra ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.transpose()?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::Transpose { x }))
    }

    // ── Structured ops ───────────────────────────────────────────────────

    /// Row-wise softmax. Entries flagged in `mask` map to exactly 0 and a row
    /// that is entirely masked is an error. The backward rule needs only the
    /// forward output: masked entries carry zero probability and therefore
    /// zero adjoint.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<Arc<Vec<bool>>>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let value = masked_softmax_rows(xv, mask.as_deref().map(|m| m.as_slice()))?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::SoftmaxRows { x }))
    }

    /// Row normalization to zero mean and unit variance (no learnable
    /// scale/shift), with epsilon added to the variance.
    pub fn layernorm(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 || xv.cols() < 2 {
            return Err(PgtError::InvalidShape {
                op: "layernorm",
                shape: xv.shape().to_vec(),
                detail: "expected rank 2 with at least 2 columns".into(),
            });
        }
        let (m, d) = (xv.rows(), xv.cols());
        let eps = T::cast(LAYERNORM_EPS);
        let inv_d = T::one() / T::cast(d as f64);
        let mut out = Tensor::zeros(vec![m, d]);
        for i in 0..m {
            let row = xv.row(i);
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let inv_std = T::one() / (var + eps).sqrt();
            for j in 0..d {
                out.set(i, j, (row[j] - mean) * inv_std);
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(out, rg, Op::LayerNorm { x }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.nodes[x.0].value.sum());
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel();
        let value = Tensor::scalar(self.nodes[x.0].value.sum() / T::cast(n as f64));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::MeanAll { x })
    }

    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 || r1 > xv.rows() || r0 > r1 {
            return Err(PgtError::InvalidShape {
                op: "slice_rows",
                shape: xv.shape().to_vec(),
                detail: format!("rows {r0}..{r1} out of bounds"),
            });
        }
        let c = xv.cols();
        let data = xv.data()[r0 * c..r1 * c].to_vec();
        let value = Tensor::new(vec![r1 - r0, c], data);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::SliceRows { x, r0, r1 }))
    }

    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 || c1 > xv.cols() || c0 > c1 {
            return Err(PgtError::InvalidShape {
                op: "slice_cols",
                shape: xv.shape().to_vec(),
                detail: format!("cols {c0}..{c1} out of bounds"),
            });
        }
        let (m, c) = (xv.rows(), xv.cols());
        let w = c1 - c0;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&xv.data()[i * c + c0..i * c + c1]);
        }
        let value = Tensor::new(vec![m, w], data);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::SliceCols { x, c0, c1 }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(PgtError::InvalidInput("concat_cols of no parts".into()));
        }
        let m = self.nodes[parts[0].0].value.rows();
        let mut width = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != 2 || v.rows() != m {
                return Err(PgtError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            width += v.cols();
        }
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let value = Tensor::new(vec![m, width], data);
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            rg,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(PgtError::InvalidInput("concat_rows of no parts".into()));
        }
        let cols = self.nodes[parts[0].0].value.cols();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != 2 || v.cols() != cols {
                return Err(PgtError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Tensor::new(vec![rows, cols], data);
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            rg,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Tile a `[1, d]` tensor into `[n, d]`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 || xv.rows() != 1 {
            return Err(PgtError::InvalidShape {
                op: "repeat_rows",
                shape: xv.shape().to_vec(),
                detail: "expected a single row".into(),
            });
        }
        let d = xv.cols();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(xv.row(0));
        }
        let value = Tensor::new(vec![n, d], data);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::RepeatRows { x, n }))
    }

    /// Fused scaled-dot-product attention with an optional additive logit
    /// bias: `softmax(q kᵀ · scale + bias) v`. Storing only the attention
    /// probabilities keeps tape memory linear in one `m×p` matrix instead of
    /// the four that the composed primitives would record. When the bias
    /// carries a causal mask, scores are computed only for admissible pairs
    /// — with a diffusive bias most pairs are masked, which turns the
    /// quadratic score pass into a near-linear one.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<&AttnBias<T>>,
        scale: T,
    ) -> Result<Var> {
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        if qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2 || qv.cols() != kv.cols() {
            return Err(PgtError::ShapeMismatch {
                op: "attention(qk)",
                lhs: qv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        if kv.rows() != vv.rows() {
            return Err(PgtError::ShapeMismatch {
                op: "attention(kv)",
                lhs: kv.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let (m, p, d) = (qv.rows(), kv.rows(), kv.cols());
        if let Some(b) = bias {
            if b.values.shape() != [m, p] {
                return Err(PgtError::ShapeMismatch {
                    op: "attention(bias)",
                    lhs: vec![m, p],
                    rhs: b.values.shape().to_vec(),
                });
            }
        }
        let mask = bias.and_then(|b| b.mask.as_deref().map(|mk| mk.as_slice()));
        let probs = match mask {
            Some(mk) => {
                // Sentinel-valued masked entries never survive the softmax;
                // skip their dot products entirely.
                let mut scores = Tensor::zeros(vec![m, p]);
                let bias_vals = bias.map(|b| b.values.data());
                for i in 0..m {
                    let q_row = qv.row(i);
                    for j in 0..p {
                        if mk[i * p + j] {
                            continue;
                        }
                        let k_row = kv.row(j);
                        let mut dot = T::zero();
                        for c in 0..d {
                            dot += q_row[c] * k_row[c];
                        }
                        let mut s = dot * scale;
                        if let Some(bv) = bias_vals {
                            s += bv[i * p + j];
                        }
                        scores.set(i, j, s);
                    }
                }
                masked_softmax_rows(&scores, Some(mk))?
            }
            None => {
                let kt = kv.transpose()?;
                let mut scores = qv.matmul(&kt)?;
                for s in scores.data_mut() {
                    *s *= scale;
                }
                if let Some(b) = bias {
                    for (s, &g) in scores.data_mut().iter_mut().zip(b.values.data()) {
                        *s += g;
                    }
                }
                masked_softmax_rows(&scores, None)?
            }
        };
        let out = probs.matmul(vv)?;
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            out,
            rg,
            Op::Attention {
                q,
                k,
                v,
                scale,
                probs,
                mask: bias.and_then(|b| b.mask.clone()),
            },
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. The gradient store is rebuilt from
    /// scratch on every call (adjoints are overwritten, not accumulated
    /// across runs).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_val = &self.nodes[root.0].value;
        if !root_val.shape().is_empty() {
            return Err(PgtError::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=root.0).rev() {
            let Some(out_grad) = self.grads[id].take() else {
                continue;
            };
            // Ops only need read access to earlier nodes; the op itself is
            // cloned to release the borrow on self.nodes.
            let op = self.nodes[id].op.clone();
            self.backprop_op(id, &op, &out_grad)?;
            self.grads[id] = Some(out_grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, grad: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_scaled(&grad, T::one()),
            slot @ None => *slot = Some(grad),
        }
    }

    fn backprop_op(&mut self, out_id: usize, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                let xv = &self.nodes[x.0].value;
                let dx = match kind {
                    UnaryKind::Sin => xv.zip_grad(g, |x, dy| dy * x.cos()),
                    UnaryKind::Exp => self.nodes[out_id].value.zip_grad(g, |y, dy| dy * y),
                    UnaryKind::Log => xv.zip_grad(g, |x, dy| dy / x),
                    UnaryKind::Square => xv.zip_grad(g, |x, dy| dy * (x + x)),
                    UnaryKind::Tanh => self.nodes[out_id]
                        .value
                        .zip_grad(g, |y, dy| dy * (T::one() - y * y)),
                    UnaryKind::Gelu => xv.zip_grad(g, |x, dy| dy * gelu_deriv(x)),
                    UnaryKind::Softplus => xv.zip_grad(g, |x, dy| dy * sigmoid(x)),
                };
                self.accumulate(*x, dx);
            }
            Op::Binary { kind, a, b } => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let (da, db) = match kind {
                    BinaryKind::Add => (g.clone(), g.clone()),
                    BinaryKind::Sub => (g.clone(), g.map(|v| -v)),
                    BinaryKind::Mul => (
                        g.broadcast_zip(&bv, "mul_bwd", |dy, b| dy * b)?,
                        g.broadcast_zip(&av, "mul_bwd", |dy, a| dy * a)?,
                    ),
                    BinaryKind::Div => {
                        let da = g.broadcast_zip(&bv, "div_bwd", |dy, b| dy / b)?;
                        let quotient = av.broadcast_zip(&bv, "div_bwd", |a, b| a / (b * b))?;
                        let db = g.broadcast_zip(&quotient, "div_bwd", |dy, q| -dy * q)?;
                        (da, db)
                    }
                };
                self.accumulate(*a, da.reduce_to_shape(av.shape()));
                self.accumulate(*b, db.reduce_to_shape(bv.shape()));
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(*x, g.map(|v| v * c));
            }
            Op::Matmul { a, b } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da = g.matmul(&bv.transpose()?)?;
                let db = av.tmatmul(g)?;
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Transpose { x } => {
                self.accumulate(*x, g.transpose()?);
            }
            Op::SoftmaxRows { x } => {
                let y = &self.nodes[out_id].value;
                self.accumulate(*x, softmax_rows_backward(y, g));
            }
            Op::LayerNorm { x } => {
                let xv = &self.nodes[x.0].value;
                let y = &self.nodes[out_id].value;
                let (m, d) = (xv.rows(), xv.cols());
                let eps = T::cast(LAYERNORM_EPS);
                let inv_d = T::one() / T::cast(d as f64);
                let mut dx = Tensor::zeros(vec![m, d]);
                for i in 0..m {
                    let row = xv.row(i);
                    let mut mean = T::zero();
                    for &v in row {
                        mean += v;
                    }
                    mean *= inv_d;
                    let mut var = T::zero();
                    for &v in row {
                        let c = v - mean;
                        var += c * c;
                    }
                    var *= inv_d;
                    let inv_std = T::one() / (var + eps).sqrt();
                    let gy = g.row(i);
                    let yy = y.row(i);
                    let mut mean_g = T::zero();
                    let mut mean_gy = T::zero();
                    for j in 0..d {
                        mean_g += gy[j];
                        mean_gy += gy[j] * yy[j];
                    }
                    mean_g *= inv_d;
                    mean_gy *= inv_d;
                    for j in 0..d {
                        dx.set(i, j, inv_std * (gy[j] - mean_g - yy[j] * mean_gy));
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::SumAll { x } => {
                let s = g.scalar_value();
                let shape = self.nodes[x.0].value.shape().to_vec();
                self.accumulate(*x, Tensor::full(shape, s));
            }
            Op::MeanAll { x } => {
                let n = self.nodes[x.0].value.numel();
                let s = g.scalar_value() / T::cast(n as f64);
                let shape = self.nodes[x.0].value.shape().to_vec();
                self.accumulate(*x, Tensor::full(shape, s));
            }
            Op::SliceRows { x, r0, r1 } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let c = shape[1];
                let mut dx = Tensor::zeros(shape);
                dx.data_mut()[r0 * c..r1 * c].copy_from_slice(g.data());
                self.accumulate(*x, dx);
            }
            Op::SliceCols { x, c0, c1 } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (m, c) = (shape[0], shape[1]);
                let w = c1 - c0;
                let mut dx = Tensor::zeros(shape);
                for i in 0..m {
                    dx.data_mut()[i * c + c0..i * c + c1].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(*x, dx);
            }
            Op::ConcatCols { parts } => {
                let m = g.rows();
                let mut c0 = 0;
                for &p in parts {
                    let pv_shape = self.nodes[p.0].value.shape().to_vec();
                    let w = pv_shape[1];
                    let mut dp = Tensor::zeros(pv_shape);
                    for i in 0..m {
                        dp.data_mut()[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * g.cols() + c0..i * g.cols() + c0 + w]);
                    }
                    self.accumulate(p, dp);
                    c0 += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut r0 = 0;
                for &p in parts {
                    let shape = self.nodes[p.0].value.shape().to_vec();
                    let (rows, cols) = (shape[0], shape[1]);
                    let mut dp = Tensor::zeros(shape);
                    dp.data_mut()
                        .copy_from_slice(&g.data()[r0 * cols..(r0 + rows) * cols]);
                    self.accumulate(p, dp);
                    r0 += rows;
                }
            }
            Op::RepeatRows { x, n } => {
                let d = self.nodes[x.0].value.cols();
                let mut dx = Tensor::zeros(vec![1, d]);
                for i in 0..*n {
                    for j in 0..d {
                        dx.data_mut()[j] += g.data()[i * d + j];
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                scale,
                probs,
                mask,
            } => {
                let qv = &self.nodes[q.0].value;
                let kv = &self.nodes[k.0].value;
                let vv = &self.nodes[v.0].value;
                let dv = probs.tmatmul(g)?;
                // Masked probabilities are exactly zero, so their adjoint
                // never propagates; compute dprobs only where needed.
                let dprobs = match mask.as_deref() {
                    Some(mk) => {
                        let (m, p) = (probs.rows(), probs.cols());
                        let dvdim = vv.cols();
                        let mut out = Tensor::zeros(vec![m, p]);
                        for i in 0..m {
                            let g_row = g.row(i);
                            for j in 0..p {
                                if mk[i * p + j] {
                                    continue;
                                }
                                let v_row = vv.row(j);
                                let mut dot = T::zero();
                                for c in 0..dvdim {
                                    dot += g_row[c] * v_row[c];
                                }
                                out.set(i, j, dot);
                            }
                        }
                        out
                    }
                    None => g.matmul(&vv.transpose()?)?,
                };
                let mut dscores = softmax_rows_backward(probs, &dprobs);
                for s in dscores.data_mut() {
                    *s *= *scale;
                }
                let dq = dscores.matmul(kv)?;
                let dk = dscores.tmatmul(qv)?;
                self.accumulate(*q, dq);
                self.accumulate(*k, dk);
                self.accumulate(*v, dv);
            }
        }
        Ok(())
    }
}

// ── Shared kernels ──────────────────────────────────────────────────────

/// Row softmax with explicit masking: masked entries are exactly 0 in the
/// output rather than relying on exp underflow of the logit sentinel.
pub fn masked_softmax_rows<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let (m, n) = match x.rank() {
        2 => (x.rows(), x.cols()),
        _ => {
            return Err(PgtError::InvalidShape {
                op: "softmax_rows",
                shape: x.shape().to_vec(),
                detail: "expected rank 2".into(),
            })
        }
    };
    if let Some(mk) = mask {
        if mk.len() != m * n {
            return Err(PgtError::InvalidShape {
                op: "softmax_rows",
                shape: x.shape().to_vec(),
                detail: format!("mask length {} does not match", mk.len()),
            });
        }
    }
    let masked_at = |i: usize, j: usize| mask.map(|mk| mk[i * n + j]).unwrap_or(false);
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let row = x.row(i);
        let mut max = T::neg_infinity();
        let mut any = false;
        for (j, &v) in row.iter().enumerate() {
            if !masked_at(i, j) {
                any = true;
                if v > max {
                    max = v;
                }
            }
        }
        if !any {
            return Err(PgtError::DegenerateSoftmaxRow { row: i });
        }
        let mut sum = T::zero();
        let mut exps = vec![T::zero(); n];
        for (j, &v) in row.iter().enumerate() {
            if !masked_at(i, j) {
                let e = (v - max).exp();
                exps[j] = e;
                sum += e;
            }
        }
        for (j, e) in exps.into_iter().enumerate() {
            if !masked_at(i, j) {
                out.set(i, j, e / sum);
            }
        }
    }
    Ok(out)
}

/// Adjoint of a row softmax given its output `y` and upstream `dy`:
/// `dx = y ⊙ (dy − Σ_j dy_j y_j)` per row. Masked entries have `y = 0` and
/// therefore receive zero adjoint automatically.
fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (y.rows(), y.cols());
    let mut dx = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let yr = y.row(i);
        let gr = dy.row(i);
        let mut dot = T::zero();
        for j in 0..n {
            dot += yr[j] * gr[j];
        }
        for j in 0..n {
            dx.set(i, j, yr[j] * (gr[j] - dot));
        }
    }
    dx
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_CUBIC: f64 = 0.044715;

/// Tanh-form GELU: `0.5·x·(1 + tanh(√(2/π)(x + 0.044715·x³)))`.
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::FRAC_2_PI().sqrt();
    let k = T::cast(GELU_CUBIC);
    let u = c * (x + k * x * x * x);
    T::cast(0.5) * x * (T::one() + u.tanh())
}

fn gelu_deriv<T: Scalar>(x: T) -> T {
    let c = T::FRAC_2_PI().sqrt();
    let k = T::cast(GELU_CUBIC);
    let three = T::cast(3.0);
    let half = T::cast(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

impl<T: Scalar> Tensor<T> {
    /// Elementwise `f(self, grad)`; shapes must match.
    fn zip_grad(&self, grad: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        self.zip_same_shape(grad, f)
    }
}
