//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Nodes are appended in execution order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use super::kernels::{self, AttnShape};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddBias(Var, Var),
    Gelu(Var),
    Sin(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        means: Vec<F>,
        rstds: Vec<F>,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<F>,
    },
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to every leaf that reaches it.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `like` when the root does not depend on it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor<F>) -> Tensor<F> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2<F: Scalar>(t: &Tensor<F>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension {
            op,
            left: s.to_vec(),
            right: vec![],
        }),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_into(self.value(a).data(), self.value(b).data(), out.data_mut(), m, k, n, false);
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul_bt")?;
        let (n, k2) = dims2(self.value(b), "matmul_bt")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_bt",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_bt_into(self.value(a).data(), self.value(b).data(), out.data_mut(), m, k, n, false);
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMulBt(a, b), needs))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op,
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
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
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let needs = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), needs)
    }

    /// Adds a length-`n` bias to every row of an `m×n` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "add_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                left: self.value(x).shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for r in 0..m {
            for (o, &bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let needs = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), needs))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        let needs = self.needs(&[x]);
        self.push(out, Op::Gelu(x), needs)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.sin());
        let needs = self.needs(&[x]);
        self.push(out, Op::Sin(x), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        if eps <= F::zero() {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let (m, n) = dims2(self.value(x), "layer_norm")?;
        for p in [gain, bias] {
            if self.value(p).len() != n {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    left: self.value(x).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let mut out = Tensor::zeros(&[m, n]);
        let (means, rstds) = kernels::layer_norm_forward(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
            n,
            out.data_mut(),
        );
        let needs = self.needs(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, means, rstds }, needs))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "softmax_rows")?;
        let mut out = Tensor::zeros(&[m, n]);
        for r in 0..m {
            kernels::softmax_row(self.value(x).row(r), &mut out.data_mut()[r * n..(r + 1) * n]);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), needs))
    }

    /// Negative log-probability of each row's target under a row softmax.
    pub fn cross_entropy_per_token(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, v) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != t {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![t, v],
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(Error::Index(format!("target {bad} outside vocabulary of {v}")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![F::zero(); t * v];
        let mut losses = Vec::with_capacity(t);
        for (r, &y) in targets.iter().enumerate() {
            let row = &x[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let total: F = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + total.ln();
            losses.push(lse - row[y]);
            for (p, &z) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Tensor::new(vec![t], losses)?,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Gathers rows of a `[rows×d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = dims2(self.value(table), "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!("embedding id {bad} outside table of {rows} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let needs = self.needs(&[table]);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, needs))
    }

    /// Multi-head causal self-attention over `[batch*seq, heads*head_dim]` projections.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, width) = dims2(self.value(q), "causal_attention")?;
        for other in [k, v] {
            self.same_shape(q, other, "causal_attention")?;
        }
        if rows != batch * seq || heads == 0 || width % heads != 0 {
            return Err(Error::Dimension {
                op: "causal_attention",
                left: vec![rows, width],
                right: vec![batch, seq, heads],
            });
        }
        let shape = AttnShape {
            batch,
            seq,
            heads,
            head_dim: width / heads,
        };
        let mut out = Tensor::zeros(&[rows, width]);
        let probs = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            shape,
            out.data_mut(),
        );
        let needs = self.needs(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, shape, probs }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: F = self.value(x).data().iter().copied().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// `Σ weights[i]·x[i]` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[F]) -> Result<Var> {
        if self.value(x).len() != weights.len() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: self.value(x).shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let total: F = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(&a, &w)| a * w)
            .sum();
        let needs = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    /// Gradients of the scalar `root` with respect to every leaf it depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        if root.0 >= self.nodes.len() {
            return Err(Error::contract("backward root is not on this tape"));
        }
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![F::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("leaf grad shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<F>>], var: Var) -> Option<&'a mut Vec<F>> {
        if !self.nodes[var.0].needs_grad {
            return None;
        }
        let len = self.nodes[var.0].value.len();
        Some(grads[var.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn fresh(&self, var: Var) -> Option<Vec<F>> {
        let node = &self.nodes[var.0];
        node.needs_grad.then(|| vec![F::zero(); node.value.len()])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], var: Var, buf: Option<Vec<F>>) {
        if let (Some(buf), Some(slot)) = (buf, self.slot(grads, var)) {
            slot.iter_mut().zip(&buf).for_each(|(a, &b)| *a += b);
        }
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    kernels::matmul_bt_into(g, self.value(*b).data(), da, m, n, k, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    kernels::matmul_at_into(self.value(*a).data(), g, db, m, k, n, true);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[0];
                if let Some(da) = self.slot(grads, *a) {
                    kernels::matmul_into(g, self.value(*b).data(), da, m, n, k, true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    kernels::matmul_at_into(g, self.value(*a).data(), db, m, n, k, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
                let n = self.value(*bias).len();
                if let Some(d) = self.slot(grads, *bias) {
                    for row in g.chunks_exact(n) {
                        d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..d.len() {
                        d[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                }
            }
            Op::Sin(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..d.len() {
                        d[i] += g[i] * xv[i].cos();
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, means, rstds } => {
                let n = self.value(*gain).len();
                let mut dx = self.fresh(*x);
                let mut dgain = self.fresh(*gain);
                let mut dbias = self.fresh(*bias);
                kernels::layer_norm_backward(
                    self.value(*x).data(),
                    self.value(*gain).data(),
                    means,
                    rstds,
                    g,
                    n,
                    dx.as_deref_mut(),
                    dgain.as_deref_mut(),
                    dbias.as_deref_mut(),
                );
                for (var, buf) in [(*x, dx), (*gain, dgain), (*bias, dbias)] {
                    self.accumulate(grads, var, buf);
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let (m, n) = node.value.dims2().unwrap();
                if let Some(d) = self.slot(grads, *x) {
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            d[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.value(*logits).shape()[1];
                if let Some(d) = self.slot(grads, *logits) {
                    for (r, &y) in targets.iter().enumerate() {
                        let gr = g[r];
                        if gr == F::zero() {
                            continue;
                        }
                        let p = &probs[r * v..(r + 1) * v];
                        let dr = &mut d[r * v..(r + 1) * v];
                        for j in 0..v {
                            dr[j] += gr * p[j];
                        }
                        dr[y] -= gr;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).shape()[1];
                if let Some(dt) = self.slot(grads, *table) {
                    for (r, &i) in ids.iter().enumerate() {
                        let src = &g[r * d..(r + 1) * d];
                        dt[i * d..(i + 1) * d].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Attention { q, k, v, shape, probs } => {
                let len = node.value.len();
                let mut dq = vec![F::zero(); len];
                let mut dk = vec![F::zero(); len];
                let mut dv = vec![F::zero(); len];
                kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    *shape,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                for (var, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    self.accumulate(grads, var, Some(buf));
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(weights).for_each(|(d, &w)| *d += g[0] * w);
                }
            }
        }
    }
}
