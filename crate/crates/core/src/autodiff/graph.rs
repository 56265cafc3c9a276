//! Reverse-mode tape.
//!
//! A [`Graph`] records every op in execution order, so the recording order is
//! already a topological order and [`Graph::backward`] is a single reverse
//! sweep. Parameter tensors are borrowed, not copied, for the graph's lifetime.

use std::borrow::Cow;

use super::tensor::{Precision, Tensor, MAX_RANK};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Sum(Var),
    Softmax(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Computation tape over borrowed parameter tensors.
#[derive(Debug)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    precision: Precision,
}

fn rows_of(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

fn cols_of(shape: &[usize]) -> usize {
    *shape.last().expect("rank >= 1")
}

impl<'p> Graph<'p> {
    pub fn new(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, mut value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.precision.round_slice(&mut value);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    /// Binds a tensor by reference; it takes part in differentiation when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: &'p Tensor) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: Cow::Borrowed(tensor.data()),
            op: Op::Leaf,
            requires_grad: tensor.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// An owned leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        let data = tensor.data().to_vec();
        self.push(shape, data, Op::Leaf, false)
    }

    /// An owned leaf that receives gradients (read them from [`Gradients`]).
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        let data = tensor.data().to_vec();
        self.push(shape, data, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shapes are valid")
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Checks `b` is either the same shape as `a` or a bias vector over the
    /// last axis of `a`.
    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(());
        }
        let bias = cols_of(sb) == cols_of(sa) && rows_of(sb) == 1;
        if bias {
            Ok(())
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        self.binary_shape(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.len();
        Ok(av
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, bv[i % n]))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid(a), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * k).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, k), rg)
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    /// Softmax over the last axis. Masked (`false`) positions get exactly 0.
    pub fn row_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (m, n) = (rows_of(&shape), cols_of(&shape));
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::shape("row_softmax mask", &shape, &[mask.len()]));
            }
        }
        let xv = self.value(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let live = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            softmax_row(&xv[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n], live)?;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Softmax(x), rg))
    }

    /// Gathers rows of `table` (`[V, d]`) into a `[ids.len(), d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::shape("embedding", shape, &[ids.len()]));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::IndexOutOfRange { id: bad, size: v });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut width = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", self.shape(*first), s));
            }
            width += cols_of(s);
        }
        let rows = lead.iter().product::<usize>();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                let c = cols_of(self.shape(*p));
                out.extend_from_slice(&self.value(*p)[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let rg = self.rg(parts);
        Ok(self.push(shape, out, Op::ConcatLast(parts.to_vec()), rg))
    }

    /// Stacks rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(Error::shape("concat_rows", &s0, &[2]));
        }
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[1] != s0[1] {
                return Err(Error::shape("concat_rows", &s0, s));
            }
            rows += s[0];
            out.extend_from_slice(self.value(*p));
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, s0[1]], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if start >= end || end > s[0] {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} of leading dimension {}",
                s[0]
            )));
        }
        let inner: usize = s[1..].iter().product();
        let out = self.value(src)[start * inner..end * inner].to_vec();
        let mut shape = s;
        shape[0] = end - start;
        let rg = self.rg(&[src]);
        Ok(self.push(shape, out, Op::SliceRows { src, start }, rg))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > MAX_RANK || n != self.value(src).len() {
            return Err(Error::shape("reshape", self.shape(src), shape));
        }
        let out = self.value(src).to_vec();
        let rg = self.rg(&[src]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(src), rg))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[t, target_t]`.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(
                "masked_cross_entropy",
                &shape,
                &[targets.len()],
            ));
        }
        let (t, v) = (shape[0], shape[1]);
        if targets.len() != t || mask.len() != t {
            return Err(Error::shape(
                "masked_cross_entropy",
                &shape,
                &[targets.len(), mask.len()],
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&id| id >= v) {
            return Err(Error::IndexOutOfRange { id: bad, size: v });
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::FullyMasked);
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; t * v];
        let mut total = 0.0;
        for r in 0..t {
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (p, x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            if mask[r] {
                total += lse - row[targets[r]];
            }
        }
        let loss = total / count as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].requires_grad {
                *g = None;
            } else if let Some(g) = g {
                self.precision.round_slice(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'p>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    send(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, y) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                send(*a, g.to_vec());
                let nb = self.value(*b).len();
                let mut db = vec![0.0; nb];
                for (i, x) in g.iter().enumerate() {
                    db[i % nb] += sign * x;
                }
                send(*b, db);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let nb = bv.len();
                let da = g.iter().enumerate().map(|(i, x)| x * bv[i % nb]).collect();
                let mut db = vec![0.0; nb];
                for (i, x) in g.iter().enumerate() {
                    db[i % nb] += x * av[i];
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(node.value.iter())
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect();
                send(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(node.value.iter())
                    .map(|(x, y)| x * y * (1.0 - y))
                    .collect();
                send(*a, d);
            }
            Op::Scale(a, k) => send(*a, g.iter().map(|x| x * k).collect()),
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::Softmax(x) => {
                let n = cols_of(&node.shape);
                let y = &node.value;
                let mut dx = vec![0.0; y.len()];
                for r in 0..rows_of(&node.shape) {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*x, dx);
            }
            Op::Embedding { table, ids } => {
                let d = cols_of(self.shape(*table));
                let mut dt = vec![0.0; self.value(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for (o, x) in dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                    {
                        *o += x;
                    }
                }
                send(*table, dt);
            }
            Op::ConcatLast(parts) => {
                let width = cols_of(&node.shape);
                let rows = rows_of(&node.shape);
                let mut offset = 0;
                for p in parts {
                    let c = cols_of(self.shape(*p));
                    let mut dp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * width + offset..r * width + offset + c]);
                    }
                    offset += c;
                    send(*p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    send(*p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceRows { src, start } => {
                let s = self.shape(*src);
                let inner: usize = s[1..].iter().product();
                let mut d = vec![0.0; self.value(*src).len()];
                d[start * inner..start * inner + g.len()].copy_from_slice(g);
                send(*src, d);
            }
            Op::Reshape(src) => send(*src, g.to_vec()),
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let v = cols_of(self.shape(*logits));
                let scale = g[0] / *count as f64;
                let mut d = vec![0.0; probs.len()];
                for (r, (&t, &live)) in targets.iter().zip(mask).enumerate() {
                    if !live {
                        continue;
                    }
                    for j in 0..v {
                        d[r * v + j] = probs[r * v + j] * scale;
                    }
                    d[r * v + t] -= scale;
                }
                send(*logits, d);
            }
        }
    }
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

/// Stabilized softmax of one row; `live(j) == false` forces probability 0.
pub(crate) fn softmax_row(x: &[f64], out: &mut [f64], live: impl Fn(usize) -> bool) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in x.iter().enumerate() {
        if live(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::FullyMasked);
    }
    let mut sum = 0.0;
    for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        *o = if live(j) { (v - max).exp() } else { 0.0 };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    Ok(())
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `tensor.grad`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        self.accumulate_scaled(v, tensor, 1.0);
    }

    pub fn accumulate_scaled(&self, v: Var, tensor: &mut Tensor, k: f64) {
        match self.get(v) {
            Some(g) if k == 1.0 => tensor.accumulate_grad(g),
            Some(g) => tensor.accumulate_grad(&g.iter().map(|x| x * k).collect::<Vec<_>>()),
            None => tensor.accumulate_grad(&vec![0.0; tensor.len()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut g = Graph::new(Precision::F64);
        let (e, bv) = (g.leaf(&eye), g.leaf(&b));
        let c = g.matmul(e, bv).unwrap();
        assert_eq!(g.value(c), b.data());

        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let ones = t(&[2, 1], &[1.0, 1.0]);
        let (a, o) = (g.leaf(&a), g.leaf(&ones));
        let c = g.matmul(a, o).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let mut g = Graph::new(Precision::F64);
        let (x, y) = (g.leaf(&a), g.leaf(&a));
        let err = g.matmul(x, y).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn elementwise_values() {
        let z = t(&[1], &[0.0]);
        let mut g = Graph::new(Precision::F64);
        let zv = g.leaf(&z);
        let th = g.tanh(zv);
        let sg = g.sigmoid(zv);
        assert_eq!(g.value(th), &[0.0]);
        assert_eq!(g.value(sg), &[0.5]);

        let a = t(&[2], &[2.0, 3.0]);
        let b = t(&[2], &[4.0, 5.0]);
        let zero = t(&[2], &[0.0, 0.0]);
        let (av, bv, zv) = (g.leaf(&a), g.leaf(&b), g.leaf(&zero));
        let m = g.mul(av, bv).unwrap();
        assert_eq!(g.value(m), &[8.0, 15.0]);
        let s = g.add(av, zv).unwrap();
        assert_eq!(g.value(s), a.data());
    }

    #[test]
    fn bias_broadcast_and_incompatible_shapes() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let bias = t(&[2], &[10.0, 20.0]);
        let bad = t(&[3], &[0.0; 3]);
        let mut g = Graph::new(Precision::F64);
        let (av, bv, badv) = (g.leaf(&a), g.leaf(&bias), g.leaf(&bad));
        let s = g.add(av, bv).unwrap();
        assert_eq!(g.value(s), &[11.0, 22.0, 13.0, 24.0]);
        assert!(g.add(av, badv).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::new(Precision::F64);
        let z = g.constant(t(&[1, 4], &[0.0; 4]));
        let s = g.row_softmax(z, None).unwrap();
        assert_eq!(g.value(s), &[0.25; 4]);

        let big = g.constant(t(&[1, 2], &[1000.0, 1000.0]));
        let s = g.row_softmax(big, None).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.5]);

        let z3 = g.constant(t(&[1, 3], &[0.0; 3]));
        let s = g.row_softmax(z3, Some(&[true, true, false])).unwrap();
        assert_eq!(g.value(s), &[0.5, 0.5, 0.0]);

        let err = g.row_softmax(z3, Some(&[false, false, false])).unwrap_err();
        assert!(matches!(err, Error::FullyMasked));
    }

    #[test]
    fn embedding_gather_scatter_and_range() {
        let table = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad();
        let mut g = Graph::new(Precision::F64);
        let tv = g.leaf(&table);
        let e = g.embedding(tv, &[0, 0]).unwrap();
        assert_eq!(g.value(e), &[1.0, 2.0, 1.0, 2.0]);

        let e = g.embedding(tv, &[1, 1]).unwrap();
        let l = g.sum(e);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(tv).unwrap(), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);

        let err = g.embedding(tv, &[3]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { id: 3, size: 3 }));
    }

    #[test]
    fn concat_slice_round_trip_and_rank_error() {
        let a = t(&[2, 5], &(0..10).map(f64::from).collect::<Vec<_>>());
        let r3 = t(&[1, 2, 5], &[0.0; 10]);
        let mut g = Graph::new(Precision::F64);
        let (av, r3v) = (g.leaf(&a), g.leaf(&r3));
        let top = g.slice_rows(av, 0, 1).unwrap();
        let bottom = g.slice_rows(av, 1, 2).unwrap();
        let back = g.concat_rows(&[top, bottom]).unwrap();
        assert_eq!(g.value(back), a.data());

        let wide = g.concat_last(&[av, av]).unwrap();
        assert_eq!(g.shape(wide), &[2, 10]);
        assert!(g.concat_last(&[av, r3v]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let mut g = Graph::new(Precision::F64);
        let logits = g.constant(t(&[2, 4], &[0.3; 8]));
        let l = g
            .masked_cross_entropy(logits, &[1, 3], &[true, true])
            .unwrap();
        assert_abs_diff_eq!(g.value(l)[0], 4f64.ln(), epsilon = 1e-12);
        let err = g
            .masked_cross_entropy(logits, &[1, 3], &[false, false])
            .unwrap_err();
        assert!(matches!(err, Error::FullyMasked));
    }

    #[test]
    fn cross_entropy_saturated_logits_approach_zero() {
        let mut g = Graph::new(Precision::F64);
        let logits = g.constant(t(&[1, 3], &[0.0, 200.0, 0.0]));
        let l = g.masked_cross_entropy(logits, &[1], &[true]).unwrap();
        assert!(g.value(l)[0] < 1e-80);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let x = t(&[3], &[1.0, 2.0, 3.0]).with_grad();
        let mut g = Graph::new(Precision::F64);
        let xv = g.leaf(&x);
        let s = g.sum(xv);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[1.0, 1.0, 1.0]);

        let x2 = t(&[2], &[1.0, 2.0]).with_grad();
        let xv = g.leaf(&x2);
        let sq = g.mul(xv, xv).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn reused_tensor_sums_both_paths() {
        // f(x) = x*x + x  =>  f'(x) = 2x + 1
        let x = t(&[2], &[3.0, -1.5]).with_grad();
        let mut g = Graph::new(Precision::F64);
        let xv = g.leaf(&x);
        let sq = g.mul(xv, xv).unwrap();
        let f = g.add(sq, xv).unwrap();
        let s = g.sum(f);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[7.0, -2.0]);
    }

    #[test]
    fn accumulation_doubles_without_zeroing() {
        let x = t(&[2], &[1.0, 2.0]).with_grad();
        let mut target = x.clone();
        let grads = {
            let mut g = Graph::new(Precision::F64);
            let xv = g.leaf(&x);
            let sq = g.mul(xv, xv).unwrap();
            let s = g.sum(sq);
            (g.backward(s).unwrap(), xv)
        };
        grads.0.accumulate_into(grads.1, &mut target);
        let once = target.grad.clone().unwrap();
        grads.0.accumulate_into(grads.1, &mut target);
        let twice = target.grad.clone().unwrap();
        assert_eq!(twice, once.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
        target.zero_grad();
        assert!(target.grad.is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = t(&[2], &[1.0, 2.0]).with_grad();
        let mut g = Graph::new(Precision::F64);
        let xv = g.leaf(&x);
        assert!(matches!(g.backward(xv), Err(Error::NotScalar(_))));
    }

    #[test]
    fn f32_mode_rounds_outputs() {
        let x = t(&[1], &[0.1]);
        let mut g = Graph::new(Precision::F32);
        let xv = g.leaf(&x);
        let y = g.scale(xv, 3.0);
        let v = g.value(y)[0];
        assert_eq!(v, v as f32 as f64);
    }
}
