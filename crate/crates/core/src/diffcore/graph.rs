//! Define-by-run reverse-mode graph.
//!
//! Nodes are appended in evaluation order, so reverse insertion order is a
//! valid topological order for backward. Values are treated as matrices whose
//! column count is the last dimension of the shape.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::diffcore::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside this module.
///
/// `grads[j]` is `Some` for every input that requires a gradient; the op adds
/// its contribution into it.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&[T]], output: &[T], grad_out: &[T], grads: &mut [Option<&mut [T]>]);
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Clamp(f64, f64),
    Affine(f64, f64),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    ScalarLhs,
    ScalarRhs,
    /// rhs is a single column repeated across `cols` columns of lhs
    ColRhs(usize),
    ColLhs(usize),
}

impl Broadcast {
    #[inline]
    fn idx(self, i: usize) -> (usize, usize) {
        match self {
            Broadcast::Same => (i, i),
            Broadcast::ScalarLhs => (0, i),
            Broadcast::ScalarRhs => (i, 0),
            Broadcast::ColRhs(c) => (i, i / c),
            Broadcast::ColLhs(c) => (i / c, i),
        }
    }
}

enum Op<T: Real> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Unary { x: Var, kind: Unary },
    Binary { a: Var, b: Var, kind: Binary, bc: Broadcast },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

enum Data<'p, T> {
    Owned(Vec<T>),
    Param(&'p [T]),
}

struct Node<'p, T: Real> {
    data: Data<'p, T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

impl<T: Real> Node<'_, T> {
    fn values(&self) -> &[T] {
        match &self.data {
            Data::Owned(v) => v,
            Data::Param(v) => v,
        }
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }
}

/// Rows per partial sum in batch reductions; fixed so results do not depend
/// on the thread count.
const REDUCE_CHUNK: usize = 256;

pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<String, Var>,
    backpropagated: bool,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            data: Data::Owned(data),
            shape,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p, T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        self.node(v).values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn cols(&self, v: Var) -> usize {
        self.node(v).cols()
    }

    pub fn rows(&self, v: Var) -> usize {
        let n = self.node(v);
        n.values().len() / n.cols()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("graph node shape")
    }

    /// Leaf holding a copy of `t`. Tracks gradients when `t.requires_grad`.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.values().to_vec(), t.shape().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != values.len() || n == 0 {
            return Err(Error::InvalidTensor(format!(
                "constant of shape {shape:?} given {} values",
                values.len()
            )));
        }
        Ok(self.push(values, shape.to_vec(), Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.push(vec![v], vec![1], Op::Leaf, false)
    }

    /// Leaf borrowing a parameter from `store`. Repeated calls return the same node.
    pub fn param(&mut self, store: &'p ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let entry = store.get(name)?;
        self.nodes.push(Node {
            data: Data::Param(entry.tensor.values()),
            shape: entry.tensor.shape().to_vec(),
            op: Op::Leaf,
            requires_grad: true,
        });
        self.grads.push(None);
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Copy of `v` with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (data, shape) = (n.values().to_vec(), n.shape.clone());
        self.push(data, shape, Op::Leaf, false)
    }

    /// `x @ w + b` with `x: [.., in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xn, wn) = (self.node(x), self.node(w));
        if wn.shape.len() != 2 || xn.cols() != wn.shape[0] {
            return Err(Error::shape("linear", &xn.shape, &wn.shape));
        }
        let (inp, out) = (wn.shape[0], wn.shape[1]);
        if let Some(b) = b {
            let bn = self.node(b);
            if bn.values().len() != out {
                return Err(Error::shape("linear(bias)", &wn.shape, &bn.shape));
            }
        }
        let rows = xn.values().len() / inp;
        let mut y = vec![T::zero(); rows * out];
        {
            let xv = xn.values();
            let wv = wn.values();
            let bv = b.map(|b| self.node(b).values());
            y.par_chunks_mut(out * 64)
                .enumerate()
                .for_each(|(chunk, ys)| {
                    for (r, yr) in ys.chunks_mut(out).enumerate() {
                        let row = chunk * 64 + r;
                        if let Some(bv) = bv {
                            yr.copy_from_slice(bv);
                        }
                        let xr = &xv[row * inp..(row + 1) * inp];
                        for (i, &xi) in xr.iter().enumerate() {
                            if xi == T::zero() {
                                continue;
                            }
                            let wr = &wv[i * out..(i + 1) * out];
                            for (yo, &wo) in yr.iter_mut().zip(wr) {
                                *yo += xi * wo;
                            }
                        }
                    }
                });
        }
        let mut shape = xn.shape.clone();
        *shape.last_mut().unwrap() = out;
        let rg = xn.requires_grad || wn.requires_grad || b.map(|b| self.requires_grad(b)).unwrap_or(false);
        Ok(self.push(y, shape, Op::Linear { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let n = self.node(x);
        let xs = n.values();
        let y: Vec<T> = match kind {
            Unary::Relu => xs.iter().map(|&v| if v.is_nan() { v } else { v.max(T::zero()) }).collect(),
            Unary::Sigmoid => xs.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect(),
            Unary::Exp => xs.iter().map(|&v| v.exp()).collect(),
            Unary::Log => xs.iter().map(|&v| v.ln()).collect(),
            Unary::Clamp(lo, hi) => xs
                .iter()
                .map(|&v| if v.is_nan() { v } else { v.max(T::of(lo)).min(T::of(hi)) })
                .collect(),
            Unary::Affine(a, b) => xs.iter().map(|&v| T::of(a) * v + T::of(b)).collect(),
        };
        let (shape, rg) = (n.shape.clone(), n.requires_grad);
        self.push(y, shape, Op::Unary { x, kind }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Unary::Clamp(lo, hi))
    }

    /// `a * x + b` elementwise with constant `a`, `b`.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        self.unary(x, Unary::Affine(a, b))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Broadcast, Vec<usize>)> {
        let (an, bn) = (self.node(a), self.node(b));
        let (la, lb) = (an.values().len(), bn.values().len());
        if an.shape == bn.shape {
            return Ok((Broadcast::Same, an.shape.clone()));
        }
        if lb == 1 {
            return Ok((Broadcast::ScalarRhs, an.shape.clone()));
        }
        if la == 1 {
            return Ok((Broadcast::ScalarLhs, bn.shape.clone()));
        }
        if bn.cols() == 1 && la == lb * an.cols() {
            return Ok((Broadcast::ColRhs(an.cols()), an.shape.clone()));
        }
        if an.cols() == 1 && lb == la * bn.cols() {
            return Ok((Broadcast::ColLhs(bn.cols()), bn.shape.clone()));
        }
        if la == lb && an.cols() == bn.cols() {
            return Ok((Broadcast::Same, an.shape.clone()));
        }
        Err(Error::shape(op, &an.shape, &bn.shape))
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var> {
        let (bc, shape) = self.broadcast(name, a, b)?;
        let n: usize = shape.iter().product();
        let (av, bv) = (self.value(a), self.value(b));
        let y: Vec<T> = (0..n)
            .map(|i| {
                let (ia, ib) = bc.idx(i);
                match kind {
                    Binary::Add => av[ia] + bv[ib],
                    Binary::Sub => av[ia] - bv[ib],
                    Binary::Mul => av[ia] * bv[ib],
                }
            })
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(y, shape, Op::Binary { a, b, kind, bc }, rg))
    }

    /// Elementwise sum; accepts equal shapes, a scalar operand, or an `[n, 1]` column against `[n, c]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = T::of(self.value(x).iter().map(|v| v.f64()).sum::<f64>());
        let rg = self.requires_grad(x);
        self.push(vec![s], vec![1], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let s = T::of(xs.iter().map(|v| v.f64()).sum::<f64>() / xs.len() as f64);
        let rg = self.requires_grad(x);
        self.push(vec![s], vec![1], Op::Mean(x), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.node(a), self.node(b));
        if an.values().len() != bn.values().len() {
            return Err(Error::shape("mse", &an.shape, &bn.shape));
        }
        let n = an.values().len() as f64;
        let s: f64 = an
            .values()
            .iter()
            .zip(bn.values())
            .map(|(x, y)| (x.f64() - y.f64()).powi(2))
            .sum();
        let rg = an.requires_grad || bn.requires_grad;
        Ok(self.push(vec![T::of(s / n)], vec![1], Op::Mse(a, b), rg))
    }

    /// Concatenate along the last dimension; all parts must share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let rows = self.rows(*first);
        for &p in parts {
            if self.rows(p) != rows {
                return Err(Error::shape("concat", self.shape(*first), self.shape(p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.cols(p)).collect();
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                y.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(y, vec![rows, total], Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.cols(x);
        if len == 0 || start + len > cols {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let rows = self.rows(x);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(y, vec![rows, len], Op::SliceCols { x, start }, rg))
    }

    /// Row `index[i]` of `x` for every `i`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        if index.is_empty() {
            return Err(Error::InvalidArgument("gather_rows with empty index".into()));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            y.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        let shape = vec![index.len(), cols];
        let rg = self.requires_grad(x);
        Ok(self.push(y, shape, Op::GatherRows { x, index }, rg))
    }

    /// Registers a node whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: &[usize],
        values: Vec<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var> {
        if values.len() != shape.iter().product::<usize>() || values.is_empty() {
            return Err(Error::InvalidTensor(format!(
                "{}: shape {shape:?} given {} values",
                op.name(),
                values.len()
            )));
        }
        for (i, a) in inputs.iter().enumerate() {
            if inputs[..i].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "{}: repeated input node",
                    op.name()
                )));
            }
        }
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.push(
            values,
            shape.to_vec(),
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backpropagated = false;
    }

    /// Gradients of every parameter leaf touched by backward, by name.
    pub fn param_grads(&self) -> Vec<(String, Vec<T>)> {
        let mut out: Vec<(String, Vec<T>)> = self
            .params
            .iter()
            .filter_map(|(name, v)| self.grads[v.0].as_ref().map(|g| (name.clone(), g.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(Error::AlreadyBackpropagated);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backpropagated = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
        }
        Ok(())
    }

    /// Zero-initialised gradient buffer for `v`, or `None` if it takes no gradient.
    fn take_grad_buf(&mut self, v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].values().len();
        Some(self.grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len]))
    }

    fn put_grad_buf(&mut self, v: Var, buf: Option<Vec<T>>) {
        if buf.is_some() {
            self.grads[v.0] = buf;
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Temporarily move the op out so inputs can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => self.back_linear(*x, *w, *b, g),
            Op::Unary { x, kind } => {
                if let Some(mut gx) = self.take_grad_buf(*x) {
                    let xs = self.nodes[x.0].values();
                    let ys = self.nodes[i].values();
                    for k in 0..g.len() {
                        let d = match *kind {
                            Unary::Relu => {
                                if xs[k] > T::zero() {
                                    g[k]
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sigmoid => g[k] * ys[k] * (T::one() - ys[k]),
                            Unary::Exp => g[k] * ys[k],
                            Unary::Log => g[k] / xs[k],
                            Unary::Clamp(lo, hi) => {
                                if xs[k] >= T::of(lo) && xs[k] <= T::of(hi) {
                                    g[k]
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Affine(a, _) => g[k] * T::of(a),
                        };
                        gx[k] += d;
                    }
                    self.put_grad_buf(*x, Some(gx));
                }
            }
            Op::Binary { a, b, kind, bc } => {
                let (a, b, kind, bc) = (*a, *b, *kind, *bc);
                let mut ga = self.take_grad_buf(a).map(|v| v.iter().map(|x| x.f64()).collect::<Vec<f64>>());
                let mut gb = if a == b {
                    None
                } else {
                    self.take_grad_buf(b).map(|v| v.iter().map(|x| x.f64()).collect::<Vec<f64>>())
                };
                let same = a == b && self.nodes[a.0].requires_grad;
                {
                    let av = self.nodes[a.0].values();
                    let bv = self.nodes[b.0].values();
                    for (k, gk) in g.iter().enumerate() {
                        let gk = gk.f64();
                        let (ia, ib) = bc.idx(k);
                        let (da, db) = match kind {
                            Binary::Add => (gk, gk),
                            Binary::Sub => (gk, -gk),
                            Binary::Mul => (gk * bv[ib].f64(), gk * av[ia].f64()),
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += da;
                            if same {
                                ga[ib] += db;
                            }
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += db;
                        }
                    }
                }
                self.put_grad_buf(a, ga.map(|v| v.into_iter().map(T::of).collect()));
                self.put_grad_buf(b, gb.map(|v| v.into_iter().map(T::of).collect()));
            }
            Op::Sum(x) => {
                if let Some(mut gx) = self.take_grad_buf(*x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                    self.put_grad_buf(*x, Some(gx));
                }
            }
            Op::Mean(x) => {
                if let Some(mut gx) = self.take_grad_buf(*x) {
                    let s = g[0] / T::of(gx.len() as f64);
                    gx.iter_mut().for_each(|v| *v += s);
                    self.put_grad_buf(*x, Some(gx));
                }
            }
            Op::Mse(a, b) => {
                let (a, b) = (*a, *b);
                let n = T::of(self.nodes[a.0].values().len() as f64);
                let diff: Vec<T> = self.nodes[a.0]
                    .values()
                    .iter()
                    .zip(self.nodes[b.0].values())
                    .map(|(&x, &y)| (x - y) * T::of(2.0) * g[0] / n)
                    .collect();
                if a == b {
                    // d/dx of mean((x - x)^2) is zero
                } else {
                    if let Some(mut ga) = self.take_grad_buf(a) {
                        ga.iter_mut().zip(&diff).for_each(|(v, d)| *v += *d);
                        self.put_grad_buf(a, Some(ga));
                    }
                    if let Some(mut gb) = self.take_grad_buf(b) {
                        gb.iter_mut().zip(&diff).for_each(|(v, d)| *v -= *d);
                        self.put_grad_buf(b, Some(gb));
                    }
                }
            }
            Op::Concat(parts) => {
                let total = self.nodes[i].cols();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].cols();
                    // the same part may appear twice; take/put per occurrence
                    if let Some(mut gp) = self.take_grad_buf(p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += *s);
                        }
                        self.put_grad_buf(p, Some(gp));
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(mut gx) = self.take_grad_buf(*x) {
                    let cols = self.nodes[x.0].cols();
                    let len = self.nodes[i].cols();
                    for (r, gr) in g.chunks(len).enumerate() {
                        gx[r * cols + start..r * cols + start + len]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(d, s)| *d += *s);
                    }
                    self.put_grad_buf(*x, Some(gx));
                }
            }
            Op::GatherRows { x, index } => {
                if let Some(gx) = self.take_grad_buf(*x) {
                    let cols = self.nodes[x.0].cols();
                    let mut acc: Vec<f64> = gx.iter().map(|v| v.f64()).collect();
                    for (k, &row) in index.iter().enumerate() {
                        for c in 0..cols {
                            acc[row * cols + c] += g[k * cols + c].f64();
                        }
                    }
                    self.put_grad_buf(*x, Some(acc.into_iter().map(T::of).collect()));
                }
            }
            Op::Custom { inputs, op: custom } => {
                let mut bufs: Vec<Option<Vec<T>>> = inputs.iter().map(|&v| self.take_grad_buf(v)).collect();
                {
                    let ins: Vec<&[T]> = inputs.iter().map(|v| self.nodes[v.0].values()).collect();
                    let out = self.nodes[i].values();
                    let mut views: Vec<Option<&mut [T]>> =
                        bufs.iter_mut().map(|b| b.as_deref_mut()).collect();
                    custom.backward(&ins, out, g, &mut views);
                }
                for (&v, b) in inputs.iter().zip(bufs) {
                    self.put_grad_buf(v, b);
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn back_linear(&mut self, x: Var, w: Var, b: Option<Var>, g: &[T]) {
        let inp = self.nodes[w.0].shape[0];
        let out = self.nodes[w.0].shape[1];
        let rows = g.len() / out;

        if let Some(mut gx) = self.take_grad_buf(x) {
            let wv = self.nodes[w.0].values();
            gx.par_chunks_mut(inp * 64)
                .enumerate()
                .for_each(|(chunk, gxs)| {
                    for (r, gxr) in gxs.chunks_mut(inp).enumerate() {
                        let row = chunk * 64 + r;
                        let gr = &g[row * out..(row + 1) * out];
                        for (k, d) in gxr.iter_mut().enumerate() {
                            let wr = &wv[k * out..(k + 1) * out];
                            let mut s = T::zero();
                            for (a, b) in gr.iter().zip(wr) {
                                s += *a * *b;
                            }
                            *d += s;
                        }
                    }
                });
            self.put_grad_buf(x, Some(gx));
        }

        if let Some(mut gw) = self.take_grad_buf(w) {
            let xv = self.nodes[x.0].values();
            let partials: Vec<Vec<T>> = (0..rows.div_ceil(REDUCE_CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut acc = vec![T::zero(); inp * out];
                    let end = ((c + 1) * REDUCE_CHUNK).min(rows);
                    for row in c * REDUCE_CHUNK..end {
                        let gr = &g[row * out..(row + 1) * out];
                        let xr = &xv[row * inp..(row + 1) * inp];
                        for (k, &xk) in xr.iter().enumerate() {
                            if xk == T::zero() {
                                continue;
                            }
                            let ar = &mut acc[k * out..(k + 1) * out];
                            for (a, &gv) in ar.iter_mut().zip(gr) {
                                *a += xk * gv;
                            }
                        }
                    }
                    acc
                })
                .collect();
            let mut total = vec![0.0f64; inp * out];
            for p in &partials {
                total.iter_mut().zip(p).for_each(|(t, v)| *t += v.f64());
            }
            gw.iter_mut().zip(total).for_each(|(d, t)| *d += T::of(t));
            self.put_grad_buf(w, Some(gw));
        }

        if let Some(b) = b {
            if let Some(mut gb) = self.take_grad_buf(b) {
                let mut total = vec![0.0f64; out];
                for gr in g.chunks(out) {
                    total.iter_mut().zip(gr).for_each(|(t, v)| *t += v.f64());
                }
                gb.iter_mut().zip(total).for_each(|(d, t)| *d += T::of(t));
                self.put_grad_buf(b, Some(gb));
            }
        }
    }
}
