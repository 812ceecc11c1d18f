//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass in topological order.
//! Parameters are read in place from the borrowed [`ParamSet`]; their
//! gradients come back as a [`GradMap`] so callers decide how to route and
//! accumulate them.

use super::{GradMap, Matrix, ParamGroup, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Pow(Var, f64),
    Scale(Var, f64),
    Clamp(Var, f64, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Gather(Var, Vec<usize>),
    RowSlice(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    MeanAll(Var),
    Transpose(Var),
    BroadcastRows(Var),
    KernelMean(Var, Var, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the `ParamSet`.
    value: Option<Matrix>,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

/// Result of a full backward pass: gradients for every node and parameter.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: GradMap,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` when it does not reach the root.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &GradMap {
        &self.params
    }

    pub fn into_params(self) -> GradMap {
        self.params
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        let node = &self.nodes[var.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => &self.params.get(*id).value,
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).shape()
    }

    /// True when no differentiable leaf feeds `var`.
    pub fn is_constant(&self, var: Var) -> bool {
        !self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Differentiable leaf that is not a parameter; its gradient is visible via [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input, value, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(format!("matmul {:?} x {:?}", va.shape(), vb.shape())));
        }
        let out = va.matmul(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// Adds a `1 x cols` bias row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Error::shape(format!(
                "row bias {:?} for input {:?}",
                vb.shape(),
                vx.shape()
            )));
        }
        let mut out = vx.clone();
        let b = vb.as_slice();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(b) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddRowBias(x, bias), out, rg))
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(op, out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Op::Relu(x), x, |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid(x), x, sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Op::Exp(x), x, f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Op::Ln(x), x, f64::ln)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Op::Abs(x), x, f64::abs)
    }

    pub fn pow(&mut self, x: Var, exponent: f64) -> Var {
        self.unary(Op::Pow(x, exponent), x, |v| v.powf(exponent))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(Op::Scale(x, factor), x, |v| v * factor)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(Op::Clamp(x, lo, hi), x, |v| v.clamp(lo, hi))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str) -> Result<(Matrix, bool)> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("{name} {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = match name {
            "add" => va.zip_map(vb, |x, y| x + y),
            "sub" => va.zip_map(vb, |x, y| x - y),
            _ => va.zip_map(vb, |x, y| x * y),
        };
        Ok((out, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    /// Rows of `x` at `indices`, in order; repeats allowed (embedding lookup).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let mut out = Matrix::zeros(indices.len(), vx.cols());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= vx.rows() {
                return Err(Error::Index {
                    index: idx,
                    len: vx.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(vx.row(idx));
        }
        let rg = self.rg(x);
        Ok(self.push(Op::Gather(x, indices.to_vec()), out, rg))
    }

    /// Alias of [`Tape::gather_rows`] for embedding tables.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Contiguous block of `len` rows starting at `start`.
    pub fn row_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if start + len > vx.rows() || len == 0 {
            return Err(Error::shape(format!(
                "row slice {start}..{} of {} rows",
                start + len,
                vx.rows()
            )));
        }
        let cols = vx.cols();
        let data = vx.as_slice()[start * cols..(start + len) * cols].to_vec();
        let out = Matrix::from_vec(len, cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::RowSlice(x, start), out, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat of zero matrices"));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape(format!("concat rows {} vs {rows}", v.rows())));
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, rg))
    }

    /// Column means as a `1 x cols` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() == 0 {
            return Err(Error::shape("mean over zero rows"));
        }
        let mut out = vx.sum_rows();
        out.scale_assign(1.0 / vx.rows() as f64);
        let rg = self.rg(x);
        Ok(self.push(Op::MeanRows(x), out, rg))
    }

    /// Mean of every entry as a `1 x 1` matrix.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(Error::shape("mean of an empty matrix"));
        }
        let out = Matrix::scalar(vx.sum() / vx.len() as f64);
        let rg = self.rg(x);
        Ok(self.push(Op::MeanAll(x), out, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(Op::Transpose(x), out, rg)
    }

    /// Repeats a `1 x cols` row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() != 1 {
            return Err(Error::shape(format!("broadcast of {:?}", vx.shape())));
        }
        let mut out = Matrix::zeros(rows, vx.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(vx.as_slice());
        }
        let rg = self.rg(x);
        Ok(self.push(Op::BroadcastRows(x), out, rg))
    }

    /// Mean over all pairs of `exp(gamma * (u_i - v_j)^2)` for column vectors `u`, `v`.
    pub fn kernel_mean(&mut self, u: Var, v: Var, gamma: f64) -> Result<Var> {
        let (vu, vv) = (self.value(u), self.value(v));
        if vu.cols() != 1 || vv.cols() != 1 || vu.is_empty() || vv.is_empty() {
            return Err(Error::shape(format!(
                "kernel mean of {:?} and {:?}",
                vu.shape(),
                vv.shape()
            )));
        }
        let (a, b) = (vu.as_slice(), vv.as_slice());
        let total = if u == v {
            let mut off = 0.0;
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    let d = a[i] - a[j];
                    off += (gamma * d * d).exp();
                }
            }
            a.len() as f64 + 2.0 * off
        } else {
            let mut s = 0.0;
            for &x in a {
                for &y in b {
                    let d = x - y;
                    s += (gamma * d * d).exp();
                }
            }
            s
        };
        let out = Matrix::scalar(total / (a.len() * b.len()) as f64);
        let rg = self.rg(u) || self.rg(v);
        Ok(self.push(Op::KernelMean(u, v, gamma), out, rg))
    }

    /// Sum of `terms`, each scaled by its weight. Zero weights still record the term.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let scaled = if w == 1.0 { v } else { self.scale(v, w) };
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::shape("weighted sum of zero terms"))
    }

    /// Gradients of the scalar `root` with respect to every node and parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let needs = self.needs(|_| true, true);
        let nodes = self.backprop(root, &needs)?;
        let params = self.collect_params(&nodes);
        Ok(Gradients { nodes, params })
    }

    /// Gradients of `root` for parameters whose group passes `filter`. Paths that
    /// reach no selected parameter are skipped.
    pub fn backward_params(&self, root: Var, filter: impl Fn(ParamGroup) -> bool) -> Result<GradMap> {
        let needs = self.needs(filter, false);
        let nodes = self.backprop(root, &needs)?;
        Ok(self.collect_params(&nodes))
    }

    fn needs(&self, filter: impl Fn(ParamGroup) -> bool, inputs: bool) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = node.requires_grad
                && match &node.op {
                    Op::Constant => false,
                    Op::Input => inputs,
                    Op::Param(id) => filter(self.params.get(*id).group()),
                    Op::MatMul(a, b) | Op::AddRowBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                        needs[a.0] || needs[b.0]
                    }
                    Op::Relu(x)
                    | Op::Sigmoid(x)
                    | Op::Exp(x)
                    | Op::Ln(x)
                    | Op::Abs(x)
                    | Op::Pow(x, _)
                    | Op::Scale(x, _)
                    | Op::Clamp(x, _, _)
                    | Op::Gather(x, _)
                    | Op::RowSlice(x, _)
                    | Op::MeanRows(x)
                    | Op::MeanAll(x)
                    | Op::Transpose(x)
                    | Op::BroadcastRows(x) => needs[x.0],
                    Op::ConcatCols(parts) => parts.iter().any(|p| needs[p.0]),
                    Op::KernelMean(a, b, _) => needs[a.0] || needs[b.0],
                };
        }
        needs
    }

    fn collect_params(&self, nodes: &[Option<Matrix>]) -> GradMap {
        let mut slots: Vec<Option<Matrix>> = vec![None; self.params.len()];
        for (node, grad) in self.nodes.iter().zip(nodes) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                match &mut slots[id.0] {
                    Some(s) => s.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        GradMap::from_slots(slots)
    }

    fn backprop(&self, root: Var, needs: &[bool]) -> Result<Vec<Option<Matrix>>> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("unknown root node {}", root.0)));
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if needs[i] {
                self.propagate(i, &g, needs, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Matrix, needs: &[bool], grads: &mut [Option<Matrix>]) {
        let out = || self.nodes[i].value.as_ref().expect("op nodes carry values");
        let mut send = |v: Var, contrib: Matrix| {
            if needs[v.0] {
                match &mut grads[v.0] {
                    Some(s) => s.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        };
        match &self.nodes[i].op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if needs[a.0] {
                    send(*a, g.matmul_nt(self.value(*b)));
                }
                if needs[b.0] {
                    send(*b, self.value(*a).matmul_tn(g));
                }
            }
            Op::AddRowBias(x, bias) => {
                if needs[bias.0] {
                    send(*bias, g.sum_rows());
                }
                send(*x, g.clone());
            }
            Op::Relu(x) => {
                send(*x, g.zip_map(out(), |gv, y| if y > 0.0 { gv } else { 0.0 }));
            }
            Op::Sigmoid(x) => send(*x, g.zip_map(out(), |gv, y| gv * y * (1.0 - y))),
            Op::Exp(x) => send(*x, g.zip_map(out(), |gv, y| gv * y)),
            Op::Ln(x) => send(*x, g.zip_map(self.value(*x), |gv, v| gv / v)),
            Op::Abs(x) => send(
                *x,
                g.zip_map(self.value(*x), |gv, v| {
                    if v > 0.0 {
                        gv
                    } else if v < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Pow(x, p) => {
                let p = *p;
                send(*x, g.zip_map(self.value(*x), |gv, v| gv * p * v.powf(p - 1.0)))
            }
            Op::Scale(x, s) => {
                let s = *s;
                send(*x, g.map(|gv| gv * s))
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                send(
                    *x,
                    g.zip_map(self.value(*x), |gv, v| if (lo..=hi).contains(&v) { gv } else { 0.0 }),
                )
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if needs[a.0] {
                    send(*a, g.zip_map(self.value(*b), |gv, v| gv * v));
                }
                if needs[b.0] {
                    send(*b, g.zip_map(self.value(*a), |gv, v| gv * v));
                }
            }
            Op::Gather(x, indices) => {
                let (r, c) = self.shape(*x);
                let mut acc = Matrix::zeros(r, c);
                for (row, &idx) in indices.iter().enumerate() {
                    for (a, gv) in acc.row_mut(idx).iter_mut().zip(g.row(row)) {
                        *a += gv;
                    }
                }
                send(*x, acc);
            }
            Op::RowSlice(x, start) => {
                let (r, c) = self.shape(*x);
                let mut acc = Matrix::zeros(r, c);
                acc.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                send(*x, acc);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if needs[p.0] {
                        let mut piece = Matrix::zeros(r, c);
                        for row in 0..r {
                            piece.row_mut(row).copy_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        send(p, piece);
                    }
                    offset += c;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = self.shape(*x);
                let inv = 1.0 / r as f64;
                let mut acc = Matrix::zeros(r, c);
                for row in 0..r {
                    for (a, gv) in acc.row_mut(row).iter_mut().zip(g.as_slice()) {
                        *a = gv * inv;
                    }
                }
                send(*x, acc);
            }
            Op::MeanAll(x) => {
                let (r, c) = self.shape(*x);
                let v = g.item() / (r * c) as f64;
                send(*x, Matrix::filled(r, c, v));
            }
            Op::Transpose(x) => send(*x, g.transpose()),
            Op::BroadcastRows(x) => send(*x, g.sum_rows()),
            Op::KernelMean(u, v, gamma) => {
                let gamma = *gamma;
                let a = self.value(*u).as_slice();
                let b = self.value(*v).as_slice();
                let scale = g.item() * 2.0 * gamma / (a.len() * b.len()) as f64;
                if u == v {
                    let mut ga = vec![0.0; a.len()];
                    for i in 0..a.len() {
                        for j in i + 1..a.len() {
                            let d = a[i] - a[j];
                            let c = 2.0 * scale * (gamma * d * d).exp() * d;
                            ga[i] += c;
                            ga[j] -= c;
                        }
                    }
                    send(*u, Matrix::column(&ga));
                } else {
                    let mut ga = vec![0.0; a.len()];
                    let mut gb = vec![0.0; b.len()];
                    for (i, &x) in a.iter().enumerate() {
                        for (j, &y) in b.iter().enumerate() {
                            let d = x - y;
                            let c = scale * (gamma * d * d).exp() * d;
                            ga[i] += c;
                            gb[j] -= c;
                        }
                    }
                    if needs[u.0] {
                        send(*u, Matrix::column(&ga));
                    }
                    if needs[v.0] {
                        send(*v, Matrix::column(&gb));
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
