use std::sync::atomic::{AtomicU64, Ordering};

use super::{NumArray, ParamSet, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Elementwise and structural operation kinds recorded by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Sigmoid,
    Tanh,
    Softmax,
    Add,
    Mul,
    Concat { axis: usize },
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    SliceCols { input: NodeId, start: usize },
    RowDot(NodeId, NodeId),
    ScaleRows(NodeId, NodeId),
    Mean(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::RowDot(a, b)
            | Op::ScaleRows(a, b) => vec![*a, *b],
            Op::OneMinus(a) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Softmax(a) | Op::Mean(a) => {
                vec![*a]
            }
            Op::SliceCols { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::OneMinus(_) => "one_minus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::RowDot(..) => "row_dot",
            Op::ScaleRows(..) => "scale_rows",
            Op::Mean(_) => "mean",
        }
    }
}

struct Node {
    op: Op,
    value: NumArray,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumer and a single reverse sweep visits each node once.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn require_matrix(op: &'static str, a: &NumArray) -> Result<(usize, usize), TensorError> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(TensorError::Shape {
            op,
            left: other.to_vec(),
            right: vec![],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, id: NodeId) -> Result<usize, TensorError> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(TensorError::UnknownNode);
        }
        Ok(id.index)
    }

    pub fn value(&self, id: NodeId) -> &NumArray {
        assert_eq!(id.tape, self.id, "node belongs to a different tape");
        &self.nodes[id.index].value
    }

    fn push(&mut self, op: Op, value: NumArray) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let id = NodeId {
            tape: self.id,
            index: self.nodes.len(),
        };
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    fn val(&self, id: NodeId) -> Result<&NumArray, TensorError> {
        let i = self.check(id)?;
        Ok(&self.nodes[i].value)
    }

    pub fn constant(&mut self, value: NumArray) -> Result<NodeId, TensorError> {
        self.push(Op::Constant, value)
    }

    /// Records the current value of parameter `idx` as a leaf whose gradient
    /// flows back into `params` on [`Tape::backward`].
    pub fn param(&mut self, params: &ParamSet, idx: usize) -> Result<NodeId, TensorError> {
        self.push(Op::Param(idx), params.by_index(idx).value.clone())
    }

    pub fn param_named(&mut self, params: &ParamSet, name: &str) -> Result<NodeId, TensorError> {
        let idx = params
            .index_of(name)
            .ok_or_else(|| TensorError::MissingParameter(name.to_string()))?;
        self.param(params, idx)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.val(a)?, self.val(b)?);
        let shape_err = || TensorError::Shape {
            op: "matmul",
            left: av.shape().to_vec(),
            right: bv.shape().to_vec(),
        };
        let (m, k) = require_matrix("matmul", av).map_err(|_| shape_err())?;
        let (k2, n) = require_matrix("matmul", bv).map_err(|_| shape_err())?;
        if k != k2 {
            return Err(shape_err());
        }
        let value = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = NumArray::new(vec![m, n], value)?;
        self.push(Op::MatMul(a, b), value)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        let (av, bv) = (self.val(a)?, self.val(b)?);
        if av.shape() != bv.shape() {
            return Err(TensorError::Shape {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, TensorError> {
        self.same_shape(op.name(), a, b)?;
        let (av, bv) = (self.val(a)?, self.val(b)?);
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = NumArray::new(av.shape().to_vec(), data)?;
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Adds a `1 × n` row (a bias) to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TensorError> {
        let (av, rv) = (self.val(a)?, self.val(row)?);
        let (m, n) = require_matrix("add_row", av)?;
        if rv.shape() != [1, n] {
            return Err(TensorError::Shape {
                op: "add_row",
                left: av.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let mut data = av.data().to_vec();
        for r in 0..m {
            for (d, &b) in data[r * n..(r + 1) * n].iter_mut().zip(rv.data()) {
                *d += b;
            }
        }
        let value = NumArray::new(vec![m, n], data)?;
        self.push(Op::AddRow(a, row), value)
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self.val(a)?.map(|v| 1.0 - v);
        self.push(Op::OneMinus(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self.val(a)?.map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = self.val(a)?.map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let av = self.val(a)?;
        let width = *av.shape().last().unwrap_or(&0);
        if width == 0 {
            return Err(TensorError::EmptyAxis { op: "softmax" });
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = NumArray::new(av.shape().to_vec(), data)?;
        self.push(Op::Softmax(a), value)
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::EmptyAxis { op: "concat" });
        }
        let first = require_matrix("concat", self.val(inputs[0])?)?;
        let mut dims = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let v = self.val(id)?;
            let (r, c) = require_matrix("concat", v)?;
            let conforms = match axis {
                0 => c == first.1,
                1 => r == first.0,
                _ => false,
            };
            if !conforms {
                return Err(TensorError::Shape {
                    op: "concat",
                    left: vec![first.0, first.1],
                    right: v.shape().to_vec(),
                });
            }
            dims.push((r, c));
        }
        let value = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * first.1);
            for &id in inputs {
                data.extend_from_slice(self.val(id)?.data());
            }
            NumArray::new(vec![rows, first.1], data)?
        } else {
            let rows = first.0;
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &id in inputs {
                    data.extend_from_slice(self.val(id)?.row(r));
                }
            }
            NumArray::new(vec![rows, cols], data)?
        };
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
        )
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(
        &mut self,
        a: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let av = self.val(a)?;
        let (m, n) = require_matrix("slice_cols", av)?;
        if start + len > n {
            return Err(TensorError::Shape {
                op: "slice_cols",
                left: av.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let value = NumArray::new(vec![m, len], data)?;
        self.push(Op::SliceCols { input: a, start }, value)
    }

    /// Per-row dot product of two `m × n` matrices, giving `m × 1`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.val(a)?, self.val(b)?);
        let (m, _) = require_matrix("row_dot", av)?;
        let data = (0..m)
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let value = NumArray::new(vec![m, 1], data)?;
        self.push(Op::RowDot(a, b), value)
    }

    /// Scales each row of an `m × n` matrix by the matching entry of an `m × 1` column.
    pub fn scale_rows(&mut self, a: NodeId, scale: NodeId) -> Result<NodeId, TensorError> {
        let (av, sv) = (self.val(a)?, self.val(scale)?);
        let (m, n) = require_matrix("scale_rows", av)?;
        if sv.shape() != [m, 1] {
            return Err(TensorError::Shape {
                op: "scale_rows",
                left: av.shape().to_vec(),
                right: sv.shape().to_vec(),
            });
        }
        let mut data = av.data().to_vec();
        for r in 0..m {
            let s = sv.data()[r];
            data[r * n..(r + 1) * n].iter_mut().for_each(|v| *v *= s);
        }
        let value = NumArray::new(vec![m, n], data)?;
        self.push(Op::ScaleRows(a, scale), value)
    }

    /// Mean of all entries, as a `1 × 1` array.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let av = self.val(a)?;
        if av.is_empty() {
            return Err(TensorError::EmptyAxis { op: "mean" });
        }
        let value = NumArray::filled(&[1, 1], av.sum() / av.len() as f64);
        self.push(Op::Mean(a), value)
    }

    /// Dispatches one of the named elementwise kinds.
    pub fn elementwise(&mut self, kind: ElemKind, args: &[NodeId]) -> Result<NodeId, TensorError> {
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(TensorError::Arity {
                    op: "elementwise",
                    expected: n,
                    got: args.len(),
                })
            }
        };
        match kind {
            ElemKind::Sigmoid => arity(1).and_then(|_| self.sigmoid(args[0])),
            ElemKind::Tanh => arity(1).and_then(|_| self.tanh(args[0])),
            ElemKind::Softmax => arity(1).and_then(|_| self.softmax(args[0])),
            ElemKind::Add => arity(2).and_then(|_| self.add(args[0], args[1])),
            ElemKind::Mul => arity(2).and_then(|_| self.mul(args[0], args[1])),
            ElemKind::Concat { axis } => self.concat(args, axis),
        }
    }

    /// Reverse sweep from a scalar `loss`, accumulating gradients into every
    /// non-frozen parameter. Frozen parameters are left untouched and nodes
    /// that feed only frozen parameters are skipped. Does not consume the
    /// tape: with cleared grads, repeated calls produce identical gradients.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<(), TensorError> {
        let grads = self.gradients_where(loss, |idx| {
            idx < params.len() && !params.by_index(idx).frozen
        })?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(idx), Some(g)) = (&node.op, grad) {
                let p = params.by_index_mut(*idx);
                if p.grad.shape() != g.shape() {
                    return Err(TensorError::Shape {
                        op: "backward",
                        left: p.grad.shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
                p.grad.add_assign(&g);
            }
        }
        Ok(())
    }

    /// Gradient of the scalar `loss` with respect to every node on the tape.
    pub fn gradients(&self, loss: NodeId) -> Result<Vec<Option<NumArray>>, TensorError> {
        self.gradients_where(loss, |_| true)
    }

    /// Like [`Tape::gradients`], restricted to nodes upstream of a parameter
    /// for which `wanted(param_index)` holds; all other entries are `None`.
    pub fn gradients_where(
        &self,
        loss: NodeId,
        wanted: impl Fn(usize) -> bool,
    ) -> Result<Vec<Option<NumArray>>, TensorError> {
        let li = self.check(loss)?;
        let mut needed = vec![false; li + 1];
        for i in 0..=li {
            needed[i] = match &self.nodes[i].op {
                Op::Constant => false,
                Op::Param(idx) => wanted(*idx),
                op => op.inputs().iter().any(|id| needed[id.index]),
            };
        }
        let lv = &self.nodes[li].value;
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<NumArray>> = vec![None; li + 1];
        grads[li] = Some(NumArray::filled(lv.shape(), 1.0));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let accumulate = |grads: &mut Vec<Option<NumArray>>, id: NodeId, delta: NumArray| {
                if !needed[id.index] {
                    return;
                }
                match &mut grads[id.index] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    let (m, k) = av.dims2();
                    let (_, n) = bv.dims2();
                    if needed[a.index] {
                        let da = matmul_a_bt(g.data(), bv.data(), m, n, k);
                        accumulate(&mut grads, *a, NumArray::new(vec![m, k], da)?);
                    }
                    if needed[b.index] {
                        let db = matmul_at_b(av.data(), g.data(), m, k, n);
                        accumulate(&mut grads, *b, NumArray::new(vec![k, n], db)?);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let (m, n) = g.dims2();
                    let mut dr = vec![0.0; n];
                    for r in 0..m {
                        for (d, &v) in dr.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *row, NumArray::new(vec![1, n], dr)?);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    accumulate(&mut grads, *a, hadamard(&g, bv));
                    accumulate(&mut grads, *b, hadamard(&g, av));
                }
                Op::OneMinus(a) => accumulate(&mut grads, *a, g.map(|v| -v)),
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    let d = zip_map(&g, s, |gv, sv| gv * sv * (1.0 - sv));
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let t = &node.value;
                    let d = zip_map(&g, t, |gv, tv| gv * (1.0 - tv * tv));
                    accumulate(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let width = *s.shape().last().unwrap();
                    let mut d = vec![0.0; s.len()];
                    for ((dr, sr), gr) in d
                        .chunks_mut(width)
                        .zip(s.data().chunks(width))
                        .zip(g.data().chunks(width))
                    {
                        let dot: f64 = sr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for ((dv, &sv), &gv) in dr.iter_mut().zip(sr).zip(gr) {
                            *dv = sv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, NumArray::new(s.shape().to_vec(), d)?);
                }
                Op::Concat { inputs, axis } => {
                    let (rows, cols) = g.dims2();
                    if *axis == 0 {
                        let mut offset = 0;
                        for id in inputs {
                            let (r, c) = self.nodes[id.index].value.dims2();
                            let part = g.data()[offset * cols..(offset + r) * cols].to_vec();
                            accumulate(&mut grads, *id, NumArray::new(vec![r, c], part)?);
                            offset += r;
                        }
                    } else {
                        let mut offset = 0;
                        for id in inputs {
                            let (r, c) = self.nodes[id.index].value.dims2();
                            let mut part = Vec::with_capacity(r * c);
                            for row in 0..rows {
                                part.extend_from_slice(&g.row(row)[offset..offset + c]);
                            }
                            accumulate(&mut grads, *id, NumArray::new(vec![r, c], part)?);
                            offset += c;
                        }
                    }
                }
                Op::SliceCols { input, start } => {
                    let (m, n) = self.nodes[input.index].value.dims2();
                    let (_, len) = g.dims2();
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        d[r * n + start..r * n + start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *input, NumArray::new(vec![m, n], d)?);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    let (m, n) = av.dims2();
                    let mut da = vec![0.0; m * n];
                    let mut db = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = g.data()[r];
                        for c in 0..n {
                            da[r * n + c] = gr * bv.data()[r * n + c];
                            db[r * n + c] = gr * av.data()[r * n + c];
                        }
                    }
                    accumulate(&mut grads, *a, NumArray::new(vec![m, n], da)?);
                    accumulate(&mut grads, *b, NumArray::new(vec![m, n], db)?);
                }
                Op::ScaleRows(a, scale) => {
                    let (av, sv) = (&self.nodes[a.index].value, &self.nodes[scale.index].value);
                    let (m, n) = av.dims2();
                    let mut da = vec![0.0; m * n];
                    let mut ds = vec![0.0; m];
                    for r in 0..m {
                        let s = sv.data()[r];
                        for c in 0..n {
                            let gv = g.data()[r * n + c];
                            da[r * n + c] = gv * s;
                            ds[r] += gv * av.data()[r * n + c];
                        }
                    }
                    accumulate(&mut grads, *a, NumArray::new(vec![m, n], da)?);
                    accumulate(&mut grads, *scale, NumArray::new(vec![m, 1], ds)?);
                }
                Op::Mean(a) => {
                    let av = &self.nodes[a.index].value;
                    let share = g.data()[0] / av.len() as f64;
                    accumulate(&mut grads, *a, NumArray::filled(av.shape(), share));
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }
}

fn hadamard(a: &NumArray, b: &NumArray) -> NumArray {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &NumArray, b: &NumArray, f: impl Fn(f64, f64) -> f64) -> NumArray {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    NumArray::new(a.shape().to_vec(), data).expect("zip_map shapes agree")
}

/// `[m×k] · [k×n]`, row-independent so batch size never changes a row's result.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `G[m×n] · Bᵀ` where `B` is `k×n`.
fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `Aᵀ · G` where `A` is `m×k` and `G` is `m×n`.
fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
    out
}
