//! Reverse-mode differentiation over a linear record of matrix operations.
//!
//! Every node stores its forward value. The backward pass emits its vector-
//! Jacobian products as ordinary nodes on the same tape, so a gradient is
//! itself differentiable (gradient-of-gradient for the critic penalty).

use std::sync::Arc;

use super::tensor::{matmul, Tensor2};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Inputs always precede the node that uses them.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Square(NodeId),
    /// Square root; its derivative at 0 is taken as 0.
    Sqrt(NodeId),
    /// `1/x`, with `1/0 := 0`.
    Recip(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// `x` for `x > 0`, `slope * x` otherwise; slope 0 is the plain rectifier.
    LeakyRelu(NodeId, f64),
    /// `m×n + 1×n` with the row broadcast.
    AddRow(NodeId, NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId, usize),
    SumCols(NodeId),
    BroadcastCols(NodeId, usize),
    SumAll(NodeId),
    BroadcastAll(NodeId, usize, usize),
    SliceCols { a: NodeId, start: usize, len: usize },
    PadCols { a: NodeId, start: usize, total: usize },
    GatherRows(NodeId, Arc<Vec<usize>>),
    ScatterRows(NodeId, Arc<Vec<usize>>, usize),
    LogSoftmax(NodeId),
    /// Each row is an `height×width` image `X`, mapped to `L · X · Rᵀ`.
    Separable2d {
        a: NodeId,
        height: usize,
        width: usize,
        left: Arc<Tensor2>,
        right: Arc<Tensor2>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a, _) | Square(a) | Sqrt(a) | Recip(a) | Exp(a) | Tanh(a)
            | Sigmoid(a) | LeakyRelu(a, _) | SumRows(a) | BroadcastRows(a, _) | SumCols(a)
            | BroadcastCols(a, _) | SumAll(a) | BroadcastAll(a, _, _) | LogSoftmax(a)
            | GatherRows(a, _) | ScatterRows(a, _, _) => vec![*a],
            SliceCols { a, .. } | PadCols { a, .. } | Separable2d { a, .. } => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor2,
}

/// Append-only computation record.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn eval<'a>(op: &Op, val: impl Fn(NodeId) -> &'a Tensor2) -> Tensor2 {
    use Op::*;
    match op {
        Leaf => unreachable!("leaves carry their own value"),
        MatMul { a, b, ta, tb } => matmul(val(*a), val(*b), *ta, *tb),
        Add(a, b) => val(*a).zip_map(val(*b), |x, y| x + y),
        Sub(a, b) => val(*a).zip_map(val(*b), |x, y| x - y),
        Mul(a, b) => val(*a).zip_map(val(*b), |x, y| x * y),
        Scale(a, s) => {
            let s = *s;
            val(*a).map(|x| x * s)
        }
        AddScalar(a, s) => {
            let s = *s;
            val(*a).map(|x| x + s)
        }
        Square(a) => val(*a).map(|x| x * x),
        Sqrt(a) => val(*a).map(f64::sqrt),
        Recip(a) => val(*a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x }),
        Exp(a) => val(*a).map(f64::exp),
        Tanh(a) => val(*a).map(f64::tanh),
        Sigmoid(a) => val(*a).map(|x| 1.0 / (1.0 + (-x).exp())),
        LeakyRelu(a, slope) => {
            let s = *slope;
            val(*a).map(|x| if x > 0.0 { x } else { s * x })
        }
        AddRow(a, b) => {
            let (x, r) = (val(*a), val(*b));
            let mut out = x.clone();
            for row in out.data.chunks_mut(x.cols) {
                for (o, &bv) in row.iter_mut().zip(&r.data) {
                    *o += bv;
                }
            }
            out
        }
        SumRows(a) => {
            let x = val(*a);
            let mut out = Tensor2::zeros(1, x.cols);
            for row in x.data.chunks(x.cols.max(1)) {
                for (o, &v) in out.data.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out
        }
        BroadcastRows(a, m) => {
            let x = val(*a);
            let mut data = Vec::with_capacity(m * x.cols);
            for _ in 0..*m {
                data.extend_from_slice(&x.data);
            }
            Tensor2::from_vec(*m, x.cols, data)
        }
        SumCols(a) => {
            let x = val(*a);
            let data = (0..x.rows).map(|r| x.row(r).iter().sum()).collect();
            Tensor2::from_vec(x.rows, 1, data)
        }
        BroadcastCols(a, n) => {
            let x = val(*a);
            let mut data = Vec::with_capacity(x.rows * n);
            for &v in &x.data {
                data.extend(std::iter::repeat(v).take(*n));
            }
            Tensor2::from_vec(x.rows, *n, data)
        }
        SumAll(a) => Tensor2::scalar(val(*a).sum()),
        BroadcastAll(a, m, n) => Tensor2::filled(*m, *n, val(*a).data[0]),
        SliceCols { a, start, len } => {
            let x = val(*a);
            let mut data = Vec::with_capacity(x.rows * len);
            for r in 0..x.rows {
                data.extend_from_slice(&x.row(r)[*start..start + len]);
            }
            Tensor2::from_vec(x.rows, *len, data)
        }
        PadCols { a, start, total } => {
            let x = val(*a);
            let mut out = Tensor2::zeros(x.rows, *total);
            for r in 0..x.rows {
                out.data[r * total + start..r * total + start + x.cols].copy_from_slice(x.row(r));
            }
            out
        }
        GatherRows(a, idx) => {
            let x = val(*a);
            let mut data = Vec::with_capacity(idx.len() * x.cols);
            for &i in idx.iter() {
                data.extend_from_slice(x.row(i));
            }
            Tensor2::from_vec(idx.len(), x.cols, data)
        }
        ScatterRows(a, idx, n) => {
            let x = val(*a);
            let mut out = Tensor2::zeros(*n, x.cols);
            for (r, &i) in idx.iter().enumerate() {
                for (o, &v) in out.data[i * x.cols..(i + 1) * x.cols].iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            out
        }
        LogSoftmax(a) => {
            let x = val(*a);
            let mut out = x.clone();
            for row in out.data.chunks_mut(x.cols) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            out
        }
        Separable2d {
            a,
            height,
            width,
            left,
            right,
        } => {
            let x = val(*a);
            let mut out = Tensor2::zeros(x.rows, x.cols);
            for r in 0..x.rows {
                let img = Tensor2::from_vec(*height, *width, x.row(r).to_vec());
                let tmp = matmul(left, &img, false, false);
                let res = matmul(&tmp, right, false, true);
                out.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(&res.data);
            }
            out
        }
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

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    /// Consumes the tape and moves out the values of `ids`.
    pub fn into_values(mut self, ids: &[NodeId]) -> Vec<Tensor2> {
        let mut taken: Vec<Option<usize>> = vec![None; self.nodes.len()];
        let mut out: Vec<Tensor2> = Vec::with_capacity(ids.len());
        for &id in ids {
            let v = match taken[id.0] {
                Some(k) => out[k].clone(),
                None => {
                    taken[id.0] = Some(out.len());
                    std::mem::replace(&mut self.nodes[id.0].value, Tensor2::zeros(0, 0))
                }
            };
            out.push(v);
        }
        out
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn leaf(&mut self, value: Tensor2) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> NodeId {
        let value = eval(&op, |id| &self.nodes[id.0].value);
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Re-executes every non-leaf node from the stored leaf values.
    pub fn replay(&self) -> Vec<Tensor2> {
        let mut values: Vec<Tensor2> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, |id| &values[id.0]),
            };
            values.push(v);
        }
        values
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        self.push(Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::AddScalar(a, s))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Recip(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(row);
        assert!(r == 1 && c == self.shape(a).1, "row broadcast shape mismatch");
        self.push(Op::AddRow(a, row))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, m: usize) -> NodeId {
        assert_eq!(self.shape(a).0, 1);
        self.push(Op::BroadcastRows(a, m))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumCols(a))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, n: usize) -> NodeId {
        assert_eq!(self.shape(a).1, 1);
        self.push(Op::BroadcastCols(a, n))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn broadcast_all(&mut self, a: NodeId, m: usize, n: usize) -> NodeId {
        assert_eq!(self.shape(a), (1, 1));
        self.push(Op::BroadcastAll(a, m, n))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        assert!(start + len <= self.shape(a).1, "column slice out of range");
        self.push(Op::SliceCols { a, start, len })
    }

    pub fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> NodeId {
        assert!(start + self.shape(a).1 <= total, "column pad out of range");
        self.push(Op::PadCols { a, start, total })
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Arc<Vec<usize>>) -> NodeId {
        let rows = self.shape(a).0;
        assert!(idx.iter().all(|&i| i < rows), "gather index out of range");
        self.push(Op::GatherRows(a, idx))
    }

    pub fn scatter_rows(&mut self, a: NodeId, idx: Arc<Vec<usize>>, rows: usize) -> NodeId {
        assert!(idx.iter().all(|&i| i < rows), "scatter index out of range");
        self.push(Op::ScatterRows(a, idx, rows))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a))
    }

    /// Applies `L · X · Rᵀ` to every row of `a` viewed as a `height×width` image.
    pub fn separable2d(
        &mut self,
        a: NodeId,
        height: usize,
        width: usize,
        left: Arc<Tensor2>,
        right: Arc<Tensor2>,
    ) -> NodeId {
        assert_eq!(self.shape(a).1, height * width);
        assert_eq!(left.shape(), (height, height));
        assert_eq!(right.shape(), (width, width));
        self.push(Op::Separable2d {
            a,
            height,
            width,
            left,
            right,
        })
    }

    /// Gradient of the scalar `root` with respect to each of `wrt`.
    ///
    /// The returned nodes live on this tape and can be differentiated again.
    /// Targets that `root` does not depend on get an all-zero leaf.
    pub fn grad(&mut self, root: NodeId, wrt: &[NodeId], seed: f64) -> Result<Vec<NodeId>> {
        let (r, c) = self.shape(root);
        if (r, c) != (1, 1) {
            return Err(Error::Contract(format!(
                "gradient root must be scalar, got {r}x{c}"
            )));
        }
        self.grad_with(root, Tensor2::scalar(seed), wrt)
    }

    /// Vector-Jacobian product: `seedᵀ · ∂root/∂wrt` for an arbitrary-shaped root.
    pub fn grad_with(&mut self, root: NodeId, seed: Tensor2, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if seed.shape() != self.shape(root) {
            return Err(Error::Contract("seed shape differs from root shape".into()));
        }
        let end = root.0 + 1;
        let mut reaches = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                reaches[w.0] = true;
            }
        }
        for i in 0..end {
            if !reaches[i] {
                reaches[i] = self.nodes[i].op.inputs().iter().any(|p| reaches[p.0]);
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; end];
        adjoint[root.0] = Some(self.leaf(seed));
        for i in (0..end).rev() {
            let Some(d) = adjoint[i] else { continue };
            if !reaches[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.vjp(NodeId(i), &op, d, &reaches) {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(w);
                    self.leaf(Tensor2::zeros(r, c))
                }
            })
            .collect())
    }

    /// Emits the contributions of adjoint `d` (of node `out`) to each input.
    fn vjp(&mut self, out: NodeId, op: &Op, d: NodeId, reaches: &[bool]) -> Vec<(NodeId, NodeId)> {
        use Op::*;
        let need = |id: &NodeId| reaches[id.0];
        let mut res = Vec::with_capacity(2);
        match op {
            Leaf => {}
            MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                if need(&a) {
                    let g = match (ta, tb) {
                        (false, false) => self.matmul_t(d, b, false, true),
                        (false, true) => self.matmul_t(d, b, false, false),
                        (true, false) => self.matmul_t(b, d, false, true),
                        (true, true) => self.matmul_t(b, d, true, true),
                    };
                    res.push((a, g));
                }
                if need(&b) {
                    let g = match (ta, tb) {
                        (false, false) => self.matmul_t(a, d, true, false),
                        (false, true) => self.matmul_t(d, a, true, false),
                        (true, false) => self.matmul_t(a, d, false, false),
                        (true, true) => self.matmul_t(d, a, true, true),
                    };
                    res.push((b, g));
                }
            }
            Add(a, b) => {
                if need(a) {
                    res.push((*a, d));
                }
                if need(b) {
                    res.push((*b, d));
                }
            }
            Sub(a, b) => {
                if need(a) {
                    res.push((*a, d));
                }
                if need(b) {
                    let g = self.scale(d, -1.0);
                    res.push((*b, g));
                }
            }
            Mul(a, b) => {
                if need(a) {
                    let g = self.mul(d, *b);
                    res.push((*a, g));
                }
                if need(b) {
                    let g = self.mul(d, *a);
                    res.push((*b, g));
                }
            }
            Scale(a, s) => {
                let g = self.scale(d, *s);
                res.push((*a, g));
            }
            AddScalar(a, _) => res.push((*a, d)),
            Square(a) => {
                let two_a = self.scale(*a, 2.0);
                let g = self.mul(d, two_a);
                res.push((*a, g));
            }
            Sqrt(a) => {
                let inv = self.recip(out);
                let half = self.scale(inv, 0.5);
                let g = self.mul(d, half);
                res.push((*a, g));
            }
            Recip(a) => {
                let sq = self.square(out);
                let neg = self.scale(sq, -1.0);
                let g = self.mul(d, neg);
                res.push((*a, g));
            }
            Exp(a) => {
                let g = self.mul(d, out);
                res.push((*a, g));
            }
            Tanh(a) => {
                let sq = self.square(out);
                let neg = self.scale(sq, -1.0);
                let deriv = self.add_scalar(neg, 1.0);
                let g = self.mul(d, deriv);
                res.push((*a, g));
            }
            Sigmoid(a) => {
                let sq = self.square(out);
                let deriv = self.sub(out, sq);
                let g = self.mul(d, deriv);
                res.push((*a, g));
            }
            LeakyRelu(a, slope) => {
                // Piecewise linear: the mask is constant, second derivative 0.
                let s = *slope;
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { s });
                let m = self.leaf(mask);
                let g = self.mul(d, m);
                res.push((*a, g));
            }
            AddRow(a, b) => {
                if need(a) {
                    res.push((*a, d));
                }
                if need(b) {
                    let g = self.sum_rows(d);
                    res.push((*b, g));
                }
            }
            SumRows(a) => {
                let m = self.shape(*a).0;
                let g = self.broadcast_rows(d, m);
                res.push((*a, g));
            }
            BroadcastRows(a, _) => {
                let g = self.sum_rows(d);
                res.push((*a, g));
            }
            SumCols(a) => {
                let n = self.shape(*a).1;
                let g = self.broadcast_cols(d, n);
                res.push((*a, g));
            }
            BroadcastCols(a, _) => {
                let g = self.sum_cols(d);
                res.push((*a, g));
            }
            SumAll(a) => {
                let (m, n) = self.shape(*a);
                let g = self.broadcast_all(d, m, n);
                res.push((*a, g));
            }
            BroadcastAll(a, _, _) => {
                let g = self.sum_all(d);
                res.push((*a, g));
            }
            SliceCols { a, start, .. } => {
                let total = self.shape(*a).1;
                let g = self.pad_cols(d, *start, total);
                res.push((*a, g));
            }
            PadCols { a, start, .. } => {
                let len = self.shape(*a).1;
                let g = self.slice_cols(d, *start, len);
                res.push((*a, g));
            }
            GatherRows(a, idx) => {
                let rows = self.shape(*a).0;
                let g = self.scatter_rows(d, idx.clone(), rows);
                res.push((*a, g));
            }
            ScatterRows(a, idx, _) => {
                let g = self.gather_rows(d, idx.clone());
                res.push((*a, g));
            }
            LogSoftmax(a) => {
                let n = self.shape(*a).1;
                let p = self.exp(out);
                let s = self.sum_cols(d);
                let sb = self.broadcast_cols(s, n);
                let ps = self.mul(p, sb);
                let g = self.sub(d, ps);
                res.push((*a, g));
            }
            Separable2d {
                a,
                height,
                width,
                left,
                right,
            } => {
                let lt = Arc::new(left.transpose());
                let rt = Arc::new(right.transpose());
                let g = self.separable2d(d, *height, *width, lt, rt);
                res.push((*a, g));
            }
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, NodeId) -> NodeId, x0: Tensor2) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.grad(y, &[x], 1.0).unwrap()[0];
        let analytic = tape.value(g).clone();
        let h = 1e-6;
        for i in 0..x0.len() {
            let f = |delta: f64| {
                let mut t = Tape::new();
                let mut v = x0.clone();
                v.data[i] += delta;
                let xi = t.leaf(v);
                let yi = build(&mut t, xi);
                t.value(yi).data[0]
            };
            let numeric = (f(h) - f(-h)) / (2.0 * h);
            let err = (numeric - analytic.data[i]).abs() / numeric.abs().max(1.0);
            assert!(err < 1e-7, "entry {i}: fd {numeric} vs {}", analytic.data[i]);
        }
    }

    fn sample() -> Tensor2 {
        Tensor2::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.5, -0.2, 0.9])
    }

    #[test]
    fn elementwise_primitives_match_finite_differences() {
        fd_check(|t, x| { let y = t.tanh(x); t.sum_all(y) }, sample());
        fd_check(|t, x| { let y = t.sigmoid(x); t.sum_all(y) }, sample());
        fd_check(|t, x| { let y = t.exp(x); t.sum_all(y) }, sample());
        fd_check(|t, x| { let y = t.square(x); let z = t.sqrt(y); t.sum_all(z) }, sample());
        fd_check(|t, x| { let y = t.recip(x); t.sum_all(y) }, sample());
        fd_check(|t, x| { let y = t.leaky_relu(x, 0.2); let z = t.square(y); t.sum_all(z) }, sample());
        fd_check(|t, x| { let y = t.log_softmax(x); let z = t.slice_cols(y, 1, 1); t.sum_all(z) }, sample());
        fd_check(|t, x| { let y = t.sum_cols(x); let z = t.square(y); t.sum_all(z) }, sample());
        fd_check(|t, x| { let y = t.sum_rows(x); let z = t.square(y); t.sum_all(z) }, sample());
    }

    #[test]
    fn structural_primitives_match_finite_differences() {
        fd_check(
            |t, x| {
                let g = t.gather_rows(x, Arc::new(vec![1, 0, 1]));
                let s = t.square(g);
                t.sum_all(s)
            },
            sample(),
        );
        fd_check(
            |t, x| {
                let w = t.leaf(Tensor2::from_vec(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
                let y = t.matmul(x, w);
                let z = t.tanh(y);
                let b = t.leaf(Tensor2::row_vector(vec![0.05, -0.1]));
                let zb = t.add_row(z, b);
                let sq = t.square(zb);
                t.sum_all(sq)
            },
            sample(),
        );
        fd_check(
            |t, x| {
                let l = Arc::new(Tensor2::from_vec(2, 2, vec![0.7, 0.3, 0.2, 0.8]));
                let r = Arc::new(Tensor2::from_vec(3, 3, vec![0.5, 0.5, 0.0, 0.25, 0.5, 0.25, 0.0, 0.5, 0.5]));
                let flat = t.leaf(Tensor2::zeros(1, 6));
                let xr = t.add(flat, x);
                let y = t.separable2d(xr, 2, 3, l, r);
                let s = t.square(y);
                t.sum_all(s)
            },
            Tensor2::from_vec(1, 6, vec![0.3, -0.7, 1.1, 0.5, -0.2, 0.9]),
        );
    }

    #[test]
    fn non_scalar_root_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.leaf(sample());
        let y = t.tanh(x);
        assert!(matches!(t.grad(y, &[x], 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn unrelated_target_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(sample());
        let z = t.leaf(Tensor2::filled(1, 2, 3.0));
        let s = t.sum_all(x);
        let g = t.grad(s, &[x, z], 1.0).unwrap();
        assert!(t.value(g[1]).data.iter().all(|&v| v == 0.0));
        assert!(t.value(g[0]).data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.leaf(sample());
        let y = t.tanh(x);
        let s = t.sum_all(y);
        t.grad(s, &[x], 1.0).unwrap();
        let replayed = t.replay();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, t.value(NodeId(i)));
        }
    }

    #[test]
    fn second_derivative_of_cubic() {
        // f(x) = sum(x^3) -> f'' = 6x, via differentiating sum(f').
        let mut t = Tape::new();
        let x = t.leaf(Tensor2::row_vector(vec![0.5, -1.5, 2.0]));
        let sq = t.square(x);
        let cube = t.mul(sq, x);
        let s = t.sum_all(cube);
        let g = t.grad(s, &[x], 1.0).unwrap()[0];
        let gs = t.sum_all(g);
        let h = t.grad(gs, &[x], 1.0).unwrap()[0];
        let got = &t.value(h).data;
        for (v, e) in got.iter().zip([3.0, -9.0, 12.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }
}
