//! Reverse-mode automatic differentiation on dense row-major tensors.
//!
//! A [`Tape`] records operations eagerly: every call computes and caches
//! the forward value, so the tape is always a complete forward pass.
//! [`Tape::backward`] accumulates adjoints from a scalar root.
//!
//! Subgradients at non-differentiable points are fixed: `min`/`max` (and
//! `min_all`) route the whole adjoint to the first argument on ties,
//! `clamp01` is flat at and beyond its boundaries, `relu` is flat at 0, and
//! `select_le` takes its `x <= y` branch on ties. The tape remembers how
//! close any of these got to their switching point (see
//! [`Tape::kink_margin`]) so finite-difference checks can refuse points
//! that straddle a kink.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("gather index {index} out of bounds for {len} elements")]
    Index { index: usize, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("point is within {margin:e} of a kink; need more than {required:e}")]
    KinkMargin { margin: f64, required: f64 },
    #[error("non-finite adjoint")]
    NonFiniteGradient,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    /// `1` where `x <= y`, otherwise `y / x`.
    SelectLe(NodeId, NodeId),
    Neg(NodeId),
    Affine { x: NodeId, scale: f64 },
    Clamp01(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    MinAll { x: NodeId, arg: usize },
    MatVec { x: NodeId, w: NodeId, b: NodeId },
    SoftmaxRows(NodeId),
    Gather { src: NodeId, index: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Node {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Adjoints of every node with respect to the root of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradient {
    adjoints: Vec<f64>,
    spans: Vec<(usize, usize)>,
}

impl Gradient {
    pub fn wrt(&self, id: NodeId) -> &[f64] {
        let (o, n) = self.spans[id.0];
        &self.adjoints[o..o + n]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            values: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0];
        &self.values[n.offset..n.offset + n.len()]
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    /// Smallest distance of any recorded kink input to its switching point.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Records an externally detected kink distance.
    pub fn note_kink(&mut self, margin: f64) {
        self.kink_margin = self.kink_margin.min(margin.abs());
    }

    fn push(
        &mut self,
        op: Op,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        name: &'static str,
    ) -> Result<NodeId, AutodiffError> {
        debug_assert_eq!(rows * cols, data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let offset = self.values.len();
        self.values.extend_from_slice(&data);
        self.nodes.push(Node {
            op,
            offset,
            rows,
            cols,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: Tensor, trainable: bool) -> Result<NodeId, AutodiffError> {
        self.push(Op::Leaf { trainable }, t.rows, t.cols, t.data, "leaf")
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Result<NodeId, AutodiffError> {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<NodeId, AutodiffError> {
        self.leaf(t, false)
    }

    pub fn full(&mut self, rows: usize, cols: usize, v: f64) -> Result<NodeId, AutodiffError> {
        self.constant(Tensor::new(rows, cols, vec![v; rows * cols]))
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId, AutodiffError> {
        self.constant(Tensor::scalar(v))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::Shape {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, AutodiffError> {
        self.same_shape(name, a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = self.shape(a);
        self.push(op, r, c, data, name)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: NodeId,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<NodeId, AutodiffError> {
        let data: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let (r, c) = self.shape(x);
        self.push(op, r, c, data, name)
    }

    fn track_pairwise(&mut self, a: NodeId, b: NodeId) {
        let m = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y).abs())
            .fold(f64::INFINITY, f64::min);
        self.note_kink(m);
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("div", a, b)?;
        if self.value(b).contains(&0.0) {
            return Err(AutodiffError::DivisionByZero);
        }
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let id = self.binary("min", a, b, Op::Min(a, b), |x, y| if y < x { y } else { x })?;
        self.track_pairwise(a, b);
        Ok(id)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let id = self.binary("max", a, b, Op::Max(a, b), |x, y| if y > x { y } else { x })?;
        self.track_pairwise(a, b);
        Ok(id)
    }

    /// Elementwise `1` where `x <= y`, otherwise `y / x`: the residuum of
    /// the product t-norm. Only the taken branch is evaluated, so `x = 0`
    /// is fine.
    pub fn select_le(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, AutodiffError> {
        let id = self.binary("select_le", x, y, Op::SelectLe(x, y), |a, b| {
            if a <= b {
                1.0
            } else {
                b / a
            }
        })?;
        self.track_pairwise(x, y);
        Ok(id)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary("neg", x, Op::Neg(x), |v| -v)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId, AutodiffError> {
        self.unary("affine", x, Op::Affine { x, scale }, |v| scale * v + shift)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.affine(x, -1.0, 1.0)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        self.affine(x, c, 0.0)
    }

    pub fn clamp01(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let m = self
            .value(x)
            .iter()
            .map(|v| v.abs().min((v - 1.0).abs()))
            .fold(f64::INFINITY, f64::min);
        self.note_kink(m);
        self.unary("clamp01", x, Op::Clamp01(x), |v| v.clamp(0.0, 1.0))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary("log", x, Op::Log(x), f64::ln)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let m = self.value(x).iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        self.note_kink(m);
        self.unary("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), 1, 1, vec![s], "sum")
    }

    /// Smallest element, as a scalar. Ties go to the first occurrence.
    pub fn min_all(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(AutodiffError::Empty("min_all"));
        }
        let mut arg = 0;
        for (i, &e) in v.iter().enumerate() {
            if e < v[arg] {
                arg = i;
            }
        }
        let best = v[arg];
        let gap = v
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, &e)| e - best)
            .fold(f64::INFINITY, f64::min);
        self.note_kink(gap);
        self.push(Op::MinAll { x, arg }, 1, 1, vec![best], "min_all")
    }

    /// Row-wise affine map `x Wᵀ + b` for `x: n×i`, `W: o×i`, `b: 1×o`.
    pub fn matvec(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (n, i) = self.shape(x);
        let (o, wi) = self.shape(w);
        if wi != i {
            return Err(AutodiffError::Shape {
                op: "matvec",
                lhs: (n, i),
                rhs: (o, wi),
            });
        }
        if self.shape(b) != (1, o) {
            return Err(AutodiffError::Shape {
                op: "matvec",
                lhs: (1, o),
                rhs: self.shape(b),
            });
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = Vec::with_capacity(n * o);
        for r in 0..n {
            let xr = &xv[r * i..(r + 1) * i];
            for (k, bias) in bv.iter().enumerate() {
                let wr = &wv[k * i..(k + 1) * i];
                out.push(bias + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        self.push(Op::MatVec { x, w, b }, n, o, out, "matvec")
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).chunks(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|v| (v - m).exp()));
            let z: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|v| *v /= z);
        }
        self.push(Op::SoftmaxRows(x), r, c, out, "softmax_rows")
    }

    /// Picks elements by flat row-major index into an `n×1` column.
    pub fn gather(&mut self, src: NodeId, index: Vec<usize>) -> Result<NodeId, AutodiffError> {
        let v = self.value(src);
        let mut out = Vec::with_capacity(index.len());
        for &i in &index {
            out.push(*v.get(i).ok_or(AutodiffError::Index {
                index: i,
                len: v.len(),
            })?);
        }
        let n = index.len();
        self.push(Op::Gather { src, index }, n, 1, out, "gather")
    }

    /// Picks `(row, col)` entries of a matrix.
    pub fn gather_cells(
        &mut self,
        src: NodeId,
        cells: &[(usize, usize)],
    ) -> Result<NodeId, AutodiffError> {
        let (rows, cols) = self.shape(src);
        let mut index = Vec::with_capacity(cells.len());
        for &(r, c) in cells {
            if r >= rows || c >= cols {
                return Err(AutodiffError::Index {
                    index: r * cols + c,
                    len: rows * cols,
                });
            }
            index.push(r * cols + c);
        }
        self.gather(src, index)
    }

    /// Adjoints of every node with respect to the scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradient, AutodiffError> {
        let rn = &self.nodes[root.0];
        if rn.len() != 1 {
            return Err(AutodiffError::NonScalarRoot((rn.rows, rn.cols)));
        }
        let mut adj = vec![0.0; self.values.len()];
        adj[rn.offset] = 1.0;
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let (o, n) = (node.offset, node.len());
            if adj[o..o + n].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g: Vec<f64> = adj[o..o + n].to_vec();
            let out = &self.values[o..o + n];
            self.propagate(&node.op, &g, out, &mut adj);
        }
        if adj.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient);
        }
        let spans = self.nodes.iter().map(|n| (n.offset, n.len())).collect();
        Ok(Gradient {
            adjoints: adj,
            spans,
        })
    }

    fn span(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.offset, n.len())
    }

    fn propagate(&self, op: &Op, g: &[f64], out: &[f64], adj: &mut [f64]) {
        let val = |id: NodeId| self.value(id);
        match *op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                let (oa, _) = self.span(a);
                let (ob, _) = self.span(b);
                for (k, &gk) in g.iter().enumerate() {
                    adj[oa + k] += gk;
                    adj[ob + k] += gk;
                }
            }
            Op::Sub(a, b) => {
                let (oa, _) = self.span(a);
                let (ob, _) = self.span(b);
                for (k, &gk) in g.iter().enumerate() {
                    adj[oa + k] += gk;
                    adj[ob + k] -= gk;
                }
            }
            Op::Mul(a, b) => {
                let (oa, _) = self.span(a);
                let (ob, _) = self.span(b);
                let (va, vb) = (val(a), val(b));
                for (k, &gk) in g.iter().enumerate() {
                    adj[oa + k] += gk * vb[k];
                    adj[ob + k] += gk * va[k];
                }
            }
            Op::Div(a, b) => {
                let (oa, _) = self.span(a);
                let (ob, _) = self.span(b);
                let vb = val(b);
                for (k, &gk) in g.iter().enumerate() {
                    adj[oa + k] += gk / vb[k];
                    adj[ob + k] -= gk * out[k] / vb[k];
                }
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(op, Op::Min(..));
                let (oa, _) = self.span(a);
                let (ob, _) = self.span(b);
                let (va, vb) = (val(a), val(b));
                for (k, &gk) in g.iter().enumerate() {
                    let second = if is_min { vb[k] < va[k] } else { vb[k] > va[k] };
                    if second {
                        adj[ob + k] += gk;
                    } else {
                        adj[oa + k] += gk;
                    }
                }
            }
            Op::SelectLe(x, y) => {
                let (ox, _) = self.span(x);
                let (oy, _) = self.span(y);
                let (vx, vy) = (val(x), val(y));
                for (k, &gk) in g.iter().enumerate() {
                    if vx[k] > vy[k] {
                        adj[oy + k] += gk / vx[k];
                        adj[ox + k] -= gk * out[k] / vx[k];
                    }
                }
            }
            Op::Neg(x) => self.each(x, g, adj, |_, gk| -gk),
            Op::Affine { x, scale } => self.each(x, g, adj, |_, gk| scale * gk),
            Op::Clamp01(x) => {
                let vx = val(x);
                self.each(x, g, adj, |k, gk| {
                    if vx[k] > 0.0 && vx[k] < 1.0 {
                        gk
                    } else {
                        0.0
                    }
                })
            }
            Op::Log(x) => {
                let vx = val(x);
                self.each(x, g, adj, |k, gk| gk / vx[k])
            }
            Op::Exp(x) => self.each(x, g, adj, |k, gk| gk * out[k]),
            Op::Sigmoid(x) => self.each(x, g, adj, |k, gk| gk * out[k] * (1.0 - out[k])),
            Op::Relu(x) => {
                let vx = val(x);
                self.each(x, g, adj, |k, gk| if vx[k] > 0.0 { gk } else { 0.0 })
            }
            Op::Sum(x) => self.each(x, g, adj, |_, _| g[0]),
            Op::MinAll { x, arg } => {
                let (ox, _) = self.span(x);
                adj[ox + arg] += g[0];
            }
            Op::MatVec { x, w, b } => {
                let (n, i) = self.shape(x);
                let (o, _) = self.shape(w);
                let (vx, vw) = (val(x), val(w));
                let (ox, _) = self.span(x);
                let (ow, _) = self.span(w);
                let (ob, _) = self.span(b);
                let x_trainable = self.needs_grad(x);
                for r in 0..n {
                    let gr = &g[r * o..(r + 1) * o];
                    let xr = &vx[r * i..(r + 1) * i];
                    for (k, &gk) in gr.iter().enumerate() {
                        if gk == 0.0 {
                            continue;
                        }
                        adj[ob + k] += gk;
                        let wrow = ow + k * i;
                        for j in 0..i {
                            adj[wrow + j] += gk * xr[j];
                        }
                        if x_trainable {
                            let wr = &vw[k * i..(k + 1) * i];
                            for j in 0..i {
                                adj[ox + r * i + j] += gk * wr[j];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let (_, c) = self.shape(x);
                let (ox, _) = self.span(x);
                for (r, (gr, yr)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        adj[ox + r * c + k] += yr[k] * (gr[k] - dot);
                    }
                }
            }
            Op::Gather { src, ref index } => {
                let (os, _) = self.span(src);
                for (k, &i) in index.iter().enumerate() {
                    adj[os + i] += g[k];
                }
            }
        }
    }

    fn each(&self, x: NodeId, g: &[f64], adj: &mut [f64], f: impl Fn(usize, f64) -> f64) {
        let (ox, n) = self.span(x);
        for k in 0..n {
            let gk = if g.len() == 1 { g[0] } else { g[k] };
            adj[ox + k] += f(k, gk);
        }
    }

    /// Whether any trainable leaf is upstream of `id`. Constant inputs to
    /// `matvec` (the data) skip their adjoint.
    fn needs_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Leaf { trainable: false })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    pub kink_margin: f64,
    pub coordinates: usize,
}

/// Compares [`Tape::backward`] with central finite differences.
///
/// `build` records a scalar function of the given trainable leaves, one per
/// tensor in `point`. Fails if the point lies within `10h` of a kink.
pub fn grad_check<F>(build: F, point: &[Tensor], h: f64) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    let eval = |p: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId), AutodiffError> {
        let mut tape = Tape::new();
        let leaves = p
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let root = build(&mut tape, &leaves)?;
        Ok((tape, leaves, root))
    };
    let (tape, leaves, root) = eval(point)?;
    let margin = tape.kink_margin();
    if margin <= 10.0 * h {
        return Err(AutodiffError::KinkMargin {
            margin,
            required: 10.0 * h,
        });
    }
    let grad = tape.backward(root)?;
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut shifted = point.to_vec();
    for (t, &leaf) in leaves.iter().enumerate() {
        let analytic = grad.wrt(leaf);
        for k in 0..point[t].len() {
            let x0 = point[t].data[k];
            shifted[t].data[k] = x0 + h;
            let (tp, _, rp) = eval(&shifted)?;
            shifted[t].data[k] = x0 - h;
            let (tm, _, rm) = eval(&shifted)?;
            shifted[t].data[k] = x0;
            let numeric = (tp.scalar_value(rp) - tm.scalar_value(rm)) / (2.0 * h);
            let err = (analytic[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        kink_margin: margin,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(t: &mut Tape, v: f64) -> NodeId {
        t.param(Tensor::scalar(v)).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let (x, y) = (s(&mut t, 0.3), s(&mut t, 0.7));
        let m = t.max(x, y).unwrap();
        assert_eq!(t.scalar_value(m), 0.7);
        let one = s(&mut t, 1.0);
        let l = t.log(one).unwrap();
        assert_eq!(t.scalar_value(l), 0.0);
        let big = s(&mut t, 1.4);
        let c = t.clamp01(big).unwrap();
        assert_eq!(t.scalar_value(c), 1.0);
    }

    #[test]
    fn relu_like_max_gradient() {
        for (x0, want) in [(0.5, 1.0), (-0.5, 0.0)] {
            let mut t = Tape::new();
            let zero = t.scalar(0.0).unwrap();
            let x = s(&mut t, x0);
            let m = t.max(zero, x).unwrap();
            assert_eq!(t.backward(m).unwrap().wrt(x)[0], want);
        }
    }

    #[test]
    fn negative_log_product() {
        let mut t = Tape::new();
        let (x, y) = (s(&mut t, 0.5), s(&mut t, 0.5));
        let p = t.mul(x, y).unwrap();
        let l = t.log(p).unwrap();
        let n = t.neg(l).unwrap();
        let g = t.backward(n).unwrap();
        assert!((g.wrt(x)[0] + 2.0).abs() < 1e-12);
        assert_eq!(g.wrt(n), &[1.0]);
    }

    #[test]
    fn ties_go_to_first_argument() {
        let mut t = Tape::new();
        let (a, b) = (s(&mut t, 0.4), s(&mut t, 0.4));
        let m = t.min(a, b).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!((g.wrt(a)[0], g.wrt(b)[0]), (1.0, 0.0));
        let mut t = Tape::new();
        let (a, b) = (s(&mut t, 0.4), s(&mut t, 0.4));
        let m = t.max(a, b).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!((g.wrt(a)[0], g.wrt(b)[0]), (1.0, 0.0));
        let mut t = Tape::new();
        let v = t.param(Tensor::new(3, 1, vec![0.2, 0.1, 0.1])).unwrap();
        let m = t.min_all(v).unwrap();
        assert_eq!(t.backward(m).unwrap().wrt(v), &[0.0, 1.0, 0.0]);
        assert_eq!(t.kink_margin(), 0.0);
    }

    #[test]
    fn clamp_boundary_is_flat() {
        for (x0, want) in [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0), (-0.2, 0.0), (1.3, 0.0)] {
            let mut t = Tape::new();
            let x = s(&mut t, x0);
            let c = t.clamp01(x).unwrap();
            assert_eq!(t.backward(c).unwrap().wrt(x)[0], want, "{x0}");
        }
    }

    #[test]
    fn residuum_branch() {
        let mut t = Tape::new();
        let (x, y) = (s(&mut t, 0.8), s(&mut t, 0.4));
        let r = t.select_le(x, y).unwrap();
        assert_eq!(t.scalar_value(r), 0.5);
        let g = t.backward(r).unwrap();
        assert!((g.wrt(y)[0] - 1.25).abs() < 1e-12);
        assert!((g.wrt(x)[0] + 0.625).abs() < 1e-12);
        let mut t = Tape::new();
        let (x, y) = (s(&mut t, 0.0), s(&mut t, 0.0));
        let r = t.select_le(x, y).unwrap();
        assert_eq!(t.scalar_value(r), 1.0);
        assert_eq!(t.backward(r).unwrap().wrt(x)[0], 0.0);
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let (x, z) = (s(&mut t, 1.0), s(&mut t, 0.0));
        assert_eq!(t.div(x, z), Err(AutodiffError::DivisionByZero));
        assert!(matches!(t.log(z), Err(AutodiffError::NonFinite { op: "log" })));
        let big = s(&mut t, 1000.0);
        assert!(t.exp(big).is_err());
        let v = t.param(Tensor::zeros(2, 1)).unwrap();
        assert!(matches!(t.add(x, v), Err(AutodiffError::Shape { .. })));
        assert!(matches!(t.backward(v), Err(AutodiffError::NonScalarRoot(_))));
        assert!(t.gather(v, vec![2]).is_err());
        let e = t.constant(Tensor::new(0, 1, vec![])).unwrap();
        assert!(t.min_all(e).is_err());
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = [Tensor::new(2, 1, vec![0.3, 0.6])];
        let r = grad_check(|t, _| t.scalar(4.0), &p, 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        let mut t = Tape::new();
        let x = t.param(p[0].clone()).unwrap();
        let c = t.scalar(4.0).unwrap();
        assert_eq!(t.backward(c).unwrap().wrt(x), &[0.0, 0.0]);
    }

    #[test]
    fn grad_check_refuses_kinks() {
        let p = [Tensor::new(2, 1, vec![0.3, 0.3 + 5e-5])];
        let err = grad_check(
            |t, l| {
                let a = t.gather(l[0], vec![0])?;
                let b = t.gather(l[0], vec![1])?;
                let m = t.min(a, b)?;
                t.sum(m)
            },
            &p,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::KinkMargin { .. }));
    }

    fn mlp(t: &mut Tape, l: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let x = t.constant(Tensor::new(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1]))?;
        let h = t.matvec(x, l[0], l[1])?;
        let h = t.sigmoid(h)?;
        let o = t.matvec(h, l[2], l[3])?;
        let p = t.softmax_rows(o)?;
        let picked = t.gather_cells(p, &[(0, 1), (1, 0), (2, 2)])?;
        let lp = t.log(picked)?;
        let s = t.sum(lp)?;
        let e = t.exp(s)?;
        let d = t.div(s, e)?;
        t.neg(d)
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let p = [
            Tensor::new(4, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]),
            Tensor::new(1, 4, vec![0.01, -0.02, 0.03, 0.0]),
            Tensor::new(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()),
            Tensor::new(1, 3, vec![0.1, 0.0, -0.1]),
        ];
        let r = grad_check(mlp, &p, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.coordinates, 8 + 4 + 12 + 3);
    }

    #[test]
    fn matvec_input_gradient() {
        // Gradients also reach a trainable matvec input.
        let p = [
            Tensor::new(2, 3, vec![0.2, 0.5, -0.1, 0.9, -0.4, 0.3]),
            Tensor::new(2, 3, vec![1.0, 0.5, -0.5, 0.25, 0.75, 2.0]),
            Tensor::new(1, 2, vec![0.1, 0.2]),
        ];
        let r = grad_check(
            |t, l| {
                let y = t.matvec(l[0], l[1], l[2])?;
                let y = t.mul(y, y)?;
                t.sum(y)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    proptest! {
        #[test]
        fn linearity(xs in prop::collection::vec(0.05f64..0.95, 4), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let build_f = |t: &mut Tape, v: NodeId| -> NodeId {
                let l = t.log(v).unwrap();
                let s = t.sigmoid(l).unwrap();
                t.sum(s).unwrap()
            };
            let build_g = |t: &mut Tape, v: NodeId| -> NodeId {
                let e = t.exp(v).unwrap();
                let m = t.mul(e, v).unwrap();
                t.sum(m).unwrap()
            };
            let grad = |which: u8| {
                let mut t = Tape::new();
                let v = t.param(Tensor::new(4, 1, xs.clone())).unwrap();
                let root = match which {
                    0 => build_f(&mut t, v),
                    1 => build_g(&mut t, v),
                    _ => {
                        let f = build_f(&mut t, v);
                        let g = build_g(&mut t, v);
                        let fa = t.scale(f, a).unwrap();
                        let gb = t.scale(g, b).unwrap();
                        t.add(fa, gb).unwrap()
                    }
                };
                t.backward(root).unwrap().wrt(v).to_vec()
            };
            let (gf, gg, gc) = (grad(0), grad(1), grad(2));
            for k in 0..4 {
                prop_assert!((gc[k] - (a * gf[k] + b * gg[k])).abs() <= 1e-12 * (1.0 + gc[k].abs()));
            }
        }
    }
}
