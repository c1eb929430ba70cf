//! Define-then-run reverse-mode differentiation over [`DenseMatrix`] nodes.
//!
//! A [`Graph`] is built once from leaves (inputs fed at run time, parameters
//! and constants fixed at build time) and operations whose output shapes are
//! inferred and checked while building. [`Graph::forward`] binds the inputs
//! and evaluates every node in creation order, which is a topological order
//! by construction. [`Graph::backward`] then walks the nodes in reverse and
//! accumulates gradients for every node downstream of a parameter.

use super::{DenseMatrix, Shape, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a node, without its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Input,
    Parameter,
    Constant,
    Affine,
    Elu,
    Concat,
    Square,
    Softplus,
    Sigmoid,
    Sum,
    Mse,
    Bce,
    EmbedLookup,
    CumsumCols,
    SelectCols,
    Bilinear,
    Mul,
    Add,
    Scale,
    Reshape,
    SubFirstCol,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Parameter,
    Constant,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Elu(NodeId),
    Concat(Vec<NodeId>),
    Square(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    Mse { pred: NodeId, target: NodeId },
    Bce { logits: NodeId, target: NodeId },
    EmbedLookup { table: NodeId, indices: Vec<usize> },
    CumsumCols(NodeId),
    SelectCols { x: NodeId, cols: Vec<usize> },
    Bilinear { w: NodeId, left: Vec<f64>, right: Vec<f64> },
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Reshape(NodeId),
    SubFirstCol(NodeId),
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Input => OpTag::Input,
            Op::Parameter => OpTag::Parameter,
            Op::Constant => OpTag::Constant,
            Op::Affine { .. } => OpTag::Affine,
            Op::Elu(_) => OpTag::Elu,
            Op::Concat(_) => OpTag::Concat,
            Op::Square(_) => OpTag::Square,
            Op::Softplus(_) => OpTag::Softplus,
            Op::Sigmoid(_) => OpTag::Sigmoid,
            Op::Sum(_) => OpTag::Sum,
            Op::Mse { .. } => OpTag::Mse,
            Op::Bce { .. } => OpTag::Bce,
            Op::EmbedLookup { .. } => OpTag::EmbedLookup,
            Op::CumsumCols(_) => OpTag::CumsumCols,
            Op::SelectCols { .. } => OpTag::SelectCols,
            Op::Bilinear { .. } => OpTag::Bilinear,
            Op::Mul(..) => OpTag::Mul,
            Op::Add(..) => OpTag::Add,
            Op::Scale(..) => OpTag::Scale,
            Op::Reshape(_) => OpTag::Reshape,
            Op::SubFirstCol(_) => OpTag::SubFirstCol,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Parameter | Op::Constant => vec![],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Elu(x)
            | Op::Square(x)
            | Op::Softplus(x)
            | Op::Sigmoid(x)
            | Op::Sum(x)
            | Op::CumsumCols(x)
            | Op::Reshape(x)
            | Op::SubFirstCol(x)
            | Op::Scale(x, _) => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::Mse { pred, target } => vec![*pred, *target],
            Op::Bce { logits, target } => vec![*logits, *target],
            Op::EmbedLookup { table, .. } => vec![*table],
            Op::SelectCols { x, .. } => vec![*x],
            Op::Bilinear { w, .. } => vec![*w],
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Shape,
    value: Option<DenseMatrix>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    forwarded: bool,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the node is not downstream of a
    /// parameter.
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, zero-filled if the node received none.
    pub fn get_or_zeros(&self, id: NodeId, shape: Shape) -> DenseMatrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(shape.0, shape.1))
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn op_tag(&self, id: NodeId) -> OpTag {
        self.nodes[id.0].op.tag()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    fn push(&mut self, op: Op, shape: Shape, value: Option<DenseMatrix>) -> NodeId {
        let requires_grad = match op {
            Op::Parameter => true,
            Op::Input | Op::Constant => false,
            _ => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.forwarded = false;
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Placeholder bound by [`Graph::forward`].
    pub fn input(&mut self, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Input, Shape(rows, cols), None)
    }

    pub fn parameter(&mut self, value: DenseMatrix) -> NodeId {
        let shape = value.shape();
        self.push(Op::Parameter, shape, Some(value))
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        let shape = value.shape();
        self.push(Op::Constant, shape, Some(value))
    }

    /// `x · w + b`, with the `1 x out` bias added to every row.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.1 != ws.0 {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                left: xs,
                right: ws,
            });
        }
        if bs != Shape(1, ws.1) {
            return Err(TensorError::ShapeMismatch {
                op: "affine bias",
                left: Shape(1, ws.1),
                right: bs,
            });
        }
        Ok(self.push(Op::Affine { x, w, b }, Shape(xs.0, ws.1), None))
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Elu(x), s, None)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let rows = self.shape(*first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(*first),
                    right: s,
                });
            }
            cols += s.1;
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Shape(rows, cols), None))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Square(x), s, None)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Softplus(x), s, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Sigmoid(x), s, None)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x), Shape(1, 1), None)
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mse", pred, target)?;
        Ok(self.push(Op::Mse { pred, target }, Shape(1, 1), None))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("bce", logits, target)?;
        Ok(self.push(Op::Bce { logits, target }, Shape(1, 1), None))
    }

    /// One row of `table` per entry of `indices`.
    pub fn embed_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, TensorError> {
        let ts = self.shape(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= ts.0) {
            return Err(TensorError::IndexOutOfRange {
                op: "embed_lookup",
                index: bad,
                bound: ts.0,
            });
        }
        Ok(self.push(
            Op::EmbedLookup {
                table,
                indices: indices.to_vec(),
            },
            Shape(indices.len(), ts.1),
            None,
        ))
    }

    /// Running sum along each row: `out[:, k] = x[:, 0] + ... + x[:, k]`.
    pub fn cumsum_cols(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::CumsumCols(x), s, None)
    }

    /// Picks column `cols[r]` of row `r`, giving an `n x 1` column.
    pub fn select_cols(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId, TensorError> {
        let s = self.shape(x);
        if cols.len() != s.0 {
            return Err(TensorError::ShapeMismatch {
                op: "select_cols",
                left: s,
                right: Shape(cols.len(), 1),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= s.1) {
            return Err(TensorError::IndexOutOfRange {
                op: "select_cols",
                index: bad,
                bound: s.1,
            });
        }
        Ok(self.push(
            Op::SelectCols {
                x,
                cols: cols.to_vec(),
            },
            Shape(s.0, 1),
            None,
        ))
    }

    /// `leftᵀ · w · right` with constant vectors, a `1 x 1` result.
    pub fn bilinear(&mut self, w: NodeId, left: &[f64], right: &[f64]) -> Result<NodeId, TensorError> {
        let s = self.shape(w);
        if left.len() != s.0 || right.len() != s.1 {
            return Err(TensorError::ShapeMismatch {
                op: "bilinear",
                left: s,
                right: Shape(left.len(), right.len()),
            });
        }
        Ok(self.push(
            Op::Bilinear {
                w,
                left: left.to_vec(),
                right: right.to_vec(),
            },
            Shape(1, 1),
            None,
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s, None))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let s = self.shape(x);
        self.push(Op::Scale(x, factor), s, None)
    }

    /// Same row-major data under a new shape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId, TensorError> {
        let s = self.shape(x);
        if s.0 * s.1 != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: s,
                right: Shape(rows, cols),
            });
        }
        Ok(self.push(Op::Reshape(x), Shape(rows, cols), None))
    }

    /// `out[:, k] = x[:, k] - x[:, 0]`.
    pub fn sub_first_col(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.push(Op::SubFirstCol(x), s, None)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    /// Binds every input node and evaluates the whole graph.
    pub fn forward(&mut self, feeds: &[(NodeId, DenseMatrix)]) -> Result<(), TensorError> {
        for node in self.nodes.iter_mut() {
            if matches!(node.op, Op::Input) {
                node.value = None;
            }
        }
        for (id, value) in feeds {
            let node = self
                .nodes
                .get_mut(id.0)
                .ok_or(TensorError::UnknownNode(id.0))?;
            if !matches!(node.op, Op::Input) {
                return Err(TensorError::NotAnInput(id.0));
            }
            if node.shape != value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "feed",
                    left: node.shape,
                    right: value.shape(),
                });
            }
            node.value = Some(value.clone());
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Input) {
                if self.nodes[i].value.is_none() {
                    return Err(TensorError::MissingFeed(i));
                }
                continue;
            }
            if matches!(self.nodes[i].op, Op::Parameter | Op::Constant) {
                continue;
            }
            let value = self.eval(i);
            self.nodes[i].value = Some(value);
        }
        self.forwarded = true;
        Ok(())
    }

    fn val(&self, id: NodeId) -> &DenseMatrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("parent evaluated before child")
    }

    fn eval(&self, i: usize) -> DenseMatrix {
        let shape = self.nodes[i].shape;
        match &self.nodes[i].op {
            Op::Input | Op::Parameter | Op::Constant => unreachable!(),
            Op::Affine { x, w, b } => {
                let mut out = self.val(*x).matmul(self.val(*w)).expect("checked at build");
                let bias = self.val(*b).data();
                for r in 0..out.rows() {
                    for (o, bv) in out.row_mut(r).iter_mut().zip(bias) {
                        *o += bv;
                    }
                }
                out
            }
            Op::Elu(x) => self.val(*x).map(elu),
            Op::Concat(parts) => {
                let mut out = DenseMatrix::zeros(shape.0, shape.1);
                let mut offset = 0;
                for p in parts {
                    let v = self.val(*p);
                    for r in 0..shape.0 {
                        out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                    }
                    offset += v.cols();
                }
                out
            }
            Op::Square(x) => self.val(*x).map(|v| v * v),
            Op::Softplus(x) => self.val(*x).map(softplus),
            Op::Sigmoid(x) => self.val(*x).map(sigmoid),
            Op::Sum(x) => DenseMatrix::scalar(self.val(*x).sum()),
            Op::Mse { pred, target } => {
                let (p, t) = (self.val(*pred), self.val(*target));
                let m = p.data().len().max(1) as f64;
                let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
                DenseMatrix::scalar(s / m)
            }
            Op::Bce { logits, target } => {
                let (x, t) = (self.val(*logits), self.val(*target));
                let m = x.data().len().max(1) as f64;
                let s: f64 = x.data().iter().zip(t.data()).map(|(&a, &y)| softplus(a) - y * a).sum();
                DenseMatrix::scalar(s / m)
            }
            Op::EmbedLookup { table, indices } => self.val(*table).select_rows(indices),
            Op::CumsumCols(x) => {
                let mut out = self.val(*x).clone();
                for r in 0..shape.0 {
                    let row = out.row_mut(r);
                    for c in 1..row.len() {
                        row[c] += row[c - 1];
                    }
                }
                out
            }
            Op::SelectCols { x, cols } => {
                let v = self.val(*x);
                DenseMatrix::column(&cols.iter().enumerate().map(|(r, &c)| v.get(r, c)).collect::<Vec<_>>())
            }
            Op::Bilinear { w, left, right } => {
                let wv = self.val(*w);
                let mut s = 0.0;
                for (a, &l) in left.iter().enumerate() {
                    let row = wv.row(a);
                    s += l * row.iter().zip(right).map(|(x, y)| x * y).sum::<f64>();
                }
                DenseMatrix::scalar(s)
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                raw(shape, va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect())
            }
            Op::Add(a, b) => {
                let mut out = self.val(*a).clone();
                out.add_assign(self.val(*b)).expect("checked at build");
                out
            }
            Op::Scale(x, f) => self.val(*x).scaled(*f),
            Op::Reshape(x) => raw(shape, self.val(*x).data().to_vec()),
            Op::SubFirstCol(x) => {
                let mut out = self.val(*x).clone();
                for r in 0..shape.0 {
                    let row = out.row_mut(r);
                    let first = row[0];
                    row.iter_mut().for_each(|v| *v -= first);
                }
                out
            }
        }
    }

    /// Value of a node after [`Graph::forward`].
    pub fn value(&self, id: NodeId) -> Result<&DenseMatrix, TensorError> {
        let node = self
            .nodes
            .get(id.0)
            .ok_or(TensorError::UnknownNode(id.0))?;
        match (&node.op, self.forwarded) {
            (Op::Parameter | Op::Constant, _) => Ok(node.value.as_ref().expect("leaf value")),
            (_, false) => Err(TensorError::NotForwarded),
            (_, true) => Ok(node.value.as_ref().expect("forwarded")),
        }
    }

    /// Replaces a parameter's value; the graph must be re-run afterwards.
    pub fn set_parameter(&mut self, id: NodeId, value: DenseMatrix) -> Result<(), TensorError> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or(TensorError::UnknownNode(id.0))?;
        if !matches!(node.op, Op::Parameter) {
            return Err(TensorError::NotAParameter(id.0));
        }
        if node.shape != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_parameter",
                left: node.shape,
                right: value.shape(),
            });
        }
        node.value = Some(value);
        self.forwarded = false;
        Ok(())
    }

    /// Gradients of a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let shape = self.shape(loss);
        if shape != Shape(1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_seeded(&[(loss, DenseMatrix::scalar(1.0))])
    }

    /// Reverse pass from arbitrary upstream gradients, summed over the seeds.
    ///
    /// Seeding an intermediate node with `dL/dnode` composes an external
    /// differentiable stage into the chain rule.
    pub fn backward_seeded(&self, seeds: &[(NodeId, DenseMatrix)]) -> Result<Gradients, TensorError> {
        if !self.forwarded {
            return Err(TensorError::NotForwarded);
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            let shape = self.nodes.get(id.0).ok_or(TensorError::UnknownNode(id.0))?.shape;
            if shape != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "seed",
                    left: shape,
                    right: g.shape(),
                });
            }
            accumulate(&mut grads[id.0], g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let shape = self.nodes[i].shape;
        match &self.nodes[i].op {
            Op::Input | Op::Parameter | Op::Constant => {}
            Op::Affine { x, w, b } => {
                if self.wants(*x) {
                    let gx = g.matmul(&self.val(*w).transpose()).expect("shapes");
                    accumulate(&mut grads[x.0], gx);
                }
                if self.wants(*w) {
                    let gw = self.val(*x).transpose().matmul(g).expect("shapes");
                    accumulate(&mut grads[w.0], gw);
                }
                if self.wants(*b) {
                    let mut gb = DenseMatrix::zeros(1, shape.1);
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Elu(x) => {
                let xv = self.val(*x);
                let data = xv.data().iter().zip(g.data()).map(|(&a, &gv)| gv * elu_grad(a)).collect();
                accumulate(&mut grads[x.0], raw(shape, data));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let ps = self.shape(*p);
                    if self.wants(*p) {
                        let mut gp = DenseMatrix::zeros(ps.0, ps.1);
                        for r in 0..ps.0 {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + ps.1]);
                        }
                        accumulate(&mut grads[p.0], gp);
                    }
                    offset += ps.1;
                }
            }
            Op::Square(x) => {
                let xv = self.val(*x);
                let data = xv.data().iter().zip(g.data()).map(|(&a, &gv)| 2.0 * a * gv).collect();
                accumulate(&mut grads[x.0], raw(shape, data));
            }
            Op::Softplus(x) => {
                let xv = self.val(*x);
                let data = xv.data().iter().zip(g.data()).map(|(&a, &gv)| gv * sigmoid(a)).collect();
                accumulate(&mut grads[x.0], raw(shape, data));
            }
            Op::Sigmoid(x) => {
                let out = self.nodes[i].value.as_ref().expect("forwarded");
                let data = out.data().iter().zip(g.data()).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                accumulate(&mut grads[x.0], raw(shape, data));
            }
            Op::Sum(x) => {
                let s = self.shape(*x);
                accumulate(&mut grads[x.0], DenseMatrix::filled(s.0, s.1, g.item()));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.val(*pred), self.val(*target));
                let m = p.data().len().max(1) as f64;
                let k = 2.0 * g.item() / m;
                let data: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| k * (a - b)).collect();
                if self.wants(*target) {
                    let neg = data.iter().map(|v| -v).collect();
                    accumulate(&mut grads[target.0], raw(p.shape(), neg));
                }
                if self.wants(*pred) {
                    accumulate(&mut grads[pred.0], raw(p.shape(), data));
                }
            }
            Op::Bce { logits, target } => {
                let (x, t) = (self.val(*logits), self.val(*target));
                let m = x.data().len().max(1) as f64;
                let k = g.item() / m;
                if self.wants(*logits) {
                    let data = x.data().iter().zip(t.data()).map(|(&a, &y)| k * (sigmoid(a) - y)).collect();
                    accumulate(&mut grads[logits.0], raw(x.shape(), data));
                }
                if self.wants(*target) {
                    let data = x.data().iter().map(|&a| -k * a).collect();
                    accumulate(&mut grads[target.0], raw(x.shape(), data));
                }
            }
            Op::EmbedLookup { table, indices } => {
                let ts = self.shape(*table);
                let mut gt = DenseMatrix::zeros(ts.0, ts.1);
                for (r, &idx) in indices.iter().enumerate() {
                    for (o, v) in gt.row_mut(idx).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(&mut grads[table.0], gt);
            }
            Op::CumsumCols(x) => {
                let mut gx = g.clone();
                for r in 0..shape.0 {
                    let row = gx.row_mut(r);
                    for c in (0..row.len().saturating_sub(1)).rev() {
                        row[c] += row[c + 1];
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::SelectCols { x, cols } => {
                let s = self.shape(*x);
                let mut gx = DenseMatrix::zeros(s.0, s.1);
                for (r, &c) in cols.iter().enumerate() {
                    gx.set(r, c, g.get(r, 0));
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Bilinear { w, left, right } => {
                let s = self.shape(*w);
                let k = g.item();
                let mut gw = DenseMatrix::zeros(s.0, s.1);
                for (a, &l) in left.iter().enumerate() {
                    for (o, &rv) in gw.row_mut(a).iter_mut().zip(right) {
                        *o = k * l * rv;
                    }
                }
                accumulate(&mut grads[w.0], gw);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let data = vb.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], raw(shape, data));
                }
                if self.wants(*b) {
                    let data = va.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[b.0], raw(shape, data));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Scale(x, f) => accumulate(&mut grads[x.0], g.scaled(*f)),
            Op::Reshape(x) => {
                let s = self.shape(*x);
                accumulate(&mut grads[x.0], raw(s, g.data().to_vec()));
            }
            Op::SubFirstCol(x) => {
                let mut gx = g.clone();
                for r in 0..shape.0 {
                    let row = gx.row_mut(r);
                    let total: f64 = row.iter().sum();
                    row[0] -= total;
                }
                accumulate(&mut grads[x.0], gx);
            }
        }
    }
}

fn raw(shape: Shape, data: Vec<f64>) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(shape.0, shape.1);
    m.data_mut().copy_from_slice(&data);
    m
}

fn accumulate(slot: &mut Option<DenseMatrix>, g: DenseMatrix) {
    match slot {
        Some(existing) => existing.add_assign(&g).expect("gradient shapes agree"),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: &mut Graph) {
        g.forward(&[]).unwrap();
    }

    #[test]
    fn affine_identity_passes_input_through() {
        let mut g = Graph::new();
        let x = g.input(1, 2);
        let w = g.parameter(DenseMatrix::identity(2));
        let b = g.parameter(DenseMatrix::zeros(1, 2));
        let y = g.affine(x, w, b).unwrap();
        g.forward(&[(x, DenseMatrix::row_vector(&[1.0, 2.0]))]).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn square_and_softplus_values() {
        let mut g = Graph::new();
        let x = g.parameter(DenseMatrix::scalar(-3.0));
        let zero = g.constant(DenseMatrix::scalar(0.0));
        let sq = g.square(x);
        let sp = g.softplus(zero);
        run(&mut g);
        assert_eq!(g.value(sq).unwrap().item(), 9.0);
        assert!((g.value(sp).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.parameter(DenseMatrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let s = g.sum(x);
        run(&mut g);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut g = Graph::new();
        let x = g.parameter(DenseMatrix::scalar(3.0));
        let sq = g.square(x);
        run(&mut g);
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut g = Graph::new();
        let x = g.parameter(DenseMatrix::scalar(3.0));
        let sq = g.square(x);
        assert!(matches!(g.backward(sq), Err(TensorError::NotForwarded)));
    }

    #[test]
    fn feed_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let x = g.input(2, 3);
        let _ = g.sum(x);
        let err = g.forward(&[(x, DenseMatrix::zeros(3, 2))]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("3x2"), "{msg}");
    }

    #[test]
    fn build_time_shape_errors() {
        let mut g = Graph::new();
        let x = g.input(2, 3);
        let w = g.parameter(DenseMatrix::zeros(2, 2));
        let b = g.parameter(DenseMatrix::zeros(1, 2));
        assert!(g.affine(x, w, b).is_err());
        let y = g.input(3, 3);
        assert!(g.add(x, y).is_err());
    }

    #[test]
    fn missing_feed_is_an_error() {
        let mut g = Graph::new();
        let x = g.input(1, 1);
        let _ = g.square(x);
        assert!(matches!(g.forward(&[]), Err(TensorError::MissingFeed(_))));
    }

    #[test]
    fn cumsum_and_select() {
        let mut g = Graph::new();
        let x = g.parameter(DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap());
        let c = g.cumsum_cols(x);
        let s = g.select_cols(c, &[2, 1]).unwrap();
        let loss = g.sum(s);
        run(&mut g);
        assert_eq!(g.value(c).unwrap().data(), &[1.0, 3.0, 6.0, 0.5, 1.0, 1.5]);
        assert_eq!(g.value(s).unwrap().data(), &[6.0, 1.0]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn reshape_and_sub_first_col() {
        let mut g = Graph::new();
        let x = g.parameter(DenseMatrix::from_rows(&[vec![1.0, 2.0, 4.0, 8.0]]).unwrap());
        let r = g.reshape(x, 2, 2).unwrap();
        let d = g.sub_first_col(r);
        let loss = g.sum(d);
        run(&mut g);
        assert_eq!(g.value(d).unwrap().data(), &[0.0, 1.0, 0.0, 4.0]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, 1.0, -1.0, 1.0]);
        assert!(g.reshape(x, 3, 1).is_err());
    }

    /// Builds a graph touching every differentiable op from one parameter.
    fn every_op(p: &DenseMatrix) -> (Graph, NodeId, NodeId) {
        let mut g = Graph::new();
        let x = g.parameter(p.clone());
        let w = g.constant(DenseMatrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4], vec![-0.5, 0.2]]).unwrap());
        let b = g.constant(DenseMatrix::row_vector(&[0.1, -0.1]));
        let a = g.affine(x, w, b).unwrap();
        let e = g.elu(a);
        let cat = g.concat(&[e, x]).unwrap();
        let sq = g.square(cat);
        let sp = g.softplus(cat);
        let sg = g.sigmoid(cat);
        let m = g.mul(sp, sg).unwrap();
        let ad = g.add(m, sq).unwrap();
        let sc = g.scale(ad, 0.7);
        let lk = g.embed_lookup(sc, &[1, 0, 1]).unwrap();
        let cs = g.cumsum_cols(lk);
        let sf = g.sub_first_col(cs);
        let rs = g.reshape(sf, 5, 3).unwrap();
        let sel = g.select_cols(rs, &[0, 1, 2, 1, 0]).unwrap();
        let target = g.constant(DenseMatrix::column(&[0.0, 1.0, 0.0, 1.0, 1.0]));
        let l1 = g.mse(sel, target).unwrap();
        let l2 = g.bce(sel, target).unwrap();
        let bl = g.bilinear(x, &[0.6, -0.8], &[0.2, 0.3, 0.5]).unwrap();
        let s1 = g.add(l1, l2).unwrap();
        let loss = g.add(s1, bl).unwrap();
        (g, x, loss)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let p = DenseMatrix::from_rows(&[vec![0.4, -1.1, 0.7], vec![-0.3, 0.9, 0.2]]).unwrap();
        let (mut g, x, loss) = every_op(&p);
        run(&mut g);
        let analytic = g.backward(loss).unwrap().get(x).unwrap().clone();
        let h = 1e-6;
        for j in 0..p.data().len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.data_mut()[j] += delta;
                let (mut g, _, loss) = every_op(&q);
                g.forward(&[]).unwrap();
                g.value(loss).unwrap().item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[j];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-6, "coord {j}: {a} vs {fd}");
        }
    }
}
