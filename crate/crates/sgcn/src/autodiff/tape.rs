//! Reverse-mode tape.
//!
//! Every forward operation appends one node holding its output values and
//! enough saved state to replay the chain rule. `backward` walks the nodes in
//! strict reverse creation order, so gradient accumulation happens in one
//! fixed order and repeated runs are bitwise identical.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::autodiff::store::{ParamId, ParamStore};
use crate::autodiff::tensor::{GradBuf, Tensor};
use crate::autodiff::TapeError;
use crate::scalar::{sigmoid, Scalar};

/// Handle to one node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

enum Op<S> {
    Leaf,
    /// Rows of `table` selected by index, in order.
    GatherRows { table: VarId, rows: Vec<usize> },
    /// `op(a) * op(b)` where each operand is optionally transposed.
    MatMul { a: VarId, b: VarId, ta: bool, tb: bool },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    /// Elementwise product of two nodes.
    Mul { a: VarId, b: VarId },
    /// Multiply by one compile-time-constant scalar.
    ScaleConst { a: VarId, c: S },
    /// Elementwise product with a fixed buffer (dropout masks).
    MulConst { a: VarId, factors: Vec<S> },
    /// Broadcast a rank-1 vector over every row of a matrix.
    AddRowVec { a: VarId, v: VarId },
    Relu { a: VarId },
    Tanh { a: VarId },
    Sigmoid { a: VarId },
    /// Column-wise softmax of a square matrix restricted to valid indices;
    /// rows and columns flagged invalid come out exactly zero.
    SoftmaxColumns { a: VarId, valid: Vec<bool> },
    /// Divide each column by (column sum + eps). Saved denominators make the
    /// backward pass independent of recomputation order.
    NormalizeColumns { a: VarId, denom: Vec<S> },
    /// Zero every row and column of a square matrix flagged invalid.
    MaskMatrix { a: VarId, valid: Vec<bool> },
    /// Zero every row flagged invalid.
    MaskRows { a: VarId, valid: Vec<bool> },
    Sum { a: VarId },
    Mean { a: VarId },
    /// Column-wise max over the listed rows. Ties resolve to the first listed
    /// row, recorded in `argmax` so backward never re-derives the winner.
    MaxPoolRows { a: VarId, argmax: Vec<usize> },
    MeanPoolRows { a: VarId, rows: Vec<usize> },
    ConcatCols { inputs: Vec<VarId> },
    ConcatRows { inputs: Vec<VarId> },
    SliceRows { a: VarId, start: usize },
    SliceCols { a: VarId, start: usize },
    Reshape { a: VarId },
    /// Negative log-likelihood of `label` under a softmax of the logits.
    /// The softmax itself is saved; backward is `softmax - onehot`.
    CrossEntropyLogits { a: VarId, label: usize, softmax: Vec<S> },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::GatherRows { .. } => "gather_rows",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::ScaleConst { .. } => "scale",
            Op::MulConst { .. } => "mul_values",
            Op::AddRowVec { .. } => "add_row_vec",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Sigmoid { .. } => "sigmoid",
            Op::SoftmaxColumns { .. } => "softmax_columns",
            Op::NormalizeColumns { .. } => "normalize_columns",
            Op::MaskMatrix { .. } => "mask_matrix",
            Op::MaskRows { .. } => "mask_rows",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::MaxPoolRows { .. } => "max_pool_rows",
            Op::MeanPoolRows { .. } => "mean_pool_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape { .. } => "reshape",
            Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
        }
    }
}

struct Node<S> {
    shape: Vec<usize>,
    values: Arc<Vec<S>>,
    op: Op<S>,
    needs_grad: bool,
}

impl<S> Node<S> {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }
}

/// Gradients produced by one backward pass. Indexed by the same [`VarId`]s as
/// the tape that produced them; intermediate (non-leaf) slots are freed during
/// the pass and read back as `None`.
pub struct Gradients<S> {
    bufs: Vec<Option<GradBuf<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: VarId) -> Option<&GradBuf<S>> {
        self.bufs.get(v.0).and_then(Option::as_ref)
    }
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, VarId>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: VarId) -> &[S] {
        &self.nodes[v.0].values
    }

    /// Copies a node out as a standalone tensor (shares the value buffer).
    pub fn to_tensor(&self, v: VarId) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::from_arc(n.shape.clone(), Arc::clone(&n.values))
    }

    pub fn scalar_value(&self, v: VarId) -> Result<S, TapeError> {
        let n = self.node(v, "scalar_value")?;
        if n.numel() != 1 {
            return Err(TapeError::NonScalarLoss {
                shape: n.shape.clone(),
            });
        }
        Ok(n.values[0])
    }

    fn node(&self, v: VarId, op: &'static str) -> Result<&Node<S>, TapeError> {
        self.nodes.get(v.0).ok_or(TapeError::OutOfBounds {
            op,
            index: v.0,
            bound: self.nodes.len(),
        })
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<S>, op: Op<S>, needs_grad: bool) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        #[cfg(debug_assertions)]
        {
            // Catch NaN/Inf at the op that produced it instead of at the loss.
            for x in &values {
                debug_assert!(x.is_finite(), "non-finite value out of {}", op.name());
            }
        }
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            values: Arc::new(values),
            op,
            needs_grad,
        });
        id
    }

    /// Records an input tensor. Gradients flow back to it only when the
    /// tensor was marked `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<S>) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            values: t.values_arc(),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        id
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<S>) -> Result<VarId, TapeError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TapeError::BadBuffer {
                shape,
                expected,
                actual: values.len(),
            });
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    /// Records a parameter leaf. Repeated registration of the same id on one
    /// tape returns the original node, so each parameter accumulates exactly
    /// one gradient buffer per backward pass.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> VarId {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = VarId(self.nodes.len());
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            values: t.values_arc(),
            op: Op::Leaf,
            needs_grad: true,
        });
        self.params.insert(id, v);
        v
    }

    pub fn gather_rows(&mut self, table: VarId, rows: &[usize]) -> Result<VarId, TapeError> {
        let t = self.node(table, "gather_rows")?;
        if t.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "gather_rows",
                rank: t.shape.len(),
                shape: t.shape.clone(),
            });
        }
        if rows.is_empty() {
            return Err(TapeError::EmptyPositions { op: "gather_rows" });
        }
        let (n, m) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            if r >= n {
                return Err(TapeError::OutOfBounds {
                    op: "gather_rows",
                    index: r,
                    bound: n,
                });
            }
            out.extend_from_slice(&t.values[r * m..(r + 1) * m]);
        }
        let needs = t.needs_grad;
        Ok(self.push(
            vec![rows.len(), m],
            out,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId, ta: bool, tb: bool) -> Result<VarId, TapeError> {
        let na = self.node(a, "matmul")?;
        let nb = self.node(b, "matmul")?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "matmul",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if nb.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "matmul",
                rank: nb.shape.len(),
                shape: nb.shape.clone(),
            });
        }
        let (ar, ac) = (na.rows(), na.cols());
        let (br, bc) = (nb.rows(), nb.cols());
        let (n, ka) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, m) = if tb { (bc, br) } else { (br, bc) };
        if ka != kb {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); n * m];
        gemm(
            &na.values,
            &nb.values,
            (n, ka, m),
            (ar, ac),
            (br, bc),
            ta,
            tb,
            &mut out,
        );
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![n, m], out, Op::MatMul { a, b, ta, tb }, needs))
    }

    fn binary_same_shape(
        &mut self,
        a: VarId,
        b: VarId,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<VarId, TapeError> {
        let na = self.node(a, name)?;
        let nb = self.node(b, name)?;
        if na.shape != nb.shape {
            return Err(TapeError::ShapeMismatch {
                op: name,
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let out: Vec<S> = na
            .values
            .iter()
            .zip(nb.values.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(shape, out, op, needs))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TapeError> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TapeError> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TapeError> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId, TapeError> {
        let na = self.node(a, "scale")?;
        let c = S::from_f64(c);
        let out: Vec<S> = na.values.iter().map(|&x| x * c).collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad;
        Ok(self.push(shape, out, Op::ScaleConst { a, c }, needs))
    }

    /// Elementwise product with a constant buffer of the same element count.
    pub fn mul_values(&mut self, a: VarId, factors: Vec<S>) -> Result<VarId, TapeError> {
        let na = self.node(a, "mul_values")?;
        if factors.len() != na.numel() {
            return Err(TapeError::BadBuffer {
                shape: na.shape.clone(),
                expected: na.numel(),
                actual: factors.len(),
            });
        }
        let out: Vec<S> = na
            .values
            .iter()
            .zip(factors.iter())
            .map(|(&x, &f)| x * f)
            .collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad;
        Ok(self.push(shape, out, Op::MulConst { a, factors }, needs))
    }

    pub fn add_row_vec(&mut self, a: VarId, v: VarId) -> Result<VarId, TapeError> {
        let na = self.node(a, "add_row_vec")?;
        let nv = self.node(v, "add_row_vec")?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "add_row_vec",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if nv.shape.len() != 1 || nv.shape[0] != na.cols() {
            return Err(TapeError::ShapeMismatch {
                op: "add_row_vec",
                lhs: na.shape.clone(),
                rhs: nv.shape.clone(),
            });
        }
        let (n, m) = (na.rows(), na.cols());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(na.values[i * m + j] + nv.values[j]);
            }
        }
        let needs = na.needs_grad || nv.needs_grad;
        Ok(self.push(vec![n, m], out, Op::AddRowVec { a, v }, needs))
    }

    fn unary(
        &mut self,
        a: VarId,
        name: &'static str,
        f: impl Fn(S) -> S,
        op: Op<S>,
    ) -> Result<VarId, TapeError> {
        let na = self.node(a, name)?;
        let out: Vec<S> = na.values.iter().map(|&x| f(x)).collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad;
        Ok(self.push(shape, out, op, needs))
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId, TapeError> {
        self.unary(
            a,
            "relu",
            |x| if x > S::zero() { x } else { S::zero() },
            Op::Relu { a },
        )
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId, TapeError> {
        self.unary(a, "tanh", |x| x.tanh(), Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId, TapeError> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid { a })
    }

    fn square_with_mask(
        &self,
        a: VarId,
        valid: &[bool],
        name: &'static str,
    ) -> Result<usize, TapeError> {
        let na = self.node(a, name)?;
        if na.shape.len() != 2 || na.rows() != na.cols() {
            return Err(TapeError::BadRank {
                op: name,
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if valid.len() != na.rows() {
            return Err(TapeError::BadBuffer {
                shape: na.shape.clone(),
                expected: na.rows(),
                actual: valid.len(),
            });
        }
        Ok(na.rows())
    }

    /// Softmax over each valid column of a square score matrix, taken across
    /// its valid rows. Entries touching an invalid index are exactly zero.
    pub fn softmax_columns(&mut self, a: VarId, valid: &[bool]) -> Result<VarId, TapeError> {
        let n = self.square_with_mask(a, valid, "softmax_columns")?;
        let x = &self.nodes[a.0].values;
        let mut out = vec![S::zero(); n * n];
        for v in 0..n {
            if !valid[v] {
                continue;
            }
            // Shift by the column max before exponentiating; exp never sees a
            // large positive argument.
            let mut mx = S::from_f64(f64::NEG_INFINITY);
            let mut any = false;
            for u in 0..n {
                if valid[u] {
                    any = true;
                    if x[u * n + v] > mx {
                        mx = x[u * n + v];
                    }
                }
            }
            if !any {
                continue;
            }
            let mut denom = S::zero();
            for u in 0..n {
                if valid[u] {
                    let e = (x[u * n + v] - mx).exp();
                    out[u * n + v] = e;
                    denom += e;
                }
            }
            for u in 0..n {
                if valid[u] {
                    out[u * n + v] = out[u * n + v] / denom;
                }
            }
        }
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(
            vec![n, n],
            out,
            Op::SoftmaxColumns {
                a,
                valid: valid.to_vec(),
            },
            needs,
        ))
    }

    /// Divides every column by its sum plus `eps`. With non-negative input a
    /// column either sums to one or stays exactly zero; `eps` only guards the
    /// all-zero case.
    pub fn normalize_columns(&mut self, a: VarId, eps: f64) -> Result<VarId, TapeError> {
        let na = self.node(a, "normalize_columns")?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "normalize_columns",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(TapeError::BadEpsilon(eps));
        }
        let (n, m) = (na.rows(), na.cols());
        let x = &na.values;
        let eps = S::from_f64(eps);
        let mut denom = vec![eps; m];
        for u in 0..n {
            for v in 0..m {
                denom[v] += x[u * m + v];
            }
        }
        let mut out = vec![S::zero(); n * m];
        for u in 0..n {
            for v in 0..m {
                out[u * m + v] = x[u * m + v] / denom[v];
            }
        }
        let needs = na.needs_grad;
        Ok(self.push(
            vec![n, m],
            out,
            Op::NormalizeColumns { a, denom },
            needs,
        ))
    }

    pub fn mask_matrix(&mut self, a: VarId, valid: &[bool]) -> Result<VarId, TapeError> {
        let n = self.square_with_mask(a, valid, "mask_matrix")?;
        let x = &self.nodes[a.0].values;
        let mut out = vec![S::zero(); n * n];
        for u in 0..n {
            if !valid[u] {
                continue;
            }
            for v in 0..n {
                if valid[v] {
                    out[u * n + v] = x[u * n + v];
                }
            }
        }
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(
            vec![n, n],
            out,
            Op::MaskMatrix {
                a,
                valid: valid.to_vec(),
            },
            needs,
        ))
    }

    pub fn mask_rows(&mut self, a: VarId, valid: &[bool]) -> Result<VarId, TapeError> {
        let na = self.node(a, "mask_rows")?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "mask_rows",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if valid.len() != na.rows() {
            return Err(TapeError::BadBuffer {
                shape: na.shape.clone(),
                expected: na.rows(),
                actual: valid.len(),
            });
        }
        let (n, m) = (na.rows(), na.cols());
        let mut out = vec![S::zero(); n * m];
        for i in 0..n {
            if valid[i] {
                out[i * m..(i + 1) * m].copy_from_slice(&na.values[i * m..(i + 1) * m]);
            }
        }
        let needs = na.needs_grad;
        Ok(self.push(
            vec![n, m],
            out,
            Op::MaskRows {
                a,
                valid: valid.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: VarId) -> Result<VarId, TapeError> {
        let na = self.node(a, "sum")?;
        let mut acc = S::zero();
        for &x in na.values.iter() {
            acc += x;
        }
        let needs = na.needs_grad;
        Ok(self.push(vec![], vec![acc], Op::Sum { a }, needs))
    }

    pub fn mean(&mut self, a: VarId) -> Result<VarId, TapeError> {
        let na = self.node(a, "mean")?;
        if na.numel() == 0 {
            return Err(TapeError::EmptyPositions { op: "mean" });
        }
        let mut acc = S::zero();
        for &x in na.values.iter() {
            acc += x;
        }
        let n = S::from_f64(na.numel() as f64);
        let needs = na.needs_grad;
        Ok(self.push(vec![], vec![acc / n], Op::Mean { a }, needs))
    }

    fn check_pool_rows(
        &self,
        a: VarId,
        rows: &[usize],
        name: &'static str,
    ) -> Result<(usize, usize), TapeError> {
        let na = self.node(a, name)?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: name,
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if rows.is_empty() {
            return Err(TapeError::EmptyPositions { op: name });
        }
        for &r in rows {
            if r >= na.rows() {
                return Err(TapeError::OutOfBounds {
                    op: name,
                    index: r,
                    bound: na.rows(),
                });
            }
        }
        Ok((na.rows(), na.cols()))
    }

    /// Column-wise max over the listed rows; ties keep the earliest listed row.
    pub fn max_pool_rows(&mut self, a: VarId, rows: &[usize]) -> Result<VarId, TapeError> {
        let (_, m) = self.check_pool_rows(a, rows, "max_pool_rows")?;
        let x = &self.nodes[a.0].values;
        let mut out = Vec::with_capacity(m);
        let mut argmax = Vec::with_capacity(m);
        for j in 0..m {
            let mut best = x[rows[0] * m + j];
            let mut best_row = rows[0];
            for &r in &rows[1..] {
                if x[r * m + j] > best {
                    best = x[r * m + j];
                    best_row = r;
                }
            }
            out.push(best);
            argmax.push(best_row);
        }
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(
            vec![1, m],
            out,
            Op::MaxPoolRows { a, argmax },
            needs,
        ))
    }

    pub fn mean_pool_rows(&mut self, a: VarId, rows: &[usize]) -> Result<VarId, TapeError> {
        let (_, m) = self.check_pool_rows(a, rows, "mean_pool_rows")?;
        let x = &self.nodes[a.0].values;
        let inv = S::from_f64(1.0 / rows.len() as f64);
        let mut out = vec![S::zero(); m];
        for &r in rows {
            for j in 0..m {
                out[j] += x[r * m + j];
            }
        }
        for o in &mut out {
            *o *= inv;
        }
        let needs = self.nodes[a.0].needs_grad;
        Ok(self.push(
            vec![1, m],
            out,
            Op::MeanPoolRows {
                a,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, inputs: &[VarId]) -> Result<VarId, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::NoOperands { op: "concat_cols" });
        }
        let first = self.node(inputs[0], "concat_cols")?;
        if first.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "concat_cols",
                rank: first.shape.len(),
                shape: first.shape.clone(),
            });
        }
        let n = first.rows();
        let mut total = 0usize;
        let mut needs = false;
        for &v in inputs {
            let nv = self.node(v, "concat_cols")?;
            if nv.shape.len() != 2 || nv.rows() != n {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape.clone(),
                    rhs: nv.shape.clone(),
                });
            }
            total += nv.cols();
            needs |= nv.needs_grad;
        }
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &v in inputs {
                let nv = &self.nodes[v.0];
                let m = nv.cols();
                out.extend_from_slice(&nv.values[i * m..(i + 1) * m]);
            }
        }
        Ok(self.push(
            vec![n, total],
            out,
            Op::ConcatCols {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    pub fn concat_rows(&mut self, inputs: &[VarId]) -> Result<VarId, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::NoOperands { op: "concat_rows" });
        }
        let first = self.node(inputs[0], "concat_rows")?;
        if first.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "concat_rows",
                rank: first.shape.len(),
                shape: first.shape.clone(),
            });
        }
        let m = first.cols();
        let mut total = 0usize;
        let mut needs = false;
        for &v in inputs {
            let nv = self.node(v, "concat_rows")?;
            if nv.shape.len() != 2 || nv.cols() != m {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape.clone(),
                    rhs: nv.shape.clone(),
                });
            }
            total += nv.rows();
            needs |= nv.needs_grad;
        }
        let mut out = Vec::with_capacity(total * m);
        for &v in inputs {
            out.extend_from_slice(&self.nodes[v.0].values);
        }
        Ok(self.push(
            vec![total, m],
            out,
            Op::ConcatRows {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    pub fn slice_rows(&mut self, a: VarId, start: usize, end: usize) -> Result<VarId, TapeError> {
        let na = self.node(a, "slice_rows")?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "slice_rows",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if start >= end || end > na.rows() {
            return Err(TapeError::OutOfBounds {
                op: "slice_rows",
                index: end,
                bound: na.rows(),
            });
        }
        let m = na.cols();
        let out = na.values[start * m..end * m].to_vec();
        let needs = na.needs_grad;
        Ok(self.push(
            vec![end - start, m],
            out,
            Op::SliceRows { a, start },
            needs,
        ))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, end: usize) -> Result<VarId, TapeError> {
        let na = self.node(a, "slice_cols")?;
        if na.shape.len() != 2 {
            return Err(TapeError::BadRank {
                op: "slice_cols",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if start >= end || end > na.cols() {
            return Err(TapeError::OutOfBounds {
                op: "slice_cols",
                index: end,
                bound: na.cols(),
            });
        }
        let (n, m) = (na.rows(), na.cols());
        let w = end - start;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&na.values[i * m + start..i * m + end]);
        }
        let needs = na.needs_grad;
        Ok(self.push(
            vec![n, w],
            out,
            Op::SliceCols { a, start },
            needs,
        ))
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId, TapeError> {
        let na = self.node(a, "reshape")?;
        let expected: usize = shape.iter().product();
        if expected != na.numel() {
            return Err(TapeError::BadBuffer {
                shape,
                expected,
                actual: na.numel(),
            });
        }
        let out = na.values.to_vec();
        let needs = na.needs_grad;
        Ok(self.push(shape, out, Op::Reshape { a }, needs))
    }

    /// Cross-entropy of one label against a single row of logits (`[r]` or
    /// `[1, r]`). Uses the shifted log-sum-exp so large logits cannot
    /// overflow.
    pub fn cross_entropy_logits(&mut self, a: VarId, label: usize) -> Result<VarId, TapeError> {
        let na = self.node(a, "cross_entropy_logits")?;
        let r = na.numel();
        let row_like = match na.shape.len() {
            1 => true,
            2 => na.rows() == 1,
            _ => false,
        };
        if !row_like || r == 0 {
            return Err(TapeError::BadRank {
                op: "cross_entropy_logits",
                rank: na.shape.len(),
                shape: na.shape.clone(),
            });
        }
        if label >= r {
            return Err(TapeError::OutOfBounds {
                op: "cross_entropy_logits",
                index: label,
                bound: r,
            });
        }
        let x = &na.values;
        let mut mx = x[0];
        for &v in x.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut denom = S::zero();
        let mut softmax = Vec::with_capacity(r);
        for &v in x.iter() {
            let e = (v - mx).exp();
            softmax.push(e);
            denom += e;
        }
        for s in &mut softmax {
            *s = *s / denom;
        }
        let loss = denom.ln() + mx - x[label];
        let needs = na.needs_grad;
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropyLogits { a, label, softmax },
            needs,
        ))
    }

    /// Runs the chain rule from `loss` back to every leaf that wants a
    /// gradient. Intermediate buffers are dropped as soon as they are
    /// consumed; leaf gradients stay readable in the returned set.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<S>, TapeError> {
        if self.nodes.is_empty() {
            return Err(TapeError::EmptyTape);
        }
        let ln = self.node(loss, "backward")?;
        if ln.numel() != 1 {
            return Err(TapeError::NonScalarLoss {
                shape: ln.shape.clone(),
            });
        }
        let mut bufs: Vec<Option<GradBuf<S>>> = Vec::with_capacity(self.nodes.len());
        bufs.resize_with(self.nodes.len(), || None);
        bufs[loss.0] = Some(GradBuf::Dense(vec![S::one()]));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                bufs[i] = None;
                continue;
            }
            let Some(buf) = bufs[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    // Keep leaf gradients readable after the pass.
                    bufs[i] = Some(buf);
                    continue;
                }
                Op::GatherRows { table, rows } => {
                    let g = buf.to_dense(node.numel());
                    let m = node.cols();
                    if self.nodes[table.0].needs_grad {
                        // Tables are large and passes touch few rows; keep the
                        // buffer row-sparse unless something densifies it.
                        let tslot = bufs[table.0].get_or_insert_with(|| GradBuf::Rows {
                            width: m,
                            rows: BTreeMap::new(),
                        });
                        for (k, &r) in rows.iter().enumerate() {
                            tslot.add_row(m, r, &g[k * m..(k + 1) * m]);
                        }
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    let g = buf.to_dense(node.numel());
                    let (n, m) = (node.rows(), node.cols());
                    let (ar, ac) = (self.nodes[a.0].rows(), self.nodes[a.0].cols());
                    let (br, bc) = (self.nodes[b.0].rows(), self.nodes[b.0].cols());
                    let k = if *ta { ar } else { ac };
                    if self.nodes[a.0].needs_grad {
                        let bv = &self.nodes[b.0].values;
                        let mut da = vec![S::zero(); ar * ac];
                        if !*ta {
                            // dA = dC * op_b(B)^T
                            gemm(&g, bv, (n, m, k), (n, m), (br, bc), false, !*tb, &mut da);
                        } else {
                            // A enters transposed: dA = op_b(B) * dC^T
                            gemm(bv, &g, (k, m, n), (br, bc), (n, m), *tb, true, &mut da);
                        }
                        slot(&mut bufs, *a).add_dense(&da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = &self.nodes[a.0].values;
                        let mut db = vec![S::zero(); br * bc];
                        if !*tb {
                            // dB = op_a(A)^T * dC
                            gemm(av, &g, (k, n, m), (ar, ac), (n, m), !*ta, false, &mut db);
                        } else {
                            // B enters transposed: dB = dC^T * op_a(A)
                            gemm(&g, av, (m, n, k), (n, m), (ar, ac), true, *ta, &mut db);
                        }
                        slot(&mut bufs, *b).add_dense(&db);
                    }
                }
                Op::Add { a, b } => {
                    let g = buf.to_dense(node.numel());
                    if self.nodes[a.0].needs_grad {
                        slot(&mut bufs, *a).add_dense(&g);
                    }
                    if self.nodes[b.0].needs_grad {
                        slot(&mut bufs, *b).add_dense(&g);
                    }
                }
                Op::Sub { a, b } => {
                    let g = buf.to_dense(node.numel());
                    if self.nodes[a.0].needs_grad {
                        slot(&mut bufs, *a).add_dense(&g);
                    }
                    if self.nodes[b.0].needs_grad {
                        let neg: Vec<S> = g.iter().map(|&x| -x).collect();
                        slot(&mut bufs, *b).add_dense(&neg);
                    }
                }
                Op::Mul { a, b } => {
                    let g = buf.to_dense(node.numel());
                    if self.nodes[a.0].needs_grad {
                        let bv = &self.nodes[b.0].values;
                        let da: Vec<S> = g.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect();
                        slot(&mut bufs, *a).add_dense(&da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = &self.nodes[a.0].values;
                        let db: Vec<S> = g.iter().zip(av.iter()).map(|(&x, &y)| x * y).collect();
                        slot(&mut bufs, *b).add_dense(&db);
                    }
                }
                Op::ScaleConst { a, c } => {
                    let g = buf.to_dense(node.numel());
                    let da: Vec<S> = g.iter().map(|&x| x * *c).collect();
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::MulConst { a, factors } => {
                    let g = buf.to_dense(node.numel());
                    let da: Vec<S> = g
                        .iter()
                        .zip(factors.iter())
                        .map(|(&x, &f)| x * f)
                        .collect();
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::AddRowVec { a, v } => {
                    let g = buf.to_dense(node.numel());
                    let (n, m) = (node.rows(), node.cols());
                    if self.nodes[a.0].needs_grad {
                        slot(&mut bufs, *a).add_dense(&g);
                    }
                    if self.nodes[v.0].needs_grad {
                        let mut dv = vec![S::zero(); m];
                        for i in 0..n {
                            for j in 0..m {
                                dv[j] += g[i * m + j];
                            }
                        }
                        slot(&mut bufs, *v).add_dense(&dv);
                    }
                }
                Op::Relu { a } => {
                    // Subgradient at exactly zero is zero.
                    let g = buf.to_dense(node.numel());
                    let xv = &self.nodes[a.0].values;
                    let da: Vec<S> = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gy, &x)| if x > S::zero() { gy } else { S::zero() })
                        .collect();
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::Tanh { a } => {
                    let g = buf.to_dense(node.numel());
                    let yv = &node.values;
                    let da: Vec<S> = g
                        .iter()
                        .zip(yv.iter())
                        .map(|(&gy, &y)| gy * (S::one() - y * y))
                        .collect();
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::Sigmoid { a } => {
                    let g = buf.to_dense(node.numel());
                    let yv = &node.values;
                    let da: Vec<S> = g
                        .iter()
                        .zip(yv.iter())
                        .map(|(&gy, &y)| gy * y * (S::one() - y))
                        .collect();
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::SoftmaxColumns { a, valid } => {
                    let g = buf.to_dense(node.numel());
                    let y = &node.values;
                    let n = node.rows();
                    let mut da = vec![S::zero(); n * n];
                    for v in 0..n {
                        if !valid[v] {
                            continue;
                        }
                        let mut dot = S::zero();
                        for u in 0..n {
                            if valid[u] {
                                dot += g[u * n + v] * y[u * n + v];
                            }
                        }
                        for u in 0..n {
                            if valid[u] {
                                da[u * n + v] = y[u * n + v] * (g[u * n + v] - dot);
                            }
                        }
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::NormalizeColumns { a, denom } => {
                    let g = buf.to_dense(node.numel());
                    let y = &node.values;
                    let (n, m) = (node.rows(), node.cols());
                    let mut da = vec![S::zero(); n * m];
                    for v in 0..m {
                        let mut dot = S::zero();
                        for u in 0..n {
                            dot += g[u * m + v] * y[u * m + v];
                        }
                        for u in 0..n {
                            da[u * m + v] = (g[u * m + v] - dot) / denom[v];
                        }
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::MaskMatrix { a, valid } => {
                    let g = buf.to_dense(node.numel());
                    let n = node.rows();
                    let mut da = vec![S::zero(); n * n];
                    for u in 0..n {
                        if !valid[u] {
                            continue;
                        }
                        for v in 0..n {
                            if valid[v] {
                                da[u * n + v] = g[u * n + v];
                            }
                        }
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::MaskRows { a, valid } => {
                    let g = buf.to_dense(node.numel());
                    let (n, m) = (node.rows(), node.cols());
                    let mut da = vec![S::zero(); n * m];
                    for i in 0..n {
                        if valid[i] {
                            da[i * m..(i + 1) * m].copy_from_slice(&g[i * m..(i + 1) * m]);
                        }
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::Sum { a } => {
                    let g = buf.to_dense(1)[0];
                    let da = vec![g; self.nodes[a.0].numel()];
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::Mean { a } => {
                    let g = buf.to_dense(1)[0];
                    let numel = self.nodes[a.0].numel();
                    let gn = g / S::from_f64(numel as f64);
                    let da = vec![gn; numel];
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::MaxPoolRows { a, argmax } => {
                    let g = buf.to_dense(node.numel());
                    let m = node.cols();
                    let am = self.nodes[a.0].cols();
                    let mut da = vec![S::zero(); self.nodes[a.0].numel()];
                    for j in 0..m {
                        da[argmax[j] * am + j] += g[j];
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::MeanPoolRows { a, rows } => {
                    let g = buf.to_dense(node.numel());
                    let m = node.cols();
                    let inv = S::from_f64(1.0 / rows.len() as f64);
                    let mut da = vec![S::zero(); self.nodes[a.0].numel()];
                    for &r in rows {
                        for j in 0..m {
                            da[r * m + j] += g[j] * inv;
                        }
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::ConcatCols { inputs } => {
                    let g = buf.to_dense(node.numel());
                    let n = node.rows();
                    let total = node.cols();
                    let mut offset = 0usize;
                    for &v in inputs {
                        let m = self.nodes[v.0].cols();
                        if self.nodes[v.0].needs_grad {
                            let mut dv = vec![S::zero(); n * m];
                            for i in 0..n {
                                dv[i * m..(i + 1) * m].copy_from_slice(
                                    &g[i * total + offset..i * total + offset + m],
                                );
                            }
                            slot(&mut bufs, v).add_dense(&dv);
                        }
                        offset += m;
                    }
                }
                Op::ConcatRows { inputs } => {
                    let g = buf.to_dense(node.numel());
                    let m = node.cols();
                    let mut offset = 0usize;
                    for &v in inputs {
                        let rows = self.nodes[v.0].rows();
                        if self.nodes[v.0].needs_grad {
                            let dv = g[offset * m..(offset + rows) * m].to_vec();
                            slot(&mut bufs, v).add_dense(&dv);
                        }
                        offset += rows;
                    }
                }
                Op::SliceRows { a, start } => {
                    let g = buf.to_dense(node.numel());
                    let m = node.cols();
                    let mut da = vec![S::zero(); self.nodes[a.0].numel()];
                    da[start * m..start * m + g.len()].copy_from_slice(&g);
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::SliceCols { a, start } => {
                    let g = buf.to_dense(node.numel());
                    let (n, w) = (node.rows(), node.cols());
                    let am = self.nodes[a.0].cols();
                    let mut da = vec![S::zero(); self.nodes[a.0].numel()];
                    for i in 0..n {
                        da[i * am + start..i * am + start + w]
                            .copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    slot(&mut bufs, *a).add_dense(&da);
                }
                Op::Reshape { a } => {
                    let g = buf.to_dense(node.numel());
                    slot(&mut bufs, *a).add_dense(&g);
                }
                Op::CrossEntropyLogits { a, label, softmax } => {
                    let g = buf.to_dense(1)[0];
                    let mut da: Vec<S> = softmax.iter().map(|&p| p * g).collect();
                    da[*label] -= g;
                    slot(&mut bufs, *a).add_dense(&da);
                }
            }
        }
        Ok(Gradients { bufs })
    }

    /// Densified gradient of one node, if the pass produced any.
    pub fn grad_dense(&self, grads: &Gradients<S>, v: VarId) -> Option<Vec<S>> {
        grads
            .get(v)
            .map(|b| b.to_dense(self.nodes[v.0].numel()))
    }

    /// Moves parameter gradients from a backward pass into the store, adding
    /// onto whatever each tensor has already accumulated.
    pub fn apply_param_grads(&self, grads: &Gradients<S>, store: &mut ParamStore<S>) {
        for (&pid, &var) in &self.params {
            if let Some(buf) = grads.get(var) {
                store.get_mut(pid).accumulate_grad(buf);
            }
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Returns the dense accumulation slot for a node, creating it zeroed.
fn slot<S: Scalar>(bufs: &mut [Option<GradBuf<S>>], v: VarId) -> &mut GradBuf<S> {
    bufs[v.0].get_or_insert_with(GradBuf::empty)
}

/// C += op_a(A) * op_b(B) with explicit stored dims for both operands. Loop
/// order is fixed per transpose pattern; accumulation order never varies.
#[allow(clippy::too_many_arguments)]
fn gemm<S: Scalar>(
    a: &[S],
    b: &[S],
    (n, k, m): (usize, usize, usize),
    (ar, ac): (usize, usize),
    (br, bc): (usize, usize),
    ta: bool,
    tb: bool,
    c: &mut [S],
) {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), br * bc);
    debug_assert_eq!(c.len(), n * m);
    match (ta, tb) {
        (false, false) => {
            // c[i][j] += a[i][l] * b[l][j], axpy over contiguous rows of b.
            for i in 0..n {
                for l in 0..k {
                    let av = a[i * k + l];
                    let brow = &b[l * m..(l + 1) * m];
                    let crow = &mut c[i * m..(i + 1) * m];
                    for j in 0..m {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
        (true, false) => {
            // c[i][j] += a[l][i] * b[l][j]
            for l in 0..k {
                for i in 0..n {
                    let av = a[l * n + i];
                    let brow = &b[l * m..(l + 1) * m];
                    let crow = &mut c[i * m..(i + 1) * m];
                    for j in 0..m {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
        (false, true) => {
            // c[i][j] += dot(a row i, b row j), both contiguous.
            for i in 0..n {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..m {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for l in 0..k {
                        acc += arow[l] * brow[l];
                    }
                    c[i * m + j] += acc;
                }
            }
        }
        (true, true) => {
            // c[i][j] += a[l][i] * b[j][l], only reached from backward.
            for j in 0..m {
                let brow = &b[j * k..(j + 1) * k];
                for l in 0..k {
                    let bv = brow[l];
                    for i in 0..n {
                        c[i * m + j] += a[l * n + i] * bv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], values: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), values.to_vec())
            .unwrap()
            .with_requires_grad(true)
    }

    fn naive_matmul(
        a: &[f64],
        b: &[f64],
        (ar, ac): (usize, usize),
        (br, bc): (usize, usize),
        ta: bool,
        tb: bool,
    ) -> Vec<f64> {
        let (n, k) = if ta { (ac, ar) } else { (ar, ac) };
        let m = if tb { br } else { bc };
        let get_a = |i: usize, l: usize| if ta { a[l * ac + i] } else { a[i * ac + l] };
        let get_b = |l: usize, j: usize| if tb { b[j * bc + l] } else { b[l * bc + j] };
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for l in 0..k {
                    c[i * m + j] += get_a(i, l) * get_b(l, j);
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_all_transpose_flags() {
        let avals: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let bvals: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        // (a shape, b shape) per flag combo so the contraction dim lines up.
        let cases = [
            (false, false, [2, 3], [3, 2]),
            (true, false, [3, 2], [3, 2]),
            (false, true, [2, 3], [2, 3]),
            (true, true, [3, 2], [2, 3]),
        ];
        for (ta, tb, ash, bsh) in cases {
            let mut tape = Tape::<f64>::new();
            let a = tape.leaf(&tensor(&ash, &avals));
            let b = tape.leaf(&tensor(&bsh, &bvals));
            let c = tape.matmul(a, b, ta, tb).unwrap();
            let want = naive_matmul(&avals, &bvals, (ash[0], ash[1]), (bsh[0], bsh[1]), ta, tb);
            assert_eq!(tape.values(c), &want[..], "ta={ta} tb={tb}");
        }
    }

    #[test]
    fn matmul_rejects_bad_contraction() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(&tensor(&[2, 3], &[0.0; 6]));
        let b = tape.leaf(&tensor(&[2, 2], &[0.0; 4]));
        assert!(matches!(
            tape.matmul(a, b, false, false),
            Err(TapeError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[1, 3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(tape.grad_dense(&grads, x).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_columns_hand_example() {
        // Column 0 logits [ln 2, 0] over two valid rows: softmax = [2/3, 1/3].
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2, 2], &[2f64.ln(), 5.0, 0.0, 5.0]));
        let y = tape.softmax_columns(x, &[true, true]).unwrap();
        let v = tape.values(y);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[2] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 0.5).abs() < 1e-12);
        assert!((v[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_columns_masked_entries_are_exact_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[3, 3], &[9.0; 9]));
        let y = tape.softmax_columns(x, &[true, false, true]).unwrap();
        let v = tape.values(y);
        for u in 0..3 {
            assert_eq!(v[u * 3 + 1], 0.0);
            assert_eq!(v[3 + u], 0.0);
        }
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[6] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_columns_sums_to_one_or_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2, 3], &[1.0, 0.0, 3.0, 1.0, 0.0, 1.0]));
        let y = tape.normalize_columns(x, 1e-10).unwrap();
        let v = tape.values(y);
        let col0 = v[0] + v[3];
        let col2 = v[2] + v[5];
        assert!((col0 - 1.0).abs() < 1e-9);
        assert!((col2 - 1.0).abs() < 1e-9);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[4], 0.0);
        assert!((v[2] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn max_pool_ties_take_first_listed_row() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[3, 2], &[5.0, 1.0, 5.0, 2.0, 4.0, 2.0]));
        let y = tape.max_pool_rows(x, &[0, 1, 2]).unwrap();
        assert_eq!(tape.values(y), &[5.0, 2.0]);
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        // Row 0 wins the tie in column 0; row 1 wins column 1 alone.
        assert_eq!(
            tape.grad_dense(&grads, x).unwrap(),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn gather_rows_gradient_stays_sparse() {
        let mut tape = Tape::<f64>::new();
        let table = tape.leaf(&tensor(&[4, 2], &[0.0; 8]));
        let g = tape.gather_rows(table, &[3, 1, 3]).unwrap();
        let s = tape.sum(g).unwrap();
        let grads = tape.backward(s).unwrap();
        match grads.get(table).unwrap() {
            GradBuf::Rows { rows, .. } => {
                assert_eq!(rows.len(), 2);
                assert_eq!(rows[&3], vec![2.0, 2.0]);
                assert_eq!(rows[&1], vec![1.0, 1.0]);
            }
            GradBuf::Dense(_) => panic!("expected sparse row gradient"),
        }
    }

    #[test]
    fn cross_entropy_matches_manual_computation() {
        let mut tape = Tape::<f64>::new();
        let logits = [1.0, -2.0, 0.5];
        let x = tape.leaf(&tensor(&[1, 3], &logits));
        let l = tape.cross_entropy_logits(x, 2).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let want = z.ln() - logits[2];
        assert!((tape.scalar_value(l).unwrap() - want).abs() < 1e-12);
        let grads = tape.backward(l).unwrap();
        let g = tape.grad_dense(&grads, x).unwrap();
        for (j, gj) in g.iter().enumerate() {
            let p = logits[j].exp() / z;
            let want = if j == 2 { p - 1.0 } else { p };
            assert!((gj - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
            let x = tape.leaf(&tensor(&[3, 4], &vals));
            let w = tape.leaf(&tensor(&[4, 3], &vals));
            let h = tape.matmul(x, w, false, false).unwrap();
            let h = tape.tanh(h).unwrap();
            let p = tape.matmul(h, h, false, true).unwrap();
            let s = tape.mean(p).unwrap();
            let grads = tape.backward(s).unwrap();
            (
                tape.values(s).to_vec(),
                tape.grad_dense(&grads, x).unwrap(),
            )
        };
        let (s1, g1) = run();
        let (s2, g2) = run();
        assert_eq!(s1, s2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2, 2], &[1.0; 4]));
        assert!(matches!(
            tape.backward(x),
            Err(TapeError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn empty_tape_and_bad_positions_error() {
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(VarId(0)), Err(TapeError::EmptyTape)));
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2, 2], &[1.0; 4]));
        assert!(matches!(
            tape.max_pool_rows(x, &[]),
            Err(TapeError::EmptyPositions { .. })
        ));
        assert!(matches!(
            tape.max_pool_rows(x, &[2]),
            Err(TapeError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn param_registration_is_memoized() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mut tape = Tape::new();
        let v1 = tape.param(&store, w);
        let v2 = tape.param(&store, w);
        assert_eq!(v1, v2);
        // Using the parameter twice accumulates both contributions.
        let p = tape.mul(v1, v2).unwrap();
        let s = tape.sum(p).unwrap();
        let grads = tape.backward(s).unwrap();
        tape.apply_param_grads(&grads, &mut store);
        assert_eq!(
            store.get(w).grad().unwrap(),
            &[2.0, 4.0, 6.0, 8.0][..]
        );
    }
}
