//! Define-by-run reverse-mode automatic differentiation on dense matrices.
//!
//! A [`Tape`] is an arena of nodes. Every primitive records its inputs and
//! enough forward state to run its backward rule; [`Tape::backward`] then
//! walks the nodes in exact reverse recording order, accumulating gradients
//! for every node that (transitively) depends on a leaf. The tape is rebuilt
//! on every forward pass, so control flow in model code can depend freely on
//! values computed along the way.
//!
//! Conventions:
//! * [`Tensor`] is a copyable handle `(id, rows, cols)` into one tape. Using
//!   it with a different tape is a logic error and will panic or misbehave.
//! * Shape mismatches panic immediately; shapes are static invariants of the
//!   caller, not data errors.
//! * Every op checks its output for NaN/Inf and panics on the first hit, so
//!   numerical blowups surface at the op that produced them.
//! * `relu` propagates zero gradient at exactly 0, `l1_norm` uses sign(0)=0,
//!   and `max_rows` routes gradient to the first maximum. Finite-difference
//!   tests nudge inputs off these kinks.

use crate::matrix::Matrix;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Position on the owning tape; stable for the tape's lifetime.
    pub fn id(&self) -> usize {
        self.id
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    /// a * b^T
    MatMulNT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// mul * x + add, elementwise; only the multiplier matters in backward
    Affine(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Sqrt(usize),
    Rsqrt(usize),
    Transpose(usize),
    /// x: n x d, gain/bias: 1 x d, eps
    LayerNorm(usize, usize, usize, f64),
    RowGather(usize, Vec<usize>),
    /// row r of x lands on row idx[r] of the output
    RowScatter(usize, Vec<usize>),
    ColGather(usize, Vec<usize>),
    ConcatCols(usize, usize),
    MeanRows(usize),
    /// argmax per column captured at forward time
    MaxRows(usize, Vec<usize>),
    Sum(usize),
    /// x: n x d plus a 1 x d row broadcast over rows
    AddRowBroadcast(usize, usize),
    /// x: n x d times an n x 1 column broadcast over columns
    MulColBroadcast(usize, usize),
    /// x scaled by a 1 x 1 tensor
    MulScalar(usize, usize),
    /// x shifted by a 1 x 1 tensor
    AddScalar(usize, usize),
    /// out[i][j] = squared L2 distance between row i of a and row j of b
    PairwiseSqDist(usize, usize),
    /// logits: 1 x C, target class; stable log-sum-exp cross-entropy
    CrossEntropy(usize, usize),
    /// max(logit[target] - max_{i != target} logit[i], -kappa)
    CwMargin(usize, usize, f64),
    L1Norm(usize),
}

struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one [`Tape::backward`] call, indexed by tensor.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    /// The gradient for `t`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, t: Tensor) -> Matrix {
        match self.get(t) {
            Some(g) => g.clone(),
            None => Matrix::zeros(t.rows, t.cols),
        }
    }
}

fn check_finite(m: &Matrix, what: &str) {
    if !m.all_finite() {
        panic!("non-finite value produced by {what}");
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Tensor {
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node { op, value, requires_grad });
        Tensor { id, rows, cols }
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// True when gradients flow into `t` (a leaf, or downstream of one).
    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.requires(t.id)
    }

    /// Differentiable input; gradients will be accumulated for it.
    pub fn leaf(&mut self, value: Matrix) -> Tensor {
        check_finite(&value, "leaf");
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable input (data, frozen parameters).
    pub fn constant(&mut self, value: Matrix) -> Tensor {
        check_finite(&value, "constant");
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        assert_eq!(t.shape(), (1, 1), "scalar() on a {}x{} tensor", t.rows, t.cols);
        self.nodes[t.id].value.get(0, 0)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let value = self.value(a).matmul(self.value(b));
        check_finite(&value, "matmul");
        let rg = self.requires(a.id) || self.requires(b.id);
        self.push(Op::MatMul(a.id, b.id), value, rg)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let value = self.value(a).matmul_nt(self.value(b));
        check_finite(&value, "matmul_nt");
        let rg = self.requires(a.id) || self.requires(b.id);
        self.push(Op::MatMulNT(a.id, b.id), value, rg)
    }

    fn binary_elementwise(
        &mut self,
        a: Tensor,
        b: Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        what: &str,
    ) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "{what} shape mismatch: {:?} vs {:?}", a.shape(), b.shape());
        let value = self.value(a).zip_map(self.value(b), f);
        check_finite(&value, what);
        let rg = self.requires(a.id) || self.requires(b.id);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a.id, b.id), "add")
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a.id, b.id), "sub")
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a.id, b.id), "mul")
    }

    pub fn affine(&mut self, x: Tensor, mul: f64, add: f64) -> Tensor {
        let value = self.value(x).map(|v| mul * v + add);
        check_finite(&value, "affine");
        let rg = self.requires(x.id);
        self.push(Op::Affine(x.id, mul), value, rg)
    }

    pub fn scale(&mut self, x: Tensor, s: f64) -> Tensor {
        self.affine(x, s, 0.0)
    }

    pub fn neg(&mut self, x: Tensor) -> Tensor {
        self.affine(x, -1.0, 0.0)
    }

    pub fn sigmoid(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).map(stable_sigmoid);
        check_finite(&value, "sigmoid");
        let rg = self.requires(x.id);
        self.push(Op::Sigmoid(x.id), value, rg)
    }

    pub fn tanh(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).map(f64::tanh);
        check_finite(&value, "tanh");
        let rg = self.requires(x.id);
        self.push(Op::Tanh(x.id), value, rg)
    }

    pub fn relu(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        check_finite(&value, "relu");
        let rg = self.requires(x.id);
        self.push(Op::Relu(x.id), value, rg)
    }

    /// log(1 + exp(x)), computed as max(x, 0) + log(1 + exp(-|x|)).
    pub fn softplus(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).map(stable_softplus);
        check_finite(&value, "softplus");
        let rg = self.requires(x.id);
        self.push(Op::Softplus(x.id), value, rg)
    }

    pub fn sqrt(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).map(f64::sqrt);
        check_finite(&value, "sqrt");
        let rg = self.requires(x.id);
        self.push(Op::Sqrt(x.id), value, rg)
    }

    pub fn rsqrt(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).map(|v| 1.0 / v.sqrt());
        check_finite(&value, "rsqrt");
        let rg = self.requires(x.id);
        self.push(Op::Rsqrt(x.id), value, rg)
    }

    pub fn transpose(&mut self, x: Tensor) -> Tensor {
        let value = self.value(x).transpose();
        let rg = self.requires(x.id);
        self.push(Op::Transpose(x.id), value, rg)
    }

    /// Row-wise layer normalization followed by a learnable per-column gain
    /// and bias: `out = (x - mean) / sqrt(var + eps) * gain + bias`.
    pub fn layer_norm(&mut self, x: Tensor, gain: Tensor, bias: Tensor, eps: f64) -> Tensor {
        assert_eq!(gain.shape(), (1, x.cols), "layer_norm gain must be 1x{}", x.cols);
        assert_eq!(bias.shape(), (1, x.cols), "layer_norm bias must be 1x{}", x.cols);
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut value = Matrix::zeros(x.rows, x.cols);
        let d = x.cols as f64;
        for r in 0..x.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            let out = value.row_mut(r);
            for c in 0..x.cols {
                out[c] = (row[c] - mean) * inv * gv.get(0, c) + bv.get(0, c);
            }
        }
        check_finite(&value, "layer_norm");
        let rg = self.requires(x.id) || self.requires(gain.id) || self.requires(bias.id);
        self.push(Op::LayerNorm(x.id, gain.id, bias.id, eps), value, rg)
    }

    pub fn row_gather(&mut self, x: Tensor, idx: &[usize]) -> Tensor {
        let value = self.value(x).gather_rows(idx);
        let rg = self.requires(x.id);
        self.push(Op::RowGather(x.id, idx.to_vec()), value, rg)
    }

    /// Scatter the rows of `x` into a zero matrix with `out_rows` rows; row
    /// `r` of `x` lands at row `idx[r]`. Indices must be unique.
    pub fn row_scatter(&mut self, x: Tensor, idx: &[usize], out_rows: usize) -> Tensor {
        assert_eq!(idx.len(), x.rows, "row_scatter needs one index per input row");
        let mut value = Matrix::zeros(out_rows, x.cols);
        let xv = self.value(x);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < out_rows, "row_scatter index {} out of range {}", i, out_rows);
            value.row_mut(i).copy_from_slice(xv.row(r));
        }
        let rg = self.requires(x.id);
        self.push(Op::RowScatter(x.id, idx.to_vec()), value, rg)
    }

    pub fn col_gather(&mut self, x: Tensor, idx: &[usize]) -> Tensor {
        let xv = self.value(x);
        let mut value = Matrix::zeros(x.rows, idx.len());
        for r in 0..x.rows {
            for (c, &j) in idx.iter().enumerate() {
                assert!(j < x.cols, "col_gather index {} out of range {}", j, x.cols);
                value.set(r, c, xv.get(r, j));
            }
        }
        let rg = self.requires(x.id);
        self.push(Op::ColGather(x.id, idx.to_vec()), value, rg)
    }

    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(a.rows, b.rows, "concat_cols row mismatch");
        let av = self.value(a);
        let bv = self.value(b);
        let mut value = Matrix::zeros(a.rows, a.cols + b.cols);
        for r in 0..a.rows {
            value.row_mut(r)[..a.cols].copy_from_slice(av.row(r));
            value.row_mut(r)[a.cols..].copy_from_slice(bv.row(r));
        }
        let rg = self.requires(a.id) || self.requires(b.id);
        self.push(Op::ConcatCols(a.id, b.id), value, rg)
    }

    /// Column means over rows: `n x d -> 1 x d`.
    pub fn mean_rows(&mut self, x: Tensor) -> Tensor {
        assert!(x.rows > 0, "mean_rows on an empty tensor");
        let xv = self.value(x);
        let mut value = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for c in 0..x.cols {
                value.set(0, c, value.get(0, c) + xv.get(r, c));
            }
        }
        value.scale_assign(1.0 / x.rows as f64);
        let rg = self.requires(x.id);
        self.push(Op::MeanRows(x.id), value, rg)
    }

    /// Column maxima over rows: `n x d -> 1 x d`. Gradient goes to the first
    /// row attaining the maximum.
    pub fn max_rows(&mut self, x: Tensor) -> Tensor {
        assert!(x.rows > 0, "max_rows on an empty tensor");
        let xv = self.value(x);
        let mut value = Matrix::zeros(1, x.cols);
        let mut argmax = vec![0usize; x.cols];
        for c in 0..x.cols {
            let mut best = xv.get(0, c);
            let mut bi = 0;
            for r in 1..x.rows {
                let v = xv.get(r, c);
                if v > best {
                    best = v;
                    bi = r;
                }
            }
            value.set(0, c, best);
            argmax[c] = bi;
        }
        let rg = self.requires(x.id);
        self.push(Op::MaxRows(x.id, argmax), value, rg)
    }

    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let value = Matrix::from_vec(1, 1, vec![self.value(x).sum()]);
        check_finite(&value, "sum");
        let rg = self.requires(x.id);
        self.push(Op::Sum(x.id), value, rg)
    }

    /// `x + row`, with `row: 1 x d` broadcast over the rows of `x`.
    pub fn add_row_broadcast(&mut self, x: Tensor, row: Tensor) -> Tensor {
        assert_eq!(row.shape(), (1, x.cols), "add_row_broadcast wants a 1x{} row", x.cols);
        let xv = self.value(x);
        let rv = self.value(row);
        let mut value = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            for c in 0..x.cols {
                value.set(r, c, xv.get(r, c) + rv.get(0, c));
            }
        }
        check_finite(&value, "add_row_broadcast");
        let rg = self.requires(x.id) || self.requires(row.id);
        self.push(Op::AddRowBroadcast(x.id, row.id), value, rg)
    }

    /// `x * col`, with `col: n x 1` broadcast over the columns of `x`.
    pub fn mul_col_broadcast(&mut self, x: Tensor, col: Tensor) -> Tensor {
        assert_eq!(col.shape(), (x.rows, 1), "mul_col_broadcast wants a {}x1 column", x.rows);
        let xv = self.value(x);
        let cv = self.value(col);
        let mut value = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let g = cv.get(r, 0);
            for c in 0..x.cols {
                value.set(r, c, xv.get(r, c) * g);
            }
        }
        check_finite(&value, "mul_col_broadcast");
        let rg = self.requires(x.id) || self.requires(col.id);
        self.push(Op::MulColBroadcast(x.id, col.id), value, rg)
    }

    /// `x * s` with `s` a 1x1 tensor (learnable scalar).
    pub fn mul_scalar(&mut self, x: Tensor, s: Tensor) -> Tensor {
        assert_eq!(s.shape(), (1, 1), "mul_scalar wants a 1x1 scalar tensor");
        let sv = self.value(s).get(0, 0);
        let value = self.value(x).map(|v| v * sv);
        check_finite(&value, "mul_scalar");
        let rg = self.requires(x.id) || self.requires(s.id);
        self.push(Op::MulScalar(x.id, s.id), value, rg)
    }

    /// `x + s` with `s` a 1x1 tensor (learnable scalar).
    pub fn add_scalar(&mut self, x: Tensor, s: Tensor) -> Tensor {
        assert_eq!(s.shape(), (1, 1), "add_scalar wants a 1x1 scalar tensor");
        let sv = self.value(s).get(0, 0);
        let value = self.value(x).map(|v| v + sv);
        check_finite(&value, "add_scalar");
        let rg = self.requires(x.id) || self.requires(s.id);
        self.push(Op::AddScalar(x.id, s.id), value, rg)
    }

    /// Pairwise squared Euclidean distances between the rows of `a` and the
    /// rows of `b`: `(n x d, m x d) -> n x m`.
    pub fn pairwise_sqdist(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(a.cols, b.cols, "pairwise_sqdist column mismatch");
        let av = self.value(a);
        let bv = self.value(b);
        let mut value = Matrix::zeros(a.rows, b.rows);
        for i in 0..a.rows {
            let ra = av.row(i);
            for j in 0..b.rows {
                let rb = bv.row(j);
                let mut acc = 0.0;
                for (&x, &y) in ra.iter().zip(rb) {
                    let d = x - y;
                    acc += d * d;
                }
                value.set(i, j, acc);
            }
        }
        check_finite(&value, "pairwise_sqdist");
        let rg = self.requires(a.id) || self.requires(b.id);
        self.push(Op::PairwiseSqDist(a.id, b.id), value, rg)
    }

    /// Cross-entropy of a single `1 x C` logit row against a class index,
    /// computed through a shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Tensor, target: usize) -> Tensor {
        assert_eq!(logits.rows, 1, "cross_entropy wants a 1xC logit row");
        assert!(target < logits.cols, "cross_entropy target {} out of range {}", target, logits.cols);
        let lv = self.value(logits).row(0);
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let value = Matrix::from_vec(1, 1, vec![lse - lv[target]]);
        check_finite(&value, "cross_entropy");
        let rg = self.requires(logits.id);
        self.push(Op::CrossEntropy(logits.id, target), value, rg)
    }

    /// The margin term used by the norm-plus-margin attack objective:
    /// `max(logit[target] - max_{i != target} logit[i], -kappa)`.
    pub fn cw_margin(&mut self, logits: Tensor, target: usize, kappa: f64) -> Tensor {
        assert_eq!(logits.rows, 1, "cw_margin wants a 1xC logit row");
        assert!(logits.cols >= 2, "cw_margin needs at least two classes");
        assert!(target < logits.cols, "cw_margin target {} out of range {}", target, logits.cols);
        let lv = self.value(logits).row(0);
        let mut best_other = f64::NEG_INFINITY;
        for (i, &v) in lv.iter().enumerate() {
            if i != target && v > best_other {
                best_other = v;
            }
        }
        let value = Matrix::from_vec(1, 1, vec![(lv[target] - best_other).max(-kappa)]);
        check_finite(&value, "cw_margin");
        let rg = self.requires(logits.id);
        self.push(Op::CwMargin(logits.id, target, kappa), value, rg)
    }

    pub fn l1_norm(&mut self, x: Tensor) -> Tensor {
        let value = Matrix::from_vec(1, 1, vec![self.value(x).l1_norm()]);
        check_finite(&value, "l1_norm");
        let rg = self.requires(x.id);
        self.push(Op::L1Norm(x.id), value, rg)
    }

    /// Backpropagate from a 1x1 root. Returns one gradient per contributing
    /// node; leaves that the root does not depend on simply have none.
    pub fn backward(&mut self, root: Tensor) -> Gradients {
        assert_eq!(root.shape(), (1, 1), "backward root must be 1x1, got {:?}", root.shape());
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if self.nodes[root.id].requires_grad {
            grads[root.id] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        }
        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(grads: &mut [Option<Matrix>], id: usize, delta: Matrix) {
        match &mut grads[id] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        macro_rules! push_if {
            ($src:expr, $delta:expr) => {
                if self.nodes[$src].requires_grad {
                    Self::accumulate(grads, $src, $delta);
                }
            };
        }
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                push_if!(*a, g.matmul_nt(&self.nodes[*b].value));
                push_if!(*b, self.nodes[*a].value.matmul_tn(g));
            }
            Op::MatMulNT(a, b) => {
                push_if!(*a, g.matmul(&self.nodes[*b].value));
                push_if!(*b, g.matmul_tn(&self.nodes[*a].value));
            }
            Op::Add(a, b) => {
                push_if!(*a, g.clone());
                push_if!(*b, g.clone());
            }
            Op::Sub(a, b) => {
                push_if!(*a, g.clone());
                push_if!(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                push_if!(*a, g.zip_map(&self.nodes[*b].value, |gv, bv| gv * bv));
                push_if!(*b, g.zip_map(&self.nodes[*a].value, |gv, av| gv * av));
            }
            Op::Affine(x, mul) => {
                push_if!(*x, g.map(|v| v * mul));
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[id].value;
                push_if!(*x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Tanh(x) => {
                let y = &self.nodes[id].value;
                push_if!(*x, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].value;
                push_if!(*x, g.zip_map(xv, |gv, v| if v > 0.0 { gv } else { 0.0 }));
            }
            Op::Softplus(x) => {
                let xv = &self.nodes[*x].value;
                push_if!(*x, g.zip_map(xv, |gv, v| gv * stable_sigmoid(v)));
            }
            Op::Sqrt(x) => {
                let y = &self.nodes[id].value;
                push_if!(*x, g.zip_map(y, |gv, yv| gv * 0.5 / yv));
            }
            Op::Rsqrt(x) => {
                let y = &self.nodes[id].value;
                push_if!(*x, g.zip_map(y, |gv, yv| gv * -0.5 * yv * yv * yv));
            }
            Op::Transpose(x) => {
                push_if!(*x, g.transpose());
            }
            Op::LayerNorm(x, gain, bias, eps) => {
                self.backprop_layer_norm(*x, *gain, *bias, *eps, g, grads);
            }
            Op::RowGather(x, idx) => {
                if self.nodes[*x].requires_grad {
                    let mut gx = Matrix::zeros(self.nodes[*x].value.rows(), g.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..g.cols() {
                            gx.set(i, c, gx.get(i, c) + g.get(r, c));
                        }
                    }
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::RowScatter(x, idx) => {
                if self.nodes[*x].requires_grad {
                    let mut gx = Matrix::zeros(idx.len(), g.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        gx.row_mut(r).copy_from_slice(g.row(i));
                    }
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::ColGather(x, idx) => {
                if self.nodes[*x].requires_grad {
                    let src = &self.nodes[*x].value;
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        for (c, &j) in idx.iter().enumerate() {
                            gx.set(r, j, gx.get(r, j) + g.get(r, c));
                        }
                    }
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::ConcatCols(a, b) => {
                let ac = self.nodes[*a].value.cols();
                if self.nodes[*a].requires_grad {
                    let mut ga = Matrix::zeros(g.rows(), ac);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                    }
                    Self::accumulate(grads, *a, ga);
                }
                if self.nodes[*b].requires_grad {
                    let bc = g.cols() - ac;
                    let mut gb = Matrix::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    Self::accumulate(grads, *b, gb);
                }
            }
            Op::MeanRows(x) => {
                if self.nodes[*x].requires_grad {
                    let n = self.nodes[*x].value.rows();
                    let mut gx = Matrix::zeros(n, g.cols());
                    let inv = 1.0 / n as f64;
                    for r in 0..n {
                        for c in 0..g.cols() {
                            gx.set(r, c, g.get(0, c) * inv);
                        }
                    }
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::MaxRows(x, argmax) => {
                if self.nodes[*x].requires_grad {
                    let n = self.nodes[*x].value.rows();
                    let mut gx = Matrix::zeros(n, g.cols());
                    for (c, &r) in argmax.iter().enumerate() {
                        gx.set(r, c, g.get(0, c));
                    }
                    Self::accumulate(grads, *x, gx);
                }
            }
            Op::Sum(x) => {
                if self.nodes[*x].requires_grad {
                    let (r, c) = self.nodes[*x].value.shape();
                    Self::accumulate(grads, *x, Matrix::filled(r, c, g.get(0, 0)));
                }
            }
            Op::AddRowBroadcast(x, row) => {
                push_if!(*x, g.clone());
                if self.nodes[*row].requires_grad {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr.set(0, c, gr.get(0, c) + g.get(r, c));
                        }
                    }
                    Self::accumulate(grads, *row, gr);
                }
            }
            Op::MulColBroadcast(x, col) => {
                let xv = &self.nodes[*x].value;
                let cv = &self.nodes[*col].value;
                if self.nodes[*x].requires_grad {
                    let mut gx = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let s = cv.get(r, 0);
                        for c in 0..g.cols() {
                            gx.set(r, c, g.get(r, c) * s);
                        }
                    }
                    Self::accumulate(grads, *x, gx);
                }
                if self.nodes[*col].requires_grad {
                    let mut gc = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        let mut acc = 0.0;
                        for c in 0..g.cols() {
                            acc += g.get(r, c) * xv.get(r, c);
                        }
                        gc.set(r, 0, acc);
                    }
                    Self::accumulate(grads, *col, gc);
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.nodes[*s].value.get(0, 0);
                push_if!(*x, g.map(|v| v * sv));
                if self.nodes[*s].requires_grad {
                    let xv = &self.nodes[*x].value;
                    let acc: f64 = g
                        .as_slice()
                        .iter()
                        .zip(xv.as_slice())
                        .map(|(&gv, &v)| gv * v)
                        .sum();
                    Self::accumulate(grads, *s, Matrix::from_vec(1, 1, vec![acc]));
                }
            }
            Op::AddScalar(x, s) => {
                push_if!(*x, g.clone());
                if self.nodes[*s].requires_grad {
                    let acc: f64 = g.as_slice().iter().sum();
                    Self::accumulate(grads, *s, Matrix::from_vec(1, 1, vec![acc]));
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let d = av.cols();
                if self.nodes[*a].requires_grad {
                    let mut ga = Matrix::zeros(av.rows(), d);
                    for i in 0..av.rows() {
                        for j in 0..bv.rows() {
                            let gv = 2.0 * g.get(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                ga.set(i, c, ga.get(i, c) + gv * (av.get(i, c) - bv.get(j, c)));
                            }
                        }
                    }
                    Self::accumulate(grads, *a, ga);
                }
                if self.nodes[*b].requires_grad {
                    let mut gb = Matrix::zeros(bv.rows(), d);
                    for i in 0..av.rows() {
                        for j in 0..bv.rows() {
                            let gv = 2.0 * g.get(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                gb.set(j, c, gb.get(j, c) - gv * (av.get(i, c) - bv.get(j, c)));
                            }
                        }
                    }
                    Self::accumulate(grads, *b, gb);
                }
            }
            Op::CrossEntropy(logits, target) => {
                if self.nodes[*logits].requires_grad {
                    let lv = self.nodes[*logits].value.row(0);
                    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = lv.iter().map(|&v| (v - max).exp()).sum();
                    let gv = g.get(0, 0);
                    let mut gl = Matrix::zeros(1, lv.len());
                    for (i, &v) in lv.iter().enumerate() {
                        let softmax = (v - max).exp() / z;
                        let indicator = if i == *target { 1.0 } else { 0.0 };
                        gl.set(0, i, gv * (softmax - indicator));
                    }
                    Self::accumulate(grads, *logits, gl);
                }
            }
            Op::CwMargin(logits, target, kappa) => {
                if self.nodes[*logits].requires_grad {
                    let lv = self.nodes[*logits].value.row(0);
                    let mut best_other = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for (i, &v) in lv.iter().enumerate() {
                        if i != *target && v > best_other {
                            best_other = v;
                            best_idx = i;
                        }
                    }
                    let mut gl = Matrix::zeros(1, lv.len());
                    if lv[*target] - best_other > -*kappa {
                        let gv = g.get(0, 0);
                        gl.set(0, *target, gv);
                        gl.set(0, best_idx, -gv);
                    }
                    Self::accumulate(grads, *logits, gl);
                }
            }
            Op::L1Norm(x) => {
                if self.nodes[*x].requires_grad {
                    let gv = g.get(0, 0);
                    let gx = self.nodes[*x].value.map(|v| {
                        if v > 0.0 {
                            gv
                        } else if v < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    });
                    Self::accumulate(grads, *x, gx);
                }
            }
        }
    }

    fn backprop_layer_norm(
        &self,
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) {
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gain].value;
        let (n, d) = xv.shape();
        let df = d as f64;

        let mut gx = if self.nodes[x].requires_grad { Some(Matrix::zeros(n, d)) } else { None };
        let mut ggain = if self.nodes[gain].requires_grad { Some(Matrix::zeros(1, d)) } else { None };
        let mut gbias = if self.nodes[bias].requires_grad { Some(Matrix::zeros(1, d)) } else { None };

        let mut xhat = vec![0.0; d];
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / df;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                xhat[c] = (row[c] - mean) * inv;
            }
            if let Some(gb) = gbias.as_mut() {
                for c in 0..d {
                    gb.set(0, c, gb.get(0, c) + g.get(r, c));
                }
            }
            if let Some(gg) = ggain.as_mut() {
                for c in 0..d {
                    gg.set(0, c, gg.get(0, c) + g.get(r, c) * xhat[c]);
                }
            }
            if let Some(gx) = gx.as_mut() {
                // d/dx of (xhat * gain): gh = g * gain, then the standard
                // layer-norm Jacobian inv * (gh - mean(gh) - xhat * mean(gh * xhat)).
                let mut gh_mean = 0.0;
                let mut ghx_mean = 0.0;
                for c in 0..d {
                    let gh = g.get(r, c) * gv.get(0, c);
                    gh_mean += gh;
                    ghx_mean += gh * xhat[c];
                }
                gh_mean /= df;
                ghx_mean /= df;
                for c in 0..d {
                    let gh = g.get(r, c) * gv.get(0, c);
                    gx.set(r, c, inv * (gh - gh_mean - xhat[c] * ghx_mean));
                }
            }
        }
        if let Some(gx) = gx {
            Self::accumulate(grads, x, gx);
        }
        if let Some(gg) = ggain {
            Self::accumulate(grads, gain, gg);
        }
        if let Some(gb) = gbias {
            Self::accumulate(grads, bias, gb);
        }
    }
}

/// Sigmoid without overflow: split on the sign of `x` so the exponential
/// argument is always non-positive.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
pub fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Compare the tape gradient of `f` with central finite differences, entry
/// by entry on the single leaf `x`, and return the worst relative error
/// `|g_tape - g_fd| / max(|g_tape|, |g_fd|, 1e-8)`.
///
/// `f` must build a 1x1 output from the leaf it is given; it runs on a fresh
/// tape for every evaluation.
pub fn finite_difference_check<F>(f: F, x: &Matrix, h: f64) -> f64
where
    F: Fn(&mut Tape, Tensor) -> Tensor,
{
    let eval = |m: &Matrix| -> f64 {
        let mut tape = Tape::new();
        let t = tape.constant(m.clone());
        let out = f(&mut tape, t);
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf);
    assert_eq!(out.shape(), (1, 1), "finite_difference_check needs a scalar output");
    let grads = tape.backward(out);
    let analytic = grads.get_or_zeros(leaf);

    finite_difference_error(eval, x, &analytic, h)
}

/// Same comparison for callers that already hold the analytic gradient and
/// can only expose their objective as a plain value function.
pub fn finite_difference_error<F>(eval: F, x: &Matrix, analytic: &Matrix, h: f64) -> f64
where
    F: Fn(&Matrix) -> f64,
{
    assert_eq!(analytic.shape(), x.shape(), "gradient/input shape mismatch");
    let mut worst = 0.0f64;
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(r, c, x.get(r, c) + h);
            let mut minus = x.clone();
            minus.set(r, c, x.get(r, c) - h);
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.get(r, c);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
