//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node to the [`Tape`]; node indices are
//! therefore a topological order and [`Tape::backward`] walks them once in
//! reverse. Gradients reaching the same node from several consumers are
//! summed.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::matrix::{Csr, Matrix};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag plus parent references of a node.
#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log {
        x: Var,
        floor: T,
    },
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Rc<[usize]>,
    },
    IndexAdd {
        x: Var,
        index: Rc<[usize]>,
        coeff: Option<Rc<[T]>>,
    },
    ScatterWeighted {
        weights: Var,
        x: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
    },
    SparseMatMul {
        mat: Rc<Csr<T>>,
        x: Var,
    },
    RowNorm(Var),
    MaskMul {
        x: Var,
        mask: Rc<Matrix<T>>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Log { .. } => "log",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::IndexAdd { .. } => "index_add",
            Op::ScatterWeighted { .. } => "scatter_weighted",
            Op::SparseMatMul { .. } => "sparse_matmul",
            Op::RowNorm(_) => "row_norm",
            Op::MaskMul { .. } => "mask_mul",
        }
    }
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that requires it. `None` if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, shapes: &[(usize, usize)]) -> Error {
    let parts: Vec<String> = shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
    Error::Shape(format!("{op}: incompatible operands {}", parts.join(", ")))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", &[va.shape(), vb.shape()]));
        }
        let out = va.matmul(vb)?;
        let g = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(shape_err("add_row", &[sa, sr]));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(row).as_slice().to_vec();
        for i in 0..sa.0 {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let g = self.grad_any(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), g))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let g = self.grad_any(&[x]);
        self.push(out, Op::Affine(x, scale), g)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.affine(x, factor, T::zero())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let g = self.grad_any(&[x]);
        self.push(out, Op::Sigmoid(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        let g = self.grad_any(&[x]);
        self.push(out, Op::Tanh(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let g = self.grad_any(&[x]);
        self.push(out, Op::Relu(x), g)
    }

    /// Natural log of `max(x, floor)`; the gradient is zero below the floor.
    pub fn log(&mut self, x: Var, floor: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > floor { v.ln() } else { floor.ln() });
        let g = self.grad_any(&[x]);
        self.push(out, Op::Log { x, floor }, g)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = v.clone();
        for i in 0..v.rows() {
            softmax_in_place(out.row_mut(i));
        }
        let g = self.grad_any(&[x]);
        self.push(out, Op::SoftmaxRows(x), g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        let g = self.grad_any(&[x]);
        self.push(out, Op::Sum(x), g)
    }

    /// Mean over all entries; an empty input yields 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len();
        let m = if n == 0 {
            T::zero()
        } else {
            v.sum() / T::from_usize(n).unwrap()
        };
        let g = self.grad_any(&[x]);
        self.push(Matrix::scalar(m), Op::Mean(x), g)
    }

    /// `n x c` to `n x 1` row sums.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Matrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().copied().sum());
        let g = self.grad_any(&[x]);
        self.push(out, Op::RowSum(x), g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(shape_err("concat_cols", &[sa, sb]));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out = Matrix::from_fn(sa.0, sa.1 + sb.1, |i, j| {
            if j < sa.1 {
                va.get(i, j)
            } else {
                vb.get(i, j - sa.1)
            }
        });
        let g = self.grad_any(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), g))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + width > s.1 {
            return Err(Error::Shape(format!(
                "slice_cols: columns {start}..{} of a {}x{} operand",
                start + width,
                s.0,
                s.1
            )));
        }
        let v = self.value(x);
        let out = Matrix::from_fn(s.0, width, |i, j| v.get(i, start + j));
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, g))
    }

    /// Output row `k` is input row `index[k]`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let s = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= s.0) {
            return Err(Error::Shape(format!(
                "gather_rows: row {bad} of a {}x{} operand",
                s.0, s.1
            )));
        }
        let v = self.value(x);
        let mut out = Matrix::zeros(index.len(), s.1);
        for (k, &i) in index.iter().enumerate() {
            out.row_mut(k).copy_from_slice(v.row(i));
        }
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::GatherRows { x, index }, g))
    }

    /// `out[index[k]] += coeff[k] * x[k]` into `out_rows` rows (coefficients default to 1).
    pub fn index_add(
        &mut self,
        x: Var,
        index: Rc<[usize]>,
        coeff: Option<Rc<[T]>>,
        out_rows: usize,
    ) -> Result<Var> {
        let s = self.shape(x);
        if index.len() != s.0 || coeff.as_ref().is_some_and(|c| c.len() != s.0) {
            return Err(Error::Shape(format!(
                "index_add: {} indices for a {}x{} operand",
                index.len(),
                s.0,
                s.1
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::Shape(format!(
                "index_add: target row {bad} >= {out_rows}"
            )));
        }
        let v = self.value(x);
        let mut out = Matrix::zeros(out_rows, s.1);
        for (k, &i) in index.iter().enumerate() {
            let c = coeff.as_ref().map_or(T::one(), |c| c[k]);
            for (o, &x) in out.row_mut(i).iter_mut().zip(v.row(k)) {
                *o += c * x;
            }
        }
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::IndexAdd { x, index, coeff }, g))
    }

    /// Sparse weighted aggregation: `out[dst[k]] += weights[k] * x[src[k]]`,
    /// with `weights` a `k x 1` column. Output has as many rows as `x`.
    pub fn scatter_weighted(
        &mut self,
        weights: Var,
        x: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
    ) -> Result<Var> {
        let (sw, sx) = (self.shape(weights), self.shape(x));
        if sw.1 != 1 || sw.0 != src.len() || src.len() != dst.len() {
            return Err(shape_err("scatter_weighted", &[sw, sx]));
        }
        if src.iter().chain(dst.iter()).any(|&i| i >= sx.0) {
            return Err(Error::Shape(format!(
                "scatter_weighted: node id outside {} rows",
                sx.0
            )));
        }
        let (w, xv) = (self.value(weights), self.value(x));
        let mut out = Matrix::zeros(sx.0, sx.1);
        for k in 0..src.len() {
            let wk = w.as_slice()[k];
            for (o, &v) in out.row_mut(dst[k]).iter_mut().zip(xv.row(src[k])) {
                *o += wk * v;
            }
        }
        let g = self.grad_any(&[weights, x]);
        Ok(self.push(
            out,
            Op::ScatterWeighted {
                weights,
                x,
                src,
                dst,
            },
            g,
        ))
    }

    /// Constant sparse matrix times a differentiable dense matrix.
    pub fn sparse_matmul(&mut self, mat: Rc<Csr<T>>, x: Var) -> Result<Var> {
        let out = mat.matmul_dense(self.value(x))?;
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::SparseMatMul { mat, x }, g))
    }

    /// Euclidean norm of each row, `n x 1`. The derivative at a zero row is taken as 0.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Matrix::from_fn(v.rows(), 1, |i, _| {
            v.row(i).iter().map(|&a| a * a).sum::<T>().sqrt()
        });
        let g = self.grad_any(&[x]);
        self.push(out, Op::RowNorm(x), g)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Rc<Matrix<T>>) -> Result<Var> {
        if mask.shape() != self.shape(x) {
            return Err(shape_err("mask_mul", &[self.shape(x), mask.shape()]));
        }
        let out = self.value(x).zip_map(&mask, |a, m| a * m);
        let g = self.grad_any(&[x]);
        Ok(self.push(out, Op::MaskMul { x, mask }, g))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every leaf
    /// created with [`Tape::param`] that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].needs_grad;
        let val = |v: &Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if wants(a) {
                    let ga = slot(grads, *a, m, k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g.as_slice(),
                        false,
                        vb.as_slice(),
                        true,
                        T::one(),
                        ga.as_mut_slice(),
                    );
                }
                if wants(b) {
                    let gb = slot(grads, *b, k, n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        va.as_slice(),
                        true,
                        g.as_slice(),
                        false,
                        T::one(),
                        gb.as_mut_slice(),
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        accumulate(grads, *v, g, |x| x);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(grads, *a, g, |x| x);
                }
                if wants(b) {
                    accumulate(grads, *b, g, |x| -x);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let other = val(b);
                    accumulate_zip(grads, *a, g, other, |g, o| g * o);
                }
                if wants(b) {
                    let other = val(a);
                    accumulate_zip(grads, *b, g, other, |g, o| g * o);
                }
            }
            Op::AddRow(a, row) => {
                if wants(a) {
                    accumulate(grads, *a, g, |x| x);
                }
                if wants(row) {
                    let gr = slot(grads, *row, 1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Affine(x, scale) => {
                let s = *scale;
                accumulate(grads, *x, g, |v| v * s);
            }
            Op::Sigmoid(x) => {
                accumulate_zip(grads, *x, g, &node.value, |g, y| g * y * (T::one() - y));
            }
            Op::Tanh(x) => {
                accumulate_zip(grads, *x, g, &node.value, |g, y| g * (T::one() - y * y));
            }
            Op::Relu(x) => {
                accumulate_zip(grads, *x, g, val(x), |g, a| {
                    if a > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Log { x, floor } => {
                let f = *floor;
                accumulate_zip(
                    grads,
                    *x,
                    g,
                    val(x),
                    |g, a| if a > f { g / a } else { T::zero() },
                );
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let gx = slot(grads, *x, y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::Sum(x) => {
                let s = g.item();
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                gx.as_mut_slice().iter_mut().for_each(|o| *o += s);
            }
            Op::Mean(x) => {
                let (r, c) = val(x).shape();
                if r * c > 0 {
                    let s = g.item() / T::from_usize(r * c).unwrap();
                    let gx = slot(grads, *x, r, c);
                    gx.as_mut_slice().iter_mut().for_each(|o| *o += s);
                }
            }
            Op::RowSum(x) => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    gx.row_mut(i).iter_mut().for_each(|o| *o += gi);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let rows = g.rows();
                if wants(a) {
                    let ga = slot(grads, *a, rows, ca);
                    for i in 0..rows {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(&g.row(i)[..ca]) {
                            *o += x;
                        }
                    }
                }
                if wants(b) {
                    let cb = val(b).cols();
                    let gb = slot(grads, *b, rows, cb);
                    for i in 0..rows {
                        for (o, &x) in gb.row_mut(i).iter_mut().zip(&g.row(i)[ca..]) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for i in 0..r {
                    for (o, &v) in gx.row_mut(i)[*start..*start + g.cols()]
                        .iter_mut()
                        .zip(g.row(i))
                    {
                        *o += v;
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for (k, &i) in index.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
            }
            Op::IndexAdd { x, index, coeff } => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for (k, &i) in index.iter().enumerate() {
                    let cf = coeff.as_ref().map_or(T::one(), |cf| cf[k]);
                    for (o, &v) in gx.row_mut(k).iter_mut().zip(g.row(i)) {
                        *o += cf * v;
                    }
                }
            }
            Op::ScatterWeighted {
                weights,
                x,
                src,
                dst,
            } => {
                let (w, xv) = (val(weights), val(x));
                if wants(weights) {
                    let gw = slot(grads, *weights, src.len(), 1);
                    for k in 0..src.len() {
                        let d: T = g
                            .row(dst[k])
                            .iter()
                            .zip(xv.row(src[k]))
                            .map(|(&a, &b)| a * b)
                            .sum();
                        gw.as_mut_slice()[k] += d;
                    }
                }
                if wants(x) {
                    let gx = slot(grads, *x, xv.rows(), xv.cols());
                    for k in 0..src.len() {
                        let wk = w.as_slice()[k];
                        for (o, &v) in gx.row_mut(src[k]).iter_mut().zip(g.row(dst[k])) {
                            *o += wk * v;
                        }
                    }
                }
            }
            Op::SparseMatMul { mat, x } => {
                let contrib = mat
                    .transpose_matmul_dense(g)
                    .expect("shapes fixed at forward");
                accumulate(grads, *x, &contrib, |v| v);
            }
            Op::RowNorm(x) => {
                let xv = val(x);
                let gx = slot(grads, *x, xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    let norm = node.value.get(i, 0);
                    if norm > T::zero() {
                        let s = g.get(i, 0) / norm;
                        for (o, &a) in gx.row_mut(i).iter_mut().zip(xv.row(i)) {
                            *o += s * a;
                        }
                    }
                }
            }
            Op::MaskMul { x, mask } => {
                accumulate_zip(grads, *x, g, mask, |g, m| g * m);
            }
        }
    }
}

fn slot<T: Scalar>(
    grads: &mut [Option<Matrix<T>>],
    v: Var,
    rows: usize,
    cols: usize,
) -> &mut Matrix<T> {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Matrix<T>>],
    v: Var,
    g: &Matrix<T>,
    f: impl Fn(T) -> T,
) {
    let dst = slot(grads, v, g.rows(), g.cols());
    for (o, &x) in dst.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *o += f(x);
    }
}

fn accumulate_zip<T: Scalar>(
    grads: &mut [Option<Matrix<T>>],
    v: Var,
    g: &Matrix<T>,
    other: &Matrix<T>,
    f: impl Fn(T, T) -> T,
) {
    let dst = slot(grads, v, g.rows(), g.cols());
    for ((o, &x), &y) in dst
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(other.as_slice())
    {
        *o += f(x, y);
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_f64_rows(rows)
    }

    #[test]
    fn matmul_forward_and_shape_error() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(m(&[&[1.0, 2.0]]));
        let b = t.constant(m(&[&[1.0], &[1.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).item(), 3.0);
        let err = t.matmul(a, a).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("1x2"), "{err}");
    }

    #[test]
    fn softmax_and_sigmoid_values() {
        let mut t = Tape::<f64>::new();
        let z = t.constant(m(&[&[0.0, 0.0]]));
        let s = t.softmax_rows(z);
        assert_eq!(t.value(s).as_slice(), &[0.5, 0.5]);
        let x = t.constant(Matrix::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), 0.5);
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Matrix::from_fn(3, 4, |i, j| (i * j) as f64 - 1.5));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient_and_shared_subexpressions_accumulate() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Matrix::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);

        // z = y + y with y = 2x reused: dz/dx = 4
        let mut t = Tape::<f64>::new();
        let x = t.param(Matrix::scalar(1.0));
        let y = t.scale(x, 2.0);
        let z = t.add(y, y).unwrap();
        assert_eq!(t.backward(z).unwrap().get(x).unwrap().item(), 4.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(
            t.backward(x),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Matrix::scalar(2.0));
        let p = t.param(Matrix::scalar(5.0));
        let y = t.mul(c, p).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().item(), 2.0);
    }

    #[test]
    fn row_norm_zero_row_has_zero_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(m(&[&[0.0, 0.0], &[3.0, 4.0]]));
        let n = t.row_norm(x);
        assert_eq!(t.value(n).as_slice(), &[0.0, 5.0]);
        let s = t.sum(n);
        let g = t.backward(s).unwrap();
        let gx = g.get(x).unwrap().as_slice();
        for (a, b) in gx.iter().zip([0.0, 0.0, 0.6, 0.8]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::from_fn(5, 7, |i, j| {
            ((i * 7 + j) as f64).sin() * 30.0
        }));
        let s = t.softmax_rows(x);
        for i in 0..5 {
            let row = t.value(s).row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
