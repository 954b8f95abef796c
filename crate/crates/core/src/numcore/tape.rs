//! Reverse-mode tape over 2-D values.
//!
//! Nodes are appended in evaluation order, so every node's inputs precede it
//! and `backward` is a single reverse sweep.

use super::kernels;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    GatherRows { table: Var, ids: Vec<usize> },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
        probs: Vec<F>,
    },
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Softmax(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layernorm",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node<F> {
    rows: usize,
    cols: usize,
    value: Vec<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Computation tape. Single-threaded; build one per sample when running
/// workers in parallel.
pub struct Tape<F: Real = f64> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    check_finite: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    /// Non-finite checks are on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded operations, in evaluation order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("tape values are well-formed")
    }

    /// Gradient accumulated by the last `backward`, if the node took part.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        debug_assert_eq!(rows * cols, value.len());
        if self.check_finite && !kernels::all_finite(&value) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor as a leaf; it takes gradients iff the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.leaf_raw(t.rows(), t.cols(), t.data().to_vec(), t.requires_grad())
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<F>, requires_grad: bool) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::dim("input", &[rows, cols], &[data.len()]));
        }
        Ok(self.leaf_raw(rows, cols, data, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Result<Var> {
        self.input(rows, cols, data, false)
    }

    fn leaf_raw(&mut self, rows: usize, cols: usize, value: Vec<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> [usize; 2] {
        let (r, c) = self.shape(v);
        [r, c]
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, &self.dims(a), &self.dims(b)));
        }
        Ok(())
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::matmul(self.value(a), self.value(b), &mut out, m, k, n, false, false, false);
        self.push(m, n, out, Op::MatMul { a, b, trans_b: false }, &[a, b])
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![F::zero(); m * n];
        kernels::matmul(self.value(a), self.value(b), &mut out, m, k, n, false, true, false);
        self.push(m, n, out, Op::MatMul { a, b, trans_b: true }, &[a, b])
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(r, c, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(Error::dim("add_row", &[m, n], &self.dims(row)));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        self.push(m, n, out, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(F::zero())).collect();
        self.push(r, c, out, Op::Relu(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        self.push(r, c, out, Op::Gelu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Row softmax where `mask[i*n + j] == false` excludes entry `(i, j)`.
    pub fn softmax_rows_masked(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if mask.len() != m * n {
            return Err(Error::dim("softmax_rows_masked", &[m, n], &[mask.len()]));
        }
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.shape(a);
        let input = self.value(a);
        if self.check_finite && !kernels::all_finite(input) {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row_mask = mask.map(|mk| &mk[i * n..(i + 1) * n]);
            kernels::softmax_row(&input[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n], row_mask);
        }
        self.push(m, n, out, Op::Softmax(a), &[a])
    }

    /// Row-wise layer normalization with `1×n` gain and bias.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (m, n) = self.shape(x);
        if self.shape(gain) != (1, n) {
            return Err(Error::dim("layernorm", &[m, n], &self.dims(gain)));
        }
        if self.shape(bias) != (1, n) {
            return Err(Error::dim("layernorm", &[m, n], &self.dims(bias)));
        }
        let mut xhat = vec![F::zero(); m * n];
        let mut rstd = Vec::with_capacity(m);
        let input = self.value(x);
        for i in 0..m {
            rstd.push(kernels::normalize_row(
                &input[i * n..(i + 1) * n],
                &mut xhat[i * n..(i + 1) * n],
                eps,
            ));
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let out = xhat
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(g.iter().zip(b)).map(|(&v, (&gg, &bb))| v * gg + bb))
            .collect();
        self.push(
            m,
            n,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = self.shape(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::dim("concat_rows", &self.dims(first), &[r, c]));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", &[m, n], &[start, len]));
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        self.push(len, n, out, Op::SliceRows { a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::dim("concat_cols", &self.dims(first), &[r, c]));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", &[m, n], &[start, len]));
        }
        let v = self.value(a);
        let out = (0..m)
            .flat_map(|i| v[i * n + start..i * n + start + len].iter().copied())
            .collect();
        self.push(m, len, out, Op::SliceCols { a, start }, &[a])
    }

    /// Embedding lookup: row `r` of the output is row `ids[r]` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim("gather_rows", &[v, d], &[bad]));
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        self.push(ids.len(), d, out, Op::GatherRows { table, ids: ids.to_vec() }, &[table])
    }

    /// `Σ_t weights[t] · (−log softmax(logits[t])[targets[t]])` as a `1×1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let (m, n) = self.shape(logits);
        if targets.len() != m || weights.len() != m {
            return Err(Error::dim("cross_entropy", &[m, n], &[targets.len(), weights.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::dim("cross_entropy", &[m, n], &[bad]));
        }
        let lv = self.value(logits);
        if self.check_finite && !kernels::all_finite(lv) {
            return Err(Error::NonFinite { op: "cross_entropy" });
        }
        let mut probs = vec![F::zero(); m * n];
        let mut total = F::zero();
        for i in 0..m {
            let row = &lv[i * n..(i + 1) * n];
            kernels::softmax_row(row, &mut probs[i * n..(i + 1) * n], None);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            total += weights[i] * (lse - row[targets[i]]);
        }
        self.push(
            1,
            1,
            vec![total],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push(1, 1, vec![s], Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let v = self.value(a);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        self.push(n, m, out, Op::Transpose(a), &[a])
    }

    /// Reinterprets the row-major data with a new `rows × cols` shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if rows * cols != m * n || rows == 0 {
            return Err(Error::dim("reshape", &[m, n], &[rows, cols]));
        }
        let out = self.value(a).to_vec();
        self.push(rows, cols, out, Op::Reshape(a), &[a])
    }

    /// Appends zero rows so that `a` has `rows` rows.
    pub fn pad_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if rows < m {
            return Err(Error::dim("pad_rows", &[m, n], &[rows, n]));
        }
        if rows == m {
            return Ok(a);
        }
        let zeros = self.constant(rows - m, n, vec![F::zero(); (rows - m) * n])?;
        self.concat_rows(&[a, zeros])
    }

    /// Reverse sweep from a `1×1` node. Gradients of earlier sweeps are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::dim("backward", &self.dims(loss), &[1, 1]));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.check_finite && !kernels::all_finite(&g) {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b, trans_b } => {
                    let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                    let n = cols;
                    if let Some(ga) = slot(grads, nodes, *a) {
                        // ga += g · op(b)ᵀ
                        kernels::matmul(&g, &nodes[b.0].value, ga, m, n, k, false, !*trans_b, true);
                    }
                    if let Some(gb) = slot(grads, nodes, *b) {
                        if *trans_b {
                            // gb[n×k] += gᵀ · a
                            kernels::matmul(&g, &nodes[a.0].value, gb, n, m, k, true, false, true);
                        } else {
                            // gb[k×n] += aᵀ · g
                            kernels::matmul(&nodes[a.0].value, &g, gb, k, m, n, true, false, true);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if let Some(gv) = slot(grads, nodes, *v) {
                            axpy(gv, &g, F::one());
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        axpy(ga, &g, F::one());
                    }
                    if let Some(gb) = slot(grads, nodes, *b) {
                        axpy(gb, &g, -F::one());
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        for ((d, &gv), &bv) in ga.iter_mut().zip(&g).zip(&nodes[b.0].value) {
                            *d += gv * bv;
                        }
                    }
                    if let Some(gb) = slot(grads, nodes, *b) {
                        for ((d, &gv), &av) in gb.iter_mut().zip(&g).zip(&nodes[a.0].value) {
                            *d += gv * av;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        axpy(ga, &g, F::one());
                    }
                    if let Some(gr) = slot(grads, nodes, *row) {
                        for chunk in g.chunks_exact(cols) {
                            axpy(gr, chunk, F::one());
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        axpy(ga, &g, *s);
                    }
                }
                Op::Relu(a) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        for ((d, &gv), &x) in ga.iter_mut().zip(&g).zip(&nodes[a.0].value) {
                            if x > F::zero() {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        for ((d, &gv), &x) in ga.iter_mut().zip(&g).zip(&nodes[a.0].value) {
                            *d += gv * kernels::gelu_grad(x);
                        }
                    }
                }
                Op::Softmax(a) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        let y = &node.value;
                        for i in 0..rows {
                            let r = i * cols..(i + 1) * cols;
                            let dot: F = g[r.clone()].iter().zip(&y[r.clone()]).map(|(&p, &q)| p * q).sum();
                            for j in r {
                                ga[j] += y[j] * (g[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    if let Some(gg) = slot(grads, nodes, *gain) {
                        for (gi, xi) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                            for j in 0..cols {
                                gg[j] += gi[j] * xi[j];
                            }
                        }
                    }
                    if let Some(gb) = slot(grads, nodes, *bias) {
                        for gi in g.chunks_exact(cols) {
                            axpy(gb, gi, F::one());
                        }
                    }
                    if let Some(gx) = slot(grads, nodes, *x) {
                        let gain_v = &nodes[gain.0].value;
                        let nf = F::from_usize(cols).unwrap();
                        let mut gh = vec![F::zero(); cols];
                        for i in 0..rows {
                            let gi = &g[i * cols..(i + 1) * cols];
                            let xi = &xhat[i * cols..(i + 1) * cols];
                            let mut mean_gh = F::zero();
                            let mut mean_ghx = F::zero();
                            for j in 0..cols {
                                gh[j] = gi[j] * gain_v[j];
                                mean_gh += gh[j];
                                mean_ghx += gh[j] * xi[j];
                            }
                            mean_gh /= nf;
                            mean_ghx /= nf;
                            let out = &mut gx[i * cols..(i + 1) * cols];
                            for j in 0..cols {
                                out[j] += rstd[i] * (gh[j] - mean_gh - xi[j] * mean_ghx);
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(gp) = slot(grads, nodes, *p) {
                            axpy(gp, &g[offset..offset + len], F::one());
                        }
                        offset += len;
                    }
                }
                Op::SliceRows { a, start } => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        let off = start * cols;
                        axpy(&mut ga[off..off + g.len()], &g, F::one());
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = nodes[p.0].cols;
                        if let Some(gp) = slot(grads, nodes, *p) {
                            for i in 0..rows {
                                axpy(
                                    &mut gp[i * pc..(i + 1) * pc],
                                    &g[i * cols + offset..i * cols + offset + pc],
                                    F::one(),
                                );
                            }
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { a, start } => {
                    let n = nodes[a.0].cols;
                    if let Some(ga) = slot(grads, nodes, *a) {
                        for i in 0..rows {
                            axpy(
                                &mut ga[i * n + start..i * n + start + cols],
                                &g[i * cols..(i + 1) * cols],
                                F::one(),
                            );
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    if let Some(gt) = slot(grads, nodes, *table) {
                        for (r, &id) in ids.iter().enumerate() {
                            axpy(&mut gt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols], F::one());
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let n = nodes[logits.0].cols;
                    if let Some(gl) = slot(grads, nodes, *logits) {
                        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            let s = g[0] * w;
                            for j in 0..n {
                                gl[i * n + j] += s * probs[i * n + j];
                            }
                            gl[i * n + t] -= s;
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        ga.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Reshape(a) => {
                    if let Some(ga) = slot(grads, nodes, *a) {
                        axpy(ga, &g, F::one());
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].rows, nodes[a.0].cols);
                    if let Some(ga) = slot(grads, nodes, *a) {
                        for i in 0..m {
                            for j in 0..n {
                                ga[i * n + j] += g[j * m + i];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'g, F: Real>(grads: &'g mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> Option<&'g mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.len()]))
}

fn axpy<F: Real>(dst: &mut [F], src: &[F], s: F) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(t: &mut Tape<f64>, r: usize, c: usize, v: &[f64]) -> Var {
        t.input(r, c, v.to_vec(), true).unwrap()
    }

    #[test]
    fn identity_times_b_is_b() {
        let mut t = Tape::<f64>::new();
        let eye = t.leaf(&Tensor::identity(3));
        let b = mat(&mut t, 3, 2, &[1.5, -2.0, 0.25, 7.0, 3.0, -0.5]);
        let c = t.matmul(eye, b).unwrap();
        assert_eq!(t.value(c), t.value(b));
    }

    #[test]
    fn small_matmul_by_hand() {
        let mut t = Tape::<f64>::new();
        let a = mat(&mut t, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(&mut t, 2, 1, &[1.0, 1.0]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), (2, 1));
        assert_eq!(t.value(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::<f64>::new();
        let a = mat(&mut t, 2, 3, &[0.0; 6]);
        let b = mat(&mut t, 2, 3, &[0.0; 6]);
        match t.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::<f64>::new();
        let a = mat(&mut t, 3, 3, &[0.0, 0.0, 0.0, 1000.0, 0.0, -1000.0, 1f64.ln(), 2f64.ln(), 3f64.ln()]);
        let s = t.softmax_rows(a).unwrap();
        let v = t.value(s);
        for &x in &v[0..3] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[3] - 1.0).abs() < 1e-15 && v[4] < 1e-300);
        for (j, &x) in v[6..9].iter().enumerate() {
            assert!((x - (j + 1) as f64 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layernorm_examples() {
        let mut t = Tape::<f64>::new();
        let x = mat(&mut t, 2, 2, &[5.0, 5.0, 1.0, 3.0]);
        let g = mat(&mut t, 1, 2, &[1.0, 1.0]);
        let b = mat(&mut t, 1, 2, &[0.0, 0.0]);
        let y = t.layernorm(x, g, b, 1e-5).unwrap();
        let v = t.value(y).to_vec();
        assert_eq!(&v[0..2], &[0.0, 0.0]);
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((v[2] + expected).abs() < 1e-15 && (v[3] - expected).abs() < 1e-15);
        assert!((v[3] - 1.0).abs() < 1e-5);

        let g0 = mat(&mut t, 1, 2, &[0.0, 0.0]);
        let bias = mat(&mut t, 1, 2, &[0.5, -1.5]);
        let y0 = t.layernorm(x, g0, bias, 1e-5).unwrap();
        assert_eq!(t.value(y0), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut t = Tape::<f64>::new();
        let x = mat(&mut t, 1, 2, &[1.0, 2.0]);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut t = Tape::<f64>::new();
        let w = t.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = mat(&mut t, 1, 2, &[1.0, -1.0]);
        let y = t.matmul(x, w).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(w).is_none());
        assert_eq!(t.grad(x).unwrap(), &[3.0, 7.0]);
    }

    #[test]
    fn non_finite_values_are_reported_with_op_name() {
        let mut t = Tape::<f64>::new().with_finite_checks(true);
        let x = mat(&mut t, 1, 1, &[f64::MAX]);
        match t.scale(x, 10.0) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "scale"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn ops_are_recorded_in_evaluation_order() {
        let mut t = Tape::<f64>::new();
        let x = mat(&mut t, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = t.relu(x).unwrap();
        let z = t.transpose(y).unwrap();
        let _ = t.sum(z).unwrap();
        assert_eq!(t.op_names(), vec!["leaf", "relu", "transpose", "sum"]);
    }
}
