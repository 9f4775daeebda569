use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{axpy, dot, matmul, matmul_at_acc, matmul_bt_acc, sigmoid, softmax_row};
use super::{shape_err, ParamId, ParamStore, Scalar, Tensor, TensorError};

const RMS_EPS: f64 = 1e-6;
const NORM_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-sequence key visibility for batched attention: `allowed(b, i, j)`
/// says whether query `i` of sequence `b` may look at key `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    batch: usize,
    len: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(batch: usize, len: usize, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(batch * len * len);
        for b in 0..batch {
            for i in 0..len {
                for j in 0..len {
                    allow.push(f(b, i, j));
                }
            }
        }
        Self { batch, len, allow }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.allow[(b * self.len + i) * self.len + j]
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Vec<T>),
    Abs(Var),
    Swish(Var),
    Sum(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<Option<usize>>),
    RmsNorm(Var, Var, Vec<T>),
    Softmax(Var),
    L2Normalize(Var, Vec<T>),
    RowDot(Var, Var),
    CrossEntropy(Var, Vec<usize>, Vec<T>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Rc<AttentionMask>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients of every recorded value with respect to the loss.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

/// Records a forward computation so it can be differentiated in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let t = self.value(v);
        match t.shape().len() {
            1 => Ok((1, t.cols())),
            2 => Ok((t.shape()[0], t.shape()[1])),
            _ => Err(shape_err(op, format!("expected a matrix, got {:?}", t.shape()))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The parameter's current value; repeated calls reuse one tape entry.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul(a, b)))
    }

    /// `x W + b` with `W` shaped `[in, out]` and `b` shaped `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (m, k) = self.matrix(x, "linear")?;
        let (k2, n) = self.matrix(w, "linear")?;
        if k != k2 {
            return Err(shape_err("linear", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = matmul(self.value(x).data(), self.value(w).data(), m, k, n);
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != n {
                return Err(shape_err("linear", format!("bias {:?} for {n} outputs", bias.shape())));
            }
            for row in out.chunks_mut(n) {
                axpy(T::one(), bias.data(), row);
            }
        }
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::Linear(x, w, b)))
    }

    fn zip(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        self.same_shape(a, b, op)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds a `[cols]` (or `[1, cols]`) row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.cols();
        if tr.len() != c {
            return Err(shape_err("add_row", format!("{:?} + {:?}", tx.shape(), tr.shape())));
        }
        let mut t = tx.clone();
        for r in t.data_mut().chunks_mut(c) {
            axpy(T::one(), tr.data(), r);
        }
        Ok(self.push(t, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v + s);
        self.push(t, Op::AddScalar(x))
    }

    /// Elementwise product with a constant (no gradient flows to `c`).
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape() != c.shape() {
            return Err(shape_err("mul_const", format!("{:?} vs {:?}", tx.shape(), c.shape())));
        }
        let data = tx.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let t = Tensor::from_vec(tx.shape(), data)?;
        Ok(self.push(t, Op::MulConst(x, c.data().to_vec())))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.abs());
        self.push(t, Op::Abs(x))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * sigmoid(v));
        self.push(t, Op::Swish(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.matrix(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_vec(&[n, m], out)?, Op::Transpose(x)))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = xs.first() else {
            return Err(shape_err("concat_rows", "no inputs"));
        };
        let c = self.matrix(first, "concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (r, cx) = self.matrix(x, "concat_rows")?;
            if cx != c {
                return Err(shape_err("concat_rows", format!("{cx} vs {c} columns")));
            }
            data.extend_from_slice(self.value(x).data());
            rows += r;
        }
        Ok(self.push(Tensor::from_vec(&[rows, c], data)?, Op::ConcatRows(xs.to_vec())))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = xs.first() else {
            return Err(shape_err("concat_cols", "no inputs"));
        };
        let r = self.matrix(first, "concat_cols")?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (rx, c) = self.matrix(x, "concat_cols")?;
            if rx != r {
                return Err(shape_err("concat_cols", format!("{rx} vs {r} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_vec(&[r, total], data)?, Op::ConcatCols(xs.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.matrix(x, "slice_rows")?;
        if start + len > r {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                len: r,
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::from_vec(&[len, c], data)?, Op::SliceRows(x, start)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.matrix(x, "slice_cols")?;
        if start + len > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                len: c,
            });
        }
        let src = self.value(x).data();
        let data = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push(Tensor::from_vec(&[r, len], data)?, Op::SliceCols(x, start)))
    }

    /// Rows of `table` picked by index; `None` yields a zero row.
    pub fn gather_rows(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var, TensorError> {
        let (r, c) = self.matrix(table, "gather_rows")?;
        let src = self.value(table).data();
        let mut data = vec![T::zero(); idx.len() * c];
        for (k, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                if i >= r {
                    return Err(TensorError::Index {
                        op: "gather_rows",
                        index: i,
                        len: r,
                    });
                }
                data[k * c..(k + 1) * c].copy_from_slice(&src[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(Tensor::from_vec(&[idx.len(), c], data)?, Op::Gather(table, idx.to_vec())))
    }

    /// Embedding lookup: every index must be in range.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let idx: Vec<Option<usize>> = idx.iter().map(|&i| Some(i)).collect();
        self.gather_rows(table, &idx)
    }

    /// Row-wise RMS normalization with a learned gain of width `cols`.
    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var, TensorError> {
        let (tx, tg) = (self.value(x), self.value(gain));
        let c = tx.cols();
        if tg.len() != c {
            return Err(shape_err("rmsnorm", format!("gain {:?} for width {c}", tg.shape())));
        }
        let eps = T::of(RMS_EPS);
        let n = T::of(c as f64);
        let mut inv = Vec::with_capacity(tx.rows());
        let mut t = tx.clone();
        for row in t.data_mut().chunks_mut(c) {
            let ms = dot(row, row) / n;
            let r = T::one() / (ms + eps).sqrt();
            for (v, &g) in row.iter_mut().zip(tg.data()) {
                *v = *v * r * g;
            }
            inv.push(r);
        }
        Ok(self.push(t, Op::RmsNorm(x, gain, inv)))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let c = t.cols();
        for row in t.data_mut().chunks_mut(c) {
            softmax_row(row);
        }
        self.push(t, Op::Softmax(x))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let c = t.cols();
        let mut inv = Vec::with_capacity(t.rows());
        for row in t.data_mut().chunks_mut(c) {
            let r = T::one() / dot(row, row).sqrt().max(T::of(NORM_FLOOR));
            row.iter_mut().for_each(|v| *v = *v * r);
            inv.push(r);
        }
        self.push(t, Op::L2Normalize(x, inv))
    }

    /// Row-wise inner products of two equally shaped matrices, `[rows, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "row_dot")?;
        let (r, c) = self.matrix(a, "row_dot")?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let data = (0..r).map(|i| dot(&ta[i * c..(i + 1) * c], &tb[i * c..(i + 1) * c])).collect();
        Ok(self.push(Tensor::from_vec(&[r, 1], data)?, Op::RowDot(a, b)))
    }

    /// Sum over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != r {
            return Err(shape_err("cross_entropy", format!("{} targets for {r} rows", targets.len())));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (i, (row, &t)) in probs.chunks_mut(c).zip(targets).enumerate() {
            if t >= c {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    len: c,
                });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss = loss + lse - self.nodes[logits.0].value.data()[i * c + t];
            softmax_row(row);
        }
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, targets.to_vec(), probs)))
    }

    /// Multi-head scaled dot-product attention over a batch of equal-length
    /// sequences stacked as `[batch * len, d]`. Masked keys get `-inf`
    /// scores; a query with no visible key is an error.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &Rc<AttentionMask>,
    ) -> Result<Var, TensorError> {
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        let (rows, d) = self.matrix(q, "attention")?;
        let (bsz, len) = (mask.batch(), mask.len());
        if rows != bsz * len || heads == 0 || d % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("{rows}x{d} with {heads} heads for batch {bsz} of length {len}"),
            ));
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (tq, tk, tv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![T::zero(); rows * d];
        let mut probs = vec![T::zero(); bsz * heads * len * len];
        for b in 0..bsz {
            for i in 0..len {
                if !(0..len).any(|j| mask.allowed(b, i, j)) {
                    return Err(TensorError::AllMasked { row: b * len + i });
                }
            }
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let qi = &tq[(b * len + i) * d + off..][..dh];
                    let p = &mut probs[((b * heads + h) * len + i) * len..][..len];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj = if mask.allowed(b, i, j) {
                            dot(qi, &tk[(b * len + j) * d + off..][..dh]) * scale
                        } else {
                            T::neg_infinity()
                        };
                    }
                    softmax_row(p);
                    let oi = &mut out[(b * len + i) * d + off..][..dh];
                    for (j, &pj) in p.iter().enumerate() {
                        if pj != T::zero() {
                            axpy(pj, &tv[(b * len + j) * d + off..][..dh], oi);
                        }
                    }
                }
            }
        }
        let t = Tensor::from_vec(&[rows, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask: Rc::clone(mask),
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `store`; gradients of every recorded value are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> &'a mut Vec<T> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>], store: &mut ParamStore<T>) {
        let node = &self.nodes[i];
        let val = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => axpy(T::one(), g, store.get_mut(*id).grad.data_mut()),
            Op::MatMul(a, b) | Op::Linear(a, b, _) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let bv = self.value(*b).data();
                matmul_bt_acc(g, bv, m, n, k, self.acc(grads, *a));
                let av = self.value(*a).data();
                matmul_at_acc(av, g, m, k, n, self.acc(grads, *b));
                if let Op::Linear(_, _, Some(bias)) = &node.op {
                    let gb = self.acc(grads, *bias);
                    for row in g.chunks(n) {
                        axpy(T::one(), row, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                axpy(T::one(), g, self.acc(grads, *a));
                axpy(T::one(), g, self.acc(grads, *b));
            }
            Op::Sub(a, b) => {
                axpy(T::one(), g, self.acc(grads, *a));
                axpy(-T::one(), g, self.acc(grads, *b));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                for (o, (&gi, &bi)) in self.acc(grads, *a).iter_mut().zip(g.iter().zip(bv)) {
                    *o = *o + gi * bi;
                }
                for (o, (&gi, &ai)) in self.acc(grads, *b).iter_mut().zip(g.iter().zip(av)) {
                    *o = *o + gi * ai;
                }
            }
            Op::AddRow(x, row) => {
                axpy(T::one(), g, self.acc(grads, *x));
                let c = node.value.cols();
                let gr = self.acc(grads, *row);
                for r in g.chunks(c) {
                    axpy(T::one(), r, gr);
                }
            }
            Op::Scale(x, s) => axpy(*s, g, self.acc(grads, *x)),
            Op::AddScalar(x) => axpy(T::one(), g, self.acc(grads, *x)),
            Op::MulConst(x, c) => {
                for (o, (&gi, &ci)) in self.acc(grads, *x).iter_mut().zip(g.iter().zip(c)) {
                    *o = *o + gi * ci;
                }
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                for (o, (&gi, &xi)) in self.acc(grads, *x).iter_mut().zip(g.iter().zip(xv)) {
                    let s = if xi > T::zero() {
                        T::one()
                    } else if xi < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *o = *o + gi * s;
                }
            }
            Op::Swish(x) => {
                let xv = self.value(*x).data();
                for (o, (&gi, &xi)) in self.acc(grads, *x).iter_mut().zip(g.iter().zip(xv)) {
                    let s = sigmoid(xi);
                    *o = *o + gi * s * (T::one() + xi * (T::one() - s));
                }
            }
            Op::Sum(x) => {
                let gx = self.acc(grads, *x);
                gx.iter_mut().for_each(|o| *o = *o + g[0]);
            }
            Op::Transpose(x) => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let gx = self.acc(grads, *x);
                for r in 0..m {
                    for c in 0..n {
                        gx[r * n + c] = gx[r * n + c] + g[c * m + r];
                    }
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    axpy(T::one(), &g[off..off + n], self.acc(grads, x));
                    off += n;
                }
            }
            Op::ConcatCols(xs) => {
                let total = node.value.cols();
                let mut col = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    let gx = self.acc(grads, x);
                    for (r, row) in gx.chunks_mut(w).enumerate() {
                        axpy(T::one(), &g[r * total + col..r * total + col + w], row);
                    }
                    col += w;
                }
            }
            Op::SliceRows(x, start) => {
                let c = node.value.cols();
                let gx = self.acc(grads, *x);
                axpy(T::one(), g, &mut gx[start * c..start * c + g.len()]);
            }
            Op::SliceCols(x, start) => {
                let w = node.value.cols();
                let c = self.value(*x).cols();
                let gx = self.acc(grads, *x);
                for (r, row) in g.chunks(w).enumerate() {
                    axpy(T::one(), row, &mut gx[r * c + start..r * c + start + w]);
                }
            }
            Op::Gather(table, idx) => {
                let c = node.value.cols();
                let gt = self.acc(grads, *table);
                for (k, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        axpy(T::one(), &g[k * c..(k + 1) * c], &mut gt[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::RmsNorm(x, gain, inv) => {
                let c = node.value.cols();
                let n = T::of(c as f64);
                let (xv, gv) = (self.value(*x).data(), self.value(*gain).data());
                let mut dgain = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xv.len()];
                for (r, &ir) in inv.iter().enumerate() {
                    let xr = &xv[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let mut proj = T::zero();
                    for j in 0..c {
                        let xhat = xr[j] * ir;
                        dgain[j] = dgain[j] + gr[j] * xhat;
                        proj = proj + gr[j] * gv[j] * xhat;
                    }
                    proj = proj / n;
                    for j in 0..c {
                        let xhat = xr[j] * ir;
                        dx[r * c + j] = (gr[j] * gv[j] - xhat * proj) * ir;
                    }
                }
                axpy(T::one(), &dx, self.acc(grads, *x));
                axpy(T::one(), &dgain, self.acc(grads, *gain));
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                let gx = self.acc(grads, *x);
                for ((p, gr), o) in val.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                    let s = dot(p, gr);
                    for j in 0..c {
                        o[j] = o[j] + p[j] * (gr[j] - s);
                    }
                }
            }
            Op::L2Normalize(x, inv) => {
                let c = node.value.cols();
                let gx = self.acc(grads, *x);
                for (r, &ir) in inv.iter().enumerate() {
                    let y = &val[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let s = dot(y, gr);
                    for j in 0..c {
                        gx[r * c + j] = gx[r * c + j] + (gr[j] - y[j] * s) * ir;
                    }
                }
            }
            Op::RowDot(a, b) => {
                let c = self.value(*a).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = self.acc(grads, *a);
                for (r, &gr) in g.iter().enumerate() {
                    axpy(gr, &bv[r * c..(r + 1) * c], &mut ga[r * c..(r + 1) * c]);
                }
                let gb = self.acc(grads, *b);
                for (r, &gr) in g.iter().enumerate() {
                    axpy(gr, &av[r * c..(r + 1) * c], &mut gb[r * c..(r + 1) * c]);
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let c = self.value(*logits).cols();
                let gl = self.acc(grads, *logits);
                axpy(g[0], probs, gl);
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * c + t] = gl[r * c + t] - g[0];
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            } => {
                let (rows, d) = (node.value.rows(), node.value.cols());
                let (bsz, len) = (mask.batch(), mask.len());
                let dh = d / heads;
                let scale = T::one() / T::of(dh as f64).sqrt();
                let (tq, tk, tv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![T::zero(); rows * d];
                let mut dk = vec![T::zero(); rows * d];
                let mut dv = vec![T::zero(); rows * d];
                let mut dp = vec![T::zero(); len];
                for b in 0..bsz {
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..len {
                            let p = &probs[((b * heads + h) * len + i) * len..][..len];
                            let gi = &g[(b * len + i) * d + off..][..dh];
                            for j in 0..len {
                                if p[j] == T::zero() {
                                    dp[j] = T::zero();
                                    continue;
                                }
                                let vj = (b * len + j) * d + off;
                                dp[j] = dot(gi, &tv[vj..vj + dh]);
                                axpy(p[j], gi, &mut dv[vj..vj + dh]);
                            }
                            let s = dot(p, &dp);
                            let qi = (b * len + i) * d + off;
                            for j in 0..len {
                                if p[j] == T::zero() {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - s) * scale;
                                let kj = (b * len + j) * d + off;
                                axpy(ds, &tk[kj..kj + dh], &mut dq[qi..qi + dh]);
                                axpy(ds, &tq[qi..qi + dh], &mut dk[kj..kj + dh]);
                            }
                        }
                    }
                }
                axpy(T::one(), &dq, self.acc(grads, *q));
                axpy(T::one(), &dk, self.acc(grads, *k));
                axpy(T::one(), &dv, self.acc(grads, *v));
            }
        }
    }
}
