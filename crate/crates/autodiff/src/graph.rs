use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    Scale(Var, T),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    CausalAttention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    GatherRows { table: Var, idx: Vec<usize> },
    BceWithLogits { logits: Var, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// Epsilon added to the variance inside [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Recording tape over a borrowed, frozen parameter store.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    /// Registers a constant (or gradient-checked) input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf });
        self.param_nodes[id.0] = Some(v);
        v
    }

    fn push(&mut self, t: Tensor<T>, op: Op<T>) -> Var {
        let v = Var(self.nodes.len());
        self.nodes.push(Node { value: Value::Owned(t), op });
        v
    }

    fn push_checked(&mut self, name: &'static str, t: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !t.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        Ok(self.push(t, op))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if self.value(a).len() != self.value(b).len() || self.value(a).cols() != self.value(b).cols() {
            return Err(AutodiffError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(AutodiffError::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let out = matmul_kernel(ta.data(), tb.data(), m, k, n);
        self.push_checked("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    /// `x W + b` with `x: [m, k]`, `W: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
        if tw.rows() != k || tb.len() != n {
            return Err(AutodiffError::shape(
                "linear",
                format!("x {:?}, W {:?}, b {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let mut out = matmul_kernel(tx.data(), tw.data(), m, k, n);
        for row in out.chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(tb.data()) {
                *o += bb;
            }
        }
        self.push_checked("linear", Tensor::new(vec![m, n], out)?, Op::Linear { x, w, b })
    }

    fn zip_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_checked(name, t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.len() != n {
            return Err(AutodiffError::shape("add_row", format!("{:?} + {:?}", ta.shape(), tr.shape())));
        }
        let mut data = ta.data().to_vec();
        for r in data.chunks_mut(n) {
            for (o, &x) in r.iter_mut().zip(tr.data()) {
                *o += x;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_checked("add_row", t, Op::AddRow { a, row })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let t = self.value(a).map(|x| x * c);
        self.push_checked("scale", t, Op::Scale(a, c))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let t = self.value(a).map(f);
        self.push_checked(name, t, op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary("silu", a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        self.push_checked("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if n < 2 || tg.len() != n || tb.len() != n {
            return Err(AutodiffError::shape(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        let nf = T::lit(n as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(tx.len());
        let mut rstd = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(n) {
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * r;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        self.push_checked("layer_norm", t, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    /// Multi-head scaled dot-product attention where row `i` attends to rows `0..=i`.
    ///
    /// `q`, `k`, `v` are `[T, E]` with `E` divisible by `heads`. Each output row is
    /// computed from the rows at or before it only, so a prefix of the input
    /// yields a bit-identical prefix of the output.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (len, e) = (tq.rows(), tq.cols());
        if tk.shape() != tq.shape() || tv.shape() != tq.shape() || heads == 0 || e % heads != 0 {
            return Err(AutodiffError::shape(
                "causal_attention",
                format!("q {:?}, k {:?}, v {:?}, heads {heads}", tq.shape(), tk.shape(), tv.shape()),
            ));
        }
        let dh = e / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); heads * len * len];
        let mut out = vec![T::zero(); len * e];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for h in 0..heads {
            let off = h * dh;
            for i in 0..len {
                let qi = &qd[i * e + off..i * e + off + dh];
                let p = &mut probs[(h * len + i) * len..(h * len + i) * len + len];
                let mut mx = T::neg_infinity();
                for j in 0..=i {
                    let kj = &kd[j * e + off..j * e + off + dh];
                    let s = dot(qi, kj) * scale;
                    p[j] = s;
                    mx = mx.max(s);
                }
                let mut z = T::zero();
                for pj in p.iter_mut().take(i + 1) {
                    *pj = (*pj - mx).exp();
                    z += *pj;
                }
                let o = &mut out[i * e + off..i * e + off + dh];
                for j in 0..=i {
                    p[j] /= z;
                    let vj = &vd[j * e + off..j * e + off + dh];
                    for (oo, &vv) in o.iter_mut().zip(vj) {
                        *oo += p[j] * vv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![len, e], out)?;
        self.push_checked("causal_attention", t, Op::CausalAttention { q, k, v, heads, probs })
    }

    /// Attention weights recorded by a [`Graph::causal_attention`] node:
    /// `(heads, len, probs)` with `probs[(h * len + i) * len + j]`.
    pub fn attention_probs(&self, v: Var) -> Option<(usize, usize, &[T])> {
        match &self.nodes[v.0].op {
            Op::CausalAttention { heads, probs, .. } => {
                let len = self.value(v).rows();
                Some((*heads, len, probs.as_slice()))
            }
            _ => None,
        }
    }

    /// Stacks the rows of several `[*, n]` values.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(AutodiffError::shape("concat_rows", "no inputs")),
        };
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(AutodiffError::shape("concat_rows", format!("width {} vs {n}", t.cols())));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / n;
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows() || len == 0 {
            return Err(AutodiffError::shape("slice_rows", format!("{start}..{} of {}", start + len, t.rows())));
        }
        let n = t.cols();
        let data = t.data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::new(vec![len, n], data)?, Op::SliceRows { a, start }))
    }

    /// Row lookup into an embedding table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let n = t.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= t.rows() {
                return Err(AutodiffError::shape("gather_rows", format!("index {i} >= {}", t.rows())));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![idx.len(), n], data)?;
        Ok(self.push(out, Op::GatherRows { table, idx: idx.to_vec() }))
    }

    /// Mean binary cross-entropy of `logits` against constant 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(AutodiffError::shape("bce_with_logits", format!("{} logits vs {} targets", t.len(), targets.len())));
        }
        let n = T::lit(t.len() as f64);
        let s: T = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &y)| l.max(T::zero()) - l * y + (-l.abs()).exp().ln_1p())
            .sum();
        self.push_checked("bce_with_logits", Tensor::scalar(s / n), Op::BceWithLogits { logits, targets: targets.to_vec() })
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(AutodiffError::shape("backward", format!("output shape {:?}", self.value(output).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), T::one()));

        for idx in (0..=output.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }

        let params = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v.0)))
            .filter(|&(_, n)| n < grads.len() && grads[n].is_some())
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(&self, idx: usize, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let g = gout.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Linear { x: a, w: b, .. } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let da = matmul_bt(g, tb.data(), m, n, k);
                let db = matmul_at(ta.data(), g, m, k, n);
                acc(grads, *a, ta.shape(), da);
                acc(grads, *b, tb.shape(), db);
                if let Op::Linear { b: bias, .. } = &self.nodes[idx].op {
                    let mut dbias = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        for (d, &x) in dbias.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    acc(grads, *bias, self.value(*bias).shape(), dbias);
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, self.value(*a).shape(), g.to_vec());
                acc(grads, *b, self.value(*b).shape(), g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, self.value(*a).shape(), g.to_vec());
                acc(grads, *b, self.value(*b).shape(), g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = g.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                let db = g.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                acc(grads, *a, ta.shape(), da);
                acc(grads, *b, tb.shape(), db);
            }
            Op::AddRow { a, row } => {
                acc(grads, *a, self.value(*a).shape(), g.to_vec());
                let tr = self.value(*row);
                let mut dr = vec![T::zero(); tr.len()];
                for r in g.chunks(tr.len()) {
                    for (d, &x) in dr.iter_mut().zip(r) {
                        *d += x;
                    }
                }
                acc(grads, *row, tr.shape(), dr);
            }
            Op::Scale(a, c) => {
                acc(grads, *a, self.value(*a).shape(), g.iter().map(|&x| x * *c).collect());
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let d = g.iter().zip(ta.data()).map(|(&x, &v)| if v > T::zero() { x } else { T::zero() }).collect();
                acc(grads, *a, ta.shape(), d);
            }
            Op::Silu(a) => {
                let ta = self.value(*a);
                let d = g
                    .iter()
                    .zip(ta.data())
                    .map(|(&x, &v)| {
                        let s = sigmoid(v);
                        x * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                acc(grads, *a, ta.shape(), d);
            }
            Op::Sigmoid(a) => {
                let out = self.value(Var(idx));
                let d = g.iter().zip(out.data()).map(|(&x, &s)| x * s * (T::one() - s)).collect();
                acc(grads, *a, self.value(*a).shape(), d);
            }
            Op::Abs(a) => {
                let ta = self.value(*a);
                let d = g
                    .iter()
                    .zip(ta.data())
                    .map(|(&x, &v)| {
                        if v > T::zero() {
                            x
                        } else if v < T::zero() {
                            -x
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(grads, *a, ta.shape(), d);
            }
            Op::Square(a) => {
                let ta = self.value(*a);
                let two = T::lit(2.0);
                let d = g.iter().zip(ta.data()).map(|(&x, &v)| two * x * v).collect();
                acc(grads, *a, ta.shape(), d);
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                acc(grads, *a, ta.shape(), vec![g[0]; ta.len()]);
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let s = g[0] / T::lit(ta.len() as f64);
                acc(grads, *a, ta.shape(), vec![s; ta.len()]);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let tg = self.value(*gain);
                let n = tg.len();
                let nf = T::lit(n as f64);
                let mut dx = Vec::with_capacity(g.len());
                let mut dgain = vec![T::zero(); n];
                let mut dbias = vec![T::zero(); n];
                for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..n {
                        let dh = grow[j] * tg.data()[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                    }
                    mean_dh /= nf;
                    mean_dh_h /= nf;
                    for j in 0..n {
                        let dh = grow[j] * tg.data()[j];
                        dx.push(rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h));
                    }
                }
                acc(grads, *x, self.value(*x).shape(), dx);
                acc(grads, *gain, tg.shape(), dgain);
                acc(grads, *bias, self.value(*bias).shape(), dbias);
            }
            Op::CausalAttention { q, k, v, heads, probs } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (len, e) = (tq.rows(), tq.cols());
                let dh = e / heads;
                let scale = T::lit(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
                let mut dq = vec![T::zero(); len * e];
                let mut dk = vec![T::zero(); len * e];
                let mut dv = vec![T::zero(); len * e];
                let mut dp = vec![T::zero(); len];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..len {
                        let p = &probs[(h * len + i) * len..(h * len + i) * len + len];
                        let go = &g[i * e + off..i * e + off + dh];
                        let mut weighted = T::zero();
                        for j in 0..=i {
                            let vj = &vd[j * e + off..j * e + off + dh];
                            dp[j] = dot(go, vj);
                            weighted += p[j] * dp[j];
                            let dvj = &mut dv[j * e + off..j * e + off + dh];
                            for (d, &x) in dvj.iter_mut().zip(go) {
                                *d += p[j] * x;
                            }
                        }
                        for j in 0..=i {
                            let ds = p[j] * (dp[j] - weighted) * scale;
                            for c in 0..dh {
                                dq[i * e + off + c] += ds * kd[j * e + off + c];
                                dk[j * e + off + c] += ds * qd[i * e + off + c];
                            }
                        }
                    }
                }
                acc(grads, *q, tq.shape(), dq);
                acc(grads, *k, tk.shape(), dk);
                acc(grads, *v, tv.shape(), dv);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let tp = self.value(p);
                    acc(grads, p, tp.shape(), g[off..off + tp.len()].to_vec());
                    off += tp.len();
                }
            }
            Op::SliceRows { a, start } => {
                let ta = self.value(*a);
                let n = ta.cols();
                let mut d = vec![T::zero(); ta.len()];
                d[start * n..start * n + g.len()].copy_from_slice(g);
                acc(grads, *a, ta.shape(), d);
            }
            Op::GatherRows { table, idx: rows } => {
                let tt = self.value(*table);
                let n = tt.cols();
                let mut d = vec![T::zero(); tt.len()];
                for (r, &i) in rows.iter().enumerate() {
                    for c in 0..n {
                        d[i * n + c] += g[r * n + c];
                    }
                }
                acc(grads, *table, tt.shape(), d);
            }
            Op::BceWithLogits { logits, targets } => {
                let tl = self.value(*logits);
                let s = g[0] / T::lit(tl.len() as f64);
                let d = tl.data().iter().zip(targets).map(|(&l, &y)| s * (sigmoid(l) - y)).collect();
                acc(grads, *logits, tl.shape(), d);
            }
        }
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], data: Vec<T>) {
    let t = Tensor::new(shape.to_vec(), data).expect("gradient shape matches value");
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to any recorded value, if it influenced the output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameters that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().filter_map(|&(id, n)| self.nodes[n].as_ref().map(|g| (id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|&&(p, _)| p == id).and_then(|&(_, n)| self.nodes[n].as_ref())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `C[m, n] = A[m, k] B[k, n]`; each output row depends only on its input row.
fn matmul_kernel<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cc, &bb) in crow.iter_mut().zip(brow) {
                *cc += aip * bb;
            }
        }
    }
    c
}

/// `dA[m, k] = dC[m, n] B[k, n]^T`.
fn matmul_bt<T: Real>(dc: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut da = vec![T::zero(); m * k];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] = dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
    da
}

/// `dB[k, n] = A[m, k]^T dC[m, n]`.
fn matmul_at<T: Real>(a: &[T], dc: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut db = vec![T::zero(); k * n];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &x) in dbrow.iter_mut().zip(drow) {
                *d += aip * x;
            }
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> ParamStore<f64> {
        ParamStore::new()
    }

    #[test]
    fn linear_identity() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::row_vector(&[1.0, 2.0]));
        let w = g.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.input(Tensor::vector(&[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_hand_arithmetic() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::row_vector(&[1.0, 0.0]));
        let w = g.input(Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap());
        let b = g.input(Tensor::vector(&[1.0, 1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 1.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::row_vector(&[1.0, 2.0, 3.0]));
        let w = g.input(Tensor::zeros(&[2, 2]));
        let b = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.linear(x, w, b), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn activations_scalar_values() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(&[0.0, 1.0, -1.5]));
        let si = g.silu(x).unwrap();
        let re = g.relu(x).unwrap();
        let silu1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert_eq!(g.value(si).data()[0], 0.0);
        assert!((g.value(si).data()[1] - silu1).abs() < 1e-15);
        assert!((g.value(si).data()[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(g.value(re).data()[2], 0.0);
    }

    #[test]
    fn layer_norm_constant_and_symmetric_rows() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap());
        let gain = g.input(Tensor::full(&[4], 1.0));
        let bias = g.input(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x2 = g.input(Tensor::row_vector(&[-1.0, 1.0]));
        let gain2 = g.input(Tensor::full(&[2], 1.0));
        let bias2 = g.input(Tensor::zeros(&[2]));
        let y2 = g.layer_norm(x2, gain2, bias2).unwrap();
        let expect = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
        assert!((g.value(y2).data()[0] + expect).abs() < 1e-15);
        assert!((g.value(y2).data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn nan_input_is_error_state() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(&[f64::NAN]));
        assert!(matches!(g.silu(x), Err(AutodiffError::NonFinite { op: "silu" })));
    }

    #[test]
    fn single_position_attends_itself() {
        let s = empty();
        let mut g = Graph::new(&s);
        let q = g.input(Tensor::row_vector(&[0.3, -0.2, 0.5, 0.1]));
        let a = g.causal_attention(q, q, q, 2).unwrap();
        let (heads, len, probs) = g.attention_probs(a).unwrap();
        assert_eq!((heads, len), (2, 1));
        assert!(probs.iter().all(|&p| p == 1.0));
        assert_eq!(g.value(a).data(), g.value(q).data());
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let s = empty();
        let mut g = Graph::new(&s);
        let l = g.input(Tensor::vector(&[0.0, 0.0, 0.0, 0.0]));
        let loss = g.bce_with_logits(l, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar() {
        let s = empty();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }
}
