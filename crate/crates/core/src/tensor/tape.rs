//! Reverse-mode autodiff on a flat tape of 2-D nodes.
//!
//! A tape is built by one thread, append-only, so node order is already
//! a topological order; backward walks it once in reverse. Parameters
//! enter as borrowed leaves (no copy) and their gradients are collected
//! into a [`GradBundle`] that the caller folds into the `ParamSet` — in
//! training, one bundle per fixed-size batch chunk, reduced in chunk
//! order, which keeps results independent of thread count.

use std::collections::HashMap;
use std::sync::Arc;

use super::kernels;
use super::params::{GradBundle, ParamId, ParamSet};
use crate::rng::Rng;
use crate::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Node storage: computed values are owned, leaves may share parameter
/// or frozen-table buffers without copying.
#[derive(Debug)]
enum Value {
    Own(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl std::ops::Deref for Value {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        match self {
            Value::Own(v) => v,
            Value::Shared(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    /// a · bᵀ
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    MulElem { a: Var, b: Var },
    /// m×n plus a 1×n row broadcast down the rows.
    AddRow { a: Var, row: Var },
    /// m×n times an m×1 column broadcast across the columns.
    MulCol { a: Var, col: Var },
    Scale { a: Var, c: f64 },
    Sigmoid { a: Var },
    Tanh { a: Var },
    SoftmaxRows { a: Var, tau: f64 },
    LogSoftmaxRows { a: Var },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    ConcatCols { a: Var, b: Var },
    StackRows { parts: Vec<Var> },
    Transpose { a: Var },
    GatherRows { table: Var, ids: Vec<usize> },
    Dropout { a: Var, mask: Vec<f64> },
    /// -Σ_t logp[t, targets[t]], a 1×1 scalar.
    NllPickSum { logp: Var, targets: Vec<usize> },
    SumAll { a: Var },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Value,
    param: Option<ParamId>,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<ParamId, Var>,
    n_params: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_cache: HashMap::new(), n_params: 0 }
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { op, rows, cols, value: Value::Own(value), param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.nodes[v.0].value[0]
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, rows, cols, value)
    }

    /// Share a frozen table (no copy, no gradient).
    pub fn constant_shared(&mut self, rows: usize, cols: usize, value: Arc<Vec<f64>>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { op: Op::Leaf, rows, cols, value: Value::Shared(value), param: None });
        Var(self.nodes.len() - 1)
    }

    /// Share a parameter as a leaf. Repeated calls for the same id
    /// return the same node so gradients accumulate in one place.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let p = params.get(id);
        self.nodes.push(Node {
            op: Op::Leaf,
            rows: p.rows,
            cols: p.cols,
            value: Value::Shared(params.data_arc(id)),
            param: Some(id),
        });
        self.n_params = self.n_params.max(id.index() + 1);
        let v = Var(self.nodes.len() - 1);
        self.param_cache.insert(id, v);
        v
    }

    // ── Operations ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul: inner dimensions disagree, left is {}x{}, right is {}x{}",
                m, ka, kb, n
            )));
        }
        let value = kernels::matmul_seq(self.value(a), self.value(b), m, ka, n);
        Ok(self.push(Op::MatMul { a, b }, m, n, value))
    }

    /// a · bᵀ where a is m×d and b is n×d.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, da) = self.shape(a);
        let (n, db) = self.shape(b);
        if da != db {
            return Err(Error::Shape(format!(
                "matmul_nt: column counts disagree, {}x{} vs {}x{}",
                m, da, n, db
            )));
        }
        let value = kernels::matmul_nt(self.value(a), self.value(b), m, da, n);
        Ok(self.push(Op::MatMulNT { a, b }, m, n, value))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Shape(format!(
                "{what}: shapes disagree, {}x{} vs {}x{}",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add { a, b }, m, n, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(Op::Sub { a, b }, m, n, value))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape(a, b, "mul_elem")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::MulElem { a, b }, m, n, value))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != n {
            return Err(Error::Shape(format!("add_row: {}x{} + {}x{}", m, n, rr, rc)));
        }
        let mut value = self.value(a).to_vec();
        let rv = self.value(row).to_vec();
        for chunk in value.chunks_mut(n) {
            kernels::add_assign(chunk, &rv);
        }
        Ok(self.push(Op::AddRow { a, row }, m, n, value))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cr != m || cc != 1 {
            return Err(Error::Shape(format!("mul_col: {}x{} * {}x{}", m, n, cr, cc)));
        }
        let cv = self.value(col).to_vec();
        let mut value = self.value(a).to_vec();
        for (i, chunk) in value.chunks_mut(n).enumerate() {
            for x in chunk {
                *x *= cv[i];
            }
        }
        Ok(self.push(Op::MulCol { a, col }, m, n, value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.shape(a);
        let value = self.value(a).iter().map(|x| x * c).collect();
        self.push(Op::Scale { a, c }, m, n, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let value = self.value(a).iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        self.push(Op::Sigmoid { a }, m, n, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh { a }, m, n, value)
    }

    /// Row-wise temperature softmax. With a mask, only `true` positions
    /// participate; masked entries come out exactly 0.
    pub fn softmax_rows(&mut self, a: Var, tau: f64, mask: Option<Vec<bool>>) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::Param(format!("softmax temperature must be > 0, got {tau}")));
        }
        let (m, n) = self.shape(a);
        if let Some(mk) = &mask {
            if mk.len() != m * n {
                return Err(Error::Shape("softmax mask size mismatch".into()));
            }
        }
        let mut value = self.value(a).to_vec();
        match &mask {
            None => {
                for row in value.chunks_mut(n) {
                    kernels::softmax_row_inplace(row, tau);
                }
            }
            Some(mk) => {
                for (i, row) in value.chunks_mut(n).enumerate() {
                    let keep = &mk[i * n..(i + 1) * n];
                    let max = row
                        .iter()
                        .zip(keep)
                        .filter(|(_, &k)| k)
                        .map(|(&x, _)| x)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (x, &k) in row.iter_mut().zip(keep) {
                        if k {
                            *x = ((*x - max) / tau).exp();
                            sum += *x;
                        } else {
                            *x = 0.0;
                        }
                    }
                    for x in row.iter_mut() {
                        *x /= sum;
                    }
                }
            }
        }
        Ok(self.push(Op::SoftmaxRows { a, tau }, m, n, value))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(n) {
            kernels::log_softmax_row_inplace(row);
        }
        self.push(Op::LogSoftmaxRows { a }, m, n, value)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start + len > m {
            return Err(Error::Shape(format!("slice_rows: {start}+{len} > {m}")));
        }
        let value = self.value(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(Op::SliceRows { a, start }, len, n, value))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(Error::Shape(format!("slice_cols: {start}+{len} > {n}")));
        }
        let av = self.value(a);
        let mut value = Vec::with_capacity(m * len);
        for i in 0..m {
            value.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Op::SliceCols { a, start }, m, len, value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.shape(a);
        let (mb, nb) = self.shape(b);
        if ma != mb {
            return Err(Error::Shape(format!("concat_cols: {ma} rows vs {mb} rows")));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut value = Vec::with_capacity(ma * (na + nb));
        for i in 0..ma {
            value.extend_from_slice(&av[i * na..(i + 1) * na]);
            value.extend_from_slice(&bv[i * nb..(i + 1) * nb]);
        }
        Ok(self.push(Op::ConcatCols { a, b }, ma, na + nb, value))
    }

    /// Stack single-row vars into a matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("stack_rows: no rows".into()));
        }
        let (_, n) = self.shape(parts[0]);
        let mut value = Vec::with_capacity(parts.len() * n);
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != 1 || c != n {
                return Err(Error::Shape(format!("stack_rows: expected 1x{n}, got {r}x{c}")));
            }
            value.extend_from_slice(self.value(p));
        }
        Ok(self.push(Op::StackRows { parts: parts.to_vec() }, parts.len(), n, value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let value = kernels::transpose(self.value(a), m, n);
        self.push(Op::Transpose { a }, n, m, value)
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, n) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Lookup(format!("gather_rows: row {bad} out of {rows}")));
        }
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            value.extend_from_slice(&tv[i * n..(i + 1) * n]);
        }
        Ok(self.push(Op::GatherRows { table, ids: ids.to_vec() }, ids.len(), n, value))
    }

    /// Inverted dropout: keeps with probability `1-p`, scaling by
    /// `1/(1-p)`. The mask is drawn here so the op replays exactly.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout rate must be in [0,1), got {p}")));
        }
        let (m, n) = self.shape(a);
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> =
            (0..m * n).map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 }).collect();
        let value = self.value(a).iter().zip(&mask).map(|(x, k)| x * k).collect();
        Ok(self.push(Op::Dropout { a, mask }, m, n, value))
    }

    /// Negative log-likelihood sum: `-Σ_t logp[t, targets[t]]` (1×1).
    pub fn nll_pick_sum(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(logp);
        if targets.len() != m {
            return Err(Error::Shape(format!("nll: {m} rows but {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Lookup(format!("nll: target {bad} out of {n} classes")));
        }
        let lv = self.value(logp);
        let value = -targets.iter().enumerate().map(|(t, &y)| lv[t * n + y]).sum::<f64>();
        Ok(self.push(Op::NllPickSum { logp, targets: targets.to_vec() }, 1, 1, vec![value]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().sum::<f64>();
        self.push(Op::SumAll { a }, 1, 1, vec![value])
    }

    // ── Composite helpers ───────────────────────────────────────────

    /// x·W + b (b broadcast down rows).
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a 1×1 loss node. Returns per-parameter grads.
    /// Each node is visited exactly once, in reverse tape order.
    pub fn backward(&self, loss: Var) -> Result<GradBundle> {
        if self.shape(loss) != (1, 1) {
            let (m, n) = self.shape(loss);
            return Err(Error::Shape(format!("backward needs a 1x1 loss, got {m}x{n}")));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::Eval(format!("loss is not finite: {}", self.scalar(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // Re-install so parameter grads survive collection below.
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.shape(*a);
                    let (_, n) = self.shape(*b);
                    let da = kernels::matmul_nt(&g, self.value(*b), m, n, k);
                    let db = kernels::matmul_tn(self.value(*a), &g, m, k, n);
                    acc(&mut grads, *a, &da, m * k);
                    acc(&mut grads, *b, &db, k * n);
                }
                Op::MatMulNT { a, b } => {
                    let (m, d) = self.shape(*a);
                    let (n, _) = self.shape(*b);
                    let da = kernels::matmul_seq(&g, self.value(*b), m, n, d);
                    let db = kernels::matmul_tn(&g, self.value(*a), m, n, d);
                    acc(&mut grads, *a, &da, m * d);
                    acc(&mut grads, *b, &db, n * d);
                }
                Op::Add { a, b } => {
                    let len = g.len();
                    acc(&mut grads, *a, &g, len);
                    acc(&mut grads, *b, &g, len);
                }
                Op::Sub { a, b } => {
                    let len = g.len();
                    acc(&mut grads, *a, &g, len);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut grads, *b, &neg, len);
                }
                Op::MulElem { a, b } => {
                    let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    let len = g.len();
                    acc(&mut grads, *a, &da, len);
                    acc(&mut grads, *b, &db, len);
                }
                Op::AddRow { a, row } => {
                    let (m, n) = (node.rows, node.cols);
                    acc(&mut grads, *a, &g, m * n);
                    let mut dr = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        kernels::add_assign(&mut dr, chunk);
                    }
                    acc(&mut grads, *row, &dr, n);
                }
                Op::MulCol { a, col } => {
                    let (m, n) = (node.rows, node.cols);
                    let cv = self.value(*col);
                    let av = self.value(*a);
                    let mut da = vec![0.0; m * n];
                    let mut dc = vec![0.0; m];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g[i * n + j] * cv[i];
                            dc[i] += g[i * n + j] * av[i * n + j];
                        }
                    }
                    acc(&mut grads, *a, &da, m * n);
                    acc(&mut grads, *col, &dc, m);
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                    let len = g.len();
                    acc(&mut grads, *a, &da, len);
                }
                Op::Sigmoid { a } => {
                    let da: Vec<f64> =
                        g.iter().zip(&*node.value).map(|(x, s)| x * s * (1.0 - s)).collect();
                    let len = g.len();
                    acc(&mut grads, *a, &da, len);
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> =
                        g.iter().zip(&*node.value).map(|(x, t)| x * (1.0 - t * t)).collect();
                    let len = g.len();
                    acc(&mut grads, *a, &da, len);
                }
                Op::SoftmaxRows { a, tau } => {
                    // dz = (s ⊙ (g - <g,s>)) / tau per row; masked entries
                    // have s = 0 and thus dz = 0 automatically.
                    let (m, n) = (node.rows, node.cols);
                    let s = &*node.value;
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let srow = &s[i * n..(i + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        let inner = kernels::dot(grow, srow);
                        for j in 0..n {
                            da[i * n + j] = srow[j] * (grow[j] - inner) / tau;
                        }
                    }
                    acc(&mut grads, *a, &da, m * n);
                }
                Op::LogSoftmaxRows { a } => {
                    // dz = g - softmax(z) * Σ(g) per row.
                    let (m, n) = (node.rows, node.cols);
                    let lp = &*node.value;
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..n {
                            da[i * n + j] = grow[j] - lp[i * n + j].exp() * gsum;
                        }
                    }
                    acc(&mut grads, *a, &da, m * n);
                }
                Op::SliceRows { a, start } => {
                    let (_, n) = self.shape(*a);
                    let (m_src, _) = self.shape(*a);
                    let mut da = vec![0.0; m_src * n];
                    da[start * n..start * n + g.len()].copy_from_slice(&g);
                    acc(&mut grads, *a, &da, m_src * n);
                }
                Op::SliceCols { a, start } => {
                    let (m, n_src) = self.shape(*a);
                    let len = node.cols;
                    let mut da = vec![0.0; m * n_src];
                    for i in 0..m {
                        da[i * n_src + start..i * n_src + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, *a, &da, m * n_src);
                }
                Op::ConcatCols { a, b } => {
                    let (m, na) = self.shape(*a);
                    let (_, nb) = self.shape(*b);
                    let n = na + nb;
                    let mut da = vec![0.0; m * na];
                    let mut db = vec![0.0; m * nb];
                    for i in 0..m {
                        da[i * na..(i + 1) * na].copy_from_slice(&g[i * n..i * n + na]);
                        db[i * nb..(i + 1) * nb].copy_from_slice(&g[i * n + na..(i + 1) * n]);
                    }
                    acc(&mut grads, *a, &da, m * na);
                    acc(&mut grads, *b, &db, m * nb);
                }
                Op::StackRows { parts } => {
                    let n = node.cols;
                    for (i, &p) in parts.iter().enumerate() {
                        acc(&mut grads, p, &g[i * n..(i + 1) * n], n);
                    }
                }
                Op::Transpose { a } => {
                    let da = kernels::transpose(&g, node.rows, node.cols);
                    let len = g.len();
                    acc(&mut grads, *a, &da, len);
                }
                Op::GatherRows { table, ids } => {
                    let (rows, n) = self.shape(*table);
                    let mut dt = vec![0.0; rows * n];
                    for (i, &id) in ids.iter().enumerate() {
                        kernels::add_assign(&mut dt[id * n..(id + 1) * n], &g[i * n..(i + 1) * n]);
                    }
                    acc(&mut grads, *table, &dt, rows * n);
                }
                Op::Dropout { a, mask } => {
                    let da: Vec<f64> = g.iter().zip(mask).map(|(x, k)| x * k).collect();
                    let len = g.len();
                    acc(&mut grads, *a, &da, len);
                }
                Op::NllPickSum { logp, targets } => {
                    let (m, n) = self.shape(*logp);
                    let mut dl = vec![0.0; m * n];
                    for (t, &y) in targets.iter().enumerate() {
                        dl[t * n + y] = -g[0];
                    }
                    acc(&mut grads, *logp, &dl, m * n);
                }
                Op::SumAll { a } => {
                    let (m, n) = self.shape(*a);
                    let da = vec![g[0]; m * n];
                    acc(&mut grads, *a, &da, m * n);
                }
            }
        }

        let mut slots: Vec<Option<Vec<f64>>> = vec![None; self.n_params];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, grads[idx].take()) {
                slots[pid.index()] = Some(g);
            }
        }
        Ok(GradBundle { slots })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64], len: usize) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    kernels::add_assign(slot, delta);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of a scalar graph w.r.t. one parameter.
    fn numeric_grad<F>(ps: &ParamSet, id: ParamId, eps: f64, f: F) -> Vec<f64>
    where
        F: Fn(&ParamSet) -> f64,
    {
        let mut out = Vec::new();
        for j in 0..ps.data(id).len() {
            let mut plus = ps.clone();
            plus.data_mut(id)[j] += eps;
            let mut minus = ps.clone();
            minus.data_mut(id)[j] -= eps;
            out.push((f(&plus) - f(&minus)) / (2.0 * eps));
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", 2, 3, vec![0.4, -0.2, 0.1, 0.7, 0.3, -0.5]).unwrap();
        let loss_of = |ps: &ParamSet| {
            let mut t = Tape::new();
            let wv = t.param(ps, w);
            let x = t.constant(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.3, 0.9]);
            let y = t.matmul(x, wv).unwrap();
            let s = t.mul_elem(y, y).unwrap();
            t.sum_all(s);
            t.scalar(Var(t.len() - 1))
        };
        let mut t = Tape::new();
        let wv = t.param(&ps, w);
        let x = t.constant(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.3, 0.9]);
        let y = t.matmul(x, wv).unwrap();
        let s = t.mul_elem(y, y).unwrap();
        let loss = t.sum_all(s);
        let bundle = t.backward(loss).unwrap();
        let analytic = bundle.slots[w.index()].clone().unwrap();
        let numeric = numeric_grad(&ps, w, 1e-6, loss_of);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn softmax_nll_gradients_match_finite_differences() {
        let mut ps = ParamSet::new();
        let z = ps.add("z", 2, 4, vec![0.3, -0.7, 1.2, 0.0, -0.1, 0.8, 0.5, -1.0]).unwrap();
        let build = |ps: &ParamSet, t: &mut Tape| -> Var {
            let zv = t.param(ps, z);
            let lp = t.log_softmax_rows(zv);
            t.nll_pick_sum(lp, &[2, 1]).unwrap()
        };
        let mut t = Tape::new();
        let loss = build(&ps, &mut t);
        let analytic = t.backward(loss).unwrap().slots[z.index()].clone().unwrap();
        let numeric = numeric_grad(&ps, z, 1e-6, |ps| {
            let mut t = Tape::new();
            let l = build(ps, &mut t);
            t.scalar(l)
        });
        assert_close(&analytic, &numeric, 1e-7);
    }

    #[test]
    fn temperature_softmax_gradient() {
        let mut ps = ParamSet::new();
        let z = ps.add("z", 1, 5, vec![0.2, -0.4, 0.9, 0.0, 0.5]).unwrap();
        let build = |ps: &ParamSet, t: &mut Tape| -> Var {
            let zv = t.param(ps, z);
            let q = t.softmax_rows(zv, 0.05, None).unwrap();
            let w = t.constant(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
            let p = t.mul_elem(q, w).unwrap();
            t.sum_all(p)
        };
        let mut t = Tape::new();
        let loss = build(&ps, &mut t);
        let analytic = t.backward(loss).unwrap().slots[z.index()].clone().unwrap();
        let numeric = numeric_grad(&ps, z, 1e-6, |ps| {
            let mut t = Tape::new();
            let l = build(ps, &mut t);
            t.scalar(l)
        });
        assert_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn gather_slice_stack_roundtrip_gradients() {
        let mut ps = ParamSet::new();
        let e = ps.add("e", 4, 3, (0..12).map(|x| x as f64 * 0.1).collect()).unwrap();
        let build = |ps: &ParamSet, t: &mut Tape| -> Var {
            let ev = t.param(ps, e);
            let g = t.gather_rows(ev, &[3, 1, 3]).unwrap();
            let r0 = t.slice_rows(g, 0, 1).unwrap();
            let r2 = t.slice_rows(g, 2, 1).unwrap();
            let st = t.stack_rows(&[r0, r2]).unwrap();
            let sq = t.mul_elem(st, st).unwrap();
            t.sum_all(sq)
        };
        let mut t = Tape::new();
        let loss = build(&ps, &mut t);
        let analytic = t.backward(loss).unwrap().slots[e.index()].clone().unwrap();
        let numeric = numeric_grad(&ps, e, 1e-6, |ps| {
            let mut t = Tape::new();
            let l = build(ps, &mut t);
            t.scalar(l)
        });
        assert_close(&analytic, &numeric, 1e-6);
        // Row 3 is gathered twice: contributions accumulate there.
        assert!(analytic[9..12].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn shared_parameter_node_accumulates_gradient() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", 1, 1, vec![3.0]).unwrap();
        let mut t = Tape::new();
        let a = t.param(&ps, w);
        let b = t.param(&ps, w); // same node
        assert_eq!(a, b);
        let y = t.mul_elem(a, b).unwrap(); // w^2
        let loss = t.sum_all(y);
        let g = t.backward(loss).unwrap().slots[w.index()].clone().unwrap();
        assert!((g[0] - 6.0).abs() < 1e-12); // d(w^2)/dw = 2w
    }

    #[test]
    fn backward_rejects_non_scalar_and_non_finite() {
        let mut t = Tape::new();
        let c = t.constant(2, 2, vec![1.0; 4]);
        assert!(t.backward(c).is_err());
        let mut t = Tape::new();
        let c = t.constant(1, 1, vec![f64::NAN]);
        assert!(matches!(t.backward(c), Err(Error::Eval(_))));
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut t = Tape::new();
        let mut rng = Rng::seed_from(1);
        let c = t.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let d = t.dropout(c, 0.0, &mut rng).unwrap();
        assert_eq!(c, d);
    }
}
