//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Computation runs on a [`Tape`]: every operation appends a node holding
//! the result and enough information to push gradients back to its
//! parents. Nodes are referenced by lightweight [`Var`] handles. The tape
//! is built per forward pass and dropped afterwards; persistent
//! parameters live in a [`ParamStore`] and are bound onto a tape as leaf
//! nodes, so repeated backward passes accumulate into the store.
//!
//! Numeric contract (shared with the straight-line reference
//! implementations used as oracles): all tensors are row-major matrices,
//! matrix-product accumulation runs over the inner index in ascending
//! order with a 0.0 initial accumulator and no fused multiply-add, means
//! divide by the extent, and 1/sqrt is computed as `1.0 / x.sqrt()`.
//! Under that contract two implementations of the same formula agree
//! bit for bit.
//!
//! FLOPs instrumentation: when enabled, every matrix product of sizes
//! (M x K) . (K x P) adds 2*M*K*P to the tape counter. Nothing else is
//! counted (bias adds, normalization, softmax and residuals are free),
//! matching the cost model in [`crate::flops`].

use crate::error::{Error, Result};
use crate::rng::Rng;

// ─── Raw matrix kernels ─────────────────────────────────────────────────────

/// out += a (M x K) . b (K x P), accumulating over k in ascending order.
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for j in 0..p {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// out += a (M x K) . b^T, where b is (P x K).
///
/// Materializes b^T once and reuses the mm_nn kernel: per output element
/// the accumulation still runs over k in ascending order (bit-identical
/// to a row-by-row dot product), but the inner loop vectorizes across
/// output columns instead of being a serial dot.
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), p * k);
    debug_assert_eq!(out.len(), m * p);
    let mut bt = vec![0.0; k * p];
    for j in 0..p {
        for kk in 0..k {
            bt[kk * p + j] = b[j * k + kk];
        }
    }
    mm_nn(a, &bt, m, k, p, out);
}

/// out += a^T . b, where a is (M x K) and b is (M x P); result is (K x P).
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * p);
    debug_assert_eq!(out.len(), k * p);
    for i in 0..m {
        let brow = &b[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let orow = &mut out[kk * p..(kk + 1) * p];
            for j in 0..p {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF via erf.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
fn gelu_deriv(x: f64) -> f64 {
    let phi = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi + x * pdf
}

// ─── Parameters ─────────────────────────────────────────────────────────────

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Named persistent parameters with gradient accumulators.
///
/// Registration order is the iteration order everywhere (optimizer,
/// checkpoints), which keeps training byte-deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "param {name}: data/shape mismatch");
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate param name {name}"
        );
        let grad = vec![0.0; data.len()];
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn add_ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, rows, cols, vec![1.0; rows * cols])
    }

    pub fn add_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> ParamId {
        let data = (0..rows * cols).map(|_| rng.normal_scaled(std)).collect();
        self.add(name, rows, cols, data)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn total_entries(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

// ─── Tape ───────────────────────────────────────────────────────────────────

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    MatmulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    AddRow { a: Var, b: Var },
    MulRow { a: Var, b: Var },
    SubCol { a: Var, b: Var },
    MulCol { a: Var, b: Var },
    MulScalarVar { a: Var, b: Var },
    MeanLastDim { a: Var },
    SumAll { a: Var },
    Rsqrt { a: Var },
    Gelu { a: Var },
    SoftmaxLastDim { a: Var },
    LogSoftmaxLastDim { a: Var },
    GatherRows { a: Var, idx: Vec<usize> },
    Slice2d { a: Var, r0: usize, c0: usize },
    PadCols { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    Transpose { a: Var },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Dynamic computation tape. Create one per forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    flops: Option<u128>,
    bindings: Vec<(Var, ParamId)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            flops: None,
            bindings: Vec::new(),
        }
    }

    /// Enable the matmul FLOPs counter (resets it to zero).
    pub fn enable_flops(&mut self) {
        self.flops = Some(0);
    }

    pub fn disable_flops(&mut self) {
        self.flops = None;
    }

    /// Current counter value, if counting is enabled.
    pub fn flops(&self) -> Option<u128> {
        self.flops
    }

    fn count_flops(&mut self, m: usize, k: usize, p: usize) -> Result<()> {
        if let Some(c) = self.flops.as_mut() {
            let add = 2u128 * m as u128 * k as u128 * p as u128;
            *c = c.checked_add(add).ok_or(Error::CounterOverflow)?;
        }
        Ok(())
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn rows(&self, v: Var) -> usize {
        self.node(v).rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.node(v).cols
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    /// Gradient of a node, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    // ── Leaves ──

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.push(rows, cols, data, false, Op::Leaf)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.push(rows, cols, data, true, Op::Leaf)
    }

    /// Bind a stored parameter onto the tape as a differentiable leaf.
    /// After [`Tape::backward`], [`Tape::flush_grads`] accumulates the
    /// leaf gradient back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(
            p.rows,
            p.cols,
            p.data.clone(),
            true,
            Op::Leaf,
        );
        self.bindings.push((v, id));
        v
    }

    /// Bind a stored parameter as a frozen constant (no gradient).
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.rows, p.cols, p.data.clone(), false, Op::Leaf)
    }

    // ── Elementwise and broadcast operations ──

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {ra}x{ca} vs {rb}x{cb}"
            )));
        }
        Ok((ra, ca))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(a, b, "add")?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(a, b, "sub")?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(a, b, "mul")?;
        let data = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, cl) = self.shape(a);
        let data = self.node(a).data.iter().map(|x| x * c).collect();
        let ng = self.node(a).needs_grad;
        self.push(r, cl, data, ng, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let (r, cl) = self.shape(a);
        let data = self.node(a).data.iter().map(|x| x + c).collect();
        let ng = self.node(a).needs_grad;
        self.push(r, cl, data, ng, Op::AddScalar { a })
    }

    /// a (K x d) + b (1 x d), broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if rb != 1 || cb != c {
            return Err(Error::ShapeMismatch(format!(
                "add_row: {r}x{c} + {rb}x{cb}"
            )));
        }
        let bv = &self.node(b).data;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.node(a).data[i * c + j] + bv[j]);
            }
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::AddRow { a, b }))
    }

    /// a (K x d) * b (1 x d), broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if rb != 1 || cb != c {
            return Err(Error::ShapeMismatch(format!(
                "mul_row: {r}x{c} * {rb}x{cb}"
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.node(a).data[i * c + j] * self.node(b).data[j]);
            }
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::MulRow { a, b }))
    }

    /// a (K x d) - b (K x 1), broadcast over columns.
    pub fn sub_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if rb != r || cb != 1 {
            return Err(Error::ShapeMismatch(format!(
                "sub_col: {r}x{c} - {rb}x{cb}"
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let bi = self.node(b).data[i];
            for j in 0..c {
                data.push(self.node(a).data[i * c + j] - bi);
            }
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::SubCol { a, b }))
    }

    /// a (K x d) * b (K x 1), broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if rb != r || cb != 1 {
            return Err(Error::ShapeMismatch(format!(
                "mul_col: {r}x{c} * {rb}x{cb}"
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let bi = self.node(b).data[i];
            for j in 0..c {
                data.push(self.node(a).data[i * c + j] * bi);
            }
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::MulCol { a, b }))
    }

    /// a (K x d) * b (1 x 1), broadcast everywhere.
    pub fn mul_scalar_var(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, 1) {
            return Err(Error::ShapeMismatch("mul_scalar_var: b must be 1x1".into()));
        }
        let s = self.node(b).data[0];
        let data = self.node(a).data.iter().map(|x| x * s).collect();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, data, ng, Op::MulScalarVar { a, b }))
    }

    // ── Reductions ──

    /// Row means: (K x d) -> (K x 1). Sum over the row, then divide by d.
    pub fn mean_lastdim(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = Vec::with_capacity(r);
        for i in 0..r {
            let mut s = 0.0;
            for j in 0..c {
                s += self.node(a).data[i * c + j];
            }
            data.push(s / c as f64);
        }
        let ng = self.node(a).needs_grad;
        self.push(r, 1, data, ng, Op::MeanLastDim { a })
    }

    /// Sum of all entries: -> (1 x 1).
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.node(a).data.iter().sum();
        let ng = self.node(a).needs_grad;
        self.push(1, 1, vec![s], ng, Op::SumAll { a })
    }

    // ── Nonlinearities ──

    /// Elementwise 1/sqrt(x).
    pub fn rsqrt(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.node(a).data.iter().map(|x| 1.0 / x.sqrt()).collect();
        let ng = self.node(a).needs_grad;
        self.push(r, c, data, ng, Op::Rsqrt { a })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.node(a).data.iter().map(|&x| gelu_scalar(x)).collect();
        let ng = self.node(a).needs_grad;
        self.push(r, c, data, ng, Op::Gelu { a })
    }

    /// Row-wise softmax, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(Error::RejectedInput("softmax over empty rows".into()));
        }
        if self.node(a).data.iter().any(|x| !x.is_finite()) {
            return Err(Error::RejectedInput("softmax: non-finite input".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &self.node(a).data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let mut exps = Vec::with_capacity(c);
            for &x in row {
                let e = (x - m).exp();
                exps.push(e);
                s += e;
            }
            for e in exps {
                data.push(e / s);
            }
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(r, c, data, ng, Op::SoftmaxLastDim { a }))
    }

    /// Row-wise log-softmax, stabilized by max subtraction.
    pub fn log_softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(Error::RejectedInput("log_softmax over empty rows".into()));
        }
        if self.node(a).data.iter().any(|x| !x.is_finite()) {
            return Err(Error::RejectedInput("log_softmax: non-finite input".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &self.node(a).data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for &x in row {
                s += (x - m).exp();
            }
            let lse = m + s.ln();
            for &x in row {
                data.push(x - lse);
            }
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(r, c, data, ng, Op::LogSoftmaxLastDim { a }))
    }

    // ── Structure ──

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::RejectedInput(format!(
                "gather_rows: index {bad} out of {r} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&self.node(a).data[i * c..(i + 1) * c]);
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(
            idx.len(),
            c,
            data,
            ng,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Rectangular slice rows [r0, r0+rows) x cols [c0, c0+cols).
    pub fn slice2d(&mut self, a: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r0 + rows > r || c0 + cols > c {
            return Err(Error::InvalidWidth(format!(
                "slice {r0}+{rows} x {c0}+{cols} exceeds {r}x{c}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let src = &self.node(a).data[(r0 + i) * c + c0..(r0 + i) * c + c0 + cols];
            data.extend_from_slice(src);
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(rows, cols, data, ng, Op::Slice2d { a, r0, c0 }))
    }

    /// First `cols` columns of every row.
    pub fn slice_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        self.slice2d(a, 0, r, 0, cols)
    }

    /// Zero-pad each row on the right to `new_cols`.
    pub fn pad_cols(&mut self, a: Var, new_cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if new_cols < c {
            return Err(Error::InvalidWidth(format!(
                "pad_cols: {new_cols} < current {c}"
            )));
        }
        let mut data = vec![0.0; r * new_cols];
        for i in 0..r {
            data[i * new_cols..i * new_cols + c]
                .copy_from_slice(&self.node(a).data[i * c..(i + 1) * c]);
        }
        let ng = self.node(a).needs_grad;
        Ok(self.push(r, new_cols, data, ng, Op::PadCols { a }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::RejectedInput("concat_rows: empty".into()));
        }
        let c = self.cols(parts[0]);
        let mut rows = 0;
        for &p in parts {
            if self.cols(p) != c {
                return Err(Error::ShapeMismatch("concat_rows: column mismatch".into()));
            }
            rows += self.rows(p);
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(&self.node(p).data);
        }
        let ng = parts.iter().any(|&p| self.node(p).needs_grad);
        Ok(self.push(
            rows,
            c,
            data,
            ng,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::RejectedInput("concat_cols: empty".into()));
        }
        let r = self.rows(parts[0]);
        let mut cols = 0;
        for &p in parts {
            if self.rows(p) != r {
                return Err(Error::ShapeMismatch("concat_cols: row mismatch".into()));
            }
            cols += self.cols(p);
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.cols(p);
                data.extend_from_slice(&self.node(p).data[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.node(p).needs_grad);
        Ok(self.push(
            r,
            cols,
            data,
            ng,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.node(a).data[i * c + j];
            }
        }
        let ng = self.node(a).needs_grad;
        self.push(c, r, data, ng, Op::Transpose { a })
    }

    // ── Matrix products ──

    /// a (M x K) . b (K x P) -> (M x P). Registers 2*M*K*P FLOPs.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (kb, p) = self.shape(b);
        if ka != kb {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {m}x{ka} . {kb}x{p}"
            )));
        }
        self.count_flops(m, ka, p)?;
        let mut data = vec![0.0; m * p];
        mm_nn(&self.node(a).data, &self.node(b).data, m, ka, p, &mut data);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(m, p, data, ng, Op::Matmul { a, b }))
    }

    /// a (M x K) . b^T with b (P x K) -> (M x P). Registers 2*M*K*P FLOPs.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (p, kb) = self.shape(b);
        if ka != kb {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt: {m}x{ka} . ({p}x{kb})^T"
            )));
        }
        self.count_flops(m, ka, p)?;
        let mut data = vec![0.0; m * p];
        mm_nt(&self.node(a).data, &self.node(b).data, m, ka, p, &mut data);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(m, p, data, ng, Op::MatmulNT { a, b }))
    }

    // ── Backward ──

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let g = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.rows * node.cols]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    /// Reverse pass from a scalar loss. Populates node gradients; repeated
    /// calls without clearing accumulate. Use [`Tape::flush_grads`] to move
    /// leaf gradients into the parameter store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::RejectedInput(format!(
                "backward requires a scalar loss, got {r}x{c}"
            )));
        }
        self.accumulate(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            // Compute parent contributions from immutable reads, then apply.
            let mut contribs: Vec<(Var, Vec<f64>)> = Vec::new();
            {
                let node = &self.nodes[i];
                let (rows, cols) = (node.rows, node.cols);
                match &node.op {
                    Op::Leaf => {}
                    Op::Matmul { a, b } => {
                        let an = self.node(*a);
                        let bn = self.node(*b);
                        if an.needs_grad {
                            let mut da = vec![0.0; an.data.len()];
                            mm_nt(&g, &bn.data, rows, cols, an.cols, &mut da);
                            contribs.push((*a, da));
                        }
                        if bn.needs_grad {
                            let mut db = vec![0.0; bn.data.len()];
                            mm_tn(&an.data, &g, an.rows, an.cols, cols, &mut db);
                            contribs.push((*b, db));
                        }
                    }
                    Op::MatmulNT { a, b } => {
                        let an = self.node(*a);
                        let bn = self.node(*b);
                        if an.needs_grad {
                            let mut da = vec![0.0; an.data.len()];
                            mm_nn(&g, &bn.data, rows, cols, an.cols, &mut da);
                            contribs.push((*a, da));
                        }
                        if bn.needs_grad {
                            let mut db = vec![0.0; bn.data.len()];
                            mm_tn(&g, &an.data, rows, cols, an.cols, &mut db);
                            contribs.push((*b, db));
                        }
                    }
                    Op::Add { a, b } => {
                        if self.node(*a).needs_grad {
                            contribs.push((*a, g.clone()));
                        }
                        if self.node(*b).needs_grad {
                            contribs.push((*b, g.clone()));
                        }
                    }
                    Op::Sub { a, b } => {
                        if self.node(*a).needs_grad {
                            contribs.push((*a, g.clone()));
                        }
                        if self.node(*b).needs_grad {
                            contribs.push((*b, g.iter().map(|x| -x).collect()));
                        }
                    }
                    Op::Mul { a, b } => {
                        let an = self.node(*a);
                        let bn = self.node(*b);
                        if an.needs_grad {
                            contribs.push((*a, g.iter().zip(&bn.data).map(|(x, y)| x * y).collect()));
                        }
                        if bn.needs_grad {
                            contribs.push((*b, g.iter().zip(&an.data).map(|(x, y)| x * y).collect()));
                        }
                    }
                    Op::Scale { a, c } => {
                        if self.node(*a).needs_grad {
                            contribs.push((*a, g.iter().map(|x| x * c).collect()));
                        }
                    }
                    Op::AddScalar { a } => {
                        if self.node(*a).needs_grad {
                            contribs.push((*a, g.clone()));
                        }
                    }
                    Op::AddRow { a, b } => {
                        if self.node(*a).needs_grad {
                            contribs.push((*a, g.clone()));
                        }
                        if self.node(*b).needs_grad {
                            let mut db = vec![0.0; cols];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    db[j] += g[i2 * cols + j];
                                }
                            }
                            contribs.push((*b, db));
                        }
                    }
                    Op::MulRow { a, b } => {
                        let an = self.node(*a);
                        let bn = self.node(*b);
                        if an.needs_grad {
                            let mut da = vec![0.0; rows * cols];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    da[i2 * cols + j] = g[i2 * cols + j] * bn.data[j];
                                }
                            }
                            contribs.push((*a, da));
                        }
                        if bn.needs_grad {
                            let mut db = vec![0.0; cols];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    db[j] += g[i2 * cols + j] * an.data[i2 * cols + j];
                                }
                            }
                            contribs.push((*b, db));
                        }
                    }
                    Op::SubCol { a, b } => {
                        if self.node(*a).needs_grad {
                            contribs.push((*a, g.clone()));
                        }
                        if self.node(*b).needs_grad {
                            let mut db = vec![0.0; rows];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    db[i2] -= g[i2 * cols + j];
                                }
                            }
                            contribs.push((*b, db));
                        }
                    }
                    Op::MulCol { a, b } => {
                        let an = self.node(*a);
                        let bn = self.node(*b);
                        if an.needs_grad {
                            let mut da = vec![0.0; rows * cols];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    da[i2 * cols + j] = g[i2 * cols + j] * bn.data[i2];
                                }
                            }
                            contribs.push((*a, da));
                        }
                        if bn.needs_grad {
                            let mut db = vec![0.0; rows];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    db[i2] += g[i2 * cols + j] * an.data[i2 * cols + j];
                                }
                            }
                            contribs.push((*b, db));
                        }
                    }
                    Op::MulScalarVar { a, b } => {
                        let an = self.node(*a);
                        let bn = self.node(*b);
                        if an.needs_grad {
                            let s = bn.data[0];
                            contribs.push((*a, g.iter().map(|x| x * s).collect()));
                        }
                        if bn.needs_grad {
                            let s: f64 = g.iter().zip(&an.data).map(|(x, y)| x * y).sum();
                            contribs.push((*b, vec![s]));
                        }
                    }
                    Op::MeanLastDim { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let d = an.cols as f64;
                            let mut da = vec![0.0; an.rows * an.cols];
                            for i2 in 0..an.rows {
                                for j in 0..an.cols {
                                    da[i2 * an.cols + j] = g[i2] / d;
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                    Op::SumAll { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            contribs.push((*a, vec![g[0]; an.data.len()]));
                        }
                    }
                    Op::Rsqrt { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let da = g
                                .iter()
                                .zip(&node.data)
                                .map(|(gi, y)| -0.5 * y * y * y * gi)
                                .collect();
                            contribs.push((*a, da));
                        }
                    }
                    Op::Gelu { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let da = g
                                .iter()
                                .zip(&an.data)
                                .map(|(gi, &x)| gi * gelu_deriv(x))
                                .collect();
                            contribs.push((*a, da));
                        }
                    }
                    Op::SoftmaxLastDim { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let p = &node.data;
                            let mut da = vec![0.0; rows * cols];
                            for i2 in 0..rows {
                                let prow = &p[i2 * cols..(i2 + 1) * cols];
                                let grow = &g[i2 * cols..(i2 + 1) * cols];
                                let dot: f64 = prow.iter().zip(grow).map(|(x, y)| x * y).sum();
                                for j in 0..cols {
                                    da[i2 * cols + j] = prow[j] * (grow[j] - dot);
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                    Op::LogSoftmaxLastDim { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let y = &node.data;
                            let mut da = vec![0.0; rows * cols];
                            for i2 in 0..rows {
                                let grow = &g[i2 * cols..(i2 + 1) * cols];
                                let gsum: f64 = grow.iter().sum();
                                for j in 0..cols {
                                    da[i2 * cols + j] = grow[j] - y[i2 * cols + j].exp() * gsum;
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                    Op::GatherRows { a, idx } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let mut da = vec![0.0; an.rows * an.cols];
                            for (r2, &src) in idx.iter().enumerate() {
                                for j in 0..cols {
                                    da[src * cols + j] += g[r2 * cols + j];
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                    Op::Slice2d { a, r0, c0 } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let mut da = vec![0.0; an.rows * an.cols];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    da[(r0 + i2) * an.cols + c0 + j] = g[i2 * cols + j];
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                    Op::PadCols { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let mut da = vec![0.0; an.rows * an.cols];
                            for i2 in 0..an.rows {
                                for j in 0..an.cols {
                                    da[i2 * an.cols + j] = g[i2 * cols + j];
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                    Op::ConcatRows { parts } => {
                        let mut r2 = 0;
                        for &p in parts {
                            let pn = self.node(p);
                            if pn.needs_grad {
                                let da = g[r2 * cols..(r2 + pn.rows) * cols].to_vec();
                                contribs.push((p, da));
                            }
                            r2 += pn.rows;
                        }
                    }
                    Op::ConcatCols { parts } => {
                        let mut c2 = 0;
                        for &p in parts {
                            let pn = self.node(p);
                            if pn.needs_grad {
                                let mut da = Vec::with_capacity(pn.rows * pn.cols);
                                for i2 in 0..rows {
                                    da.extend_from_slice(
                                        &g[i2 * cols + c2..i2 * cols + c2 + pn.cols],
                                    );
                                }
                                contribs.push((p, da));
                            }
                            c2 += pn.cols;
                        }
                    }
                    Op::Transpose { a } => {
                        let an = self.node(*a);
                        if an.needs_grad {
                            let mut da = vec![0.0; an.rows * an.cols];
                            for i2 in 0..rows {
                                for j in 0..cols {
                                    da[j * an.cols + i2] = g[i2 * cols + j];
                                }
                            }
                            contribs.push((*a, da));
                        }
                    }
                }
            }
            for (v, delta) in contribs {
                self.accumulate(v, &delta);
            }
        }
        Ok(())
    }

    /// Accumulate bound-parameter leaf gradients into the store.
    pub fn flush_grads(&self, store: &mut ParamStore) {
        for (v, id) in &self.bindings {
            if let Some(g) = self.grad(*v) {
                let p = store.get_mut(*id);
                for (pg, gi) in p.grad.iter_mut().zip(g) {
                    *pg += gi;
                }
            }
        }
    }
}

// ─── Shared numeric helpers used outside the tape ───────────────────────────

/// L2 norm of a slice.
pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two equal-length slices.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (l2_norm(a) * l2_norm(b))
}
