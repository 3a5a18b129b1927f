//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node accumulates gradients into the
//! [`ParamStore`] the tape was built against.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameters, their accumulated gradients and a mutation counter.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<u8>,
    values: Vec<Rc<Mat>>,
    grads: Vec<Mat>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under `name` in optimiser group `group`.
    pub fn add(&mut self, name: impl Into<String>, group: u8, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.groups.push(group);
        self.grads.push(Mat::zeros(value.dim()));
        self.values.push(Rc::new(value));
        self.version += 1;
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> u8 {
        self.groups[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to a parameter; bumps the version.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        self.version += 1;
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub(crate) fn grads_mut(&mut self) -> &mut [Mat] {
        &mut self.grads
    }

    pub fn zero_grad_of(&mut self, id: ParamId) {
        self.grads[id.0].fill(0.0);
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Mat) {
        self.grads[id.0] += g;
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// `(name, tensor)` pairs in registration order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| &**v))
    }

    /// Overwrite values from matching names; every parameter must be present
    /// with its exact shape.
    pub fn load<'a>(
        &mut self,
        entries: impl IntoIterator<Item = (&'a str, &'a Mat)>,
    ) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, m) in entries {
            let id = self
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            if self.values[id.0].dim() != m.dim() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} vs {:?}",
                    m.dim(),
                    self.values[id.0].dim()
                )));
            }
            *self.value_mut(id) = m.clone();
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!(
                "missing tensor {}",
                self.names[i]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    LnFloor(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MaskedLogSoftmax {
        x: Var,
        mask: Rc<Mat>,
        probs: Mat,
    },
    NegEntropy {
        logp: Var,
        probs: Mat,
    },
    MulConst(Var, Rc<Mat>),
    SumAll(Var),
    Mean(Var),
    RowSum(Var),
    Gather(Var, Rc<Vec<usize>>),
    Pick(Var, Rc<Vec<usize>>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        mask: Rc<Mat>,
        weights: Mat,
    },
}

#[derive(Debug)]
struct Node {
    value: Rc<Mat>,
    op: Op,
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    version: u64,
    nonfinite: Option<&'static str>,
}

impl Tape {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            version: store.version(),
            nonfinite: None,
        }
    }

    fn push(&mut self, value: Mat, op: Op, name: &'static str) -> Var {
        if self.nonfinite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.nonfinite = Some(name);
        }
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Error if any recorded value is NaN or infinite.
    pub fn check(&self) -> Result<()> {
        match self.nonfinite {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Rc::clone(&store.values[id.0]),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
        Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(Self::shape_err("matmul", x.dim(), y.dim()));
        }
        let v = x.dot(y);
        Ok(self.push(v, Op::MatMul(a, b), "matmul"))
    }

    /// `x·w + b` with the bias row `b` broadcast over the rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ncols() != wv.nrows() {
            return Err(Self::shape_err("affine", xv.dim(), wv.dim()));
        }
        if bv.nrows() != 1 || bv.ncols() != wv.ncols() {
            return Err(Self::shape_err("affine bias", wv.dim(), bv.dim()));
        }
        let mut v = bv
            .broadcast((xv.nrows(), wv.ncols()))
            .expect("bias broadcast")
            .to_owned();
        ndarray::linalg::general_mat_mul(1.0, xv, wv, 1.0, &mut v);
        Ok(self.push(v, Op::Affine(x, w, b), "affine"))
    }

    /// `a + row` with `row` (1×m) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(Self::shape_err("add_row", x.dim(), r.dim()));
        }
        let v = x + r;
        Ok(self.push(v, Op::AddRow(a, row), "add_row"))
    }

    fn same(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a).dim(), self.value(b).dim());
        if x != y {
            return Err(Self::shape_err(what, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b), "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a), "add_scalar")
    }

    /// `1 − a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a), "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a), "square")
    }

    /// `ln(max(a, floor))`; no gradient flows where the floor is active.
    pub fn ln_floor(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(floor).ln());
        self.push(v, Op::LnFloor(a, floor), "ln")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::ShapeMismatch(format!("concat: {e}")))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), "concat"))
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let x = self.value(a);
        if lo > hi || hi > x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "slice {lo}..{hi} of {} columns",
                x.ncols()
            )));
        }
        let v = x.slice(s![.., lo..hi]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, lo), "slice"))
    }

    /// Row-wise log-softmax restricted to entries where `mask` is 1.
    /// Masked entries are set to 0 and receive no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: Rc<Mat>) -> Result<Var> {
        let x = self.value(a);
        if mask.dim() != x.dim() {
            return Err(Self::shape_err("log_softmax mask", x.dim(), mask.dim()));
        }
        let (n, m) = x.dim();
        let xs = x.as_standard_layout();
        let ms = mask.as_standard_layout();
        let (xs, ms) = (
            xs.as_slice().expect("standard layout"),
            ms.as_slice().expect("standard layout"),
        );
        let mut out = vec![0.0; n * m];
        let mut probs = vec![0.0; n * m];
        for r in 0..n {
            let span = r * m..(r + 1) * m;
            let (xr, mr) = (&xs[span.clone()], &ms[span.clone()]);
            let (pr, or) = (&mut probs[span.clone()], &mut out[span]);
            let dense = mr.iter().all(|&k| k > 0.0);
            let max = if dense {
                xr.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
            } else {
                xr.iter()
                    .zip(mr)
                    .filter(|(_, &k)| k > 0.0)
                    .fold(f64::NEG_INFINITY, |a, (&v, _)| a.max(v))
            };
            if max == f64::NEG_INFINITY {
                return Err(Error::AllMasked);
            }
            let mut sum = 0.0;
            if dense {
                for (p, &v) in pr.iter_mut().zip(xr) {
                    *p = (v - max).exp();
                    sum += *p;
                }
            } else {
                for ((p, &v), &k) in pr.iter_mut().zip(xr).zip(mr) {
                    if k > 0.0 {
                        *p = (v - max).exp();
                        sum += *p;
                    }
                }
            }
            let shift = max + sum.ln();
            let inv = 1.0 / sum;
            for (((o, p), &v), &k) in or.iter_mut().zip(pr.iter_mut()).zip(xr).zip(mr) {
                if k > 0.0 {
                    *o = v - shift;
                    *p *= inv;
                }
            }
        }
        let out = Mat::from_shape_vec((n, m), out).expect("shape");
        let probs = Mat::from_shape_vec((n, m), probs).expect("shape");
        Ok(self.push(
            out,
            Op::MaskedLogSoftmax { x: a, mask, probs },
            "log_softmax",
        ))
    }

    /// Row-wise `Σ exp(l)·l` of log-probabilities `l`, the negative entropy:
    /// `n×m → n×1`. Masked zeros from a log-softmax contribute nothing.
    pub fn neg_entropy(&mut self, logp: Var) -> Var {
        let l = self.value(logp);
        let probs = match &self.nodes[logp.0].op {
            Op::MaskedLogSoftmax { probs, .. } => probs.clone(),
            _ => l.mapv(f64::exp),
        };
        let mut v = Mat::zeros((l.nrows(), 1));
        for (r, (pr, lr)) in probs.outer_iter().zip(l.outer_iter()).enumerate() {
            v[[r, 0]] = pr.iter().zip(lr).map(|(&p, &l)| p * l).sum();
        }
        self.push(v, Op::NegEntropy { logp, probs }, "neg_entropy")
    }

    pub fn mul_const(&mut self, a: Var, c: Rc<Mat>) -> Result<Var> {
        let x = self.value(a);
        if c.dim() != x.dim() {
            return Err(Self::shape_err("mul_const", x.dim(), c.dim()));
        }
        let v = x * &*c;
        Ok(self.push(v, Op::MulConst(a, c), "mul_const"))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a), "mean")
    }

    /// Sum over columns: `n×m → n×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSum(a), "row_sum")
    }

    /// Rows `idx` of `table` (an embedding lookup).
    pub fn gather(&mut self, table: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.nrows()) {
            return Err(Error::ShapeMismatch(format!("row {bad} of {}", t.nrows())));
        }
        let v = t.select(Axis(0), &idx);
        Ok(self.push(v, Op::Gather(table, idx), "gather"))
    }

    /// Entry `idx[r]` of each row `r`: `n×m → n×1`.
    pub fn pick(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.nrows() || idx.iter().any(|&c| c >= x.ncols()) {
            return Err(Error::ShapeMismatch(format!(
                "pick {} columns from {:?}",
                idx.len(),
                x.dim()
            )));
        }
        let v = Mat::from_shape_fn((x.nrows(), 1), |(r, _)| x[[r, idx[r]]]);
        Ok(self.push(v, Op::Pick(a, idx), "pick"))
    }

    /// Scaled dot-product attention with one query per batch row.
    ///
    /// `q` is `B×C`, `k` and `v` are `(B·T)×C` with the `T` keys of row `b`
    /// stored contiguously, and `mask` is `B×T`. A row whose keys are all
    /// masked produces a zero output.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Rc<Mat>) -> Result<Var> {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (b, c) = qm.dim();
        let t = mask.ncols();
        if t == 0 {
            return Err(Error::InvalidArgument(
                "attention needs at least one key".into(),
            ));
        }
        if mask.nrows() != b || km.dim() != (b * t, c) || vm.nrows() != b * t {
            return Err(Error::ShapeMismatch(format!(
                "attention q {:?} k {:?} v {:?} mask {:?}",
                qm.dim(),
                km.dim(),
                vm.dim(),
                mask.dim()
            )));
        }
        let scale = 1.0 / (c as f64).sqrt();
        let mut weights = Mat::zeros((b, t));
        let mut out = Mat::zeros((b, vm.ncols()));
        for i in 0..b {
            let keys = km.slice(s![i * t..(i + 1) * t, ..]);
            let scores = keys.dot(&qm.row(i)) * scale;
            let live = mask.row(i).iter().map(|&m| m > 0.0).collect::<Vec<_>>();
            let Some(lse) = masked_logsumexp(scores.iter().copied(), live.iter().copied()) else {
                continue;
            };
            for j in 0..t {
                if live[j] {
                    weights[[i, j]] = (scores[j] - lse).exp();
                }
            }
            let vals = vm.slice(s![i * t..(i + 1) * t, ..]);
            out.row_mut(i).assign(&weights.row(i).dot(&vals));
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                mask,
                weights,
            },
            "attention",
        ))
    }

    /// Attention weights recorded by an [`attention`](Self::attention) node.
    pub fn attention_weights(&self, node: Var) -> Option<&Mat> {
        match &self.nodes[node.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Accumulate `d root / d param` into `store`. `root` must be 1×1.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        if store.version() != self.version {
            return Err(Error::StaleGradients {
                computed: self.version,
                current: store.version(),
            });
        }
        self.check()?;
        if self.value(root).dim() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward from {:?}",
                self.value(root).dim()
            )));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Mat| match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    store.grads[id.0] += &g;
                }
                Op::MatMul(a, b) => {
                    send(*a, g.dot(&self.value(*b).t()));
                    send(*b, self.value(*a).t().dot(&g));
                }
                Op::Affine(x, w, b) => {
                    send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*w, self.value(*x).t().dot(&g));
                    send(*x, g.dot(&self.value(*w).t()));
                }
                Op::AddRow(a, r) => {
                    send(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*a, g);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, -&g);
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::Scale(a, c) => send(*a, g * *c),
                Op::AddScalar(a) => send(*a, g),
                Op::Tanh(a) => send(*a, &g * &node.value.mapv(|y| 1.0 - y * y)),
                Op::Sigmoid(a) => send(*a, &g * &node.value.mapv(|y| y * (1.0 - y))),
                Op::Exp(a) => send(*a, &g * &*node.value),
                Op::Square(a) => send(*a, &g * &(self.value(*a) * 2.0)),
                Op::LnFloor(a, floor) => {
                    let x = self.value(*a);
                    let mut d = g;
                    d.zip_mut_with(x, |d, &x| *d = if x >= *floor { *d / x } else { 0.0 });
                    send(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        send(p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::SliceCols(a, lo) => {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *lo..*lo + g.ncols()]).assign(&g);
                    send(*a, d);
                }
                Op::MaskedLogSoftmax { x, mask, probs } => {
                    // d x_j = g_j − p_j Σ_k g_k over the unmasked support
                    let (n, m) = probs.dim();
                    let gs = g.as_standard_layout();
                    let ms = mask.as_standard_layout();
                    let (ps, gs, ms) = (
                        probs.as_slice().expect("standard layout"),
                        gs.as_slice().expect("standard layout"),
                        ms.as_slice().expect("standard layout"),
                    );
                    let mut d = vec![0.0; n * m];
                    for r in 0..n {
                        let span = r * m..(r + 1) * m;
                        let (pr, gr, mr) =
                            (&ps[span.clone()], &gs[span.clone()], &ms[span.clone()]);
                        let gsum: f64 = gr
                            .iter()
                            .zip(mr)
                            .filter(|(_, &k)| k > 0.0)
                            .map(|(&g, _)| g)
                            .sum();
                        for (((o, &p), &g), &k) in d[span].iter_mut().zip(pr).zip(gr).zip(mr) {
                            if k > 0.0 {
                                *o = g - p * gsum;
                            }
                        }
                    }
                    send(*x, Mat::from_shape_vec((n, m), d).expect("shape"));
                }
                Op::NegEntropy { logp, probs } => {
                    // d/dl [e^l · l] = e^l (1 + l)
                    let l = self.value(*logp);
                    let mut d = probs.clone();
                    ndarray::Zip::from(&mut d)
                        .and(l)
                        .and_broadcast(&g)
                        .for_each(|d, &l, &g| *d *= (1.0 + l) * g);
                    send(*logp, d);
                }
                Op::MulConst(a, c) => send(*a, g * &**c),
                Op::SumAll(a) => send(*a, Mat::from_elem(self.value(*a).dim(), g[[0, 0]])),
                Op::Mean(a) => {
                    let x = self.value(*a);
                    send(*a, Mat::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
                }
                Op::RowSum(a) => {
                    let x = self.value(*a);
                    send(
                        *a,
                        g.broadcast(x.dim()).expect("column broadcast").to_owned(),
                    );
                }
                Op::Gather(table, idx) => {
                    let mut d = Mat::zeros(self.value(*table).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(r);
                    }
                    send(*table, d);
                }
                Op::Pick(a, idx) => {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    for (r, &c) in idx.iter().enumerate() {
                        d[[r, c]] = g[[r, 0]];
                    }
                    send(*a, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    mask,
                    weights,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let (b, c) = qm.dim();
                    let t = mask.ncols();
                    let scale = 1.0 / (c as f64).sqrt();
                    let mut dq = Mat::zeros(qm.dim());
                    let mut dk = Mat::zeros(km.dim());
                    let mut dv = Mat::zeros(vm.dim());
                    for i in 0..b {
                        let w = weights.row(i);
                        let go = g.row(i);
                        let mut dw = vec![0.0; t];
                        for j in 0..t {
                            if w[j] == 0.0 {
                                continue;
                            }
                            let r = i * t + j;
                            dv.row_mut(r).scaled_add(w[j], &go);
                            dw[j] = go.dot(&vm.row(r));
                        }
                        let avg: f64 = (0..t).map(|j| w[j] * dw[j]).sum();
                        for j in 0..t {
                            if w[j] == 0.0 {
                                continue;
                            }
                            let ds = w[j] * (dw[j] - avg) * scale;
                            let r = i * t + j;
                            dq.row_mut(i).scaled_add(ds, &km.row(r));
                            dk.row_mut(r).scaled_add(ds, &qm.row(i));
                        }
                    }
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn masked_logsumexp(
    xs: impl Iterator<Item = f64> + Clone,
    live: impl Iterator<Item = bool> + Clone,
) -> Option<f64> {
    let max = xs
        .clone()
        .zip(live.clone())
        .filter(|(_, l)| *l)
        .map(|(x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let sum: f64 = xs
        .zip(live)
        .filter(|(_, l)| *l)
        .map(|(x, _)| (x - max).exp())
        .sum();
    Some(max + sum.ln())
}

/// Softmax of a logit vector, optionally restricted to `mask`.
pub fn softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} logits, {} mask entries",
                logits.len(),
                m.len()
            )));
        }
    }
    let lse = masked_logsumexp(logits.iter().copied(), (0..logits.len()).map(live))
        .ok_or(Error::AllMasked)?;
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if live(i) { (x - lse).exp() } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.0, 2.0, 3.0], None).unwrap();
        for (a, b) in p
            .iter()
            .zip([0.09003057317038046, 0.24472847105479767, 0.6652409557748219])
        {
            assert!((a - b).abs() < 1e-15);
        }
        let u = softmax(&[0.7; 4], None).unwrap();
        assert!(u.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let one = softmax(&[5.0, -1.0, 2.0], Some(&[false, true, false])).unwrap();
        assert_eq!(one, vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            softmax(&[1.0, 2.0], Some(&[false, false])),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn linear_map_gradient_is_outer_product() {
        let mut store = ParamStore::new();
        let w = store.add("w", 0, array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[0.5, -1.0, 2.0]]);
        let wv = tape.param(&store, w);
        let y = tape.matmul(x, wv).unwrap();
        let g = Rc::new(array![[3.0, -2.0]]);
        let weighted = tape.mul_const(y, g).unwrap();
        let loss = tape.sum_all(weighted);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(
            store.grad(w),
            &array![[1.5, -1.0], [-3.0, 2.0], [6.0, -4.0]]
        );
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut store = ParamStore::new();
        let z = store.add("z", 0, array![[0.2, -0.3, 1.1, 0.0]]);
        let mut tape = Tape::new(&store);
        let zv = tape.param(&store, z);
        let lp = tape
            .masked_log_softmax(zv, Rc::new(Mat::ones((1, 4))))
            .unwrap();
        let onehot = Rc::new(array![[0.0, 0.0, 1.0, 0.0]]);
        let picked = tape.mul_const(lp, onehot.clone()).unwrap();
        let s = tape.sum_all(picked);
        let nll = tape.scale(s, -1.0);
        tape.backward(nll, &mut store).unwrap();
        let p = softmax(&[0.2, -0.3, 1.1, 0.0], None).unwrap();
        for c in 0..4 {
            assert!((store.grad(z)[[0, c]] - (p[c] - onehot[[0, c]])).abs() < 1e-15);
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", 0, array![[1.0]]);
        let mut tape = Tape::new(&store);
        let wv = tape.param(&store, w);
        let loss = tape.sum_all(wv);
        store.value_mut(w)[[0, 0]] = 2.0;
        assert!(matches!(
            tape.backward(loss, &mut store),
            Err(Error::StaleGradients { .. })
        ));
    }

    #[test]
    fn nonfinite_values_are_flagged() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[1000.0]]);
        tape.exp(x);
        assert!(matches!(tape.check(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn attention_singleton_and_empty() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let q = tape.constant(array![[1.0, 0.0], [0.3, 0.3]]);
        let k = tape.constant(array![[2.0, 1.0], [0.0, 1.0]]);
        let v = tape.constant(array![[4.0, 5.0], [7.0, 8.0]]);
        let mask = Rc::new(array![[1.0], [0.0]]);
        let out = tape.attention(q, k, v, mask).unwrap();
        assert_eq!(tape.value(out), &array![[4.0, 5.0], [0.0, 0.0]]);
        let none = Rc::new(Mat::zeros((2, 0)));
        assert!(tape.attention(q, k, v, none).is_err());
    }
}
