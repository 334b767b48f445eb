//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] and enter the graph as leaves on first use, so a single
//! parameter referenced from several places (shared cross-modal attention,
//! for instance) accumulates gradient from every use.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.values.iter_mut()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    LnFloor(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ShiftRows(Var, isize),
    RowDot(Var, Var),
    SumRows(Var),
    SumAll(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

fn add_into(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &delta,
        None => *slot = Some(delta),
    }
}

impl<'a> Graph<'a> {
    /// Evaluation graph: dropout is the identity.
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            dropout_rng: None,
        }
    }

    /// Training graph: dropout masks are drawn from `rng`.
    pub fn training(store: &'a ParamStore, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(store);
        g.dropout_rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.shape(v).0
    }

    pub fn cols(&self, v: Var) -> usize {
        self.shape(v).1
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// A leaf that does not receive gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradient but is not a stored parameter.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Leaf, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().as_standard_layout().into_owned();
        let rg = self.needs(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `a + b` with the 1×m row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.rows(b), 1);
        let value = self.value(a) + self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::AddRow(a, b), rg)
    }

    /// `a ⊙ b` with the 1×m row `b` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.rows(b), 1);
        let value = self.value(a) * self.value(b);
        let rg = self.needs(&[a, b]);
        self.push(value, Op::MulRow(a, b), rg)
    }

    /// `a ⊙ c` with the n×1 column `c` broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        debug_assert_eq!(self.cols(c), 1);
        let value = self.value(a) * self.value(c);
        let rg = self.needs(&[a, c]);
        self.push(value, Op::MulCol(a, c), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let ones = self.constant(Array2::ones((r, c)));
        self.sub(ones, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.needs(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// `ln(max(a, floor))`.
    pub fn ln_floor(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor).ln());
        let rg = self.needs(&[a]);
        self.push(value, Op::LnFloor(a, floor), rg)
    }

    /// Row-wise softmax. Disallowed entries get weight exactly zero; a row
    /// with no allowed entry is an error.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Array2<bool>>) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        if let Some(m) = mask {
            if m.dim() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "mask {:?} does not match scores {:?}",
                    m.dim(),
                    (rows, cols)
                )));
            }
        }
        let mut out = Array2::zeros((rows, cols));
        for r in 0..rows {
            let allowed = |c: usize| mask.is_none_or(|m| m[[r, c]]);
            let max = (0..cols)
                .filter(|&c| allowed(c))
                .map(|c| x[[r, c]])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: r });
            }
            let mut sum = 0.0;
            for c in (0..cols).filter(|&c| allowed(c)) {
                let e = (x[[r, c]] - max).exp();
                out[[r, c]] = e;
                sum += e;
            }
            out.row_mut(r).mapv_inplace(|e| e / sum);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Per-row standardisation to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            Zip::from(xhat.row_mut(r))
                .and(row)
                .for_each(|o, &v| *o = (v - mean) * is);
        }
        let rg = self.needs(&[a]);
        self.push(
            xhat.clone(),
            Op::LayerNorm {
                x: a,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.rows(parts[0]);
        let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut out = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat_cols: row count mismatch");
            out.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let rg = self.needs(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.needs(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// `out[t] = a[t + offset]`, zero where `t + offset` falls outside.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let mut out = Array2::zeros((rows, cols));
        for t in 0..rows {
            let src = t as isize + offset;
            if src >= 0 && (src as usize) < rows {
                out.row_mut(t).assign(&x.row(src as usize));
            }
        }
        let rg = self.needs(&[a]);
        self.push(out, Op::ShiftRows(a, offset), rg)
    }

    /// Dot product of matching rows: n×m, n×m → n×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.value(a) * self.value(b);
        let value = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.needs(&[a, b]);
        self.push(value, Op::RowDot(a, b), rg)
    }

    /// Column sums as a 1×m row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.needs(&[a]);
        self.push(value, Op::SumRows(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.rows(a) as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    /// Inverted dropout; identity on an evaluation graph or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        let (rows, cols) = self.shape(a);
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// `x W + b` for a weight and a 1×out bias row.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            let want = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    // Keep gradients of leaves for the caller; interior ones are spent.
                    grads[i] = Some(gy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if want(a) {
                        let d = gy.dot(&self.value(*b).t());
                        add_into(&mut grads[a.0], d);
                    }
                    if want(b) {
                        let d = self.value(*a).t().dot(&gy);
                        add_into(&mut grads[b.0], d);
                    }
                }
                Op::Transpose(a) => add_into(&mut grads[a.0], gy.t().as_standard_layout().into_owned()),
                Op::Add(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], gy.clone());
                    }
                    if want(b) {
                        add_into(&mut grads[b.0], gy.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], gy.clone());
                    }
                    if want(b) {
                        add_into(&mut grads[b.0], -&gy);
                    }
                }
                Op::Mul(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], &gy * self.value(*b));
                    }
                    if want(b) {
                        add_into(&mut grads[b.0], &gy * self.value(*a));
                    }
                }
                Op::AddRow(a, b) => {
                    if want(b) {
                        add_into(&mut grads[b.0], gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if want(a) {
                        add_into(&mut grads[a.0], gy);
                    }
                }
                Op::MulRow(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], &gy * self.value(*b));
                    }
                    if want(b) {
                        let d = (&gy * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        add_into(&mut grads[b.0], d);
                    }
                }
                Op::MulCol(a, c) => {
                    if want(a) {
                        add_into(&mut grads[a.0], &gy * self.value(*c));
                    }
                    if want(c) {
                        let d = (&gy * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        add_into(&mut grads[c.0], d);
                    }
                }
                Op::Scale(a, k) => add_into(&mut grads[a.0], gy * *k),
                Op::Sigmoid(a) => {
                    let mut d = gy;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    add_into(&mut grads[a.0], d);
                }
                Op::Relu(a) => {
                    let mut d = gy;
                    Zip::from(&mut d).and(&node.value).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    add_into(&mut grads[a.0], d);
                }
                Op::LnFloor(a, floor) => {
                    let mut d = gy;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|g, &x| {
                        *g = if x > *floor { *g / x } else { 0.0 };
                    });
                    add_into(&mut grads[a.0], d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dots = (&gy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = y * &(&gy - &dots);
                    add_into(&mut grads[a.0], d);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let cols = xhat.ncols() as f64;
                    let mut d = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let gr = gy.row(r);
                        let hr = xhat.row(r);
                        let mean_g = gr.sum() / cols;
                        let mean_gh = gr.dot(&hr) / cols;
                        Zip::from(d.row_mut(r))
                            .and(gr)
                            .and(hr)
                            .for_each(|o, &g, &h| *o = inv_std[r] * (g - mean_g - h * mean_gh));
                    }
                    add_into(&mut grads[x.0], d);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.cols(*p);
                        if want(p) {
                            add_into(&mut grads[p.0], gy.slice(s![.., at..at + w]).to_owned());
                        }
                        at += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    add_into(&mut grads[a.0], d);
                }
                Op::ShiftRows(a, offset) => {
                    let rows = gy.nrows();
                    let mut d = Array2::zeros(gy.dim());
                    for t in 0..rows {
                        let src = t as isize + offset;
                        if src >= 0 && (src as usize) < rows {
                            let mut row = d.row_mut(src as usize);
                            row += &gy.row(t);
                        }
                    }
                    add_into(&mut grads[a.0], d);
                }
                Op::RowDot(a, b) => {
                    if want(a) {
                        add_into(&mut grads[a.0], self.value(*b) * &gy);
                    }
                    if want(b) {
                        add_into(&mut grads[b.0], self.value(*a) * &gy);
                    }
                }
                Op::SumRows(a) => {
                    let d = Array2::from_shape_fn(self.shape(*a), |(_, c)| gy[[0, c]]);
                    add_into(&mut grads[a.0], d);
                }
                Op::SumAll(a) => {
                    add_into(&mut grads[a.0], Array2::from_elem(self.shape(*a), gy[[0, 0]]));
                }
            }
        }
        Gradients { grads }
    }

    /// Gradient for every stored parameter, zero where the parameter was not used.
    pub fn param_grads(&self, loss: Var) -> Vec<Array2<f64>> {
        let grads = self.backward(loss);
        self.store
            .ids()
            .map(|id| match self.param_vars[id.0].and_then(|v| grads.get(v)) {
                Some(g) => g.clone(),
                None => Array2::zeros(self.store.get(id).dim()),
            })
            .collect()
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
