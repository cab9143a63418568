//! Reverse-mode differentiation over a recorded computation.
//!
//! A [`Graph`] records every intermediate value produced while a model runs
//! forward. Parameters are read straight from the borrowed [`ParamStore`];
//! only parameters marked trainable receive gradients. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! returns a [`Gradients`] buffer aligned with the store.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Embed(ParamId, usize),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Dot(Var, Var),
    Sum(Var),
    Pick(Var, usize),
}

struct Node {
    op: Op,
    // `None` for parameters: their value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    trainable: Vec<bool>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'s> Graph<'s> {
    /// Every parameter in the store is trainable.
    pub fn new(store: &'s ParamStore) -> Self {
        Self::with_trainable(store, |_| true)
    }

    /// Only parameters whose name satisfies `filter` receive gradients.
    pub fn with_trainable(store: &'s ParamStore, filter: impl Fn(&str) -> bool) -> Self {
        let trainable = store.ids().map(|id| filter(store.name(id))).collect();
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; store.len()],
            trainable,
            dropout: None,
        }
    }

    /// Inference graph: nothing is trainable.
    pub fn frozen(store: &'s ParamStore) -> Self {
        Self::with_trainable(store, |_| false)
    }

    /// Enables inverted dropout at `rate` for every [`Graph::dropout`] call.
    pub fn enable_dropout(&mut self, rate: f64, rng: ChaCha8Rng) {
        if rate > 0.0 {
            self.dropout = Some((rate, rng));
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn constant_vec(&mut self, values: Vec<f64>) -> Var {
        self.constant(Tensor::vector(values))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(Tensor::zeros(n, 1))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: self.trainable[id.0],
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Row `row` of a parameter matrix, as a column vector.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let value = Tensor::vector(self.store.get(table).row(row).to_vec());
        let rg = self.trainable[table.0];
        self.push(Op::Embed(table, row), value, rg)
    }

    /// `w x` for a matrix `w` and vector `x`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let out = tensor::matvec(self.value(w), self.data(x));
        let rg = self.rg(&[w, x]);
        self.push(Op::MatVec(w, x), Tensor::vector(out), rg)
    }

    /// `wᵀ x` for a matrix `w` and vector `x`.
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Var {
        let out = tensor::matvec_t(self.value(w), self.data(x));
        let rg = self.rg(&[w, x]);
        self.push(Op::MatTVec(w, x), Tensor::vector(out), rg)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b);
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Add(a, b), out, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Sub(a, b), out, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(Op::Mul(a, b), out, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.map(a, |x| x * factor);
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, factor), out, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let rg = self.rg(&[a]);
        self.push(Op::Sigmoid(a), out, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(Op::Tanh(a), out, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), out, rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::abs);
        let rg = self.rg(&[a]);
        self.push(Op::Abs(a), out, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.data(*p));
        }
        let rg = self.rg(parts);
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data), rg)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let data = self.data(a)[start..start + len].to_vec();
        let rg = self.rg(&[a]);
        self.push(Op::Slice(a, start), Tensor::vector(data), rg)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of zero rows");
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let d = self.data(*r);
            assert_eq!(d.len(), cols, "stack rows differ in length");
            data.extend_from_slice(d);
        }
        let rg = self.rg(rows);
        self.push(Op::Stack(rows.to_vec()), Tensor::from_vec(rows.len(), cols, data), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = Tensor::vector(tensor::softmax(self.data(a)));
        let rg = self.rg(&[a]);
        self.push(Op::Softmax(a), out, rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = Tensor::vector(tensor::log_softmax(self.data(a)));
        let rg = self.rg(&[a]);
        self.push(Op::LogSoftmax(a), out, rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v: f64 = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        let rg = self.rg(&[a, b]);
        self.push(Op::Dot(a, b), Tensor::scalar(v), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.data(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(v), rg)
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        let v = self.data(a)[index];
        let rg = self.rg(&[a]);
        self.push(Op::Pick(a, index), Tensor::scalar(v), rg)
    }

    /// Sum of several scalars (or equally shaped tensors).
    pub fn add_all(&mut self, terms: &[Var]) -> Option<Var> {
        let mut iter = terms.iter().copied();
        let first = iter.next()?;
        Some(iter.fold(first, |acc, t| self.add(acc, t)))
    }

    /// Affine map `w x + b`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: Var) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let wx = self.matvec(w, x);
        self.add(wx, b)
    }

    /// Inverted dropout; identity unless enabled on this graph.
    pub fn dropout(&mut self, a: Var) -> Var {
        if self.dropout.is_none() {
            return a;
        }
        let n = self.value(a).len();
        let (rate, rng) = self.dropout.as_mut().expect("checked above");
        let keep = 1.0 - *rate;
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = self.constant_vec(mask);
        self.mul(a, mask)
    }

    /// Gradients of the scalar `output` with respect to every trainable parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.nodes[output.0].requires_grad {
            return Err(Error::Disconnected);
        }
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new(self.store.len());

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let shape = self.store.get(*id).shape();
                    out.accumulate(*id, shape, |t| t.add_assign(&g));
                }
                Op::Embed(id, row) => {
                    let shape = self.store.get(*id).shape();
                    out.accumulate(*id, shape, |t| {
                        for (a, b) in t.row_mut(*row).iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    });
                }
                Op::MatVec(w, x) => {
                    let wt = self.value(*w);
                    let xt = self.data(*x);
                    if self.requires_grad(*w) {
                        let mut gw = Tensor::zeros(wt.rows(), wt.cols());
                        for (r, gr) in g.data().iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (a, xv) in gw.row_mut(r).iter_mut().zip(xt) {
                                *a = gr * xv;
                            }
                        }
                        accumulate(&mut grads, *w, gw);
                    }
                    if self.requires_grad(*x) {
                        let gx = tensor::matvec_t(wt, g.data());
                        accumulate(&mut grads, *x, Tensor::vector(gx));
                    }
                }
                Op::MatTVec(w, x) => {
                    let wt = self.value(*w);
                    let xt = self.data(*x);
                    if self.requires_grad(*w) {
                        let mut gw = Tensor::zeros(wt.rows(), wt.cols());
                        for (r, xv) in xt.iter().enumerate() {
                            for (a, gv) in gw.row_mut(r).iter_mut().zip(g.data()) {
                                *a = xv * gv;
                            }
                        }
                        accumulate(&mut grads, *w, gw);
                    }
                    if self.requires_grad(*x) {
                        let gx = tensor::matvec(wt, g.data());
                        accumulate(&mut grads, *x, Tensor::vector(gx));
                    }
                }
                Op::Add(a, b) => {
                    self.pass(&mut grads, *a, || g.clone());
                    self.pass(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.pass(&mut grads, *a, || g.clone());
                    self.pass(&mut grads, *b, || {
                        let mut n = g.clone();
                        n.scale(-1.0);
                        n
                    });
                }
                Op::Mul(a, b) => {
                    self.pass(&mut grads, *a, || elementwise(&g, self.value(*b), |g, y| g * y));
                    self.pass(&mut grads, *b, || elementwise(&g, self.value(*a), |g, x| g * x));
                }
                Op::Scale(a, f) => {
                    self.pass(&mut grads, *a, || {
                        let mut n = g.clone();
                        n.scale(*f);
                        n
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    self.pass(&mut grads, *a, || elementwise(&g, y, |g, y| g * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    self.pass(&mut grads, *a, || elementwise(&g, y, |g, y| g * (1.0 - y * y)));
                }
                Op::Relu(a) => {
                    self.pass(&mut grads, *a, || {
                        elementwise(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })
                    });
                }
                Op::Abs(a) => {
                    self.pass(&mut grads, *a, || {
                        elementwise(&g, self.value(*a), |g, x| {
                            if x > 0.0 {
                                g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let start = offset;
                        self.pass(&mut grads, *p, || {
                            Tensor::vector(g.data()[start..start + n].to_vec())
                        });
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    self.pass(&mut grads, *a, || {
                        let mut full = Tensor::zeros(self.value(*a).len(), 1);
                        full.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                        full
                    });
                }
                Op::Stack(rows) => {
                    for (r, v) in rows.iter().enumerate() {
                        self.pass(&mut grads, *v, || Tensor::vector(g.row(r).to_vec()));
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    self.pass(&mut grads, *a, || {
                        let inner: f64 = g.data().iter().zip(y).map(|(g, y)| g * y).sum();
                        Tensor::vector(
                            g.data().iter().zip(y).map(|(g, y)| y * (g - inner)).collect(),
                        )
                    });
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    self.pass(&mut grads, *a, || {
                        let total: f64 = g.data().iter().sum();
                        Tensor::vector(
                            g.data()
                                .iter()
                                .zip(y)
                                .map(|(g, y)| g - y.exp() * total)
                                .collect(),
                        )
                    });
                }
                Op::Dot(a, b) => {
                    let s = g.item();
                    self.pass(&mut grads, *a, || {
                        let mut t = self.value(*b).clone();
                        t.scale(s);
                        t
                    });
                    self.pass(&mut grads, *b, || {
                        let mut t = self.value(*a).clone();
                        t.scale(s);
                        t
                    });
                }
                Op::Sum(a) => {
                    let s = g.item();
                    self.pass(&mut grads, *a, || {
                        let src = self.value(*a);
                        let mut t = Tensor::zeros(src.rows(), src.cols());
                        t.fill(s);
                        t
                    });
                }
                Op::Pick(a, index) => {
                    self.pass(&mut grads, *a, || {
                        let src = self.value(*a);
                        let mut t = Tensor::zeros(src.rows(), src.cols());
                        t.data_mut()[*index] = g.item();
                        t
                    });
                }
            }
        }
        Ok(out)
    }

    fn pass(&self, grads: &mut [Option<Tensor>], target: Var, f: impl FnOnce() -> Tensor) {
        if self.nodes[target.0].requires_grad {
            accumulate(grads, target, f());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: Var, g: Tensor) {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        g.rows(),
        g.cols(),
        g.data().iter().zip(other.data()).map(|(a, b)| f(*a, *b)).collect(),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
