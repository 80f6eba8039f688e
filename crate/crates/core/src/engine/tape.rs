//! Reverse-mode differentiation over vector-valued primitives.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and the reverse pass is a single backwards sweep.

use super::backend::{k_dot, k_logsumexp, k_lorentz, k_softmax, k_zip, Backend};
use super::func::Func;
use super::params::{matvec, Gradients, Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Handle to a matrix usable in [`Tape::matvec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapeMatrix {
    Param(ParamId),
    Const(usize),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    ParamRow(ParamId, usize),
    MatVec(TapeMatrix, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, usize),
    Shift(usize),
    MulConst(usize, f64),
    Dot(usize, usize),
    LorentzDot(usize, usize),
    SumSq(usize),
    Sum(usize),
    Map(usize, Func),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Softmax(usize),
    LogSumExp(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::ParamRow(..) => "param_row",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Shift(_) => "shift",
            Op::MulConst(..) => "mul_const",
            Op::Dot(..) => "dot",
            Op::LorentzDot(..) => "lorentz_dot",
            Op::SumSq(_) => "sum_sq",
            Op::Sum(_) => "sum",
            Op::Map(_, f) => f.name(),
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "logsumexp",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records a computation against a parameter store for one reverse pass.
#[derive(Debug)]
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    consts: Vec<Matrix>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            consts: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: usize) -> &[f64] {
        &self.nodes[v].value
    }

    /// Runs the reverse pass from a scalar `loss`.
    ///
    /// Parameters not reachable from `loss` get zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got length {}",
                root.len()
            )));
        }
        if !root[0].is_finite() {
            return Err(Error::numeric(format!("loss is not finite: {}", root[0])));
        }
        let mut grads = Gradients::zeros_like(self.store);
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![1.0];

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut adj, &mut grads);
            let bad = node
                .op_parents()
                .into_iter()
                .any(|p| adj[p].iter().any(|v| !v.is_finite()));
            if bad {
                return Err(Error::NonFiniteGradient { op: node.op.name() });
            }
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Vec<f64>], grads: &mut Gradients) {
        fn acc(adj: &mut [Vec<f64>], i: usize, contrib: impl Iterator<Item = f64>) {
            let slot = &mut adj[i];
            if slot.is_empty() {
                *slot = contrib.collect();
            } else {
                slot.iter_mut().zip(contrib).for_each(|(s, c)| *s += c);
            }
        }
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let buf = grads.get_mut(*id);
                buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
            }
            Op::ParamRow(id, row) => {
                let cols = self.store.get(*id).cols();
                let buf = &mut grads.get_mut(*id)[row * cols..(row + 1) * cols];
                buf.iter_mut().zip(g).for_each(|(b, v)| *b += v);
            }
            Op::MatVec(m, x) => {
                let xv = self.val(*x);
                let (rows, cols, data) = match m {
                    TapeMatrix::Param(id) => {
                        let t = self.store.get(*id);
                        (t.rows(), t.cols(), t.data.as_slice())
                    }
                    TapeMatrix::Const(c) => {
                        let m = &self.consts[*c];
                        (m.rows, m.cols, m.data.as_slice())
                    }
                };
                if let TapeMatrix::Param(id) = m {
                    let gw = grads.get_mut(*id);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            gw[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(xv)
                                .for_each(|(w, xj)| *w += gr * xj);
                        }
                    }
                }
                let mut gx = vec![0.0; cols];
                for r in 0..rows {
                    let gr = g[r];
                    if gr != 0.0 {
                        gx.iter_mut()
                            .zip(&data[r * cols..(r + 1) * cols])
                            .for_each(|(o, w)| *o += gr * w);
                    }
                }
                acc(adj, *x, gx.into_iter());
            }
            Op::Add(a, b) => {
                acc(adj, *a, g.iter().copied());
                acc(adj, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                acc(adj, *a, g.iter().copied());
                acc(adj, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(adj, *a, g.iter().zip(bv).map(|(g, y)| g * y));
                acc(adj, *b, g.iter().zip(av).map(|(g, x)| g * x));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(adj, *a, g.iter().zip(bv).map(|(g, y)| g / y));
                acc(
                    adj,
                    *b,
                    g.iter().zip(av.iter().zip(bv)).map(|(g, (x, y))| -g * x / (y * y)),
                );
            }
            Op::Scale(v, s) => {
                let (vv, sv) = (self.val(*v), self.val(*s)[0]);
                acc(adj, *v, g.iter().map(|g| g * sv));
                acc(adj, *s, std::iter::once(k_dot(g, vv)));
            }
            Op::Shift(v) => acc(adj, *v, g.iter().copied()),
            Op::MulConst(v, c) => acc(adj, *v, g.iter().map(|g| g * c)),
            Op::Dot(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let g0 = g[0];
                acc(adj, *a, bv.iter().map(|y| g0 * y));
                acc(adj, *b, av.iter().map(|x| g0 * x));
            }
            Op::LorentzDot(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let g0 = g[0];
                let sign = |i: usize| if i == 0 { -1.0 } else { 1.0 };
                acc(adj, *a, bv.iter().enumerate().map(|(i, y)| g0 * sign(i) * y));
                acc(adj, *b, av.iter().enumerate().map(|(i, x)| g0 * sign(i) * x));
            }
            Op::SumSq(a) => {
                let g0 = 2.0 * g[0];
                acc(adj, *a, self.val(*a).iter().map(|x| g0 * x));
            }
            Op::Sum(a) => {
                let n = self.val(*a).len();
                acc(adj, *a, std::iter::repeat_n(g[0], n));
            }
            Op::Map(a, f) => {
                let av = self.val(*a);
                acc(
                    adj,
                    *a,
                    g.iter()
                        .zip(av.iter().zip(&node.value))
                        .map(|(g, (x, y))| g * f.deriv(*x, *y)),
                );
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.val(p).len();
                    acc(adj, p, g[off..off + n].iter().copied());
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = self.val(*a).len();
                let s = *start;
                let len = g.len();
                acc(
                    adj,
                    *a,
                    (0..n).map(|i| if i >= s && i < s + len { g[i - s] } else { 0.0 }),
                );
            }
            Op::Softmax(a) => {
                let w = &node.value;
                let gw = k_dot(g, w);
                acc(adj, *a, g.iter().zip(w).map(|(g, w)| w * (g - gw)));
            }
            Op::LogSumExp(a) => {
                let w = k_softmax(self.val(*a));
                let g0 = g[0];
                acc(adj, *a, w.into_iter().map(|w| g0 * w));
            }
        }
    }
}

impl Node {
    fn op_parents(&self) -> Vec<usize> {
        match &self.op {
            Op::Leaf | Op::Param(_) | Op::ParamRow(..) => vec![],
            Op::MatVec(_, x) => vec![*x],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Scale(a, b)
            | Op::Dot(a, b)
            | Op::LorentzDot(a, b) => vec![*a, *b],
            Op::Shift(a)
            | Op::MulConst(a, _)
            | Op::SumSq(a)
            | Op::Sum(a)
            | Op::Map(a, _)
            | Op::Slice(a, _)
            | Op::Softmax(a)
            | Op::LogSumExp(a) => vec![*a],
            Op::Concat(p) => p.clone(),
        }
    }
}

impl<'a> Backend for Tape<'a> {
    type V = Var;
    type M = TapeMatrix;

    fn constant(&mut self, v: Vec<f64>) -> Var {
        self.push(v, Op::Leaf)
    }
    fn value<'b>(&'b self, v: &'b Var) -> &'b [f64] {
        &self.nodes[v.0].value
    }
    fn param(&mut self, id: ParamId) -> Var {
        let v = self.store.get(id).data.clone();
        self.push(v, Op::Param(id))
    }
    fn param_row(&mut self, id: ParamId, row: usize) -> Var {
        let v = self.store.get(id).row(row).to_vec();
        self.push(v, Op::ParamRow(id, row))
    }
    fn param_matrix(&mut self, id: ParamId) -> TapeMatrix {
        TapeMatrix::Param(id)
    }
    fn const_matrix(&mut self, m: &Matrix) -> TapeMatrix {
        self.consts.push(m.clone());
        TapeMatrix::Const(self.consts.len() - 1)
    }
    fn matvec(&mut self, m: &TapeMatrix, x: &Var) -> Var {
        let xv = self.val(x.0);
        let y = match m {
            TapeMatrix::Param(id) => {
                let t = self.store.get(*id);
                matvec(t.rows(), t.cols(), &t.data, xv)
            }
            TapeMatrix::Const(c) => self.consts[*c].matvec(xv),
        };
        self.push(y, Op::MatVec(*m, x.0))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let y = k_zip(self.val(a.0), self.val(b.0), |x, y| x + y);
        self.push(y, Op::Add(a.0, b.0))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let y = k_zip(self.val(a.0), self.val(b.0), |x, y| x - y);
        self.push(y, Op::Sub(a.0, b.0))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let y = k_zip(self.val(a.0), self.val(b.0), |x, y| x * y);
        self.push(y, Op::Mul(a.0, b.0))
    }
    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let y = k_zip(self.val(a.0), self.val(b.0), |x, y| x / y);
        self.push(y, Op::Div(a.0, b.0))
    }
    fn scale(&mut self, v: &Var, s: &Var) -> Var {
        let sv = self.val(s.0)[0];
        let y = self.val(v.0).iter().map(|x| x * sv).collect();
        self.push(y, Op::Scale(v.0, s.0))
    }
    fn shift(&mut self, v: &Var, c: f64) -> Var {
        let y = self.val(v.0).iter().map(|x| x + c).collect();
        self.push(y, Op::Shift(v.0))
    }
    fn mul_const(&mut self, v: &Var, c: f64) -> Var {
        let y = self.val(v.0).iter().map(|x| x * c).collect();
        self.push(y, Op::MulConst(v.0, c))
    }
    fn dot(&mut self, a: &Var, b: &Var) -> Var {
        let y = vec![k_dot(self.val(a.0), self.val(b.0))];
        self.push(y, Op::Dot(a.0, b.0))
    }
    fn lorentz_dot(&mut self, a: &Var, b: &Var) -> Var {
        let y = vec![k_lorentz(self.val(a.0), self.val(b.0))];
        self.push(y, Op::LorentzDot(a.0, b.0))
    }
    fn sum_sq(&mut self, a: &Var) -> Var {
        let av = self.val(a.0);
        let y = vec![k_dot(av, av)];
        self.push(y, Op::SumSq(a.0))
    }
    fn sum(&mut self, a: &Var) -> Var {
        let y = vec![self.val(a.0).iter().sum()];
        self.push(y, Op::Sum(a.0))
    }
    fn map(&mut self, a: &Var, f: Func) -> Var {
        let y = self.val(a.0).iter().map(|&x| f.eval(x)).collect();
        self.push(y, Op::Map(a.0, f))
    }
    fn concat(&mut self, parts: &[Var]) -> Var {
        let mut y = Vec::new();
        for p in parts {
            y.extend_from_slice(self.val(p.0));
        }
        self.push(y, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }
    fn slice(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let y = self.val(a.0)[start..start + len].to_vec();
        self.push(y, Op::Slice(a.0, start))
    }
    fn softmax(&mut self, a: &Var) -> Var {
        let y = k_softmax(self.val(a.0));
        self.push(y, Op::Softmax(a.0))
    }
    fn logsumexp(&mut self, a: &Var) -> Var {
        let y = vec![k_logsumexp(self.val(a.0))];
        self.push(y, Op::LogSumExp(a.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::params::ParamSpace;

    fn store_with(data: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let n = data.len();
        let id = s.add("p", vec![n], data, ParamSpace::Euclidean);
        (s, id)
    }

    #[test]
    fn sum_gives_ones() {
        let (store, id) = store_with(vec![0.3, -1.0, 2.0]);
        let mut t = Tape::new(&store);
        let p = t.param(id);
        let l = t.sum(&p);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(id), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", vec![2], vec![1.0, 2.0], ParamSpace::Euclidean);
        let b = store.add("b", vec![2], vec![3.0, 4.0], ParamSpace::Euclidean);
        let mut t = Tape::new(&store);
        let pa = t.param(a);
        let _pb = t.param(b);
        let l = t.sum_sq(&pa);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a), &[2.0, 4.0]);
        assert_eq!(g.get(b), &[0.0, 0.0]);
    }

    #[test]
    fn matvec_gradients() {
        let mut store = ParamStore::new();
        let w = store.add_matrix("w", Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = store.add("x", vec![2], vec![0.5, -1.0], ParamSpace::Euclidean);
        let mut t = Tape::new(&store);
        let wm = t.param_matrix(w);
        let xv = t.param(x);
        let y = t.matvec(&wm, &xv);
        let l = t.sum(&y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w), &[0.5, -1.0, 0.5, -1.0]);
        assert_eq!(g.get(x), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_and_logsumexp_gradients_sum_to_zero() {
        let (store, id) = store_with(vec![0.1, 2.0, -0.7, 0.0]);
        let mut t = Tape::new(&store);
        let p = t.param(id);
        let lse = t.logsumexp(&p);
        let first = t.index(&p, 0);
        let l = t.sub(&lse, &first);
        let g = t.backward(l).unwrap();
        let s: f64 = g.get(id).iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_op() {
        let (store, id) = store_with(vec![0.0]);
        let mut t = Tape::new(&store);
        let p = t.param(id);
        let r = t.map(&p, Func::Sqrt);
        let err = t.backward(r).unwrap_err();
        match err {
            Error::NonFiniteGradient { op } => assert_eq!(op, "sqrt"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eager_and_tape_agree() {
        use crate::engine::backend::Eager;
        let (store, id) = store_with(vec![0.2, -0.4, 0.9]);
        fn f<B: Backend>(b: &mut B, id: ParamId) -> B::V {
            let p = b.param(id);
            let n = b.sum_sq(&p);
            let t = b.map(&n, Func::SinhcSqrt);
            let q = b.scale(&p, &t);
            let sm = b.softmax(&q);
            b.lorentz_dot(&sm, &q)
        }
        let mut e = Eager::with_params(&store);
        let ev = f(&mut e, id);
        let mut t = Tape::new(&store);
        let tv = f(&mut t, id);
        assert_eq!(ev.as_slice(), t.value(&tv));
    }
}
