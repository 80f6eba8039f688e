//! Vector-level computation backends.
//!
//! Every differentiable computation in the crate is written once, generic over
//! [`Backend`]. [`Eager`] evaluates immediately; [`Tape`](super::tape::Tape)
//! records the same arithmetic for a reverse pass. Both share the kernels in
//! this module so they produce bit-identical forward values.
//!
//! Scalars are length-1 vectors.

use super::func::Func;
use super::params::{matvec, Matrix, ParamId, ParamStore};

pub trait Backend {
    /// Vector handle.
    type V: Clone;
    /// Matrix handle (only consumed by [`Backend::matvec`]).
    type M: Clone;

    fn constant(&mut self, v: Vec<f64>) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a [f64];

    fn param(&mut self, id: ParamId) -> Self::V;
    fn param_row(&mut self, id: ParamId, row: usize) -> Self::V;
    fn param_matrix(&mut self, id: ParamId) -> Self::M;
    fn const_matrix(&mut self, m: &Matrix) -> Self::M;

    fn matvec(&mut self, m: &Self::M, x: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    /// Vector times scalar.
    fn scale(&mut self, v: &Self::V, s: &Self::V) -> Self::V;
    fn shift(&mut self, v: &Self::V, c: f64) -> Self::V;
    fn mul_const(&mut self, v: &Self::V, c: f64) -> Self::V;
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    /// Minkowski form `−a₀b₀ + Σ aᵢbᵢ`.
    fn lorentz_dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sum_sq(&mut self, a: &Self::V) -> Self::V;
    fn sum(&mut self, a: &Self::V) -> Self::V;
    fn map(&mut self, a: &Self::V, f: Func) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    fn slice(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V;
    fn index(&mut self, a: &Self::V, i: usize) -> Self::V {
        self.slice(a, i, 1)
    }
    fn softmax(&mut self, a: &Self::V) -> Self::V;
    fn logsumexp(&mut self, a: &Self::V) -> Self::V;

    fn scalar(&mut self, x: f64) -> Self::V {
        self.constant(vec![x])
    }
    fn scalar_value(&self, v: &Self::V) -> f64 {
        self.value(v)[0]
    }
    fn len(&self, v: &Self::V) -> usize {
        self.value(v).len()
    }
    fn neg(&mut self, a: &Self::V) -> Self::V {
        self.mul_const(a, -1.0)
    }
}

// Shared kernels.

pub(crate) fn k_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise op on lengths {} and {}", a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

pub(crate) fn k_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot on lengths {} and {}", a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn k_lorentz(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "lorentz dot on lengths {} and {}", a.len(), b.len());
    -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
}

pub(crate) fn k_softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub(crate) fn k_logsumexp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Immediate evaluation, optionally reading parameters from a store.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager<'a> {
    store: Option<&'a ParamStore>,
}

impl<'a> Eager<'a> {
    pub fn new() -> Self {
        Self { store: None }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Self { store: Some(store) }
    }

    fn store(&self) -> &'a ParamStore {
        self.store.expect("eager backend has no parameter store attached")
    }
}

#[derive(Debug, Clone)]
pub enum EagerMatrix {
    Param(ParamId),
    Owned(Matrix),
}

impl<'a> Backend for Eager<'a> {
    type V = Vec<f64>;
    type M = EagerMatrix;

    fn constant(&mut self, v: Vec<f64>) -> Vec<f64> {
        v
    }
    fn value<'b>(&'b self, v: &'b Vec<f64>) -> &'b [f64] {
        v
    }
    fn param(&mut self, id: ParamId) -> Vec<f64> {
        self.store().get(id).data.clone()
    }
    fn param_row(&mut self, id: ParamId, row: usize) -> Vec<f64> {
        self.store().get(id).row(row).to_vec()
    }
    fn param_matrix(&mut self, id: ParamId) -> EagerMatrix {
        EagerMatrix::Param(id)
    }
    fn const_matrix(&mut self, m: &Matrix) -> EagerMatrix {
        EagerMatrix::Owned(m.clone())
    }
    fn matvec(&mut self, m: &EagerMatrix, x: &Vec<f64>) -> Vec<f64> {
        match m {
            EagerMatrix::Param(id) => {
                let t = self.store().get(*id);
                matvec(t.rows(), t.cols(), &t.data, x)
            }
            EagerMatrix::Owned(m) => m.matvec(x),
        }
    }
    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_zip(a, b, |x, y| x + y)
    }
    fn sub(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_zip(a, b, |x, y| x - y)
    }
    fn mul(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_zip(a, b, |x, y| x * y)
    }
    fn div(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_zip(a, b, |x, y| x / y)
    }
    fn scale(&mut self, v: &Vec<f64>, s: &Vec<f64>) -> Vec<f64> {
        let s = s[0];
        v.iter().map(|x| x * s).collect()
    }
    fn shift(&mut self, v: &Vec<f64>, c: f64) -> Vec<f64> {
        v.iter().map(|x| x + c).collect()
    }
    fn mul_const(&mut self, v: &Vec<f64>, c: f64) -> Vec<f64> {
        v.iter().map(|x| x * c).collect()
    }
    fn dot(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        vec![k_dot(a, b)]
    }
    fn lorentz_dot(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        vec![k_lorentz(a, b)]
    }
    fn sum_sq(&mut self, a: &Vec<f64>) -> Vec<f64> {
        vec![k_dot(a, a)]
    }
    fn sum(&mut self, a: &Vec<f64>) -> Vec<f64> {
        vec![a.iter().sum()]
    }
    fn map(&mut self, a: &Vec<f64>, f: Func) -> Vec<f64> {
        a.iter().map(|&x| f.eval(x)).collect()
    }
    fn concat(&mut self, parts: &[Vec<f64>]) -> Vec<f64> {
        parts.concat()
    }
    fn slice(&mut self, a: &Vec<f64>, start: usize, len: usize) -> Vec<f64> {
        a[start..start + len].to_vec()
    }
    fn softmax(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_softmax(a)
    }
    fn logsumexp(&mut self, a: &Vec<f64>) -> Vec<f64> {
        vec![k_logsumexp(a)]
    }
}
