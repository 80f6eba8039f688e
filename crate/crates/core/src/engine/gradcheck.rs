//! Central finite-difference verification of analytic gradients.

use super::params::{Gradients, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Gradient magnitude below which errors are measured absolutely; central
/// differences of an O(1) loss carry roundoff near `1e−10` at `h = 1e−5`.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` against central differences of `f` for every entry of
/// every trainable tensor. `f` must be a deterministic function of the store.
pub fn finite_diff_check<F>(
    store: &ParamStore,
    mut f: F,
    analytic: &Gradients,
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut work = store.clone();
    let mut tensors = Vec::new();
    for (id, t) in store.iter() {
        if !t.trainable {
            continue;
        }
        let mut worst: f64 = 0.0;
        for i in 0..t.data.len() {
            let orig = t.data[i];
            work.get_mut(id).data[i] = orig + h;
            let up = f(&work);
            work.get_mut(id).data[i] = orig - h;
            let down = f(&work);
            work.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = relative_error(analytic.get(id)[i], numeric);
            worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
        }
        tensors.push(TensorCheck {
            name: t.name.clone(),
            entries: t.data.len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        tensors,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::backend::{Backend, Eager};
    use crate::engine::params::{ParamId, ParamSpace};
    use crate::engine::tape::Tape;
    use crate::manifold::{ops, Model};

    fn quad<B: Backend>(b: &mut B, id: ParamId) -> B::V {
        let x = b.param(id);
        let c = b.constant(vec![1.0, -2.0, 0.5]);
        let d = b.sub(&x, &c);
        let s = b.sum_sq(&d);
        b.mul_const(&s, 3.0)
    }

    fn setup() -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", vec![3], vec![0.3, 0.2, -0.1], ParamSpace::Euclidean);
        (s, id)
    }

    fn analytic(store: &ParamStore, id: ParamId) -> Gradients {
        let mut t = Tape::new(store);
        let l = quad(&mut t, id);
        t.backward(l).unwrap()
    }

    #[test]
    fn quadratic_passes_tightly() {
        let (store, id) = setup();
        let g = analytic(&store, id);
        let r = finite_diff_check(
            &store,
            |s| quad(&mut Eager::with_params(s), id)[0],
            &g,
            1e-5,
            1e-8,
        );
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (store, id) = setup();
        let mut g = analytic(&store, id);
        g.get_mut(id)[1] *= 1.01;
        let r = finite_diff_check(
            &store,
            |s| quad(&mut Eager::with_params(s), id)[0],
            &g,
            1e-5,
            1e-4,
        );
        assert!(!r.passed);
        assert_eq!(r.tensors[0].name, "x");
    }

    fn poincare_dist<B: Backend>(b: &mut B, id: ParamId) -> B::V {
        let p = b.param(id);
        let o = b.constant(vec![0.0, 0.0]);
        let k = b.scalar(1.0);
        ops::distance(b, Model::PoincareBall, &k, &o, &p)
    }

    #[test]
    fn poincare_distance_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", vec![2], vec![0.5, 0.0], ParamSpace::Euclidean);
        let mut t = Tape::new(&store);
        let l = poincare_dist(&mut t, id);
        let g = t.backward(l).unwrap();
        // d = 2 artanh(r), so ∂d/∂r = 2/(1 − r²)
        assert!((g.get(id)[0] - 2.0 / 0.75).abs() < 1e-9);
        let r = finite_diff_check(
            &store,
            |s| poincare_dist(&mut Eager::with_params(s), id)[0],
            &g,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
    }
}
