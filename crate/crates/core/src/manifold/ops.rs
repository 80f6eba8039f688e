//! Backend-generic hyperbolic kernels.
//!
//! Conventions shared by everything here:
//!
//! * `k` is a length-1 handle holding the curvature scale (sectional curvature `−1/k`).
//! * Lorentz points carry `n + 1` coordinates with `⟨x,x⟩_L = −k`; every Lorentz
//!   point produced here is rebuilt from its spatial part, so the constraint holds
//!   to rounding.
//! * Poincaré points are stored in unit-ball coordinates. Curvature enters as a
//!   metric scale, so Möbius addition and matrix multiplication do not depend
//!   on `k` while exp/log maps divide/multiply tangent vectors by `√k`.
//! * Tangent vectors at the origin are `n`-dimensional in every model.

use super::Model;
use crate::engine::backend::Backend;
use crate::engine::func::Func;

/// Distance of the projection radius from the ball boundary.
pub const BALL_EPS: f64 = 1e-5;

fn reject_klein(model: Model, op: &str) {
    assert!(
        !matches!(model, Model::Klein),
        "{op} is not defined on the Klein model in this kernel"
    );
}

/// Spatial (tangent-at-origin sized) part of a point.
pub fn spatial<B: Backend>(b: &mut B, model: Model, x: &B::V) -> B::V {
    match model {
        Model::Lorentz => {
            let n = b.len(x);
            b.slice(x, 1, n - 1)
        }
        _ => x.clone(),
    }
}

/// Largest unit distance from the origin a point may sit at; the Poincaré
/// projection radius `1 − ε` corresponds to `2·artanh(1 − ε)`.
pub fn max_unit_radius() -> f64 {
    2.0 * (1.0 - BALL_EPS).atanh()
}

/// `sinh` of [`max_unit_radius`]: the spatial-norm cap of a unit-curvature
/// Lorentz point, equal to the Lorentz image of the ball cap.
fn max_sinh_radius() -> f64 {
    let r = 1.0 - BALL_EPS;
    2.0 * r / (1.0 - r * r)
}

/// Rescales `v` to norm `cap·√k` when `norm_sq` exceeds it.
fn clamp_norm<B: Backend>(b: &mut B, k: &B::V, v: &B::V, norm_sq: &B::V, cap: f64) -> Option<B::V> {
    let limit = cap * b.value(k)[0].max(0.0).sqrt();
    if b.value(norm_sq)[0] <= limit * limit {
        return None;
    }
    let n = b.map(norm_sq, Func::Sqrt);
    let inv = b.map(&n, Func::Recip);
    let sk = b.map(k, Func::Sqrt);
    let f = b.mul(&inv, &sk);
    let f = b.mul_const(&f, cap);
    Some(b.scale(v, &f))
}

/// Lorentz point whose spatial coordinates are `s`, pulled radially inside
/// the maximal radius when beyond it.
pub fn lorentz_from_spatial<B: Backend>(b: &mut B, k: &B::V, s: &B::V) -> B::V {
    let n2 = b.sum_sq(s);
    let (s, n2) = match clamp_norm(b, k, s, &n2, max_sinh_radius()) {
        Some(c) => {
            let n2 = b.sum_sq(&c);
            (c, n2)
        }
        None => (s.clone(), n2),
    };
    let t2 = b.add(&n2, k);
    let t = b.map(&t2, Func::Sqrt);
    b.concat(&[t, s])
}

/// Radial rescale onto radius `1 − ε` when outside it.
pub fn project_ball<B: Backend>(b: &mut B, x: &B::V) -> B::V {
    let norm = b.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
    let max = 1.0 - BALL_EPS;
    if norm > max {
        let n2 = b.sum_sq(x);
        let n = b.map(&n2, Func::Sqrt);
        let inv = b.map(&n, Func::Recip);
        let s = b.mul_const(&inv, max);
        b.scale(x, &s)
    } else {
        x.clone()
    }
}

/// Re-asserts the model constraint on a point.
pub fn project<B: Backend>(b: &mut B, model: Model, k: &B::V, x: &B::V) -> B::V {
    match model {
        Model::Lorentz => {
            let s = spatial(b, model, x);
            lorentz_from_spatial(b, k, &s)
        }
        Model::PoincareBall | Model::Klein => project_ball(b, x),
        Model::Euclidean => x.clone(),
    }
}

/// Origin of an `n`-dimensional model.
pub fn origin<B: Backend>(b: &mut B, model: Model, k: &B::V, n: usize) -> B::V {
    match model {
        Model::Lorentz => {
            let z = b.constant(vec![0.0; n]);
            lorentz_from_spatial(b, k, &z)
        }
        _ => b.constant(vec![0.0; n]),
    }
}

fn inv_sqrt_k<B: Backend>(b: &mut B, k: &B::V) -> B::V {
    let r = b.map(k, Func::Sqrt);
    b.map(&r, Func::Recip)
}

/// `exp_o(u)` for `u` in the tangent space at the origin.
pub fn exp0<B: Backend>(b: &mut B, model: Model, k: &B::V, u: &B::V) -> B::V {
    reject_klein(model, "exp0");
    match model {
        Model::Lorentz => {
            // Beyond the maximal radius the result is the capped point along
            // the same ray, so clamping first only avoids overflow.
            let n2 = b.sum_sq(u);
            let u = clamp_norm(b, k, u, &n2, max_unit_radius()).unwrap_or_else(|| u.clone());
            let n2 = b.sum_sq(&u);
            let s = b.div(&n2, k);
            let f = b.map(&s, Func::SinhcSqrt);
            let sp = b.scale(&u, &f);
            lorentz_from_spatial(b, k, &sp)
        }
        Model::PoincareBall => {
            let n2 = b.sum_sq(u);
            let s = b.div(&n2, k);
            let f = b.map(&s, Func::TanhcSqrt);
            let ik = inv_sqrt_k(b, k);
            let c = b.mul(&f, &ik);
            let p = b.scale(u, &c);
            project_ball(b, &p)
        }
        _ => u.clone(),
    }
}

/// `log_o(x)`, returned as an `n`-dimensional tangent vector.
pub fn log0<B: Backend>(b: &mut B, model: Model, k: &B::V, x: &B::V) -> B::V {
    reject_klein(model, "log0");
    match model {
        Model::Lorentz => {
            let s = spatial(b, model, x);
            let n2 = b.sum_sq(&s);
            let r = b.div(&n2, k);
            // d/‖s‖ with d = √k·arsinh(‖s‖/√k)
            let f = b.map(&r, Func::ArsinhcSqrt);
            b.scale(&s, &f)
        }
        Model::PoincareBall => {
            let n2 = b.sum_sq(x);
            let f = b.map(&n2, Func::ArtanhcSqrt);
            let sk = b.map(k, Func::Sqrt);
            let c = b.mul(&f, &sk);
            b.scale(x, &c)
        }
        _ => x.clone(),
    }
}

/// Möbius addition on the unit ball.
pub fn mobius_add<B: Backend>(b: &mut B, x: &B::V, y: &B::V) -> B::V {
    let xy = b.dot(x, y);
    let x2 = b.sum_sq(x);
    let y2 = b.sum_sq(y);
    let two_xy = b.mul_const(&xy, 2.0);
    let a0 = b.add(&two_xy, &y2);
    let a = b.shift(&a0, 1.0);
    let bx = b.mul_const(&x2, -1.0);
    let bc = b.shift(&bx, 1.0);
    let x2y2 = b.mul(&x2, &y2);
    let d0 = b.add(&two_xy, &x2y2);
    let d = b.shift(&d0, 1.0);
    let ax = b.scale(x, &a);
    let by = b.scale(y, &bc);
    let num = b.add(&ax, &by);
    let inv = b.map(&d, Func::Recip);
    b.scale(&num, &inv)
}

/// Möbius matrix-vector product; returns the origin when `x = 0`.
pub fn mobius_matvec<B: Backend>(b: &mut B, m: &B::M, x: &B::V) -> B::V {
    // tanh(‖Mx‖/‖x‖·artanh‖x‖)·Mx/‖Mx‖ = a·tanhc((a‖Mx‖)²)·Mx with a = artanh‖x‖/‖x‖
    let x2 = b.sum_sq(x);
    let a = b.map(&x2, Func::ArtanhcSqrt);
    let y = b.matvec(m, x);
    let y2 = b.sum_sq(&y);
    let a2 = b.mul(&a, &a);
    let arg = b.mul(&a2, &y2);
    let t = b.map(&arg, Func::TanhcSqrt);
    let c = b.mul(&a, &t);
    let r = b.scale(&y, &c);
    project_ball(b, &r)
}

/// Parallel transport of an origin tangent vector `u` (spatial form) to the
/// tangent space at Lorentz point `x`; the result is in ambient coordinates.
pub fn lorentz_transport0<B: Backend>(b: &mut B, k: &B::V, x: &B::V, u: &B::V) -> B::V {
    let n = b.len(x);
    let x0 = b.index(x, 0);
    let xs = b.slice(x, 1, n - 1);
    let xu = b.dot(&xs, u);
    let sk = b.map(k, Func::Sqrt);
    let isk = b.map(&sk, Func::Recip);
    let time = b.mul(&xu, &isk);
    // spatial: u + (xs·u)/(√k(√k + x0)) xs
    let den0 = b.add(&sk, &x0);
    let den = b.mul(&den0, &sk);
    let c = b.div(&xu, &den);
    let corr = b.scale(&xs, &c);
    let sp = b.add(u, &corr);
    b.concat(&[time, sp])
}

/// General Lorentz parallel transport `x → y` of `v ∈ T_x`.
pub fn lorentz_transport<B: Backend>(b: &mut B, k: &B::V, x: &B::V, y: &B::V, v: &B::V) -> B::V {
    let yv = b.lorentz_dot(y, v);
    let xy = b.lorentz_dot(x, y);
    let den = b.sub(k, &xy);
    let c = b.div(&yv, &den);
    let xpy = b.add(x, y);
    let corr = b.scale(&xpy, &c);
    b.add(v, &corr)
}

/// `exp_x(v)`; for Lorentz `v` is ambient and tangent at `x`.
pub fn expmap<B: Backend>(b: &mut B, model: Model, k: &B::V, x: &B::V, v: &B::V) -> B::V {
    reject_klein(model, "expmap");
    match model {
        Model::Lorentz => {
            let vv = b.lorentz_dot(v, v);
            let (v, vv) = match clamp_norm(b, k, v, &vv, 2.0 * max_unit_radius()) {
                Some(c) => {
                    let vv = b.lorentz_dot(&c, &c);
                    (c, vv)
                }
                None => (v.clone(), vv),
            };
            let s = b.div(&vv, k);
            let ch = b.map(&s, Func::CoshSqrt);
            let sh = b.map(&s, Func::SinhcSqrt);
            let a = b.scale(x, &ch);
            let c = b.scale(&v, &sh);
            let y = b.add(&a, &c);
            project(b, model, k, &y)
        }
        Model::PoincareBall => {
            // t = λ_x / (2√k) = 1 / ((1 − ‖x‖²)√k)
            let x2 = b.sum_sq(x);
            let nx = b.mul_const(&x2, -1.0);
            let one_minus = b.shift(&nx, 1.0);
            let sk = b.map(k, Func::Sqrt);
            let den = b.mul(&one_minus, &sk);
            let t = b.map(&den, Func::Recip);
            let v2 = b.sum_sq(v);
            let t2 = b.mul(&t, &t);
            let arg = b.mul(&t2, &v2);
            let f = b.map(&arg, Func::TanhcSqrt);
            let c = b.mul(&t, &f);
            let w = b.scale(v, &c);
            let w = project_ball(b, &w);
            let r = mobius_add(b, x, &w);
            project_ball(b, &r)
        }
        _ => b.add(x, v),
    }
}

/// `log_x(y)`; for Lorentz the result is ambient and tangent at `x`.
pub fn logmap<B: Backend>(b: &mut B, model: Model, k: &B::V, x: &B::V, y: &B::V) -> B::V {
    reject_klein(model, "logmap");
    match model {
        Model::Lorentz => {
            let xy = b.lorentz_dot(x, y);
            let neg = b.mul_const(&xy, -1.0);
            let alpha = b.div(&neg, k);
            let ax = b.scale(x, &alpha);
            let u = b.sub(y, &ax);
            let g = b.map(&alpha, Func::ArcoshRatio);
            b.scale(&u, &g)
        }
        Model::PoincareBall => {
            let nx = b.neg(x);
            let w = mobius_add(b, &nx, y);
            let w2 = b.sum_sq(&w);
            let f = b.map(&w2, Func::ArtanhcSqrt);
            let x2 = b.sum_sq(x);
            let nx2 = b.mul_const(&x2, -1.0);
            let one_minus = b.shift(&nx2, 1.0);
            let sk = b.map(k, Func::Sqrt);
            let c0 = b.mul(&f, &one_minus);
            let c = b.mul(&c0, &sk);
            b.scale(&w, &c)
        }
        _ => b.sub(y, x),
    }
}

/// Hyperbolic matrix multiplication `M ⊗ x`.
pub fn matvec<B: Backend>(b: &mut B, model: Model, k: &B::V, m: &B::M, x: &B::V) -> B::V {
    reject_klein(model, "matvec");
    match model {
        Model::Lorentz => {
            let u = log0(b, model, k, x);
            let mu = b.matvec(m, &u);
            exp0(b, model, k, &mu)
        }
        Model::PoincareBall => mobius_matvec(b, m, x),
        _ => b.matvec(m, x),
    }
}

/// Hyperbolic addition `x ⊕ y`.
pub fn add<B: Backend>(b: &mut B, model: Model, k: &B::V, x: &B::V, y: &B::V) -> B::V {
    reject_klein(model, "add");
    match model {
        Model::Lorentz => {
            let u = log0(b, model, k, y);
            let v = lorentz_transport0(b, k, x, &u);
            expmap(b, model, k, x, &v)
        }
        Model::PoincareBall => {
            let r = mobius_add(b, x, y);
            project_ball(b, &r)
        }
        _ => b.add(x, y),
    }
}

/// `(M ⊗ x) ⊕ bias`.
pub fn linear<B: Backend>(
    b: &mut B,
    model: Model,
    k: &B::V,
    m: &B::M,
    x: &B::V,
    bias: &B::V,
) -> B::V {
    let mx = matvec(b, model, k, m, x);
    add(b, model, k, &mx, bias)
}

/// Generalized concatenation `((M₁ ⊗ x₁) ⊕ (M₂ ⊗ x₂)) ⊕ bias`.
#[allow(clippy::too_many_arguments)]
pub fn concat<B: Backend>(
    b: &mut B,
    model: Model,
    k: &B::V,
    x1: &B::V,
    x2: &B::V,
    m1: &B::M,
    m2: &B::M,
    bias: &B::V,
) -> B::V {
    let a = matvec(b, model, k, m1, x1);
    let c = matvec(b, model, k, m2, x2);
    concat_images(b, model, k, &a, &c, bias)
}

/// Tail of [`concat`] once both matrix images are known.
pub fn concat_images<B: Backend>(
    b: &mut B,
    model: Model,
    k: &B::V,
    a: &B::V,
    c: &B::V,
    bias: &B::V,
) -> B::V {
    let ac = add(b, model, k, a, c);
    add(b, model, k, &ac, bias)
}

/// Leaky rectifier applied in the origin tangent space, moving from curvature
/// `k_in` to `k_out`.
pub fn activation<B: Backend>(
    b: &mut B,
    model: Model,
    k_in: &B::V,
    k_out: &B::V,
    x: &B::V,
) -> B::V {
    let u = log0(b, model, k_in, x);
    let a = b.map(&u, Func::LeakyRelu);
    exp0(b, model, k_out, &a)
}

/// Geodesic distance.
pub fn distance<B: Backend>(b: &mut B, model: Model, k: &B::V, x: &B::V, y: &B::V) -> B::V {
    reject_klein(model, "distance");
    match model {
        Model::Lorentz => {
            let xy = b.lorentz_dot(x, y);
            let neg = b.mul_const(&xy, -1.0);
            let alpha = b.div(&neg, k);
            let d = b.map(&alpha, Func::Arcosh);
            let sk = b.map(k, Func::Sqrt);
            b.mul(&d, &sk)
        }
        Model::PoincareBall => {
            let diff = b.sub(x, y);
            let d2 = b.sum_sq(&diff);
            let x2 = b.sum_sq(x);
            let y2 = b.sum_sq(y);
            let nx = b.mul_const(&x2, -1.0);
            let ny = b.mul_const(&y2, -1.0);
            let ax = b.shift(&nx, 1.0);
            let ay = b.shift(&ny, 1.0);
            let den = b.mul(&ax, &ay);
            let q = b.div(&d2, &den);
            let q2 = b.mul_const(&q, 2.0);
            let arg = b.shift(&q2, 1.0);
            let d = b.map(&arg, Func::Arcosh);
            let sk = b.map(k, Func::Sqrt);
            b.mul(&d, &sk)
        }
        _ => {
            let diff = b.sub(x, y);
            let d2 = b.sum_sq(&diff);
            b.map(&d2, Func::Sqrt)
        }
    }
}
