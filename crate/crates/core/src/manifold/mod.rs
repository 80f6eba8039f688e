//! Hyperbolic geometry on the Poincaré ball, the Lorentz hyperboloid and the
//! Klein model, plus the flat Euclidean case.
//!
//! [`ops`] holds the backend-generic kernels used inside the networks. The
//! functions in this module are the validated, eager entry points built on top
//! of them.

pub mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::backend::{Backend, Eager};
use crate::engine::func::Func;
use crate::engine::params::Matrix;
use crate::error::{Error, Result};

pub use ops::BALL_EPS;

/// Tolerance for on-manifold and tangency checks.
pub const MANIFOLD_TOL: f64 = 1e-6;

/// Offset keeping a reparameterized curvature away from zero.
pub const CURVATURE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "poincare")]
    PoincareBall,
    #[serde(rename = "lorentz")]
    Lorentz,
    #[serde(rename = "klein")]
    Klein,
    #[serde(rename = "euclidean")]
    Euclidean,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::PoincareBall => "poincare",
            Model::Lorentz => "lorentz",
            Model::Klein => "klein",
            Model::Euclidean => "euclidean",
        }
    }

    /// Number of stored coordinates for an intrinsic dimension `n`.
    pub fn coord_dim(self, n: usize) -> usize {
        match self {
            Model::Lorentz => n + 1,
            _ => n,
        }
    }

    pub fn is_hyperbolic(self) -> bool {
        !matches!(self, Model::Euclidean)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poincare" | "poincare_ball" | "ball" => Ok(Model::PoincareBall),
            "lorentz" | "hyperboloid" => Ok(Model::Lorentz),
            "klein" => Ok(Model::Klein),
            "euclidean" | "flat" => Ok(Model::Euclidean),
            other => Err(Error::Config(format!("unknown manifold `{other}`"))),
        }
    }
}

/// Curvature scale `k > 0`; the sectional curvature is `−1/k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    k: f64,
    pub trainable: bool,
}

impl Curvature {
    pub fn new(k: f64, trainable: bool) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::contract(format!("curvature scale must be positive, got {k}")));
        }
        Ok(Self { k, trainable })
    }

    pub fn unit() -> Self {
        Self {
            k: 1.0,
            trainable: false,
        }
    }

    /// Curvature from an unconstrained raw parameter, `k = softplus(raw) + 1e−3`.
    pub fn from_raw(raw: f64, trainable: bool) -> Self {
        Self {
            k: Func::Softplus.eval(raw) + CURVATURE_FLOOR,
            trainable,
        }
    }

    /// Raw parameter that [`Curvature::from_raw`] maps back to this curvature.
    pub fn raw(&self) -> f64 {
        let y = (self.k - CURVATURE_FLOOR).max(1e-12);
        if y > 30.0 {
            y
        } else {
            y.exp_m1().ln()
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

/// A point tagged with its model and curvature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoint {
    coords: Vec<f64>,
    model: Model,
    k: f64,
}

fn lorentz_residual(x: &[f64], k: f64) -> f64 {
    (crate::engine::backend::k_lorentz(x, x) + k).abs()
}

fn lorentz_tol(x: &[f64]) -> f64 {
    MANIFOLD_TOL * x[0].abs().powi(2).max(1.0)
}

impl HPoint {
    /// Validates the model constraint; use [`project`] for raw coordinates.
    pub fn new(coords: Vec<f64>, model: Model, k: f64) -> Result<Self> {
        Curvature::new(k, false)?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite point coordinates"));
        }
        match model {
            Model::Lorentz => {
                if coords.len() < 2 {
                    return Err(Error::contract("Lorentz points need at least 2 coordinates"));
                }
                if coords[0] <= 0.0 || lorentz_residual(&coords, k) > lorentz_tol(&coords) {
                    return Err(Error::contract(format!(
                        "point is off the hyperboloid: <x,x>_L + k = {:e}",
                        crate::engine::backend::k_lorentz(&coords, &coords) + k
                    )));
                }
            }
            Model::PoincareBall | Model::Klein => {
                let n = norm(&coords);
                if n >= 1.0 {
                    return Err(Error::contract(format!(
                        "{model} point has norm {n}, outside the unit ball"
                    )));
                }
            }
            Model::Euclidean => {}
        }
        Ok(Self { coords, model, k })
    }

    pub fn origin(model: Model, k: f64, n: usize) -> Self {
        let mut coords = vec![0.0; model.coord_dim(n)];
        if model == Model::Lorentz {
            coords[0] = k.sqrt();
        }
        Self { coords, model, k }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self.model {
            Model::Lorentz => self.coords.len() - 1,
            _ => self.coords.len(),
        }
    }

    /// Conformal factor `2/(1−‖x‖²)` of a ball point.
    pub fn conformal_factor(&self) -> Result<f64> {
        expect_model(self, Model::PoincareBall, "conformal_factor")?;
        Ok(2.0 / (1.0 - dot(&self.coords, &self.coords)))
    }
}

/// A tangent vector and the point it is attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    coords: Vec<f64>,
    base: HPoint,
}

impl TangentVec {
    /// For a Lorentz base the vector is ambient (`n + 1` coordinates) and must
    /// be Minkowski-orthogonal to the base.
    pub fn new(coords: Vec<f64>, base: HPoint) -> Result<Self> {
        if coords.len() != base.coords.len() {
            return Err(Error::contract(format!(
                "tangent vector of length {} at a point with {} coordinates",
                coords.len(),
                base.coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite tangent coordinates"));
        }
        if base.model == Model::Lorentz {
            let ip = crate::engine::backend::k_lorentz(&base.coords, &coords);
            let scale = 1.0 + norm(&coords) * norm(&base.coords);
            if ip.abs() > MANIFOLD_TOL * scale {
                return Err(Error::contract(format!(
                    "vector is not tangent at its base: <x,v>_L = {ip:e}"
                )));
            }
        }
        Ok(Self { coords, base })
    }

    pub fn zero(base: HPoint) -> Self {
        Self {
            coords: vec![0.0; base.coords.len()],
            base,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn base(&self) -> &HPoint {
        &self.base
    }

    /// Riemannian norm: `λ_x‖v‖` on the ball, `√⟨v,v⟩_L` on the hyperboloid.
    pub fn norm(&self) -> f64 {
        match self.base.model {
            Model::Lorentz => crate::engine::backend::k_lorentz(&self.coords, &self.coords)
                .max(0.0)
                .sqrt(),
            Model::PoincareBall => {
                2.0 / (1.0 - dot(&self.base.coords, &self.base.coords)) * norm(&self.coords)
            }
            _ => norm(&self.coords),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn expect_model(x: &HPoint, model: Model, op: &str) -> Result<()> {
    if x.model != model {
        return Err(Error::contract(format!(
            "{op} expects a {model} point, got {}",
            x.model
        )));
    }
    Ok(())
}

fn same_space(x: &HPoint, y: &HPoint, op: &str) -> Result<()> {
    if x.model != y.model || x.k != y.k {
        return Err(Error::contract(format!(
            "{op}: points live on different spaces ({} k={} vs {} k={})",
            x.model, x.k, y.model, y.k
        )));
    }
    if x.coords.len() != y.coords.len() {
        return Err(Error::contract(format!(
            "{op}: dimension mismatch {} vs {}",
            x.coords.len(),
            y.coords.len()
        )));
    }
    Ok(())
}

fn no_klein(x: &HPoint, op: &str) -> Result<()> {
    if x.model == Model::Klein {
        return Err(Error::contract(format!(
            "{op} is not available on the Klein model; convert first"
        )));
    }
    Ok(())
}

fn finite(v: Vec<f64>, op: &str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{op} produced a non-finite value")))
    }
}

fn check_matrix(m: &Matrix, n: usize, op: &str) -> Result<()> {
    if m.cols != n {
        return Err(Error::contract(format!(
            "{op}: {}x{} matrix applied to a {n}-dimensional point",
            m.rows, m.cols
        )));
    }
    Ok(())
}

/// Minkowski bilinear form `−x₀y₀ + Σ xᵢyᵢ`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract(format!(
            "lorentz_inner needs equal dimensions >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(crate::engine::backend::k_lorentz(x, y))
}

pub fn distance(x: &HPoint, y: &HPoint) -> Result<f64> {
    same_space(x, y, "distance")?;
    no_klein(x, "distance")?;
    let k = x.k;
    let arg = match x.model {
        Model::Lorentz => -crate::engine::backend::k_lorentz(&x.coords, &y.coords) / k,
        Model::PoincareBall => {
            let d2: f64 = x.coords.iter().zip(&y.coords).map(|(a, b)| (a - b).powi(2)).sum();
            let den = (1.0 - dot(&x.coords, &x.coords)) * (1.0 - dot(&y.coords, &y.coords));
            1.0 + 2.0 * d2 / den
        }
        _ => {
            let d2: f64 = x.coords.iter().zip(&y.coords).map(|(a, b)| (a - b).powi(2)).sum();
            return Ok(d2.sqrt());
        }
    };
    if !arg.is_finite() || arg < 1.0 - 1e-9 * arg.abs().max(1.0) {
        return Err(Error::numeric(format!(
            "arcosh argument {arg} is below 1 beyond rounding"
        )));
    }
    if x.coords == y.coords {
        return Ok(0.0);
    }
    Ok(k.sqrt() * arg.max(1.0).acosh())
}

pub fn mobius_add(x: &HPoint, y: &HPoint) -> Result<HPoint> {
    expect_model(x, Model::PoincareBall, "mobius_add")?;
    same_space(x, y, "mobius_add")?;
    let xy = dot(&x.coords, &y.coords);
    let den = 1.0 + 2.0 * xy + dot(&x.coords, &x.coords) * dot(&y.coords, &y.coords);
    if den.abs() < BALL_EPS * BALL_EPS {
        return Err(Error::numeric(format!("mobius_add denominator {den:e}")));
    }
    let mut b = Eager::new();
    let r = ops::add(&mut b, Model::PoincareBall, &vec![x.k], &x.coords, &y.coords);
    point(finite(r, "mobius_add")?, Model::PoincareBall, x.k)
}

pub fn mobius_matvec(m: &Matrix, x: &HPoint) -> Result<HPoint> {
    expect_model(x, Model::PoincareBall, "mobius_matvec")?;
    check_matrix(m, x.dim(), "mobius_matvec")?;
    let mut b = Eager::new();
    let mm = b.const_matrix(m);
    let r = ops::mobius_matvec(&mut b, &mm, &x.coords);
    point(finite(r, "mobius_matvec")?, Model::PoincareBall, x.k)
}

/// Wraps kernel output that already satisfies the constraint up to rounding.
fn point(coords: Vec<f64>, model: Model, k: f64) -> Result<HPoint> {
    let p = HPoint { coords, model, k };
    debug_assert!(
        HPoint::new(p.coords.clone(), model, k).is_ok(),
        "kernel left the manifold: {p:?}"
    );
    Ok(p)
}

pub fn exp_map(x: &HPoint, v: &TangentVec) -> Result<HPoint> {
    no_klein(x, "exp_map")?;
    same_space(x, &v.base, "exp_map")?;
    if x.coords != v.base.coords {
        return Err(Error::contract("exp_map: tangent vector is attached to another point"));
    }
    let mut b = Eager::new();
    let r = ops::expmap(&mut b, x.model, &vec![x.k], &x.coords, &v.coords);
    point(finite(r, "exp_map")?, x.model, x.k)
}

pub fn log_map(x: &HPoint, y: &HPoint) -> Result<TangentVec> {
    no_klein(x, "log_map")?;
    same_space(x, y, "log_map")?;
    if x.coords == y.coords {
        return Ok(TangentVec::zero(x.clone()));
    }
    let mut b = Eager::new();
    let r = ops::logmap(&mut b, x.model, &vec![x.k], &x.coords, &y.coords);
    Ok(TangentVec {
        coords: finite(r, "log_map")?,
        base: x.clone(),
    })
}

/// Exponential map at the origin for an `n`-dimensional tangent vector.
pub fn exp0(model: Model, k: f64, u: &[f64]) -> Result<HPoint> {
    if model == Model::Klein {
        return Err(Error::contract("exp0 is not available on the Klein model"));
    }
    let mut b = Eager::new();
    let r = ops::exp0(&mut b, model, &vec![k], &u.to_vec());
    point(finite(r, "exp0")?, model, k)
}

/// Logarithmic map at the origin, as an `n`-dimensional vector.
pub fn log0(x: &HPoint) -> Result<Vec<f64>> {
    no_klein(x, "log0")?;
    let mut b = Eager::new();
    finite(ops::log0(&mut b, x.model, &vec![x.k], &x.coords), "log0")
}

pub fn lorentz_transport(x: &HPoint, y: &HPoint, v: &TangentVec) -> Result<TangentVec> {
    expect_model(x, Model::Lorentz, "lorentz_transport")?;
    same_space(x, y, "lorentz_transport")?;
    same_space(x, &v.base, "lorentz_transport")?;
    let mut b = Eager::new();
    let r = ops::lorentz_transport(&mut b, &vec![x.k], &x.coords, &y.coords, &v.coords);
    Ok(TangentVec {
        coords: finite(r, "lorentz_transport")?,
        base: y.clone(),
    })
}

/// `(M ⊗ x) ⊕ b`.
pub fn hyp_linear(m: &Matrix, bias: &HPoint, x: &HPoint) -> Result<HPoint> {
    no_klein(x, "hyp_linear")?;
    check_matrix(m, x.dim(), "hyp_linear")?;
    if bias.model != x.model || bias.k != x.k || bias.dim() != m.rows {
        return Err(Error::contract(format!(
            "hyp_linear: bias must be a {}-dimensional {} point",
            m.rows, x.model
        )));
    }
    let mut b = Eager::new();
    let mm = b.const_matrix(m);
    let r = ops::linear(&mut b, x.model, &vec![x.k], &mm, &x.coords, &bias.coords);
    point(finite(r, "hyp_linear")?, x.model, x.k)
}

/// `((M₁ ⊗ x₁) ⊕ (M₂ ⊗ x₂)) ⊕ b`, associating left to right.
pub fn hyp_concat(
    x1: &HPoint,
    x2: &HPoint,
    m1: &Matrix,
    m2: &Matrix,
    bias: &HPoint,
) -> Result<HPoint> {
    no_klein(x1, "hyp_concat")?;
    if x1.model != x2.model || x1.k != x2.k || bias.model != x1.model || bias.k != x1.k {
        return Err(Error::contract("hyp_concat: inputs live on different spaces"));
    }
    check_matrix(m1, x1.dim(), "hyp_concat")?;
    check_matrix(m2, x2.dim(), "hyp_concat")?;
    if m1.rows != m2.rows || bias.dim() != m1.rows {
        return Err(Error::contract(format!(
            "hyp_concat: output dims {} / {} / bias {} disagree",
            m1.rows,
            m2.rows,
            bias.dim()
        )));
    }
    let mut b = Eager::new();
    let a = b.const_matrix(m1);
    let c = b.const_matrix(m2);
    let r = ops::concat(
        &mut b,
        x1.model,
        &vec![x1.k],
        &x1.coords,
        &x2.coords,
        &a,
        &c,
        &bias.coords,
    );
    point(finite(r, "hyp_concat")?, x1.model, x1.k)
}

/// Snaps raw coordinates onto the model. Lorentz input keeps its spatial part
/// and recomputes the time coordinate.
pub fn project(raw: &[f64], model: Model, k: f64) -> Result<HPoint> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("project: non-finite input"));
    }
    Curvature::new(k, false)?;
    if model == Model::Lorentz && raw.len() < 2 {
        return Err(Error::contract("Lorentz points need at least 2 coordinates"));
    }
    let mut b = Eager::new();
    let r = ops::project(&mut b, model, &vec![k], &raw.to_vec());
    Ok(HPoint {
        coords: r,
        model,
        k,
    })
}

/// Unit-curvature Lorentz coordinates of a point in any hyperbolic model.
fn to_unit_lorentz(x: &HPoint) -> Result<Vec<f64>> {
    let c = &x.coords;
    Ok(match x.model {
        Model::Lorentz => {
            let s = 1.0 / x.k.sqrt();
            c.iter().map(|v| v * s).collect()
        }
        Model::PoincareBall => {
            let n2 = dot(c, c);
            let den = 1.0 - n2;
            if den <= BALL_EPS * BALL_EPS {
                return Err(Error::numeric("convert: ball point on the boundary"));
            }
            let mut out = Vec::with_capacity(c.len() + 1);
            out.push((1.0 + n2) / den);
            out.extend(c.iter().map(|v| 2.0 * v / den));
            out
        }
        Model::Klein => {
            let n2 = dot(c, c);
            let den = (1.0 - n2).sqrt();
            if den <= BALL_EPS * BALL_EPS {
                return Err(Error::numeric("convert: Klein point on the boundary"));
            }
            let mut out = Vec::with_capacity(c.len() + 1);
            out.push(1.0 / den);
            out.extend(c.iter().map(|v| v / den));
            out
        }
        Model::Euclidean => unreachable!(),
    })
}

fn from_unit_lorentz(l: &[f64], model: Model, k: f64) -> Result<Vec<f64>> {
    Ok(match model {
        Model::Lorentz => {
            let s = k.sqrt();
            let sp: Vec<f64> = l[1..].iter().map(|v| v * s).collect();
            let t = (k + dot(&sp, &sp)).sqrt();
            std::iter::once(t).chain(sp).collect()
        }
        Model::PoincareBall => {
            let den = 1.0 + l[0];
            l[1..].iter().map(|v| v / den).collect()
        }
        Model::Klein => {
            if l[0] <= BALL_EPS {
                return Err(Error::numeric("convert: degenerate time coordinate"));
            }
            l[1..].iter().map(|v| v / l[0]).collect()
        }
        Model::Euclidean => unreachable!(),
    })
}

/// Isometric change of model, keeping the curvature scale. Ball and Klein
/// coordinates are always unit-ball coordinates.
pub fn convert(x: &HPoint, target: Model) -> Result<HPoint> {
    if !x.model.is_hyperbolic() || !target.is_hyperbolic() {
        return Err(Error::contract(
            "convert is only defined between hyperbolic models",
        ));
    }
    if x.model == target {
        return Ok(x.clone());
    }
    let l = to_unit_lorentz(x)?;
    let out = from_unit_lorentz(&l, target, x.k)?;
    let mut b = Eager::new();
    let out = ops::project(&mut b, target, &vec![x.k], &out);
    point(finite(out, "convert")?, target, x.k)
}

/// Poincaré ball coordinates to Klein coordinates.
pub fn poincare_to_klein(p: &[f64]) -> Vec<f64> {
    let s = 2.0 / (1.0 + dot(p, p));
    p.iter().map(|v| v * s).collect()
}

/// Klein coordinates to Poincaré ball coordinates.
pub fn klein_to_poincare(x: &[f64]) -> Vec<f64> {
    let s = 1.0 / (1.0 + (1.0 - dot(x, x)).max(0.0).sqrt());
    x.iter().map(|v| v * s).collect()
}

/// Einstein midpoint of raw Klein coordinates with Lorentz-factor weights
/// `γ = 1/√(1−‖x‖²)`.
pub fn einstein_midpoint_raw(points: &[&[f64]]) -> Vec<f64> {
    let n = points[0].len();
    let mut acc = vec![0.0; n];
    let mut total = 0.0;
    for p in points {
        let g = 1.0 / (1.0 - dot(p, p)).max(1e-15).sqrt();
        total += g;
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += g * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    acc
}

pub fn einstein_midpoint(points: &[HPoint]) -> Result<HPoint> {
    let first = points
        .first()
        .ok_or_else(|| Error::contract("einstein_midpoint of an empty list"))?;
    for p in points {
        expect_model(p, Model::Klein, "einstein_midpoint")?;
        same_space(first, p, "einstein_midpoint")?;
    }
    let raw: Vec<&[f64]> = points.iter().map(|p| p.coords.as_slice()).collect();
    point(
        finite(einstein_midpoint_raw(&raw), "einstein_midpoint")?,
        Model::Klein,
        first.k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C1: f64 = 1.543_080_634_815_243_7;
    const S1: f64 = 1.175_201_193_643_801_4;

    fn p(c: &[f64]) -> HPoint {
        HPoint::new(c.to_vec(), Model::PoincareBall, 1.0).unwrap()
    }

    fn l(c: &[f64]) -> HPoint {
        HPoint::new(c.to_vec(), Model::Lorentz, 1.0).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn lorentz_inner_examples() {
        assert_eq!(lorentz_inner(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), -1.0);
        assert!((lorentz_inner(&[C1, S1, 0.0], &[1.0, 0.0, 0.0]).unwrap() + C1).abs() < 1e-15);
        assert_eq!(lorentz_inner(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            lorentz_inner(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let x = p(&[0.3, 0.1]);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        let d = distance(&p(&[0.0, 0.0]), &p(&[0.5, 0.0])).unwrap();
        assert!((d - 3f64.ln()).abs() < 1e-12);
        let d = distance(&l(&[1.0, 0.0, 0.0]), &l(&[C1, S1, 0.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lorentz_distance_scales_with_k() {
        let k: f64 = 2.5;
        let o = HPoint::origin(Model::Lorentz, k, 2);
        let y = exp0(Model::Lorentz, k, &[0.7, -0.2]).unwrap();
        let d = distance(&o, &y).unwrap();
        assert!((d - norm(&[0.7, -0.2])).abs() < 1e-12);
        let expected = k.sqrt() * (-lorentz_inner(o.coords(), y.coords()).unwrap() / k).acosh();
        assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn mobius_add_examples() {
        let r = mobius_add(&p(&[0.0, 0.0]), &p(&[0.4, 0.2])).unwrap();
        close(r.coords(), &[0.4, 0.2], 1e-15);
        let r = mobius_add(&p(&[0.5, 0.0]), &p(&[0.5, 0.0])).unwrap();
        close(r.coords(), &[0.8, 0.0], 1e-15);
        let r = mobius_add(&p(&[0.3, 0.2]), &p(&[-0.3, -0.2])).unwrap();
        close(r.coords(), &[0.0, 0.0], 1e-15);
    }

    #[test]
    fn mobius_matvec_examples() {
        let r = mobius_matvec(&Matrix::identity(2), &p(&[0.3, 0.4])).unwrap();
        close(r.coords(), &[0.3, 0.4], 1e-14);
        let r = mobius_matvec(&Matrix::scaled_identity(2, 2.0), &p(&[0.3, 0.0])).unwrap();
        let expected = (2.0 * 0.3f64.atanh()).tanh();
        close(r.coords(), &[expected, 0.0], 1e-14);
        assert!((expected - 0.5505).abs() < 1e-4);
        let rot = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let r = mobius_matvec(&rot, &p(&[0.3, 0.0])).unwrap();
        close(r.coords(), &[0.0, 0.3], 1e-14);
        let r = mobius_matvec(&Matrix::identity(2), &p(&[0.0, 0.0])).unwrap();
        close(r.coords(), &[0.0, 0.0], 0.0);
        let r = mobius_matvec(&Matrix::zeros(2, 2), &p(&[0.3, 0.1])).unwrap();
        close(r.coords(), &[0.0, 0.0], 0.0);
    }

    #[test]
    fn exp_log_examples() {
        let o = p(&[0.0, 0.0]);
        let r = exp_map(&o, &TangentVec::new(vec![1.0, 0.0], o.clone()).unwrap()).unwrap();
        close(r.coords(), &[1f64.tanh(), 0.0], 1e-15);
        let back = log_map(&o, &p(&[0.76159, 0.0])).unwrap();
        close(back.coords(), &[1.0, 0.0], 1e-5);

        let lo = l(&[1.0, 0.0, 0.0]);
        let v = TangentVec::new(vec![0.0, 1.0, 0.0], lo.clone()).unwrap();
        let r = exp_map(&lo, &v).unwrap();
        close(r.coords(), &[C1, S1, 0.0], 1e-12);
        let back = log_map(&lo, &l(&[C1, S1, 0.0])).unwrap();
        close(back.coords(), &[0.0, 1.0, 0.0], 1e-6);

        for x in [p(&[0.2, -0.3]), l(&[C1, S1, 0.0])] {
            let r = exp_map(&x, &TangentVec::zero(x.clone())).unwrap();
            close(r.coords(), x.coords(), 1e-15);
            assert!(log_map(&x, &x).unwrap().coords().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn transport_examples() {
        let x = l(&[C1, S1, 0.0]);
        let v = TangentVec::new(vec![S1, C1, 0.3], x.clone()).unwrap();
        let same = lorentz_transport(&x, &x, &v).unwrap();
        close(same.coords(), v.coords(), 1e-12);

        let o = l(&[1.0, 0.0, 0.0]);
        let u = TangentVec::new(vec![0.0, 1.0, 0.0], o.clone()).unwrap();
        let t = lorentz_transport(&o, &x, &u).unwrap();
        assert!(lorentz_inner(t.coords(), x.coords()).unwrap().abs() < 1e-12);
        assert!((t.norm() - 1.0).abs() < 1e-12);

        // origin-specialised kernel agrees with the general formula
        let mut b = Eager::new();
        let t0 = ops::lorentz_transport0(&mut b, &vec![1.0], &x.coords, &vec![1.0, 0.0]);
        close(&t0, t.coords(), 1e-12);
    }

    #[test]
    fn hyp_linear_examples() {
        let x = p(&[0.3, -0.1]);
        let r = hyp_linear(&Matrix::identity(2), &p(&[0.0, 0.0]), &x).unwrap();
        close(r.coords(), x.coords(), 1e-14);

        let lo = HPoint::origin(Model::Lorentz, 1.0, 2);
        let bias = exp0(Model::Lorentz, 1.0, &[0.4, 0.1]).unwrap();
        let r = hyp_linear(&Matrix::identity(2), &bias, &lo).unwrap();
        close(r.coords(), bias.coords(), 1e-12);

        let r = hyp_linear(&Matrix::scaled_identity(2, 2.0), &p(&[0.0, 0.0]), &p(&[0.3, 0.0]))
            .unwrap();
        close(r.coords(), &[(2.0 * 0.3f64.atanh()).tanh(), 0.0], 1e-14);

        assert!(hyp_linear(&Matrix::identity(3), &p(&[0.0, 0.0]), &x).is_err());
    }

    #[test]
    fn convert_examples() {
        let o = l(&[1.0, 0.0, 0.0]);
        close(convert(&o, Model::PoincareBall).unwrap().coords(), &[0.0, 0.0], 0.0);
        let x = l(&[C1, S1, 0.0]);
        let b = convert(&x, Model::PoincareBall).unwrap();
        close(b.coords(), &[0.5f64.tanh(), 0.0], 1e-12);
        let k = convert(&x, Model::Klein).unwrap();
        close(k.coords(), &[1f64.tanh(), 0.0], 1e-12);
        assert!(convert(&x, Model::Euclidean).is_err());
    }

    #[test]
    fn convert_general_k_preserves_distance() {
        let k = 3.0;
        let a = exp0(Model::Lorentz, k, &[0.8, 0.3]).unwrap();
        let c = exp0(Model::Lorentz, k, &[-0.5, 1.1]).unwrap();
        let d_l = distance(&a, &c).unwrap();
        let d_b = distance(
            &convert(&a, Model::PoincareBall).unwrap(),
            &convert(&c, Model::PoincareBall).unwrap(),
        )
        .unwrap();
        assert!((d_l - d_b).abs() < 1e-10);
        let back = convert(&convert(&a, Model::Klein).unwrap(), Model::Lorentz).unwrap();
        close(back.coords(), a.coords(), 1e-9);
    }

    #[test]
    fn midpoint_examples() {
        let k = |c: &[f64]| HPoint::new(c.to_vec(), Model::Klein, 1.0).unwrap();
        let x = k(&[0.2, 0.3]);
        close(einstein_midpoint(std::slice::from_ref(&x)).unwrap().coords(), x.coords(), 1e-15);
        let m = einstein_midpoint(&[k(&[0.6, 0.0]), k(&[-0.6, 0.0])]).unwrap();
        close(m.coords(), &[0.0, 0.0], 1e-15);
        let m = einstein_midpoint(&[k(&[0.5, 0.0]), k(&[0.0, 0.0])]).unwrap();
        let g = 1.0 / 0.75f64.sqrt();
        close(m.coords(), &[0.5 * g / (g + 1.0), 0.0], 1e-15);
        assert!((m.coords()[0] - 0.26795).abs() < 1e-5);
        assert!(einstein_midpoint(&[]).is_err());
    }

    #[test]
    fn klein_poincare_helpers_match_convert() {
        let b = p(&[0.5, 0.0]);
        let kx = convert(&b, Model::Klein).unwrap();
        close(&poincare_to_klein(b.coords()), kx.coords(), 1e-14);
        close(&poincare_to_klein(&[0.5, 0.0]), &[0.8, 0.0], 1e-15);
        close(&klein_to_poincare(kx.coords()), b.coords(), 1e-14);
    }

    #[test]
    fn hyp_concat_examples() {
        let x1 = p(&[0.2, 0.1]);
        let o = p(&[0.0, 0.0]);
        let x2 = p(&[0.4, -0.3]);
        let r = hyp_concat(&x1, &x2, &Matrix::identity(2), &Matrix::zeros(2, 2), &o).unwrap();
        close(r.coords(), x1.coords(), 1e-14);
        let r = hyp_concat(&o, &o, &Matrix::identity(2), &Matrix::identity(2), &o).unwrap();
        close(r.coords(), &[0.0, 0.0], 0.0);
        let h = p(&[0.5, 0.0]);
        let r = hyp_concat(&h, &h, &Matrix::identity(2), &Matrix::identity(2), &o).unwrap();
        close(r.coords(), &[0.8, 0.0], 1e-14);
        assert!(hyp_concat(&h, &h, &Matrix::identity(2), &Matrix::identity(3), &o).is_err());
    }

    #[test]
    fn project_examples() {
        let r = project(&[0.3, 0.4], Model::PoincareBall, 1.0).unwrap();
        close(r.coords(), &[0.3, 0.4], 0.0);
        let r = project(&[3.0, 4.0], Model::PoincareBall, 1.0).unwrap();
        close(r.coords(), &[0.6 * (1.0 - 1e-5), 0.8 * (1.0 - 1e-5)], 1e-15);
        let r = project(&[999.0, S1, 0.0], Model::Lorentz, 1.0).unwrap();
        close(r.coords(), &[C1, S1, 0.0], 1e-14);
        assert!(matches!(
            project(&[f64::NAN, 0.0], Model::PoincareBall, 1.0),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn validation_rejects_off_manifold_points() {
        assert!(HPoint::new(vec![0.6, 0.8], Model::PoincareBall, 1.0).is_err());
        assert!(HPoint::new(vec![1.0, 0.5, 0.0], Model::Lorentz, 1.0).is_err());
        assert!(HPoint::new(vec![-1.0, 0.0], Model::Lorentz, 1.0).is_err());
        let o = l(&[1.0, 0.0, 0.0]);
        assert!(TangentVec::new(vec![1.0, 0.0, 0.0], o).is_err());
    }

    #[test]
    fn curvature_reparameterization_round_trips() {
        for k in [0.01, 0.5, 1.0, 4.0, 100.0] {
            let c = Curvature::new(k, true).unwrap();
            let back = Curvature::from_raw(c.raw(), true);
            assert!((back.k() - k).abs() < 1e-9 * k.max(1.0));
        }
        assert!(Curvature::from_raw(-50.0, true).k() > 0.0);
        assert!(Curvature::new(0.0, false).is_err());
    }

    fn ball_point(max_norm: f64) -> impl Strategy<Value = Vec<f64>> {
        (prop::collection::vec(-1.0f64..1.0, 3), 0.0f64..1.0).prop_map(move |(d, r)| {
            let n = norm(&d).max(1e-9);
            d.iter().map(|v| v / n * r * max_norm).collect()
        })
    }

    fn lorentz_point() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 3).prop_map(|u| {
            exp0(Model::Lorentz, 1.0, &u).unwrap().into_coords()
        })
    }

    fn small_vec(max_norm: f64) -> impl Strategy<Value = Vec<f64>> {
        ball_point(max_norm)
    }

    fn lorentz_tangent(x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut b = Eager::new();
        ops::lorentz_transport0(&mut b, &vec![1.0], &x.to_vec(), &u.to_vec())
    }

    proptest! {
        #[test]
        fn isometry_between_lorentz_and_ball(a in lorentz_point(), c in lorentz_point()) {
            let (a, c) = (l(&a), l(&c));
            let d_l = distance(&a, &c).unwrap();
            let d_b = distance(
                &convert(&a, Model::PoincareBall).unwrap(),
                &convert(&c, Model::PoincareBall).unwrap(),
            ).unwrap();
            prop_assert!((d_l - d_b).abs() < 1e-6);
        }

        #[test]
        fn ball_exp_log_inversion(x in ball_point(0.7), v in small_vec(2.0)) {
            let x = p(&x);
            let y = exp_map(&x, &TangentVec::new(v.clone(), x.clone()).unwrap()).unwrap();
            let back = log_map(&x, &y).unwrap();
            for (a, b) in back.coords().iter().zip(&v) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn lorentz_exp_log_inversion(x in lorentz_point(), u in small_vec(2.0)) {
            let x = l(&x);
            let v = lorentz_tangent(x.coords(), &u);
            let y = exp_map(&x, &TangentVec::new(v.clone(), x.clone()).unwrap()).unwrap();
            prop_assert!(lorentz_residual(y.coords(), 1.0) < lorentz_tol(y.coords()));
            let back = log_map(&x, &y).unwrap();
            prop_assert!(lorentz_inner(back.coords(), x.coords()).unwrap().abs() < 1e-6);
            for (a, b) in back.coords().iter().zip(&v) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn ball_geodesic_speed(x in ball_point(0.7), v in small_vec(1.0)) {
            let x = p(&x);
            let t = TangentVec::new(v, x.clone()).unwrap();
            let y = exp_map(&x, &t).unwrap();
            prop_assert!((distance(&x, &y).unwrap() - t.norm()).abs() < 1e-6);
        }

        #[test]
        fn transport_preserves_inner_products(
            x in lorentz_point(), y in lorentz_point(), u in small_vec(2.0), w in small_vec(2.0)
        ) {
            let (x, y) = (l(&x), l(&y));
            let tu = TangentVec::new(lorentz_tangent(x.coords(), &u), x.clone()).unwrap();
            let tw = TangentVec::new(lorentz_tangent(x.coords(), &w), x.clone()).unwrap();
            let pu = lorentz_transport(&x, &y, &tu).unwrap();
            let pw = lorentz_transport(&x, &y, &tw).unwrap();
            let before = lorentz_inner(tu.coords(), tw.coords()).unwrap();
            let after = lorentz_inner(pu.coords(), pw.coords()).unwrap();
            prop_assert!((before - after).abs() < 1e-6 * (1.0 + before.abs()));
            prop_assert!(lorentz_inner(pu.coords(), y.coords()).unwrap().abs() < 1e-6);
        }

        #[test]
        fn identities(x in ball_point(0.9), a in lorentz_point()) {
            let x = p(&x);
            let o = p(&[0.0, 0.0, 0.0]);
            let r = mobius_add(&o, &x).unwrap();
            for (u, v) in r.coords().iter().zip(x.coords()) { prop_assert!((u - v).abs() < 1e-12); }
            let r = mobius_matvec(&Matrix::identity(3), &x).unwrap();
            for (u, v) in r.coords().iter().zip(x.coords()) { prop_assert!((u - v).abs() < 1e-9); }
            let a = l(&a);
            for m in [Model::PoincareBall, Model::Klein] {
                let back = convert(&convert(&a, m).unwrap(), Model::Lorentz).unwrap();
                for (u, v) in back.coords().iter().zip(a.coords()) {
                    prop_assert!((u - v).abs() < 1e-9 * a.coords()[0].max(1.0));
                }
            }
        }

        #[test]
        fn midpoint_containment(pts in prop::collection::vec(ball_point(0.95), 1..6)) {
            let pts: Vec<HPoint> = pts
                .into_iter()
                .map(|c| HPoint::new(c, Model::Klein, 1.0).unwrap())
                .collect();
            let m = einstein_midpoint(&pts).unwrap();
            let max = pts.iter().map(|q| norm(q.coords())).fold(0.0, f64::max);
            prop_assert!(norm(m.coords()) < max + 1e-9);
        }
    }
}
