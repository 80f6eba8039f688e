//! Elementwise scalar functions with their derivatives.
//!
//! Several hyperbolic maps have the shape `f(‖v‖) · v / ‖v‖`, which is 0/0 at
//! the origin. Writing them as `g(‖v‖²) · v` with `g` smooth in the squared
//! norm removes the singularity; the `*Sqrt` variants below are those `g`s and
//! switch to Taylor series near zero.

/// Negative-side slope of the leaky rectifier used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Lower clamp for arcosh arguments.
pub const ARCOSH_MIN: f64 = 1.0 + 1e-12;

/// Upper clamp on squared norms fed to artanh.
pub const ARTANH_MAX_SQ: f64 = 1.0 - 1e-12;

const SERIES_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Recip,
    Exp,
    Ln,
    Tanh,
    Softplus,
    LeakyRelu,
    /// `arcosh(max(x, 1 + 1e-12))`
    Arcosh,
    /// `s ↦ cosh(√s)`
    CoshSqrt,
    /// `s ↦ sinh(√s)/√s`
    SinhcSqrt,
    /// `s ↦ tanh(√s)/√s`
    TanhcSqrt,
    /// `s ↦ artanh(√s)/√s`, `s` clamped below 1
    ArtanhcSqrt,
    /// `s ↦ arsinh(√s)/√s`
    ArsinhcSqrt,
    /// `a ↦ arcosh(a)/√(a²−1)`, `a` clamped to ≥ 1
    ArcoshRatio,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Series coefficients (value) for the squared-norm functions.
const SINHC: [f64; 5] = [1.0, 1.0 / 6.0, 1.0 / 120.0, 1.0 / 5040.0, 1.0 / 362880.0];
const COSH: [f64; 5] = [1.0, 0.5, 1.0 / 24.0, 1.0 / 720.0, 1.0 / 40320.0];
const TANHC: [f64; 5] = [1.0, -1.0 / 3.0, 2.0 / 15.0, -17.0 / 315.0, 62.0 / 2835.0];
const ARTANHC: [f64; 5] = [1.0, 1.0 / 3.0, 1.0 / 5.0, 1.0 / 7.0, 1.0 / 9.0];
const ARSINHC: [f64; 5] = [1.0, -1.0 / 6.0, 3.0 / 40.0, -5.0 / 112.0, 35.0 / 1152.0];
const ARCOSH_RATIO: [f64; 5] = [1.0, -1.0 / 3.0, 2.0 / 15.0, -2.0 / 35.0, 8.0 / 315.0];

fn dpoly(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, &ci)| acc * x + ci * i as f64)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Recip => "recip",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Tanh => "tanh",
            Func::Softplus => "softplus",
            Func::LeakyRelu => "leaky_relu",
            Func::Arcosh => "arcosh",
            Func::CoshSqrt => "cosh_sqrt",
            Func::SinhcSqrt => "sinhc_sqrt",
            Func::TanhcSqrt => "tanhc_sqrt",
            Func::ArtanhcSqrt => "artanhc_sqrt",
            Func::ArsinhcSqrt => "arsinhc_sqrt",
            Func::ArcoshRatio => "arcosh_ratio",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Func::Sqrt => x.max(0.0).sqrt(),
            Func::Recip => 1.0 / x,
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Tanh => x.tanh(),
            Func::Softplus => softplus(x),
            Func::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Func::Arcosh => x.max(ARCOSH_MIN).acosh(),
            Func::CoshSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    poly(&COSH, x)
                } else {
                    x.max(0.0).sqrt().cosh()
                }
            }
            Func::SinhcSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    poly(&SINHC, x)
                } else {
                    let r = x.max(0.0).sqrt();
                    r.sinh() / r
                }
            }
            Func::TanhcSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    poly(&TANHC, x)
                } else {
                    let r = x.max(0.0).sqrt();
                    r.tanh() / r
                }
            }
            Func::ArtanhcSqrt => {
                let s = x.min(ARTANH_MAX_SQ);
                if s.abs() < SERIES_CUTOFF {
                    poly(&ARTANHC, s)
                } else {
                    let r = s.max(0.0).sqrt();
                    r.atanh() / r
                }
            }
            Func::ArsinhcSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    poly(&ARSINHC, x)
                } else {
                    let r = x.max(0.0).sqrt();
                    r.asinh() / r
                }
            }
            Func::ArcoshRatio => {
                let t = (x - 1.0).max(0.0);
                if t < SERIES_CUTOFF {
                    poly(&ARCOSH_RATIO, t)
                } else {
                    let root = (t * (2.0 + t)).sqrt();
                    (t + root).ln_1p() / root
                }
            }
        }
    }

    /// Derivative at `x`, given the already computed value `y = f(x)`.
    pub fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Func::Sqrt => 0.5 / y,
            Func::Recip => -y * y,
            Func::Exp => y,
            Func::Ln => 1.0 / x,
            Func::Tanh => 1.0 - y * y,
            Func::Softplus => sigmoid(x),
            Func::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Func::Arcosh => {
                if x < ARCOSH_MIN {
                    0.0
                } else {
                    1.0 / (x * x - 1.0).sqrt()
                }
            }
            Func::CoshSqrt => {
                // d/ds cosh(√s) = sinh(√s) / (2√s)
                if x.abs() < SERIES_CUTOFF {
                    dpoly(&COSH, x)
                } else {
                    0.5 * Func::SinhcSqrt.eval(x)
                }
            }
            Func::SinhcSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    dpoly(&SINHC, x)
                } else {
                    let r = x.sqrt();
                    (r * r.cosh() - r.sinh()) / (2.0 * r * r * r)
                }
            }
            Func::TanhcSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    dpoly(&TANHC, x)
                } else {
                    let r = x.sqrt();
                    let sech2 = 1.0 - r.tanh().powi(2);
                    (r * sech2 - r.tanh()) / (2.0 * r * r * r)
                }
            }
            Func::ArtanhcSqrt => {
                if x > ARTANH_MAX_SQ {
                    0.0
                } else if x.abs() < SERIES_CUTOFF {
                    dpoly(&ARTANHC, x)
                } else {
                    let r = x.sqrt();
                    (r / (1.0 - x) - r.atanh()) / (2.0 * r * r * r)
                }
            }
            Func::ArsinhcSqrt => {
                if x.abs() < SERIES_CUTOFF {
                    dpoly(&ARSINHC, x)
                } else {
                    let r = x.sqrt();
                    (r / (1.0 + x).sqrt() - r.asinh()) / (2.0 * r * r * r)
                }
            }
            Func::ArcoshRatio => {
                let t = (x - 1.0).max(0.0);
                if t < SERIES_CUTOFF {
                    dpoly(&ARCOSH_RATIO, t)
                } else {
                    let a = 1.0 + t;
                    (1.0 - a * y) / (t * (2.0 + t))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Func; 14] = [
        Func::Sqrt,
        Func::Recip,
        Func::Exp,
        Func::Ln,
        Func::Tanh,
        Func::Softplus,
        Func::LeakyRelu,
        Func::Arcosh,
        Func::CoshSqrt,
        Func::SinhcSqrt,
        Func::TanhcSqrt,
        Func::ArtanhcSqrt,
        Func::ArsinhcSqrt,
        Func::ArcoshRatio,
    ];

    fn domain_point(f: Func, base: f64) -> f64 {
        match f {
            Func::Arcosh => 1.5 + base,
            Func::ArcoshRatio => 1.0 + base,
            Func::ArtanhcSqrt => base.min(0.9),
            Func::Sqrt | Func::Ln | Func::Recip => 0.3 + base,
            _ => base,
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        for f in ALL {
            for &base in &[0.0004, 0.002, 0.05, 0.4, 0.8, 2.0] {
                let x = domain_point(f, base);
                let h = 1e-6;
                let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let an = f.deriv(x, f.eval(x));
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "{} at {x}: fd {fd} analytic {an}",
                    f.name()
                );
            }
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_cutoff() {
        for f in [
            Func::CoshSqrt,
            Func::SinhcSqrt,
            Func::TanhcSqrt,
            Func::ArtanhcSqrt,
            Func::ArsinhcSqrt,
        ] {
            let below = f.eval(SERIES_CUTOFF * (1.0 - 1e-9));
            let above = f.eval(SERIES_CUTOFF * (1.0 + 1e-9));
            assert!((below - above).abs() < 1e-11, "{}", f.name());
        }
        let below = Func::ArcoshRatio.eval(1.0 + SERIES_CUTOFF * (1.0 - 1e-9));
        let above = Func::ArcoshRatio.eval(1.0 + SERIES_CUTOFF * (1.0 + 1e-9));
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn closed_forms() {
        let r: f64 = 0.7;
        assert!((Func::SinhcSqrt.eval(r * r) - r.sinh() / r).abs() < 1e-15);
        assert!((Func::TanhcSqrt.eval(r * r) - r.tanh() / r).abs() < 1e-15);
        assert!((Func::ArtanhcSqrt.eval(r * r) - r.atanh() / r).abs() < 1e-15);
        assert!((Func::ArsinhcSqrt.eval(r * r) - r.asinh() / r).abs() < 1e-15);
        let a: f64 = 1.8;
        assert!((Func::ArcoshRatio.eval(a) - a.acosh() / (a * a - 1.0).sqrt()).abs() < 1e-14);
        assert_eq!(Func::SinhcSqrt.eval(0.0), 1.0);
        assert_eq!(Func::ArcoshRatio.eval(1.0), 1.0);
        assert!(Func::ArcoshRatio.eval(0.999).is_finite());
    }
}
