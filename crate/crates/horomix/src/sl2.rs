//! Exact SL(2,R) matrix algebra and the homogeneous flows.
//!
//! Matrices are stored row-major as four `f64` entries. The four
//! one-parameter subgroups used by the lab (stable horocycle, geodesic,
//! unstable horocycle, rotation) have closed-form exponentials, so no
//! general matrix exponential is needed.

use crate::error::{Error, Result};

/// A 2x2 real matrix of determinant 1, row-major `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Lie-algebra directions spanning the flows of interest: `U` generates the
/// stable horocycle flow, `X` the geodesic flow, `V` the unstable horocycle
/// flow and `Theta` the maximal compact subgroup SO(2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LieDirection {
    U,
    X,
    V,
    Theta,
}

impl LieDirection {
    pub const ALL: [LieDirection; 4] = [
        LieDirection::U,
        LieDirection::X,
        LieDirection::V,
        LieDirection::Theta,
    ];

    /// The generator matrix (a traceless 2x2 matrix, not a group element).
    pub fn generator(self) -> [f64; 4] {
        match self {
            LieDirection::U => [0.0, 1.0, 0.0, 0.0],
            LieDirection::X => [0.5, 0.0, 0.0, -0.5],
            LieDirection::V => [0.0, 0.0, 1.0, 0.0],
            LieDirection::Theta => [0.0, 0.5, -0.5, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LieDirection::U => "U",
            LieDirection::X => "X",
            LieDirection::V => "V",
            LieDirection::Theta => "Theta",
        }
    }
}

impl std::str::FromStr for LieDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "U" | "u" => Ok(LieDirection::U),
            "X" | "x" => Ok(LieDirection::X),
            "V" | "v" => Ok(LieDirection::V),
            "Theta" | "theta" => Ok(LieDirection::Theta),
            other => Err(Error::InvalidInput(format!(
                "unknown Lie direction {other:?} (expected U, X, V or Theta)"
            ))),
        }
    }
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> GroupElement {
        GroupElement { a, b, c, d }
    }

    pub fn from_entries(e: [f64; 4]) -> GroupElement {
        GroupElement::new(e[0], e[1], e[2], e[3])
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    /// Matrix product `self * rhs`.
    pub fn mul(&self, rhs: &GroupElement) -> GroupElement {
        GroupElement {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }

    /// Inverse via the determinant-1 cofactor formula `[[d, -b], [-c, a]]`.
    pub fn inv(&self) -> GroupElement {
        GroupElement {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn neg(&self) -> GroupElement {
        GroupElement {
            a: -self.a,
            b: -self.b,
            c: -self.c,
            d: -self.d,
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn frobenius_dist(&self, rhs: &GroupElement) -> f64 {
        let da = self.a - rhs.a;
        let db = self.b - rhs.b;
        let dc = self.c - rhs.c;
        let dd = self.d - rhs.d;
        (da * da + db * db + dc * dc + dd * dd).sqrt()
    }

    /// Frobenius distance treating `g` and `-g` as the same element.
    pub fn frobenius_dist_signless(&self, rhs: &GroupElement) -> f64 {
        self.frobenius_dist(rhs).min(self.frobenius_dist(&rhs.neg()))
    }

    /// Hyperbolic displacement of the base point: d(g.i, i) = arccosh(|g|^2_F / 2).
    pub fn displacement(&self) -> f64 {
        let half = (self.frobenius_norm_sq() / 2.0).max(1.0);
        half.acosh()
    }

    /// Rescale by 1/sqrt(det) to pull the determinant back to 1. Used as a
    /// drift-control step in long multiplication loops.
    pub fn renormalize_det(&self) -> GroupElement {
        let det = self.det();
        if det <= 0.0 || !det.is_finite() {
            return *self;
        }
        let s = 1.0 / det.sqrt();
        GroupElement {
            a: self.a * s,
            b: self.b * s,
            c: self.c * s,
            d: self.d * s,
        }
    }

    /// Flip sign so the first entry of largest absolute value is positive.
    pub fn sign_normalize(&self) -> GroupElement {
        let e = self.entries();
        let mut best = 0usize;
        for (i, x) in e.iter().enumerate() {
            if x.abs() > e[best].abs() {
                best = i;
            }
        }
        if e[best] < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    /// Tangent matrix of t -> g * exp(t * dir) at t = 0, i.e. `g * dir`.
    /// The result is a raw 2x2 matrix (det 0), returned as entries.
    pub fn right_tangent(&self, dir: LieDirection) -> [f64; 4] {
        let m = dir.generator();
        mul_raw(self.entries(), m)
    }
}

/// Raw 2x2 product for Lie-algebra intermediates (no determinant contract).
pub(crate) fn mul_raw(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    [
        p[0] * q[0] + p[1] * q[2],
        p[0] * q[1] + p[1] * q[3],
        p[2] * q[0] + p[3] * q[2],
        p[2] * q[1] + p[3] * q[3],
    ]
}

pub(crate) fn frobenius_inner(p: [f64; 4], q: [f64; 4]) -> f64 {
    p[0] * q[0] + p[1] * q[1] + p[2] * q[2] + p[3] * q[3]
}

/// Closed-form one-parameter subgroup exponential `exp(t * dir)`.
///
/// `exp(tU) = [[1,t],[0,1]]`, `exp(tX) = [[e^{t/2},0],[0,e^{-t/2}]]`,
/// `exp(tV) = [[1,0],[t,1]]`, `exp(tTheta)` rotates by t/2.
pub fn exp_flow(dir: LieDirection, t: f64) -> Result<GroupElement> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "exp_flow requires finite t, got {t}"
        )));
    }
    Ok(match dir {
        LieDirection::U => GroupElement::new(1.0, t, 0.0, 1.0),
        LieDirection::X => {
            let e = (t / 2.0).exp();
            GroupElement::new(e, 0.0, 0.0, 1.0 / e)
        }
        LieDirection::V => GroupElement::new(1.0, 0.0, t, 1.0),
        LieDirection::Theta => {
            let (s, c) = (t / 2.0).sin_cos();
            GroupElement::new(c, s, -s, c)
        }
    })
}

/// Frobenius norm of `exp(sX) exp(tU) - exp(e^s t U) exp(sX)`, the defect in
/// the renormalization identity h_t o g_s = g_s o h_{e^s t} evaluated in
/// double precision. Analytically zero.
pub fn renormalization_residual(t: f64, s: f64) -> Result<f64> {
    if !t.is_finite() || !s.is_finite() {
        return Err(Error::InvalidInput(
            "renormalization_residual requires finite t, s".into(),
        ));
    }
    let lhs = exp_flow(LieDirection::X, s)?.mul(&exp_flow(LieDirection::U, t)?);
    let rhs = exp_flow(LieDirection::U, s.exp() * t)?.mul(&exp_flow(LieDirection::X, s)?);
    Ok(lhs.frobenius_dist(&rhs))
}
