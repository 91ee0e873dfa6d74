//! Smooth invariant observables built as automorphization sums of compactly
//! supported bumps, their low-order derivatives, zero-mean projection, and
//! construction of strictly positive time-change generators.
//!
//! A bump observable is `f(g) = amplitude * sum_gamma rho(|gamma g - c|_F / radius)`
//! where the sum runs over the cached group ball together with the negated
//! matrices (so the sum is blind to the sign of the representative) and
//! `rho(r) = exp(1 - 1/(1 - r^2))` for `r < 1`, else 0. The sum is finite,
//! smooth, and invariant under the lattice by construction, provided every
//! group element that could reach the support is inside the cached ball;
//! construction computes the norm cap under which that holds.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{HaarSampler, Lattice, QuotientPoint};
use crate::sl2::{frobenius_inner, mul_raw, GroupElement, LieDirection};

/// Smooth function on the quotient with evaluation and derivative access
/// along Lie-algebra directions.
///
/// `eval` and the derivatives accept any representative whose Frobenius norm
/// is at most [`Observable::eval_norm_cap`]; reduced representatives always
/// qualify.
pub trait Observable: Send + Sync {
    fn eval(&self, g: &GroupElement) -> f64;

    /// Derivative along an arbitrary Lie-algebra element `w` (raw 2x2).
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64;

    /// Second derivative word: apply `w2` first, then `w1`.
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64;

    /// A bound on sup |f| over the whole space.
    fn sup_bound(&self) -> f64;

    /// Largest representative norm for which the automorphization sum is
    /// complete.
    fn eval_norm_cap(&self) -> f64;

    fn eval_point(&self, x: &QuotientPoint) -> f64 {
        self.eval(x.rep())
    }

    fn lie_derivative(&self, dir: LieDirection, g: &GroupElement) -> f64 {
        self.deriv(&dir.generator(), g)
    }
}

/// The C-infinity profile in terms of the squared scaled distance
/// `s = (dist/radius)^2`: `exp(1 - 1/(1-s))` for s < 1, else 0.
#[inline]
pub fn profile(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s)).exp()
    }
}

#[inline]
fn profile_d(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let inv = 1.0 / (1.0 - s);
        -profile(s) * inv * inv
    }
}

#[inline]
fn profile_dd(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let inv = 1.0 / (1.0 - s);
        profile(s) * (inv * inv * inv * inv - 2.0 * inv * inv * inv)
    }
}

/// Parameters of a bump observable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpSpec {
    pub center: GroupElement,
    pub radius: f64,
    pub amplitude: f64,
    pub ball_radius: f64,
}

impl BumpSpec {
    pub fn new(center: GroupElement, radius: f64, amplitude: f64, ball_radius: f64) -> BumpSpec {
        BumpSpec {
            center,
            radius,
            amplitude,
            ball_radius,
        }
    }
}

/// A lattice-invariant automorphized bump.
pub struct Bump {
    spec: BumpSpec,
    /// Ball elements and their negations.
    translates: Arc<Vec<GroupElement>>,
    sup_bound: f64,
    eval_norm_cap: f64,
}

impl Bump {
    pub fn new(lattice: &Lattice, spec: BumpSpec) -> Result<Bump> {
        if !(spec.radius > 0.0) || !spec.radius.is_finite() {
            return Err(Error::InvalidInput("bump radius must be positive".into()));
        }
        if (spec.center.det() - 1.0).abs() > 1e-9 || !spec.center.is_finite() {
            return Err(Error::InvalidInput(
                "bump center must be a determinant-1 matrix".into(),
            ));
        }
        let ball = lattice.ball(spec.ball_radius)?;
        let mut translates = Vec::with_capacity(2 * ball.len());
        for g in ball.iter() {
            translates.push(*g);
            translates.push(g.neg());
        }

        // Norm cap: elements outside the cached ball must not be able to
        // reach the support. The first excluded shell sits at displacement
        // d_next, hence matrix norm sqrt(2 cosh d_next); any point x with
        // (|c| + r) |x| below that norm has a complete automorphization sum.
        let probe = lattice.ball((spec.ball_radius + 0.75).min(lattice.params().ball_radius_cap))?;
        let keep = 2.0 * spec.ball_radius.cosh() + 1e-9;
        let next_norm_sq = probe
            .iter()
            .map(|g| g.frobenius_norm_sq())
            .filter(|&n| n > keep)
            .fold(f64::INFINITY, f64::min);
        let reach = spec.center.frobenius_norm() + spec.radius;
        let eval_norm_cap = if next_norm_sq.is_finite() {
            0.999 * next_norm_sq.sqrt() / reach
        } else {
            // no further shell below the probe radius; cap from the probe bound
            0.999 * (2.0 * (spec.ball_radius + 0.75).cosh()).sqrt() / reach
        };
        let max_reduced = (2.0 * lattice.circumradius().cosh()).sqrt();
        if eval_norm_cap < max_reduced {
            return Err(Error::InvalidInput(format!(
                "ball_radius {} too small for this bump: norm cap {eval_norm_cap:.3} \
                 below the reduced-representative bound {max_reduced:.3}",
                spec.ball_radius
            )));
        }

        let sup_bound = spec.amplitude.abs() * overlap_bound(&translates, &spec) as f64;
        Ok(Bump {
            spec,
            translates: Arc::new(translates),
            sup_bound,
            eval_norm_cap,
        })
    }

    pub fn spec(&self) -> &BumpSpec {
        &self.spec
    }

    /// Signed translate list (each ball element and its negation).
    pub fn translates(&self) -> &Arc<Vec<GroupElement>> {
        &self.translates
    }

    #[inline]
    fn scaled_dist_sq(&self, t: &GroupElement, g: &GroupElement) -> (f64, GroupElement) {
        let m = t.mul(g);
        let d = m.frobenius_dist(&self.spec.center);
        ((d / self.spec.radius) * (d / self.spec.radius), m)
    }
}

/// Upper bound on how many translate supports can contain a common point.
/// For a pair (gamma1, gamma2) the supports are certifiably disjoint when
/// the unconstrained minimum of |gamma1 x - c|^2 + |gamma2 x - c|^2 over all
/// real 2x2 matrices x is at least 2 r^2 (a point in both supports would
/// make the sum smaller). The minimum is a linear least-squares solve:
/// (g1' g1 + g2' g2) x = (g1' + g2') c, columnwise.
fn overlap_bound(translates: &[GroupElement], spec: &BumpSpec) -> usize {
    let two_r2 = 2.0 * spec.radius * spec.radius;
    let c = spec.center.entries();
    let mut max_deg = 0usize;
    for (i, g1) in translates.iter().enumerate() {
        let mut deg = 0usize;
        for (j, g2) in translates.iter().enumerate() {
            if i == j {
                continue;
            }
            let t1 = [g1.a, g1.c, g1.b, g1.d]; // transpose
            let t2 = [g2.a, g2.c, g2.b, g2.d];
            let a = [
                t1[0] * g1.a + t1[1] * g1.c + t2[0] * g2.a + t2[1] * g2.c,
                t1[0] * g1.b + t1[1] * g1.d + t2[0] * g2.b + t2[1] * g2.d,
                t1[2] * g1.a + t1[3] * g1.c + t2[2] * g2.a + t2[3] * g2.c,
                t1[2] * g1.b + t1[3] * g1.d + t2[2] * g2.b + t2[3] * g2.d,
            ];
            let tsum = [t1[0] + t2[0], t1[1] + t2[1], t1[2] + t2[2], t1[3] + t2[3]];
            let b = mul_raw(tsum, c);
            let det = a[0] * a[3] - a[1] * a[2];
            if det.abs() < 1e-12 {
                deg += 1;
                continue;
            }
            // columnwise solve A x = b
            let x = [
                (a[3] * b[0] - a[1] * b[2]) / det,
                (a[3] * b[1] - a[1] * b[3]) / det,
                (-a[2] * b[0] + a[0] * b[2]) / det,
                (-a[2] * b[1] + a[0] * b[3]) / det,
            ];
            let r1 = mul_raw(g1.entries(), x);
            let r2 = mul_raw(g2.entries(), x);
            let val: f64 = (0..4)
                .map(|k| (r1[k] - c[k]).powi(2) + (r2[k] - c[k]).powi(2))
                .sum();
            if val < two_r2 {
                deg += 1;
            }
        }
        max_deg = max_deg.max(deg);
    }
    max_deg + 1
}

impl Observable for Bump {
    fn eval(&self, g: &GroupElement) -> f64 {
        debug_assert!(g.frobenius_norm_sq() <= self.eval_norm_cap * self.eval_norm_cap * 1.0001);
        let mut acc = 0.0;
        for t in self.translates.iter() {
            let (s, _) = self.scaled_dist_sq(t, g);
            if s < 1.0 {
                acc += profile(s);
            }
        }
        self.spec.amplitude * acc
    }

    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        let inv_r2 = 1.0 / (self.spec.radius * self.spec.radius);
        let gw = mul_raw(g.entries(), *w);
        let mut acc = 0.0;
        for t in self.translates.iter() {
            let (s, m) = self.scaled_dist_sq(t, g);
            if s < 1.0 {
                let diff = [
                    m.a - self.spec.center.a,
                    m.b - self.spec.center.b,
                    m.c - self.spec.center.c,
                    m.d - self.spec.center.d,
                ];
                let tgw = mul_raw(t.entries(), gw);
                let ds = 2.0 * inv_r2 * frobenius_inner(tgw, diff);
                acc += profile_d(s) * ds;
            }
        }
        self.spec.amplitude * acc
    }

    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        let inv_r2 = 1.0 / (self.spec.radius * self.spec.radius);
        let ge = g.entries();
        let gw1 = mul_raw(ge, *w1);
        let gw2 = mul_raw(ge, *w2);
        let gw12 = mul_raw(gw1, *w2);
        let mut acc = 0.0;
        for t in self.translates.iter() {
            let (s, m) = self.scaled_dist_sq(t, g);
            if s < 1.0 {
                let te = t.entries();
                let diff = [
                    m.a - self.spec.center.a,
                    m.b - self.spec.center.b,
                    m.c - self.spec.center.c,
                    m.d - self.spec.center.d,
                ];
                let tgw1 = mul_raw(te, gw1);
                let tgw2 = mul_raw(te, gw2);
                let tgw12 = mul_raw(te, gw12);
                let ds1 = 2.0 * inv_r2 * frobenius_inner(tgw1, diff);
                let ds2 = 2.0 * inv_r2 * frobenius_inner(tgw2, diff);
                let cross =
                    2.0 * inv_r2 * (frobenius_inner(tgw12, diff) + frobenius_inner(tgw2, tgw1));
                acc += profile_dd(s) * ds1 * ds2 + profile_d(s) * cross;
            }
        }
        self.spec.amplitude * acc
    }

    fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    fn eval_norm_cap(&self) -> f64 {
        self.eval_norm_cap
    }
}

/// `inner - shift`, the zero-mean projection of an observable.
pub struct Centered<O: Observable> {
    pub inner: O,
    pub shift: f64,
    pub shift_stderr: f64,
}

impl<O: Observable> Observable for Centered<O> {
    fn eval(&self, g: &GroupElement) -> f64 {
        self.inner.eval(g) - self.shift
    }
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        self.inner.deriv(w, g)
    }
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        self.inner.deriv2(w1, w2, g)
    }
    fn sup_bound(&self) -> f64 {
        self.inner.sup_bound() + self.shift.abs()
    }
    fn eval_norm_cap(&self) -> f64 {
        self.inner.eval_norm_cap()
    }
}

/// `factor * inner`, used e.g. to normalize families to unit L2 norm.
pub struct Scaled<O: Observable> {
    pub inner: O,
    pub factor: f64,
}

impl<O: Observable> Observable for Scaled<O> {
    fn eval(&self, g: &GroupElement) -> f64 {
        self.factor * self.inner.eval(g)
    }
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        self.factor * self.inner.deriv(w, g)
    }
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        self.factor * self.inner.deriv2(w1, w2, g)
    }
    fn sup_bound(&self) -> f64 {
        self.factor.abs() * self.inner.sup_bound()
    }
    fn eval_norm_cap(&self) -> f64 {
        self.inner.eval_norm_cap()
    }
}

impl<O: Observable + ?Sized> Observable for Arc<O> {
    fn eval(&self, g: &GroupElement) -> f64 {
        (**self).eval(g)
    }
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        (**self).deriv(w, g)
    }
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        (**self).deriv2(w1, w2, g)
    }
    fn sup_bound(&self) -> f64 {
        (**self).sup_bound()
    }
    fn eval_norm_cap(&self) -> f64 {
        (**self).eval_norm_cap()
    }
}

/// Constant function; derivatives vanish.
pub struct ConstObs(pub f64);

impl Observable for ConstObs {
    fn eval(&self, _: &GroupElement) -> f64 {
        self.0
    }
    fn deriv(&self, _: &[f64; 4], _: &GroupElement) -> f64 {
        0.0
    }
    fn deriv2(&self, _: &[f64; 4], _: &[f64; 4], _: &GroupElement) -> f64 {
        0.0
    }
    fn sup_bound(&self) -> f64 {
        self.0.abs()
    }
    fn eval_norm_cap(&self) -> f64 {
        f64::INFINITY
    }
}

/// Pointwise product of two observables (Leibniz derivatives).
pub struct ProductObs<A: Observable, B: Observable> {
    pub a: A,
    pub b: B,
}

impl<A: Observable, B: Observable> Observable for ProductObs<A, B> {
    fn eval(&self, g: &GroupElement) -> f64 {
        self.a.eval(g) * self.b.eval(g)
    }
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        self.a.deriv(w, g) * self.b.eval(g) + self.a.eval(g) * self.b.deriv(w, g)
    }
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        self.a.deriv2(w1, w2, g) * self.b.eval(g)
            + self.a.deriv(w1, g) * self.b.deriv(w2, g)
            + self.a.deriv(w2, g) * self.b.deriv(w1, g)
            + self.a.eval(g) * self.b.deriv2(w1, w2, g)
    }
    fn sup_bound(&self) -> f64 {
        self.a.sup_bound() * self.b.sup_bound()
    }
    fn eval_norm_cap(&self) -> f64 {
        self.a.eval_norm_cap().min(self.b.eval_norm_cap())
    }
}

/// Composition with a fixed right translation: `x -> f(x m)`. Derivatives
/// are pushed through the adjoint, `D_w (f o R_m) = D_{m^-1 w m} f o R_m`.
pub struct FlowShifted<O: Observable> {
    pub inner: O,
    shift: GroupElement,
    lattice: Arc<Lattice>,
}

impl<O: Observable> FlowShifted<O> {
    pub fn new(inner: O, shift: GroupElement, lattice: Arc<Lattice>) -> FlowShifted<O> {
        FlowShifted {
            inner,
            shift,
            lattice,
        }
    }

    fn shifted(&self, g: &GroupElement) -> GroupElement {
        let moved = g.mul(&self.shift);
        if moved.frobenius_norm() <= self.inner.eval_norm_cap() {
            moved
        } else {
            self.lattice
                .reduce(&moved)
                .map(|p| *p.rep())
                .unwrap_or(moved)
        }
    }

    fn adjoint(&self, w: &[f64; 4]) -> [f64; 4] {
        mul_raw(mul_raw(self.shift.inv().entries(), *w), self.shift.entries())
    }
}

impl<O: Observable> Observable for FlowShifted<O> {
    fn eval(&self, g: &GroupElement) -> f64 {
        self.inner.eval(&self.shifted(g))
    }
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        self.inner.deriv(&self.adjoint(w), &self.shifted(g))
    }
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        self.inner
            .deriv2(&self.adjoint(w1), &self.adjoint(w2), &self.shifted(g))
    }
    fn sup_bound(&self) -> f64 {
        self.inner.sup_bound()
    }
    fn eval_norm_cap(&self) -> f64 {
        // reduction handles large arguments
        f64::INFINITY
    }
}

/// A strictly positive time-change generator `tau = (1 + c * bump) / Z`,
/// normalized to unit mean by the Monte Carlo estimate `Z`.
pub struct TimeChange {
    bump: Arc<Bump>,
    c: f64,
    normalizer: f64,
    tau_min: f64,
    tau_max: f64,
}

impl TimeChange {
    /// The identity time change.
    pub fn trivial(lattice: &Lattice) -> Result<Arc<TimeChange>> {
        let bump = Bump::new(lattice, default_tau_spec())?;
        make_tau(Arc::new(bump), 0.0, 1, &HaarSampler::new(0), lattice)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn bump(&self) -> &Arc<Bump> {
        &self.bump
    }

    /// Exactly the constant function 1?
    pub fn is_trivial(&self) -> bool {
        self.c == 0.0 && self.normalizer == 1.0
    }

    /// Value of tau away from every bump support.
    pub fn outside_value(&self) -> f64 {
        1.0 / self.normalizer
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn eval(&self, g: &GroupElement) -> f64 {
        if self.c == 0.0 {
            return 1.0 / self.normalizer;
        }
        (1.0 + self.c * self.bump.eval(g)) / self.normalizer
    }

    pub fn eval_point(&self, x: &QuotientPoint) -> f64 {
        self.eval(x.rep())
    }

    /// Assemble a generator from raw parts, bypassing normalization. Meant
    /// for tests that need e.g. an exactly constant tau different from 1.
    #[doc(hidden)]
    pub fn with_raw_parts(bump: Arc<Bump>, c: f64, normalizer: f64) -> TimeChange {
        let tau_min = (1.0 - c.abs() * bump.sup_bound()) / normalizer;
        let tau_max = (1.0 + c.abs() * bump.sup_bound()) / normalizer;
        TimeChange {
            bump,
            c,
            normalizer,
            tau_min,
            tau_max,
        }
    }
}

impl Observable for TimeChange {
    fn eval(&self, g: &GroupElement) -> f64 {
        TimeChange::eval(self, g)
    }
    fn deriv(&self, w: &[f64; 4], g: &GroupElement) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        self.c * self.bump.deriv(w, g) / self.normalizer
    }
    fn deriv2(&self, w1: &[f64; 4], w2: &[f64; 4], g: &GroupElement) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        self.c * self.bump.deriv2(w1, w2, g) / self.normalizer
    }
    fn sup_bound(&self) -> f64 {
        self.tau_max
    }
    fn eval_norm_cap(&self) -> f64 {
        if self.c == 0.0 {
            f64::INFINITY
        } else {
            self.bump.eval_norm_cap()
        }
    }
}

/// Build a time change `tau = (1 + c * bump) / Z` with `Z` the Monte Carlo
/// mean of the numerator over `n` Haar samples. `c = 0` gives exactly the
/// constant 1 (no sampling). Requires `|c| * sup|bump| <= 0.5`.
pub fn make_tau(
    bump: Arc<Bump>,
    c: f64,
    n: usize,
    sampler: &HaarSampler,
    lattice: &Lattice,
) -> Result<Arc<TimeChange>> {
    if !c.is_finite() {
        return Err(Error::InvalidInput("tau scale c must be finite".into()));
    }
    if c.abs() * bump.sup_bound() > 0.5 {
        return Err(Error::InvalidInput(format!(
            "|c| * sup|bump| = {} exceeds 0.5",
            c.abs() * bump.sup_bound()
        )));
    }
    let normalizer = if c == 0.0 {
        1.0
    } else {
        let mut acc = 0.0;
        for i in 0..n.max(1) {
            let x = lattice.haar_point(sampler, i as u64)?;
            acc += 1.0 + c * bump.eval(x.rep());
        }
        acc / n.max(1) as f64
    };
    let tau_min = (1.0 - c.abs() * bump.sup_bound()) / normalizer;
    let tau_max = (1.0 + c.abs() * bump.sup_bound()) / normalizer;
    if !(tau_min > 0.0) {
        return Err(Error::Model(format!(
            "time change not strictly positive: tau_min = {tau_min}"
        )));
    }
    Ok(Arc::new(TimeChange {
        bump,
        c,
        normalizer,
        tau_min,
        tau_max,
    }))
}

/// Haar samples with importance weights `tau(x) / mean(tau)`; the weight
/// batch-mean is 1 by construction.
pub fn sample_mu_tau(
    n: usize,
    tau: &TimeChange,
    sampler: &HaarSampler,
    lattice: &Lattice,
) -> Result<Vec<(QuotientPoint, f64)>> {
    if n < 1 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let pts = lattice.sample_haar(sampler, n)?;
    let mut taus = Vec::with_capacity(n);
    let mut sum = 0.0;
    for p in &pts {
        let t = tau.eval_point(p);
        if !(t > 0.0) {
            return Err(Error::Model(format!("nonpositive tau value {t}")));
        }
        taus.push(t);
        sum += t;
    }
    let mean = sum / n as f64;
    Ok(pts
        .into_iter()
        .zip(taus)
        .map(|(p, t)| (p, t / mean))
        .collect())
}

/// Monte Carlo zero-mean projection: returns `f - m_hat` where `m_hat` is the
/// mean of `f` against the measure weighted by `tau` (plain Haar mean when
/// `tau` is trivial or absent).
pub fn zero_mean<O: Observable>(
    f: O,
    tau: Option<&TimeChange>,
    n: usize,
    sampler: &HaarSampler,
    lattice: &Lattice,
) -> Result<Centered<O>> {
    if n < 1_000 {
        return Err(Error::InvalidInput(
            "zero_mean needs at least 10^3 samples".into(),
        ));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        let x = lattice.haar_point(sampler, i as u64)?;
        let w = match tau {
            Some(t) if !t.is_trivial() => t.eval_point(&x),
            _ => 1.0,
        };
        let v = f.eval(x.rep());
        sum += w * v;
        sum_sq += w * v * v;
        wsum += w;
    }
    let mean = sum / wsum;
    let var = (sum_sq / wsum - mean * mean).max(0.0);
    Ok(Centered {
        inner: f,
        shift: mean,
        shift_stderr: (var / n as f64).sqrt(),
    })
}

/// Max over `n` Haar samples of all Lie-derivative words up to `order`
/// (order <= 2) in the directions U, X, V. A cheap relative-size proxy for
/// smoothness norms; not a Sobolev norm.
pub fn sobolev_proxy<O: Observable>(
    f: &O,
    order: usize,
    n: usize,
    sampler: &HaarSampler,
    lattice: &Lattice,
) -> Result<f64> {
    if order > 2 {
        return Err(Error::InvalidInput(
            "sobolev_proxy supports order <= 2 only".into(),
        ));
    }
    let dirs = [LieDirection::U, LieDirection::X, LieDirection::V];
    let mut best: f64 = 0.0;
    for i in 0..n {
        let x = lattice.haar_point(sampler, i as u64)?;
        let g = x.rep();
        best = best.max(f.eval(g).abs());
        if order >= 1 {
            for d in dirs {
                best = best.max(f.deriv(&d.generator(), g).abs());
            }
        }
        if order >= 2 {
            for d1 in dirs {
                for d2 in dirs {
                    best = best.max(f.deriv2(&d1.generator(), &d2.generator(), g).abs());
                }
            }
        }
    }
    Ok(best)
}

/// The default test-suite bump specs: three bumps in generic position, wide
/// enough that correlation experiments resolve their decay at the shipped
/// sample counts.
pub fn default_specs() -> [BumpSpec; 3] {
    let c1 = GroupElement::IDENTITY;
    let c2 = crate::sl2::exp_flow(LieDirection::U, 0.4)
        .unwrap()
        .mul(&crate::sl2::exp_flow(LieDirection::X, 0.3).unwrap());
    let c3 = crate::sl2::exp_flow(LieDirection::V, 0.7).unwrap();
    [
        BumpSpec::new(c1, 1.0, 1.0, 4.5),
        BumpSpec::new(c2, 1.0, 1.0, 4.5),
        BumpSpec::new(c3, 1.0, 1.0, 4.5),
    ]
}

/// Build the three default bumps.
pub fn default_bumps(lattice: &Lattice) -> Result<[Arc<Bump>; 3]> {
    let specs = default_specs();
    Ok([
        Arc::new(Bump::new(lattice, specs[0])?),
        Arc::new(Bump::new(lattice, specs[1])?),
        Arc::new(Bump::new(lattice, specs[2])?),
    ])
}

/// Default spec for the time-change generator's bump: narrow support keeps
/// the cocycle solver cheap (the orbit is outside the support most of the
/// time) while still producing a genuinely nonhomogeneous flow.
pub fn default_tau_spec() -> BumpSpec {
    let c2 = crate::sl2::exp_flow(LieDirection::U, 0.4)
        .unwrap()
        .mul(&crate::sl2::exp_flow(LieDirection::X, 0.3).unwrap());
    BumpSpec::new(c2, 0.35, 1.0, 4.0)
}

/// The default nonconstant time change: tau = (1 + 0.3 bump) / Z.
pub fn default_tau(lattice: &Lattice, n: usize, sampler: &HaarSampler) -> Result<Arc<TimeChange>> {
    let bump = Arc::new(Bump::new(lattice, default_tau_spec())?);
    make_tau(bump, 0.3, n, sampler, lattice)
}

/// Deterministic coarse-grid quadrature of the Haar integral of `f`
/// (optionally weighted by an extra factor), used as an independent oracle
/// against Monte Carlo means. Integrates in geodesic polar coordinates over
/// the fundamental domain times a frame-angle grid.
#[doc(hidden)]
pub fn grid_quadrature_mean(
    lattice: &Lattice,
    f: &dyn Fn(&GroupElement) -> f64,
    nr: usize,
    nphi: usize,
    ntheta: usize,
) -> f64 {
    let rmax = lattice.circumradius();
    let mut num = 0.0;
    let mut den = 0.0;
    for ir in 0..nr {
        let r = (ir as f64 + 0.5) / nr as f64 * rmax;
        let w = r.sinh();
        for ip in 0..nphi {
            let phi = (ip as f64 + 0.5) / nphi as f64 * std::f64::consts::TAU;
            let rot = crate::sl2::exp_flow(LieDirection::Theta, phi).unwrap();
            let p = rot
                .mul(&crate::sl2::exp_flow(LieDirection::X, r).unwrap())
                .mul(&rot.inv());
            if !lattice_in_domain(lattice, &p) {
                continue;
            }
            for it in 0..ntheta {
                let theta = (it as f64 + 0.5) / ntheta as f64 * std::f64::consts::TAU;
                let g = p.mul(&crate::sl2::exp_flow(LieDirection::Theta, theta).unwrap());
                num += w * f(&g);
                den += w;
            }
        }
    }
    num / den
}

fn lattice_in_domain(lattice: &Lattice, g: &GroupElement) -> bool {
    let n = g.frobenius_norm_sq();
    lattice
        .generators()
        .iter()
        .all(|gen| gen.mul(g).frobenius_norm_sq() >= n)
}

/// Deterministic pseudo-random points for derivative tests.
#[cfg(test)]
fn test_points(lattice: &Lattice, n: usize, seed: u64) -> Vec<QuotientPoint> {
    let sampler = HaarSampler::new(seed);
    lattice.sample_haar(&sampler, n).unwrap()
}
