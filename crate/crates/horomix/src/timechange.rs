//! The time-change cocycle u(x, t), the reparametrized flow, ergodic
//! integrals along horocycle orbits, and the shearing discrepancy of the
//! renormalization identity.
//!
//! The generator tau is an automorphized bump plus a constant, so along a
//! horocycle orbit segment the squared distance from each translate to the
//! bump center is an explicit quadratic in orbit time. Orbit integrals are
//! therefore exact on the (typically long) stretches between support
//! crossings and only need numerical work inside the crossings: an embedded
//! RK4(5) step for the cocycle equation du/dt = 1/tau(h_u x) and adaptive
//! Simpson quadrature for the defining integral. Every checkpoint leg is
//! finished with one Newton correction of u against the quadrature of the
//! defining integral, which makes the integral residual the actual contract.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, QuotientPoint};
use crate::observable::{Observable, TimeChange};
use crate::sl2::{exp_flow, GroupElement, LieDirection};

/// Solver parameters.
#[derive(Clone, Debug)]
pub struct ClockParams {
    /// Initial integrator step (in flow time).
    pub step_init: f64,
    /// Local error tolerance per unit flow time for the RK4(5) stepper.
    pub tol: f64,
    /// Work-unit cap per solver call (RK steps + quadrature nodes + segments).
    pub max_steps: usize,
    /// Checkpoint spacing in tau-time; each leg is Newton-polished and the
    /// cocycle restarts from the reduced endpoint.
    pub checkpoint: f64,
    /// Horizon for flow evaluation.
    pub horizon: f64,
    /// Relative tolerance of the adaptive Simpson quadrature.
    pub quad_tol: f64,
}

impl Default for ClockParams {
    fn default() -> Self {
        ClockParams {
            step_init: 0.01,
            tol: 1e-8,
            max_steps: 20_000_000,
            checkpoint: 50.0,
            horizon: 1e4,
            quad_tol: 1e-12,
        }
    }
}

/// Cocycle solver for a fixed time-change generator.
pub struct FlowClock {
    lattice: Arc<Lattice>,
    tau: Arc<TimeChange>,
    params: ClockParams,
}

impl FlowClock {
    pub fn new(lattice: Arc<Lattice>, tau: Arc<TimeChange>) -> FlowClock {
        FlowClock::with_params(lattice, tau, ClockParams::default())
    }

    pub fn with_params(
        lattice: Arc<Lattice>,
        tau: Arc<TimeChange>,
        params: ClockParams,
    ) -> FlowClock {
        FlowClock {
            lattice,
            tau,
            params,
        }
    }

    pub fn tau(&self) -> &Arc<TimeChange> {
        &self.tau
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn params(&self) -> &ClockParams {
        &self.params
    }

    /// Norm bound for positions handed out by trajectories of this clock.
    pub fn eval_cap(&self) -> f64 {
        if self.tau.is_trivial() {
            1e3
        } else {
            self.tau.bump().eval_norm_cap()
        }
    }

    /// Homogeneous flow: reduce(x * exp(uU)), chunked to keep rounding in
    /// check for long times.
    pub fn flow_homogeneous(&self, x: &QuotientPoint, u: f64) -> Result<QuotientPoint> {
        if !u.is_finite() {
            return Err(Error::InvalidInput("flow time must be finite".into()));
        }
        let chunk = 256.0;
        let mut cur = *x;
        let mut remaining = u;
        loop {
            let step = remaining.clamp(-chunk, chunk);
            cur = self.lattice.reduce(&cur.rep().mul(&exp_flow(LieDirection::U, step)?))?;
            remaining -= step;
            if remaining == 0.0 {
                return Ok(cur);
            }
        }
    }

    /// The unique u with integral_0^u tau(h_s x) ds = t.
    pub fn u_of(&self, x: &QuotientPoint, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::InvalidInput("u_of: t must be finite".into()));
        }
        if self.tau.is_trivial() {
            return Ok(t);
        }
        let mut walker = Walker::new(self, *x, t.signum_or_one())?;
        walker.advance_tau_time(t.abs())?;
        walker.polish(t.abs())?;
        Ok(walker.signed_u())
    }

    /// The defining integral integral_0^u tau(h_s x) ds (tau-time elapsed
    /// along the horocycle orbit).
    pub fn inverse_clock(&self, x: &QuotientPoint, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::InvalidInput("inverse_clock: u must be finite".into()));
        }
        if self.tau.is_trivial() {
            return Ok(u);
        }
        let mut walker = Walker::new(self, *x, u.signum_or_one())?;
        let t = walker.integrate_to_u(u.abs())?;
        Ok(u.signum_or_one() * t)
    }

    /// The time-changed flow: x * exp(u(x,t) U), reduced.
    pub fn flow_tau(&self, x: &QuotientPoint, t: f64) -> Result<QuotientPoint> {
        if !t.is_finite() {
            return Err(Error::InvalidInput("flow_tau: t must be finite".into()));
        }
        if t.abs() > self.params.horizon {
            return Err(Error::Resource(format!(
                "flow_tau horizon exceeded: |{t}| > {}",
                self.params.horizon
            )));
        }
        if self.tau.is_trivial() {
            return self.flow_homogeneous(x, t);
        }
        let mut walker = Walker::new(self, *x, t.signum_or_one())?;
        walker.advance_tau_time_with_legs(t.abs(), self.params.checkpoint)?;
        self.lattice.reduce(&walker.position())
    }

    /// Shearing discrepancy A(x, s, T) in
    /// `flow_tau(g_s x, T) = g_s . flow_tau(x, e^s T + A)`, computed from the
    /// cocycle identity u(x, e^s T + A) = e^s u(g_s x, T).
    pub fn shear_discrepancy(&self, x: &QuotientPoint, s: f64, big_t: f64) -> Result<f64> {
        if self.tau.is_trivial() {
            return Ok(0.0);
        }
        let gs = exp_flow(LieDirection::X, s)?;
        let xs = self.lattice.reduce(&x.rep().mul(&gs))?;
        let u1 = self.u_of(&xs, big_t)?;
        let t_back = self.inverse_clock(x, s.exp() * u1)?;
        Ok(t_back - s.exp() * big_t)
    }

    /// Frobenius residual of the commutation identity behind the shearing
    /// discrepancy, for diagnostics: both sides describe the same point.
    pub fn shear_commutation_residual(
        &self,
        x: &QuotientPoint,
        s: f64,
        big_t: f64,
    ) -> Result<f64> {
        let gs = exp_flow(LieDirection::X, s)?;
        let xs = self.lattice.reduce(&x.rep().mul(&gs))?;
        let lhs = self.flow_tau(&xs, big_t)?;
        let a = self.shear_discrepancy(x, s, big_t)?;
        let moved = self.flow_tau(x, s.exp() * big_t + a)?;
        let rhs = self.lattice.reduce(&moved.rep().mul(&gs))?;
        Ok(lhs.dist(&rhs))
    }

    /// integral_0^T (tau - tau o g_s)(h_t x) dt along the homogeneous
    /// horocycle orbit.
    pub fn deviation_integral(&self, x: &QuotientPoint, s: f64, big_t: f64) -> Result<f64> {
        if !s.is_finite() || !big_t.is_finite() {
            return Err(Error::InvalidInput("deviation: need finite s, T".into()));
        }
        if self.tau.is_trivial() || s == 0.0 {
            return Ok(0.0);
        }
        let mut walker = Walker::new_deviation(self, *x, s)?;
        walker.integrate_deviation(big_t)
    }

    /// Incremental multi-time trajectory of the time-changed flow from `x`.
    pub fn trajectory(&self, x: &QuotientPoint) -> Result<TauTrajectory<'_>> {
        TauTrajectory::new(self, *x)
    }
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// One motion family: per signed translate, the coefficients of the
/// quadratic q(v) = lead v^2 + lin v + cst giving the squared Frobenius
/// distance from the moving matrix to the bump center; the integrand
/// contribution is weight * amplitude * profile(q / radius^2).
struct MotionFamily {
    right: Option<GroupElement>,
    weight: f64,
}

/// Geometry of one orbit segment v in [0, len], position = base exp(dir v U).
struct Segment {
    /// [lead, lin, cst] per (family, translate).
    coeffs: Vec<[f64; 3]>,
    crossings: Vec<(f64, f64)>,
    len: f64,
}

struct Walker<'a> {
    clock: &'a FlowClock,
    dir: f64,
    families: Vec<MotionFamily>,
    /// integrand = offset + sum over families/translates of
    /// family.weight * profile(q / r2)
    offset: f64,
    r2: f64,
    norm_cap_sq: f64,
    /// leg bookkeeping
    leg_base: QuotientPoint,
    base: GroupElement,
    seg: Segment,
    v: f64,
    u_leg: f64,
    u_done: f64,
    work: usize,
    rk_h: f64,
}

impl<'a> Walker<'a> {
    fn new(clock: &'a FlowClock, x: QuotientPoint, dir: f64) -> Result<Walker<'a>> {
        let tau = &clock.tau;
        let cz = tau.c() * tau.bump().spec().amplitude / tau.normalizer();
        let families = vec![MotionFamily {
            right: None,
            weight: cz,
        }];
        let cap = tau.bump().eval_norm_cap();
        Walker::build(clock, x, dir, families, tau.outside_value(), cap)
    }

    fn new_deviation(clock: &'a FlowClock, x: QuotientPoint, s: f64) -> Result<Walker<'a>> {
        let tau = &clock.tau;
        let cz = tau.c() * tau.bump().spec().amplitude / tau.normalizer();
        let gs = exp_flow(LieDirection::X, s)?;
        let families = vec![
            MotionFamily {
                right: None,
                weight: cz,
            },
            MotionFamily {
                right: Some(gs),
                weight: -cz,
            },
        ];
        // the shifted family needs headroom: |pos * e^{sX}| <= cap
        let cap = tau.bump().eval_norm_cap() / (s.abs() / 2.0).exp();
        Walker::build(clock, x, 1.0, families, 0.0, cap)
    }

    fn build(
        clock: &'a FlowClock,
        x: QuotientPoint,
        dir: f64,
        families: Vec<MotionFamily>,
        offset: f64,
        cap: f64,
    ) -> Result<Walker<'a>> {
        let r = clock.tau.bump().spec().radius;
        let mut w = Walker {
            clock,
            dir,
            families,
            offset,
            r2: r * r,
            norm_cap_sq: cap * cap,
            leg_base: x,
            base: *x.rep(),
            seg: Segment {
                coeffs: Vec::new(),
                crossings: Vec::new(),
                len: 0.0,
            },
            v: 0.0,
            u_leg: 0.0,
            u_done: 0.0,
            work: 0,
            rk_h: clock.params.step_init,
        };
        w.new_segment()?;
        Ok(w)
    }

    fn charge(&mut self, units: usize) -> Result<()> {
        self.work += units;
        if self.work > self.clock.params.max_steps {
            return Err(Error::Resource(format!(
                "cocycle solver exceeded {} work units",
                self.clock.params.max_steps
            )));
        }
        Ok(())
    }

    fn position(&self) -> GroupElement {
        self.base
            .mul(&exp_flow(LieDirection::U, self.dir * self.v).expect("finite"))
    }

    fn signed_u(&self) -> f64 {
        self.dir * (self.u_done + self.u_leg + self.v)
    }

    /// Start a new segment at the current position (reduced).
    fn new_segment(&mut self) -> Result<()> {
        self.charge(1)?;
        let here = if self.seg.len == 0.0 && self.v == 0.0 {
            self.base
        } else {
            self.position()
        };
        self.u_leg += self.v;
        self.base = *self.clock.lattice.reduce(&here)?.rep();
        self.v = 0.0;

        // segment length: stay under the norm cap
        let e = self.base.entries();
        let (a, b, c, d) = (e[0], e[1], e[2], e[3]);
        let lead = a * a + c * c;
        let lin = 2.0 * self.dir * (a * b + c * d);
        let cst = self.base.frobenius_norm_sq() - self.norm_cap_sq;
        // largest root of lead v^2 + lin v + cst = 0 (cst < 0)
        let disc = (lin * lin - 4.0 * lead * cst).max(0.0).sqrt();
        let len = ((-lin + disc) / (2.0 * lead)).max(1e-3);
        let len = len.min(256.0);

        // crossing quadratics per family and translate
        let translates = self.clock.tau.bump().translates().clone();
        let center = self.clock.tau.bump().spec().center.entries();
        self.seg.coeffs.clear();
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for fam in &self.families {
            for t in translates.iter() {
                let m = t.mul(&self.base);
                // moving matrix M exp(dir v U) [* right] has the form
                // [[A + S1 v, B + S2 v], [C + S3 v, D + S4 v]]
                let (a0, b0, c0, d0);
                let (s1, s2, s3, s4);
                match &fam.right {
                    None => {
                        a0 = m.a;
                        b0 = m.b;
                        c0 = m.c;
                        d0 = m.d;
                        s1 = 0.0;
                        s2 = self.dir * m.a;
                        s3 = 0.0;
                        s4 = self.dir * m.c;
                    }
                    Some(rm) => {
                        a0 = m.a * rm.a + m.b * rm.c;
                        b0 = m.a * rm.b + m.b * rm.d;
                        c0 = m.c * rm.a + m.d * rm.c;
                        d0 = m.c * rm.b + m.d * rm.d;
                        s1 = self.dir * m.a * rm.c;
                        s2 = self.dir * m.a * rm.d;
                        s3 = self.dir * m.c * rm.c;
                        s4 = self.dir * m.c * rm.d;
                    }
                }
                let da = a0 - center[0];
                let db = b0 - center[1];
                let dc = c0 - center[2];
                let dd = d0 - center[3];
                let lead = s1 * s1 + s2 * s2 + s3 * s3 + s4 * s4;
                let lin = 2.0 * (da * s1 + db * s2 + dc * s3 + dd * s4);
                let cst = da * da + db * db + dc * dc + dd * dd;
                self.seg.coeffs.push([lead, lin, cst]);
                push_crossing(&mut intervals, lead, lin, cst - self.r2, len);
            }
        }
        intervals.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv.0 <= last.1 + 1e-12 => last.1 = last.1.max(iv.1),
                _ => merged.push(iv),
            }
        }
        self.seg.crossings = merged;
        self.seg.len = len;
        Ok(())
    }

    /// Integrand value at v (tau for the flow walker, the difference
    /// integrand for the deviation walker).
    fn integrand(&self, v: f64) -> f64 {
        let mut acc = self.offset;
        let per_family = self.seg.coeffs.len() / self.families.len();
        for (fi, fam) in self.families.iter().enumerate() {
            let mut s = 0.0;
            for c in &self.seg.coeffs[fi * per_family..(fi + 1) * per_family] {
                let q = (c[0] * v + c[1]) * v + c[2];
                if q < self.r2 {
                    s += crate::observable::profile(q / self.r2);
                }
            }
            acc += fam.weight * s;
        }
        acc
    }

    fn in_crossing(&self, v: f64) -> Option<(f64, f64)> {
        for &(lo, hi) in &self.seg.crossings {
            if v < hi {
                if v >= lo {
                    return Some((lo, hi));
                }
                return None;
            }
        }
        None
    }

    fn next_crossing_start(&self, v: f64) -> f64 {
        for &(lo, _) in &self.seg.crossings {
            if lo > v {
                return lo;
            }
        }
        self.seg.len
    }

    /// Advance by tau-time `dt >= 0`.
    fn advance_tau_time(&mut self, dt: f64) -> Result<()> {
        let mut t_rem = dt;
        let tau_out = self.clock.tau.outside_value();
        while t_rem > 0.0 {
            self.charge(1)?;
            if self.v >= self.seg.len {
                self.new_segment()?;
            }
            match self.in_crossing(self.v) {
                None => {
                    let gap_end = self.next_crossing_start(self.v).min(self.seg.len);
                    let capacity = (gap_end - self.v) * tau_out;
                    if capacity >= t_rem {
                        self.v += t_rem / tau_out;
                        return Ok(());
                    }
                    self.v = gap_end;
                    t_rem -= capacity;
                }
                Some((_, hi)) => {
                    t_rem = self.rk_through_crossing(t_rem, hi)?;
                }
            }
        }
        Ok(())
    }

    /// One adaptive RK4(5) sweep from the current v through a crossing that
    /// ends at `hi`; returns the remaining tau-time.
    fn rk_through_crossing(&mut self, mut t_rem: f64, hi: f64) -> Result<f64> {
        let tol = self.clock.params.tol;
        let mut h = self.rk_h.max(1e-6);
        while t_rem > 0.0 && self.v < hi && self.v < self.seg.len {
            self.charge(6)?;
            // never step beyond the remaining tau-time, and never skip the
            // next gap entirely (keeps the step inside resolved geometry)
            let v_room = (self.seg.len - self.v).max(1e-9);
            h = h.min(t_rem).min(v_room * self.clock.tau.tau_max() * 2.0 + 1e-9);
            let (dv, err) = self.cash_karp(self.v, h);
            let allowed = tol * h;
            if err > allowed && h > 1e-12 {
                let shrink = 0.9 * (allowed / err).powf(0.25);
                h *= shrink.clamp(0.2, 1.0);
                continue;
            }
            if self.v + dv > self.seg.len {
                // re-enter through a fresh segment rather than extrapolate
                let scale = (self.seg.len - self.v) / dv;
                let h_clip = h * scale * (1.0 - 1e-12);
                let (dv2, _) = self.cash_karp(self.v, h_clip);
                self.v += dv2;
                t_rem -= h_clip;
                self.new_segment()?;
                return Ok(t_rem.max(0.0));
            }
            self.v += dv;
            t_rem -= h;
            if err > 0.0 {
                let grow = 0.9 * (allowed / err).powf(0.2);
                h *= grow.clamp(0.5, 4.0);
            } else {
                h *= 4.0;
            }
            h = h.min(1.0);
        }
        self.rk_h = h;
        Ok(t_rem.max(0.0))
    }

    /// Embedded Cash-Karp step of du/dt = 1/tau at position v, step h in
    /// tau-time. Returns (dv, error estimate in v).
    fn cash_karp(&self, v: f64, h: f64) -> (f64, f64) {
        let f = |vv: f64| 1.0 / self.integrand(vv).max(1e-12);
        let k1 = f(v);
        let k2 = f(v + h * (0.2 * k1));
        let k3 = f(v + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
        let k4 = f(v + h * (0.3 * k1 - 0.9 * k2 + 1.2 * k3));
        let k5 = f(v + h * (-11.0 / 54.0 * k1 + 2.5 * k2 - 70.0 / 27.0 * k3 + 35.0 / 27.0 * k4));
        let k6 = f(v
            + h * (1631.0 / 55296.0 * k1
                + 175.0 / 512.0 * k2
                + 575.0 / 13824.0 * k3
                + 44275.0 / 110592.0 * k4
                + 253.0 / 4096.0 * k5));
        let dv5 = h * (37.0 / 378.0 * k1 + 250.0 / 621.0 * k3 + 125.0 / 594.0 * k4
            + 512.0 / 1771.0 * k6);
        let dv4 = h * (2825.0 / 27648.0 * k1
            + 18575.0 / 48384.0 * k3
            + 13525.0 / 55296.0 * k4
            + 277.0 / 14336.0 * k5
            + 0.25 * k6);
        (dv5, (dv5 - dv4).abs())
    }

    /// Newton-polish the current leg against the quadrature of the defining
    /// integral: adjusts v so that the integral over [0, u_leg + v] matches
    /// `t_leg`.
    fn polish(&mut self, t_leg: f64) -> Result<()> {
        if self.clock.tau.is_trivial() {
            return Ok(());
        }
        let u = self.u_leg + self.v;
        let mut probe = Walker::build(
            self.clock,
            self.leg_base,
            self.dir,
            vec![MotionFamily {
                right: None,
                weight: self.families[0].weight,
            }],
            self.offset,
            self.norm_cap_sq.sqrt(),
        )?;
        let t_quad = probe.integrate_to_u(u)?;
        self.work += probe.work;
        let residual = t_quad - t_leg;
        let slope = self.integrand(self.v).max(self.clock.tau.tau_min().max(1e-9));
        self.v -= residual / slope;
        Ok(())
    }

    /// Advance in tau-time with checkpoint legs of length `leg`: each leg is
    /// polished and the cocycle restarts from the reduced endpoint.
    fn advance_tau_time_with_legs(&mut self, dt: f64, leg: f64) -> Result<()> {
        let mut remaining = dt;
        while remaining > leg {
            self.advance_tau_time(leg)?;
            self.polish(leg)?;
            self.rebase_leg()?;
            remaining -= leg;
        }
        self.advance_tau_time(remaining)?;
        self.polish(remaining)?;
        Ok(())
    }

    fn rebase_leg(&mut self) -> Result<()> {
        let here = self.clock.lattice.reduce(&self.position())?;
        self.u_done += self.u_leg + self.v;
        self.u_leg = 0.0;
        self.v = 0.0;
        self.leg_base = here;
        self.base = *here.rep();
        self.seg.len = 0.0;
        self.new_segment()
    }

    /// Quadrature of the integrand over orbit time [0, u_target], walking
    /// segments: exact on gaps (constant integrand = offset), adaptive
    /// Simpson inside crossings.
    fn integrate_to_u(&mut self, u_target: f64) -> Result<f64> {
        let mut acc = 0.0;
        let mut u_rem = u_target;
        loop {
            self.charge(1)?;
            if self.v >= self.seg.len {
                self.new_segment()?;
            }
            let span_end = self.seg.len.min(self.v + u_rem);
            match self.in_crossing(self.v) {
                None => {
                    let stop = self.next_crossing_start(self.v).min(span_end);
                    acc += (stop - self.v) * self.offset;
                    u_rem -= stop - self.v;
                    self.v = stop;
                }
                Some((_, hi)) => {
                    let stop = hi.min(span_end);
                    acc += self.simpson(self.v, stop)?;
                    u_rem -= stop - self.v;
                    self.v = stop;
                }
            }
            if u_rem <= 1e-15 * u_target.max(1.0) {
                return Ok(acc);
            }
        }
    }

    /// Deviation integral over homogeneous time [0, T]: same machinery, the
    /// integrand is the two-family difference with zero offset.
    fn integrate_deviation(&mut self, big_t: f64) -> Result<f64> {
        self.integrate_to_u(big_t)
    }

    fn simpson(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if hi <= lo {
            return Ok(0.0);
        }
        let f_lo = self.integrand(lo);
        let f_hi = self.integrand(hi);
        let mid = 0.5 * (lo + hi);
        let f_mid = self.integrand(mid);
        let whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi);
        self.adaptive_simpson(lo, hi, f_lo, f_mid, f_hi, whole, 50)
    }

    #[allow(clippy::too_many_arguments)]
    fn adaptive_simpson(
        &mut self,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_mid: f64,
        f_hi: f64,
        whole: f64,
        depth: usize,
    ) -> Result<f64> {
        self.charge(2)?;
        let mid = 0.5 * (lo + hi);
        let lmid = 0.5 * (lo + mid);
        let rmid = 0.5 * (mid + hi);
        let f_lmid = self.integrand(lmid);
        let f_rmid = self.integrand(rmid);
        let left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_lmid + f_mid);
        let right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_rmid + f_hi);
        let err = left + right - whole;
        let scale = self.offset.abs().max(self.clock.tau.tau_max()).max(1.0);
        if depth == 0 || err.abs() <= 15.0 * self.clock.params.quad_tol * scale * (hi - lo).max(1e-6)
        {
            return Ok(left + right + err / 15.0);
        }
        Ok(self
            .adaptive_simpson(lo, mid, f_lo, f_lmid, f_mid, left, depth - 1)?
            + self.adaptive_simpson(mid, hi, f_mid, f_rmid, f_hi, right, depth - 1)?)
    }
}

fn push_crossing(intervals: &mut Vec<(f64, f64)>, lead: f64, lin: f64, cst: f64, len: f64) {
    // roots of lead v^2 + lin v + cst = 0 with lead > 0
    if lead <= 0.0 {
        return;
    }
    let disc = lin * lin - 4.0 * lead * cst;
    if disc <= 0.0 {
        return;
    }
    let sq = disc.sqrt();
    let lo = (-lin - sq) / (2.0 * lead);
    let hi = (-lin + sq) / (2.0 * lead);
    // tiny inflation so boundary arithmetic never drops support mass
    let lo = (lo - 1e-12).max(0.0);
    let hi = (hi + 1e-12).min(len);
    if hi > lo {
        intervals.push((lo, hi));
    }
}

/// Forward-walking trajectory of the time-changed flow with checkpoint legs;
/// positions are handed out at caller-chosen nondecreasing times.
pub struct TauTrajectory<'a> {
    clock: &'a FlowClock,
    walker: Option<Walker<'a>>,
    x0: QuotientPoint,
    t: f64,
    t_leg: f64,
}

impl<'a> TauTrajectory<'a> {
    fn new(clock: &'a FlowClock, x: QuotientPoint) -> Result<TauTrajectory<'a>> {
        let walker = if clock.tau.is_trivial() {
            None
        } else {
            Some(Walker::new(clock, x, 1.0)?)
        };
        Ok(TauTrajectory {
            clock,
            walker,
            x0: x,
            t: 0.0,
            t_leg: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Elapsed horocycle time.
    pub fn u(&self) -> f64 {
        match &self.walker {
            None => self.t,
            Some(w) => w.signed_u(),
        }
    }

    /// Advance to flow time `t >= self.time()` and return the position
    /// matrix (Frobenius norm at most the clock's eval cap).
    pub fn advance_to(&mut self, t: f64) -> Result<GroupElement> {
        if !t.is_finite() {
            return Err(Error::InvalidInput("trajectory time must be finite".into()));
        }
        if t < self.t - 1e-9 {
            return Err(Error::InvalidInput(format!(
                "trajectory times must be nondecreasing: {t} after {}",
                self.t
            )));
        }
        let dt = (t - self.t).max(0.0);
        match &mut self.walker {
            None => {
                self.t = t;
                let pos = self
                    .clock
                    .flow_homogeneous(&self.x0, t)?;
                Ok(*pos.rep())
            }
            Some(w) => {
                let leg = self.clock.params.checkpoint;
                let mut remaining = dt;
                while self.t_leg + remaining > leg {
                    let step = leg - self.t_leg;
                    w.advance_tau_time(step)?;
                    w.polish(leg)?;
                    w.rebase_leg()?;
                    remaining -= step;
                    self.t_leg = 0.0;
                }
                w.advance_tau_time(remaining)?;
                self.t_leg += remaining;
                self.t = t;
                Ok(w.position())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::HaarSampler;
    use crate::observable::default_tau;

    fn setup() -> (Arc<Lattice>, Arc<TimeChange>, Arc<TimeChange>) {
        let lat = Arc::new(Lattice::new().unwrap());
        let tau0 = TimeChange::trivial(&lat).unwrap();
        let tau = default_tau(&lat, 50_000, &HaarSampler::new(2024)).unwrap();
        (lat, tau0, tau)
    }

    fn points(lat: &Lattice, n: usize, seed: u64) -> Vec<QuotientPoint> {
        lat.sample_haar(&HaarSampler::new(seed), n).unwrap()
    }

    #[test]
    fn trivial_tau_cocycle_is_identity() {
        let (lat, tau0, _) = setup();
        let clock = FlowClock::new(lat.clone(), tau0);
        let x = points(&lat, 1, 3)[0];
        for t in [0.0, 1.5, -7.25, 100.0] {
            assert_eq!(clock.u_of(&x, t).unwrap(), t);
            assert_eq!(clock.inverse_clock(&x, t).unwrap(), t);
        }
        let y = clock.flow_tau(&x, 5.0).unwrap();
        let want = lat
            .reduce(&x.rep().mul(&exp_flow(LieDirection::U, 5.0).unwrap()))
            .unwrap();
        assert!(y.dist(&want) <= 1e-12);
    }

    #[test]
    fn constant_tau_scales_time() {
        // tau = 2 exactly, constructed by turning the bump term off and
        // setting the normalizer to 1/2
        let (lat, _, tau) = setup();
        let raw = TimeChange::with_raw_parts(tau.bump().clone(), 0.0, 0.5);
        let clock = FlowClock::new(lat.clone(), Arc::new(raw));
        let x = points(&lat, 1, 4)[0];
        let t = 10.0;
        let u = clock.u_of(&x, t).unwrap();
        assert!(
            (u - t / 2.0).abs() <= 1e-8 * t.max(1.0),
            "u = {u}, want {}",
            t / 2.0
        );
        let back = clock.inverse_clock(&x, u).unwrap();
        assert!((back - t).abs() <= 1e-8 * t.max(1.0));
    }

    #[test]
    fn defining_integral_matches_brute_force() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau.clone());
        for (i, x) in points(&lat, 5, 5).iter().enumerate() {
            let u = 8.0 + 3.0 * i as f64;
            let fast = clock.inverse_clock(x, u).unwrap();
            // brute force: fixed-step Simpson with per-node reduction
            let n = 16_000usize;
            let h = u / n as f64;
            let mut acc = 0.0;
            for j in 0..=n {
                let p = clock.flow_homogeneous(x, j as f64 * h).unwrap();
                let w = if j == 0 || j == n {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * tau.eval_point(&p);
            }
            acc *= h / 3.0;
            assert!(
                (fast - acc).abs() <= 2e-9 * u.max(1.0),
                "event-driven {fast} vs brute force {acc}"
            );
        }
    }

    #[test]
    fn cocycle_additivity() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau);
        let pts = points(&lat, 40, 6);
        let mut worst: f64 = 0.0;
        for (i, x) in pts.iter().enumerate() {
            let t1 = 1.0 + (i as f64 * 1.23) % 49.0;
            let t2 = 0.5 + (i as f64 * 2.71) % 49.0;
            let u12 = clock.u_of(x, t1 + t2).unwrap();
            let u1 = clock.u_of(x, t1).unwrap();
            let mid = clock.flow_tau(x, t1).unwrap();
            let u2 = clock.u_of(&mid, t2).unwrap();
            worst = worst.max((u12 - u1 - u2).abs());
        }
        assert!(worst <= 1e-7, "additivity residual {worst}");
    }

    #[test]
    fn u_round_trip_and_monotonicity() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau);
        let pts = points(&lat, 25, 7);
        for (i, x) in pts.iter().enumerate() {
            let t = 0.5 + (i as f64 * 3.91) % 60.0;
            let u = clock.u_of(x, t).unwrap();
            let back = clock.inverse_clock(x, u).unwrap();
            assert!(
                (back - t).abs() <= 1e-7,
                "round trip residual {}",
                (back - t).abs()
            );
        }
        let x = pts[0];
        let mut last = f64::NEG_INFINITY;
        for k in 0..50 {
            let t = -25.0 + k as f64;
            let u = clock.u_of(&x, t).unwrap();
            assert!(u > last, "u not strictly increasing at t={t}");
            last = u;
        }
        assert_eq!(clock.u_of(&x, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn flow_property() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau);
        let pts = points(&lat, 15, 8);
        for (i, x) in pts.iter().enumerate() {
            let t1 = 1.0 + (i as f64 * 1.7) % 49.0;
            let t2 = 2.0 + (i as f64 * 2.3) % 48.0;
            let a = clock.flow_tau(&clock.flow_tau(x, t1).unwrap(), t2).unwrap();
            let b = clock.flow_tau(x, t1 + t2).unwrap();
            assert!(
                a.dist(&b) <= 1e-6,
                "flow property violated: dist {}",
                a.dist(&b)
            );
        }
    }

    #[test]
    fn trajectory_matches_flow_tau() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau);
        let x = points(&lat, 1, 9)[0];
        let mut traj = clock.trajectory(&x).unwrap();
        for t in [0.5, 3.0, 17.0, 42.0, 90.0, 160.0] {
            let pos = traj.advance_to(t).unwrap();
            let red = lat.reduce(&pos).unwrap();
            let direct = clock.flow_tau(&x, t).unwrap();
            assert!(
                red.dist(&direct) <= 1e-6,
                "trajectory drifted from flow at t={t}: {}",
                red.dist(&direct)
            );
        }
    }

    #[test]
    fn shear_trivial_cases() {
        let (lat, tau0, tau) = setup();
        let clock0 = FlowClock::new(lat.clone(), tau0);
        let clock = FlowClock::new(lat.clone(), tau);
        let x = points(&lat, 1, 10)[0];
        assert_eq!(clock0.shear_discrepancy(&x, 0.3, 50.0).unwrap(), 0.0);
        let a0 = clock.shear_discrepancy(&x, 0.0, 50.0).unwrap();
        assert!(a0.abs() <= 1e-7, "A at s=0: {a0}");
    }

    #[test]
    fn shear_commutation_residual_is_small() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau);
        for (i, x) in points(&lat, 100, 11).iter().enumerate() {
            let s = 0.02 + 0.95 * ((i as f64 * 0.137) % 1.0);
            let t = 1.5 + (i as f64 * 7.31) % 98.5;
            let r = clock.shear_commutation_residual(x, s, t).unwrap();
            assert!(r <= 1e-5, "commutation residual {r} at s={s}, T={t}");
        }
    }

    #[test]
    fn deviation_trivial_and_brute_force() {
        let (lat, tau0, tau) = setup();
        let clock0 = FlowClock::new(lat.clone(), tau0);
        let clock = FlowClock::new(lat.clone(), tau.clone());
        let x = points(&lat, 1, 12)[0];
        assert_eq!(clock0.deviation_integral(&x, 0.3, 100.0).unwrap(), 0.0);
        assert_eq!(clock.deviation_integral(&x, 0.0, 100.0).unwrap(), 0.0);

        let gs = exp_flow(LieDirection::X, 0.2).unwrap();
        for x in points(&lat, 3, 13) {
            let fast = clock.deviation_integral(&x, 0.2, 20.0).unwrap();
            let n = 16_000usize;
            let h = 20.0 / n as f64;
            let mut acc = 0.0;
            for j in 0..=n {
                let p = clock.flow_homogeneous(&x, j as f64 * h).unwrap();
                let shifted = lat.reduce(&p.rep().mul(&gs)).unwrap();
                let v = tau.eval_point(&p) - tau.eval_point(&shifted);
                let w = if j == 0 || j == n {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * v;
            }
            acc *= h / 3.0;
            assert!(
                (fast - acc).abs() <= 1e-8,
                "deviation {fast} vs brute force {acc}"
            );
        }
    }

    #[test]
    fn horizon_and_input_guards() {
        let (lat, _, tau) = setup();
        let clock = FlowClock::new(lat.clone(), tau);
        let x = points(&lat, 1, 14)[0];
        assert!(clock.flow_tau(&x, 2e4).is_err());
        assert!(clock.u_of(&x, f64::NAN).is_err());
        assert!(clock.inverse_clock(&x, f64::INFINITY).is_err());
    }
}
