//! The co-compact lattice (regular-octagon / Bolza group), reduction to a
//! Dirichlet-domain representative, group-ball enumeration and Haar sampling
//! on the quotient.
//!
//! The lattice is generated by `g_k = R(k pi/4) T R(-k pi/4)` for k = 0..3,
//! where `T = [[1+sqrt2, sqrt(2+2 sqrt2)], [sqrt(2+2 sqrt2), 1+sqrt2]]` and
//! `R(theta)` rotates the hyperbolic plane about the base point by `theta`
//! (as a matrix this is a rotation by `theta/2`; Moebius actions double
//! angles, so conjugating by a matrix rotation of `theta` would rotate the
//! translation axis by `2 theta` and collapse the four axes onto two).
//! Each generator is hyperbolic with trace `2 + 2 sqrt2` and determinant
//! exactly 1 in exact arithmetic. The octagon relation is verified
//! numerically at construction, not assumed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sl2::{exp_flow, GroupElement, LieDirection};

/// A point of the quotient: a reduced, sign-normalized representative whose
/// projection to the hyperbolic plane lies in the Dirichlet octagon at i.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuotientPoint {
    pub(crate) rep: GroupElement,
}

impl QuotientPoint {
    pub fn rep(&self) -> &GroupElement {
        &self.rep
    }

    /// Frobenius distance between representatives, ignoring the overall sign.
    pub fn dist(&self, other: &QuotientPoint) -> f64 {
        self.rep.frobenius_dist_signless(&other.rep)
    }
}

/// Tuning knobs for the lattice; defaults match the shipped experiments.
#[derive(Clone, Debug)]
pub struct LatticeParams {
    /// Hard cap on ball radii (resource guard for the BFS enumeration).
    pub ball_radius_cap: f64,
    /// Extra BFS slack beyond the requested radius; tile-chasing along the
    /// geodesic needs up to twice the circumradius.
    pub ball_margin: f64,
    /// Matrix dedup tolerance in the ball enumeration.
    pub dedup_tol: f64,
    /// Iteration cap for the greedy reduction.
    pub reduce_max_iter: usize,
}

impl Default for LatticeParams {
    fn default() -> Self {
        LatticeParams {
            ball_radius_cap: 8.0,
            ball_margin: 5.1,
            dedup_tol: 1e-8,
            reduce_max_iter: 10_000,
        }
    }
}

/// The Bolza octagon group with cached ball enumerations.
pub struct Lattice {
    generators: [GroupElement; 8],
    params: LatticeParams,
    circumradius: f64,
    relation_residual: f64,
    ball_cache: Mutex<BTreeMap<u64, Arc<Vec<GroupElement>>>>,
}

impl Lattice {
    pub fn new() -> Result<Lattice> {
        Lattice::with_params(LatticeParams::default())
    }

    pub fn with_params(params: LatticeParams) -> Result<Lattice> {
        let sqrt2 = 2.0_f64.sqrt();
        let diag = 1.0 + sqrt2;
        let off = (2.0 + 2.0 * sqrt2).sqrt();
        let t = GroupElement::new(diag, off, off, diag);

        let mut gens = [GroupElement::IDENTITY; 8];
        for k in 0..4 {
            let theta = k as f64 * std::f64::consts::FRAC_PI_4;
            let r = exp_flow(LieDirection::Theta, theta)?;
            let g = r.mul(&t).mul(&r.inv());
            gens[k] = g;
            gens[k + 4] = g.inv();
        }

        for g in &gens {
            if (g.det() - 1.0).abs() > 1e-12 {
                return Err(Error::Model(format!(
                    "generator determinant off by {:e}",
                    g.det() - 1.0
                )));
            }
            if g.trace().abs() <= 2.0 {
                return Err(Error::Model("generator is not hyperbolic".into()));
            }
        }

        // Circumradius of the Dirichlet octagon: arccosh(cot^2(pi/8)) = arccosh(3 + 2 sqrt2).
        let circumradius = (3.0 + 2.0 * sqrt2).acosh();

        let relation_residual = best_relation_residual(&gens);
        if relation_residual > 1e-8 {
            return Err(Error::Model(format!(
                "octagon relation word residual {relation_residual:e} exceeds 1e-8"
            )));
        }

        Ok(Lattice {
            generators: gens,
            params,
            circumradius,
            relation_residual,
            ball_cache: Mutex::new(BTreeMap::new()),
        })
    }

    /// The four generators followed by their inverses.
    pub fn generators(&self) -> &[GroupElement; 8] {
        &self.generators
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    /// Circumradius of the Dirichlet octagon (the displacement bound for
    /// reduced representatives).
    pub fn circumradius(&self) -> f64 {
        self.circumradius
    }

    /// Residual of the octagon relation word, measured at construction.
    pub fn relation_residual(&self) -> f64 {
        self.relation_residual
    }

    /// Greedy reduction: repeatedly left-multiply by the generator that most
    /// decreases the displacement d(g.i, i); stop when none does. For the
    /// octagon group the stopping condition is exactly membership in the
    /// Dirichlet domain.
    pub fn reduce(&self, g: &GroupElement) -> Result<QuotientPoint> {
        if !g.is_finite() {
            return Err(Error::InvalidInput("reduce: non-finite matrix".into()));
        }
        let mut cur = *g;
        let mut norm = cur.frobenius_norm_sq();
        for iter in 0..self.params.reduce_max_iter {
            let mut best = norm;
            let mut best_mat = cur;
            for gen in &self.generators {
                let cand = gen.mul(&cur);
                let n = cand.frobenius_norm_sq();
                if n < best {
                    best = n;
                    best_mat = cand;
                }
            }
            if best >= norm {
                return Ok(QuotientPoint {
                    rep: cur.renormalize_det().sign_normalize(),
                });
            }
            cur = best_mat;
            norm = best;
            if iter % 64 == 63 {
                cur = cur.renormalize_det();
                norm = cur.frobenius_norm_sq();
            }
        }
        Err(Error::Resource(format!(
            "reduction did not terminate within {} iterations",
            self.params.reduce_max_iter
        )))
    }

    /// Install a precomputed ball (e.g. from an on-disk cache). The elements
    /// are validated and canonicalized exactly like a fresh enumeration.
    pub fn install_ball(&self, radius: f64, elements: Vec<GroupElement>) -> Result<()> {
        let keep = 2.0 * radius.cosh() + 1e-9;
        let mut out = Vec::with_capacity(elements.len());
        for g in elements {
            if !g.is_finite() || (g.det() - 1.0).abs() > 1e-6 {
                return Err(Error::Config("cached ball element is not in the group".into()));
            }
            if g.frobenius_norm_sq() > keep {
                return Err(Error::Config(format!(
                    "cached ball element exceeds radius {radius}"
                )));
            }
            out.push(g.sign_normalize());
        }
        out.sort_by(|p, q| {
            p.frobenius_norm_sq()
                .total_cmp(&q.frobenius_norm_sq())
                .then(p.a.total_cmp(&q.a))
                .then(p.b.total_cmp(&q.b))
                .then(p.c.total_cmp(&q.c))
                .then(p.d.total_cmp(&q.d))
        });
        self.ball_cache
            .lock()
            .unwrap()
            .insert(radius.to_bits(), Arc::new(out));
        Ok(())
    }

    /// All lattice elements (mod sign) with displacement d(g.i, i) <= radius,
    /// sign-normalized, deduped, closed under inverses, sorted canonically.
    pub fn ball(&self, radius: f64) -> Result<Arc<Vec<GroupElement>>> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput(format!("ball radius {radius} < 0")));
        }
        if radius > self.params.ball_radius_cap {
            return Err(Error::Resource(format!(
                "ball radius {radius} exceeds cap {}",
                self.params.ball_radius_cap
            )));
        }
        let key = radius.to_bits();
        {
            let cache = self.ball_cache.lock().unwrap();
            if let Some(b) = cache.get(&key) {
                return Ok(b.clone());
            }
        }
        let ball = Arc::new(self.enumerate_ball(radius));
        self.ball_cache
            .lock()
            .unwrap()
            .insert(key, ball.clone());
        Ok(ball)
    }

    fn enumerate_ball(&self, radius: f64) -> Vec<GroupElement> {
        let bound = radius + self.params.ball_margin;
        let norm_bound = 2.0 * bound.cosh();
        let mut dedup = Dedup::new(self.params.dedup_tol);
        let mut all: Vec<GroupElement> = Vec::new();
        let mut frontier: Vec<GroupElement> = vec![GroupElement::IDENTITY];
        dedup.insert(&GroupElement::IDENTITY, 0);
        all.push(GroupElement::IDENTITY);

        while !frontier.is_empty() && all.len() < 4_000_000 {
            let mut next = Vec::new();
            for w in &frontier {
                for gen in &self.generators {
                    let m = w.mul(gen).renormalize_det().sign_normalize();
                    if m.frobenius_norm_sq() > norm_bound {
                        continue;
                    }
                    if dedup.contains(&m, &all) {
                        continue;
                    }
                    dedup.insert(&m, all.len());
                    all.push(m);
                    next.push(m);
                }
            }
            frontier = next;
        }

        let keep = 2.0 * radius.cosh() + 1e-9;
        let mut out: Vec<GroupElement> = all
            .into_iter()
            .filter(|m| m.frobenius_norm_sq() <= keep)
            .collect();
        out.sort_by(|p, q| {
            p.frobenius_norm_sq()
                .total_cmp(&q.frobenius_norm_sq())
                .then(p.a.total_cmp(&q.a))
                .then(p.b.total_cmp(&q.b))
                .then(p.c.total_cmp(&q.c))
                .then(p.d.total_cmp(&q.d))
        });
        out
    }

    /// Dirichlet-domain membership of the projected point of `g` (frame part
    /// is irrelevant): no generator strictly decreases the displacement.
    fn in_domain(&self, g: &GroupElement) -> bool {
        let n = g.frobenius_norm_sq();
        self.generators
            .iter()
            .all(|gen| gen.mul(g).frobenius_norm_sq() >= n)
    }

    /// Draw `n` Haar-distributed points; deterministic in (sampler seed, index).
    pub fn sample_haar(&self, sampler: &HaarSampler, n: usize) -> Result<Vec<QuotientPoint>> {
        (0..n).map(|i| self.haar_point(sampler, i as u64)).collect()
    }

    /// The `index`-th point of the sampler's stream.
    pub fn haar_point(&self, sampler: &HaarSampler, index: u64) -> Result<QuotientPoint> {
        let mut rng = sampler.rng_for(index);
        let area = sampler.envelope_radius.cosh() - 1.0;
        for _ in 0..sampler.max_rejects {
            let u: f64 = rng.random();
            let r = (1.0 + u * area).acosh();
            // direction of the radial geodesic, uniform on the circle
            let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let rot = exp_flow(LieDirection::Theta, phi)?;
            let p = rot.mul(&exp_flow(LieDirection::X, r)?).mul(&rot.inv());
            if !self.in_domain(&p) {
                continue;
            }
            // frame angle in [0, 2pi) picks one representative per sign class
            let psi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let frame = p.mul(&exp_flow(LieDirection::Theta, psi)?);
            return self.reduce(&frame);
        }
        Err(Error::Config(format!(
            "rejection sampling failed {} times; acceptance rate below floor",
            sampler.max_rejects
        )))
    }
}

/// Rejection sampler for the normalized Haar measure on the quotient.
/// Identical seeds produce identical streams; samples are indexed so the
/// stream can be partitioned across workers deterministically.
#[derive(Clone, Debug)]
pub struct HaarSampler {
    pub seed: u64,
    pub envelope_radius: f64,
    pub max_rejects: usize,
}

impl HaarSampler {
    pub fn new(seed: u64) -> HaarSampler {
        HaarSampler {
            seed,
            // circumradius of the octagon: the whole domain fits in this disk
            envelope_radius: (3.0 + 2.0 * 2.0_f64.sqrt()).acosh(),
            max_rejects: 10_000,
        }
    }

    fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        rng
    }
}

/// Tolerance-aware matrix dedup keyed by quantized squared norm. The
/// tolerance is relative to the element norm: deep words accumulate float
/// error proportional to their size, while distinct elements stay separated
/// by roughly the reciprocal norm, so a relative band cleanly splits the two.
struct Dedup {
    tol: f64,
    index: BTreeMap<i64, Vec<u32>>,
}

impl Dedup {
    fn new(tol: f64) -> Dedup {
        Dedup {
            tol,
            index: BTreeMap::new(),
        }
    }

    fn key(&self, m: &GroupElement) -> i64 {
        // log-scale cells so equal elements land within one cell of each
        // other at every norm
        (m.frobenius_norm_sq().max(1.0).ln() * 1e6).round() as i64
    }

    fn contains(&self, m: &GroupElement, all: &[GroupElement]) -> bool {
        let k = self.key(m);
        let tol = self.tol * m.frobenius_norm().max(1.0);
        for kk in (k - 2)..=(k + 2) {
            if let Some(idxs) = self.index.get(&kk) {
                for &i in idxs {
                    if all[i as usize].frobenius_dist(m) <= tol {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn insert(&mut self, m: &GroupElement, idx: usize) {
        self.index.entry(self.key(m)).or_default().push(idx as u32);
    }
}

/// Candidate octagon relation words, as (generator index, exponent sign)
/// sequences over g_0..g_3. The word that actually evaluates to +/-I is
/// verified at startup.
const RELATION_CANDIDATES: &[&[(usize, i32)]] = &[
    // alternating word for opposite-side identifications
    &[
        (0, 1),
        (1, -1),
        (2, 1),
        (3, -1),
        (0, -1),
        (1, 1),
        (2, -1),
        (3, 1),
    ],
    // product of commutators [g0, g1][g2, g3]
    &[
        (0, 1),
        (1, 1),
        (0, -1),
        (1, -1),
        (2, 1),
        (3, 1),
        (2, -1),
        (3, -1),
    ],
    // cyclic word g0 g1 g2 g3 g0^-1 g1^-1 g2^-1 g3^-1
    &[
        (0, 1),
        (1, 1),
        (2, 1),
        (3, 1),
        (0, -1),
        (1, -1),
        (2, -1),
        (3, -1),
    ],
];

fn eval_word(gens: &[GroupElement; 8], word: &[(usize, i32)]) -> GroupElement {
    let mut m = GroupElement::IDENTITY;
    for &(k, e) in word {
        let g = if e >= 0 { gens[k] } else { gens[k + 4] };
        m = m.mul(&g);
    }
    m
}

/// Smallest residual |word -/+ I| over the candidate relation words.
fn best_relation_residual(gens: &[GroupElement; 8]) -> f64 {
    RELATION_CANDIDATES
        .iter()
        .map(|w| {
            eval_word(gens, w)
                .frobenius_dist_signless(&GroupElement::IDENTITY)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Write ball elements to a flat text file, one element per line, four
/// decimal entries separated by spaces.
pub fn write_ball_file(path: &std::path::Path, ball: &[GroupElement]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in ball {
        writeln!(f, "{:.17e} {:.17e} {:.17e} {:.17e}", g.a, g.b, g.c, g.d)?;
    }
    Ok(())
}

/// Read a ball file written by [`write_ball_file`].
pub fn read_ball_file(path: &std::path::Path) -> Result<Vec<GroupElement>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|e| {
                    Error::Config(format!("ball file line {}: {e}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(Error::Config(format!(
                "ball file line {}: expected 4 entries, got {}",
                lineno + 1,
                vals.len()
            )));
        }
        let g = GroupElement::new(vals[0], vals[1], vals[2], vals[3]);
        if (g.det() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "ball file line {}: determinant {} too far from 1",
                lineno + 1,
                g.det()
            )));
        }
        out.push(g);
    }
    Ok(out)
}
