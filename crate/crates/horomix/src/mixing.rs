//! Monte Carlo estimators for k-point correlations, geodesic-arc averages,
//! L2 multiple ergodic averages, the quantitative van der Corput inequality,
//! and decay-exponent fitting.
//!
//! Estimators derive every sample from (seed, sample index), accumulate into
//! 32 fixed batches, and combine batch results in index order, so a result
//! is bit-for-bit reproducible for a given seed regardless of the worker
//! count. Standard errors are batch-means errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{HaarSampler, Lattice, QuotientPoint};
use crate::observable::Observable;
use crate::sl2::{exp_flow, GroupElement, LieDirection};
use crate::timechange::FlowClock;

/// Number of batches for batch-means standard errors.
pub const BATCHES: usize = 32;

/// A Monte Carlo estimate with its batch-means standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct EstimateResult {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
}

/// Least-squares power-law fit on (log t, log |value|).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Result of the van der Corput inequality check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VdcReport {
    pub n_time: f64,
    pub l_time: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub boundary_term: f64,
    pub margin: f64,
    pub margin_stderr: f64,
    pub holds: bool,
    pub o_constant: f64,
    pub norm_scale: f64,
    pub n: u64,
    pub seed: u64,
}

/// Knobs for the correlation estimators.
#[derive(Clone, Copy, Debug)]
pub struct CorrelateOpts {
    /// Starts per trajectory; each start is an unbiased estimate of the same
    /// correlation by invariance, so bundling only reduces variance.
    pub bundle: usize,
    /// Spacing between bundle starts (flow time).
    pub bundle_step: f64,
}

impl Default for CorrelateOpts {
    fn default() -> Self {
        CorrelateOpts {
            bundle: 16,
            bundle_step: 2.0,
        }
    }
}

fn batch_ranges(n: u64) -> Vec<(u64, u64)> {
    let nb = n.div_ceil(BATCHES as u64).max(1);
    (0..BATCHES as u64)
        .map(|b| (b * nb, ((b + 1) * nb).min(n)))
        .filter(|(lo, hi)| hi > lo)
        .collect()
}

fn mean_sd(batch_means: &[f64]) -> (f64, f64) {
    let k = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / k;
    let var = batch_means
        .iter()
        .map(|m| (m - mean) * (m - mean))
        .sum::<f64>()
        / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

/// Evaluate an observable at a raw position, reducing first when the
/// representative exceeds the observable's completeness cap.
fn eval_obs(f: &dyn Observable, pos: &GroupElement, lat: &Lattice) -> Result<f64> {
    if pos.frobenius_norm_sq() <= f.eval_norm_cap() * f.eval_norm_cap() {
        Ok(f.eval(pos))
    } else {
        Ok(f.eval(lat.reduce(pos)?.rep()))
    }
}

/// Coupled k-point correlation estimate
/// `E[prod f_i o h^tau_{t_i}] - prod E[f_i]` against the tau-weighted
/// measure, with the product term estimated on an independent substream.
pub fn correlate_k(
    fs: &[Arc<dyn Observable>],
    ts: &[f64],
    clock: &FlowClock,
    n: u64,
    seed: u64,
    opts: CorrelateOpts,
) -> Result<EstimateResult> {
    validate_times(fs, ts)?;
    let span = ts[ts.len() - 1] + opts.bundle as f64 * opts.bundle_step;
    if span > clock.params().horizon {
        return Err(Error::Resource(format!(
            "correlate_k horizon exceeded: needs {span}, cap {}",
            clock.params().horizon
        )));
    }
    let lat = clock.lattice().clone();
    let sampler = HaarSampler::new(seed);
    let prod_sampler = HaarSampler::new(seed ^ 0x9e3779b97f4a7c15);
    let tau = clock.tau().clone();
    let ranges = batch_ranges(n);

    let batch_stats: Vec<Result<(f64, f64, Vec<f64>, f64)>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            // coupled product term
            let mut num = 0.0;
            let mut den = 0.0;
            for i in lo..hi {
                let x = lat.haar_point(&sampler, i)?;
                let w = tau.eval_point(&x);
                num += w * bundled_product(fs, ts, clock, &x, opts)?;
                den += w;
            }
            // product of means on the independent substream
            let mut means = vec![0.0; fs.len()];
            let mut den2 = 0.0;
            for i in lo..hi {
                let y = lat.haar_point(&prod_sampler, i)?;
                let w = tau.eval_point(&y);
                for (fl, m) in fs.iter().zip(means.iter_mut()) {
                    *m += w * fl.eval(y.rep());
                }
                den2 += w;
            }
            Ok((num, den, means, den2))
        })
        .collect();

    let mut est = Vec::with_capacity(batch_stats.len());
    for r in batch_stats {
        let (num, den, means, den2) = r?;
        let coupled = num / den;
        let prod: f64 = means.iter().map(|m| m / den2).product();
        est.push(coupled - prod);
    }
    let (value, stderr) = mean_sd(&est);
    Ok(EstimateResult {
        value,
        stderr,
        n,
        seed,
    })
}

fn validate_times(fs: &[Arc<dyn Observable>], ts: &[f64]) -> Result<()> {
    if fs.is_empty() || fs.len() != ts.len() {
        return Err(Error::InvalidInput(format!(
            "need matching nonempty observable/time lists, got {} and {}",
            fs.len(),
            ts.len()
        )));
    }
    if ts[0] != 0.0 {
        return Err(Error::InvalidInput("first time must be 0".into()));
    }
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("times must be nondecreasing".into()));
    }
    Ok(())
}

/// Average of the coupled product over bundle starts along one trajectory.
fn bundled_product(
    fs: &[Arc<dyn Observable>],
    ts: &[f64],
    clock: &FlowClock,
    x: &QuotientPoint,
    opts: CorrelateOpts,
) -> Result<f64> {
    let lat = clock.lattice();
    let bundle = opts.bundle.max(1);
    // (time, factor index, bundle index), walked in time order
    let mut schedule: Vec<(f64, u32, u32)> = Vec::with_capacity(fs.len() * bundle);
    for j in 0..bundle {
        let off = j as f64 * opts.bundle_step;
        for (l, &t) in ts.iter().enumerate() {
            schedule.push((t + off, l as u32, j as u32));
        }
    }
    schedule.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prods = vec![1.0f64; bundle];
    let mut traj = clock.trajectory(x)?;
    for (t, l, j) in schedule {
        let pos = traj.advance_to(t)?;
        prods[j as usize] *= eval_obs(fs[l as usize].as_ref(), &pos, lat)?;
    }
    Ok(prods.iter().sum::<f64>() / bundle as f64)
}

/// Windowed RMS correlation magnitude with both the magnitude and its
/// squared-magnitude (cross-product) scale. The squared scale is an
/// unbiased, possibly negative estimate with a jackknife error, which keeps
/// one-sided decay tests honest when the magnitude sits at the noise floor.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WindowedCorr {
    pub value: f64,
    pub stderr: f64,
    pub c_value: f64,
    pub c_stderr: f64,
    pub n: u64,
    pub seed: u64,
}

/// RMS correlation magnitude over a logarithmic window of the time tuple.
///
/// Pointwise horocycle correlations oscillate through zeros, so a fit of
/// pointwise magnitudes is ill-conditioned near the zero crossings. This
/// statistic scales the whole time tuple by factors in [1, 1 + window] on a
/// grid, estimates the centered product at each scale on two independent
/// sample halves, and returns sqrt(mean_k A_k B_k): the cross product kills
/// the noise bias, the window kills the zeros, and the decay exponent of the
/// pointwise bound is preserved.
pub fn windowed_corr_rms(
    fs: &[Arc<dyn Observable>],
    ts: &[f64],
    clock: &FlowClock,
    n: u64,
    seed: u64,
    opts: CorrelateOpts,
    window: f64,
    window_points: usize,
) -> Result<WindowedCorr> {
    validate_times(fs, ts)?;
    let nw = window_points.max(2);
    let t_max = ts[ts.len() - 1] * (1.0 + window) + opts.bundle as f64 * opts.bundle_step;
    if t_max > clock.params().horizon {
        return Err(Error::Resource("windowed correlation horizon exceeded".into()));
    }
    let lat = clock.lattice().clone();
    let tau = clock.tau().clone();
    let ranges = batch_ranges(n);
    let scales: Vec<f64> = (0..nw)
        .map(|k| 1.0 + window * k as f64 / (nw - 1) as f64)
        .collect();

    // per batch and half: weighted sums of the bundled product per window
    // node; halves are pooled across all batches before the cross product
    struct HalfAcc {
        num: Vec<f64>,
        den: f64,
    }
    let batch_accs: Vec<Result<[HalfAcc; 2]>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut accs = [
                HalfAcc {
                    num: vec![0.0; nw],
                    den: 0.0,
                },
                HalfAcc {
                    num: vec![0.0; nw],
                    den: 0.0,
                },
            ];
            let bundle = opts.bundle.max(1);
            let mut schedule: Vec<(f64, u32, u32, u32)> = Vec::new();
            for (k, s) in scales.iter().enumerate() {
                for j in 0..bundle {
                    let off = j as f64 * opts.bundle_step;
                    for (l, &t) in ts.iter().enumerate() {
                        schedule.push((t * s + off, l as u32, j as u32, k as u32));
                    }
                }
            }
            schedule.sort_by(|p, q| p.0.total_cmp(&q.0));
            for (hix, acc) in accs.iter_mut().enumerate() {
                let sampler =
                    HaarSampler::new(seed ^ (hix as u64 + 1).wrapping_mul(0xd1342543de82ef95));
                for i in lo..hi {
                    let x = lat.haar_point(&sampler, i)?;
                    let w = tau.eval_point(&x);
                    acc.den += w;
                    let mut prods = vec![1.0f64; bundle * nw];
                    let mut traj = clock.trajectory(&x)?;
                    for &(t, l, j, k) in &schedule {
                        let pos = traj.advance_to(t)?;
                        prods[(k as usize) * bundle + j as usize] *=
                            eval_obs(fs[l as usize].as_ref(), &pos, &lat)?;
                    }
                    for (k, h) in acc.num.iter_mut().enumerate() {
                        let avg: f64 =
                            prods[k * bundle..(k + 1) * bundle].iter().sum::<f64>() / bundle as f64;
                        *h += w * avg;
                    }
                }
            }
            Ok(accs)
        })
        .collect();

    let mut accs = Vec::with_capacity(batch_accs.len());
    for a in batch_accs {
        accs.push(a?);
    }
    // cross product of pooled halves, leaving out batch `skip` when given
    let cross = |skip: Option<usize>| -> f64 {
        let mut total = 0.0;
        for k in 0..nw {
            let mut half_means = [0.0f64; 2];
            for (hix, hm) in half_means.iter_mut().enumerate() {
                let mut num = 0.0;
                let mut den = 0.0;
                for (b, acc) in accs.iter().enumerate() {
                    if Some(b) == skip {
                        continue;
                    }
                    num += acc[hix].num[k];
                    den += acc[hix].den;
                }
                *hm = num / den;
            }
            total += half_means[0] * half_means[1];
        }
        total / nw as f64
    };
    let pooled = cross(None);
    // jackknife over batches for the variance of the cross product
    let nb = accs.len();
    let jk: Vec<f64> = (0..nb).map(|b| cross(Some(b))).collect();
    let jk_mean = jk.iter().sum::<f64>() / nb as f64;
    let jk_var = jk
        .iter()
        .map(|v| (v - jk_mean) * (v - jk_mean))
        .sum::<f64>()
        * (nb as f64 - 1.0)
        / nb as f64;
    let sd = jk_var.sqrt();
    let value = pooled.max(0.0).sqrt();
    let stderr = if value > 0.0 {
        sd / (2.0 * value)
    } else {
        sd.sqrt()
    };
    Ok(WindowedCorr {
        value,
        stderr,
        c_value: pooled,
        c_stderr: sd,
        n,
        seed,
    })
}

/// Quadrature of the geodesic-arc average
/// `(1/sigma) int_0^sigma f(h^tau_t(g_r x)) dr` with composite Simpson on
/// sigma/256 steps.
pub fn geodesic_arc_average(
    f: &dyn Observable,
    clock: &FlowClock,
    x: &QuotientPoint,
    sigma: f64,
    t: f64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidInput(format!(
            "arc length sigma must be in (0,1), got {sigma}"
        )));
    }
    let lat = clock.lattice();
    let steps = 256usize;
    let h = sigma / steps as f64;
    let mut acc = 0.0;
    for q in 0..=steps {
        let r = q as f64 * h;
        let base = lat.reduce(&x.rep().mul(&exp_flow(LieDirection::X, r)?))?;
        let moved = clock.flow_tau(&base, t)?;
        let v = eval_obs(f, moved.rep(), lat)?;
        let w = if q == 0 || q == steps {
            1.0
        } else if q % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * v;
    }
    Ok(acc * h / 3.0 / sigma)
}

/// Monte Carlo estimate of the L2(mu) norm of the multiple ergodic average
/// `(1/(n_t - m)) int_m^{n_t} prod_i f_i o h^tau_{K_i u} du`, inner
/// quadrature on (n_t - m)/512 steps.
pub fn l2_multi_average(
    fs: &[Arc<dyn Observable>],
    ks: &[f64],
    m: f64,
    n_t: f64,
    clock: &FlowClock,
    n: u64,
    seed: u64,
) -> Result<EstimateResult> {
    if fs.is_empty() || fs.len() != ks.len() {
        return Err(Error::InvalidInput(
            "need matching nonempty observable/K lists".into(),
        ));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] <= 0.0 {
        return Err(Error::InvalidInput(
            "speeds K must satisfy 0 < K_1 < ... < K_k".into(),
        ));
    }
    if (ks[ks.len() - 1] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput("last speed K_k must equal 1".into()));
    }
    if !(n_t > m) {
        return Err(Error::InvalidInput("need n_t > m".into()));
    }
    if n_t > clock.params().horizon {
        return Err(Error::Resource("l2 average horizon exceeded".into()));
    }
    let lat = clock.lattice().clone();
    let sampler = HaarSampler::new(seed);
    let ranges = batch_ranges(n);
    let steps = 512usize;
    let du = (n_t - m) / steps as f64;

    let batch_vals: Vec<Result<f64>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = 0.0;
            // (time, factor, node)
            let mut schedule: Vec<(f64, u32, u32)> = Vec::with_capacity(fs.len() * (steps + 1));
            for q in 0..=steps {
                let u = m + q as f64 * du;
                for (l, &k) in ks.iter().enumerate() {
                    schedule.push((k * u, l as u32, q as u32));
                }
            }
            schedule.sort_by(|p, q| p.0.total_cmp(&q.0));
            for i in lo..hi {
                let x = lat.haar_point(&sampler, i)?;
                let mut vals = vec![1.0f64; steps + 1];
                let mut traj = clock.trajectory(&x)?;
                for &(t, l, q) in &schedule {
                    let pos = traj.advance_to(t)?;
                    vals[q as usize] *= eval_obs(fs[l as usize].as_ref(), &pos, &lat)?;
                }
                let mut integral = 0.0;
                for (q, v) in vals.iter().enumerate() {
                    let w = if q == 0 || q == steps {
                        1.0
                    } else if q % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    integral += w * v;
                }
                integral *= du / 3.0 / (n_t - m);
                acc += integral * integral;
            }
            Ok(acc / (hi - lo) as f64)
        })
        .collect();

    let mut vals = Vec::with_capacity(batch_vals.len());
    for v in batch_vals {
        vals.push(v?);
    }
    let (mean, sd) = mean_sd(&vals);
    let value = mean.max(0.0).sqrt();
    let stderr = if value > 1e-300 {
        sd / (2.0 * value)
    } else {
        sd.sqrt()
    };
    Ok(EstimateResult {
        value,
        stderr,
        n,
        seed,
    })
}

/// Quantitative van der Corput check for the family `phi_u = f o h^tau_u`,
/// rescaled to unit L2 norm. Both sides are computed on a shared master grid
/// of 512 nodes over [0, N) (plus the L-overhang), in L2 of the tau-weighted
/// measure, with the big-O constant instantiated as 2:
/// `LHS <= sqrt((2/N) int (1/L) int |<phi_u, phi_{u+l}>|) + 2 L / N`.
pub fn vdc_check(
    f: &Arc<dyn Observable>,
    clock: &FlowClock,
    n_time: f64,
    l_time: f64,
    n: u64,
    seed: u64,
) -> Result<VdcReport> {
    if !(l_time > 0.0 && l_time < n_time) {
        return Err(Error::InvalidInput(format!(
            "need 0 < L < N, got L={l_time}, N={n_time}"
        )));
    }
    let lat = clock.lattice().clone();
    let tau = clock.tau().clone();
    let j_grid: usize = 512;
    let delta = n_time / j_grid as f64;
    let lam = ((l_time / delta).round() as usize).max(1);
    if n_time + l_time > clock.params().horizon {
        return Err(Error::Resource("vdc horizon exceeded".into()));
    }

    // unit-norm rescale of f, estimated on an independent substream
    let norm_sampler = HaarSampler::new(seed ^ 0xa0761d6478bd642f);
    let n_norm = n.min(20_000).max(1_000);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n_norm {
        let x = lat.haar_point(&norm_sampler, i)?;
        let w = tau.eval_point(&x);
        let v = f.eval(x.rep());
        num += w * v * v;
        den += w;
    }
    let norm = (num / den).sqrt();
    let scale = if norm > 1e-12 { 1.0 / norm } else { 1.0 };

    let sampler = HaarSampler::new(seed);
    let ranges = batch_ranges(n);
    let series_len = j_grid + lam + 1;

    struct BatchAcc {
        wsum: f64,
        lhs_sq: f64,
        corr: Vec<f64>, // j_grid x lam inner products, w-weighted sums
    }

    let batch_accs: Vec<Result<BatchAcc>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = BatchAcc {
                wsum: 0.0,
                lhs_sq: 0.0,
                corr: vec![0.0; j_grid * lam],
            };
            let mut series = vec![0.0f64; series_len];
            for i in lo..hi {
                let x = lat.haar_point(&sampler, i)?;
                let w = tau.eval_point(&x);
                let mut traj = clock.trajectory(&x)?;
                for (j, s) in series.iter_mut().enumerate() {
                    let pos = traj.advance_to(j as f64 * delta)?;
                    *s = scale * eval_obs(f.as_ref(), &pos, &lat)?;
                }
                let mean_j: f64 = series[..j_grid].iter().sum::<f64>() / j_grid as f64;
                acc.wsum += w;
                acc.lhs_sq += w * mean_j * mean_j;
                for j in 0..j_grid {
                    let sj = w * series[j];
                    let row = &mut acc.corr[j * lam..(j + 1) * lam];
                    for (l, r) in row.iter_mut().enumerate() {
                        *r += sj * series[j + l + 1];
                    }
                }
            }
            Ok(acc)
        })
        .collect();

    let mut accs = Vec::with_capacity(batch_accs.len());
    for a in batch_accs {
        accs.push(a?);
    }

    let eval_sides = |idx: &[usize]| -> (f64, f64) {
        let wsum: f64 = idx.iter().map(|&b| accs[b].wsum).sum();
        let lhs_sq: f64 = idx.iter().map(|&b| accs[b].lhs_sq).sum::<f64>() / wsum;
        let mut rhs_sq = 0.0;
        for j in 0..j_grid {
            let mut inner = 0.0;
            for l in 0..lam {
                let c: f64 = idx.iter().map(|&b| accs[b].corr[j * lam + l]).sum::<f64>() / wsum;
                inner += c.abs();
            }
            rhs_sq += inner / lam as f64;
        }
        rhs_sq *= 2.0 / j_grid as f64;
        (lhs_sq.max(0.0).sqrt(), rhs_sq.max(0.0).sqrt())
    };

    let all: Vec<usize> = (0..accs.len()).collect();
    let (lhs, rhs_main) = eval_sides(&all);
    let boundary = 2.0 * l_time / n_time;
    let margin = rhs_main + boundary - lhs;

    // batch-means stderr of the margin
    let mut margins = Vec::with_capacity(accs.len());
    for b in 0..accs.len() {
        let (l_b, r_b) = eval_sides(&[b]);
        margins.push(r_b + boundary - l_b);
    }
    let (_, margin_stderr) = mean_sd(&margins);

    Ok(VdcReport {
        n_time,
        l_time,
        lhs,
        rhs: rhs_main + boundary,
        boundary_term: boundary,
        margin,
        margin_stderr,
        holds: margin >= -3.0 * margin_stderr,
        o_constant: 2.0,
        norm_scale: scale,
        n,
        seed,
    })
}

/// Least squares on (log t, log |value|). Requires at least 4 usable points
/// (t > 0, value nonzero and finite).
pub fn fit_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, v)| t > 0.0 && v != 0.0 && v.is_finite())
        .collect();
    if usable.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 4 usable points, got {}",
            usable.len()
        )));
    }
    let (slope, intercept, r2) = log_log_ls(&usable);
    Ok(DecayFit {
        exponent: slope,
        intercept,
        r_squared: r2,
        points: points.to_vec(),
    })
}

fn log_log_ls(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.abs().ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let r2 = if ss_tot > 1e-30 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res <= 1e-30 {
        1.0
    } else {
        0.0
    };
    (slope, intercept, r2)
}

/// Weighted log-log slope with a delta-method standard error; usable from 2
/// points up (for slope-sign tests at a configured confidence).
pub fn fit_log_slope(points: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    let usable: Vec<(f64, f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, v, _)| t > 0.0 && v != 0.0 && v.is_finite())
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientData(
            "slope fit needs at least 2 usable points".into(),
        ));
    }
    let xs: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.1.abs().ln()).collect();
    // log-scale sigma by the delta method, floored to avoid zero weights
    let sig: Vec<f64> = usable
        .iter()
        .map(|p| (p.2 / p.1.abs()).max(1e-6))
        .collect();
    let w: Vec<f64> = sig.iter().map(|s| 1.0 / (s * s)).collect();
    let wsum: f64 = w.iter().sum();
    let xbar = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let ybar = ys.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let sxx: f64 = xs
        .iter()
        .zip(&w)
        .map(|(x, w)| w * (x - xbar) * (x - xbar))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter().zip(&w))
        .map(|(x, (y, w))| w * (x - xbar) * (y - ybar))
        .sum();
    Ok((sxy / sxx, (1.0 / sxx).sqrt()))
}

/// Empirical quantitative-mixing exponent: the negated decay-fit exponent of
/// correlation magnitude against the minimal time gap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QPropertyFit {
    pub k: usize,
    pub beta_k: f64,
    pub fit: DecayFit,
}

pub fn q_property_fit(k: usize, correlations: &[(f64, f64)]) -> Result<QPropertyFit> {
    let fit = fit_decay(correlations)?;
    Ok(QPropertyFit {
        k,
        beta_k: -fit.exponent,
        fit,
    })
}

/// Drop points below the noise floor (|value| < floor_mult * stderr);
/// returns kept (t, value) pairs and the flagged times.
pub fn apply_noise_floor(
    points: &[(f64, f64, f64)],
    floor_mult: f64,
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let mut kept = Vec::new();
    let mut flagged = Vec::new();
    for &(t, v, se) in points {
        if v.abs() >= floor_mult * se {
            kept.push((t, v));
        } else {
            flagged.push(t);
        }
    }
    (kept, flagged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observable::{default_bumps, default_tau, zero_mean, ConstObs, TimeChange};

    fn setup() -> (
        Arc<Lattice>,
        Arc<TimeChange>,
        FlowClock,
        Vec<Arc<dyn Observable>>,
    ) {
        let lat = Arc::new(Lattice::new().unwrap());
        let bumps = default_bumps(&lat).unwrap();
        let tau0 = TimeChange::trivial(&lat).unwrap();
        let clock = FlowClock::new(lat.clone(), tau0);
        let mut fs: Vec<Arc<dyn Observable>> = Vec::new();
        for b in bumps.iter() {
            let c = zero_mean(b.clone(), None, 20_000, &HaarSampler::new(100), &lat).unwrap();
            fs.push(Arc::new(c));
        }
        let tau = default_tau(&lat, 50_000, &HaarSampler::new(2024)).unwrap();
        (lat, tau, clock, fs)
    }

    #[test]
    fn correlate_validates_inputs() {
        let (_lat, _tau, clock, fs) = setup();
        let opts = CorrelateOpts::default();
        assert!(correlate_k(&fs[..2], &[0.0], &clock, 100, 1, opts).is_err());
        assert!(correlate_k(&fs[..2], &[1.0, 2.0], &clock, 100, 1, opts).is_err());
        assert!(correlate_k(&fs[..2], &[0.0, -1.0], &clock, 100, 1, opts).is_err());
        assert!(correlate_k(&fs[..2], &[0.0, 1e9], &clock, 100, 1, opts).is_err());
    }

    #[test]
    fn correlate_zero_mean_k1_is_unbiased() {
        let (_lat, _tau, clock, fs) = setup();
        let opts = CorrelateOpts {
            bundle: 4,
            bundle_step: 2.0,
        };
        let mut breaches = 0;
        for rep in 0..20 {
            let est = correlate_k(&fs[..1], &[0.0], &clock, 10_000, 500 + rep, opts).unwrap();
            if est.value.abs() > 3.0 * est.stderr {
                breaches += 1;
            }
        }
        assert!(breaches <= 2, "k=1 estimator breached 3 sigma {breaches}/20");
    }

    #[test]
    fn correlate_with_constant_factor_vanishes() {
        let (_lat, _tau, clock, fs) = setup();
        let consts: Vec<Arc<dyn Observable>> = vec![Arc::new(ConstObs(2.0)), fs[1].clone()];
        let est = correlate_k(
            &consts,
            &[0.0, 20.0],
            &clock,
            20_000,
            7,
            CorrelateOpts::default(),
        )
        .unwrap();
        assert!(
            est.value.abs() <= 3.0 * est.stderr,
            "constant factor should telescope: {} vs se {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn correlate_is_seed_deterministic() {
        let (_lat, _tau, clock, fs) = setup();
        let opts = CorrelateOpts::default();
        let a = correlate_k(&fs[..2], &[0.0, 15.0], &clock, 5_000, 99, opts).unwrap();
        let b = correlate_k(&fs[..2], &[0.0, 15.0], &clock, 5_000, 99, opts).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn two_point_correlation_decays() {
        let (_lat, _tau, clock, fs) = setup();
        let opts = CorrelateOpts::default();
        let near = correlate_k(&fs[..2], &[0.0, 2.0], &clock, 40_000, 11, opts).unwrap();
        let far = correlate_k(&fs[..2], &[0.0, 200.0], &clock, 40_000, 11, opts).unwrap();
        let sep = (near.value.abs() - far.value.abs())
            / (near.stderr * near.stderr + far.stderr * far.stderr).sqrt();
        assert!(
            sep > 3.0,
            "no decay separation: near {} ({}), far {} ({})",
            near.value,
            near.stderr,
            far.value,
            far.stderr
        );
    }

    #[test]
    fn arc_average_trivial_cases() {
        let (lat, _tau, clock, fs) = setup();
        let x = lat.sample_haar(&HaarSampler::new(5), 1).unwrap()[0];
        let zero = ConstObs(0.0);
        assert_eq!(
            geodesic_arc_average(&zero, &clock, &x, 0.5, 10.0).unwrap(),
            0.0
        );
        let v = geodesic_arc_average(fs[0].as_ref(), &clock, &x, 0.5, 10.0).unwrap();
        assert!(v.is_finite());
        assert!(geodesic_arc_average(&zero, &clock, &x, 1.5, 10.0).is_err());
    }

    #[test]
    fn l2_average_respects_modulus_bound_and_decays() {
        let (_lat, _tau, clock, fs) = setup();
        let pair: Vec<Arc<dyn Observable>> = vec![fs[0].clone(), fs[1].clone()];
        let ks = [0.5, 1.0];
        let short = l2_multi_average(&pair, &ks, 5.0, 30.0, &clock, 2_000, 3).unwrap();
        let long = l2_multi_average(&pair, &ks, 5.0, 405.0, &clock, 2_000, 3).unwrap();
        let bound: f64 = pair.iter().map(|f| f.sup_bound()).product();
        assert!(short.value <= bound + 3.0 * short.stderr);
        assert!(long.value <= bound + 3.0 * long.stderr);
        assert!(
            long.value < short.value,
            "longer window should not increase the average: {} vs {}",
            long.value,
            short.value
        );
        // zero observable gives exactly zero
        let zeros: Vec<Arc<dyn Observable>> = vec![Arc::new(ConstObs(0.0)), fs[1].clone()];
        let z = l2_multi_average(&zeros, &ks, 5.0, 30.0, &clock, 500, 3).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn l2_average_validates() {
        let (_lat, _tau, clock, fs) = setup();
        let pair: Vec<Arc<dyn Observable>> = vec![fs[0].clone(), fs[1].clone()];
        assert!(l2_multi_average(&pair, &[0.5, 0.9], 5.0, 30.0, &clock, 100, 3).is_err());
        assert!(l2_multi_average(&pair, &[0.5, 1.0], 30.0, 5.0, &clock, 100, 3).is_err());
        assert!(l2_multi_average(&pair, &[-0.5, 1.0], 5.0, 30.0, &clock, 100, 3).is_err());
    }

    #[test]
    fn vdc_constant_family_has_sqrt2_margin() {
        let (_lat, _tau, clock, _fs) = setup();
        let f: Arc<dyn Observable> = Arc::new(ConstObs(1.0));
        let rep = vdc_check(&f, &clock, 100.0, 10.0, 2_000, 9).unwrap();
        assert!(rep.holds);
        assert!((rep.lhs - 1.0).abs() <= 1e-9);
        let want = 2.0_f64.sqrt() + 0.2;
        assert!(
            (rep.rhs - want).abs() <= 1e-6,
            "constant family rhs {} vs {want}",
            rep.rhs
        );
    }

    #[test]
    fn vdc_zero_function() {
        let (_lat, _tau, clock, _fs) = setup();
        let f: Arc<dyn Observable> = Arc::new(ConstObs(0.0));
        let rep = vdc_check(&f, &clock, 100.0, 10.0, 1_000, 9).unwrap();
        assert!(rep.holds);
        assert!(rep.lhs.abs() <= 1e-12);
        assert!(rep.rhs >= 0.2 - 1e-12);
    }

    #[test]
    fn vdc_holds_for_default_bump() {
        let (_lat, _tau, clock, fs) = setup();
        let rep = vdc_check(&fs[0], &clock, 50.0, 5.0, 10_000, 12).unwrap();
        assert!(
            rep.holds,
            "vdc inequality violated: margin {} stderr {}",
            rep.margin, rep.margin_stderr
        );
        assert!(rep.margin > 0.0, "expected a positive margin");
    }

    #[test]
    fn vdc_rejects_bad_window() {
        let (_lat, _tau, clock, fs) = setup();
        assert!(vdc_check(&fs[0], &clock, 10.0, 20.0, 100, 1).is_err());
    }

    #[test]
    fn fit_decay_exact_cases() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&t: &f64| (t, t.powf(-0.5)))
            .collect();
        let fit = fit_decay(&pts).unwrap();
        assert!((fit.exponent + 0.5).abs() <= 1e-12);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);

        let flat: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&t| (t, 3.0)).collect();
        let fit2 = fit_decay(&flat).unwrap();
        assert!(fit2.exponent.abs() <= 1e-12);

        assert!(fit_decay(&pts[..3]).is_err());
    }

    #[test]
    fn fit_decay_with_noise() {
        let mut pts = Vec::new();
        let mut state = 88172645463325252u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &t in &[1.0f64, 3.0, 10.0, 30.0, 100.0, 300.0] {
            pts.push((t, t.powf(-0.5) * (1.0 + 0.05 * 2.0 * next())));
        }
        let fit = fit_decay(&pts).unwrap();
        assert!(
            fit.exponent > -0.6 && fit.exponent < -0.4,
            "noisy exponent {}",
            fit.exponent
        );
    }

    #[test]
    fn q_property_fit_basics() {
        let pts: Vec<(f64, f64)> = [10.0, 30.0, 100.0, 300.0]
            .iter()
            .map(|&g: &f64| (g, g.powf(-0.3)))
            .collect();
        let q = q_property_fit(3, &pts).unwrap();
        assert!((q.beta_k - 0.3).abs() <= 1e-12);
        let flat: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&t| (t, 2.0)).collect();
        assert!(q_property_fit(2, &flat).unwrap().beta_k.abs() <= 1e-12);
    }

    #[test]
    fn noise_floor_filters() {
        let pts = [(1.0, 1.0, 0.01), (2.0, 0.005, 0.01), (3.0, -0.5, 0.01)];
        let (kept, flagged) = apply_noise_floor(&pts, 2.0);
        assert_eq!(kept.len(), 2);
        assert_eq!(flagged, vec![2.0]);
    }

    #[test]
    fn windowed_rms_decays_for_homogeneous_flow() {
        let (_lat, _tau, clock, fs) = setup();
        let opts = CorrelateOpts {
            bundle: 8,
            bundle_step: 2.0,
        };
        let pair = &fs[..2];
        let near = windowed_corr_rms(pair, &[0.0, 10.0], &clock, 20_000, 21, opts, 0.5, 6).unwrap();
        let far = windowed_corr_rms(pair, &[0.0, 300.0], &clock, 20_000, 21, opts, 0.5, 6).unwrap();
        assert!(
            near.value > far.value,
            "windowed RMS should decay: near {} far {}",
            near.value,
            far.value
        );
        assert!(near.value > 3.0 * near.stderr.max(1e-12));
    }
}
