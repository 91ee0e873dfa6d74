//! Experiment drivers shared by the CLI and the acceptance suite: each takes
//! an [`ExperimentContext`] built from a config and returns a serializable
//! report. All runs are deterministic in (config, seed).

use serde::Serialize;
use std::sync::Arc;

use crate::cluster::{plan_3mix_auto, plan_kmix, run_procedure, CasePlan, ClusterInput,
    ClusterResult, KPlan};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::lattice::{HaarSampler, Lattice, QuotientPoint};
use crate::mixing::{
    apply_noise_floor, correlate_k, fit_decay, fit_log_slope, l2_multi_average, vdc_check,
    windowed_corr_rms, CorrelateOpts, DecayFit, EstimateResult, VdcReport, BATCHES,
};
use crate::observable::{zero_mean, Centered, Observable};
use crate::sl2::renormalization_residual;
use crate::timechange::FlowClock;

/// Everything a run needs: the lattice, the configured clock, a trivial
/// clock, and the zero-meaned observable suites (centered against the
/// tau-weighted measure for the configured clock, against the plain Haar
/// measure for the trivial one).
pub struct ExperimentContext {
    pub cfg: ExperimentConfig,
    pub lattice: Arc<Lattice>,
    pub clock: FlowClock,
    pub trivial_clock: FlowClock,
    pub fs: Vec<Arc<dyn Observable>>,
    pub fs_haar: Vec<Arc<dyn Observable>>,
}

impl ExperimentContext {
    pub fn new(cfg: ExperimentConfig) -> Result<ExperimentContext> {
        let lattice = cfg.build_lattice()?;
        warm_ball_cache(&lattice, &cfg)?;
        let clock = cfg.build_clock(&lattice)?;
        let trivial_clock = cfg.build_trivial_clock(&lattice)?;
        let bumps = cfg.build_bumps(&lattice)?;
        let sampler = HaarSampler::new(cfg.seed ^ 0x7a65726f6d65616e);
        let tau = clock.tau();
        let mut fs: Vec<Arc<dyn Observable>> = Vec::new();
        let mut fs_haar: Vec<Arc<dyn Observable>> = Vec::new();
        for b in bumps {
            let haar_centered: Centered<Arc<crate::observable::Bump>> = zero_mean(
                b.clone(),
                None,
                cfg.zero_mean_n as usize,
                &sampler,
                &lattice,
            )?;
            fs_haar.push(Arc::new(haar_centered));
            if tau.is_trivial() {
                fs.push(fs_haar.last().unwrap().clone());
            } else {
                let centered: Centered<Arc<crate::observable::Bump>> = zero_mean(
                    b,
                    Some(tau),
                    cfg.zero_mean_n as usize,
                    &sampler,
                    &lattice,
                )?;
                fs.push(Arc::new(centered));
            }
        }
        Ok(ExperimentContext {
            cfg,
            lattice,
            clock,
            trivial_clock,
            fs,
            fs_haar,
        })
    }

    /// The observable suite centered against the measure the given flow
    /// preserves.
    pub fn fs_for(&self, trivial: bool) -> &Vec<Arc<dyn Observable>> {
        if trivial {
            &self.fs_haar
        } else {
            &self.fs
        }
    }

    pub fn correlate_opts(&self) -> CorrelateOpts {
        CorrelateOpts {
            bundle: self.cfg.bundle as usize,
            bundle_step: self.cfg.bundle_step,
        }
    }
}

/// Load or populate the on-disk ball cache for every radius the
/// configuration will request.
fn warm_ball_cache(lattice: &Lattice, cfg: &ExperimentConfig) -> Result<()> {
    if cfg.ball_cache_dir.is_empty() {
        return Ok(());
    }
    let dir = std::path::Path::new(&cfg.ball_cache_dir);
    std::fs::create_dir_all(dir)?;
    let mut radii = vec![cfg.tau_bump.ball_radius];
    radii.extend(cfg.obs.iter().map(|o| o.ball_radius));
    radii.sort_by(|a, b| a.total_cmp(b));
    radii.dedup();
    for r in radii {
        let path = dir.join(format!("ball_{r}.txt"));
        if path.exists() {
            lattice.install_ball(r, crate::lattice::read_ball_file(&path)?)?;
        } else {
            let ball = lattice.ball(r)?;
            crate::lattice::write_ball_file(&path, &ball)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureCheck {
    pub t: f64,
    pub observable: usize,
    pub diff: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShearSample {
    pub s: f64,
    pub t: f64,
    pub a: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowCheckReport {
    pub renorm_max_residual: f64,
    pub renorm_pass: bool,
    pub trivial_u_max_residual: f64,
    pub trivial_u_pass: bool,
    pub cocycle_max_residual: f64,
    pub cocycle_pass: bool,
    pub round_trip_max_residual: f64,
    pub round_trip_pass: bool,
    pub measure: Vec<MeasureCheck>,
    pub measure_pass: bool,
    pub shear_a: Vec<ShearSample>,
    pub tau_is_trivial: bool,
    pub shear_zero_pass: Option<bool>,
    pub pass: bool,
}

/// Renormalization grid, cocycle contracts, measure invariance, and a small
/// shearing table.
pub fn run_flow_check(ctx: &ExperimentContext) -> Result<FlowCheckReport> {
    let cfg = &ctx.cfg;
    // renormalization identity over the signed grid
    let mut renorm_max: f64 = 0.0;
    for &t in &cfg.check_renorm_ts {
        for &s in &cfg.check_renorm_ss {
            for (ts, ss) in [(t, s), (-t, s), (t, -s), (-t, -s)] {
                renorm_max = renorm_max.max(renormalization_residual(ts, ss)?);
            }
        }
    }
    let renorm_pass = renorm_max <= 1e-10;

    // trivial tau: u = t
    let sampler = HaarSampler::new(cfg.seed ^ 0x636f6379636c65);
    let mut trivial_max: f64 = 0.0;
    {
        let x = ctx.lattice.haar_point(&sampler, 0)?;
        for &t in &[1.0, 5.0, 25.0, cfg.check_cocycle_tmax] {
            trivial_max = trivial_max.max((ctx.trivial_clock.u_of(&x, t)? - t).abs());
        }
    }
    let trivial_u_pass = trivial_max <= 1e-8;

    // cocycle additivity and round trip for the configured tau
    let mut cocycle_max: f64 = 0.0;
    let mut round_max: f64 = 0.0;
    for i in 0..cfg.check_cocycle_samples {
        let x = ctx.lattice.haar_point(&sampler, i + 1)?;
        let t1 = 0.5 + (i as f64 * 1.831) % cfg.check_cocycle_tmax;
        let t2 = 0.25 + (i as f64 * 2.719) % cfg.check_cocycle_tmax;
        let u12 = ctx.clock.u_of(&x, t1 + t2)?;
        let u1 = ctx.clock.u_of(&x, t1)?;
        let mid = ctx.clock.flow_tau(&x, t1)?;
        let u2 = ctx.clock.u_of(&mid, t2)?;
        cocycle_max = cocycle_max.max((u12 - u1 - u2).abs());
        let back = ctx.clock.inverse_clock(&x, u12)?;
        round_max = round_max.max((back - (t1 + t2)).abs());
    }
    let cocycle_pass = cocycle_max <= 1e-6;
    let round_trip_pass = round_max <= 1e-7;

    // measure preservation via the coupled difference estimator
    let mut measure = Vec::new();
    for &t in &cfg.check_measure_ts {
        for obs_ix in 0..2usize {
            let est = measure_invariance(ctx, obs_ix, t, cfg.check_measure_n)?;
            measure.push(MeasureCheck {
                t,
                observable: obs_ix,
                diff: est.value,
                stderr: est.stderr,
                pass: est.value.abs() <= 3.0 * est.stderr,
            });
        }
    }
    let measure_pass = measure.iter().all(|m| m.pass);

    // shearing discrepancies on a small grid
    let mut shear_a = Vec::new();
    let shear_sampler = HaarSampler::new(cfg.seed ^ 0x73686561725f61);
    for &t in &cfg.check_shear_ts {
        for i in 0..4u64 {
            let x = ctx.lattice.haar_point(&shear_sampler, i)?;
            shear_a.push(ShearSample {
                s: cfg.shear_s,
                t,
                a: ctx.clock.shear_discrepancy(&x, cfg.shear_s, t)?,
            });
        }
    }
    let tau_is_trivial = ctx.clock.tau().is_trivial();
    let shear_zero_pass = if tau_is_trivial {
        Some(shear_a.iter().all(|s| s.a.abs() <= 10.0 * cfg.tol))
    } else {
        None
    };

    let pass = renorm_pass
        && trivial_u_pass
        && cocycle_pass
        && round_trip_pass
        && measure_pass
        && shear_zero_pass.unwrap_or(true);
    Ok(FlowCheckReport {
        renorm_max_residual: renorm_max,
        renorm_pass,
        trivial_u_max_residual: trivial_max,
        trivial_u_pass,
        cocycle_max_residual: cocycle_max,
        cocycle_pass,
        round_trip_max_residual: round_max,
        round_trip_pass,
        measure,
        measure_pass,
        shear_a,
        tau_is_trivial,
        shear_zero_pass,
        pass,
    })
}

/// Coupled estimate of E[f o h^tau_t] - E[f] against the tau-weighted
/// measure (zero for a measure-preserving flow).
pub fn measure_invariance(
    ctx: &ExperimentContext,
    obs_ix: usize,
    t: f64,
    n: u64,
) -> Result<EstimateResult> {
    let f = ctx.fs[obs_ix].clone();
    let lat = ctx.lattice.clone();
    let tau = ctx.clock.tau().clone();
    let sampler = HaarSampler::new(ctx.cfg.seed ^ 0x6d656173757265);
    use rayon::prelude::*;
    let ranges: Vec<(u64, u64)> = {
        let nb = n.div_ceil(BATCHES as u64).max(1);
        (0..BATCHES as u64)
            .map(|b| (b * nb, ((b + 1) * nb).min(n)))
            .filter(|(lo, hi)| hi > lo)
            .collect()
    };
    let vals: Vec<Result<f64>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in lo..hi {
                let x = lat.haar_point(&sampler, i)?;
                let w = tau.eval_point(&x);
                let moved = ctx.clock.flow_tau(&x, t)?;
                num += w * (f.eval(moved.rep()) - f.eval(x.rep()));
                den += w;
            }
            Ok(num / den)
        })
        .collect();
    let mut means = Vec::with_capacity(vals.len());
    for v in vals {
        means.push(v?);
    }
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (k - 1.0).max(1.0);
    Ok(EstimateResult {
        value: mean,
        stderr: (var / k).sqrt(),
        n,
        seed: ctx.cfg.seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelateRow {
    pub min_gap: f64,
    pub value: f64,
    pub stderr: f64,
    /// Squared-magnitude (cross-product) scale: unbiased, may be negative.
    pub c_value: f64,
    pub c_stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub flagged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelateReport {
    pub k: usize,
    pub rows: Vec<CorrelateRow>,
    pub fit: Option<DecayFit>,
    pub empirical_gamma: Option<f64>,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub slope_negative_at_confidence: Option<bool>,
    /// One-sided endpoint test on the squared-magnitude scale: does the
    /// value at the largest gap sit below the value at the smallest gap at
    /// the configured confidence? Robust when far gaps are noise-bound.
    pub decay_confirmed_at_confidence: Option<bool>,
    /// Exponent of the confirmed decay lower bound (magnitude scale).
    pub decay_exponent_bound: Option<f64>,
    pub fit_note: String,
}

/// Decay profile of the windowed RMS correlation magnitude over the
/// configured gaps; times are the equally spaced tuple (0, g, ..., (k-1) g).
pub fn run_correlate(ctx: &ExperimentContext, k: usize, trivial: bool) -> Result<CorrelateReport> {
    if !(2..=5).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "correlate needs 2 <= k <= 5, got {k}"
        )));
    }
    let cfg = &ctx.cfg;
    let clock = if trivial { &ctx.trivial_clock } else { &ctx.clock };
    let suite = ctx.fs_for(trivial);
    let fs: Vec<Arc<dyn Observable>> = (0..k).map(|i| suite[i % suite.len()].clone()).collect();
    let opts = ctx.correlate_opts();
    let mut rows = Vec::new();
    for &gap in &cfg.correlate_gaps {
        let ts: Vec<f64> = (0..k).map(|i| i as f64 * gap).collect();
        match windowed_corr_rms(
            &fs,
            &ts,
            clock,
            cfg.correlate_n,
            cfg.seed,
            opts,
            cfg.window,
            cfg.window_points as usize,
        ) {
            Ok(est) => rows.push(CorrelateRow {
                min_gap: gap,
                value: est.value,
                stderr: est.stderr,
                c_value: est.c_value,
                c_stderr: est.c_stderr,
                n: est.n,
                seed: est.seed,
                flagged: false,
                error: None,
            }),
            Err(Error::Resource(msg)) => rows.push(CorrelateRow {
                min_gap: gap,
                value: f64::NAN,
                stderr: f64::NAN,
                c_value: f64::NAN,
                c_stderr: f64::NAN,
                n: cfg.correlate_n,
                seed: cfg.seed,
                flagged: true,
                error: Some(msg),
            }),
            Err(e) => return Err(e),
        }
    }

    let usable: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| !r.flagged && r.value.is_finite())
        .map(|r| (r.min_gap, r.value, r.stderr))
        .collect();
    let (kept, floored) = apply_noise_floor(&usable, cfg.noise_floor);
    for r in rows.iter_mut() {
        if floored.contains(&r.min_gap) {
            r.flagged = true;
        }
    }
    let fit = fit_decay(&kept).ok();
    let slope = fit_log_slope(
        &usable
            .iter()
            .filter(|(t, _, _)| !floored.contains(t))
            .copied()
            .collect::<Vec<_>>(),
    )
    .ok();
    // one-sided endpoint decay test on the squared-magnitude scale: the raw
    // cross product is unbiased even when the magnitude hits the noise floor
    let endpoint = {
        let clean: Vec<&CorrelateRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        match (clean.first(), clean.last()) {
            (Some(first), Some(last)) if clean.len() >= 2 => {
                let z = cfg.confidence_z;
                let c_lo_first = first.c_value - z * first.c_stderr;
                let c_up_last = (last.c_value + z * last.c_stderr).max(0.0);
                if c_lo_first > 0.0 {
                    let confirmed = c_up_last < c_lo_first;
                    let bound = if c_up_last > 0.0 {
                        -(c_up_last.ln() - c_lo_first.ln())
                            / (2.0 * (last.min_gap / first.min_gap).ln())
                    } else {
                        f64::INFINITY
                    };
                    Some((confirmed, bound))
                } else {
                    Some((false, f64::NAN))
                }
            }
            _ => None,
        }
    };
    let fit_note = match (&fit, &slope) {
        (Some(f), _) => format!(
            "decay fit: exponent {:.4}, r^2 {:.4}, {} points, {} below noise floor",
            f.exponent,
            f.r_squared,
            kept.len(),
            floored.len()
        ),
        (None, Some(_)) => format!(
            "insufficient data for a 4-point decay fit ({} usable); slope test only",
            kept.len()
        ),
        (None, None) => "insufficient data for any fit".into(),
    };
    Ok(CorrelateReport {
        k,
        rows,
        empirical_gamma: fit.as_ref().map(|f| -f.exponent),
        fit,
        slope: slope.map(|s| s.0),
        slope_stderr: slope.map(|s| s.1),
        slope_negative_at_confidence: slope.map(|(m, se)| m + cfg.confidence_z * se < 0.0),
        decay_confirmed_at_confidence: endpoint.map(|(c, _)| c),
        decay_exponent_bound: endpoint.map(|(_, b)| b),
        fit_note,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ShearRow {
    pub s: f64,
    pub t: f64,
    pub max_abs_a: f64,
    pub mean_abs_a: f64,
    pub commutation_residual_max: f64,
    pub samples: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShearReport {
    pub rows: Vec<ShearRow>,
    pub fit: Option<DecayFit>,
    pub growth_exponent: Option<f64>,
    pub exponent_bound: f64,
    pub within_bound: Option<bool>,
    pub tau_is_trivial: bool,
}

/// Shearing discrepancies over the T grid; `deviation = true` computes the
/// ergodic-integral deviation along the homogeneous orbit instead of the
/// renormalization defect A.
pub fn run_shear(ctx: &ExperimentContext, deviation: bool) -> Result<ShearReport> {
    let cfg = &ctx.cfg;
    let clock = &ctx.clock;
    let sampler = HaarSampler::new(cfg.seed ^ 0x41736865617254);
    let s = cfg.shear_s;
    let tau_is_trivial = clock.tau().is_trivial();
    use rayon::prelude::*;
    let mut rows = Vec::new();
    for &t in &cfg.shear_ts {
        let idx: Vec<u64> = (0..cfg.shear_samples).collect();
        let vals: Vec<Result<(f64, f64)>> = idx
            .par_iter()
            .map(|&i| {
                let x = ctx.lattice.haar_point(&sampler, i)?;
                let a = if deviation {
                    clock.deviation_integral(&x, s, t)?
                } else {
                    clock.shear_discrepancy(&x, s, t)?
                };
                let resid = if !deviation && i < 4 {
                    clock.shear_commutation_residual(&x, s, t)?
                } else {
                    0.0
                };
                Ok((a, resid))
            })
            .collect();
        let mut max_a: f64 = 0.0;
        let mut sum_a = 0.0;
        let mut max_resid: f64 = 0.0;
        for v in vals {
            let (a, r) = v?;
            max_a = max_a.max(a.abs());
            sum_a += a.abs();
            max_resid = max_resid.max(r);
        }
        rows.push(ShearRow {
            s,
            t,
            max_abs_a: max_a,
            mean_abs_a: sum_a / cfg.shear_samples.max(1) as f64,
            commutation_residual_max: max_resid,
            samples: cfg.shear_samples,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.t, r.max_abs_a))
        .filter(|(_, v)| *v > 0.0)
        .collect();
    let fit = if tau_is_trivial { None } else { fit_decay(&pts).ok() };
    let bound = 1.0 - cfg.beta + 0.15;
    Ok(ShearReport {
        rows,
        growth_exponent: fit.as_ref().map(|f| f.exponent),
        within_bound: fit.as_ref().map(|f| f.exponent <= bound),
        fit,
        exponent_bound: bound,
        tau_is_trivial,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct L2Row {
    pub window: f64,
    pub value: f64,
    pub stderr: f64,
    pub modulus_bound: f64,
    pub bound_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct L2Report {
    pub rows: Vec<L2Row>,
    pub decay_separation_sigmas: Option<f64>,
    pub monotone_decay: Option<bool>,
}

/// L2 multiple ergodic averages over the configured window lengths.
pub fn run_l2avg(ctx: &ExperimentContext) -> Result<L2Report> {
    let cfg = &ctx.cfg;
    let k = cfg.l2_speeds.len();
    if k < 1 || k > ctx.fs.len() {
        return Err(Error::InvalidInput("l2avg: bad speed count".into()));
    }
    let fs: Vec<Arc<dyn Observable>> = (0..k).map(|i| ctx.fs[i].clone()).collect();
    let bound: f64 = fs.iter().map(|f| f.sup_bound()).product();
    let mut rows = Vec::new();
    for &w in &cfg.l2_windows {
        let est = l2_multi_average(
            &fs,
            &cfg.l2_speeds,
            cfg.l2_m,
            cfg.l2_m + w,
            &ctx.clock,
            cfg.l2_n,
            cfg.seed,
        )?;
        rows.push(L2Row {
            window: w,
            value: est.value,
            stderr: est.stderr,
            modulus_bound: bound,
            bound_ok: est.value <= bound + 3.0 * est.stderr,
        });
    }
    let sep = if rows.len() >= 2 {
        let first = &rows[0];
        let last = &rows[rows.len() - 1];
        let se = (first.stderr * first.stderr + last.stderr * last.stderr).sqrt();
        Some((first.value - last.value) / se.max(1e-300))
    } else {
        None
    };
    Ok(L2Report {
        rows,
        monotone_decay: sep.map(|s| s > 3.0),
        decay_separation_sigmas: sep,
    })
}

/// Van der Corput checks over the configured (N, L) grid; any violation
/// fails the run.
pub fn run_vdc(ctx: &ExperimentContext) -> Result<Vec<VdcReport>> {
    let cfg = &ctx.cfg;
    let f = ctx.fs[0].clone();
    let mut out = Vec::new();
    for &n_time in &cfg.vdc_ns {
        for &l_time in &cfg.vdc_ls {
            out.push(vdc_check(
                &f,
                &ctx.clock,
                n_time,
                l_time,
                cfg.vdc_n,
                cfg.seed,
            )?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterReport {
    pub input: ClusterInput,
    pub result: ClusterResult,
    pub gap_bound: f64,
    pub min_gap: f64,
    pub gap_bound_holds_if_stopped_at_k: Option<bool>,
}

pub fn run_cluster(ctx: &ExperimentContext) -> Result<ClusterReport> {
    let cfg = &ctx.cfg;
    let input = ClusterInput::new(cfg.cluster_zetas.clone(), cfg.cluster_times.clone())?;
    let result = run_procedure(&input)?;
    let k = input.k();
    let t_k = input.times[k];
    let min_gap = input
        .times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let gap_bound = t_k.powf(result.xi_k);
    let holds = if result.stop_step == k {
        Some(min_gap >= gap_bound)
    } else {
        None
    };
    Ok(ClusterReport {
        input,
        result,
        gap_bound,
        min_gap,
        gap_bound_holds_if_stopped_at_k: holds,
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum PlanReport {
    Three { plan: CasePlan, reflected: bool },
    K(KPlan),
}

pub fn run_plan(ctx: &ExperimentContext, times: Option<&[f64]>) -> Result<PlanReport> {
    let cfg = &ctx.cfg;
    match times {
        Some(ts) if ts.len() > 3 => {
            let k = ts.len() - 1;
            if cfg.cluster_zetas.len() != k {
                return Err(Error::InvalidInput(format!(
                    "plan: need {k} weights in cluster.zetas for {} times",
                    ts.len()
                )));
            }
            Ok(PlanReport::K(plan_kmix(&cfg.cluster_zetas, ts)?))
        }
        Some(ts) if ts.len() == 3 => {
            let (plan, reflected) = plan_3mix_auto(ts[1], ts[2], cfg.beta)?;
            Ok(PlanReport::Three { plan, reflected })
        }
        Some(_) => Err(Error::InvalidInput("plan needs at least 3 times".into())),
        None => {
            let (plan, reflected) = plan_3mix_auto(cfg.plan_t1, cfg.plan_t2, cfg.beta)?;
            Ok(PlanReport::Three { plan, reflected })
        }
    }
}

/// Draws for the `sample` subcommand: points with weights.
pub fn run_sample(ctx: &ExperimentContext) -> Result<Vec<(QuotientPoint, f64)>> {
    let cfg = &ctx.cfg;
    if cfg.sample_weighted {
        crate::observable::sample_mu_tau(
            cfg.sample_n as usize,
            ctx.clock.tau(),
            &HaarSampler::new(cfg.seed),
            &ctx.lattice,
        )
    } else {
        Ok(ctx
            .lattice
            .sample_haar(&HaarSampler::new(cfg.seed), cfg.sample_n as usize)?
            .into_iter()
            .map(|p| (p, 1.0))
            .collect())
    }
}

/// Point correlation at a single equally spaced tuple, exposed for the CLI's
/// pointwise mode and the acceptance comparisons.
pub fn point_correlation(
    ctx: &ExperimentContext,
    k: usize,
    gap: f64,
    trivial: bool,
) -> Result<EstimateResult> {
    let clock = if trivial { &ctx.trivial_clock } else { &ctx.clock };
    let suite = ctx.fs_for(trivial);
    let fs: Vec<Arc<dyn Observable>> = (0..k).map(|i| suite[i % suite.len()].clone()).collect();
    let ts: Vec<f64> = (0..k).map(|i| i as f64 * gap).collect();
    correlate_k(
        &fs,
        &ts,
        clock,
        ctx.cfg.correlate_n,
        ctx.cfg.seed,
        ctx.correlate_opts(),
    )
}
