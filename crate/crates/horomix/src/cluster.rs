//! The combinatorial time-clustering procedure, its minimal-gap guarantee,
//! and the Case A/B experiment planners.
//!
//! Given k weights in (0,1) and times 0 = t_0 < ... < t_k, the procedure
//! shrinks a covering radius step by step: r_1 = t_k^{zeta_1/(12k)} and
//! r_{m+1} = r_m^{zeta_{m+1}/(12k)}. At each step the covering set is
//! [0, r] plus [anchor +- r] for every anchor picked so far plus
//! [t_k - r, t_k]; if some time is uncovered, the largest uncovered index
//! becomes a new anchor. The procedure stops by step k, and stopping exactly
//! at step k certifies min gap >= t_k^{xi_k} with xi_k = prod(zeta)/(12k)^k.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterInput {
    pub zetas: Vec<f64>,
    pub times: Vec<f64>,
}

impl ClusterInput {
    pub fn new(zetas: Vec<f64>, times: Vec<f64>) -> Result<ClusterInput> {
        let input = ClusterInput { zetas, times };
        input.validate()?;
        Ok(input)
    }

    pub fn k(&self) -> usize {
        self.zetas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.zetas.len();
        if k == 0 || self.times.len() != k + 1 {
            return Err(Error::InvalidInput(format!(
                "need k >= 1 weights and k+1 times, got {} and {}",
                k,
                self.times.len()
            )));
        }
        if self.zetas.iter().any(|z| !(*z > 0.0 && *z < 1.0)) {
            return Err(Error::InvalidInput(
                "weights must lie strictly inside (0,1)".into(),
            ));
        }
        if self.times[0] != 0.0 {
            return Err(Error::InvalidInput("first time must be 0".into()));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        if self.times[k] <= 1.0 {
            return Err(Error::InvalidInput("final time must exceed 1".into()));
        }
        Ok(())
    }
}

/// Which interval of the covering set a time landed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "anchor", rename_all = "snake_case")]
pub enum CoverInterval {
    Left,
    Anchor(usize),
    Right,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Step at which the procedure stopped (1-based, <= k).
    pub stop_step: usize,
    /// Radii r_1 .. r_stop.
    pub radii: Vec<f64>,
    /// Anchor indices s_1 .. s_{stop-1} (each in 1..k).
    pub anchors: Vec<usize>,
    /// Covering interval of each t_i at the stopping radius.
    pub assignment: Vec<CoverInterval>,
    /// prod(zeta_i) / (12 k)^k.
    pub xi_k: f64,
}

/// xi_k = prod(zeta_i) / (12 k)^k. Weights outside (0,1) are accepted here
/// so boundary arithmetic can be tested; run_procedure validates its input.
pub fn xi_k(zetas: &[f64], k: usize) -> Result<f64> {
    if zetas.len() != k || k == 0 {
        return Err(Error::InvalidInput(format!(
            "xi_k: need exactly k={k} weights, got {}",
            zetas.len()
        )));
    }
    let prod: f64 = zetas.iter().product();
    Ok(prod / (12.0 * k as f64).powi(k as i32))
}

fn covered(t: f64, r: f64, anchors: &[usize], times: &[f64]) -> Option<CoverInterval> {
    if t <= r {
        return Some(CoverInterval::Left);
    }
    let t_k = times[times.len() - 1];
    for (j, &s) in anchors.iter().enumerate() {
        if (t - times[s]).abs() <= r {
            return Some(CoverInterval::Anchor(j));
        }
    }
    if t >= t_k - r {
        return Some(CoverInterval::Right);
    }
    None
}

/// Execute the clustering procedure literally.
pub fn run_procedure(input: &ClusterInput) -> Result<ClusterResult> {
    input.validate()?;
    let k = input.k();
    let times = &input.times;
    let t_k = times[k];
    let denom = 12.0 * k as f64;

    let mut radii = vec![t_k.powf(input.zetas[0] / denom)];
    let mut anchors: Vec<usize> = Vec::new();
    for step in 1..=k {
        let r = radii[step - 1];
        let uncovered: Vec<usize> = (0..=k)
            .filter(|&i| covered(times[i], r, &anchors, times).is_none())
            .collect();
        if uncovered.is_empty() {
            let assignment = times
                .iter()
                .map(|&t| covered(t, r, &anchors, times).expect("covered"))
                .collect();
            return Ok(ClusterResult {
                stop_step: step,
                radii,
                anchors,
                assignment,
                xi_k: xi_k(&input.zetas, k)?,
            });
        }
        if step == k {
            // the procedure provably stops by step k for admissible inputs
            return Err(Error::Model(
                "clustering procedure failed to stop by step k".into(),
            ));
        }
        let s = *uncovered.iter().filter(|&&i| i < k).max().ok_or_else(|| {
            Error::Model("uncovered point with no admissible anchor".into())
        })?;
        anchors.push(s);
        radii.push(r.powf(input.zetas[step] / denom));
    }
    unreachable!("loop returns by step k");
}

/// Reflection normalization t_i -> t_k - t_{k-i}, applied when the minimal
/// gap sits only at the left end; the output keeps the first time at 0 and
/// reverses the multiset of gaps.
pub fn normalize_times(ts: &[f64]) -> Result<(Vec<f64>, bool)> {
    if ts.is_empty() || ts[0] != 0.0 {
        return Err(Error::InvalidInput("times must start at 0".into()));
    }
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("times must be sorted".into()));
    }
    let k = ts.len() - 1;
    if k < 2 {
        return Ok((ts.to_vec(), false));
    }
    let gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    let min_all = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_tail = gaps[1..].iter().cloned().fold(f64::INFINITY, f64::min);
    if min_all < min_tail {
        let t_k = ts[k];
        let reflected: Vec<f64> = (0..=k).map(|i| t_k - ts[k - i]).collect();
        Ok((reflected, true))
    } else {
        Ok((ts.to_vec(), false))
    }
}

/// Planner output for the 3-point case.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CasePlan {
    pub case: char,
    pub sigma: f64,
    pub threshold: f64,
    pub k_ratio: f64,
    /// K > (sigma t2)^{-3/2}, the precondition for the Case B reduction.
    pub case_b_precondition: bool,
    pub t1: f64,
    pub t2: f64,
    pub beta: f64,
}

/// Case split for three times (0, t1, t2): geodesic-arc length
/// sigma = t2^{-(1 - beta/3)}, Case A when t1 <= t2^{1 - beta/2}, else
/// Case B with speed ratio K = t1/t2.
pub fn plan_3mix(t1: f64, t2: f64, beta: f64) -> Result<CasePlan> {
    if !(t2 > 1.0) {
        return Err(Error::InvalidInput(format!(
            "out of regime: need t2 > 1, got {t2}"
        )));
    }
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::InvalidInput(format!(
            "need 0 < beta < 1/2, got {beta}"
        )));
    }
    if !(t1 >= 1.0 && t1 <= t2 - t1) {
        return Err(Error::InvalidInput(format!(
            "need 1 <= t1 <= t2 - t1 after reflection, got t1={t1}, t2={t2}"
        )));
    }
    let sigma = t2.powf(-(1.0 - beta / 3.0));
    let threshold = t2.powf(1.0 - beta / 2.0);
    let k_ratio = t1 / t2;
    let case = if t1 <= threshold { 'A' } else { 'B' };
    let case_b_precondition = k_ratio > (sigma * t2).powf(-1.5);
    Ok(CasePlan {
        case,
        sigma,
        threshold,
        k_ratio,
        case_b_precondition,
        t1,
        t2,
        beta,
    })
}

/// Reflect (0, t1, t2) into the planner's normal form when needed, then
/// plan. The 3-point normalization makes the first gap the smaller one
/// (t1 <= t2 - t1), which is the opposite convention from
/// [`normalize_times`].
pub fn plan_3mix_auto(t1: f64, t2: f64, beta: f64) -> Result<(CasePlan, bool)> {
    if !(t2 > t1 && t1 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < t1 < t2, got t1={t1}, t2={t2}"
        )));
    }
    let reflected = t1 > t2 - t1;
    let t1_eff = if reflected { t2 - t1 } else { t1 };
    Ok((plan_3mix(t1_eff, t2, beta)?, reflected))
}

/// Planner output for the k-point case.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KPlan {
    pub case: char,
    pub reflected: bool,
    pub cluster: ClusterResult,
    /// alpha = min(1/(3k), xi_k/2); set for Case B.
    pub alpha: f64,
    /// sigma = t_k^{-alpha^2}; set for Case B.
    pub sigma: f64,
}

/// Run the clustering procedure on (possibly reflected) times; stopping
/// before step k routes to the reduction of Case A, stopping exactly at
/// step k certifies the gap bound and yields the geodesic-arc length for
/// Case B.
pub fn plan_kmix(zetas: &[f64], times: &[f64]) -> Result<KPlan> {
    let (ts, reflected) = normalize_times(times)?;
    let input = ClusterInput::new(zetas.to_vec(), ts)?;
    let k = input.k();
    let t_k = input.times[k];
    let cluster = run_procedure(&input)?;
    let alpha = (1.0 / (3.0 * k as f64)).min(cluster.xi_k / 2.0);
    let case = if cluster.stop_step < k { 'A' } else { 'B' };
    let sigma = t_k.powf(-alpha * alpha);
    Ok(KPlan {
        case,
        reflected,
        cluster,
        alpha,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xi_k_formula() {
        assert!((xi_k(&[1.0], 1).unwrap() - 1.0 / 12.0).abs() <= 1e-15);
        assert!((xi_k(&[0.5, 0.5], 2).unwrap() - 0.25 / 576.0).abs() <= 1e-18);
        assert!((xi_k(&[0.3, 0.4, 0.5], 3).unwrap() - 0.06 / 46656.0).abs() <= 1e-18);
        assert!(xi_k(&[0.5], 2).is_err());
    }

    #[test]
    fn worked_example_k2() {
        let input = ClusterInput::new(vec![0.5, 0.5], vec![0.0, 500.0, 1000.0]).unwrap();
        let res = run_procedure(&input).unwrap();
        assert_eq!(res.stop_step, 2);
        assert_eq!(res.anchors, vec![1]);
        assert!((res.radii[0] - 1000.0_f64.powf(1.0 / 48.0)).abs() <= 1e-15);
        assert!((res.xi_k - 0.25 / 576.0).abs() <= 1e-18);
        // gap guarantee: min gap 500 >= 1000^{xi_2}
        assert!(500.0 >= 1000.0_f64.powf(res.xi_k));
        assert_eq!(
            res.assignment,
            vec![
                CoverInterval::Left,
                CoverInterval::Anchor(0),
                CoverInterval::Right
            ]
        );
    }

    #[test]
    fn stops_at_step_one_when_everything_hugs_the_ends() {
        // r_1 = 100^{0.9/12} ~ 1.4; all times within r_1 of the ends
        let input = ClusterInput::new(vec![0.9], vec![0.0, 100.0]).unwrap();
        let res = run_procedure(&input).unwrap();
        assert_eq!(res.stop_step, 1);
        assert!(res.anchors.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ClusterInput::new(vec![], vec![0.0]).is_err());
        assert!(ClusterInput::new(vec![1.2], vec![0.0, 10.0]).is_err());
        assert!(ClusterInput::new(vec![0.5], vec![0.5, 10.0]).is_err());
        assert!(ClusterInput::new(vec![0.5], vec![0.0, 0.9]).is_err());
        assert!(ClusterInput::new(vec![0.5, 0.5], vec![0.0, 5.0, 5.0]).is_err());
    }

    #[test]
    fn normalize_times_examples() {
        let (ts, refl) = normalize_times(&[0.0, 1.0, 10.0]).unwrap();
        assert!(refl);
        assert_eq!(ts, vec![0.0, 9.0, 10.0]);
        let (ts2, refl2) = normalize_times(&[0.0, 5.0, 10.0]).unwrap();
        assert!(!refl2);
        assert_eq!(ts2, vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn plan_3mix_examples() {
        let plan = plan_3mix(10.0, 1e4, 0.45).unwrap();
        assert_eq!(plan.case, 'A');
        assert!((plan.sigma - 1e4_f64.powf(-0.85)).abs() <= 1e-18);
        assert!((plan.sigma.log10() + 3.4).abs() <= 1e-12);
        assert!((plan.threshold - 1e4_f64.powf(0.775)).abs() <= 1e-9);

        let plan_b = plan_3mix(5000.0, 1e4, 0.45).unwrap();
        assert_eq!(plan_b.case, 'B');
        assert!(plan_b.case_b_precondition);

        assert!(plan_3mix(0.5, 1.0, 0.45).is_err());
        assert!(plan_3mix(10.0, 1e4, 0.7).is_err());
    }

    #[test]
    fn plan_3mix_auto_reflects() {
        // t1 > t2 - t1 forces the reflection t1' = t2 - t1
        let (plan, reflected) = plan_3mix_auto(9000.0, 1e4, 0.45).unwrap();
        assert!(reflected);
        assert!((plan.t1 - 1000.0).abs() <= 1e-9);
    }

    #[test]
    fn plan_kmix_cases() {
        // clustered interior times stop early: Case A
        let plan = plan_kmix(&[0.5, 0.5, 0.5], &[0.0, 500.0, 500.5, 1000.0]).unwrap();
        assert_eq!(plan.case, 'A');
        // well-separated times reach step k: Case B with the gap bound
        let plan_b = plan_kmix(&[0.5, 0.5], &[0.0, 500.0, 1000.0]).unwrap();
        assert_eq!(plan_b.case, 'B');
        assert!(plan_b.sigma < 1.0);
        assert!(plan_b.alpha <= 1.0 / 6.0);
    }

    fn arb_input() -> impl Strategy<Value = ClusterInput> {
        (1usize..=5).prop_flat_map(|k| {
            let zetas = proptest::collection::vec(0.05f64..0.95, k);
            let t_k = 1.5f64..1e6;
            let interior = proptest::collection::vec(0.0f64..1.0, k - 1);
            (zetas, t_k, interior).prop_map(move |(zetas, t_k, interior)| {
                let mut times = vec![0.0];
                let mut cuts = interior;
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for c in cuts {
                    // squash toward the ends now and then to exercise clustering
                    times.push((0.5 + 0.5 * c) * c * t_k);
                }
                times.push(t_k);
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
                // keep strictly increasing; drop degenerate cases by nudging
                for i in 1..times.len() {
                    if times[i] <= times[i - 1] {
                        times[i] = times[i - 1] + 1e-9 * (1.0 + times[i - 1].abs());
                    }
                }
                let k_eff = times.len() - 1;
                ClusterInput {
                    zetas: zetas[..k_eff].to_vec(),
                    times,
                }
            })
        })
    }

    proptest! {
        #[test]
        fn procedure_terminates_and_certifies_gap(input in arb_input()) {
            prop_assume!(input.validate().is_ok());
            let k = input.k();
            let res = run_procedure(&input).unwrap();
            prop_assert!(res.stop_step >= 1 && res.stop_step <= k);
            // radii strictly decreasing for t_k > 1
            for w in res.radii.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
            if res.stop_step == k {
                let min_gap = input
                    .times
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::INFINITY, f64::min);
                let t_k = input.times[k];
                prop_assert!(
                    min_gap >= t_k.powf(res.xi_k) - 1e-12,
                    "gap bound violated: {} < {}",
                    min_gap,
                    t_k.powf(res.xi_k)
                );
            }
        }

        #[test]
        fn normalize_preserves_gap_multiset(input in arb_input()) {
            prop_assume!(input.validate().is_ok());
            let (ts, _refl) = normalize_times(&input.times).unwrap();
            let mut g1: Vec<f64> = input.times.windows(2).map(|w| w[1] - w[0]).collect();
            let mut g2: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
            g1.sort_by(|a, b| a.partial_cmp(b).unwrap());
            g2.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in g1.iter().zip(&g2) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
            // involution up to the flag
            let (ts3, _r3) = normalize_times(&ts).unwrap();
            prop_assert_eq!(ts3.len(), ts.len());
        }
    }
}
