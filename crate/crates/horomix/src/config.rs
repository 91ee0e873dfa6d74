//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers. Every field has a default; write-then-read is the
//! identity; unknown keys are rejected. Command-line overrides use the same
//! `section.key=value` addressing.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{HaarSampler, Lattice, LatticeParams};
use crate::observable::{default_specs, default_tau_spec, make_tau, Bump, BumpSpec, TimeChange};
use crate::sl2::GroupElement;
use crate::timechange::{ClockParams, FlowClock};

#[derive(Clone, Debug, PartialEq)]
pub struct BumpConfig {
    pub center: [f64; 4],
    pub radius: f64,
    pub amplitude: f64,
    pub ball_radius: f64,
}

impl BumpConfig {
    fn from_spec(spec: &BumpSpec) -> BumpConfig {
        BumpConfig {
            center: spec.center.entries(),
            radius: spec.radius,
            amplitude: spec.amplitude,
            ball_radius: spec.ball_radius,
        }
    }

    pub fn to_spec(&self) -> BumpSpec {
        BumpSpec::new(
            GroupElement::from_entries(self.center),
            self.radius,
            self.amplitude,
            self.ball_radius,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    // lattice
    pub ball_radius_cap: f64,
    pub ball_margin: f64,
    pub dedup_tol: f64,
    pub reduce_max_iter: u64,
    /// Directory for the optional on-disk ball cache ("" disables it).
    pub ball_cache_dir: String,
    // model
    pub beta: f64,
    // tau
    pub tau_bump: BumpConfig,
    pub tau_c: f64,
    pub tau_norm_n: u64,
    // observables
    pub obs: [BumpConfig; 3],
    pub zero_mean_n: u64,
    // clock
    pub step_init: f64,
    pub tol: f64,
    pub max_steps: u64,
    pub checkpoint: f64,
    pub horizon: f64,
    pub quad_tol: f64,
    // run
    pub seed: u64,
    pub threads: u64,
    pub out_dir: String,
    // correlate
    pub correlate_k: u64,
    pub correlate_gaps: Vec<f64>,
    pub correlate_n: u64,
    pub bundle: u64,
    pub bundle_step: f64,
    pub window: f64,
    pub window_points: u64,
    pub noise_floor: f64,
    pub confidence_z: f64,
    // shear / deviation
    pub shear_s: f64,
    pub shear_ts: Vec<f64>,
    pub shear_samples: u64,
    // vdc
    pub vdc_ns: Vec<f64>,
    pub vdc_ls: Vec<f64>,
    pub vdc_n: u64,
    // l2avg
    pub l2_speeds: Vec<f64>,
    pub l2_m: f64,
    pub l2_windows: Vec<f64>,
    pub l2_n: u64,
    // cluster / plan
    pub cluster_zetas: Vec<f64>,
    pub cluster_times: Vec<f64>,
    pub plan_t1: f64,
    pub plan_t2: f64,
    // sample
    pub sample_n: u64,
    pub sample_weighted: bool,
    // flow-check
    pub check_renorm_ts: Vec<f64>,
    pub check_renorm_ss: Vec<f64>,
    pub check_cocycle_samples: u64,
    pub check_cocycle_tmax: f64,
    pub check_measure_n: u64,
    pub check_measure_ts: Vec<f64>,
    pub check_shear_ts: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let specs = default_specs();
        ExperimentConfig {
            ball_radius_cap: 8.0,
            ball_margin: 5.1,
            dedup_tol: 1e-8,
            reduce_max_iter: 10_000,
            ball_cache_dir: String::new(),
            beta: 0.45,
            tau_bump: BumpConfig::from_spec(&default_tau_spec()),
            tau_c: 0.3,
            tau_norm_n: 50_000,
            obs: [
                BumpConfig::from_spec(&specs[0]),
                BumpConfig::from_spec(&specs[1]),
                BumpConfig::from_spec(&specs[2]),
            ],
            zero_mean_n: 50_000,
            step_init: 0.01,
            tol: 1e-8,
            max_steps: 20_000_000,
            checkpoint: 50.0,
            horizon: 1e4,
            quad_tol: 1e-12,
            seed: 42,
            threads: 0,
            out_dir: "out".into(),
            correlate_k: 2,
            correlate_gaps: vec![10.0, 30.0, 100.0, 300.0],
            correlate_n: 200_000,
            bundle: 16,
            bundle_step: 2.0,
            window: 0.5,
            window_points: 8,
            noise_floor: 2.0,
            confidence_z: 1.645,
            shear_s: 0.1,
            shear_ts: vec![10.0, 30.0, 100.0, 300.0, 1000.0],
            shear_samples: 50,
            vdc_ns: vec![50.0, 100.0, 200.0],
            vdc_ls: vec![5.0, 10.0, 20.0],
            vdc_n: 100_000,
            l2_speeds: vec![0.5, 1.0],
            l2_m: 25.0,
            l2_windows: vec![25.0, 400.0],
            l2_n: 20_000,
            cluster_zetas: vec![0.5, 0.5],
            cluster_times: vec![0.0, 500.0, 1000.0],
            plan_t1: 10.0,
            plan_t2: 1e4,
            sample_n: 1_000,
            sample_weighted: false,
            check_renorm_ts: vec![1.0, 10.0, 100.0, 1000.0],
            check_renorm_ss: vec![0.5, 1.0, 5.0],
            check_cocycle_samples: 100,
            check_cocycle_tmax: 50.0,
            check_measure_n: 20_000,
            check_measure_ts: vec![10.0, 100.0],
            check_shear_ts: vec![10.0, 50.0],
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn bump_entries(section: &str, b: &BumpConfig, out: &mut Vec<(String, String)>) {
    out.push((format!("{section}.center"), fmt_list(&b.center)));
    out.push((format!("{section}.radius"), format!("{}", b.radius)));
    out.push((format!("{section}.amplitude"), format!("{}", b.amplitude)));
    out.push((
        format!("{section}.ball_radius"),
        format!("{}", b.ball_radius),
    ));
}

impl ExperimentConfig {
    /// All entries as ordered (section.key, value) pairs; the canonical
    /// serialization order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        let p = |k: &str, v: String| (k.to_string(), v);
        e.push(p("lattice.ball_radius_cap", format!("{}", self.ball_radius_cap)));
        e.push(p("lattice.ball_margin", format!("{}", self.ball_margin)));
        e.push(p("lattice.dedup_tol", format!("{}", self.dedup_tol)));
        e.push(p("lattice.reduce_max_iter", format!("{}", self.reduce_max_iter)));
        e.push(p("lattice.ball_cache_dir", self.ball_cache_dir.clone()));
        e.push(p("model.beta", format!("{}", self.beta)));
        bump_entries("tau", &self.tau_bump, &mut e);
        e.push(p("tau.c", format!("{}", self.tau_c)));
        e.push(p("tau.norm_n", format!("{}", self.tau_norm_n)));
        for (i, o) in self.obs.iter().enumerate() {
            bump_entries(&format!("obs{i}"), o, &mut e);
        }
        e.push(p("obs.zero_mean_n", format!("{}", self.zero_mean_n)));
        e.push(p("clock.step_init", format!("{}", self.step_init)));
        e.push(p("clock.tol", format!("{}", self.tol)));
        e.push(p("clock.max_steps", format!("{}", self.max_steps)));
        e.push(p("clock.checkpoint", format!("{}", self.checkpoint)));
        e.push(p("clock.horizon", format!("{}", self.horizon)));
        e.push(p("clock.quad_tol", format!("{}", self.quad_tol)));
        e.push(p("run.seed", format!("{}", self.seed)));
        e.push(p("run.threads", format!("{}", self.threads)));
        e.push(p("run.out_dir", self.out_dir.clone()));
        e.push(p("correlate.k", format!("{}", self.correlate_k)));
        e.push(p("correlate.gaps", fmt_list(&self.correlate_gaps)));
        e.push(p("correlate.n", format!("{}", self.correlate_n)));
        e.push(p("correlate.bundle", format!("{}", self.bundle)));
        e.push(p("correlate.bundle_step", format!("{}", self.bundle_step)));
        e.push(p("correlate.window", format!("{}", self.window)));
        e.push(p("correlate.window_points", format!("{}", self.window_points)));
        e.push(p("correlate.noise_floor", format!("{}", self.noise_floor)));
        e.push(p("correlate.confidence_z", format!("{}", self.confidence_z)));
        e.push(p("shear.s", format!("{}", self.shear_s)));
        e.push(p("shear.ts", fmt_list(&self.shear_ts)));
        e.push(p("shear.samples", format!("{}", self.shear_samples)));
        e.push(p("vdc.ns", fmt_list(&self.vdc_ns)));
        e.push(p("vdc.ls", fmt_list(&self.vdc_ls)));
        e.push(p("vdc.n", format!("{}", self.vdc_n)));
        e.push(p("l2avg.speeds", fmt_list(&self.l2_speeds)));
        e.push(p("l2avg.m", format!("{}", self.l2_m)));
        e.push(p("l2avg.windows", fmt_list(&self.l2_windows)));
        e.push(p("l2avg.n", format!("{}", self.l2_n)));
        e.push(p("cluster.zetas", fmt_list(&self.cluster_zetas)));
        e.push(p("cluster.times", fmt_list(&self.cluster_times)));
        e.push(p("plan.t1", format!("{}", self.plan_t1)));
        e.push(p("plan.t2", format!("{}", self.plan_t2)));
        e.push(p("sample.n", format!("{}", self.sample_n)));
        e.push(p("sample.weighted", format!("{}", self.sample_weighted)));
        e.push(p("flowcheck.renorm_ts", fmt_list(&self.check_renorm_ts)));
        e.push(p("flowcheck.renorm_ss", fmt_list(&self.check_renorm_ss)));
        e.push(p("flowcheck.cocycle_samples", format!("{}", self.check_cocycle_samples)));
        e.push(p("flowcheck.cocycle_tmax", format!("{}", self.check_cocycle_tmax)));
        e.push(p("flowcheck.measure_n", format!("{}", self.check_measure_n)));
        e.push(p("flowcheck.measure_ts", fmt_list(&self.check_measure_ts)));
        e.push(p("flowcheck.shear_ts", fmt_list(&self.check_shear_ts)));
        e
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in self.entries() {
            let (sec, name) = key.split_once('.').expect("section.key");
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec.to_string();
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(sec) = line.strip_prefix('[') {
                let sec = sec.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: malformed section header", lineno + 1))
                })?;
                section = sec.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key outside any [section]",
                    lineno + 1
                )));
            }
            map.insert(
                format!("{section}.{}", key.trim()),
                value.trim().to_string(),
            );
        }
        ExperimentConfig::from_map(map)
    }

    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        let mut map: BTreeMap<String, String> = self.entries().into_iter().collect();
        for (k, v) in overrides {
            if !map.contains_key(k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        *self = ExperimentConfig::from_map(map)?;
        Ok(())
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let known: Vec<String> = cfg.entries().into_iter().map(|(k, _)| k).collect();
        for key in map.keys() {
            if !known.contains(key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        let mut take = |key: &str| map.remove(key);
        fn f64_of(key: &str, v: String) -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| Error::Config(format!("{key}: {e}")))
        }
        fn u64_of(key: &str, v: String) -> Result<u64> {
            v.parse::<u64>()
                .map_err(|e| Error::Config(format!("{key}: {e}")))
        }
        fn list_of(key: &str, v: String) -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Config(format!("{key}: {e}")))
                })
                .collect()
        }
        fn quad_of(key: &str, v: String) -> Result<[f64; 4]> {
            let l = list_of(key, v)?;
            if l.len() != 4 {
                return Err(Error::Config(format!("{key}: expected 4 entries")));
            }
            Ok([l[0], l[1], l[2], l[3]])
        }

        macro_rules! set_f64 {
            ($key:expr, $field:expr) => {
                if let Some(v) = take($key) {
                    $field = f64_of($key, v)?;
                }
            };
        }
        macro_rules! set_u64 {
            ($key:expr, $field:expr) => {
                if let Some(v) = take($key) {
                    $field = u64_of($key, v)?;
                }
            };
        }
        macro_rules! set_list {
            ($key:expr, $field:expr) => {
                if let Some(v) = take($key) {
                    $field = list_of($key, v)?;
                }
            };
        }

        set_f64!("lattice.ball_radius_cap", cfg.ball_radius_cap);
        set_f64!("lattice.ball_margin", cfg.ball_margin);
        set_f64!("lattice.dedup_tol", cfg.dedup_tol);
        set_u64!("lattice.reduce_max_iter", cfg.reduce_max_iter);
        if let Some(v) = take("lattice.ball_cache_dir") {
            cfg.ball_cache_dir = v;
        }
        set_f64!("model.beta", cfg.beta);
        if let Some(v) = take("tau.center") {
            cfg.tau_bump.center = quad_of("tau.center", v)?;
        }
        set_f64!("tau.radius", cfg.tau_bump.radius);
        set_f64!("tau.amplitude", cfg.tau_bump.amplitude);
        set_f64!("tau.ball_radius", cfg.tau_bump.ball_radius);
        set_f64!("tau.c", cfg.tau_c);
        set_u64!("tau.norm_n", cfg.tau_norm_n);
        for i in 0..3 {
            if let Some(v) = take(&format!("obs{i}.center")) {
                cfg.obs[i].center = quad_of("obs.center", v)?;
            }
            if let Some(v) = take(&format!("obs{i}.radius")) {
                cfg.obs[i].radius = f64_of("obs.radius", v)?;
            }
            if let Some(v) = take(&format!("obs{i}.amplitude")) {
                cfg.obs[i].amplitude = f64_of("obs.amplitude", v)?;
            }
            if let Some(v) = take(&format!("obs{i}.ball_radius")) {
                cfg.obs[i].ball_radius = f64_of("obs.ball_radius", v)?;
            }
        }
        set_u64!("obs.zero_mean_n", cfg.zero_mean_n);
        set_f64!("clock.step_init", cfg.step_init);
        set_f64!("clock.tol", cfg.tol);
        set_u64!("clock.max_steps", cfg.max_steps);
        set_f64!("clock.checkpoint", cfg.checkpoint);
        set_f64!("clock.horizon", cfg.horizon);
        set_f64!("clock.quad_tol", cfg.quad_tol);
        set_u64!("run.seed", cfg.seed);
        set_u64!("run.threads", cfg.threads);
        if let Some(v) = take("run.out_dir") {
            cfg.out_dir = v;
        }
        set_u64!("correlate.k", cfg.correlate_k);
        set_list!("correlate.gaps", cfg.correlate_gaps);
        set_u64!("correlate.n", cfg.correlate_n);
        set_u64!("correlate.bundle", cfg.bundle);
        set_f64!("correlate.bundle_step", cfg.bundle_step);
        set_f64!("correlate.window", cfg.window);
        set_u64!("correlate.window_points", cfg.window_points);
        set_f64!("correlate.noise_floor", cfg.noise_floor);
        set_f64!("correlate.confidence_z", cfg.confidence_z);
        set_f64!("shear.s", cfg.shear_s);
        set_list!("shear.ts", cfg.shear_ts);
        set_u64!("shear.samples", cfg.shear_samples);
        set_list!("vdc.ns", cfg.vdc_ns);
        set_list!("vdc.ls", cfg.vdc_ls);
        set_u64!("vdc.n", cfg.vdc_n);
        set_list!("l2avg.speeds", cfg.l2_speeds);
        set_f64!("l2avg.m", cfg.l2_m);
        set_list!("l2avg.windows", cfg.l2_windows);
        set_u64!("l2avg.n", cfg.l2_n);
        set_list!("cluster.zetas", cfg.cluster_zetas);
        set_list!("cluster.times", cfg.cluster_times);
        set_f64!("plan.t1", cfg.plan_t1);
        set_f64!("plan.t2", cfg.plan_t2);
        set_u64!("sample.n", cfg.sample_n);
        if let Some(v) = take("sample.weighted") {
            cfg.sample_weighted = v
                .parse::<bool>()
                .map_err(|e| Error::Config(format!("sample.weighted: {e}")))?;
        }
        set_list!("flowcheck.renorm_ts", cfg.check_renorm_ts);
        set_list!("flowcheck.renorm_ss", cfg.check_renorm_ss);
        set_u64!("flowcheck.cocycle_samples", cfg.check_cocycle_samples);
        set_f64!("flowcheck.cocycle_tmax", cfg.check_cocycle_tmax);
        set_u64!("flowcheck.measure_n", cfg.check_measure_n);
        set_list!("flowcheck.measure_ts", cfg.check_measure_ts);
        set_list!("flowcheck.shear_ts", cfg.check_shear_ts);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(Error::Config(format!(
                "model.beta must be in (0, 1/2), got {}",
                self.beta
            )));
        }
        if !(self.tau_bump.radius > 0.0) || !(self.obs.iter().all(|o| o.radius > 0.0)) {
            return Err(Error::Config("bump radii must be positive".into()));
        }
        if self.correlate_k < 1 || self.correlate_k > 5 {
            return Err(Error::Config(format!(
                "correlate.k must be in [1, 5], got {}",
                self.correlate_k
            )));
        }
        if self.noise_floor < 0.0 || self.window < 0.0 {
            return Err(Error::Config("noise_floor and window must be >= 0".into()));
        }
        Ok(())
    }

    pub fn lattice_params(&self) -> LatticeParams {
        LatticeParams {
            ball_radius_cap: self.ball_radius_cap,
            ball_margin: self.ball_margin,
            dedup_tol: self.dedup_tol,
            reduce_max_iter: self.reduce_max_iter as usize,
        }
    }

    pub fn clock_params(&self) -> ClockParams {
        ClockParams {
            step_init: self.step_init,
            tol: self.tol,
            max_steps: self.max_steps as usize,
            checkpoint: self.checkpoint,
            horizon: self.horizon,
            quad_tol: self.quad_tol,
        }
    }

    pub fn build_lattice(&self) -> Result<Arc<Lattice>> {
        Ok(Arc::new(Lattice::with_params(self.lattice_params())?))
    }

    pub fn build_tau(&self, lattice: &Arc<Lattice>) -> Result<Arc<TimeChange>> {
        let bump = Arc::new(Bump::new(lattice, self.tau_bump.to_spec())?);
        make_tau(
            bump,
            self.tau_c,
            self.tau_norm_n as usize,
            &HaarSampler::new(self.seed ^ 0x7461755f6e6f726d),
            lattice,
        )
    }

    pub fn build_trivial_clock(&self, lattice: &Arc<Lattice>) -> Result<FlowClock> {
        let tau = TimeChange::trivial(lattice)?;
        Ok(FlowClock::with_params(
            lattice.clone(),
            tau,
            self.clock_params(),
        ))
    }

    pub fn build_clock(&self, lattice: &Arc<Lattice>) -> Result<FlowClock> {
        let tau = self.build_tau(lattice)?;
        Ok(FlowClock::with_params(
            lattice.clone(),
            tau,
            self.clock_params(),
        ))
    }

    pub fn build_bumps(&self, lattice: &Arc<Lattice>) -> Result<Vec<Arc<Bump>>> {
        self.obs
            .iter()
            .map(|o| Ok(Arc::new(Bump::new(lattice, o.to_spec())?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_text();
        let back = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg =
            ExperimentConfig::from_text("[run]\nseed = 7\n\n[model]\nbeta = 0.3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.beta, 0.3);
        assert_eq!(cfg.correlate_n, ExperimentConfig::default().correlate_n);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ExperimentConfig::from_text("[run]\nsead = 7\n").is_err());
        assert!(ExperimentConfig::from_text("[nope]\nseed = 7\n").is_err());
        assert!(ExperimentConfig::from_text("seed = 7\n").is_err());
        assert!(ExperimentConfig::from_text("[run]\nseed 7\n").is_err());
        assert!(ExperimentConfig::from_text("[model]\nbeta = 0.9\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::from_text(
            "# full-line comment\n[run]\n\nseed = 9 # trailing comment\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[("correlate.n".into(), "5000".into())])
            .unwrap();
        assert_eq!(cfg.correlate_n, 5000);
        assert!(cfg
            .apply_overrides(&[("correlate.nn".into(), "5000".into())])
            .is_err());
    }

    #[test]
    fn roundtrip_with_nondefault_floats() {
        let mut cfg = ExperimentConfig::default();
        cfg.beta = 0.337_712_233_445_5;
        cfg.correlate_gaps = vec![1.5, 2.25, 1e-7, 3.0e9];
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
    }
}
