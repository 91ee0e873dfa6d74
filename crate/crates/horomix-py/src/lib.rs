//! Python bindings: the main types and operations of the lab behind a small
//! `Lab` handle plus a few free functions for the pure-combinatorics pieces.

use std::str::FromStr;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use horomix::cluster;
use horomix::config::ExperimentConfig;
use horomix::error::Error;
use horomix::experiments::{point_correlation, run_correlate, ExperimentContext};
use horomix::lattice::HaarSampler;
use horomix::mixing;
use horomix::observable::Observable;
use horomix::sl2::{self, GroupElement, LieDirection};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn mat_of(entries: [f64; 4]) -> PyResult<GroupElement> {
    let g = GroupElement::from_entries(entries);
    if (g.det() - 1.0).abs() > 1e-6 {
        return Err(PyValueError::new_err(format!(
            "matrix determinant {} too far from 1",
            g.det()
        )));
    }
    Ok(g)
}

/// Closed-form one-parameter subgroup exponential; dir is one of
/// "U", "X", "V", "Theta".
#[pyfunction]
fn exp_flow(dir: &str, t: f64) -> PyResult<[f64; 4]> {
    let d = LieDirection::from_str(dir).map_err(err)?;
    Ok(sl2::exp_flow(d, t).map_err(err)?.entries())
}

/// Frobenius defect of the renormalization identity at (t, s).
#[pyfunction]
fn renormalization_residual(t: f64, s: f64) -> PyResult<f64> {
    sl2::renormalization_residual(t, s).map_err(err)
}

/// prod(zeta) / (12 k)^k for k = len(zetas).
#[pyfunction]
fn xi_k(zetas: Vec<f64>) -> PyResult<f64> {
    cluster::xi_k(&zetas, zetas.len()).map_err(err)
}

/// Run the clustering procedure; returns a dict with stop_step, radii,
/// anchors, xi_k and the per-time covering assignment.
#[pyfunction]
fn run_procedure<'py>(
    py: Python<'py>,
    zetas: Vec<f64>,
    times: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let input = cluster::ClusterInput::new(zetas, times).map_err(err)?;
    let res = cluster::run_procedure(&input).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("stop_step", res.stop_step)?;
    d.set_item("radii", res.radii)?;
    d.set_item("anchors", res.anchors)?;
    d.set_item("xi_k", res.xi_k)?;
    let assignment: Vec<String> = res
        .assignment
        .iter()
        .map(|c| match c {
            cluster::CoverInterval::Left => "left".to_string(),
            cluster::CoverInterval::Right => "right".to_string(),
            cluster::CoverInterval::Anchor(j) => format!("anchor:{j}"),
        })
        .collect();
    d.set_item("assignment", assignment)?;
    Ok(d)
}

/// 3-point case planner (reflects into normal form first).
#[pyfunction]
fn plan_3mix<'py>(py: Python<'py>, t1: f64, t2: f64, beta: f64) -> PyResult<Bound<'py, PyDict>> {
    let (plan, reflected) = cluster::plan_3mix_auto(t1, t2, beta).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("case", plan.case.to_string())?;
    d.set_item("sigma", plan.sigma)?;
    d.set_item("threshold", plan.threshold)?;
    d.set_item("k_ratio", plan.k_ratio)?;
    d.set_item("case_b_precondition", plan.case_b_precondition)?;
    d.set_item("reflected", reflected)?;
    d.set_item("t1", plan.t1)?;
    d.set_item("t2", plan.t2)?;
    Ok(d)
}

/// Reflection normalization of a sorted time tuple.
#[pyfunction]
fn normalize_times(times: Vec<f64>) -> PyResult<(Vec<f64>, bool)> {
    cluster::normalize_times(&times).map_err(err)
}

/// Log-log least squares; returns (exponent, intercept, r_squared).
#[pyfunction]
fn fit_decay(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let fit = mixing::fit_decay(&points).map_err(err)?;
    Ok((fit.exponent, fit.intercept, fit.r_squared))
}

/// A configured laboratory: lattice, time change, observables, estimators.
#[pyclass]
struct Lab {
    ctx: Arc<ExperimentContext>,
}

#[pymethods]
impl Lab {
    /// Build from an optional config text (the CLI's flat format) and an
    /// optional seed override.
    #[new]
    #[pyo3(signature = (config_text=None, seed=None))]
    fn new(config_text: Option<&str>, seed: Option<u64>) -> PyResult<Lab> {
        let mut cfg = match config_text {
            Some(text) => ExperimentConfig::from_text(text).map_err(err)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(Lab {
            ctx: Arc::new(ExperimentContext::new(cfg).map_err(err)?),
        })
    }

    fn config_text(&self) -> String {
        self.ctx.cfg.to_text()
    }

    /// Number of group elements (mod sign) within displacement `radius`.
    fn ball_size(&self, radius: f64) -> PyResult<usize> {
        Ok(self.ctx.lattice.ball(radius).map_err(err)?.len())
    }

    /// Reduce a matrix to its fundamental-domain representative.
    fn reduce(&self, mat: [f64; 4]) -> PyResult<[f64; 4]> {
        let g = mat_of(mat)?;
        Ok(self.ctx.lattice.reduce(&g).map_err(err)?.rep().entries())
    }

    /// Draw n Haar samples (deterministic in the lab seed).
    fn sample(&self, n: usize) -> PyResult<Vec<[f64; 4]>> {
        let sampler = HaarSampler::new(self.ctx.cfg.seed);
        Ok(self
            .ctx
            .lattice
            .sample_haar(&sampler, n)
            .map_err(err)?
            .iter()
            .map(|p| p.rep().entries())
            .collect())
    }

    /// Evaluate the time-change generator at a point.
    fn tau(&self, mat: [f64; 4]) -> PyResult<f64> {
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        Ok(self.ctx.clock.tau().eval_point(&p))
    }

    /// Evaluate the i-th zero-meaned observable at a point.
    fn observable(&self, index: usize, mat: [f64; 4]) -> PyResult<f64> {
        let fs = &self.ctx.fs;
        if index >= fs.len() {
            return Err(PyValueError::new_err("observable index out of range"));
        }
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        Ok(fs[index].eval(p.rep()))
    }

    /// Solve the cocycle equation for u(x, t).
    fn u_of(&self, mat: [f64; 4], t: f64) -> PyResult<f64> {
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        self.ctx.clock.u_of(&p, t).map_err(err)
    }

    /// The defining integral of tau along the horocycle orbit.
    fn inverse_clock(&self, mat: [f64; 4], u: f64) -> PyResult<f64> {
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        self.ctx.clock.inverse_clock(&p, u).map_err(err)
    }

    /// Time-changed flow, returning the reduced representative.
    fn flow_tau(&self, mat: [f64; 4], t: f64) -> PyResult<[f64; 4]> {
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        Ok(self.ctx.clock.flow_tau(&p, t).map_err(err)?.rep().entries())
    }

    /// Shearing discrepancy A(x, s, T).
    fn shear_discrepancy(&self, mat: [f64; 4], s: f64, t: f64) -> PyResult<f64> {
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        self.ctx.clock.shear_discrepancy(&p, s, t).map_err(err)
    }

    /// Ergodic-integral deviation along the homogeneous orbit.
    fn deviation_integral(&self, mat: [f64; 4], s: f64, t: f64) -> PyResult<f64> {
        let p = self.ctx.lattice.reduce(&mat_of(mat)?).map_err(err)?;
        self.ctx.clock.deviation_integral(&p, s, t).map_err(err)
    }

    /// Pointwise coupled k-point correlation at gap spacing `gap`.
    #[pyo3(signature = (k, gap, n=None, trivial=false))]
    fn correlate(
        &self,
        k: usize,
        gap: f64,
        n: Option<u64>,
        trivial: bool,
    ) -> PyResult<(f64, f64)> {
        let est = match n.filter(|&n| n != self.ctx.cfg.correlate_n) {
            Some(n) => {
                let mut c = self.ctx.cfg.clone();
                c.correlate_n = n;
                let ctx = ExperimentContext::new(c).map_err(err)?;
                point_correlation(&ctx, k, gap, trivial).map_err(err)?
            }
            None => point_correlation(&self.ctx, k, gap, trivial).map_err(err)?,
        };
        Ok((est.value, est.stderr))
    }

    /// Windowed RMS correlation decay profile over the configured gaps;
    /// returns rows of (min_gap, value, stderr) and the fitted exponent.
    #[pyo3(signature = (k=2, trivial=false))]
    fn correlation_profile<'py>(
        &self,
        py: Python<'py>,
        k: usize,
        trivial: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report = run_correlate(&self.ctx, k, trivial).map_err(err)?;
        let d = PyDict::new(py);
        let rows: Vec<(f64, f64, f64)> = report
            .rows
            .iter()
            .map(|r| (r.min_gap, r.value, r.stderr))
            .collect();
        d.set_item("rows", rows)?;
        d.set_item("exponent", report.fit.as_ref().map(|f| f.exponent))?;
        d.set_item("r_squared", report.fit.as_ref().map(|f| f.r_squared))?;
        d.set_item("empirical_gamma", report.empirical_gamma)?;
        d.set_item("note", report.fit_note)?;
        Ok(d)
    }

    /// Van der Corput check; returns (lhs, rhs, margin, margin_stderr, holds).
    #[pyo3(signature = (n_time, l_time, n=None))]
    fn vdc(&self, n_time: f64, l_time: f64, n: Option<u64>) -> PyResult<(f64, f64, f64, f64, bool)> {
        let rep = mixing::vdc_check(
            &self.ctx.fs[0],
            &self.ctx.clock,
            n_time,
            l_time,
            n.unwrap_or(self.ctx.cfg.vdc_n),
            self.ctx.cfg.seed,
        )
        .map_err(err)?;
        Ok((rep.lhs, rep.rhs, rep.margin, rep.margin_stderr, rep.holds))
    }

    /// L2 multiple ergodic average over [m, m + window].
    #[pyo3(signature = (window, n=None))]
    fn l2avg(&self, window: f64, n: Option<u64>) -> PyResult<(f64, f64)> {
        let cfg = &self.ctx.cfg;
        let k = cfg.l2_speeds.len();
        let fs: Vec<Arc<dyn Observable>> = (0..k).map(|i| self.ctx.fs[i].clone()).collect();
        let est = mixing::l2_multi_average(
            &fs,
            &cfg.l2_speeds,
            cfg.l2_m,
            cfg.l2_m + window,
            &self.ctx.clock,
            n.unwrap_or(cfg.l2_n),
            cfg.seed,
        )
        .map_err(err)?;
        Ok((est.value, est.stderr))
    }
}

#[pymodule]
fn horomix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Lab>()?;
    m.add_function(wrap_pyfunction!(exp_flow, m)?)?;
    m.add_function(wrap_pyfunction!(renormalization_residual, m)?)?;
    m.add_function(wrap_pyfunction!(xi_k, m)?)?;
    m.add_function(wrap_pyfunction!(run_procedure, m)?)?;
    m.add_function(wrap_pyfunction!(plan_3mix, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_times, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
