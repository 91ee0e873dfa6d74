//! Experiment runner: every lab capability as a subcommand with a
//! reproducible config and machine-readable outputs.
//!
//! Exit codes: 0 pass, 1 assertion/inequality failure, 2 configuration
//! error, 3 resource exhaustion.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use horomix::config::ExperimentConfig;
use horomix::error::{Error, Result};
use horomix::experiments::{
    point_correlation, run_cluster, run_correlate, run_flow_check, run_l2avg, run_plan,
    run_sample, run_shear, run_vdc, ExperimentContext,
};
use horomix::report::{json_report, write_json, CsvWriter, VERSION};

#[derive(Parser)]
#[command(name = "horomix", version = VERSION, about = "Numerical laboratory for time-changed horocycle flows")]
struct Cli {
    /// Config file (flat key = value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV/JSON reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = auto). The HOROMIX_THREADS environment variable
    /// is used when the flag is absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Renormalization grid, cocycle contracts, measure invariance.
    FlowCheck,
    /// Correlation decay profile over the configured gaps.
    Correlate {
        /// Number of factors (2..=5); defaults to correlate.k.
        #[arg(long)]
        k: Option<usize>,
        /// Use the trivial time change instead of the configured one.
        #[arg(long)]
        trivial: bool,
        /// Also compute the pointwise coupled correlation per gap.
        #[arg(long)]
        pointwise: bool,
    },
    /// Van der Corput inequality over the (N, L) grid; violations exit 1.
    Vdc,
    /// Shearing discrepancy A(x, s, T) over the T grid.
    Shear,
    /// Ergodic-integral deviation over the T grid.
    Deviation,
    /// L2 multiple ergodic averages over the window lengths.
    L2avg,
    /// Run the combinatorial clustering procedure.
    Cluster,
    /// Case planner; three times use the 3-point split, more run the
    /// clustering planner.
    Plan {
        #[arg(long, num_args = 0.., value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Draw quotient samples (Haar, or weighted when sample.weighted).
    Sample,
}

fn main() {
    // peel off --section.key=value overrides before clap sees the args
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut args: Vec<String> = Vec::new();
    for arg in std::env::args() {
        if let Some(body) = arg.strip_prefix("--") {
            if let Some((key, value)) = body.split_once('=') {
                if key.contains('.') {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
            }
        }
        args.push(arg);
    }
    let cli = Cli::parse_from(args);
    let code = match run(cli, overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_text(&text)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads as u64;
    } else if let Ok(v) = std::env::var("HOROMIX_THREADS") {
        cfg.threads = v
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("HOROMIX_THREADS: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<i32> {
    let cfg = load_config(&cli, &overrides)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads as usize)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let ctx = ExperimentContext::new(cfg)?;
    match cli.cmd {
        Cmd::FlowCheck => cmd_flow_check(&ctx, &out_dir),
        Cmd::Correlate {
            k,
            trivial,
            pointwise,
        } => cmd_correlate(&ctx, &out_dir, k, trivial, pointwise),
        Cmd::Vdc => cmd_vdc(&ctx, &out_dir),
        Cmd::Shear => cmd_shear(&ctx, &out_dir, false),
        Cmd::Deviation => cmd_shear(&ctx, &out_dir, true),
        Cmd::L2avg => cmd_l2avg(&ctx, &out_dir),
        Cmd::Cluster => cmd_cluster(&ctx, &out_dir),
        Cmd::Plan { times } => cmd_plan(&ctx, &out_dir, times),
        Cmd::Sample => cmd_sample(&ctx, &out_dir),
    }
}

fn cmd_flow_check(ctx: &ExperimentContext, out_dir: &Path) -> Result<i32> {
    let report = run_flow_check(ctx)?;
    let value = json_report("flow-check", &ctx.cfg, serde_json::to_value(&report)?);
    write_json(&out_dir.join("flow_check.json"), &value)?;
    println!(
        "flow-check: renorm {:.2e} cocycle {:.2e} round-trip {:.2e} measure {} => {}",
        report.renorm_max_residual,
        report.cocycle_max_residual,
        report.round_trip_max_residual,
        if report.measure_pass { "ok" } else { "FAIL" },
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(if report.pass { 0 } else { 1 })
}

fn cmd_correlate(
    ctx: &ExperimentContext,
    out_dir: &Path,
    k: Option<usize>,
    trivial: bool,
    pointwise: bool,
) -> Result<i32> {
    let k = k.unwrap_or(ctx.cfg.correlate_k as usize);
    let report = run_correlate(ctx, k, trivial)?;
    let mut csv = CsvWriter::new(
        "correlate",
        &ctx.cfg,
        &["min_gap", "value", "stderr", "n", "seed"],
    );
    for r in &report.rows {
        csv.row(&[
            format!("{}", r.min_gap),
            format!("{}", r.value),
            format!("{}", r.stderr),
            format!("{}", r.n),
            format!("{}", r.seed),
        ]);
        if let Some(err) = &r.error {
            csv.footer(&format!("row {} flagged: {err}", r.min_gap));
        }
    }
    if let Some(fit) = &report.fit {
        csv.footer(&format!(
            "fit_exponent = {} fit_r_squared = {} empirical_gamma = {}",
            fit.exponent,
            fit.r_squared,
            report.empirical_gamma.unwrap_or(f64::NAN)
        ));
    }
    csv.footer(&report.fit_note);
    if pointwise {
        for &gap in &ctx.cfg.correlate_gaps {
            match point_correlation(ctx, k, gap, trivial) {
                Ok(est) => csv.footer(&format!(
                    "pointwise gap {gap}: value = {} stderr = {}",
                    est.value, est.stderr
                )),
                Err(Error::Resource(m)) => csv.footer(&format!("pointwise gap {gap}: {m}")),
                Err(e) => return Err(e),
            }
        }
    }
    csv.write(&out_dir.join(format!("correlate_k{k}.csv")))?;
    let value = json_report("correlate", &ctx.cfg, serde_json::to_value(&report)?);
    write_json(&out_dir.join(format!("correlate_k{k}.json")), &value)?;
    println!("correlate k={k}: {}", report.fit_note);
    Ok(0)
}

fn cmd_vdc(ctx: &ExperimentContext, out_dir: &Path) -> Result<i32> {
    let reports = run_vdc(ctx)?;
    let mut csv = CsvWriter::new(
        "vdc",
        &ctx.cfg,
        &[
            "N", "L", "lhs", "rhs", "margin", "margin_stderr", "holds", "n", "seed",
        ],
    );
    let mut all_hold = true;
    for r in &reports {
        all_hold &= r.holds;
        csv.row(&[
            format!("{}", r.n_time),
            format!("{}", r.l_time),
            format!("{}", r.lhs),
            format!("{}", r.rhs),
            format!("{}", r.margin),
            format!("{}", r.margin_stderr),
            format!("{}", r.holds),
            format!("{}", r.n),
            format!("{}", r.seed),
        ]);
    }
    csv.footer(&format!("o_constant = 2, all_hold = {all_hold}"));
    csv.write(&out_dir.join("vdc.csv"))?;
    let value = json_report("vdc", &ctx.cfg, serde_json::to_value(&reports)?);
    write_json(&out_dir.join("vdc.json"), &value)?;
    println!("vdc: {} cells, all hold: {all_hold}", reports.len());
    Ok(if all_hold { 0 } else { 1 })
}

fn cmd_shear(ctx: &ExperimentContext, out_dir: &Path, deviation: bool) -> Result<i32> {
    let name = if deviation { "deviation" } else { "shear" };
    let report = run_shear(ctx, deviation)?;
    let mut csv = CsvWriter::new(
        name,
        &ctx.cfg,
        &[
            "s",
            "T",
            "max_abs",
            "mean_abs",
            "commutation_residual_max",
            "samples",
        ],
    );
    for r in &report.rows {
        csv.row(&[
            format!("{}", r.s),
            format!("{}", r.t),
            format!("{}", r.max_abs_a),
            format!("{}", r.mean_abs_a),
            format!("{}", r.commutation_residual_max),
            format!("{}", r.samples),
        ]);
    }
    if let Some(e) = report.growth_exponent {
        csv.footer(&format!(
            "growth_exponent = {e} bound = {} within_bound = {}",
            report.exponent_bound,
            report.within_bound.unwrap_or(false)
        ));
    } else {
        csv.footer("growth fit skipped (trivial time change or empty data)");
    }
    csv.write(&out_dir.join(format!("{name}.csv")))?;
    let value = json_report(name, &ctx.cfg, serde_json::to_value(&report)?);
    write_json(&out_dir.join(format!("{name}.json")), &value)?;
    println!(
        "{name}: {} rows, exponent {:?}",
        report.rows.len(),
        report.growth_exponent
    );
    Ok(0)
}

fn cmd_l2avg(ctx: &ExperimentContext, out_dir: &Path) -> Result<i32> {
    let report = run_l2avg(ctx)?;
    let mut csv = CsvWriter::new(
        "l2avg",
        &ctx.cfg,
        &["window", "value", "stderr", "modulus_bound", "bound_ok"],
    );
    for r in &report.rows {
        csv.row(&[
            format!("{}", r.window),
            format!("{}", r.value),
            format!("{}", r.stderr),
            format!("{}", r.modulus_bound),
            format!("{}", r.bound_ok),
        ]);
    }
    if let Some(sep) = report.decay_separation_sigmas {
        csv.footer(&format!(
            "decay_separation_sigmas = {sep} monotone = {}",
            report.monotone_decay.unwrap_or(false)
        ));
    }
    csv.write(&out_dir.join("l2avg.csv"))?;
    let value = json_report("l2avg", &ctx.cfg, serde_json::to_value(&report)?);
    write_json(&out_dir.join("l2avg.json"), &value)?;
    println!(
        "l2avg: {} windows, separation {:?} sigmas",
        report.rows.len(),
        report.decay_separation_sigmas
    );
    Ok(0)
}

fn cmd_cluster(ctx: &ExperimentContext, out_dir: &Path) -> Result<i32> {
    let report = run_cluster(ctx)?;
    let value = json_report("cluster", &ctx.cfg, serde_json::to_value(&report)?);
    write_json(&out_dir.join("cluster.json"), &value)?;
    println!(
        "cluster: stop_step {} of k={}, xi_k {:.6e}, min gap {} vs bound {:.6}",
        report.result.stop_step,
        report.input.k(),
        report.result.xi_k,
        report.min_gap,
        report.gap_bound
    );
    Ok(0)
}

fn cmd_plan(ctx: &ExperimentContext, out_dir: &Path, times: Option<Vec<f64>>) -> Result<i32> {
    let report = run_plan(ctx, times.as_deref())?;
    let value = json_report("plan", &ctx.cfg, serde_json::to_value(&report)?);
    write_json(&out_dir.join("plan.json"), &value)?;
    println!("plan: {}", serde_json::to_string(&report)?);
    Ok(0)
}

fn cmd_sample(ctx: &ExperimentContext, out_dir: &Path) -> Result<i32> {
    let samples = run_sample(ctx)?;
    let mut csv = CsvWriter::new(
        "sample",
        &ctx.cfg,
        &["index", "a", "b", "c", "d", "weight"],
    );
    for (i, (p, w)) in samples.iter().enumerate() {
        let e = p.rep().entries();
        csv.row(&[
            format!("{i}"),
            format!("{:.17e}", e[0]),
            format!("{:.17e}", e[1]),
            format!("{:.17e}", e[2]),
            format!("{:.17e}", e[3]),
            format!("{w}"),
        ]);
    }
    csv.write(&out_dir.join("samples.csv"))?;
    println!("sample: wrote {} rows", samples.len());
    Ok(0)
}
