use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sojourn::analytic::{
    bm_sojourn_exact, bounds_apply, prop2_bounds, prop3_one_dim, theorem1_eval, SuppliedConstants,
};
use sojourn::config::ExperimentConfig;
use sojourn::fbm::{autocovariance_study, FbmPath, FgnSampler, GridSpec};
use sojourn::harness::{
    csv_to_writer, run_convergence, run_validate_exact, write_json, ConstantRecord, EstimateRecord,
};
use sojourn::mc::{
    estimate_berman_constants, estimate_one_dim_sojourn, estimate_one_dim_sojourn_tilted,
    estimate_piterbarg_sojourns, estimate_two_dim_sojourn, estimate_two_dim_sojourn_tilted,
    BermanMethod, BermanSettings, Exec, MCEstimate, PiterbargSettings, SimSettings, TiltSpec,
};
use sojourn::model::{
    classify_regime, critical_points, derive_constants, sojourn_limit, Line, ModelParams,
    SojournMode, SojournThreshold, DEFAULT_BOUNDARY_TOL,
};

#[derive(Parser)]
#[command(
    name = "sojourn",
    version,
    about = "Sojourn ruin probabilities of a two-line fBm risk model"
)]
struct Cli {
    /// Worker threads (default: RUN_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Path units per parallel chunk; part of the reproducibility key.
    #[arg(long, global = true)]
    chunk_size: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Critical points, regime and derived constants as JSON.
    Classify(ClassifyArgs),
    /// Brownian one-line closed form.
    EvalExact(ExactArgs),
    /// Asymptotic formula of the selected branch.
    EvalAsymptotic(AsymptoticArgs),
    /// Sample fBm paths, or summarize fGn autocovariances.
    SimulatePaths(PathArgs),
    /// Monte Carlo sojourn ruin probability.
    Simulate(SimulateArgs),
    /// Monte Carlo Berman or sojourn Piterbarg constant.
    EstimateConstant(ConstantArgs),
    /// Convergence table from a config file.
    Convergence(ConfigArgs),
    /// Exact-vs-simulation table from a config file.
    ValidateExact(ConfigArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Config file supplying defaults for the model and threshold.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    q1: Option<f64>,
    #[arg(long)]
    q2: Option<f64>,
    #[arg(long, alias = "H")]
    hurst: Option<f64>,
    #[arg(long)]
    sojourn_mode: Option<SojournMode>,
    #[arg(long)]
    sojourn_value: Option<f64>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<(ModelParams, SojournThreshold)> {
        let base = match &self.config {
            Some(path) => Some(load_config(path)?),
            None => None,
        };
        let pick = |flag: Option<f64>, from_cfg: Option<f64>, name: &str| {
            flag.or(from_cfg)
                .with_context(|| format!("--{name} is required without --config"))
        };
        let m = base.as_ref().map(|c| c.model);
        let p = ModelParams::new(
            pick(self.c1, m.map(|m| m.c1()), "c1")?,
            pick(self.c2, m.map(|m| m.c2()), "c2")?,
            pick(self.q1, m.map(|m| m.q1()), "q1")?,
            pick(self.q2, m.map(|m| m.q2()), "q2")?,
            pick(self.hurst, m.map(|m| m.hurst()), "hurst")?,
        )?;
        let s = base.as_ref().map(|c| c.sojourn);
        let mode = self
            .sojourn_mode
            .or(s.map(|s| s.mode()))
            .unwrap_or(SojournMode::Constant);
        let value = self.sojourn_value.or(s.map(|s| s.value())).unwrap_or(0.0);
        Ok((p, SojournThreshold::new(mode, value)?))
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    /// Drift of the line.
    #[arg(long)]
    c: f64,
    /// Capital level `q` (the line is `c t + q u`).
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long)]
    u: f64,
    /// Sojourn threshold `T`.
    #[arg(long, alias = "t", default_value_t = 0.0)]
    sojourn_value: f64,
    #[arg(long, default_value_t = 0.5)]
    hurst: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AsymptoticArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    u: f64,
    /// Berman constant at the argument the branch needs.
    #[arg(long)]
    berman: Option<f64>,
    /// Sojourn Piterbarg constant.
    #[arg(long)]
    piterbarg: Option<f64>,
    /// Constant of the two-sided bounds (H < 1/2, constant threshold).
    #[arg(long)]
    cbar: Option<f64>,
    /// Evaluate the one-line formula for line 1 or 2 instead.
    #[arg(long)]
    line: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PathArgs {
    #[arg(long, alias = "H")]
    hurst: f64,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    n_paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write lag, gamma_hat, gamma_theory, stderr instead of the paths.
    #[arg(long)]
    summary: bool,
    #[arg(long, default_value_t = 5)]
    max_lag: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    dt: f64,
    /// Path horizon; by default it scales with `u`.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n_paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drift tilting with likelihood-ratio weights (H = 1/2 only).
    #[arg(long)]
    tilt: bool,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pilot_fraction: f64,
    #[arg(long, default_value_t = 30.0)]
    abandon_log_bound: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Capital; repeat for several rows.
    #[arg(long, required = true, num_args = 1..)]
    u: Vec<f64>,
    /// Simulate only line 1 or 2.
    #[arg(long)]
    line: Option<u8>,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstantName {
    Berman,
    Piterbarg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Quadrature {
    Mixture,
    Direct,
}

#[derive(Args)]
struct ConstantArgs {
    #[arg(value_enum)]
    kind: ConstantName,
    /// Model used to derive the Piterbarg drifts; `--hurst` alone for Berman.
    #[command(flatten)]
    model: ModelArgs,
    /// Berman sojourn thresholds.
    #[arg(long, num_args = 1.., default_value = "0")]
    x: Vec<f64>,
    /// Piterbarg sojourn arguments; default is the model's T'.
    #[arg(long, num_args = 1..)]
    k: Vec<f64>,
    #[arg(long, default_value_t = 32.0)]
    span: f64,
    #[arg(long, default_value_t = 1.0 / 256.0)]
    dt: f64,
    #[arg(long, default_value_t = 10_000)]
    n_paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Quadrature::Mixture)]
    method: Quadrature,
    #[arg(long, default_value_t = 64)]
    panels: usize,
    #[arg(long, allow_hyphen_values = true)]
    z_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    z_hi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x_hi: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_paths: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn line_of(n: u8) -> Result<Line> {
    match n {
        1 => Ok(Line::First),
        2 => Ok(Line::Second),
        _ => bail!("--line must be 1 or 2, got {n}"),
    }
}

fn exec(cli: &Cli) -> Exec {
    Exec {
        threads: cli.threads,
        chunk_size: cli.chunk_size.unwrap_or(Exec::default().chunk_size),
    }
}

/// Opens `path`, or stdout when absent.
fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json(out: &Option<PathBuf>, v: &Value) -> Result<()> {
    let mut w = sink(out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let (p, st) = a.model.resolve()?;
    let cp = critical_points(&p);
    let report = json!({
        "params": p,
        "sojourn": st,
        "critical_points": cp,
        "regime": classify_regime(&cp, DEFAULT_BOUNDARY_TOL),
        "constants": derive_constants(&p, &st)?,
    });
    emit_json(&a.out, &report)
}

fn eval_exact(a: &ExactArgs) -> Result<()> {
    if a.hurst != 0.5 {
        bail!("closed forms exist only for H = 1/2, got {}", a.hurst);
    }
    if !(a.c > 0.0 && a.q > 0.0 && a.u >= 0.0 && a.sojourn_value >= 0.0) {
        bail!("need c, q > 0 and u, T >= 0");
    }
    let value = bm_sojourn_exact(a.c, a.q * a.u, a.sojourn_value);
    emit_json(
        &a.out,
        &json!({
            "branch": "exact/bm_one_line",
            "value": value,
            "log_value": value.ln(),
            "inputs": {"c": a.c, "q": a.q, "u": a.u, "T": a.sojourn_value},
        }),
    )
}

fn eval_asymptotic(a: &AsymptoticArgs) -> Result<()> {
    let (p, st) = a.model.resolve()?;
    if let Some(n) = a.line {
        let (c, q) = p.line(line_of(n)?);
        let t = sojourn_limit(&st, p.hurst())?;
        let v = prop3_one_dim(c, q, p.hurst(), a.u, t, a.berman)?;
        return emit_json(
            &a.out,
            &json!({"branch": v.branch.label(), "value": v.value, "log_value": v.log_value, "inputs": v.constant_inputs}),
        );
    }
    let dc = derive_constants(&p, &st)?;
    if bounds_apply(&p, &st) {
        let b = prop2_bounds(&p, &dc, st.value(), a.u, a.cbar.unwrap_or(1.0))?;
        return emit_json(
            &a.out,
            &json!({
                "branch": "two_sided_bounds",
                "value": b.upper.exp(),
                "log_value": b.upper,
                "log_lower": b.lower_envelope + b.c_bar.ln(),
                "ordered": b.is_ordered(),
                "inputs": {"cbar": b.c_bar, "cbar_supplied": a.cbar.is_some(), "ordering_threshold": b.ordering_threshold},
            }),
        );
    }
    let regime = classify_regime(&critical_points(&p), DEFAULT_BOUNDARY_TOL);
    let supplied = SuppliedConstants {
        berman: a.berman,
        piterbarg: a.piterbarg,
    };
    let v = theorem1_eval(&p, regime, &dc, &st, a.u, &supplied)?;
    emit_json(
        &a.out,
        &json!({"branch": v.branch.label(), "value": v.value, "log_value": v.log_value, "inputs": v.constant_inputs}),
    )
}

fn simulate_paths(cli: &Cli, a: &PathArgs) -> Result<()> {
    let grid = GridSpec::new(a.dt, a.steps)?;
    let mut w = sink(&a.out)?;
    if a.summary {
        let rows = autocovariance_study(a.hurst, grid, a.n_paths, a.seed, a.max_lag, &exec(cli))?;
        csv_to_writer(w, &rows)?;
        return Ok(());
    }
    writeln!(w, "path_id,t,value")?;
    // Path `i` is the fixed keyed path of `seed`, the same one the estimators see.
    let sampler = FgnSampler::new(a.hurst, grid)?;
    let mut ws = Default::default();
    for i in 0..a.n_paths {
        let inc = sampler.path_increments(a.seed, i, &mut ws);
        let path = FbmPath::from_increments(grid, a.hurst, &inc);
        for (k, v) in path.values.iter().enumerate() {
            writeln!(w, "{i},{},{v}", grid.time(k))?;
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let (p, st) = a.model.resolve()?;
    let line = a.line.map(line_of).transpose()?;
    let tilt = a.sim.tilt.then_some(TiltSpec {
        theta: a.sim.theta,
        window: a.sim.window,
    });
    let mut rows: Vec<EstimateRecord> = Vec::new();
    for &u in &a.u {
        let horizon = match (a.sim.horizon, line) {
            (Some(h), _) => h,
            (None, Some(l)) => {
                let (c, q) = p.line(l);
                let h = p.hurst();
                3.0 * q * h / ((1.0 - h) * c) * u.max(1e-12) + 2.0 * st.at(u, h)
            }
            (None, None) => sojourn::mc::default_horizon(&p, u, &st),
        };
        let mut s = SimSettings::new(
            GridSpec::covering(a.sim.dt, horizon)?,
            a.sim.n_paths,
            a.sim.seed,
        );
        s.exec = exec(cli);
        s.pilot_fraction = a.sim.pilot_fraction;
        s.abandon_log_bound = a.sim.abandon_log_bound;
        let est: MCEstimate = match (line, &tilt) {
            (Some(l), Some(t)) => {
                if p.hurst() != 0.5 {
                    bail!("tilting needs H = 1/2");
                }
                let (c, q) = p.line(l);
                estimate_one_dim_sojourn_tilted(c, q, u, &st, &s, t)?
            }
            (Some(l), None) => {
                let (c, q) = p.line(l);
                estimate_one_dim_sojourn(c, q, p.hurst(), u, &st, &s)?
            }
            (None, Some(t)) => estimate_two_dim_sojourn_tilted(&p, u, &st, &s, t)?,
            (None, None) => estimate_two_dim_sojourn(&p, u, &st, &s)?,
        };
        if est.n_hits == 0 {
            log::warn!("u = {u}: no hits; ci columns hold the Wilson interval");
        }
        rows.push(EstimateRecord::from(&est));
    }
    csv_to_writer(sink(&a.out)?, &rows)?;
    Ok(())
}

fn estimate_constant(cli: &Cli, a: &ConstantArgs) -> Result<()> {
    let estimates = match a.kind {
        ConstantName::Berman => {
            let hurst = match (a.model.hurst, &a.model.config) {
                (Some(h), _) => h,
                (None, Some(_)) => a.model.resolve()?.0.hurst(),
                (None, None) => bail!("--hurst is required"),
            };
            let mut s = BermanSettings::new(hurst, a.span, a.dt, a.n_paths, a.seed);
            if let Quadrature::Direct = a.method {
                s = s.direct(a.panels);
            }
            if let Some(z) = a.z_lo {
                s.z_lo = z;
            }
            if let Some(z) = a.z_hi {
                s.z_hi = z;
            }
            if matches!(s.method, BermanMethod::Direct { .. })
                && !(s.z_lo.is_finite() && s.z_hi.is_finite())
            {
                bail!("direct quadrature needs a finite level range");
            }
            s.exec = exec(cli);
            estimate_berman_constants(&s, &a.x)?
        }
        ConstantName::Piterbarg => {
            let (p, st) = a.model.resolve()?;
            let dc = derive_constants(&p, &st)?;
            let ks = if a.k.is_empty() {
                vec![dc.t_prime.unwrap_or(0.0)]
            } else {
                a.k.clone()
            };
            let mut s = PiterbargSettings::new(a.span, a.dt, a.n_paths, a.seed);
            if let Some(x) = a.x_lo {
                s.x_lo = x;
            }
            if let Some(x) = a.x_hi {
                s.x_hi = x;
            }
            s.exec = exec(cli);
            estimate_piterbarg_sojourns(&dc, &ks, &s)?
        }
    };
    let rows: Vec<ConstantRecord> = estimates.iter().map(ConstantRecord::from).collect();
    csv_to_writer(sink(&a.out)?, &rows)?;
    Ok(())
}

fn experiment_config(cli: &Cli, a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&a.config)?;
    if let Some(n) = a.n_paths {
        cfg.sim.n_paths = n;
    }
    if let Some(s) = a.seed {
        cfg.sim.seed = s;
    }
    if let Some(dir) = &a.out {
        cfg.output.dir = dir.clone();
    }
    if cli.threads.is_some() {
        cfg.sim.threads = cli.threads;
    }
    if let Some(c) = cli.chunk_size {
        cfg.sim.chunk_size = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn convergence(cli: &Cli, a: &ConfigArgs) -> Result<()> {
    let cfg = experiment_config(cli, a)?;
    let report = run_convergence(&cfg)?;
    let files = report.write(&cfg.output.dir)?;
    write_json(&cfg.output.dir.join("config.json"), &cfg)?;
    for r in &report.rows {
        println!(
            "u = {:<8} p_hat = {:.4e} +- {:.1e}  hits = {:<7} ratio = {}  {:?}",
            r.u,
            r.mc.p_hat,
            r.mc.stderr,
            r.mc.n_hits,
            r.ratio
                .map(|x| format!("{x:.4}"))
                .unwrap_or_else(|| "-".into()),
            r.flag
        );
    }
    if let Some(f) = &report.fit {
        println!(
            "decay fit: slope {:.4} +- {:.4} (expect 1), log p vs u slope {:.4} +- {:.4}{}",
            f.slope,
            f.slope_stderr,
            f.raw_slope_u,
            f.raw_slope_u_stderr,
            f.expected_raw_slope_u
                .map(|e| format!(" (expect {e:.4})"))
                .unwrap_or_default()
        );
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn validate_exact(cli: &Cli, a: &ConfigArgs) -> Result<()> {
    let cfg = experiment_config(cli, a)?;
    let report = run_validate_exact(&cfg)?;
    let files = report.write(&cfg.output.dir)?;
    for r in &report.rows {
        println!(
            "u = {} T = {}: exact {:.6e}, richardson {:.6e} +- {:.1e} (z = {:.2}, rel {:.2}%) {}",
            r.u,
            r.t,
            r.exact,
            r.p_richardson,
            r.stderr_richardson,
            r.z,
            100.0 * r.rel_err,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    if !report.all_pass() {
        bail!("some validation cells failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Classify(a) => classify(a),
        Cmd::EvalExact(a) => eval_exact(a),
        Cmd::EvalAsymptotic(a) => eval_asymptotic(a),
        Cmd::SimulatePaths(a) => simulate_paths(&cli, a),
        Cmd::Simulate(a) => simulate(&cli, a),
        Cmd::EstimateConstant(a) => estimate_constant(&cli, a),
        Cmd::Convergence(a) => convergence(&cli, a),
        Cmd::ValidateExact(a) => validate_exact(&cli, a),
    }
}
