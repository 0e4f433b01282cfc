//! Experiment drivers behind the command line: regime reports, exact-vs-
//! simulation validation and asymptotic convergence tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{
    bm_sojourn_exact, one_dim_berman_argument, theorem1_eval, AsymptoticValue, SuppliedConstants,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fbm::GridSpec;
use crate::mc::{
    estimate_berman_constant, estimate_piterbarg_sojourn, estimate_two_dim_sojourn,
    estimate_two_dim_sojourn_tilted, run_ensemble, BermanSettings, ConstantEstimate, ConstantKind,
    EnsembleSpec, LineSet, MCEstimate, PiterbargSettings, Target,
};
use crate::model::{
    classify_regime, critical_points, derive_constants, sojourn_limit, CriticalPoints,
    DerivedConstants, ModelParams, Regime, SojournThreshold, DEFAULT_BOUNDARY_TOL,
};
use crate::rng::derive_seed;
use crate::stats::{weighted_linear_fit, LinearFit};

/// Rows with fewer hits are flagged and left out of the decay fit.
pub const MIN_FIT_HITS: u64 = 20;

const BERMAN_SALT: u64 = 0xbe_a3;
const PITERBARG_SALT: u64 = 0x917e;
const VALIDATE_SALT: u64 = 0xe8ac7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub params: ModelParams,
    pub sojourn: SojournThreshold,
    pub critical_points: CriticalPoints,
    pub regime: Regime,
    pub constants: DerivedConstants,
}

pub fn run_classify(cfg: &ExperimentConfig) -> Result<ClassifyReport> {
    let cp = critical_points(&cfg.model);
    Ok(ClassifyReport {
        params: cfg.model,
        sojourn: cfg.sojourn,
        critical_points: cp,
        regime: classify_regime(&cp, DEFAULT_BOUNDARY_TOL),
        constants: derive_constants(&cfg.model, &cfg.sojourn)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFlag {
    Ok,
    InsufficientHits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub u: f64,
    pub mc: MCEstimate,
    /// Absent when a needed constant is unavailable.
    pub asymptotic: Option<AsymptoticValue>,
    pub ratio: Option<f64>,
    /// `mc.ci95` divided by the asymptotic value.
    pub ratio_ci: Option<(f64, f64)>,
    pub flag: RowFlag,
}

/// Weighted least-squares decay fits over the unflagged rows.
///
/// `slope` regresses `log p_hat` minus the polynomial prefactor of the
/// asymptotic formula on the exponent `e(u) = -x(u)^2 / 2`, so it is 1 when
/// the exponent is right. `raw` regresses `log p_hat` on `u` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub slope_stderr: f64,
    /// False when no prefactor was available and `log p_hat` was used as is.
    pub prefactor_corrected: bool,
    pub raw_slope_u: f64,
    pub raw_slope_u_stderr: f64,
    /// `-x(u)^2 / (2u)` when it does not depend on `u` (H = 1/2).
    pub expected_raw_slope_u: Option<f64>,
    pub rows_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub regime: Regime,
    pub rows: Vec<ConvergenceRow>,
    pub fit: Option<DecayFit>,
    pub constants: Vec<ConstantEstimate>,
    pub supplied: SuppliedConstants,
    pub notes: Vec<String>,
}

/// Injected constants, topped up with estimates of the ones the regime needs.
fn resolve_constants(
    cfg: &ExperimentConfig,
    regime: Regime,
    dc: &DerivedConstants,
) -> (SuppliedConstants, Vec<ConstantEstimate>, Vec<String>) {
    let c = &cfg.constants;
    let mut supplied = SuppliedConstants {
        berman: c.berman,
        piterbarg: c.piterbarg,
    };
    let mut estimates = Vec::new();
    let mut notes = Vec::new();
    if !c.estimate {
        return (supplied, estimates, notes);
    }
    let p = &cfg.model;
    let h = p.hurst();
    let t = match sojourn_limit(&cfg.sojourn, h) {
        Ok(t) => t,
        Err(e) => {
            notes.push(format!("no asymptotic constant: {e}"));
            return (supplied, estimates, notes);
        }
    };
    let berman_arg = match regime.line() {
        Some(line) if h != 0.5 => {
            let (cl, ql) = p.line(line);
            Some(one_dim_berman_argument(cl, ql, h, t))
        }
        None if h < 0.5 => dc.d_bar.map(|d| d * t),
        _ => None,
    };
    if let (Some(x), None) = (berman_arg, supplied.berman) {
        let mut s = BermanSettings::new(
            h,
            c.span,
            c.dt,
            c.n_paths,
            derive_seed(cfg.sim.seed, BERMAN_SALT),
        );
        if let Some((lo, hi)) = c.z_range {
            s.z_lo = lo;
            s.z_hi = hi;
        }
        s.exec = cfg.exec();
        match estimate_berman_constant(&s, x) {
            Ok(e) => {
                supplied.berman = Some(e.value);
                estimates.push(e);
            }
            Err(e) => notes.push(format!("Berman constant at x = {x}: {e}")),
        }
    }
    if regime == Regime::Case2 && h == 0.5 && supplied.piterbarg.is_none() {
        let k = dc.t_prime.unwrap_or(0.0);
        let mut s = PiterbargSettings::new(
            c.span,
            c.dt,
            c.n_paths,
            derive_seed(cfg.sim.seed, PITERBARG_SALT),
        );
        if let Some((lo, hi)) = c.x_range {
            s.x_lo = lo;
            s.x_hi = hi;
        }
        s.exec = cfg.exec();
        match estimate_piterbarg_sojourn(dc, k, &s) {
            Ok(e) => {
                supplied.piterbarg = Some(e.value);
                estimates.push(e);
            }
            Err(e) => notes.push(format!("sojourn Piterbarg constant at {k}: {e}")),
        }
    }
    (supplied, estimates, notes)
}

/// `x(u)` of the Gaussian tail that drives the decay in this regime.
fn tail_argument(p: &ModelParams, regime: Regime, dc: &DerivedConstants, u: f64) -> f64 {
    let coef = match regime.line() {
        Some(line) => dc.c_h(line),
        None => dc.d_h,
    };
    coef * u.powf(1.0 - p.hurst())
}

fn decay_fit(
    p: &ModelParams,
    regime: Regime,
    dc: &DerivedConstants,
    st: &SojournThreshold,
    rows: &[ConvergenceRow],
) -> Option<DecayFit> {
    let used: Vec<&ConvergenceRow> = rows
        .iter()
        .filter(|r| r.flag == RowFlag::Ok && r.mc.p_hat > 0.0 && r.mc.stderr > 0.0)
        .collect();
    if used.len() < 2 {
        return None;
    }
    // u-dependence of the formula with unit constants, minus its exponent.
    let unit = SuppliedConstants {
        berman: Some(1.0),
        piterbarg: Some(1.0),
    };
    let offsets: Option<Vec<f64>> = used
        .iter()
        .map(|r| {
            let e = -0.5 * tail_argument(p, regime, dc, r.u).powi(2);
            theorem1_eval(p, regime, dc, st, r.u, &unit)
                .ok()
                .map(|a| a.log_value - e)
        })
        .collect();
    let corrected = offsets.is_some();
    let offsets = offsets.unwrap_or_else(|| vec![0.0; used.len()]);
    let e: Vec<f64> = used
        .iter()
        .map(|r| -0.5 * tail_argument(p, regime, dc, r.u).powi(2))
        .collect();
    let y: Vec<f64> = used
        .iter()
        .zip(&offsets)
        .map(|(r, o)| r.mc.p_hat.ln() - o)
        .collect();
    let logp: Vec<f64> = used.iter().map(|r| r.mc.p_hat.ln()).collect();
    let u: Vec<f64> = used.iter().map(|r| r.u).collect();
    // Weights are inverse variances of log p_hat.
    let w: Vec<f64> = used
        .iter()
        .map(|r| (r.mc.p_hat / r.mc.stderr).powi(2))
        .collect();
    let fit: LinearFit = weighted_linear_fit(&e, &y, &w)?;
    let raw: LinearFit = weighted_linear_fit(&u, &logp, &w)?;
    let expected = (p.hurst() == 0.5).then(|| {
        let x1 = tail_argument(p, regime, dc, 1.0);
        -0.5 * x1 * x1
    });
    Some(DecayFit {
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        prefactor_corrected: corrected,
        raw_slope_u: raw.slope,
        raw_slope_u_stderr: raw.slope_stderr,
        expected_raw_slope_u: expected,
        rows_used: used.len(),
    })
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let p = &cfg.model;
    let st = &cfg.sojourn;
    let cp = critical_points(p);
    let regime = classify_regime(&cp, DEFAULT_BOUNDARY_TOL);
    let dc = derive_constants(p, st)?;
    let (supplied, constants, mut notes) = resolve_constants(cfg, regime, &dc);
    let tilt = cfg.tilt_spec();

    let mut rows = Vec::with_capacity(cfg.experiment.u_grid.len());
    for (k, &u) in cfg.experiment.u_grid.iter().enumerate() {
        let settings = cfg.sim_settings(u, derive_seed(cfg.sim.seed, k as u64))?;
        let mc = match &tilt {
            Some(t) => estimate_two_dim_sojourn_tilted(p, u, st, &settings, t)?,
            None => estimate_two_dim_sojourn(p, u, st, &settings)?,
        };
        let asymptotic = match theorem1_eval(p, regime, &dc, st, u, &supplied) {
            Ok(a) => Some(a),
            Err(e) => {
                if k == 0 {
                    notes.push(format!("no asymptotic value: {e}"));
                }
                None
            }
        };
        let ratio = asymptotic.map(|a| mc.p_hat / a.value);
        let ratio_ci = asymptotic.map(|a| (mc.ci95.0 / a.value, mc.ci95.1 / a.value));
        let flag = if mc.n_hits < MIN_FIT_HITS {
            log::warn!(
                "u = {u}: only {} hits, row excluded from the fit",
                mc.n_hits
            );
            RowFlag::InsufficientHits
        } else {
            RowFlag::Ok
        };
        rows.push(ConvergenceRow {
            u,
            mc,
            asymptotic,
            ratio,
            ratio_ci,
            flag,
        });
    }
    let fit = decay_fit(p, regime, &dc, st, &rows);
    if fit.is_none() {
        notes.push(format!(
            "decay fit needs two rows with at least {MIN_FIT_HITS} hits"
        ));
    }
    Ok(ConvergenceReport {
        regime,
        rows,
        fit,
        constants,
        supplied,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRow {
    pub u: f64,
    pub t: f64,
    pub exact: f64,
    pub p_fine: f64,
    pub stderr_fine: f64,
    pub p_coarse: f64,
    pub stderr_coarse: f64,
    pub p_richardson: f64,
    pub stderr_richardson: f64,
    /// `(p_richardson - exact) / stderr_richardson`.
    pub z: f64,
    pub rel_err: f64,
    pub pass: bool,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    pub horizon: f64,
    pub n_paths: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub c: f64,
    pub q: f64,
    pub richardson_exponent: f64,
    pub rows: Vec<ValidateRow>,
}

impl ValidateReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Pass rule of a validation cell.
pub const VALIDATE_MAX_Z: f64 = 3.0;
pub const VALIDATE_MAX_REL: f64 = 0.05;

/// Brownian one-line sojourn probabilities against the closed form. Each `u`
/// gets one ensemble scored on the fine grid and on every `coarse_stride`-th
/// point, and the per-path Richardson combination
/// `p_f + (p_f - p_c) / (s^r - 1)` removes the leading `dt^r` bias.
pub fn run_validate_exact(cfg: &ExperimentConfig) -> Result<ValidateReport> {
    cfg.validate()?;
    if cfg.model.hurst() != 0.5 {
        return Err(Error::RegimeError(format!(
            "exact validation needs H = 1/2, got {}",
            cfg.model.hurst()
        )));
    }
    let v = &cfg.validate;
    if !(v.c > 0.0 && v.q > 0.0) {
        return Err(Error::RangeViolation(format!(
            "validation line needs c, q > 0, got {}, {}",
            v.c, v.q
        )));
    }
    let s = v.coarse_stride;
    let a = 1.0 / ((s as f64).powf(v.richardson_exponent) - 1.0);
    let mut rows = Vec::new();
    for (iu, &u) in cfg.experiment.u_grid.iter().enumerate() {
        let t_max = v.t_values.iter().cloned().fold(0.0, f64::max);
        let horizon = cfg
            .sim
            .horizon
            .unwrap_or(3.0 * v.q * u / v.c + 2.0 * t_max + 1.0);
        let grid = GridSpec::covering(cfg.sim.dt, horizon)?;
        let seed = derive_seed(cfg.sim.seed, VALIDATE_SALT ^ iu as u64);
        let mut targets = Vec::new();
        let mut combos = Vec::new();
        for &t in &v.t_values {
            let j = targets.len();
            for stride in [1, s] {
                targets.push(Target {
                    set: 0,
                    stride,
                    prefix: grid.n_steps() / s * s,
                    threshold: t,
                });
            }
            combos.push(vec![(j, 1.0 + a), (j + 1, -a)]);
        }
        let spec = EnsembleSpec {
            hurst: 0.5,
            grid,
            n_paths: cfg.sim.n_paths,
            seed,
            line_sets: vec![LineSet::new(vec![(v.c, v.q * u)])],
            targets,
            combos,
            tilt: None,
            abandon_log_bound: Some(cfg.sim.abandon_log_bound),
            exec: cfg.exec(),
        };
        let r = run_ensemble(&spec)?;
        for (i, &t) in v.t_values.iter().enumerate() {
            let (f, c) = (&r.targets[2 * i], &r.targets[2 * i + 1]);
            let rich = &r.combos[i];
            let exact = bm_sojourn_exact(v.c, v.q * u, t);
            let p_r = rich.mean();
            let se_r = rich.stderr();
            let z = (p_r - exact) / se_r;
            let rel_err = (p_r - exact).abs() / exact;
            rows.push(ValidateRow {
                u,
                t,
                exact,
                p_fine: f.moments.mean(),
                stderr_fine: f.moments.stderr(),
                p_coarse: c.moments.mean(),
                stderr_coarse: c.moments.stderr(),
                p_richardson: p_r,
                stderr_richardson: se_r,
                z,
                rel_err,
                pass: z.abs() <= VALIDATE_MAX_Z && rel_err <= VALIDATE_MAX_REL,
                dt_fine: grid.dt(),
                dt_coarse: grid.dt() * s as f64,
                horizon: grid.horizon(),
                n_paths: cfg.sim.n_paths,
                seed,
            });
        }
    }
    Ok(ValidateReport {
        c: v.c,
        q: v.q,
        richardson_exponent: v.richardson_exponent,
        rows,
    })
}

/// Flat CSV record of a simulation estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub u: f64,
    #[serde(rename = "T_u")]
    pub t_u: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_paths: u64,
    pub dt: f64,
    pub horizon: f64,
    pub horizon_doubling_delta: Option<f64>,
    pub seed: u64,
}

impl From<&MCEstimate> for EstimateRecord {
    fn from(m: &MCEstimate) -> Self {
        // Zero-hit rows carry the Wilson interval.
        let (ci_lo, ci_hi) = m.wilson95.unwrap_or(m.ci95);
        EstimateRecord {
            u: m.u,
            t_u: m.t_u,
            p_hat: m.p_hat,
            stderr: m.stderr,
            ci_lo,
            ci_hi,
            n_paths: m.n_paths,
            dt: m.grid.dt(),
            horizon: m.grid.horizon(),
            horizon_doubling_delta: m.horizon_doubling_delta,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvergenceRecord {
    u: f64,
    #[serde(rename = "T_u")]
    t_u: f64,
    p_hat: f64,
    stderr: f64,
    ci_lo: f64,
    ci_hi: f64,
    n_paths: u64,
    dt: f64,
    horizon: f64,
    horizon_doubling_delta: Option<f64>,
    seed: u64,
    n_hits: u64,
    asymptotic: Option<f64>,
    branch: Option<String>,
    ratio: Option<f64>,
    ratio_ci_lo: Option<f64>,
    ratio_ci_hi: Option<f64>,
    flag: RowFlag,
}

/// Flat CSV record of a constant estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantRecord {
    pub kind: String,
    /// `x` for Berman, `k` for Piterbarg.
    pub argument: f64,
    pub hurst: Option<f64>,
    pub slope_neg: Option<f64>,
    pub slope_pos: Option<f64>,
    pub value: f64,
    pub stderr: f64,
    pub truncation_bound: f64,
    pub span: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub method: String,
}

impl From<&ConstantEstimate> for ConstantRecord {
    fn from(e: &ConstantEstimate) -> Self {
        let (kind, argument, hurst, slope_neg, slope_pos) = match e.kind {
            ConstantKind::Berman { hurst, x } => ("berman", x, Some(hurst), None, None),
            ConstantKind::PiterbargSojourn {
                slope_neg,
                slope_pos,
                k,
            } => ("piterbarg", k, None, Some(slope_neg), Some(slope_pos)),
        };
        ConstantRecord {
            kind: kind.to_string(),
            argument,
            hurst,
            slope_neg,
            slope_pos,
            value: e.value,
            stderr: e.stderr,
            truncation_bound: e.truncation_bound,
            span: e.span,
            dt: e.grid.dt(),
            n_paths: e.n_paths,
            seed: e.seed,
            method: e.method.clone(),
        }
    }
}

pub fn csv_to_writer<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    csv_to_writer(fs::File::create(path)?, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

impl ConvergenceReport {
    fn records(&self) -> Vec<ConvergenceRecord> {
        self.rows
            .iter()
            .map(|r| {
                let e = EstimateRecord::from(&r.mc);
                ConvergenceRecord {
                    u: e.u,
                    t_u: e.t_u,
                    p_hat: e.p_hat,
                    stderr: e.stderr,
                    ci_lo: e.ci_lo,
                    ci_hi: e.ci_hi,
                    n_paths: e.n_paths,
                    dt: e.dt,
                    horizon: e.horizon,
                    horizon_doubling_delta: e.horizon_doubling_delta,
                    seed: e.seed,
                    n_hits: r.mc.n_hits,
                    asymptotic: r.asymptotic.map(|a| a.value),
                    branch: r.asymptotic.map(|a| a.branch.label()),
                    ratio: r.ratio,
                    ratio_ci_lo: r.ratio_ci.map(|c| c.0),
                    ratio_ci_hi: r.ratio_ci.map(|c| c.1),
                    flag: r.flag,
                }
            })
            .collect()
    }

    /// Writes `convergence.csv` and `convergence.json`; returns their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let csv_path = dir.join("convergence.csv");
        let json_path = dir.join("convergence.json");
        write_csv(&csv_path, &self.records())?;
        write_json(&json_path, self)?;
        Ok(vec![csv_path, json_path])
    }
}

impl ValidateReport {
    /// Writes `validate_exact.csv` and `validate_exact.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let csv_path = dir.join("validate_exact.csv");
        let json_path = dir.join("validate_exact.json");
        write_csv(&csv_path, &self.rows)?;
        write_json(&json_path, self)?;
        Ok(vec![csv_path, json_path])
    }
}
