use serde::{Deserialize, Serialize};

use super::paths::{run_ensemble, EnsembleResult, EnsembleSpec, LineSet, Target, Tilt};
use super::Exec;
use crate::error::{Error, Result};
use crate::fbm::{FbmPath, GridSpec};
use crate::model::{
    classify_regime, critical_points, ModelParams, SojournThreshold, DEFAULT_BOUNDARY_TOL,
};
use crate::rng::derive_seed;
use crate::stats::{wilson_interval, Moments};

const Z95: f64 = 1.959_963_984_540_054;
const PILOT_SALT: u64 = 0x70_11_07;

/// Discretized sojourn `dt * #{k >= 1 : path_k > c t_k + level for every line}`.
pub fn sojourn_time_lines(path: &FbmPath, lines: &[(f64, f64)]) -> f64 {
    let set = LineSet::new(lines.to_vec());
    let dt = path.grid.dt();
    let count = path
        .values
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(k, &x)| set.exceeded(path.grid.time(k), x))
        .count();
    dt * count as f64
}

/// Time both lines `B_H(s) - c_i s > q_i u` hold on the path's grid.
pub fn sojourn_time_two_dim(path: &FbmPath, p: &ModelParams, u: f64) -> f64 {
    sojourn_time_lines(path, &two_dim_lines(p, u))
}

fn two_dim_lines(p: &ModelParams, u: f64) -> Vec<(f64, f64)> {
    vec![(p.c1(), p.q1() * u), (p.c2(), p.q2() * u)]
}

/// `3 max(t1, t2, t_star) u + 2 T_u`: the variance maxima of the rescaled
/// field sit at the critical points, and a sojourn of length `T_u` needs at
/// least that much room.
pub fn default_horizon(p: &ModelParams, u: f64, st: &SojournThreshold) -> f64 {
    let cp = critical_points(p);
    3.0 * cp.t_star.max(cp.t1).max(cp.t2) * u.max(1e-12) + 2.0 * st.at(u, p.hurst())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub grid: GridSpec,
    pub n_paths: u64,
    pub seed: u64,
    pub exec: Exec,
    /// Size of the horizon-doubling pilot relative to `n_paths`; 0 disables it.
    pub pilot_fraction: f64,
    /// Brownian paths stop once re-entry has probability below `exp(-bound)`.
    pub abandon_log_bound: f64,
}

impl SimSettings {
    pub fn new(grid: GridSpec, n_paths: u64, seed: u64) -> Self {
        SimSettings {
            grid,
            n_paths,
            seed,
            exec: Exec::default(),
            pilot_fraction: 0.1,
            abandon_log_bound: 30.0,
        }
    }

    pub fn without_pilot(mut self) -> Self {
        self.pilot_fraction = 0.0;
        self
    }
}

/// Requested drift tilt; unset fields take regime-based defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TiltSpec {
    pub theta: Option<f64>,
    /// Tilt window length in time units.
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedTilt {
    pub theta: f64,
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub u: f64,
    pub t_u: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub n_paths: u64,
    pub n_hits: u64,
    pub ci95: (f64, f64),
    /// Reported for untilted estimates with fewer than 50 hits.
    pub wilson95: Option<(f64, f64)>,
    pub grid: GridSpec,
    pub horizon_doubling_delta: Option<f64>,
    pub seed: u64,
    pub tilt: Option<AppliedTilt>,
}

impl MCEstimate {
    pub(crate) fn from_moments(
        m: &Moments,
        hits: u64,
        u: f64,
        t_u: f64,
        settings: &SimSettings,
        tilt: Option<AppliedTilt>,
    ) -> Self {
        let p_hat = m.mean();
        let stderr = m.stderr();
        let wilson95 = (tilt.is_none() && hits < 50).then(|| wilson_interval(hits, m.n, Z95));
        MCEstimate {
            u,
            t_u,
            p_hat,
            stderr,
            n_paths: m.n,
            n_hits: hits,
            ci95: (p_hat - Z95 * stderr, p_hat + Z95 * stderr),
            wilson95,
            grid: settings.grid,
            horizon_doubling_delta: None,
            seed: settings.seed,
            tilt,
        }
    }

    /// Upper end of the interval that is actually informative: Wilson when
    /// reported, else the normal interval.
    pub fn upper_bound(&self) -> f64 {
        self.wilson95.map(|w| w.1).unwrap_or(self.ci95.1)
    }
}

fn single_target_spec(
    hurst: f64,
    lines: Vec<(f64, f64)>,
    t_u: f64,
    settings: &SimSettings,
    tilt: Option<Tilt>,
) -> EnsembleSpec {
    EnsembleSpec {
        hurst,
        grid: settings.grid,
        n_paths: settings.n_paths,
        seed: settings.seed,
        line_sets: vec![LineSet::new(lines)],
        targets: vec![Target {
            set: 0,
            stride: 1,
            prefix: settings.grid.n_steps(),
            threshold: t_u,
        }],
        combos: vec![],
        tilt,
        abandon_log_bound: Some(settings.abandon_log_bound),
        exec: settings.exec,
    }
}

/// `|p(horizon) - p(2 horizon)|` on a separate pilot ensemble scored at both
/// horizons.
fn horizon_pilot(base: &EnsembleSpec, settings: &SimSettings) -> Result<Option<f64>> {
    if !(settings.pilot_fraction > 0.0) {
        return Ok(None);
    }
    let n = base.grid.n_steps();
    let mut spec = base.clone();
    spec.grid = GridSpec::new(base.grid.dt(), 2 * n)?;
    spec.n_paths = ((settings.n_paths as f64 * settings.pilot_fraction).ceil() as u64).max(1);
    spec.seed = derive_seed(settings.seed, PILOT_SALT);
    let t = base.targets[0];
    spec.targets = vec![t, Target { prefix: 2 * n, ..t }];
    let r = run_ensemble(&spec)?;
    Ok(Some(
        (r.targets[0].moments.mean() - r.targets[1].moments.mean()).abs(),
    ))
}

fn estimate_lines(
    hurst: f64,
    lines: Vec<(f64, f64)>,
    u: f64,
    st: &SojournThreshold,
    settings: &SimSettings,
    tilt: Option<(Tilt, AppliedTilt)>,
) -> Result<MCEstimate> {
    let t_u = st.at(u, hurst);
    let spec = single_target_spec(hurst, lines, t_u, settings, tilt.map(|t| t.0));
    let r: EnsembleResult = run_ensemble(&spec)?;
    let mut est = MCEstimate::from_moments(
        &r.targets[0].moments,
        r.targets[0].hits,
        u,
        t_u,
        settings,
        tilt.map(|t| t.1),
    );
    est.horizon_doubling_delta = horizon_pilot(&spec, settings)?;
    Ok(est)
}

pub fn estimate_two_dim_sojourn(
    p: &ModelParams,
    u: f64,
    st: &SojournThreshold,
    settings: &SimSettings,
) -> Result<MCEstimate> {
    check_capital(u)?;
    estimate_lines(p.hurst(), two_dim_lines(p, u), u, st, settings, None)
}

pub fn estimate_one_dim_sojourn(
    c: f64,
    q: f64,
    hurst: f64,
    u: f64,
    st: &SojournThreshold,
    settings: &SimSettings,
) -> Result<MCEstimate> {
    check_capital(u)?;
    check_line(c, q)?;
    estimate_lines(hurst, vec![(c, q * u)], u, st, settings, None)
}

fn check_capital(u: f64) -> Result<()> {
    if u >= 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Error::RangeViolation(format!(
            "capital u = {u} must be finite and >= 0"
        )))
    }
}

fn check_line(c: f64, q: f64) -> Result<()> {
    if c > 0.0 && q > 0.0 {
        Ok(())
    } else {
        Err(Error::RangeViolation(format!(
            "line needs c, q > 0, got c = {c}, q = {q}"
        )))
    }
}

fn resolve_tilt(
    theta: f64,
    window: f64,
    req: &TiltSpec,
    grid: &GridSpec,
) -> Result<(Tilt, AppliedTilt)> {
    let theta = req.theta.unwrap_or(theta);
    let window = req.window.unwrap_or(window);
    if !theta.is_finite() || !(window >= 0.0) {
        return Err(Error::Config(format!(
            "invalid tilt theta = {theta}, window = {window}"
        )));
    }
    let steps = ((window / grid.dt()).round() as usize).min(grid.n_steps());
    let applied = AppliedTilt {
        theta,
        window: grid.time(steps),
    };
    Ok((
        Tilt {
            theta,
            window_steps: steps,
        },
        applied,
    ))
}

/// Default tilt of the two-line problem: aim the drift at the most likely
/// ruin point, `(u t_star, eta u)` in the two-line regime and the first
/// passage of the dominant line otherwise.
pub fn default_two_dim_tilt(p: &ModelParams, u: f64) -> (f64, f64) {
    let cp = critical_points(p);
    match classify_regime(&cp, DEFAULT_BOUNDARY_TOL).line() {
        Some(line) => {
            let (c, q) = p.line(line);
            (2.0 * c, q * u / c)
        }
        None => {
            let eta = p.c1() * cp.t_star + p.q1();
            (eta / cp.t_star, u * cp.t_star)
        }
    }
}

pub fn estimate_two_dim_sojourn_tilted(
    p: &ModelParams,
    u: f64,
    st: &SojournThreshold,
    settings: &SimSettings,
    tilt: &TiltSpec,
) -> Result<MCEstimate> {
    check_capital(u)?;
    if p.hurst() != 0.5 {
        return Err(Error::RegimeError(format!(
            "tilted estimation needs H = 1/2, got {}",
            p.hurst()
        )));
    }
    let (theta, window) = default_two_dim_tilt(p, u);
    let t = resolve_tilt(theta, window, tilt, &settings.grid)?;
    estimate_lines(0.5, two_dim_lines(p, u), u, st, settings, Some(t))
}

pub fn estimate_one_dim_sojourn_tilted(
    c: f64,
    q: f64,
    u: f64,
    st: &SojournThreshold,
    settings: &SimSettings,
    tilt: &TiltSpec,
) -> Result<MCEstimate> {
    check_capital(u)?;
    check_line(c, q)?;
    let t = resolve_tilt(2.0 * c, q * u / c, tilt, &settings.grid)?;
    estimate_lines(0.5, vec![(c, q * u)], u, st, settings, Some(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::sample_fbm_path;
    use crate::model::validate_params;

    #[test]
    fn zero_path_has_no_sojourn() {
        let grid = GridSpec::new(0.1, 20).unwrap();
        let path = FbmPath {
            grid,
            hurst: 0.5,
            values: vec![0.0; 21],
        };
        let p = validate_params(2.0, 1.0, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(sojourn_time_two_dim(&path, &p, 0.5), 0.0);
    }

    #[test]
    fn single_line_reduction() {
        let grid = GridSpec::new(0.01, 500).unwrap();
        let path = sample_fbm_path(0.5, grid, 3).unwrap();
        let one = sojourn_time_lines(&path, &[(1.0, -0.2)]);
        let two = sojourn_time_lines(&path, &[(1.0, -0.2), (0.0, f64::NEG_INFINITY)]);
        assert_eq!(one, two);
    }

    #[test]
    fn beyond_horizon_is_zero() {
        let grid = GridSpec::new(0.01, 200).unwrap();
        let st = SojournThreshold::constant(2.5).unwrap();
        let est =
            estimate_one_dim_sojourn(1.0, 1.0, 0.5, 0.0, &st, &SimSettings::new(grid, 500, 1))
                .unwrap();
        assert_eq!(est.p_hat, 0.0);
        assert_eq!(est.n_hits, 0);
        assert!(est.wilson95.unwrap().1 > 0.0);
    }

    #[test]
    fn tilt_needs_half() {
        let p = validate_params(2.0, 1.0, 1.0, 2.0, 0.7).unwrap();
        let grid = GridSpec::new(0.01, 100).unwrap();
        let st = SojournThreshold::constant(0.0).unwrap();
        let r = estimate_two_dim_sojourn_tilted(
            &p,
            1.0,
            &st,
            &SimSettings::new(grid, 10, 1),
            &TiltSpec::default(),
        );
        assert!(matches!(r, Err(Error::RegimeError(_))));
    }
}
