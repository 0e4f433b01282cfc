//! Two-line risk model: parameter validation, critical points, regime
//! classification and the closed-form constants that the asymptotic
//! formulas are built from.
//!
//! The model is the pair of lines `B_H(s) - c_i s > q_i u`, `i = 1, 2`, with
//! `c1 > c2 > 0` and `q2 > q1 > 0`. After the self-similar change of time
//! `s -> s u` ruin means `B_H(s) / max(c1 s + q1, c2 s + q2) > u^{1-H}`, and
//! the variance of that ratio peaks at one of `t_star`, `t1`, `t2`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide `t_star == t_i`.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RawParams {
    c1: f64,
    c2: f64,
    q1: f64,
    q2: f64,
    #[serde(alias = "H")]
    hurst: f64,
}

/// Validated parameters `(c1, c2, q1, q2, H)` of the two-line model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    c1: f64,
    c2: f64,
    q1: f64,
    q2: f64,
    hurst: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        validate_params(raw.c1, raw.c2, raw.q1, raw.q2, raw.hurst)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            c1: p.c1,
            c2: p.c2,
            q1: p.q1,
            q2: p.q2,
            hurst: p.hurst,
        }
    }
}

/// Checks `c1 > c2 > 0`, `q2 > q1 > 0` and `0 < H < 1`.
///
/// Range checks run first, so a negative rate is reported as a
/// `RangeViolation` even when the ordering also fails.
pub fn validate_params(c1: f64, c2: f64, q1: f64, q2: f64, hurst: f64) -> Result<ModelParams> {
    for (name, v) in [("c1", c1), ("c2", c2), ("q1", q1), ("q2", q2)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::RangeViolation(format!(
                "{name} = {v} must be finite and positive"
            )));
        }
    }
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::RangeViolation(format!(
            "H = {hurst} must lie in (0, 1)"
        )));
    }
    if c1 <= c2 {
        return Err(Error::OrderingViolation(format!(
            "c1 = {c1} must exceed c2 = {c2}, otherwise one line dominates and the problem is one-dimensional"
        )));
    }
    if q1 >= q2 {
        return Err(Error::OrderingViolation(format!(
            "q2 = {q2} must exceed q1 = {q1}, otherwise one line dominates and the problem is one-dimensional"
        )));
    }
    Ok(ModelParams {
        c1,
        c2,
        q1,
        q2,
        hurst,
    })
}

impl ModelParams {
    pub fn new(c1: f64, c2: f64, q1: f64, q2: f64, hurst: f64) -> Result<Self> {
        validate_params(c1, c2, q1, q2, hurst)
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }
    pub fn c2(&self) -> f64 {
        self.c2
    }
    pub fn q1(&self) -> f64 {
        self.q1
    }
    pub fn q2(&self) -> f64 {
        self.q2
    }
    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Same lines, different Hurst exponent.
    pub fn with_hurst(&self, hurst: f64) -> Result<Self> {
        validate_params(self.c1, self.c2, self.q1, self.q2, hurst)
    }

    /// Drift and capital multiplier of one line.
    pub fn line(&self, line: Line) -> (f64, f64) {
        match line {
            Line::First => (self.c1, self.q1),
            Line::Second => (self.c2, self.q2),
        }
    }
}

/// One of the two portfolio lines; serialized as its index, 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Line {
    First,
    Second,
}

impl From<Line> for u8 {
    fn from(l: Line) -> u8 {
        l.index() as u8
    }
}

impl TryFrom<u8> for Line {
    type Error = String;

    fn try_from(i: u8) -> std::result::Result<Self, String> {
        match i {
            1 => Ok(Line::First),
            2 => Ok(Line::Second),
            _ => Err(format!("line must be 1 or 2, got {i}")),
        }
    }
}

impl Line {
    pub fn index(self) -> usize {
        match self {
            Line::First => 1,
            Line::Second => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SojournMode {
    /// `T_u = T0` for every `u`.
    #[serde(alias = "ConstantT", alias = "constant_t")]
    Constant,
    /// `T_u = T u^{2 - 1/H}`, so that `T_u u^{1/H - 2} = T` exactly.
    #[serde(alias = "Scaled")]
    Scaled,
}

impl fmt::Display for SojournMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SojournMode::Constant => write!(f, "constant"),
            SojournMode::Scaled => write!(f, "scaled"),
        }
    }
}

impl std::str::FromStr for SojournMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" | "constantt" | "constant_t" => Ok(SojournMode::Constant),
            "scaled" => Ok(SojournMode::Scaled),
            other => Err(Error::Config(format!(
                "unknown sojourn mode `{other}` (expected constant|scaled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RawThreshold {
    mode: SojournMode,
    value: f64,
}

/// The sojourn-time threshold `T_u` as a function of the capital `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThreshold", into = "RawThreshold")]
pub struct SojournThreshold {
    mode: SojournMode,
    value: f64,
}

impl TryFrom<RawThreshold> for SojournThreshold {
    type Error = Error;

    fn try_from(raw: RawThreshold) -> Result<Self> {
        SojournThreshold::new(raw.mode, raw.value)
    }
}

impl From<SojournThreshold> for RawThreshold {
    fn from(s: SojournThreshold) -> Self {
        RawThreshold {
            mode: s.mode,
            value: s.value,
        }
    }
}

impl SojournThreshold {
    pub fn new(mode: SojournMode, value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::RangeViolation(format!(
                "sojourn value {value} must be finite and >= 0"
            )));
        }
        Ok(SojournThreshold { mode, value })
    }

    pub fn constant(t0: f64) -> Result<Self> {
        Self::new(SojournMode::Constant, t0)
    }

    pub fn scaled(t: f64) -> Result<Self> {
        Self::new(SojournMode::Scaled, t)
    }

    pub fn mode(&self) -> SojournMode {
        self.mode
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// `T_u` at capital `u`.
    pub fn at(&self, u: f64, hurst: f64) -> f64 {
        match self.mode {
            SojournMode::Constant => self.value,
            SojournMode::Scaled => {
                if self.value == 0.0 {
                    0.0
                } else {
                    self.value * u.powf(2.0 - 1.0 / hurst)
                }
            }
        }
    }
}

/// `lim T_u u^{1/H - 2}`.
///
/// A positive constant threshold with `H < 1/2` has no finite limit; that case
/// is reported as [`Error::NonconformingGrowth`] so callers can switch to the
/// two-sided bounds.
pub fn sojourn_limit(st: &SojournThreshold, hurst: f64) -> Result<f64> {
    match st.mode {
        SojournMode::Scaled => Ok(st.value),
        SojournMode::Constant => {
            if st.value == 0.0 || hurst > 0.5 {
                Ok(0.0)
            } else if hurst == 0.5 {
                Ok(st.value)
            } else {
                Err(Error::NonconformingGrowth {
                    t0: st.value,
                    hurst,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoints {
    pub t_star: f64,
    pub t1: f64,
    pub t2: f64,
}

pub fn critical_points(p: &ModelParams) -> CriticalPoints {
    let h = p.hurst;
    CriticalPoints {
        t_star: (p.q2 - p.q1) / (p.c1 - p.c2),
        t1: p.q1 * h / ((1.0 - h) * p.c1),
        t2: p.q2 * h / ((1.0 - h) * p.c2),
    }
}

/// Which asymptotic formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "line", rename_all = "snake_case")]
pub enum Regime {
    /// `t_star` strictly outside `[t1, t2]`; the ruin is driven by a single line.
    Case1Interior(Line),
    /// `t_star == t_i`; single-line asymptotics with the factor 1/2.
    Case1Boundary(Line),
    /// `t1 < t_star < t2`; both lines matter.
    Case2,
}

impl Regime {
    pub fn line(&self) -> Option<Line> {
        match *self {
            Regime::Case1Interior(l) | Regime::Case1Boundary(l) => Some(l),
            Regime::Case2 => None,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Regime::Case1Interior(l) => format!("case1_interior_{}", l.index()),
            Regime::Case1Boundary(l) => format!("case1_boundary_{}", l.index()),
            Regime::Case2 => "case2".to_string(),
        }
    }
}

pub fn classify_regime(cp: &CriticalPoints, tol: f64) -> Regime {
    let CriticalPoints { t_star, t1, t2 } = *cp;
    if (t_star - t1).abs() <= tol * t1 {
        Regime::Case1Boundary(Line::First)
    } else if (t_star - t2).abs() <= tol * t2 {
        Regime::Case1Boundary(Line::Second)
    } else if t_star < t1 {
        Regime::Case1Interior(Line::First)
    } else if t_star > t2 {
        Regime::Case1Interior(Line::Second)
    } else {
        Regime::Case2
    }
}

/// Closed-form constants entering the asymptotics.
///
/// Optional entries are absent when the branch that needs them cannot apply:
/// `a` and `d_bar` outside the two-line regime, `alpha` and the `c*_alpha`
/// pair for scaled thresholds, `t_prime` when `lim T_u u^{1/H-2}` does not
/// exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub t_star: f64,
    pub d_h: f64,
    pub k_h: f64,
    #[serde(rename = "c_1")]
    pub c1_h: f64,
    #[serde(rename = "c_2_const")]
    pub c2_h: f64,
    pub d_1: f64,
    pub d_2: f64,
    pub eta: f64,
    pub t_prime: Option<f64>,
    pub drift_slope_neg: f64,
    pub drift_slope_pos: f64,
    pub a: Option<f64>,
    pub d_bar: Option<f64>,
    pub alpha: Option<f64>,
    pub c1_alpha: Option<f64>,
    pub c2_alpha: Option<f64>,
}

impl DerivedConstants {
    pub fn c_h(&self, line: Line) -> f64 {
        match line {
            Line::First => self.c1_h,
            Line::Second => self.c2_h,
        }
    }

    pub fn d_i(&self, line: Line) -> f64 {
        match line {
            Line::First => self.d_1,
            Line::Second => self.d_2,
        }
    }
}

/// `K_H = 2^{1/2 - 1/(2H)} sqrt(pi) / sqrt(H (1 - H))`.
pub fn k_h(hurst: f64) -> f64 {
    2f64.powf(0.5 - 0.5 / hurst) * PI.sqrt() / (hurst * (1.0 - hurst)).sqrt()
}

/// `C_H = c^H q^{1-H} / (H^H (1-H)^{1-H})` for a single line.
pub fn line_c_h(c: f64, q: f64, hurst: f64) -> f64 {
    c.powf(hurst) * q.powf(1.0 - hurst) / (hurst.powf(hurst) * (1.0 - hurst).powf(1.0 - hurst))
}

/// `D = c^2 (1-H)^{2 - 1/H} / (2^{1/(2H)} H^2)` for a single line.
pub fn line_d(c: f64, hurst: f64) -> f64 {
    c * c * (1.0 - hurst).powf(2.0 - 1.0 / hurst) / (2f64.powf(0.5 / hurst) * hurst * hurst)
}

pub fn derive_constants(p: &ModelParams, st: &SojournThreshold) -> Result<DerivedConstants> {
    derive_constants_with_tol(p, st, DEFAULT_BOUNDARY_TOL)
}

pub fn derive_constants_with_tol(
    p: &ModelParams,
    st: &SojournThreshold,
    tol: f64,
) -> Result<DerivedConstants> {
    let h = p.hurst;
    let cp = critical_points(p);
    let ts = cp.t_star;
    let eta = p.c1 * ts + p.q1;
    let ts_h = ts.powf(h);
    let d_h = eta / ts_h;

    let det = p.c1 * p.q2 - p.q1 * p.c2;
    let drift_slope_neg = (p.c1 * p.q2 + p.c2 * p.q1 - 2.0 * p.c2 * p.q2) / det;
    let drift_slope_pos = (2.0 * p.c1 * p.q1 - p.c1 * p.q2 - p.q1 * p.c2) / det;

    let two_pow = 2f64.powf(0.5 / h);
    let (a, d_bar) = if classify_regime(&cp, tol) == Regime::Case2 {
        let g1 = h * (p.c1 * ts + p.q1) - p.c1 * ts;
        let g2 = h * (p.c2 * ts + p.q2) - p.c2 * ts;
        if g1 == 0.0 {
            return Err(Error::DegenerateCase2Constant { line: 1 });
        }
        if g2 == 0.0 {
            return Err(Error::DegenerateCase2Constant { line: 2 });
        }
        let a = (1.0 / g1.abs() + 1.0 / g2.abs()) * ts_h * d_h.powf(1.0 / h - 1.0) / two_pow;
        let d_bar = eta.powf(1.0 / h) / (two_pow * ts * ts);
        (Some(a), Some(d_bar))
    } else {
        (None, None)
    };

    // Sojourn rescaling of the H = 1/2 interior case: eta^2 T / (2 t_star^2).
    let t_prime = sojourn_limit(st, h)
        .ok()
        .map(|t| eta * eta * t / (2.0 * ts * ts));

    let (alpha, c1_alpha, c2_alpha) = match st.mode() {
        SojournMode::Constant => {
            let alpha = st.value().powf(2.0 * h) / (2.0 * ts.powf(2.0 * h));
            (
                Some(alpha),
                Some(alpha * d_h * d_h),
                Some(alpha * alpha * d_h * d_h / 2.0),
            )
        }
        SojournMode::Scaled => (None, None, None),
    };

    Ok(DerivedConstants {
        t_star: ts,
        d_h,
        k_h: k_h(h),
        c1_h: line_c_h(p.c1, p.q1, h),
        c2_h: line_c_h(p.c2, p.q2, h),
        d_1: line_d(p.c1, h),
        d_2: line_d(p.c2, h),
        eta,
        t_prime,
        drift_slope_neg,
        drift_slope_pos,
        a,
        d_bar,
        alpha,
        c1_alpha,
        c2_alpha,
    })
}

/// Piecewise-linear drift `d(s)` of the sojourn Piterbarg constant.
pub fn eval_drift_d(dc: &DerivedConstants, s: f64) -> f64 {
    if s < 0.0 {
        s * dc.drift_slope_neg
    } else {
        s * dc.drift_slope_pos
    }
}
