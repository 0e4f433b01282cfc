//! Closed forms for Brownian motion, Gaussian tail utilities and the
//! asymptotic evaluators.
//!
//! Every evaluator returns both the value and its natural log, because the
//! targets underflow long before the asymptotics become accurate. Values are
//! never clamped to `[0, 1]`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    classify_regime, critical_points, k_h, line_c_h, line_d, sojourn_limit, DerivedConstants,
    ModelParams, Regime, SojournMode, SojournThreshold, DEFAULT_BOUNDARY_TOL,
};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Psi(x) = P(N > x)`.
pub fn normal_survival(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `ln Psi(x)`, finite for every finite `x`.
pub fn log_normal_survival(x: f64) -> f64 {
    if x <= 30.0 {
        normal_survival(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio_cf(x).ln()
    }
}

/// `Psi(x) / phi(x)` by the Laplace continued fraction, accurate for `x >~ 5`.
fn mills_ratio_cf(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// Two-sided Mills bounds `(1 - 1/x^2) phi(x)/x <= Psi(x) <= phi(x)/x`.
pub fn mills_bounds(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) {
        return Err(Error::DomainError(format!(
            "Mills bounds need x > 0, got {x}"
        )));
    }
    let upper = density(x) / x;
    Ok(((1.0 - 1.0 / (x * x)) * upper, upper))
}

/// Classical ruin probability of `B(t) - c t` over level `u`: `exp(-2 c u)`.
pub fn bm_classical_ruin(c: f64, u: f64) -> f64 {
    (-2.0 * c * u).exp()
}

/// `P(int_0^inf 1(B(s) - c s > u) ds > T)` for standard Brownian motion.
pub fn bm_sojourn_exact(c: f64, u: f64, t: f64) -> f64 {
    bm_sojourn_factor(c, t) * (-2.0 * c * u).exp()
}

fn bm_sojourn_factor(c: f64, t: f64) -> f64 {
    let st = t.sqrt();
    2.0 * (1.0 + c * c * t) * normal_survival(c * st)
        - c * (2.0 * t).sqrt() / PI.sqrt() * (-0.5 * c * c * t).exp()
}

/// Berman constant at `2H = 1`: `(2 + x) Psi(sqrt(x/2)) - sqrt(x/pi) e^{-x/4}`.
///
/// Obtained by matching the Brownian and general branches of the one-line
/// asymptotics, since `K_{1/2} = sqrt(2 pi)` and `D = 2c^2` there.
pub fn berman_half_closed_form(x: f64) -> f64 {
    (2.0 + x) * normal_survival((0.5 * x).sqrt()) - (x / PI).sqrt() * (-0.25 * x).exp()
}

/// The Hurst-dependent branch of an asymptotic formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HurstBranch {
    Below,
    Half,
    Above,
}

impl HurstBranch {
    pub fn of(hurst: f64) -> Self {
        if hurst < 0.5 {
            HurstBranch::Below
        } else if hurst == 0.5 {
            HurstBranch::Half
        } else {
            HurstBranch::Above
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// `None` for the bare one-line formula.
    pub regime: Option<Regime>,
    pub hurst: HurstBranch,
}

impl Branch {
    pub fn label(&self) -> String {
        let h = match self.hurst {
            HurstBranch::Below => "h_below_half",
            HurstBranch::Half => "h_half",
            HurstBranch::Above => "h_above_half",
        };
        match self.regime {
            Some(r) => format!("{}/{h}", r.name()),
            None => format!("one_dim/{h}"),
        }
    }
}

/// Externally estimated constants, injected rather than computed here.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SuppliedConstants {
    /// `B_{2H}(x)` at the argument the branch needs.
    pub berman: Option<f64>,
    /// Sojourn Piterbarg constant `B^d_{T'}`.
    pub piterbarg: Option<f64>,
}

/// Which constants a branch consumed, and at which arguments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    pub berman: Option<f64>,
    pub berman_argument: Option<f64>,
    pub piterbarg: Option<f64>,
    pub piterbarg_argument: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticValue {
    pub value: f64,
    pub log_value: f64,
    pub branch: Branch,
    pub constant_inputs: ConstantInputs,
}

impl AsymptoticValue {
    fn from_log(log_value: f64, branch: Branch, constant_inputs: ConstantInputs) -> Self {
        AsymptoticValue {
            value: log_value.exp(),
            log_value,
            branch,
            constant_inputs,
        }
    }

    fn halved(mut self) -> Self {
        self.log_value -= LN_2;
        self.value = self.log_value.exp();
        self
    }
}

fn positive_constant(name: &str, v: Option<f64>) -> Result<f64> {
    match v {
        Some(b) if b > 0.0 && b.is_finite() => Ok(b),
        Some(b) => Err(Error::DomainError(format!(
            "{name} must be positive and finite, got {b}"
        ))),
        None => Err(Error::MissingConstant(name.to_string())),
    }
}

/// Argument of the Berman constant in the one-line asymptotics after the
/// capital is rescaled from `u` to `q u`.
pub fn one_dim_berman_argument(c: f64, q: f64, hurst: f64, t: f64) -> f64 {
    t * q.powf(1.0 / hurst - 2.0) * line_d(c, hurst)
}

/// Asymptotics of `P(int 1(B_H(t) - c t > q u) dt > T_u)` with `lim T_u u^{1/H-2} = t`.
///
/// At `H = 1/2` the Brownian closed form is used (and `berman`, if given,
/// overrides `B_1(2 c^2 t)`); otherwise `berman` must hold `B_{2H}` at
/// [`one_dim_berman_argument`].
pub fn prop3_one_dim(
    c: f64,
    q: f64,
    hurst: f64,
    u: f64,
    t: f64,
    berman: Option<f64>,
) -> Result<AsymptoticValue> {
    if !(c > 0.0 && q > 0.0 && u >= 0.0 && t >= 0.0) || !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::DomainError(format!(
            "one-line asymptotics need c, q > 0, u, T >= 0 and H in (0,1); got c={c}, q={q}, u={u}, T={t}, H={hurst}"
        )));
    }
    let branch = Branch {
        regime: None,
        hurst: HurstBranch::of(hurst),
    };
    let arg = one_dim_berman_argument(c, q, hurst, t);
    if hurst == 0.5 {
        let b = match berman {
            Some(_) => positive_constant("Berman constant B_1", berman)?,
            None => berman_half_closed_form(arg),
        };
        let inputs = ConstantInputs {
            berman: Some(b),
            berman_argument: Some(arg),
            ..Default::default()
        };
        return Ok(AsymptoticValue::from_log(
            b.ln() - 2.0 * c * q * u,
            branch,
            inputs,
        ));
    }
    let b = positive_constant("Berman constant B_2H(T D)", berman)?;
    let x = line_c_h(c, q, hurst) * u.powf(1.0 - hurst);
    let log_value =
        k_h(hurst).ln() + b.ln() + (1.0 / hurst - 1.0) * x.ln() + log_normal_survival(x);
    let inputs = ConstantInputs {
        berman: Some(b),
        berman_argument: Some(arg),
        ..Default::default()
    };
    Ok(AsymptoticValue::from_log(log_value, branch, inputs))
}

/// Asymptotics of the two-line sojourn ruin probability.
pub fn theorem1_eval(
    p: &ModelParams,
    regime: Regime,
    dc: &DerivedConstants,
    st: &SojournThreshold,
    u: f64,
    supplied: &SuppliedConstants,
) -> Result<AsymptoticValue> {
    let h = p.hurst();
    let t = sojourn_limit(st, h)?;
    let hurst = HurstBranch::of(h);
    let branch = Branch {
        regime: Some(regime),
        hurst,
    };
    match regime {
        Regime::Case1Interior(line) | Regime::Case1Boundary(line) => {
            let (c, q) = p.line(line);
            let mut v = prop3_one_dim(c, q, h, u, t, supplied.berman)?;
            v.branch = branch;
            Ok(if matches!(regime, Regime::Case1Boundary(_)) {
                v.halved()
            } else {
                v
            })
        }
        Regime::Case2 => {
            let log_psi = log_normal_survival(dc.d_h * u.powf(1.0 - h));
            match hurst {
                HurstBranch::Above => {
                    if st.value() > 0.0 {
                        return Err(Error::HypothesisViolation(format!(
                            "for H = {h} > 1/2 the two-line regime needs T_u u^(2-1/H) -> 0, \
                             which fails for {} threshold {}",
                            st.mode(),
                            st.value()
                        )));
                    }
                    Ok(AsymptoticValue::from_log(
                        log_psi,
                        branch,
                        ConstantInputs::default(),
                    ))
                }
                HurstBranch::Half => {
                    let b =
                        positive_constant("sojourn Piterbarg constant B^d_T'", supplied.piterbarg)?;
                    let inputs = ConstantInputs {
                        piterbarg: Some(b),
                        piterbarg_argument: dc.t_prime,
                        ..Default::default()
                    };
                    Ok(AsymptoticValue::from_log(log_psi + b.ln(), branch, inputs))
                }
                HurstBranch::Below => {
                    let b = positive_constant("Berman constant B_2H(D_bar T)", supplied.berman)?;
                    let (a, d_bar) = match (dc.a, dc.d_bar) {
                        (Some(a), Some(d)) => (a, d),
                        _ => {
                            return Err(Error::RegimeError(
                                "constants A and D_bar are only defined in the two-line regime"
                                    .into(),
                            ))
                        }
                    };
                    let log_value =
                        log_psi + b.ln() + a.ln() + (1.0 - h) * (1.0 / h - 2.0) * u.ln();
                    let inputs = ConstantInputs {
                        berman: Some(b),
                        berman_argument: Some(d_bar * t),
                        ..Default::default()
                    };
                    Ok(AsymptoticValue::from_log(log_value, branch, inputs))
                }
            }
        }
    }
}

/// Log-scale bounds for a constant threshold with `H < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsPair {
    /// Lower bound with the unknown constant `C_bar` factored out.
    pub lower_envelope: f64,
    pub upper: f64,
    pub c_bar: f64,
    /// Beyond this capital `lower_envelope + ln c_bar <= upper` is guaranteed.
    pub ordering_threshold: f64,
}

impl BoundsPair {
    pub fn is_ordered(&self) -> bool {
        self.lower_envelope + self.c_bar.ln() <= self.upper
    }
}

/// Root of `ln(2 Psi(y)) + 2 y^2` on `(0, inf)`; above it the function is positive.
fn ordering_root() -> f64 {
    let g = |y: f64| (2.0 * normal_survival(y)).ln() + 2.0 * y * y;
    let (mut lo, mut hi) = (0.1, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

pub fn prop2_bounds(
    p: &ModelParams,
    dc: &DerivedConstants,
    t0: f64,
    u: f64,
    c_bar: f64,
) -> Result<BoundsPair> {
    let h = p.hurst();
    if h >= 0.5 {
        return Err(Error::RegimeError(format!(
            "constant-threshold bounds need H < 1/2, got {h}"
        )));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::RegimeError(format!(
            "constant-threshold bounds need T0 > 0, got {t0}"
        )));
    }
    if classify_regime(&critical_points(p), DEFAULT_BOUNDARY_TOL) != Regime::Case2 {
        return Err(Error::RegimeError(
            "constant-threshold bounds need t_star inside (t1, t2)".into(),
        ));
    }
    if !(c_bar > 0.0 && c_bar < 1.0) {
        return Err(Error::RangeViolation(format!(
            "C_bar must lie in (0,1), got {c_bar}"
        )));
    }
    if !(u > 0.0) {
        return Err(Error::DomainError(format!(
            "capital must be positive, got {u}"
        )));
    }
    let (ts, d) = (dc.t_star, dc.d_h);
    let alpha = t0.powf(2.0 * h) / (2.0 * ts.powf(2.0 * h));
    let (c1a, c2a) = (alpha * d * d, alpha * alpha * d * d / 2.0);
    let log_psi = log_normal_survival(d * u.powf(1.0 - h));
    let lower_envelope =
        log_psi - c1a * u.powf(2.0 - 4.0 * h) - c2a * u.powf(2.0 * (1.0 - 3.0 * h));
    let scale = t0.powf(h) * d / (2.0 * ts.powf(h));
    let upper = LN_2 + log_psi + log_normal_survival(u.powf(1.0 - 2.0 * h) * scale);
    let ordering_threshold = (ordering_root() / scale).powf(1.0 / (1.0 - 2.0 * h));
    Ok(BoundsPair {
        lower_envelope,
        upper,
        c_bar,
        ordering_threshold,
    })
}

/// Whether a threshold falls outside the growth condition and only the
/// two-sided bounds are available.
pub fn bounds_apply(p: &ModelParams, st: &SojournThreshold) -> bool {
    p.hurst() < 0.5
        && st.mode() == SojournMode::Constant
        && st.value() > 0.0
        && classify_regime(&critical_points(p), DEFAULT_BOUNDARY_TOL) == Regime::Case2
}
