//! Berman and sojourn Piterbarg constants.
//!
//! Both are exceedance integrals: with `V` the `m`-th largest value of a
//! discretized process (so that `V > level` iff the sojourn above `level`
//! exceeds the threshold), the constant is `E e^V` up to normalization. The
//! mass of `E e^V` sits on events of exponentially small probability, so the
//! default estimator samples from the mixture `Q = sum_k pi_k Q_k` where
//! `Q_k` tilts the path by `exp(X(s_k))`. The likelihood ratio is
//! `Z / sum_j e^{X_j}` and the per-path value `e^V Z / sum_j e^{X_j}` is
//! bounded, so a few thousand paths suffice.
//!
//! The plain estimator, Gauss-Legendre quadrature over the level of untilted
//! empirical exceedance probabilities, is kept as a cross-check for short
//! spans where it is still feasible.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fold_chunks, Exec, Merge};
use crate::analytic::log_normal_survival;
use crate::error::{Error, Result};
use crate::fbm::{increment_scale, FgnSampler, FgnWorkspace, GridSpec};
use crate::model::DerivedConstants;
use crate::rng;
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstantKind {
    Berman {
        hurst: f64,
        x: f64,
    },
    PiterbargSojourn {
        slope_neg: f64,
        slope_pos: f64,
        k: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub kind: ConstantKind,
    pub value: f64,
    /// Monte Carlo standard error.
    pub stderr: f64,
    /// Half-length of the simulated window (`[0, S]` or `[-S, S]`).
    pub span: f64,
    /// Level range integrated exactly; infinite ends mean no truncation there.
    pub level_range: (f64, f64),
    /// Additive bound on the mass outside the level range and, for the
    /// Piterbarg constant, outside `[-S, S]`.
    pub truncation_bound: f64,
    pub grid: GridSpec,
    pub n_paths: u64,
    pub seed: u64,
    pub method: String,
}

impl ConstantEstimate {
    /// `stderr + truncation_bound`.
    pub fn error_budget(&self) -> f64 {
        self.stderr + self.truncation_bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BermanMethod {
    Mixture,
    /// Composite Gauss-Legendre with `panels` panels of 16 nodes.
    Direct {
        panels: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BermanSettings {
    pub hurst: f64,
    pub span: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub z_lo: f64,
    pub z_hi: f64,
    pub method: BermanMethod,
    pub exec: Exec,
}

impl BermanSettings {
    pub fn new(hurst: f64, span: f64, dt: f64, n_paths: u64, seed: u64) -> Self {
        BermanSettings {
            hurst,
            span,
            dt,
            n_paths,
            seed,
            z_lo: f64::NEG_INFINITY,
            z_hi: f64::INFINITY,
            method: BermanMethod::Mixture,
            exec: Exec::default(),
        }
    }

    /// Untilted quadrature over a finite level range wide enough that the
    /// reported truncation bound is negligible.
    pub fn direct(mut self, panels: usize) -> Self {
        let v = self.span.powf(2.0 * self.hurst);
        self.z_lo = -(v + 8.0 * (2.0 * v).sqrt()) - 10.0;
        self.z_hi = 40.0;
        self.method = BermanMethod::Direct { panels };
        self
    }
}

/// Estimator sums: one moment set per threshold.
#[derive(Default)]
struct Sums(Vec<Moments>);

impl Merge for Sums {
    fn merge(&mut self, o: &Self) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            a.merge(b);
        }
    }
}

/// Smallest count `m` with `dt * m > x`.
fn needed(x: f64, dt: f64) -> usize {
    let mut m = (x / dt).floor().max(0.0) as usize + 1;
    while m > 1 && dt * (m - 1) as f64 > x {
        m -= 1;
    }
    while dt * m as f64 <= x {
        m += 1;
    }
    m
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&y| (y - max).exp()).sum::<f64>().ln()
}

/// For ascending `ms`, writes the `m`-th largest entry of `v` into `out`,
/// reordering `v`.
fn order_statistics(v: &mut [f64], ms: &[usize], out: &mut Vec<f64>) {
    out.clear();
    let mut start = 0;
    for &m in ms {
        if m > v.len() {
            out.push(f64::NEG_INFINITY);
            continue;
        }
        let idx = m - 1;
        if idx >= start {
            let (_, nth, _) = v[start..].select_nth_unstable_by(idx - start, |a, b| b.total_cmp(a));
            out.push(*nth);
            start = idx + 1;
        } else {
            out.push(v[idx]);
        }
    }
}

/// `ln` of `e^{min(a, hi)} - e^{lo}` for `a > lo`, `-inf` otherwise.
fn log_window(a: f64, lo: f64, hi: f64) -> f64 {
    let top = a.min(hi);
    if !(top > lo) {
        return f64::NEG_INFINITY;
    }
    if lo == f64::NEG_INFINITY {
        top
    } else {
        top + (-(lo - top).exp()).ln_1p()
    }
}

/// `(1/S) sum_k int_{-inf}^{z_lo} P(Y_k > -z) e^{-z} dz` with `Y_k ~ N(-v_k, 2 v_k)`:
/// a union bound on the Berman integrand below `z_lo`.
pub fn berman_lower_tail_bound(hurst: f64, dt: f64, n: usize, z_lo: f64) -> f64 {
    if z_lo == f64::NEG_INFINITY {
        return 0.0;
    }
    let a = -z_lo;
    let mut total = 0.0;
    for k in 1..=n {
        let v = (k as f64 * dt).powf(2.0 * hurst);
        let s = (2.0 * v).sqrt();
        let first = log_normal_survival((a - v) / s).exp();
        let second = (a + log_normal_survival((a + v) / s)).exp();
        total += (first - second).max(0.0);
    }
    total / (n as f64 * dt)
}

fn check_berman(s: &BermanSettings, xs: &[f64]) -> Result<usize> {
    if !(s.hurst > 0.0 && s.hurst < 1.0) {
        return Err(Error::RangeViolation(format!(
            "H = {} must lie in (0, 1)",
            s.hurst
        )));
    }
    if !(s.dt > 0.0) || !(s.span > 0.0) || s.n_paths == 0 {
        return Err(Error::RangeViolation(
            "span, dt and n_paths must be positive".into(),
        ));
    }
    if !(s.z_lo < s.z_hi) {
        return Err(Error::RangeViolation(format!(
            "need z_lo < z_hi, got [{}, {}]",
            s.z_lo, s.z_hi
        )));
    }
    for &x in xs {
        if !(x >= 0.0) {
            return Err(Error::RangeViolation(format!(
                "sojourn threshold x = {x} must be >= 0"
            )));
        }
        if s.span <= x {
            return Err(Error::SpanTooSmall { span: s.span, x });
        }
    }
    if let BermanMethod::Direct { panels } = s.method {
        if panels == 0 || !s.z_lo.is_finite() || !s.z_hi.is_finite() {
            return Err(Error::Config(
                "direct quadrature needs panels > 0 and a finite level range".into(),
            ));
        }
    }
    Ok(((s.span / s.dt).round() as usize).max(1))
}

/// Berman constants `B_2H(x)` for several thresholds on one path ensemble.
pub fn estimate_berman_constants(s: &BermanSettings, xs: &[f64]) -> Result<Vec<ConstantEstimate>> {
    let n = check_berman(s, xs)?;
    let grid = GridSpec::new(s.dt, n)?;
    let span = grid.horizon();
    let dt = s.dt;
    let h = s.hurst;

    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let ms: Vec<usize> = order.iter().map(|&i| needed(xs[i], dt)).collect();

    // v[j] = (j dt)^{2H}
    let v: Vec<f64> = (0..=n).map(|j| (j as f64 * dt).powf(2.0 * h)).collect();

    let nodes: Vec<(f64, f64)> = match s.method {
        BermanMethod::Mixture => Vec::new(),
        BermanMethod::Direct { panels } => {
            let rule = GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero"));
            let width = (s.z_hi - s.z_lo) / panels as f64;
            let mut out = Vec::with_capacity(16 * panels);
            for p in 0..panels {
                let a = s.z_lo + p as f64 * width;
                for &(x, w) in rule.as_node_weight_pairs() {
                    let z = a + 0.5 * width * (x + 1.0);
                    out.push((z, 0.5 * width * w * (-z).exp() / span));
                }
            }
            out
        }
    };

    let sampler = if h == 0.5 {
        None
    } else {
        Some(FgnSampler::new(h, grid)?)
    };
    let per = sampler.as_ref().map(|s| s.paths_per_draw()).unwrap_or(1) as u64;
    let units = s.n_paths.div_ceil(per);
    let scale = increment_scale(dt, h);
    let sqrt2 = std::f64::consts::SQRT_2;

    let sums = fold_chunks(
        units,
        &s.exec,
        || Sums(vec![Moments::default(); xs.len()]),
        || {
            (
                FgnWorkspace::default(),
                vec![Vec::new(); per as usize],
                vec![0.0; n],
                Vec::new(),
            )
        },
        |acc, (ws, bufs, y, stats), unit| {
            let mut rng = rng::stream(s.seed, unit);
            let taus: Vec<usize> = (0..per).map(|_| rng.random_range(1..=n)).collect();
            match &sampler {
                Some(smp) => smp.draw(&mut rng, ws, bufs),
                None => {
                    bufs[0].resize(n, 0.0);
                    for b in bufs[0].iter_mut() {
                        *b = scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            for (r, inc) in bufs.iter().enumerate() {
                if unit * per + r as u64 >= s.n_paths {
                    break;
                }
                let mut b = 0.0;
                match s.method {
                    BermanMethod::Mixture => {
                        let tau = taus[r];
                        for k in 1..=n {
                            b += inc[k - 1];
                            y[k - 1] = sqrt2 * b + v[tau] - v[k.abs_diff(tau)];
                        }
                        let lse = log_sum_exp(y);
                        order_statistics(y, &ms, stats);
                        for (slot, &ym) in order.iter().zip(stats.iter()) {
                            // F = int 1(z > -Y_(m)) e^{-z} over [z_lo, z_hi]
                            let lf = log_window(ym, -s.z_hi, -s.z_lo);
                            acc.0[*slot].push((lf - lse - dt.ln()).exp());
                        }
                    }
                    BermanMethod::Direct { .. } => {
                        for k in 1..=n {
                            b += inc[k - 1];
                            y[k - 1] = sqrt2 * b - v[k];
                        }
                        order_statistics(y, &ms, stats);
                        for (slot, &ym) in order.iter().zip(stats.iter()) {
                            let val: f64 =
                                nodes.iter().filter(|(z, _)| *z > -ym).map(|(_, w)| w).sum();
                            acc.0[*slot].push(val);
                        }
                    }
                }
            }
        },
    );

    let tail = berman_lower_tail_bound(h, dt, n, s.z_lo)
        + if s.z_hi.is_finite() {
            (-s.z_hi).exp() / span
        } else {
            0.0
        };
    let method = match s.method {
        BermanMethod::Mixture => "mixture".to_string(),
        BermanMethod::Direct { panels } => format!("gauss_legendre_{}", 16 * panels),
    };
    Ok(xs
        .iter()
        .zip(&sums.0)
        .map(|(&x, m)| ConstantEstimate {
            kind: ConstantKind::Berman { hurst: h, x },
            value: m.mean(),
            stderr: m.stderr(),
            span,
            level_range: (s.z_lo, s.z_hi),
            truncation_bound: tail,
            grid,
            n_paths: s.n_paths,
            seed: s.seed,
            method: method.clone(),
        })
        .collect())
}

pub fn estimate_berman_constant(s: &BermanSettings, x: f64) -> Result<ConstantEstimate> {
    Ok(estimate_berman_constants(s, &[x])?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiterbargSettings {
    pub span: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub exec: Exec,
}

impl PiterbargSettings {
    pub fn new(span: f64, dt: f64, n_paths: u64, seed: u64) -> Self {
        PiterbargSettings {
            span,
            dt,
            n_paths,
            seed,
            x_lo: f64::NEG_INFINITY,
            x_hi: f64::INFINITY,
            exec: Exec::default(),
        }
    }
}

/// Decay rates `(mu_neg, mu_pos)` of `sqrt(2) B(s) - |s| + d(s)` on each side.
///
/// The exceedance integral is finite iff both exceed 1; the two-line regime
/// additionally bounds both slopes by 1 in absolute value.
pub fn piterbarg_integrability(dc: &DerivedConstants) -> Result<(f64, f64)> {
    let (neg, pos) = (dc.drift_slope_neg, dc.drift_slope_pos);
    if !(neg > 0.0 && neg < 1.0 && pos < 0.0 && pos > -1.0) {
        return Err(Error::NonIntegrable(format!(
            "drift slopes ({neg}, {pos}) must satisfy 0 < slope_neg < 1 and -1 < slope_pos < 0"
        )));
    }
    Ok((1.0 + neg, 1.0 - pos))
}

/// Sojourn Piterbarg constants `B^d_K` for several `K` on one ensemble of
/// two-sided Brownian paths on `[-S, S)`.
pub fn estimate_piterbarg_sojourns(
    dc: &DerivedConstants,
    ks: &[f64],
    s: &PiterbargSettings,
) -> Result<Vec<ConstantEstimate>> {
    let (mu_neg, mu_pos) = piterbarg_integrability(dc)?;
    if !(s.dt > 0.0) || !(s.span > 0.0) || s.n_paths == 0 {
        return Err(Error::RangeViolation(
            "span, dt and n_paths must be positive".into(),
        ));
    }
    if !(s.x_lo < s.x_hi) {
        return Err(Error::RangeViolation(format!(
            "need x_lo < x_hi, got [{}, {}]",
            s.x_lo, s.x_hi
        )));
    }
    if ks.iter().any(|&k| !(k >= 0.0)) {
        return Err(Error::RangeViolation(
            "sojourn thresholds K must be >= 0".into(),
        ));
    }
    let half = ((s.span / s.dt).round() as usize).max(1);
    let dt = s.dt;
    let span = half as f64 * dt;
    let npts = 2 * half;
    let grid = GridSpec::new(dt, npts)?;
    let sj: Vec<f64> = (0..npts).map(|j| (j as f64 - half as f64) * dt).collect();
    let d: Vec<f64> = sj
        .iter()
        .map(|&x| {
            if x < 0.0 {
                dc.drift_slope_neg * x
            } else {
                dc.drift_slope_pos * x
            }
        })
        .collect();
    let log_z = log_sum_exp(&d);
    let mut cdf: Vec<f64> = Vec::with_capacity(npts);
    let mut run = 0.0;
    for &dj in &d {
        run += (dj - log_z).exp();
        cdf.push(run);
    }

    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|&a, &b| ks[a].total_cmp(&ks[b]));
    let ms: Vec<usize> = order.iter().map(|&i| needed(ks[i], dt)).collect();
    let scale = increment_scale(dt, 0.5);
    let sqrt2 = std::f64::consts::SQRT_2;

    let sums = fold_chunks(
        s.n_paths,
        &s.exec,
        || Sums(vec![Moments::default(); ks.len()]),
        || (vec![0.0; npts], Vec::new()),
        |acc, (x, stats), i| {
            let mut rng = rng::stream(s.seed, i);
            let r: f64 = rng.random::<f64>() * run;
            let k = cdf.partition_point(|&c| c < r).min(npts - 1);
            let sk = sj[k];
            let mut b = 0.0;
            x[half] = d[half];
            for j in half + 1..npts {
                b += scale * rng.sample::<f64, _>(StandardNormal);
                let shift = if sk > 0.0 { 2.0 * sj[j].min(sk) } else { 0.0 };
                x[j] = sqrt2 * b - sj[j] + d[j] + shift;
            }
            b = 0.0;
            for j in (0..half).rev() {
                b += scale * rng.sample::<f64, _>(StandardNormal);
                let shift = if sk < 0.0 {
                    2.0 * (-sj[j]).min(-sk)
                } else {
                    0.0
                };
                x[j] = sqrt2 * b + sj[j] + d[j] + shift;
            }
            let lse = log_sum_exp(x);
            order_statistics(x, &ms, stats);
            for (slot, &xm) in order.iter().zip(stats.iter()) {
                let lf = log_window(xm, s.x_lo, s.x_hi);
                acc.0[*slot].push((lf + log_z - lse).exp());
            }
        },
    );

    let side = |mu: f64| {
        let out_of_window = mu / (mu - 1.0) * (-(mu - 1.0) * span).exp();
        let above = if s.x_hi.is_finite() {
            (-(mu - 1.0) * s.x_hi).exp() / (mu - 1.0)
        } else {
            0.0
        };
        out_of_window + above
    };
    let below = if s.x_lo.is_finite() {
        s.x_lo.exp()
    } else {
        0.0
    };
    let tail = side(mu_neg) + side(mu_pos) + below;
    Ok(ks
        .iter()
        .zip(&sums.0)
        .map(|(&k, m)| ConstantEstimate {
            kind: ConstantKind::PiterbargSojourn {
                slope_neg: dc.drift_slope_neg,
                slope_pos: dc.drift_slope_pos,
                k,
            },
            value: m.mean(),
            stderr: m.stderr(),
            span,
            level_range: (s.x_lo, s.x_hi),
            truncation_bound: tail,
            grid,
            n_paths: s.n_paths,
            seed: s.seed,
            method: "mixture".to_string(),
        })
        .collect())
}

pub fn estimate_piterbarg_sojourn(
    dc: &DerivedConstants,
    k: f64,
    s: &PiterbargSettings,
) -> Result<ConstantEstimate> {
    Ok(estimate_piterbarg_sojourns(dc, &[k], s)?.remove(0))
}
