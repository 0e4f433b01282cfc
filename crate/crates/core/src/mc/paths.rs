//! One path ensemble, many estimands.
//!
//! Each path is scanned once and scored against every [`Target`]: a set of
//! lines that must all be exceeded, a subsampling stride (a coarser grid on
//! the same path), a horizon prefix and a sojourn threshold. Sharing paths
//! across targets gives common random numbers for grid refinement, horizon
//! doubling and monotonicity checks.
//!
//! Brownian paths are built in blocks of grid steps: the block endpoint is
//! drawn first and the interior is filled by a Brownian bridge from its own
//! keyed stream, so a path is a fixed function of `(seed, index)`. With an
//! abandonment bound `L`, the interior is not generated when the bridge misses
//! every undecided target except with probability below `exp(-L)`, and a path
//! is abandoned once every undecided target would need an excursion of that
//! probability. Optionally a drift `theta` is added on `[0, window]` with the
//! weight `exp(-theta X(window) + theta^2 window / 2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fold_chunks, Exec, Merge};
use crate::error::{Error, Result};
use crate::fbm::{FgnSampler, FgnWorkspace, GridSpec};
use crate::rng;
use crate::stats::Moments;

/// Grid steps per Brownian block.
const BLOCK: usize = 64;

/// Lines `c t + level` that a path must all exceed simultaneously. An empty
/// set is always exceeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSet {
    pub lines: Vec<(f64, f64)>,
}

impl LineSet {
    pub fn new(lines: Vec<(f64, f64)>) -> Self {
        LineSet { lines }
    }

    #[inline]
    pub fn exceeded(&self, t: f64, x: f64) -> bool {
        self.lines.iter().all(|&(c, l)| x > c * t + l)
    }

    /// `max_i 2 c_i (c_i t + l_i - x)` over lines with `c_i > 0`: for Brownian
    /// motion, `exp(-bound)` dominates the chance of ever exceeding the set again.
    fn escape_bound(&self, t: f64, x: f64) -> f64 {
        self.lines
            .iter()
            .filter(|&&(c, _)| c > 0.0)
            .map(|&(c, l)| 2.0 * c * (c * t + l - x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Index into [`EnsembleSpec::line_sets`].
    pub set: usize,
    /// Only grid points `k` with `k % stride == 0` count, each for `stride * dt`.
    pub stride: usize,
    /// Last grid index scanned.
    pub prefix: usize,
    /// A hit is a discretized sojourn strictly above this.
    pub threshold: f64,
}

impl Target {
    /// Smallest count whose sojourn `stride * dt * count` exceeds the threshold.
    fn needed(&self, dt: f64) -> u64 {
        let cell = self.stride as f64 * dt;
        let mut need = (self.threshold / cell).floor().max(0.0) as u64 + 1;
        while need > 1 && cell * (need - 1) as f64 > self.threshold {
            need -= 1;
        }
        while cell * need as f64 <= self.threshold {
            need += 1;
        }
        need
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub theta: f64,
    pub window_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub hurst: f64,
    pub grid: GridSpec,
    pub n_paths: u64,
    pub seed: u64,
    pub line_sets: Vec<LineSet>,
    pub targets: Vec<Target>,
    /// Per-path linear combinations of weighted target indicators, e.g. a
    /// Richardson combination of a fine and a coarse stride.
    pub combos: Vec<Vec<(usize, f64)>>,
    pub tilt: Option<Tilt>,
    /// Brownian paths only; `None` disables abandonment.
    pub abandon_log_bound: Option<f64>,
    pub exec: Exec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    /// Moments of `weight * 1(hit)`.
    pub moments: Moments,
    /// Unweighted hit count.
    pub hits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub targets: Vec<TargetSummary>,
    pub combos: Vec<Moments>,
    /// Likelihood-ratio moments; mean 1 in expectation.
    pub weights: Moments,
    /// Total grid steps scanned, a cost diagnostic.
    pub steps: u64,
}

impl Merge for EnsembleResult {
    fn merge(&mut self, o: &Self) {
        for (a, b) in self.targets.iter_mut().zip(&o.targets) {
            a.moments.merge(&b.moments);
            a.hits += b.hits;
        }
        for (a, b) in self.combos.iter_mut().zip(&o.combos) {
            a.merge(b);
        }
        self.weights.merge(&o.weights);
        self.steps += o.steps;
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Live,
    Hit,
    Dead,
}

/// Per-path scoring state.
struct Scorer<'a> {
    spec: &'a EnsembleSpec,
    need: Vec<u64>,
    count: Vec<u64>,
    status: Vec<Status>,
    above: Vec<bool>,
    live: usize,
}

impl<'a> Scorer<'a> {
    fn new(spec: &'a EnsembleSpec) -> Self {
        let dt = spec.grid.dt();
        let need = spec.targets.iter().map(|t| t.needed(dt)).collect();
        let n = spec.targets.len();
        Scorer {
            spec,
            need,
            count: vec![0; n],
            status: vec![Status::Live; n],
            above: vec![false; spec.line_sets.len()],
            live: n,
        }
    }

    fn reset(&mut self) {
        self.count.iter_mut().for_each(|c| *c = 0);
        self.status.iter_mut().for_each(|s| *s = Status::Live);
        self.live = self.status.len();
        for j in 0..self.status.len() {
            self.kill_if_hopeless(j, 0);
        }
    }

    fn finish(&mut self, j: usize, s: Status) {
        if self.status[j] == Status::Live {
            self.status[j] = s;
            self.live -= 1;
        }
    }

    fn kill_if_hopeless(&mut self, j: usize, k: usize) {
        let t = &self.spec.targets[j];
        let remaining = if k >= t.prefix {
            0
        } else {
            (t.prefix / t.stride - k / t.stride) as u64
        };
        if self.count[j] + remaining < self.need[j] {
            self.finish(j, Status::Dead);
        }
    }

    /// Scores grid point `k >= 1` with path value `x`.
    #[inline]
    fn observe(&mut self, k: usize, x: f64) {
        let t = self.spec.grid.time(k);
        for (s, set) in self.spec.line_sets.iter().enumerate() {
            self.above[s] = set.exceeded(t, x);
        }
        for j in 0..self.status.len() {
            if self.status[j] != Status::Live {
                continue;
            }
            let tg = &self.spec.targets[j];
            if k.is_multiple_of(tg.stride) && self.above[tg.set] {
                self.count[j] += 1;
                if self.count[j] >= self.need[j] {
                    self.finish(j, Status::Hit);
                    continue;
                }
            }
            if k >= tg.prefix {
                self.finish(j, Status::Dead);
            }
        }
    }

    fn try_abandon(&mut self, k: usize, x: f64, bound: f64) {
        let t = self.spec.grid.time(k);
        for j in 0..self.status.len() {
            if self.status[j] != Status::Live {
                continue;
            }
            let set = &self.spec.line_sets[self.spec.targets[j].set];
            if set.escape_bound(t, x) >= bound {
                self.finish(j, Status::Dead);
            } else {
                self.kill_if_hopeless(j, k);
            }
        }
    }

    /// True when, for every live target, some line of its set is missed by
    /// the Brownian bridge from `(k0, x0)` to `(k1, x1)` except with
    /// probability below `exp(-bound)`.
    fn bridge_clear(&self, k0: usize, x0: f64, k1: usize, x1: f64, bound: f64) -> bool {
        let (t0, t1) = (self.spec.grid.time(k0), self.spec.grid.time(k1));
        let span = t1 - t0;
        (0..self.status.len())
            .filter(|&j| self.status[j] == Status::Live)
            .all(|j| {
                let set = &self.spec.line_sets[self.spec.targets[j].set];
                set.lines.iter().any(|&(c, l)| {
                    let g0 = c * t0 + l - x0;
                    let g1 = c * t1 + l - x1;
                    g0 > 0.0 && g1 > 0.0 && 2.0 * g0 * g1 / span >= bound
                })
            })
    }

    /// Closes live targets whose prefix ends strictly before `k`.
    fn expire_before(&mut self, k: usize) {
        for j in 0..self.status.len() {
            if self.status[j] == Status::Live && self.spec.targets[j].prefix < k {
                self.finish(j, Status::Dead);
            }
        }
    }

    fn record(&self, acc: &mut EnsembleResult, log_weight: f64) {
        let w = log_weight.exp();
        acc.weights.push(w);
        for (j, s) in self.status.iter().enumerate() {
            let hit = *s == Status::Hit;
            acc.targets[j].moments.push(if hit { w } else { 0.0 });
            acc.targets[j].hits += hit as u64;
        }
        for (c, combo) in self.spec.combos.iter().enumerate() {
            let v: f64 = combo
                .iter()
                .filter(|(j, _)| self.status[*j] == Status::Hit)
                .map(|(_, a)| a * w)
                .sum();
            acc.combos[c].push(v);
        }
    }
}

fn validate(spec: &EnsembleSpec) -> Result<()> {
    if spec.n_paths == 0 {
        return Err(Error::RangeViolation("n_paths must be positive".into()));
    }
    if spec.targets.is_empty() {
        return Err(Error::Config("ensemble has no targets".into()));
    }
    for t in &spec.targets {
        if t.set >= spec.line_sets.len() {
            return Err(Error::Config(format!(
                "target refers to missing line set {}",
                t.set
            )));
        }
        if t.stride == 0 || t.prefix == 0 || t.prefix > spec.grid.n_steps() {
            return Err(Error::Config(format!(
                "target stride {} / prefix {} invalid for a {}-step grid",
                t.stride,
                t.prefix,
                spec.grid.n_steps()
            )));
        }
        if !(t.threshold >= 0.0) {
            return Err(Error::RangeViolation(format!(
                "sojourn threshold {} must be >= 0",
                t.threshold
            )));
        }
    }
    for combo in &spec.combos {
        if combo.iter().any(|&(j, _)| j >= spec.targets.len()) {
            return Err(Error::Config(
                "combination refers to a missing target".into(),
            ));
        }
    }
    if let Some(tilt) = spec.tilt {
        if spec.hurst != 0.5 {
            return Err(Error::RegimeError(format!(
                "drift tilting needs Brownian paths (H = 1/2), got H = {}",
                spec.hurst
            )));
        }
        if !tilt.theta.is_finite() || tilt.window_steps > spec.grid.n_steps() {
            return Err(Error::Config(format!(
                "tilt {tilt:?} invalid for this grid"
            )));
        }
    }
    Ok(())
}

fn empty_result(spec: &EnsembleSpec) -> EnsembleResult {
    EnsembleResult {
        targets: vec![TargetSummary::default(); spec.targets.len()],
        combos: vec![Moments::default(); spec.combos.len()],
        ..Default::default()
    }
}

pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    validate(spec)?;
    let last = spec.targets.iter().map(|t| t.prefix).max().unwrap_or(0);
    if spec.hurst == 0.5 {
        Ok(run_brownian(spec, last))
    } else {
        run_fgn(spec, last)
    }
}

fn run_brownian(spec: &EnsembleSpec, last: usize) -> EnsembleResult {
    let dt = spec.grid.dt();
    let (theta, window) = spec
        .tilt
        .map(|t| (t.theta, t.window_steps))
        .unwrap_or((0.0, 0));
    let bound = spec.abandon_log_bound;
    // Bridge coefficients by remaining step count r: mean fraction 1/r and
    // conditional standard deviation of one step.
    let frac: Vec<f64> = (0..=BLOCK)
        .map(|r| if r == 0 { 0.0 } else { 1.0 / r as f64 })
        .collect();
    let sd: Vec<f64> = (0..=BLOCK)
        .map(|r| {
            if r == 0 {
                0.0
            } else {
                (dt * (r - 1) as f64 / r as f64).sqrt()
            }
        })
        .collect();
    let block_end = |k0: usize, stop: usize| {
        let mut k1 = (k0 + BLOCK).min(stop);
        if k0 < window {
            k1 = k1.min(window);
        }
        k1
    };
    fold_chunks(
        spec.n_paths,
        &spec.exec,
        || empty_result(spec),
        || Scorer::new(spec),
        |acc, sc, i| {
            let key = rng::stream_key(spec.seed, i);
            let mut ends = rng::stream(key, u64::MAX);
            sc.reset();
            let mut x = 0.0f64;
            let mut log_w = 0.0;
            let mut k = 0;
            let mut scanned = 0u64;
            let tilt_weight = |x: f64| -theta * x + 0.5 * theta * theta * spec.grid.time(window);
            while k < last && sc.live > 0 {
                let k1 = block_end(k, last);
                let len = k1 - k;
                let drift = if k < window {
                    theta * dt * len as f64
                } else {
                    0.0
                };
                let z: f64 = ends.sample(StandardNormal);
                let x1 = x + (dt * len as f64).sqrt() * z + drift;
                let skip = match bound {
                    Some(b) if len > 1 => sc.bridge_clear(k, x, k1, x1, b),
                    _ => false,
                };
                if skip {
                    sc.expire_before(k1);
                } else if len > 1 {
                    let mut fill = rng::stream(key, k as u64);
                    let mut y = x;
                    for j in 1..len {
                        let r = len - j + 1;
                        let z: f64 = fill.sample(StandardNormal);
                        y += (x1 - y) * frac[r] + sd[r] * z;
                        sc.observe(k + j, y);
                        if sc.live == 0 {
                            break;
                        }
                    }
                    scanned += len as u64;
                }
                k = k1;
                x = x1;
                if sc.live > 0 {
                    sc.observe(k, x);
                }
                if k == window {
                    log_w = tilt_weight(x);
                }
                if let Some(b) = bound {
                    if k >= window && sc.live > 0 {
                        sc.try_abandon(k, x, b);
                    }
                }
            }
            // Finished early: the weight only needs the tilted endpoint.
            while k < window {
                let k1 = block_end(k, window);
                let len = (k1 - k) as f64;
                let z: f64 = ends.sample(StandardNormal);
                x += (dt * len).sqrt() * z + theta * dt * len;
                k = k1;
                if k == window {
                    log_w = tilt_weight(x);
                }
            }
            acc.steps += scanned;
            sc.record(acc, log_w);
        },
    )
}

fn run_fgn(spec: &EnsembleSpec, last: usize) -> Result<EnsembleResult> {
    let sampler = FgnSampler::new(spec.hurst, spec.grid)?;
    let per = sampler.paths_per_draw() as u64;
    let units = spec.n_paths.div_ceil(per);
    Ok(fold_chunks(
        units,
        &spec.exec,
        || empty_result(spec),
        || {
            (
                Scorer::new(spec),
                FgnWorkspace::default(),
                vec![Vec::new(); per as usize],
            )
        },
        |acc, (sc, ws, bufs), unit| {
            let mut rng = rng::stream(spec.seed, unit);
            sampler.draw(&mut rng, ws, bufs);
            for (r, inc) in bufs.iter().enumerate() {
                if unit * per + r as u64 >= spec.n_paths {
                    break;
                }
                sc.reset();
                let mut x = 0.0;
                let mut k = 0;
                while k < last && sc.live > 0 {
                    x += inc[k];
                    k += 1;
                    sc.observe(k, x);
                }
                acc.steps += k as u64;
                sc.record(acc, 0.0);
            }
        },
    ))
}
