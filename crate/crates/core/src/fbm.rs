//! Exact sampling of fractional Gaussian noise and fractional Brownian
//! motion on uniform grids.
//!
//! The default method is circulant embedding of the fGn autocovariance
//! (Davies and Harte): one complex FFT of length `2n` yields two independent
//! exact draws. Embeddings with a materially negative eigenvalue fall back to
//! a dense Cholesky factor; Brownian increments (`H = 1/2`) are drawn
//! directly.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{fold_chunks, Exec, Merge};
use crate::rng::{self, PathRng};
use crate::stats::Moments;

/// Relative tolerance for negative circulant eigenvalues; smaller ones are clipped.
pub const EIGEN_TOL: f64 = 1e-10;

/// Largest dimension the dense fallback will factor.
pub const MAX_CHOLESKY_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dt: f64,
    n_steps: usize,
}

impl GridSpec {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::RangeViolation(format!(
                "grid step dt = {dt} must be positive"
            )));
        }
        if n_steps == 0 {
            return Err(Error::RangeViolation("grid needs at least one step".into()));
        }
        Ok(GridSpec { dt, n_steps })
    }

    /// Grid of step `dt` covering at least `[0, horizon]`.
    pub fn covering(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::RangeViolation(format!(
                "horizon {horizon} must be positive"
            )));
        }
        Self::new(dt, ((horizon / dt) - 1e-9).ceil().max(1.0) as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbmPath {
    pub grid: GridSpec,
    pub hurst: f64,
    /// `n_steps + 1` values, `values[0] = 0`.
    pub values: Vec<f64>,
}

impl FbmPath {
    pub fn from_increments(grid: GridSpec, hurst: f64, increments: &[f64]) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for &x in increments {
            acc += x;
            values.push(acc);
        }
        FbmPath {
            grid,
            hurst,
            values,
        }
    }
}

/// Standard deviation `dt^H` of one increment; exact `sqrt` at `H = 1/2` so
/// streamed and stored Brownian paths agree bit for bit.
pub fn increment_scale(dt: f64, hurst: f64) -> f64 {
    if hurst == 0.5 {
        dt.sqrt()
    } else {
        dt.powf(hurst)
    }
}

/// `Cov(B_H(dt), B_H((k+1)dt) - B_H(k dt))`.
pub fn fgn_autocovariance(hurst: f64, k: usize, dt: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    let g = if k == 0.0 {
        1.0
    } else {
        0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).powf(h2))
    };
    g * dt.powf(h2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    /// White noise for `H = 1/2`, circulant embedding otherwise.
    Auto,
    Circulant,
    Cholesky,
}

/// Spectrum diagnostics of the circulant embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub hurst: f64,
    pub n: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub clipped: usize,
    pub used_fallback: bool,
}

#[derive(Clone)]
enum Kernel {
    White,
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    /// Row-major lower-triangular factor.
    Cholesky {
        lower: Vec<f64>,
    },
}

/// Sampler for fGn increments of a fixed `(H, grid)`, reusable across paths.
#[derive(Clone)]
pub struct FgnSampler {
    hurst: f64,
    grid: GridSpec,
    scale: f64,
    kernel: Kernel,
    spectrum: Option<SpectrumReport>,
}

impl std::fmt::Debug for FgnSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FgnSampler")
            .field("hurst", &self.hurst)
            .field("grid", &self.grid)
            .field("method", &self.method_name())
            .field("spectrum", &self.spectrum)
            .finish()
    }
}

/// Scratch buffers for one worker.
#[derive(Default)]
pub struct FgnWorkspace {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    normals: Vec<f64>,
}

impl FgnSampler {
    pub fn new(hurst: f64, grid: GridSpec) -> Result<Self> {
        Self::with_method(hurst, grid, SamplerMethod::Auto)
    }

    pub fn with_method(hurst: f64, grid: GridSpec, method: SamplerMethod) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::RangeViolation(format!(
                "H = {hurst} must lie in (0, 1)"
            )));
        }
        let n = grid.n_steps();
        let scale = increment_scale(grid.dt(), hurst);
        let base = FgnSampler {
            hurst,
            grid,
            scale,
            kernel: Kernel::White,
            spectrum: None,
        };
        match method {
            SamplerMethod::Auto if hurst == 0.5 => Ok(base),
            SamplerMethod::Cholesky => Ok(FgnSampler {
                kernel: cholesky_kernel(hurst, n)?,
                ..base
            }),
            SamplerMethod::Auto | SamplerMethod::Circulant => {
                let (eig, mut report) = circulant_spectrum(hurst, n);
                let kernel = if report.min_eigenvalue < -EIGEN_TOL * report.max_eigenvalue {
                    log::warn!(
                        "circulant embedding for H = {hurst}, n = {n} has eigenvalue {:.3e} (max {:.3e}); using Cholesky",
                        report.min_eigenvalue,
                        report.max_eigenvalue
                    );
                    report.used_fallback = true;
                    cholesky_kernel(hurst, n)?
                } else {
                    let m = eig.len();
                    let sqrt_eig = eig
                        .iter()
                        .map(|&l| (l.max(0.0) / m as f64).sqrt())
                        .collect();
                    let fft = FftPlanner::new().plan_fft_forward(m);
                    Kernel::Circulant { sqrt_eig, fft }
                };
                log::info!(
                    "fgn spectrum H = {hurst} n = {n}: min {:.3e} max {:.3e} clipped {} fallback {}",
                    report.min_eigenvalue,
                    report.max_eigenvalue,
                    report.clipped,
                    report.used_fallback
                );
                Ok(FgnSampler {
                    kernel,
                    spectrum: Some(report),
                    ..base
                })
            }
        }
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn spectrum(&self) -> Option<SpectrumReport> {
        self.spectrum
    }

    pub fn method_name(&self) -> &'static str {
        match self.kernel {
            Kernel::White => "white",
            Kernel::Circulant { .. } => "circulant",
            Kernel::Cholesky { .. } => "cholesky",
        }
    }

    /// Number of independent paths produced by one call to [`Self::draw`].
    pub fn paths_per_draw(&self) -> usize {
        match self.kernel {
            Kernel::Circulant { .. } => 2,
            _ => 1,
        }
    }

    /// Fills `out[..paths_per_draw()]` with independent increment vectors.
    pub fn draw(&self, rng: &mut PathRng, ws: &mut FgnWorkspace, out: &mut [Vec<f64>]) {
        let n = self.grid.n_steps();
        let k = self.paths_per_draw();
        assert!(out.len() >= k, "output slots fewer than paths per draw");
        for o in out.iter_mut().take(k) {
            o.resize(n, 0.0);
        }
        match &self.kernel {
            Kernel::White => {
                for x in out[0].iter_mut() {
                    *x = self.scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Kernel::Cholesky { lower } => {
                ws.normals.resize(n, 0.0);
                for z in ws.normals.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                for (i, x) in out[0].iter_mut().enumerate() {
                    let row = &lower[i * n..i * n + i + 1];
                    let s: f64 = row.iter().zip(&ws.normals[..=i]).map(|(l, z)| l * z).sum();
                    *x = self.scale * s;
                }
            }
            Kernel::Circulant { sqrt_eig, fft } => {
                let m = sqrt_eig.len();
                ws.buf.resize(m, Complex64::new(0.0, 0.0));
                for (w, &s) in ws.buf.iter_mut().zip(sqrt_eig) {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    *w = Complex64::new(s * a, s * b);
                }
                ws.scratch
                    .resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
                fft.process_with_scratch(&mut ws.buf, &mut ws.scratch);
                let (first, rest) = out.split_at_mut(1);
                for (j, z) in ws.buf[..n].iter().enumerate() {
                    first[0][j] = self.scale * z.re;
                    rest[0][j] = self.scale * z.im;
                }
            }
        }
    }

    /// Increments of path `index` in the keyed family rooted at `seed`.
    ///
    /// Paths `2j` and `2j+1` of a circulant sampler come from the same draw.
    pub fn path_increments(&self, seed: u64, index: u64, ws: &mut FgnWorkspace) -> Vec<f64> {
        let k = self.paths_per_draw() as u64;
        let mut rng = rng::stream(seed, index / k);
        let mut out = vec![Vec::new(); k as usize];
        self.draw(&mut rng, ws, &mut out);
        out.swap_remove((index % k) as usize)
    }
}

fn circulant_spectrum(hurst: f64, n: usize) -> (Vec<f64>, SpectrumReport) {
    let m = 2 * n;
    let mut row: Vec<Complex64> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex64::new(fgn_autocovariance(hurst, lag, 1.0), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let eig: Vec<f64> = row.iter().map(|z| z.re).collect();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let report = SpectrumReport {
        hurst,
        n,
        min_eigenvalue: min,
        max_eigenvalue: max,
        clipped: eig.iter().filter(|&&l| l < 0.0).count(),
        used_fallback: false,
    };
    (eig, report)
}

fn cholesky_kernel(hurst: f64, n: usize) -> Result<Kernel> {
    if n > MAX_CHOLESKY_DIM {
        return Err(Error::EmbeddingFailure(format!(
            "dense fallback limited to {MAX_CHOLESKY_DIM} points, grid has {n}"
        )));
    }
    let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, i.abs_diff(j), 1.0));
    let chol = cov.cholesky().ok_or_else(|| {
        Error::EmbeddingFailure(format!(
            "fGn covariance for H = {hurst}, n = {n} not positive definite"
        ))
    })?;
    let l = chol.l();
    let mut lower = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            lower[i * n + j] = l[(i, j)];
        }
    }
    Ok(Kernel::Cholesky { lower })
}

/// Sample autocovariance of fGn at one lag against the exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutocovRow {
    pub lag: usize,
    pub gamma_hat: f64,
    pub gamma_theory: f64,
    /// Standard error across paths of the per-path lag products.
    pub stderr: f64,
}

struct LagSums(Vec<Moments>);

impl Merge for LagSums {
    fn merge(&mut self, o: &Self) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            a.merge(b);
        }
    }
}

/// Autocovariance at lags `0..=max_lag` from `n_paths` keyed paths; each path
/// contributes its time-averaged lag product.
pub fn autocovariance_study(
    hurst: f64,
    grid: GridSpec,
    n_paths: u64,
    seed: u64,
    max_lag: usize,
    exec: &Exec,
) -> Result<Vec<AutocovRow>> {
    let n = grid.n_steps();
    if max_lag >= n || n_paths == 0 {
        return Err(Error::RangeViolation(format!(
            "need n_paths > 0 and max_lag < {n} steps, got {n_paths} paths, lag {max_lag}"
        )));
    }
    let sampler = FgnSampler::new(hurst, grid)?;
    let per = sampler.paths_per_draw() as u64;
    let sums = fold_chunks(
        n_paths.div_ceil(per),
        exec,
        || LagSums(vec![Moments::default(); max_lag + 1]),
        || (FgnWorkspace::default(), vec![Vec::new(); per as usize]),
        |acc, (ws, bufs), unit| {
            let mut rng = rng::stream(seed, unit);
            sampler.draw(&mut rng, ws, bufs);
            for (r, x) in bufs.iter().enumerate() {
                if unit * per + r as u64 >= n_paths {
                    break;
                }
                for (k, m) in acc.0.iter_mut().enumerate() {
                    let s: f64 = x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum();
                    m.push(s / (n - k) as f64);
                }
            }
        },
    );
    Ok(sums
        .0
        .iter()
        .enumerate()
        .map(|(k, m)| AutocovRow {
            lag: k,
            gamma_hat: m.mean(),
            gamma_theory: fgn_autocovariance(hurst, k, grid.dt()),
            stderr: m.stderr(),
        })
        .collect())
}

/// One draw of fGn increments; deterministic in `(hurst, grid, seed)`.
pub fn sample_fgn(hurst: f64, grid: GridSpec, seed: u64) -> Result<Vec<f64>> {
    let sampler = FgnSampler::new(hurst, grid)?;
    Ok(sampler.path_increments(seed, 0, &mut FgnWorkspace::default()))
}

pub fn sample_fbm_path(hurst: f64, grid: GridSpec, seed: u64) -> Result<FbmPath> {
    let inc = sample_fgn(hurst, grid, seed)?;
    Ok(FbmPath::from_increments(grid, hurst, &inc))
}
