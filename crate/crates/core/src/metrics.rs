//! Reference full-reference metrics on spectrograms: MSE, SSIM, MS-SSIM and NSIM.
//!
//! Local statistics use an 11x11 Gaussian window (std 1.5) over valid
//! positions only. The dynamic range `L` is taken per pair as the spread of
//! both inputs unless overridden, since dB spectrograms have no fixed range.

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::spectrogram::MelSpectrogram;

/// Published per-scale exponents. They sum to 1.0001, so the default config
/// stores them divided by that sum.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn normalized_default_weights() -> Vec<f64> {
    let total: f64 = MS_SSIM_WEIGHTS.iter().sum();
    MS_SSIM_WEIGHTS.iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Fixed dynamic range; `None` computes it per pair.
    pub dynamic_range: Option<f64>,
    pub msssim_weights: Vec<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
            msssim_weights: normalized_default_weights(),
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.msssim_weights.iter().sum();
        if self.msssim_weights.is_empty() || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("MS-SSIM weights sum to {sum}, not 1")));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidConfig("k1 and k2 must be positive".into()));
        }
        if self.window_size % 2 == 0 || self.window_size == 0 {
            return Err(Error::InvalidConfig("window size must be odd".into()));
        }
        if let Some(l) = self.dynamic_range {
            if !(l > 0.0) {
                return Err(Error::InvalidConfig("dynamic range must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn gaussian_taps(&self) -> Vec<f64> {
        let half = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "win={} sigma={} k1={} k2={} L={}",
            self.window_size,
            self.window_sigma,
            self.k1,
            self.k2,
            self.dynamic_range
                .map_or_else(|| "per-pair".to_string(), |l| l.to_string())
        )
    }
}

/// Range of values across both inputs; 1 when both are the same constant.
pub fn pair_dynamic_range(a: &Matrix, b: &Matrix) -> f64 {
    let (lo, hi) = a
        .as_slice()
        .iter()
        .chain(b.as_slice())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        range
    } else {
        1.0
    }
}

pub fn mse_matrix(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let total: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / a.len() as f64)
}

pub fn mse(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    mse_matrix(&a.values, &b.values)
}

/// Gaussian-weighted local statistics over valid window positions.
struct LocalStats {
    mu_a: Matrix,
    mu_b: Matrix,
    var_a: Matrix,
    var_b: Matrix,
    cov: Matrix,
}

impl LocalStats {
    fn compute(a: &Matrix, b: &Matrix, taps: &[f64]) -> Self {
        let mu_a = matrix::separable_valid(a, taps);
        let mu_b = matrix::separable_valid(b, taps);
        let e_aa = matrix::separable_valid(&a.zip_map(a, |x, y| x * y), taps);
        let e_bb = matrix::separable_valid(&b.zip_map(b, |x, y| x * y), taps);
        let e_ab = matrix::separable_valid(&a.zip_map(b, |x, y| x * y), taps);
        let var_a = e_aa.zip_map(&mu_a, |e, m| e - m * m);
        let var_b = e_bb.zip_map(&mu_b, |e, m| e - m * m);
        let cov = {
            let mm = mu_a.zip_map(&mu_b, |x, y| x * y);
            e_ab.zip_map(&mm, |e, m| e - m)
        };
        LocalStats {
            mu_a,
            mu_b,
            var_a,
            var_b,
            cov,
        }
    }

    fn luminance(&self, c1: f64) -> Matrix {
        self.mu_a
            .zip_map(&self.mu_b, |x, y| (2.0 * x * y + c1) / (x * x + y * y + c1))
    }

    fn contrast_structure(&self, c2: f64) -> Matrix {
        let denom = self.var_a.zip_map(&self.var_b, |x, y| x + y + c2);
        self.cov.zip_map(&denom, |c, d| (2.0 * c + c2) / d)
    }

    /// Structure term alone, `(σ_ab + C3) / (σ_a σ_b + C3)` with `C3 = C2 / 2`.
    fn structure(&self, c3: f64) -> Matrix {
        let sd = self
            .var_a
            .zip_map(&self.var_b, |x, y| x.max(0.0).sqrt() * y.max(0.0).sqrt());
        self.cov.zip_map(&sd, |c, s| (c + c3) / (s + c3))
    }
}

fn check_window(a: &Matrix, b: &Matrix, cfg: &SsimConfig) -> Result<()> {
    cfg.validate()?;
    a.ensure_same_shape(b)?;
    if a.rows() < cfg.window_size || a.cols() < cfg.window_size {
        return Err(Error::InvalidConfig(format!(
            "input {:?} is smaller than the {}x{} window",
            a.shape(),
            cfg.window_size,
            cfg.window_size
        )));
    }
    Ok(())
}

fn stabilizers(a: &Matrix, b: &Matrix, cfg: &SsimConfig) -> (f64, f64) {
    let l = cfg.dynamic_range.unwrap_or_else(|| pair_dynamic_range(a, b));
    ((cfg.k1 * l).powi(2), (cfg.k2 * l).powi(2))
}

/// Mean SSIM index and mean contrast-structure term at one scale.
fn ssim_and_cs(a: &Matrix, b: &Matrix, taps: &[f64], c1: f64, c2: f64) -> (f64, f64) {
    let stats = LocalStats::compute(a, b, taps);
    let cs = stats.contrast_structure(c2);
    let ssim = stats.luminance(c1).zip_map(&cs, |l, s| l * s);
    (ssim.mean(), cs.mean())
}

pub fn ssim_matrix(a: &Matrix, b: &Matrix, cfg: &SsimConfig) -> Result<f64> {
    check_window(a, b, cfg)?;
    let (c1, c2) = stabilizers(a, b, cfg);
    Ok(ssim_and_cs(a, b, &cfg.gaussian_taps(), c1, c2).0)
}

pub fn ssim(a: &MelSpectrogram, b: &MelSpectrogram, cfg: &SsimConfig) -> Result<f64> {
    ssim_matrix(&a.values, &b.values, cfg)
}

/// 2x2 mean pooling; a trailing odd row or column is dropped.
pub fn mean_pool2(x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows() / 2, x.cols() / 2, |r, c| {
        0.25 * (x.get(2 * r, 2 * c)
            + x.get(2 * r + 1, 2 * c)
            + x.get(2 * r, 2 * c + 1)
            + x.get(2 * r + 1, 2 * c + 1))
    })
}

/// Number of scales that fit: the largest `s <= max_scales` with
/// `min(rows, cols) >= window · 2^(s-1)`.
pub fn ms_ssim_scale_count(shape: (usize, usize), window: usize, max_scales: usize) -> usize {
    let min_dim = shape.0.min(shape.1);
    (1..=max_scales)
        .take_while(|&s| min_dim >= window << (s - 1))
        .last()
        .unwrap_or(0)
}

/// Weights actually used for `scales` levels, renormalised to sum to one.
pub fn ms_ssim_weights(cfg: &SsimConfig, scales: usize) -> Vec<f64> {
    let used = &cfg.msssim_weights[..scales];
    let total: f64 = used.iter().sum();
    used.iter().map(|w| w / total).collect()
}

/// Multi-scale SSIM. Contrast-structure terms enter at every scale, the
/// luminance term only at the coarsest; negative terms are clipped at zero
/// before the fractional powers.
pub fn ms_ssim_matrix(a: &Matrix, b: &Matrix, cfg: &SsimConfig) -> Result<f64> {
    check_window(a, b, cfg)?;
    let scales = ms_ssim_scale_count(a.shape(), cfg.window_size, cfg.msssim_weights.len());
    let weights = ms_ssim_weights(cfg, scales);
    let (c1, c2) = stabilizers(a, b, cfg);
    let taps = cfg.gaussian_taps();
    let mut value = 1.0;
    let (mut xa, mut xb) = (a.clone(), b.clone());
    for (s, &w) in weights.iter().enumerate() {
        let (ssim_val, cs) = ssim_and_cs(&xa, &xb, &taps, c1, c2);
        let term = if s + 1 == scales { ssim_val } else { cs };
        value *= term.max(0.0).powf(w);
        if s + 1 < scales {
            xa = mean_pool2(&xa);
            xb = mean_pool2(&xb);
        }
    }
    Ok(value)
}

pub fn ms_ssim(a: &MelSpectrogram, b: &MelSpectrogram, cfg: &SsimConfig) -> Result<f64> {
    ms_ssim_matrix(&a.values, &b.values, cfg)
}

/// Mean over windows of luminance times structure (no contrast term).
pub fn nsim_matrix(a: &Matrix, b: &Matrix, cfg: &SsimConfig) -> Result<f64> {
    check_window(a, b, cfg)?;
    let (c1, c2) = stabilizers(a, b, cfg);
    let stats = LocalStats::compute(a, b, &cfg.gaussian_taps());
    let map = stats
        .luminance(c1)
        .zip_map(&stats.structure(c2 / 2.0), |l, s| l * s);
    Ok(map.mean())
}

pub fn nsim(a: &MelSpectrogram, b: &MelSpectrogram, cfg: &SsimConfig) -> Result<f64> {
    nsim_matrix(&a.values, &b.values, cfg)
}
