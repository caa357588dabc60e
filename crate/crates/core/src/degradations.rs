//! Synthetic versions of the four degradation types: waveshape distortion,
//! low-pass filtering, limiting and additive noise.
//!
//! Severity is a single intensity in `[0, 1]`; intensity 0 leaves the clip
//! untouched (noise excepted, which bottoms out at 40 dB SNR).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    Waveshape,
    Lowpass,
    Limiter,
    Noise,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::Waveshape,
        DegradationKind::Lowpass,
        DegradationKind::Limiter,
        DegradationKind::Noise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DegradationKind::Waveshape => "waveshape",
            DegradationKind::Lowpass => "lowpass",
            DegradationKind::Limiter => "limiter",
            DegradationKind::Noise => "noise",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown degradation {s:?}; expected waveshape, lowpass, limiter or noise"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub intensity: f64,
    /// Only used by [`DegradationKind::Noise`].
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, intensity: f64, seed: u64) -> Result<Self> {
        let spec = DegradationSpec { kind, intensity, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::InvalidConfig(format!(
                "intensity must lie in [0, 1], got {}",
                self.intensity
            )));
        }
        Ok(())
    }
}

/// Applies a degradation; length and sample rate are preserved.
pub fn apply(w: &Waveform, spec: &DegradationSpec) -> Result<Waveform> {
    spec.validate()?;
    let x = w.samples();
    let i = spec.intensity;
    let out = match spec.kind {
        DegradationKind::Waveshape => waveshape(x, i),
        DegradationKind::Lowpass => lowpass(x, w.sample_rate(), i),
        DegradationKind::Limiter => limiter(x, i),
        DegradationKind::Noise => add_noise(x, i, spec.seed),
    };
    w.with_samples(out)
}

/// Drive gain of the waveshaper.
pub fn waveshape_gain(intensity: f64) -> f64 {
    16.0 * intensity
}

/// `tanh(g·x)/tanh(g)`, which tends to the identity as `g → 0`.
fn waveshape(x: &[f64], intensity: f64) -> Vec<f64> {
    let g = waveshape_gain(intensity);
    if g < 1e-6 {
        return x.to_vec();
    }
    let norm = g.tanh();
    x.iter().map(|&s| (g * s).tanh() / norm).collect()
}

/// Cutoff of the low-pass as a fraction of Nyquist.
pub fn lowpass_cutoff_fraction(intensity: f64) -> f64 {
    1.0 - 0.9 * intensity
}

/// Quality factors of the two biquads forming a 4th-order Butterworth filter.
const BUTTERWORTH_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn lowpass(w0: f64, q: f64) -> Self {
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Transposed direct form II, zero initial state.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b0 * v + s1;
                s1 = self.b1 * v - self.a1 * y + s2;
                s2 = self.b2 * v - self.a2 * y;
                y
            })
            .collect()
    }
}

fn lowpass(x: &[f64], sample_rate: u32, intensity: f64) -> Vec<f64> {
    let fraction = lowpass_cutoff_fraction(intensity);
    if fraction >= 1.0 {
        return x.to_vec();
    }
    let nyquist = sample_rate as f64 / 2.0;
    let w0 = 2.0 * PI * fraction * nyquist / sample_rate as f64;
    let mut y = x.to_vec();
    for q in BUTTERWORTH_Q {
        y = Biquad::lowpass(w0, q).run(&y);
    }
    clamp_unit(y)
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Hard clip at `1 − 0.9·intensity`, then restore the original peak level.
fn limiter(x: &[f64], intensity: f64) -> Vec<f64> {
    let threshold = 1.0 - 0.9 * intensity;
    let original = peak(x);
    let clipped: Vec<f64> = x.iter().map(|v| v.clamp(-threshold, threshold)).collect();
    let now = peak(&clipped);
    if now == 0.0 || now == original {
        return clipped;
    }
    let gain = original / now;
    clipped.into_iter().map(|v| v * gain).collect()
}

/// Target signal-to-noise ratio in dB.
pub fn noise_snr_db(intensity: f64) -> f64 {
    40.0 - 36.0 * intensity
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output for position `index` of the stream `seed`.
pub fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in (0, 1] from the top 53 bits.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

/// `n` standard normal draws: Box–Muller over consecutive counter pairs.
pub fn gaussian_stream(seed: u64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut k = 0u64;
    while out.len() < n {
        let u1 = unit_open(splitmix64(seed, 2 * k));
        let u2 = unit_open(splitmix64(seed, 2 * k + 1));
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
        k += 1;
    }
    out.truncate(n);
    out
}

/// White Gaussian noise scaled to the exact target SNR against the clip's
/// empirical power.
fn add_noise(x: &[f64], intensity: f64, seed: u64) -> Vec<f64> {
    let n = x.len();
    let signal_power = x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    if signal_power == 0.0 {
        log::warn!("noise degradation on a silent clip leaves it unchanged");
        return x.to_vec();
    }
    let noise = gaussian_stream(seed, n);
    let noise_power = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let target = signal_power / 10f64.powf(noise_snr_db(intensity) / 10.0);
    let gain = (target / noise_power).sqrt();
    clamp_unit(x.iter().zip(&noise).map(|(s, e)| s + gain * e).collect())
}

fn clamp_unit(mut x: Vec<f64>) -> Vec<f64> {
    for v in &mut x {
        *v = v.clamp(-1.0, 1.0);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / 16050.0).sin())
            .collect();
        Waveform::new(s, 16050, "tone").unwrap()
    }

    #[test]
    fn kinds_parse_and_print() {
        for k in DegradationKind::ALL {
            assert_eq!(k.as_str().parse::<DegradationKind>().unwrap(), k);
        }
        assert!("reverb".parse::<DegradationKind>().is_err());
    }

    #[test]
    fn intensity_out_of_range_is_rejected() {
        assert!(DegradationSpec::new(DegradationKind::Noise, 1.5, 0).is_err());
        assert!(DegradationSpec::new(DegradationKind::Noise, -0.1, 0).is_err());
        assert!(DegradationSpec::new(DegradationKind::Noise, f64::NAN, 0).is_err());
    }

    #[test]
    fn intensity_zero_is_identity_except_noise() {
        let w = tone(4000);
        for kind in [DegradationKind::Waveshape, DegradationKind::Lowpass, DegradationKind::Limiter] {
            let out = apply(&w, &DegradationSpec::new(kind, 0.0, 0).unwrap()).unwrap();
            let diff = out
                .samples()
                .iter()
                .zip(w.samples())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff <= 1e-6, "{kind}: {diff}");
        }
    }

    #[test]
    fn small_drive_waveshaper_is_nearly_linear() {
        let y = waveshape(&[0.5, -0.25], 1e-4);
        assert!((y[0] - 0.5).abs() < 1e-5);
        assert!((y[1] + 0.25).abs() < 1e-5);
    }

    #[test]
    fn limiter_restores_peak() {
        let w = tone(2000);
        let out = apply(&w, &DegradationSpec::new(DegradationKind::Limiter, 0.5, 0).unwrap()).unwrap();
        assert!((peak(out.samples()) - peak(w.samples())).abs() < 1e-12);
    }

    #[test]
    fn noise_stream_is_deterministic_and_seed_dependent() {
        assert_eq!(gaussian_stream(7, 11), gaussian_stream(7, 11));
        assert_ne!(gaussian_stream(7, 11), gaussian_stream(8, 11));
        // Prefix stability: the stream does not depend on its length.
        assert_eq!(gaussian_stream(7, 11)[..5], gaussian_stream(7, 5)[..]);
    }

    #[test]
    fn every_kind_preserves_length_and_rate() {
        let w = tone(1234);
        for kind in DegradationKind::ALL {
            let out = apply(&w, &DegradationSpec::new(kind, 0.7, 3).unwrap()).unwrap();
            assert_eq!(out.len(), w.len());
            assert_eq!(out.sample_rate(), w.sample_rate());
        }
    }
}
