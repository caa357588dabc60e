//! Mel spectrogram front-end.
//!
//! Frames are taken without centre padding, windowed with a periodic Hann
//! window and mapped through a Slaney-style, area-normalised triangular mel
//! filterbank. The default output is log power in dB with a -100 dB floor.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::kvconfig;
use crate::matrix::Matrix;

const POWER_FLOOR: f64 = 1e-10;
const CACHE_MAGIC: &[u8; 8] = b"SMELSPEC";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AmplitudeScale {
    Power,
    LogPower,
}

impl fmt::Display for AmplitudeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AmplitudeScale::Power => "power",
            AmplitudeScale::LogPower => "log_power",
        })
    }
}

impl FromStr for AmplitudeScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(AmplitudeScale::Power),
            "log_power" => Ok(AmplitudeScale::LogPower),
            other => Err(Error::InvalidConfig(format!(
                "scale must be power or log_power, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    /// `None` means half the sample rate.
    pub fmax: Option<f64>,
    pub scale: AmplitudeScale,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            n_fft: 2048,
            hop_length: 64,
            n_mels: 512,
            sample_rate: DEFAULT_SAMPLE_RATE,
            fmin: 0.0,
            fmax: None,
            scale: AmplitudeScale::LogPower,
        }
    }
}

impl SpectrogramConfig {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hop_length == 0 || self.n_fft < self.hop_length {
            return bad(format!(
                "need n_fft >= hop_length > 0 (n_fft={}, hop_length={})",
                self.n_fft, self.hop_length
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        let fmax = self.fmax_hz();
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= sample_rate/2 (fmin={}, fmax={fmax})",
                self.fmin
            ));
        }
        Ok(())
    }

    /// Frame count under no-padding framing.
    pub fn n_frames(&self, len: usize) -> Option<usize> {
        (len >= self.n_fft).then(|| 1 + (len - self.n_fft) / self.hop_length)
    }

    pub fn to_kv(&self) -> String {
        kvconfig::render([
            ("n_fft", self.n_fft.to_string()),
            ("hop_length", self.hop_length.to_string()),
            ("n_mels", self.n_mels.to_string()),
            ("sample_rate", self.sample_rate.to_string()),
            ("fmin", format!("{:?}", self.fmin)),
            ("fmax", format!("{:?}", self.fmax_hz())),
            ("scale", self.scale.to_string()),
        ])
    }

    /// Applies recognised keys from a `key=value` map; unknown keys are ignored
    /// so one file can carry settings for several consumers.
    pub fn overlay(&mut self, kv: &std::collections::BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            match k.as_str() {
                "n_fft" => self.n_fft = kvconfig::parse_value(k, v)?,
                "hop_length" => self.hop_length = kvconfig::parse_value(k, v)?,
                "n_mels" => self.n_mels = kvconfig::parse_value(k, v)?,
                "sample_rate" => self.sample_rate = kvconfig::parse_value(k, v)?,
                "fmin" => self.fmin = kvconfig::parse_value(k, v)?,
                "fmax" => self.fmax = Some(kvconfig::parse_value(k, v)?),
                "scale" => self.scale = v.parse()?,
                _ => {}
            }
        }
        self.validate()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = SpectrogramConfig::default();
        cfg.overlay(&kvconfig::parse(text)?)?;
        Ok(cfg)
    }

    /// Short provenance string, echoed into reports.
    pub fn fingerprint(&self) -> String {
        format!(
            "n_fft={} hop={} n_mels={} sr={} fmin={} fmax={} scale={}",
            self.n_fft,
            self.hop_length,
            self.n_mels,
            self.sample_rate,
            self.fmin,
            self.fmax_hz(),
            self.scale
        )
    }
}

/// A mel spectrogram: `n_mels` rows by `n_frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub config: SpectrogramConfig,
    pub source_id: String,
}

impl MelSpectrogram {
    /// Wraps an arbitrary matrix, e.g. for synthetic tests or cached data.
    pub fn from_matrix(values: Matrix, config: SpectrogramConfig, source_id: impl Into<String>) -> Self {
        MelSpectrogram {
            values,
            config,
            source_id: source_id.into(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Power STFT, `n_fft/2 + 1` rows by `n_frames` columns.
pub fn stft_power(w: &Waveform, cfg: &SpectrogramConfig) -> Result<Matrix> {
    cfg.validate()?;
    let n_frames = cfg.n_frames(w.len()).ok_or(Error::InputTooShort {
        len: w.len(),
        needed: cfg.n_fft,
    })?;
    let n_bins = cfg.n_fft / 2 + 1;
    let window = hann_window(cfg.n_fft);
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Matrix::zeros(n_bins, n_frames);
    let x = w.samples();
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, v) in buf.iter().take(n_bins).enumerate() {
            out.set(k, t, v.norm_sqr());
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular mel filterbank, `n_mels` rows by `n_fft/2 + 1` columns.
///
/// Each triangle is scaled by `2 / (f_hi - f_lo)` so its continuous area in
/// Hz is one.
pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Result<Matrix> {
    cfg.validate()?;
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_hz());
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (f0, f1, f2) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (f2 - f0);
        for (k, &f) in bin_hz.iter().enumerate() {
            let rise = (f - f0) / (f1 - f0);
            let fall = (f2 - f) / (f2 - f1);
            let w = rise.min(fall).max(0.0);
            if w > 0.0 {
                fb.set(m, k, w * norm);
            }
        }
    }
    Ok(fb)
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k) = a.shape();
    let m = b.cols();
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let dst = &mut out.as_mut_slice()[i * m..(i + 1) * m];
        for (j, &av) in a.row(i).iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            for (d, &bv) in dst.iter_mut().zip(b.row(j)) {
                *d += av * bv;
            }
        }
    }
    out
}

pub fn mel_spectrogram(w: &Waveform, cfg: &SpectrogramConfig) -> Result<MelSpectrogram> {
    let power = stft_power(w, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let mut values = matmul(&fb, &power);
    if cfg.scale == AmplitudeScale::LogPower {
        values = values.map(|v| 10.0 * v.max(POWER_FLOOR).log10());
    }
    Ok(MelSpectrogram {
        values,
        config: cfg.clone(),
        source_id: w.source_id().to_string(),
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes the binary cache (magic, u32 rows, u32 cols, row-major f32 LE) and
/// a `<path>.cfg` sidecar with the generating config.
pub fn save_cache(path: impl AsRef<Path>, spec: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = spec.shape();
    let mut bytes = Vec::with_capacity(16 + rows * cols * 4);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in spec.values.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut text = spec.config.to_kv();
    text.push_str(&format!("source_id={}\n", spec.source_id));
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..8] != CACHE_MAGIC {
        return Err(Error::Format(format!("{}: not a spectrogram cache", path.display())));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes of data, found {}",
            path.display(),
            rows * cols * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let side = sidecar_path(path);
    let kv = kvconfig::read(&side)?;
    let mut config = SpectrogramConfig::default();
    config.overlay(&kv)?;
    Ok(MelSpectrogram {
        values: Matrix::from_vec(rows, cols, data)?,
        config,
        source_id: kv.get("source_id").cloned().unwrap_or_default(),
    })
}
