//! WAV decoding/encoding and band-limited resampling.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Default analysis rate for all spectrogram metrics.
pub const DEFAULT_SAMPLE_RATE: u32 = 16050;

const AMPLITUDE_HEADROOM: f64 = 1e-6;

/// Mono audio clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0 + AMPLITUDE_HEADROOM)
        {
            return Err(Error::InvalidConfig(format!(
                "sample {i} = {} is not a finite amplitude in [-1, 1]",
                samples[i]
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Waveform::new(samples, self.sample_rate, self.source_id.clone())
    }
}

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a RIFF/WAVE byte stream to a mono waveform.
///
/// Accepts PCM 16-bit, PCM 32-bit and IEEE float 32-bit with one or two
/// channels. Stereo is averaged per frame.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    decode_wav_with_id(bytes, "")
}

pub fn decode_wav_with_id(bytes: &[u8], source_id: &str) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE header".into()));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| Error::Format("chunk size overflow".into()))?;
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(Error::Format("truncated fmt chunk".into()));
                }
                let b = &bytes[body_start..body_end];
                let mut format = read_u16(b, 0);
                if format == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::Format("truncated extensible fmt chunk".into()));
                    }
                    // First two bytes of the sub-format GUID carry the tag.
                    format = read_u16(b, 24);
                }
                fmt = Some(FmtChunk {
                    format,
                    channels: read_u16(b, 2),
                    sample_rate: read_u32(b, 4),
                    bits: read_u16(b, 14),
                });
            }
            b"data" => {
                // Some writers leave the size of a streamed data chunk unset.
                let end = body_end.min(bytes.len());
                data = Some(&bytes[body_start..end]);
            }
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedFormat {
            field: "channels",
            value: fmt.channels.to_string(),
        });
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Format("sample rate is zero".into()));
    }
    let decode_sample: fn(&[u8]) -> f64 = match (fmt.format, fmt.bits) {
        (WAVE_FORMAT_PCM, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
        (WAVE_FORMAT_PCM, 32) => {
            |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2147483648.0
        }
        (WAVE_FORMAT_IEEE_FLOAT, 32) => |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        (WAVE_FORMAT_PCM, bits) | (WAVE_FORMAT_IEEE_FLOAT, bits) => {
            return Err(Error::UnsupportedFormat {
                field: "bits_per_sample",
                value: bits.to_string(),
            })
        }
        (format, _) => {
            return Err(Error::UnsupportedFormat {
                field: "audio_format",
                value: format!("0x{format:04x}"),
            })
        }
    };

    let width = fmt.bits as usize / 8;
    let channels = fmt.channels as usize;
    let frame = width * channels;
    let samples = data
        .chunks_exact(frame)
        .map(|f| {
            let sum: f64 = f.chunks_exact(width).map(decode_sample).sum();
            sum / channels as f64
        })
        .collect::<Vec<_>>();
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Format(format!("non-finite sample at frame {i}")));
    }
    Waveform::new(samples, fmt.sample_rate, source_id)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav_with_id(&bytes, &path.display().to_string())
}

/// Encodes as 16-bit PCM mono; samples are clamped to [-1, 1] and scaled by 32767.
pub fn encode_wav_16bit(w: &Waveform) -> Vec<u8> {
    let n = w.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav_16bit(w)).map_err(|e| Error::io(path, e))
}

const KAISER_BETA: f64 = 8.6;
const HALF_WIDTH_TAPS: f64 = 64.0;
const MAX_PHASES: u64 = 4096;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

struct SincKernel {
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl SincKernel {
    /// `cutoff` is relative to the input Nyquist frequency.
    fn new(cutoff: f64) -> Self {
        SincKernel {
            cutoff,
            half_width: HALF_WIDTH_TAPS / cutoff,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn eval(&self, t: f64) -> f64 {
        if t.abs() >= self.half_width {
            return 0.0;
        }
        let x = PI * self.cutoff * t;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
        let r = t / self.half_width;
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc * window
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Windowed-sinc resampling (Kaiser window, beta 8.6, 64 zero crossings per
/// side at the lower of the two rates).
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target sample rate must be positive".into()));
    }
    let in_rate = w.sample_rate() as u64;
    let out_rate = target_rate as u64;
    if in_rate == out_rate {
        return Ok(w.clone());
    }
    let x = w.samples();
    let out_len = ((x.len() as f64) * out_rate as f64 / in_rate as f64).round() as usize;
    let kernel = SincKernel::new((out_rate as f64 / in_rate as f64).min(1.0));
    let reach = kernel.half_width.ceil() as i64;

    // Output n sits at input position n * step / phases = n * in / out.
    let g = gcd(in_rate, out_rate);
    let step = in_rate / g;
    let phases = out_rate / g;
    let table: Option<Vec<Vec<f64>>> = (phases <= MAX_PHASES).then(|| {
        (0..phases)
            .map(|p| {
                let frac = p as f64 / phases as f64;
                (-reach + 1..=reach)
                    .map(|k| kernel.eval(frac - k as f64))
                    .collect()
            })
            .collect()
    });

    let len = x.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * step;
        let base = (pos / phases) as i64;
        let phase = pos % phases;
        let mut acc = 0.0;
        for (j, k) in (-reach + 1..=reach).enumerate() {
            let idx = base + k;
            if idx < 0 || idx >= len {
                continue;
            }
            let h = match &table {
                Some(t) => t[phase as usize][j],
                None => kernel.eval(phase as f64 / phases as f64 - k as f64),
            };
            acc += h * x[idx as usize];
        }
        out.push(acc);
    }
    // Gibbs overshoot can exceed full scale by a hair; keep the amplitude invariant.
    for s in &mut out {
        *s = s.clamp(-1.0, 1.0);
    }
    Waveform::new(out, target_rate, w.source_id())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(format: u16, channels: u16, bits: u16, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        let block = channels * bits / 8;
        out.extend_from_slice(&(8000 * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn decodes_pcm16_mono() {
        let payload: Vec<u8> = [0i16, 16384, -32768]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect();
        let w = decode_wav(&wav_bytes(1, 1, 16, &payload)).unwrap();
        assert_eq!(w.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate(), 8000);
    }

    #[test]
    fn stereo_float_is_averaged() {
        let payload: Vec<u8> = [0.5f32, -0.5, 1.0, 1.0]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect();
        let w = decode_wav(&wav_bytes(3, 2, 32, &payload)).unwrap();
        assert_eq!(w.samples(), &[0.0, 1.0]);
    }

    #[test]
    fn pcm32_scales_by_type_max() {
        let payload: Vec<u8> = [i32::MIN, 1 << 30]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect();
        let w = decode_wav(&wav_bytes(1, 1, 32, &payload)).unwrap();
        assert_eq!(w.samples(), &[-1.0, 0.5]);
    }

    #[test]
    fn mu_law_is_rejected_naming_the_field() {
        let err = decode_wav(&wav_bytes(7, 1, 8, &[0xff, 0x7f])).unwrap_err();
        match err {
            Error::UnsupportedFormat { field, .. } => assert_eq!(field, "audio_format"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pcm8_is_rejected_naming_bit_depth() {
        let err = decode_wav(&wav_bytes(1, 1, 8, &[0x80])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat { field: "bits_per_sample", .. }));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(decode_wav(b"not a wav file"), Err(Error::Format(_))));
        let mut truncated = wav_bytes(1, 1, 16, &[0, 0]);
        truncated.truncate(20);
        assert!(matches!(decode_wav(&truncated), Err(Error::Format(_))));
    }

    #[test]
    fn encode_clamps_and_scales() {
        let w = Waveform::new(vec![1.0, -1.0, 0.0], 16050, "x").unwrap();
        let bytes = encode_wav_16bit(&w);
        let s: Vec<i16> = bytes[44..]
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect();
        assert_eq!(s, vec![32767, -32767, 0]);
        // Out-of-range values can only reach the encoder through raw construction.
        let loud = Waveform {
            samples: vec![1.5],
            sample_rate: 16050,
            source_id: String::new(),
        };
        let b = encode_wav_16bit(&loud);
        assert_eq!(i16::from_le_bytes([b[44], b[45]]), 32767);
    }

    #[test]
    fn round_trip_within_quantization() {
        let samples: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.37).sin()).collect();
        let w = Waveform::new(samples, 16050, "x").unwrap();
        let back = decode_wav(&encode_wav_16bit(&w)).unwrap();
        for (a, b) in w.samples().iter().zip(back.samples()) {
            // Encoding scales by 32767 and decoding by 32768, so full-scale
            // samples pick up an extra 1/32768 on top of rounding.
            assert!((a - b).abs() <= 2.0 / 32767.0);
        }
    }

    #[test]
    fn resample_identity_and_length() {
        let w = Waveform::new(vec![0.1; 1000], 16050, "x").unwrap();
        assert_eq!(resample(&w, 16050).unwrap(), w);
        let w = Waveform::new(vec![0.0; 4 * 48000], 48000, "x").unwrap();
        assert_eq!(resample(&w, 16050).unwrap().len(), 64200);
        assert!(resample(&w, 0).is_err());
    }

    #[test]
    fn resample_preserves_dc_in_interior() {
        let w = Waveform::new(vec![0.5; 4800], 48000, "x").unwrap();
        let r = resample(&w, 16050).unwrap();
        for &s in &r.samples()[200..1400] {
            assert!((s - 0.5).abs() < 1e-3, "{s}");
        }
        let up = resample(&Waveform::new(vec![0.5; 1605], 16050, "x").unwrap(), 44100).unwrap();
        for &s in &up.samples()[500..3900] {
            assert!((s - 0.5).abs() < 1e-3, "{s}");
        }
    }

    #[test]
    fn bessel_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-13);
        assert!((bessel_i0(8.6) - 750.4611595631659).abs() < 1e-9);
    }
}
