mod common;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use specmetric::degradations::{apply, lowpass_cutoff_fraction, DegradationKind, DegradationSpec};
use specmetric::metrics;
use specmetric::{mel_spectrogram, Waveform};

fn snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let noise: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a) * (b - a)).sum();
    10.0 * (signal / noise).log10()
}

#[test]
fn noise_at_half_intensity_is_22_db() {
    let w = common::music_clip(1, 1.0, 16_050);
    for seed in 0..5 {
        let out = apply(&w, &DegradationSpec::new(DegradationKind::Noise, 0.5, seed).unwrap()).unwrap();
        let snr = snr_db(w.samples(), out.samples());
        assert!((snr - 22.0).abs() <= 0.5, "seed {seed}: {snr} dB");
    }
}

#[test]
fn noise_at_zero_intensity_is_at_least_39_9_db() {
    let w = common::music_clip(2, 1.0, 16_050);
    let out = apply(&w, &DegradationSpec::new(DegradationKind::Noise, 0.0, 3).unwrap()).unwrap();
    assert!(snr_db(w.samples(), out.samples()) >= 39.9);
}

fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

#[test]
fn lowpass_stopband_is_40_db_down() {
    let mut rng = common::rng(9);
    let n = 1 << 16;
    let w = Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_050, "white").unwrap();
    let intensity = 0.8;
    let out = apply(&w, &DegradationSpec::new(DegradationKind::Lowpass, intensity, 0).unwrap()).unwrap();
    let spectrum = power_spectrum(out.samples());
    let bins = spectrum.len() - 1;
    let cutoff = lowpass_cutoff_fraction(intensity) * bins as f64;
    let band_mean = |lo: f64, hi: f64| {
        let (lo, hi) = (lo.ceil() as usize, (hi.floor() as usize).min(bins));
        spectrum[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    };
    let passband = band_mean(1.0, 0.5 * cutoff);
    // A 4th-order response is only 3 dB down at the cutoff itself; the
    // stopband is measured from 2.5x the cutoff frequency.
    let stopband = band_mean(2.5 * cutoff, bins as f64);
    let attenuation = 10.0 * (passband / stopband).log10();
    assert!(attenuation >= 40.0, "{attenuation} dB");
}

#[test]
fn waveshape_is_odd_and_bounded() {
    let s: Vec<f64> = (0..200).map(|i| (i as f64 / 100.0) - 1.0).collect();
    let w = Waveform::new(s.clone(), 16_050, "ramp").unwrap();
    let out = apply(&w, &DegradationSpec::new(DegradationKind::Waveshape, 0.6, 0).unwrap()).unwrap();
    for (x, y) in s.iter().zip(out.samples()) {
        assert!(y.abs() <= 1.0);
        assert!(y.abs() >= x.abs() - 1e-12, "drive only expands magnitudes");
    }
}

#[test]
fn degradation_is_deterministic() {
    let w = common::music_clip(3, 0.5, 16_050);
    for kind in DegradationKind::ALL {
        let spec = DegradationSpec::new(kind, 0.6, 11).unwrap();
        let a = apply(&w, &spec).unwrap();
        let b = apply(&w, &spec).unwrap();
        let bits = |w: &Waveform| w.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{kind}");
    }
}

#[test]
fn spectrogram_error_grows_with_intensity() {
    let cfg = common::small_config();
    let w = common::music_clip(4, 1.0, cfg.sample_rate);
    let reference = mel_spectrogram(&w, &cfg).unwrap();
    for kind in DegradationKind::ALL {
        let errors: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&i| {
                let d = apply(&w, &DegradationSpec::new(kind, i, 5).unwrap()).unwrap();
                metrics::mse(&reference, &mel_spectrogram(&d, &cfg).unwrap()).unwrap()
            })
            .collect();
        assert!(errors.windows(2).all(|p| p[1] >= p[0]), "{kind}: {errors:?}");
    }
}
