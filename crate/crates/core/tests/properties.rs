mod common;

use proptest::prelude::*;
use specmetric::metrics;
use specmetric::nlp::{self, DnMode};
use specmetric::{
    decode_wav, encode_wav_16bit, mel_spectrogram, resample, AmplitudeScale, Matrix, NlpParams, SpectrogramConfig,
    Waveform,
};

fn matrix_strategy(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn distinct_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(-1000i32..1000, n).prop_shuffle_values()
}

trait ShuffleValues {
    fn prop_shuffle_values(self) -> BoxedStrategy<Vec<f64>>;
}

impl<S: Strategy<Value = std::collections::BTreeSet<i32>> + 'static> ShuffleValues for S {
    fn prop_shuffle_values(self) -> BoxedStrategy<Vec<f64>> {
        self.prop_map(|s| s.into_iter().map(|v| v as f64 / 10.0).collect::<Vec<_>>())
            .prop_shuffle()
            .boxed()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pyramid_reconstructs_input(x in matrix_strategy(16..=64, 16..=64), n in 2usize..=5) {
        let l = nlp::binomial_lowpass();
        let bands = nlp::laplacian_bands(&x, n, &l).unwrap();
        prop_assert!(nlp::reconstruct(&bands, &l).max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn stage_sizes_halve_with_ceiling(rows in 8usize..100, cols in 8usize..100, n in 1usize..=4) {
        let x = Matrix::filled(rows, cols, 1.0);
        let p = NlpParams::uniform(n, 0.0, 1.0, DnMode::None).unwrap();
        let out = nlp::build_pyramid_matrix(&x, &p).unwrap();
        let (mut r, mut c) = (rows, cols);
        for z in &out.bands_z {
            prop_assert_eq!(z.shape(), (r, c));
            r = r.div_ceil(2);
            c = c.div_ceil(2);
        }
    }

    #[test]
    fn zero_filters_divide_by_sigma(x in matrix_strategy(16..=24, 16..=24), sigma in 0.1..5.0f64) {
        let p = NlpParams::uniform(3, 0.0, sigma, DnMode::Statistical).unwrap();
        let out = nlp::build_pyramid_matrix(&x, &p).unwrap();
        for (z, y) in out.bands_z.iter().zip(&out.bands_y) {
            prop_assert_eq!(y, &z.map(|v| v / sigma));
        }
    }

    #[test]
    fn nlpd_is_symmetric_and_non_negative(a in matrix_strategy(32..=40, 32..=40)) {
        let b = a.map(|v| v.sin() * 3.0);
        let p = NlpParams::image_default();
        let ab = nlp::nlpd_matrix(&a, &b, &p).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, nlp::nlpd_matrix(&b, &a, &p).unwrap());
        prop_assert_eq!(nlp::nlpd_matrix(&a, &a, &p).unwrap(), 0.0);
    }

    #[test]
    fn mse_scales_quadratically(a in matrix_strategy(4..=12, 4..=12), alpha in -5.0..5.0f64) {
        let b = a.map(|v| v * 0.5 + 1.0);
        let base = metrics::mse_matrix(&a, &b).unwrap();
        let scaled = metrics::mse_matrix(&a.map(|v| alpha * v), &b.map(|v| alpha * v)).unwrap();
        prop_assert!((scaled - alpha * alpha * base).abs() <= 1e-9 * scaled.abs().max(1e-300));
    }

    #[test]
    fn spearman_ignores_increasing_transforms(
        xs in prop::collection::vec(-3.0..3.0f64, 5..40),
        seed in any::<u64>(),
        scale in 0.1..10.0f64,
        shift in -5.0..5.0f64,
    ) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.gen_range(-2.0..2.0)).collect();
        if let Ok(s) = specmetric::spearman(&xs, &ys) {
            let ex: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let af: Vec<f64> = ys.iter().map(|y| scale * y + shift).collect();
            prop_assert_eq!(specmetric::spearman(&ex, &af).unwrap(), s);
        }
    }

    #[test]
    fn spearman_equals_pearson_on_ranks(perm in Just((1..=20).map(f64::from).collect::<Vec<_>>()).prop_shuffle(), xs in distinct_vec(20)) {
        let ranks = specmetric::eval::average_ranks(&xs);
        prop_assert_eq!(specmetric::spearman(&ranks, &perm).unwrap(), specmetric::pearson(&ranks, &perm).unwrap());
    }

    // Amplitudes stay well inside full scale so the output clamp never engages.
    #[test]
    fn resample_is_linear(samples in prop::collection::vec(-0.3..0.3f64, 200..600), a in -1.5..1.5f64, target in 8000u32..24000) {
        let w = Waveform::new(samples.clone(), 16050, "x").unwrap();
        let scaled = Waveform::new(samples.iter().map(|v| a * v).collect(), 16050, "x").unwrap();
        let r1 = resample(&w, target).unwrap();
        let r2 = resample(&scaled, target).unwrap();
        for (u, v) in r1.samples().iter().zip(r2.samples()) {
            prop_assert!((a * u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn mel_power_is_quadratic_in_amplitude(samples in prop::collection::vec(-0.5..0.5f64, 600..900), alpha in 0.1..1.9f64) {
        let cfg = SpectrogramConfig { n_fft: 256, hop_length: 64, n_mels: 24, scale: AmplitudeScale::Power, ..SpectrogramConfig::default() };
        let w = Waveform::new(samples.clone(), 16050, "x").unwrap();
        let s = Waveform::new(samples.iter().map(|v| alpha * v).collect(), 16050, "x").unwrap();
        let m1 = mel_spectrogram(&w, &cfg).unwrap();
        let m2 = mel_spectrogram(&s, &cfg).unwrap();
        for (u, v) in m1.values.as_slice().iter().zip(m2.values.as_slice()) {
            prop_assert!((alpha * alpha * u - v).abs() <= 1e-6 * v.abs().max(1e-12));
        }
    }

    #[test]
    fn spectrogram_shape_follows_framing(len in 256usize..3000, hop in 16usize..128) {
        let cfg = SpectrogramConfig { n_fft: 256, hop_length: hop, n_mels: 16, ..SpectrogramConfig::default() };
        let w = Waveform::new(vec![0.1; len], 16050, "x").unwrap();
        let m = mel_spectrogram(&w, &cfg).unwrap();
        prop_assert_eq!(m.shape(), (16, 1 + (len - 256) / hop));
    }

    #[test]
    fn wav_round_trip_within_two_steps(samples in prop::collection::vec(-1.5..1.5f64, 1..400)) {
        let clamped: Vec<f64> = samples.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let w = Waveform::new(clamped.clone(), 16050, "x").unwrap();
        let back = decode_wav(&encode_wav_16bit(&w)).unwrap();
        for (a, b) in clamped.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 2.0 / 32767.0);
        }
    }
}
