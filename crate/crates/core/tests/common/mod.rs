//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specmetric::fitting::{self, ObjectiveSign, PairBands};
use specmetric::{DnMode, Matrix, MelSpectrogram, NlpParams, SpectrogramConfig, Waveform};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Spectrogram-like matrix: smooth positive field in dB-ish units.
pub fn random_spectrogram(rng: &mut impl Rng, rows: usize, cols: usize) -> MelSpectrogram {
    let f1 = rng.gen_range(0.05..0.3);
    let f2 = rng.gen_range(0.05..0.3);
    let phase = rng.gen_range(0.0..PI);
    let values = Matrix::from_fn(rows, cols, |r, c| {
        -40.0 + 10.0 * (f1 * r as f64 + phase).sin() * (f2 * c as f64).cos() + rng.gen_range(-3.0..3.0)
    });
    MelSpectrogram::from_matrix(values, SpectrogramConfig::default(), "random")
}

/// Small analysis settings for fast audio tests.
pub fn small_config() -> SpectrogramConfig {
    SpectrogramConfig {
        n_fft: 512,
        hop_length: 128,
        n_mels: 64,
        ..SpectrogramConfig::default()
    }
}

/// Music-like clip: a few harmonic notes with decaying partials, an
/// amplitude envelope and a little noise.
pub fn music_clip(seed: u64, seconds: f64, sample_rate: u32) -> Waveform {
    let mut rng = rng(seed);
    let n = (seconds * sample_rate as f64) as usize;
    let notes = 3;
    let note_len = n / notes + 1;
    let fundamentals: Vec<f64> = (0..notes).map(|_| rng.gen_range(110.0..440.0)).collect();
    let partials = 6;
    let decay: f64 = rng.gen_range(0.4..0.8);
    let mut s = vec![0.0; n];
    for (i, v) in s.iter_mut().enumerate() {
        let note = i / note_len;
        let t = i as f64 / sample_rate as f64;
        let local = (i % note_len) as f64 / sample_rate as f64;
        let env = (-3.0 * local).exp() * (1.0 - (-200.0 * local).exp());
        let f0 = fundamentals[note];
        let mut acc = 0.0;
        for h in 1..=partials {
            acc += decay.powi(h as i32 - 1) * (2.0 * PI * f0 * h as f64 * t).sin();
        }
        *v = 0.3 * env * acc + 0.01 * rng.gen_range(-1.0..1.0);
    }
    let peak = s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for v in &mut s {
        *v *= 0.8 / peak;
    }
    Waveform::new(s, sample_rate, format!("clip{seed}")).unwrap()
}

/// Mirror index without edge repetition, written out independently.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Non-negative least squares on the normal equations `ata·w = atb`
/// (Lawson–Hanson active set).
pub fn nnls(ata: &[Vec<f64>], atb: &[f64]) -> Vec<f64> {
    let m = atb.len();
    let mut w = vec![0.0; m];
    let mut passive = vec![false; m];
    let solve_passive = |passive: &[bool]| -> Vec<f64> {
        let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
        let a = idx.iter().map(|&i| idx.iter().map(|&j| ata[i][j]).collect()).collect();
        let b = idx.iter().map(|&i| atb[i]).collect();
        let sol = solve(a, b);
        let mut full = vec![0.0; m];
        for (&i, v) in idx.iter().zip(sol) {
            full[i] = v;
        }
        full
    };
    for _ in 0..10 * m {
        // Negative gradient of ½wᵀAw − bᵀw.
        let grad: Vec<f64> = (0..m).map(|i| atb[i] - (0..m).map(|j| ata[i][j] * w[j]).sum::<f64>()).collect();
        let Some(enter) = (0..m)
            .filter(|&i| !passive[i] && grad[i] > 1e-12)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]))
        else {
            break;
        };
        passive[enter] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..m).all(|i| !passive[i] || z[i] > 0.0) {
                w = z;
                break;
            }
            let alpha = (0..m)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| w[i] / (w[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            for i in 0..m {
                w[i] += alpha * (z[i] - w[i]);
                if passive[i] && w[i] <= 1e-15 {
                    passive[i] = false;
                    w[i] = 0.0;
                }
            }
        }
    }
    w
}

/// Least-squares neighbour weights (centre excluded, σ fixed, weights
/// non-negative) predicting `|z|` at every pixel, as a 5x5 kernel with a
/// zero centre.
pub fn center_predictor_oracle(bands: &[Matrix], sigma: f64) -> Matrix {
    let offsets: Vec<(isize, isize)> = (0..25)
        .filter(|&t| t != 12)
        .map(|t| (t as isize / 5 - 2, t as isize % 5 - 2))
        .collect();
    let m = offsets.len();
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for band in bands {
        let (rows, cols) = band.shape();
        for r in 0..rows {
            for c in 0..cols {
                let feats: Vec<f64> = offsets
                    .iter()
                    .map(|&(dr, dc)| band.get(mirror(r as isize + dr, rows), mirror(c as isize + dc, cols)).abs())
                    .collect();
                let target = band.get(r, c).abs() - sigma;
                for i in 0..m {
                    atb[i] += feats[i] * target;
                    for j in 0..m {
                        ata[i][j] += feats[i] * feats[j];
                    }
                }
            }
        }
    }
    let w = nnls(&ata, &atb);
    let mut kernel = Matrix::zeros(5, 5);
    for (&(dr, dc), v) in offsets.iter().zip(w) {
        kernel.set((dr + 2) as usize, (dc + 2) as usize, v);
    }
    kernel
}

/// Band whose magnitude approximately obeys `x = σ + K ⊛ x + e` for a
/// planted non-negative kernel `K` (fixed-point iteration, mirror edges).
pub fn planted_band(rng: &mut impl Rng, size: usize, kernel: &Matrix, sigma: f64, noise: f64) -> Matrix {
    let e = Matrix::from_fn(size, size, |_, _| rng.gen_range(0.0..noise));
    let mut x = Matrix::filled(size, size, sigma);
    for _ in 0..200 {
        let mut next = Matrix::zeros(size, size);
        for r in 0..size {
            for c in 0..size {
                let mut acc = sigma + e.get(r, c);
                for a in 0..5 {
                    for b in 0..5 {
                        let rr = mirror(r as isize + a as isize - 2, size);
                        let cc = mirror(c as isize + b as isize - 2, size);
                        acc += kernel.get(a, b) * x.get(rr, cc);
                    }
                }
                next.set(r, c, acc);
            }
        }
        x = next;
    }
    // Alternate signs so the band looks like zero-mean detail; only |z| matters.
    Matrix::from_fn(size, size, |r, c| if (r + c) % 2 == 0 { x.get(r, c) } else { -x.get(r, c) })
}

/// Random positive DN parameters for an `n`-stage pyramid.
pub fn random_positive_params(rng: &mut impl Rng, n: usize) -> NlpParams {
    let filters = (0..n)
        .map(|_| Matrix::from_fn(5, 5, |_, _| rng.gen_range(0.01..0.2)))
        .collect();
    let sigmas = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
    NlpParams::new(specmetric::nlp::binomial_lowpass(), filters, sigmas, DnMode::Perceptual).unwrap()
}

/// Largest relative disagreement between reverse-mode and central
/// finite-difference gradients of the Pearson objective for one random
/// instance of `pairs` 8x8 spectrogram pairs, N = 2.
pub fn perceptual_gradient_error(seed: u64, pairs: usize) -> f64 {
    let mut rng = rng(seed);
    let params = random_positive_params(&mut rng, 2);
    let bands: Vec<PairBands> = (0..pairs)
        .map(|i| {
            let a = random_matrix(&mut rng, 8, 8);
            let b = a.zip_map(&random_matrix(&mut rng, 8, 8), |x, d| x + 0.3 * d);
            PairBands::new(&a, &b, rng.gen_range(1.0..5.0), format!("t{}", i % 1), &params).unwrap()
        })
        .collect();
    let batch: Vec<&PairBands> = bands.iter().collect();
    let (_, grad) = fitting::perceptual_objective(&batch, &params, ObjectiveSign::Positive).unwrap();
    let theta = fitting::flatten_dn(&params);
    let objective = |flat: &[f64]| {
        let p = fitting::unflatten_dn(&params, flat).unwrap();
        fitting::perceptual_objective(&batch, &p, ObjectiveSign::Positive).unwrap().0
    };
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let h = 1e-4 * theta[i].abs();
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        let scale = grad[i].abs().max(fd.abs());
        // Below ~1e-9 both values are at rounding level of the objective.
        if scale > 1e-9 {
            worst = worst.max((grad[i] - fd).abs() / scale);
        }
    }
    worst
}
