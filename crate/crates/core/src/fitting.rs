//! Fitting the divisive-normalisation filters and constants.
//!
//! Two routes share one ADAM implementation:
//!
//! * statistical: per stage, fit non-negative weights so that
//!   `σ + Σ_j p_j |z_j|` over the 5x5 neighbourhood (centre excluded) predicts
//!   `|z|` at the centre; `σ` is fixed to the mean absolute band value.
//! * perceptual: maximise the Pearson correlation between the distance and
//!   human ratings, one degradation type per batch, with gradients from the
//!   [`tape`](crate::tape).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::nlp::{self, DnMode, DnVars, NlpParams, KERNEL_SIZE};
use crate::spectrogram::MelSpectrogram;
use crate::tape::{self, Tape};

/// Lower bound applied to every fitted or initialised σ.
pub const SIGMA_FLOOR: f64 = 1e-6;

const TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;
const CENTER_TAP: usize = TAPS / 2;
/// Filter taps plus σ, per stage, in the flat parameter vector.
pub const STAGE_PARAMS: usize = TAPS + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl AdamConfig {
    /// lr 0.01, batch 1, 10 epochs.
    pub fn statistical() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch_size: 1,
            seed: 0,
        }
    }

    /// lr 0.001, 100 epochs, one batch per degradation type.
    pub fn perceptual() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            epochs: 100,
            batch_size: usize::MAX,
            ..Self::statistical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "adam_step length mismatch: params {}, grads {}, state {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    CenterPixelMse,
    Pearson,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::CenterPixelMse => "center_pixel_mse",
            ObjectiveKind::Pearson => "pearson",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub tag: String,
    pub objective: f64,
}

/// Optimisation history and the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub kind: ObjectiveKind,
    /// One value per epoch.
    pub epoch_objectives: Vec<f64>,
    pub batches: Vec<BatchRecord>,
    pub params: NlpParams,
}

impl FitTrace {
    /// `epoch,batch_tag,objective` rows, epochs counted from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,batch_tag,objective\n");
        for b in &self.batches {
            out.push_str(&format!("{},{},{:?}\n", b.epoch + 1, b.tag, b.objective));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Mean absolute value of each band, floored at [`SIGMA_FLOOR`].
pub fn sigma_init(bands: &[Matrix]) -> Result<Vec<f64>> {
    if bands.is_empty() {
        return Err(Error::DegenerateData("no bands to initialise sigma from".into()));
    }
    bands
        .iter()
        .enumerate()
        .map(|(k, z)| {
            if z.is_empty() {
                return Err(Error::DegenerateData(format!("band {k} is empty")));
            }
            let mean = z.as_slice().iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
            Ok(mean.max(SIGMA_FLOOR))
        })
        .collect()
}

/// Per-stage σ for a training set: the mean over clips of each clip's
/// per-stage mean absolute value.
pub fn sigma_init_dataset(clips: &[Vec<Matrix>]) -> Result<Vec<f64>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::DegenerateData("empty training set".into()))?;
    let mut acc = vec![0.0; first.len()];
    for bands in clips {
        if bands.len() != acc.len() {
            return Err(Error::InvalidConfig("clips have different stage counts".into()));
        }
        for (a, z) in acc.iter_mut().zip(bands) {
            if z.is_empty() {
                return Err(Error::DegenerateData("empty band".into()));
            }
            *a += z.as_slice().iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| (s / clips.len() as f64).max(SIGMA_FLOOR))
        .collect())
}

fn masked(kernel: &Matrix) -> Matrix {
    let mut k = kernel.clone();
    k.as_mut_slice()[CENTER_TAP] = 0.0;
    k
}

/// Mean squared error of predicting `|z|` from its neighbours,
/// `σ + Σ_{j≠centre} p_j |z_j|`, with mirror boundaries.
pub fn center_prediction_loss(band: &Matrix, sigma: f64, kernel: &Matrix) -> f64 {
    let magnitude = band.map(f64::abs);
    center_loss_and_grad(&magnitude, sigma, &masked(kernel)).0
}

/// Loss and gradient for one band of magnitudes; the centre gradient is zero.
fn center_loss_and_grad(magnitude: &Matrix, sigma: f64, kernel: &Matrix) -> (f64, Matrix) {
    let pred = matrix::filter2d(magnitude, kernel);
    let resid = magnitude.zip_map(&pred, |a, p| a - sigma - p);
    let n = resid.len() as f64;
    let loss = resid.as_slice().iter().map(|r| r * r).sum::<f64>() / n;
    let mut grad = matrix::filter2d_kernel_adjoint(&resid, magnitude, KERNEL_SIZE, KERNEL_SIZE)
        .map(|g| -2.0 * g / n);
    grad.as_mut_slice()[CENTER_TAP] = 0.0;
    (loss, grad)
}

/// Fits one stage's neighbour weights with ADAM over `bands`, batch by batch.
///
/// Returns the kernel (centre zero, entries non-negative) and the mean batch
/// loss of each epoch.
pub fn fit_center_predictor(
    bands: &[Matrix],
    sigma: f64,
    init: &Matrix,
    opt: &AdamConfig,
    stage: usize,
) -> Result<(Matrix, Vec<f64>)> {
    opt.validate()?;
    if bands.is_empty() {
        return Err(Error::DegenerateData("no training bands".into()));
    }
    let magnitudes: Vec<Matrix> = bands.iter().map(|b| b.map(f64::abs)).collect();
    let mut kernel = masked(init);
    let mut state = AdamState::new(TAPS);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..bands.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(opt.batch_size.min(order.len())) {
            let mut grad = Matrix::zeros(KERNEL_SIZE, KERNEL_SIZE);
            let mut loss = 0.0;
            for &i in batch {
                let (l, g) = center_loss_and_grad(&magnitudes[i], sigma, &kernel);
                loss += l;
                grad.add_assign(&g);
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, stage });
            }
            let grad = grad.map(|g| g * scale);
            adam_step(kernel.as_mut_slice(), grad.as_slice(), &mut state, opt)?;
            for v in kernel.as_mut_slice() {
                *v = v.max(0.0);
            }
            kernel.as_mut_slice()[CENTER_TAP] = 0.0;
            total += loss;
            count += 1;
        }
        epoch_losses.push(total / count as f64);
    }
    Ok((kernel, epoch_losses))
}

fn pyramid_bands(spec: &Matrix, base: &NlpParams) -> Result<Vec<Matrix>> {
    nlp::laplacian_bands(spec, base.n_stages(), base.lowpass())
}

/// Per-stage centre-prediction loss averaged over `train`, using the
/// constants and (centre-masked) filters stored in `params`.
pub fn stage_center_losses(train: &[MelSpectrogram], params: &NlpParams) -> Result<Vec<f64>> {
    let mut totals = vec![0.0; params.n_stages()];
    for spec in train {
        let bands = pyramid_bands(&spec.values, params)?;
        for (k, z) in bands.iter().enumerate() {
            totals[k] += center_prediction_loss(z, params.dn_constants()[k], &params.dn_filters()[k]);
        }
    }
    Ok(totals.into_iter().map(|t| t / train.len() as f64).collect())
}

/// Statistical fit of every stage; σ is fixed from the training data.
pub fn fit_statistical(train: &[MelSpectrogram], base: &NlpParams, opt: &AdamConfig) -> Result<FitTrace> {
    opt.validate()?;
    if train.is_empty() {
        return Err(Error::DegenerateData("statistical fit needs at least one spectrogram".into()));
    }
    let clips: Vec<Vec<Matrix>> = train
        .par_iter()
        .map(|s| pyramid_bands(&s.values, base))
        .collect::<Result<_>>()?;
    let sigmas = sigma_init_dataset(&clips)?;
    let n = base.n_stages();
    let mut filters = Vec::with_capacity(n);
    let mut per_stage = Vec::with_capacity(n);
    for k in 0..n {
        let stage_bands: Vec<Matrix> = clips.iter().map(|c| c[k].clone()).collect();
        let (kernel, losses) = fit_center_predictor(&stage_bands, sigmas[k], &base.dn_filters()[k], opt, k)?;
        log::info!(
            "stage {}: sigma {:.6e}, loss {:.6e} -> {:.6e}",
            k + 1,
            sigmas[k],
            losses[0],
            losses[losses.len() - 1]
        );
        filters.push(kernel);
        per_stage.push(losses);
    }
    let mut batches = Vec::with_capacity(n * opt.epochs);
    let mut epoch_objectives = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        let mut sum = 0.0;
        for (k, losses) in per_stage.iter().enumerate() {
            batches.push(BatchRecord {
                epoch,
                tag: format!("stage{}", k + 1),
                objective: losses[epoch],
            });
            sum += losses[epoch];
        }
        epoch_objectives.push(sum);
    }
    let params = NlpParams::new(base.lowpass().clone(), filters, sigmas, DnMode::Statistical)?;
    Ok(FitTrace {
        kind: ObjectiveKind::CenterPixelMse,
        epoch_objectives,
        batches,
        params,
    })
}

/// Which correlation the perceptual fit maximises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveSign {
    /// `pearson(distance, rating)`.
    #[default]
    Positive,
    /// `pearson(distance, -rating)`.
    Negative,
}

impl ObjectiveSign {
    pub fn factor(self) -> f64 {
        match self {
            ObjectiveSign::Positive => 1.0,
            ObjectiveSign::Negative => -1.0,
        }
    }
}

impl FromStr for ObjectiveSign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "+" => Ok(ObjectiveSign::Positive),
            "negative" | "-" => Ok(ObjectiveSign::Negative),
            other => Err(Error::InvalidConfig(format!(
                "objective sign must be positive or negative, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerceptualOptions {
    pub freeze_sigma: bool,
    pub sign: ObjectiveSign,
}

/// A rated reference/degraded pair.
#[derive(Debug, Clone)]
pub struct RatedPair {
    pub reference: MelSpectrogram,
    pub degraded: MelSpectrogram,
    pub rating: f64,
    /// Degradation type; batches never mix tags.
    pub tag: String,
}

/// Pyramid bands of a rated pair. They do not depend on the normalisation
/// parameters, so they are computed once per fit.
#[derive(Debug, Clone)]
pub struct PairBands {
    pub reference: Vec<Matrix>,
    pub degraded: Vec<Matrix>,
    pub rating: f64,
    pub tag: String,
}

impl PairBands {
    pub fn new(reference: &Matrix, degraded: &Matrix, rating: f64, tag: impl Into<String>, params: &NlpParams) -> Result<Self> {
        reference.ensure_same_shape(degraded)?;
        Ok(PairBands {
            reference: pyramid_bands(reference, params)?,
            degraded: pyramid_bands(degraded, params)?,
            rating,
            tag: tag.into(),
        })
    }
}

/// Filters and constants as one vector: per stage, 25 taps then σ.
pub fn flatten_dn(params: &NlpParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.n_stages() * STAGE_PARAMS);
    for (f, &s) in params.dn_filters().iter().zip(params.dn_constants()) {
        out.extend_from_slice(f.as_slice());
        out.push(s);
    }
    out
}

/// Inverse of [`flatten_dn`], keeping the low-pass and mode of `template`.
pub fn unflatten_dn(template: &NlpParams, flat: &[f64]) -> Result<NlpParams> {
    if flat.len() != template.n_stages() * STAGE_PARAMS {
        return Err(Error::InvalidParams(format!(
            "expected {} values, got {}",
            template.n_stages() * STAGE_PARAMS,
            flat.len()
        )));
    }
    let mut filters = Vec::with_capacity(template.n_stages());
    let mut sigmas = Vec::with_capacity(template.n_stages());
    for chunk in flat.chunks_exact(STAGE_PARAMS) {
        filters.push(Matrix::from_vec(KERNEL_SIZE, KERNEL_SIZE, chunk[..TAPS].to_vec())?);
        sigmas.push(chunk[TAPS]);
    }
    NlpParams::new(template.lowpass().clone(), filters, sigmas, template.dn_mode())
}

/// Distance of one pair and its gradient with respect to [`flatten_dn`] order.
pub fn pair_distance_and_gradient(pair: &PairBands, params: &NlpParams) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let z1: Vec<_> = pair.reference.iter().map(|z| tape.leaf(z.clone())).collect();
    let z2: Vec<_> = pair.degraded.iter().map(|z| tape.leaf(z.clone())).collect();
    let dn = DnVars::record(&mut tape, params);
    let d = nlp::distance_on_tape(&mut tape, &z1, &z2, &dn);
    let grads = tape.gradient(d);
    let mut flat = Vec::with_capacity(params.n_stages() * STAGE_PARAMS);
    for (f, s) in dn.filters.iter().zip(&dn.sigmas) {
        flat.extend_from_slice(grads.get_or_zeros(*f, (KERNEL_SIZE, KERNEL_SIZE)).as_slice());
        flat.push(grads.get_or_zeros(*s, (1, 1)).get(0, 0));
    }
    (tape.scalar_value(d), flat)
}

/// Pearson correlation between distances and signed ratings for one batch,
/// with its gradient in [`flatten_dn`] order. `None` when either side has
/// zero variance.
pub fn perceptual_objective(
    batch: &[&PairBands],
    params: &NlpParams,
    sign: ObjectiveSign,
) -> Option<(f64, Vec<f64>)> {
    let per_pair: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|p| pair_distance_and_gradient(p, params))
        .collect();
    let n = batch.len();
    let distances: Vec<f64> = per_pair.iter().map(|(d, _)| *d).collect();
    let targets: Vec<f64> = batch.iter().map(|p| sign.factor() * p.rating).collect();
    if n < 2 || zero_variance(&distances) || zero_variance(&targets) {
        return None;
    }
    let mut tape = Tape::new();
    let dv = tape.leaf(Matrix::from_vec(1, n, distances).expect("row vector"));
    let tv = tape.leaf(Matrix::from_vec(1, n, targets).expect("row vector"));
    let r = tape::pearson(&mut tape, dv, tv);
    let dr_dd = tape.gradient(r).get_or_zeros(dv, (1, n));
    let mut grad = vec![0.0; per_pair[0].1.len()];
    for (w, (_, g)) in dr_dd.as_slice().iter().zip(&per_pair) {
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += w * gi;
        }
    }
    Some((tape.scalar_value(r), grad))
}

fn zero_variance(xs: &[f64]) -> bool {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() == 0.0
}

/// Groups pair indices by tag (sorted) and splits each group into batches of
/// at most `batch_size`; a trailing remainder under 3 joins the previous batch.
fn make_batches(pairs: &[PairBands], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Vec<usize>)> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.tag.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (tag, mut idx) in groups {
        idx.shuffle(rng);
        let mut chunks: Vec<Vec<usize>> = idx.chunks(batch_size.min(idx.len())).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 3) {
            let tail = chunks.pop().unwrap();
            chunks.last_mut().unwrap().extend(tail);
        }
        out.extend(chunks.into_iter().map(|c| (tag.to_string(), c)));
    }
    out
}

/// Perceptual fit from precomputed pair bands.
///
/// σ starts from the mean absolute reference band values, filters from
/// `base`. Filters are projected onto non-negative values and σ onto
/// `[SIGMA_FLOOR, ∞)` after each step.
pub fn fit_perceptual_bands(
    pairs: &[PairBands],
    base: &NlpParams,
    opt: &AdamConfig,
    popts: &PerceptualOptions,
) -> Result<FitTrace> {
    opt.validate()?;
    if pairs.is_empty() {
        return Err(Error::DegenerateData("perceptual fit needs rated pairs".into()));
    }
    let references: Vec<Vec<Matrix>> = pairs.iter().map(|p| p.reference.clone()).collect();
    let sigmas = sigma_init_dataset(&references)?;
    let init = base.with_mode(DnMode::Perceptual).with_constants(sigmas)?;
    let mut flat = flatten_dn(&init);
    let mut state = AdamState::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut batches_log = Vec::new();
    let mut epoch_objectives = Vec::with_capacity(opt.epochs);
    let mut params = init;
    for epoch in 0..opt.epochs {
        let mut sum = 0.0;
        let mut used = 0usize;
        for (tag, idx) in make_batches(pairs, opt.batch_size, &mut rng) {
            let batch: Vec<&PairBands> = idx.iter().map(|&i| &pairs[i]).collect();
            let Some((r, grad)) = perceptual_objective(&batch, &params, popts.sign) else {
                log::warn!("epoch {}: skipping batch {tag:?} with zero variance", epoch + 1);
                continue;
            };
            if !r.is_finite() {
                return Err(Error::Divergence { epoch, stage: 0 });
            }
            // Minimise -r.
            let mut loss_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            if popts.freeze_sigma {
                for chunk in loss_grad.chunks_exact_mut(STAGE_PARAMS) {
                    chunk[TAPS] = 0.0;
                }
            }
            adam_step(&mut flat, &loss_grad, &mut state, opt)?;
            for chunk in flat.chunks_exact_mut(STAGE_PARAMS) {
                for v in &mut chunk[..TAPS] {
                    *v = v.max(0.0);
                }
                chunk[TAPS] = chunk[TAPS].max(SIGMA_FLOOR);
            }
            params = unflatten_dn(&params, &flat)?;
            batches_log.push(BatchRecord {
                epoch,
                tag,
                objective: r,
            });
            sum += r;
            used += 1;
        }
        if used == 0 {
            return Err(Error::DegenerateData(
                "every batch had zero variance in ratings or distances".into(),
            ));
        }
        let mean = sum / used as f64;
        log::debug!("epoch {}: mean pearson {mean:.6}", epoch + 1);
        epoch_objectives.push(mean);
    }
    Ok(FitTrace {
        kind: ObjectiveKind::Pearson,
        epoch_objectives,
        batches: batches_log,
        params,
    })
}

/// Perceptual fit: maximise the Pearson correlation between the distance and
/// the ratings, one degradation type per batch.
pub fn fit_perceptual(
    pairs: &[RatedPair],
    base: &NlpParams,
    opt: &AdamConfig,
    popts: &PerceptualOptions,
) -> Result<FitTrace> {
    let bands: Vec<PairBands> = pairs
        .par_iter()
        .map(|p| {
            if p.reference.config != p.degraded.config {
                return Err(Error::InvalidConfig(
                    "pair spectrograms were generated with different configs".into(),
                ));
            }
            PairBands::new(&p.reference.values, &p.degraded.values, p.rating, p.tag.clone(), base)
        })
        .collect::<Result<_>>()?;
    fit_perceptual_bands(&bands, base, opt, popts)
}
