//! Normalised Laplacian pyramid and the NLPD distance.
//!
//! Each stage splits its input `x` into a band-pass residual
//! `z = x - L ⊛ up(down(L ⊛ x))` and a half-size low-pass image that feeds the
//! next stage; the last stage keeps its input as `z`. Bands are then divided
//! by `σ + P ⊛ |z|`. The distance averages, over stages, the RMS difference of
//! the normalised bands of two inputs.
//!
//! All filtering uses mirror boundaries. Upsampling zero-stuffs into the
//! recorded pre-downsample shape and filters with `L` at gain 4, so
//! `x = L ⊛ up(x_next) + z` holds by construction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::spectrogram::MelSpectrogram;
use crate::tape::{Tape, Var};

pub const KERNEL_SIZE: usize = 5;
pub const PARAMS_VERSION: u32 = 1;

const IMAGE_DEFAULT_PARAMS: &str = include_str!("../params/image_default.json");

/// How the divisive-normalisation stage is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnMode {
    /// Filters fitted to natural images.
    ImageDefault,
    /// No normalisation: `y = z`.
    None,
    /// All-ones 5x5 filters with the stored constants.
    Ones,
    Statistical,
    Perceptual,
}

impl DnMode {
    pub const ALL: [DnMode; 5] = [
        DnMode::ImageDefault,
        DnMode::None,
        DnMode::Ones,
        DnMode::Statistical,
        DnMode::Perceptual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DnMode::ImageDefault => "image_default",
            DnMode::None => "none",
            DnMode::Ones => "ones",
            DnMode::Statistical => "statistical",
            DnMode::Perceptual => "perceptual",
        }
    }
}

impl fmt::Display for DnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DnMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown dn_mode {s:?}")))
    }
}

/// `[1, 4, 6, 4, 1] / 16` outer product.
pub fn binomial_lowpass() -> Matrix {
    let taps = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    Matrix::outer(&taps, &taps)
}

/// Pyramid and divisive-normalisation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpParams {
    n_stages: usize,
    lowpass: Matrix,
    dn_filters: Vec<Matrix>,
    dn_constants: Vec<f64>,
    dn_mode: DnMode,
}

#[derive(Serialize, Deserialize)]
struct StageDoc {
    filter: Vec<f64>,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    version: u32,
    n_stages: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dn_mode: Option<DnMode>,
    lowpass: Vec<f64>,
    stages: Vec<StageDoc>,
}

fn kernel_from(values: Vec<f64>, what: &str) -> Result<Matrix> {
    if values.len() != KERNEL_SIZE * KERNEL_SIZE {
        return Err(Error::InvalidParams(format!(
            "{what}: expected {} values, got {}",
            KERNEL_SIZE * KERNEL_SIZE,
            values.len()
        )));
    }
    Matrix::from_vec(KERNEL_SIZE, KERNEL_SIZE, values)
}

impl NlpParams {
    pub fn new(
        lowpass: Matrix,
        dn_filters: Vec<Matrix>,
        dn_constants: Vec<f64>,
        dn_mode: DnMode,
    ) -> Result<Self> {
        let p = NlpParams {
            n_stages: dn_filters.len(),
            lowpass,
            dn_filters,
            dn_constants,
            dn_mode,
        };
        p.validate()?;
        Ok(p)
    }

    /// Binomial low-pass, uniform filters `filter_value` and constants `sigma`.
    pub fn uniform(n_stages: usize, filter_value: f64, sigma: f64, dn_mode: DnMode) -> Result<Self> {
        Self::new(
            binomial_lowpass(),
            vec![Matrix::filled(KERNEL_SIZE, KERNEL_SIZE, filter_value); n_stages],
            vec![sigma; n_stages],
            dn_mode,
        )
    }

    /// The bundled image-fitted parameters (six stages).
    pub fn image_default() -> Self {
        Self::from_json(IMAGE_DEFAULT_PARAMS).expect("bundled image_default params are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.n_stages == 0 {
            return bad("n_stages must be at least 1".into());
        }
        if self.dn_constants.len() != self.n_stages {
            return bad(format!(
                "{} filters but {} constants",
                self.n_stages,
                self.dn_constants.len()
            ));
        }
        let square = (KERNEL_SIZE, KERNEL_SIZE);
        if self.lowpass.shape() != square || !self.lowpass.all_finite() {
            return bad("lowpass must be a finite 5x5 kernel".into());
        }
        for (k, f) in self.dn_filters.iter().enumerate() {
            if f.shape() != square {
                return bad(format!("stage {k}: filter must be 5x5, got {:?}", f.shape()));
            }
            if f.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return bad(format!("stage {k}: filter entries must be finite and non-negative"));
            }
        }
        for (k, &s) in self.dn_constants.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return bad(format!("stage {k}: sigma must be positive, got {s}"));
            }
        }
        Ok(())
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn lowpass(&self) -> &Matrix {
        &self.lowpass
    }

    pub fn dn_filters(&self) -> &[Matrix] {
        &self.dn_filters
    }

    pub fn dn_constants(&self) -> &[f64] {
        &self.dn_constants
    }

    pub fn dn_mode(&self) -> DnMode {
        self.dn_mode
    }

    pub fn with_mode(&self, dn_mode: DnMode) -> Self {
        NlpParams {
            dn_mode,
            ..self.clone()
        }
    }

    pub fn with_constants(&self, dn_constants: Vec<f64>) -> Result<Self> {
        let p = NlpParams {
            dn_constants,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_filters(&self, dn_filters: Vec<Matrix>) -> Result<Self> {
        let p = NlpParams {
            dn_filters,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    /// Filter actually applied at `stage`, or `None` when normalisation is off.
    pub fn effective_filter(&self, stage: usize) -> Option<Matrix> {
        match self.dn_mode {
            DnMode::None => None,
            DnMode::Ones => Some(Matrix::filled(KERNEL_SIZE, KERNEL_SIZE, 1.0)),
            _ => Some(self.dn_filters[stage].clone()),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = ParamsDoc {
            version: PARAMS_VERSION,
            n_stages: self.n_stages,
            dn_mode: Some(self.dn_mode),
            lowpass: self.lowpass.as_slice().to_vec(),
            stages: self
                .dn_filters
                .iter()
                .zip(&self.dn_constants)
                .map(|(f, &sigma)| StageDoc {
                    filter: f.as_slice().to_vec(),
                    sigma,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("params serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_str(text)?;
        if doc.version != PARAMS_VERSION {
            return Err(Error::InvalidParams(format!(
                "unsupported params version {}",
                doc.version
            )));
        }
        if doc.stages.len() != doc.n_stages {
            return Err(Error::InvalidParams(format!(
                "n_stages is {} but {} stages are listed",
                doc.n_stages,
                doc.stages.len()
            )));
        }
        let lowpass = kernel_from(doc.lowpass, "lowpass")?;
        let mut filters = Vec::with_capacity(doc.n_stages);
        let mut sigmas = Vec::with_capacity(doc.n_stages);
        for (k, st) in doc.stages.into_iter().enumerate() {
            filters.push(kernel_from(st.filter, &format!("stage {k} filter"))?);
            sigmas.push(st.sigma);
        }
        Self::new(lowpass, filters, sigmas, doc.dn_mode.unwrap_or(DnMode::ImageDefault))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Short provenance string for reports.
    pub fn fingerprint(&self) -> String {
        format!(
            "n_stages={} dn_mode={} sigma={:?}",
            self.n_stages, self.dn_mode, self.dn_constants
        )
    }
}

impl Default for NlpParams {
    fn default() -> Self {
        Self::image_default()
    }
}

/// Per-stage pyramid bands.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidOutputs {
    /// Band-pass residuals before normalisation, finest first.
    pub bands_z: Vec<Matrix>,
    /// Normalised bands.
    pub bands_y: Vec<Matrix>,
}

impl PyramidOutputs {
    /// Coefficient count per stage.
    pub fn sizes(&self) -> Vec<usize> {
        self.bands_z.iter().map(Matrix::len).collect()
    }
}

pub(crate) fn check_stage_capacity(shape: (usize, usize), n_stages: usize) -> Result<()> {
    let (rows, cols) = shape;
    let min = 1usize << (n_stages.saturating_sub(1)).min(63);
    if n_stages == 0 || rows < min || cols < min {
        let smallest = rows.min(cols).max(1);
        return Err(Error::StageUnderflow {
            rows,
            cols,
            n_stages,
            min,
            suggested: smallest.ilog2() as usize + 1,
        });
    }
    Ok(())
}

/// Upsamples `low` to `rows x cols` (zero-stuff, gain 4, then low-pass).
pub fn upsample(low: &Matrix, rows: usize, cols: usize, lowpass: &Matrix) -> Matrix {
    matrix::filter2d(&matrix::zero_stuff(low, rows, cols), lowpass)
}

/// Laplacian bands `z` (finest first); the last band is the coarsest low-pass image.
pub fn laplacian_bands(x: &Matrix, n_stages: usize, lowpass: &Matrix) -> Result<Vec<Matrix>> {
    check_stage_capacity(x.shape(), n_stages)?;
    let mut bands = Vec::with_capacity(n_stages);
    let mut current = x.clone();
    for _ in 0..n_stages - 1 {
        let low = matrix::downsample2(&matrix::filter2d(&current, lowpass));
        let up = upsample(&low, current.rows(), current.cols(), lowpass);
        bands.push(current.zip_map(&up, |a, b| a - b));
        current = low;
    }
    bands.push(current);
    Ok(bands)
}

/// Inverts [`laplacian_bands`].
pub fn reconstruct(bands: &[Matrix], lowpass: &Matrix) -> Matrix {
    let mut iter = bands.iter().rev();
    let mut current = iter.next().expect("at least one band").clone();
    for z in iter {
        let up = upsample(&current, z.rows(), z.cols(), lowpass);
        current = up.zip_map(z, |u, z| u + z);
    }
    current
}

/// `z / (σ + P ⊛ |z|)`, or `z` unchanged without a filter.
pub fn normalize_band(z: &Matrix, filter: Option<&Matrix>, sigma: f64) -> Matrix {
    match filter {
        None => z.clone(),
        Some(p) => {
            let pooled = matrix::filter2d(&z.map(f64::abs), p);
            z.zip_map(&pooled, |z, s| z / (sigma + s))
        }
    }
}

pub fn build_pyramid_matrix(x: &Matrix, p: &NlpParams) -> Result<PyramidOutputs> {
    let bands_z = laplacian_bands(x, p.n_stages(), p.lowpass())?;
    let bands_y = bands_z
        .iter()
        .enumerate()
        .map(|(k, z)| normalize_band(z, p.effective_filter(k).as_ref(), p.dn_constants()[k]))
        .collect();
    Ok(PyramidOutputs { bands_z, bands_y })
}

pub fn build_pyramid(x: &MelSpectrogram, p: &NlpParams) -> Result<PyramidOutputs> {
    build_pyramid_matrix(&x.values, p)
}

/// Mean over stages of `‖y₁ − y₂‖₂ / √N_s`.
pub fn distance_from_bands(y1: &[Matrix], y2: &[Matrix]) -> f64 {
    let mut total = 0.0;
    for (a, b) in y1.iter().zip(y2) {
        let sq: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        total += sq.sqrt() * (1.0 / (a.len() as f64).sqrt());
    }
    total * (1.0 / y1.len() as f64)
}

pub fn nlpd_matrix(a: &Matrix, b: &Matrix, p: &NlpParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let pa = build_pyramid_matrix(a, p)?;
    let pb = build_pyramid_matrix(b, p)?;
    Ok(distance_from_bands(&pa.bands_y, &pb.bands_y))
}

pub fn nlpd(x1: &MelSpectrogram, x2: &MelSpectrogram, p: &NlpParams) -> Result<f64> {
    x1.values.ensure_same_shape(&x2.values)?;
    if x1.config != x2.config {
        return Err(Error::InvalidConfig(
            "spectrograms were generated with different configs".into(),
        ));
    }
    nlpd_matrix(&x1.values, &x2.values, p)
}

/// Divisive-normalisation parameters recorded as tape leaves.
#[derive(Debug, Clone)]
pub struct DnVars {
    pub filters: Vec<Var>,
    pub sigmas: Vec<Var>,
    pub enabled: bool,
}

impl DnVars {
    pub fn record(tape: &mut Tape, p: &NlpParams) -> Self {
        let filters = (0..p.n_stages())
            .map(|k| {
                let f = p
                    .effective_filter(k)
                    .unwrap_or_else(|| Matrix::zeros(KERNEL_SIZE, KERNEL_SIZE));
                tape.leaf(f)
            })
            .collect();
        let sigmas = p.dn_constants().iter().map(|&s| tape.scalar(s)).collect();
        DnVars {
            filters,
            sigmas,
            enabled: p.dn_mode() != DnMode::None,
        }
    }
}

/// [`laplacian_bands`] recorded on a tape.
pub fn laplacian_bands_on_tape(tape: &mut Tape, x: Var, n_stages: usize, lowpass: Var) -> Result<Vec<Var>> {
    check_stage_capacity(tape.value(x).shape(), n_stages)?;
    let mut bands = Vec::with_capacity(n_stages);
    let mut current = x;
    for _ in 0..n_stages - 1 {
        let (rows, cols) = tape.value(current).shape();
        let smoothed = tape.filter(current, lowpass);
        let low = tape.downsample(smoothed);
        let stuffed = tape.zero_stuff(low, rows, cols);
        let up = tape.filter(stuffed, lowpass);
        bands.push(tape.sub(current, up));
        current = low;
    }
    bands.push(current);
    Ok(bands)
}

pub fn normalize_band_on_tape(tape: &mut Tape, z: Var, filter: Var, sigma: Var) -> Var {
    let magnitude = tape.abs(z);
    let pooled = tape.filter(magnitude, filter);
    let denom = tape.add(pooled, sigma);
    tape.div(z, denom)
}

/// The distance between two band sets, recorded on a tape.
pub fn distance_on_tape(tape: &mut Tape, z1: &[Var], z2: &[Var], dn: &DnVars) -> Var {
    let n = z1.len();
    let mut total: Option<Var> = None;
    for k in 0..n {
        let (y1, y2) = if dn.enabled {
            (
                normalize_band_on_tape(tape, z1[k], dn.filters[k], dn.sigmas[k]),
                normalize_band_on_tape(tape, z2[k], dn.filters[k], dn.sigmas[k]),
            )
        } else {
            (z1[k], z2[k])
        };
        let count = tape.value(y1).len() as f64;
        let diff = tape.sub(y1, y2);
        let sq = tape.mul(diff, diff);
        let ss = tape.sum(sq);
        let norm = tape.sqrt(ss);
        let term = tape.scale(norm, 1.0 / count.sqrt());
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term),
        });
    }
    let total = total.expect("at least one stage");
    tape.scale(total, 1.0 / n as f64)
}
