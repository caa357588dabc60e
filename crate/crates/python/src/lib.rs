//! Python bindings: waveforms, mel spectrograms, NLPD and the baseline
//! metrics, correlations and degradations.
//!
//! Core errors surface as `specmetric_py.SpecmetricError` (a `ValueError`).

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use specmetric::{audio_io, degradations, eval, metrics, nlp, spectrogram};

create_exception!(specmetric_py, SpecmetricError, PyValueError);

fn py_err(e: specmetric::Error) -> PyErr {
    SpecmetricError::new_err(e.to_string())
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for specmetric::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Mono audio in [-1, 1] at a fixed sample rate.
#[pyclass(name = "Waveform", module = "specmetric_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyWaveform(pub audio_io::Waveform);

#[pymethods]
impl PyWaveform {
    #[new]
    #[pyo3(signature = (samples, sample_rate, source_id = String::new()))]
    fn new(samples: Vec<f64>, sample_rate: u32, source_id: String) -> PyResult<Self> {
        audio_io::Waveform::new(samples, sample_rate, source_id).py().map(PyWaveform)
    }

    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.0.samples().to_vec()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.0.sample_rate()
    }

    #[getter]
    fn source_id(&self) -> &str {
        self.0.source_id()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn duration(&self) -> f64 {
        self.0.duration_secs()
    }

    /// 16-bit PCM WAV bytes.
    fn to_wav_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &audio_io::encode_wav_16bit(&self.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "Waveform(len={}, sample_rate={}, source_id={:?})",
            self.0.len(),
            self.0.sample_rate(),
            self.0.source_id()
        )
    }
}

/// STFT and mel filterbank settings.
#[pyclass(name = "SpectrogramConfig", module = "specmetric_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PySpectrogramConfig(pub spectrogram::SpectrogramConfig);

#[pymethods]
impl PySpectrogramConfig {
    #[new]
    #[pyo3(signature = (n_fft = 2048, hop_length = 64, n_mels = 512, sample_rate = 16050, fmin = 0.0, fmax = None, scale = "log_power"))]
    fn new(
        n_fft: usize,
        hop_length: usize,
        n_mels: usize,
        sample_rate: u32,
        fmin: f64,
        fmax: Option<f64>,
        scale: &str,
    ) -> PyResult<Self> {
        let cfg = spectrogram::SpectrogramConfig {
            n_fft,
            hop_length,
            n_mels,
            sample_rate,
            fmin,
            fmax,
            scale: scale.parse().py()?,
        };
        cfg.validate().py()?;
        Ok(PySpectrogramConfig(cfg))
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("SpectrogramConfig({})", self.0.fingerprint())
    }
}

/// A mel spectrogram (`n_mels` rows by frames).
#[pyclass(name = "MelSpectrogram", module = "specmetric_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyMelSpectrogram(pub spectrogram::MelSpectrogram);

#[pymethods]
impl PyMelSpectrogram {
    /// Wraps a precomputed matrix (list of rows) under the given config.
    #[staticmethod]
    #[pyo3(signature = (rows, config = None))]
    fn from_rows(rows: Vec<Vec<f64>>, config: Option<PySpectrogramConfig>) -> PyResult<Self> {
        let values = specmetric::Matrix::from_rows(&rows).py()?;
        let cfg = config.map(|c| c.0).unwrap_or_default();
        Ok(PyMelSpectrogram(spectrogram::MelSpectrogram::from_matrix(values, cfg, "")))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn config(&self) -> PySpectrogramConfig {
        PySpectrogramConfig(self.0.config.clone())
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.0.values.to_rows()
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.0.shape();
        format!("MelSpectrogram(shape=({r}, {c}))")
    }
}

/// Laplacian pyramid filters and divisive normalisation parameters.
#[pyclass(name = "NlpParams", module = "specmetric_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyNlpParams(pub nlp::NlpParams);

#[pymethods]
impl PyNlpParams {
    /// The image-domain defaults.
    #[staticmethod]
    fn image_default() -> Self {
        PyNlpParams(nlp::NlpParams::image_default())
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        nlp::NlpParams::load(path).py().map(PyNlpParams)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        nlp::NlpParams::from_json(text).py().map(PyNlpParams)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).py()
    }

    #[getter]
    fn n_stages(&self) -> usize {
        self.0.n_stages()
    }

    #[getter]
    fn dn_constants(&self) -> Vec<f64> {
        self.0.dn_constants().to_vec()
    }

    #[getter]
    fn dn_mode(&self) -> &'static str {
        self.0.dn_mode().as_str()
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("NlpParams({})", self.0.fingerprint())
    }
}

#[pyfunction]
fn decode_wav(data: &[u8]) -> PyResult<PyWaveform> {
    audio_io::decode_wav(data).py().map(PyWaveform)
}

#[pyfunction]
fn read_wav(path: &str) -> PyResult<PyWaveform> {
    audio_io::read_wav(path).py().map(PyWaveform)
}

#[pyfunction]
fn write_wav(path: &str, waveform: &PyWaveform) -> PyResult<()> {
    audio_io::write_wav(path, &waveform.0).py()
}

#[pyfunction]
fn resample(waveform: &PyWaveform, target_rate: u32) -> PyResult<PyWaveform> {
    audio_io::resample(&waveform.0, target_rate).py().map(PyWaveform)
}

#[pyfunction]
#[pyo3(signature = (waveform, config = None))]
fn mel_spectrogram(waveform: &PyWaveform, config: Option<PySpectrogramConfig>) -> PyResult<PyMelSpectrogram> {
    let cfg = config.map(|c| c.0).unwrap_or_default();
    spectrogram::mel_spectrogram(&waveform.0, &cfg).py().map(PyMelSpectrogram)
}

#[pyfunction]
#[pyo3(signature = (reference, degraded, params = None))]
fn nlpd(reference: &PyMelSpectrogram, degraded: &PyMelSpectrogram, params: Option<PyNlpParams>) -> PyResult<f64> {
    let p = params.map(|p| p.0).unwrap_or_else(nlp::NlpParams::image_default);
    nlp::nlpd(&reference.0, &degraded.0, &p).py()
}

#[pyfunction]
fn mse(reference: &PyMelSpectrogram, degraded: &PyMelSpectrogram) -> PyResult<f64> {
    metrics::mse(&reference.0, &degraded.0).py()
}

#[pyfunction]
fn ssim(reference: &PyMelSpectrogram, degraded: &PyMelSpectrogram) -> PyResult<f64> {
    metrics::ssim(&reference.0, &degraded.0, &metrics::SsimConfig::default()).py()
}

#[pyfunction]
fn ms_ssim(reference: &PyMelSpectrogram, degraded: &PyMelSpectrogram) -> PyResult<f64> {
    metrics::ms_ssim(&reference.0, &degraded.0, &metrics::SsimConfig::default()).py()
}

#[pyfunction]
fn nsim(reference: &PyMelSpectrogram, degraded: &PyMelSpectrogram) -> PyResult<f64> {
    metrics::nsim(&reference.0, &degraded.0, &metrics::SsimConfig::default()).py()
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    eval::pearson(&xs, &ys).py()
}

#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    eval::spearman(&xs, &ys).py()
}

/// Applies `kind` (waveshape, lowpass, limiter, noise) at `intensity` in [0, 1].
#[pyfunction]
#[pyo3(signature = (waveform, kind, intensity, seed = 0))]
fn degrade(waveform: &PyWaveform, kind: &str, intensity: f64, seed: u64) -> PyResult<PyWaveform> {
    let spec = degradations::DegradationSpec::new(kind.parse().py()?, intensity, seed).py()?;
    degradations::apply(&waveform.0, &spec).py().map(PyWaveform)
}

#[pymodule]
fn specmetric_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpecmetricError", m.py().get_type::<SpecmetricError>())?;
    m.add_class::<PyWaveform>()?;
    m.add_class::<PySpectrogramConfig>()?;
    m.add_class::<PyMelSpectrogram>()?;
    m.add_class::<PyNlpParams>()?;
    m.add_function(wrap_pyfunction!(decode_wav, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(nlpd, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(nsim, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    Ok(())
}
