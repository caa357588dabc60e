//! Perceptual audio quality from image-quality metrics applied to mel
//! spectrograms.
//!
//! The centre of the crate is the normalised Laplacian pyramid distance
//! ([`nlp`]) with tunable divisive normalisation, fitted either to the
//! statistics of spectrograms or to human ratings ([`fitting`]). Around it sit
//! the audio front-end ([`audio_io`], [`spectrogram`]), SSIM-family baselines
//! ([`metrics`]), a degradation synthesiser ([`degradations`]) and the rating
//! correlation harness ([`eval`]).

pub mod audio_io;
pub mod degradations;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod kvconfig;
pub mod matrix;
pub mod metrics;
pub mod nlp;
pub mod spectrogram;
pub mod tape;

pub use audio_io::{decode_wav, encode_wav_16bit, resample, Waveform};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::SsimConfig;
pub use nlp::{build_pyramid, nlpd, DnMode, NlpParams, PyramidOutputs};
pub use spectrogram::{mel_spectrogram, AmplitudeScale, MelSpectrogram, SpectrogramConfig};
pub use degradations::{DegradationKind, DegradationSpec};
pub use eval::{evaluate, load_dataset, pearson, spearman, EvalOptions, EvalReport, MetricBinding, RatingRecord, Split};
pub use fitting::{fit_perceptual, fit_statistical, AdamConfig, FitTrace, RatedPair};
