//! Correlating metric scores with human ratings.
//!
//! [`evaluate`] loads every clip of a manifest once, scores each
//! reference/degraded pair with every metric and reports Spearman and Pearson
//! coefficients per degradation type and over all rows.

mod correlation;
mod dataset;

pub use correlation::{average_ranks, pearson, spearman};
pub use dataset::{
    load_dataset, parse_manifest, split_train_test, RatingRecord, DEGRADATION_TAGS, MANIFEST_COLUMNS,
    REFERENCE_TAG,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::audio_io::{read_wav, resample};
use crate::error::{Error, Result};
use crate::metrics::{self, SsimConfig};
use crate::nlp::{self, NlpParams};
use crate::spectrogram::{mel_spectrogram, MelSpectrogram, SpectrogramConfig};

/// Label of the row computed over every evaluated record.
pub const ALL_SUBSET: &str = "all";

/// Per-degradation subsets in report order, followed by [`ALL_SUBSET`].
pub const REPORT_SUBSETS: [&str; 5] = ["waveshape", "lowpass", "limiter", "noise", ALL_SUBSET];

/// Reads a WAV file, resamples it to the configured rate if needed and
/// computes its mel spectrogram.
pub fn load_spectrogram(path: impl AsRef<Path>, cfg: &SpectrogramConfig) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut w = read_wav(path)?;
    if w.sample_rate() != cfg.sample_rate {
        w = resample(&w, cfg.sample_rate)?;
    }
    mel_spectrogram(&w, cfg)
}

/// How a metric turns a spectrogram pair into a score.
#[derive(Debug, Clone)]
pub enum MetricKind {
    Nlpd(Box<NlpParams>),
    Mse,
    Ssim(SsimConfig),
    MsSsim(SsimConfig),
    Nsim(SsimConfig),
    /// Scores computed elsewhere, keyed by clip id.
    External(BTreeMap<String, f64>),
}

/// A named metric to evaluate.
#[derive(Debug, Clone)]
pub struct MetricBinding {
    pub name: String,
    pub kind: MetricKind,
}

/// Names accepted by [`MetricBinding::from_name`].
pub const BUILTIN_METRICS: [&str; 5] = ["nlpd", "mse", "ssim", "msssim", "nsim"];

impl MetricBinding {
    pub fn new(name: impl Into<String>, kind: MetricKind) -> Self {
        MetricBinding { name: name.into(), kind }
    }

    /// One of [`BUILTIN_METRICS`], configured with `params` / `ssim`.
    pub fn from_name(name: &str, params: &NlpParams, ssim: &SsimConfig) -> Result<Self> {
        let kind = match name {
            "nlpd" => MetricKind::Nlpd(Box::new(params.clone())),
            "mse" => MetricKind::Mse,
            "ssim" => MetricKind::Ssim(ssim.clone()),
            "msssim" | "ms_ssim" => MetricKind::MsSsim(ssim.clone()),
            "nsim" => MetricKind::Nsim(ssim.clone()),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown metric {other:?}; expected one of {}",
                    BUILTIN_METRICS.join(", ")
                )))
            }
        };
        Ok(MetricBinding::new(name, kind))
    }

    pub fn needs_audio(&self) -> bool {
        !matches!(self.kind, MetricKind::External(_))
    }

    pub fn score(&self, clip_id: &str, reference: &MelSpectrogram, degraded: &MelSpectrogram) -> Result<f64> {
        match &self.kind {
            MetricKind::Nlpd(p) => nlp::nlpd(reference, degraded, p),
            MetricKind::Mse => metrics::mse(reference, degraded),
            MetricKind::Ssim(c) => metrics::ssim(reference, degraded, c),
            MetricKind::MsSsim(c) => metrics::ms_ssim(reference, degraded, c),
            MetricKind::Nsim(c) => metrics::nsim(reference, degraded, c),
            MetricKind::External(scores) => self.external_score(scores, clip_id),
        }
    }

    fn external_score(&self, scores: &BTreeMap<String, f64>, clip_id: &str) -> Result<f64> {
        scores.get(clip_id).copied().ok_or_else(|| {
            Error::DegenerateData(format!("no external {} score for clip {clip_id:?}", self.name))
        })
    }

    /// Configuration identity, echoed into reports for provenance.
    pub fn fingerprint(&self) -> String {
        match &self.kind {
            MetricKind::Nlpd(p) => format!("nlpd:{}", p.fingerprint()),
            MetricKind::Mse => "mse".into(),
            MetricKind::Ssim(c) => format!("ssim:{}", c.fingerprint()),
            MetricKind::MsSsim(c) => format!("msssim:{}", c.fingerprint()),
            MetricKind::Nsim(c) => format!("nsim:{}", c.fingerprint()),
            MetricKind::External(s) => format!("external:{} clips", s.len()),
        }
    }
}

/// Reads `external_scores.csv`: a `clip_id` column plus one column per
/// externally computed metric. Empty cells are treated as missing.
pub fn load_external_scores(path: impl AsRef<Path>) -> Result<Vec<MetricBinding>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let id_col = headers.iter().position(|h| h == "clip_id").ok_or_else(|| Error::Dataset {
        row: 1,
        message: "external scores need a clip_id column".into(),
    })?;
    let mut columns: Vec<(String, BTreeMap<String, f64>)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_col)
        .map(|(_, h)| (h.to_string(), BTreeMap::new()))
        .collect();
    for result in rdr.records() {
        let rec = result?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let clip = rec.get(id_col).unwrap_or("").to_string();
        let mut col = 0;
        for (i, cell) in rec.iter().enumerate() {
            if i == id_col {
                continue;
            }
            if !cell.is_empty() {
                let v: f64 = cell.parse().map_err(|_| Error::Dataset {
                    row,
                    message: format!("unparseable score {cell:?}"),
                })?;
                columns[col].1.insert(clip.clone(), v);
            }
            col += 1;
        }
    }
    Ok(columns
        .into_iter()
        .map(|(name, scores)| MetricBinding::new(name, MetricKind::External(scores)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    All,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("split must be all or test, got {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub split: Split,
    pub spectrogram: SpectrogramConfig,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub degradation: String,
    pub n: usize,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
}

/// A record or a single metric that could not be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFailure {
    pub clip_id: String,
    pub metric: Option<String>,
    pub message: String,
}

/// Scores of one record, one entry per metric (`None` when it failed).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub clip_id: String,
    pub degradation: String,
    pub rating: f64,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Ordered by metric, then [`REPORT_SUBSETS`].
    pub rows: Vec<ReportRow>,
    /// `(metric, fingerprint)` in metric order.
    pub fingerprints: Vec<(String, String)>,
    pub spectrogram_fingerprint: String,
    pub split: Split,
    pub n_records: usize,
    pub failures: Vec<RecordFailure>,
    /// Successfully loaded records in clip-id order.
    pub scores: Vec<ClipScores>,
}

fn fmt_coef(c: Option<f64>) -> String {
    c.map_or_else(|| "NaN".to_string(), |v| format!("{v:?}"))
}

impl EvalReport {
    pub fn row(&self, metric: &str, degradation: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.degradation == degradation)
    }

    /// `metric,degradation,n,spearman,pearson`; undefined coefficients are `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,degradation,n,spearman,pearson\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.metric,
                r.degradation,
                r.n,
                fmt_coef(r.spearman),
                fmt_coef(r.pearson)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    /// Spearman coefficients as a table: one row per metric, one column per
    /// degradation plus all data, followed by provenance lines.
    pub fn to_table(&self) -> String {
        let headers = ["Metric", "WaveShape", "LowPass", "Limiter", "Noise", "All data"];
        let mut metrics: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|h| h.to_string()).collect()];
        for m in &metrics {
            let mut line = vec![m.to_string()];
            for subset in REPORT_SUBSETS {
                line.push(match self.row(m, subset).and_then(|r| r.spearman) {
                    Some(v) => format!("{v:.3}"),
                    None => "-".into(),
                });
            }
            cells.push(line);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| cells.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in cells.iter().enumerate() {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            out.push_str(padded.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        out.push_str(&format!(
            "\nsplit: {}; records: {}; failures: {}\nspectrogram: {}\n",
            self.split,
            self.n_records,
            self.failures.len(),
            self.spectrogram_fingerprint
        ));
        for (m, fp) in &self.fingerprints {
            out.push_str(&format!("{m}: {fp}\n"));
        }
        out
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn coefficient(
    f: fn(&[f64], &[f64]) -> Result<f64>,
    xs: &[f64],
    ys: &[f64],
    what: &str,
) -> Option<f64> {
    match f(xs, ys) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{what}: {e}");
            None
        }
    }
}

/// Scores every record with every metric and correlates with the ratings.
///
/// Records are processed in clip-id order regardless of input order. A record
/// whose audio cannot be loaded is excluded from every coefficient; more than
/// 10% such records aborts the run. A metric that fails on a loaded record
/// (say, a missing external score) excludes the record from that metric only.
pub fn evaluate(records: &[RatingRecord], metrics: &[MetricBinding], opts: &EvalOptions) -> Result<EvalReport> {
    opts.spectrogram.validate()?;
    let mut selected = match opts.split {
        Split::All => records.to_vec(),
        Split::Test => split_train_test(records).1,
    };
    selected.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let need_audio = metrics.iter().any(MetricBinding::needs_audio);
    let paths: Vec<&PathBuf> = if need_audio {
        selected
            .iter()
            .flat_map(|r| [&r.reference_path, &r.degraded_path])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        Vec::new()
    };

    let (spectrograms, scored) = with_pool(opts.jobs, || {
        let spectrograms: HashMap<&PathBuf, std::result::Result<MelSpectrogram, String>> = paths
            .par_iter()
            .map(|&p| (p, load_spectrogram(p, &opts.spectrogram).map_err(|e| e.to_string())))
            .collect();
        let scored: Vec<std::result::Result<Vec<std::result::Result<f64, String>>, String>> = selected
            .par_iter()
            .map(|r| {
                let pair = if need_audio {
                    let a = spectrograms[&r.reference_path].as_ref().map_err(Clone::clone)?;
                    let b = spectrograms[&r.degraded_path].as_ref().map_err(Clone::clone)?;
                    Some((a, b))
                } else {
                    None
                };
                Ok(metrics
                    .iter()
                    .map(|m| match (&m.kind, pair) {
                        (MetricKind::External(s), _) => m.external_score(s, &r.clip_id),
                        (_, Some((a, b))) => m.score(&r.clip_id, a, b),
                        (_, None) => unreachable!("audio metrics load spectrograms"),
                    }
                    .map_err(|e| e.to_string()))
                    .collect())
            })
            .collect();
        (spectrograms.len(), scored)
    })?;
    log::info!("loaded {spectrograms} spectrograms for {} records", selected.len());

    let mut failures = Vec::new();
    let mut scores = Vec::new();
    let mut failed_records = 0usize;
    for (r, result) in selected.iter().zip(scored) {
        match result {
            Err(message) => {
                failed_records += 1;
                failures.push(RecordFailure {
                    clip_id: r.clip_id.clone(),
                    metric: None,
                    message,
                });
            }
            Ok(values) => {
                let values = values
                    .into_iter()
                    .zip(metrics)
                    .map(|(v, m)| {
                        v.map_err(|message| {
                            failures.push(RecordFailure {
                                clip_id: r.clip_id.clone(),
                                metric: Some(m.name.clone()),
                                message,
                            });
                        })
                        .ok()
                    })
                    .collect();
                scores.push(ClipScores {
                    clip_id: r.clip_id.clone(),
                    degradation: r.degradation.clone(),
                    rating: r.rating,
                    values,
                });
            }
        }
    }
    for f in &failures {
        log::warn!(
            "clip {}{}: {}",
            f.clip_id,
            f.metric.as_deref().map(|m| format!(" ({m})")).unwrap_or_default(),
            f.message
        );
    }
    if failed_records * 10 > selected.len() {
        return Err(Error::TooManyFailures {
            failed: failed_records,
            total: selected.len(),
        });
    }

    let mut rows = Vec::new();
    for (mi, m) in metrics.iter().enumerate() {
        for subset in REPORT_SUBSETS {
            let (xs, ys): (Vec<f64>, Vec<f64>) = scores
                .iter()
                .filter(|s| subset == ALL_SUBSET || s.degradation == subset)
                .filter_map(|s| s.values[mi].map(|v| (v, s.rating)))
                .unzip();
            let what = format!("{} / {subset}", m.name);
            rows.push(ReportRow {
                metric: m.name.clone(),
                degradation: subset.to_string(),
                n: xs.len(),
                spearman: coefficient(spearman, &xs, &ys, &what),
                pearson: coefficient(pearson, &xs, &ys, &what),
            });
        }
    }
    Ok(EvalReport {
        rows,
        fingerprints: metrics.iter().map(|m| (m.name.clone(), m.fingerprint())).collect(),
        spectrogram_fingerprint: opts.spectrogram.fingerprint(),
        split: opts.split,
        n_records: selected.len(),
        failures,
        scores,
    })
}
