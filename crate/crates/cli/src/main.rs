//! `specmetric`: score, degrade, fit and evaluate from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specmetric::degradations::{self, DegradationKind, DegradationSpec};
use specmetric::eval::{self, EvalOptions, MetricBinding, RatingRecord, Split, BUILTIN_METRICS};
use specmetric::fitting::{self, AdamConfig, ObjectiveSign, PerceptualOptions, RatedPair};
use specmetric::metrics::SsimConfig;
use specmetric::{audio_io, kvconfig, Error, MelSpectrogram, NlpParams, SpectrogramConfig};

#[derive(Parser, Debug)]
#[command(name = "specmetric", version, about = "Perceptual audio quality metrics on mel spectrograms")]
struct Cli {
    /// key=value settings file (spectrogram keys, `params`, `jobs`).
    #[arg(long, global = true, env = "SPECMETRIC_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a degraded clip against its reference.
    Compare(CompareArgs),
    /// Apply a synthetic degradation to a clip.
    Degrade(DegradeArgs),
    /// Fit normalisation filters to spectrogram statistics.
    FitStatistical(FitStatisticalArgs),
    /// Fit normalisation filters and constants to human ratings.
    FitPerceptual(FitPerceptualArgs),
    /// Correlate metric scores with the ratings of a manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SpecArgs {
    /// key=value spectrogram settings (n_fft, hop_length, n_mels, sample_rate, fmin, fmax, scale).
    #[arg(long, value_name = "FILE")]
    spec_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Reference WAV file.
    #[arg(long = "ref", value_name = "WAV")]
    reference: PathBuf,
    /// Degraded WAV file.
    #[arg(long = "deg", value_name = "WAV")]
    degraded: PathBuf,
    /// Metric, or a comma-separated list: nlpd, msssim, ssim, nsim, mse.
    #[arg(long, default_value = "nlpd")]
    metric: String,
    /// NLPD parameter file (defaults to the bundled image-fitted values).
    #[arg(long, value_name = "JSON")]
    params: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args, Debug)]
struct DegradeArgs {
    /// Input WAV file.
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    /// waveshape, lowpass, limiter or noise.
    #[arg(long)]
    kind: String,
    /// Severity in [0, 1].
    #[arg(long)]
    intensity: f64,
    /// Noise generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output WAV file (16-bit PCM).
    #[arg(long, value_name = "WAV")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitCommon {
    /// Rating manifest; its reference clips (statistical) or rated pairs
    /// (perceptual) are the training data.
    #[arg(long, value_name = "CSV")]
    train_manifest: PathBuf,
    /// Use only the training part of the manifest (last song per genre held out).
    #[arg(long)]
    train_split: bool,
    /// Output parameter file.
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    /// Shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the optimisation trace (epoch,batch_tag,objective) here.
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args, Debug)]
struct FitStatisticalArgs {
    #[command(flatten)]
    common: FitCommon,
    /// Starting parameters (defaults to the bundled image-fitted values).
    #[arg(long, value_name = "JSON")]
    init: Option<PathBuf>,
    /// ADAM learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Passes over the training clips.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Clips per update.
    #[arg(long, default_value_t = 1)]
    batch: usize,
}

#[derive(Args, Debug)]
struct FitPerceptualArgs {
    #[command(flatten)]
    common: FitCommon,
    /// Starting parameters.
    #[arg(long, value_name = "JSON")]
    init: PathBuf,
    /// ADAM learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Passes over the degradation batches.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Largest batch; each batch holds one degradation type (default: whole type).
    #[arg(long)]
    batch: Option<usize>,
    /// Keep the normalisation constants at their initial values.
    #[arg(long)]
    freeze_sigma: bool,
    /// Correlate distance with +rating (positive) or -rating (negative).
    #[arg(long, default_value = "positive")]
    objective_sign: String,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Rating manifest.
    #[arg(long, value_name = "CSV")]
    manifest: PathBuf,
    /// Comma-separated metrics: nlpd, msssim, ssim, nsim, mse, or LABEL=PARAMS.json
    /// for an NLPD variant.
    #[arg(long, default_value = "nlpd,msssim,ssim,nsim,mse")]
    metrics: String,
    /// Report CSV (metric,degradation,n,spearman,pearson).
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Records to evaluate: all or test.
    #[arg(long, default_value = "all")]
    split: String,
    /// Parallel workers for pair scoring.
    #[arg(long)]
    jobs: Option<usize>,
    /// NLPD parameter file for the `nlpd` metric.
    #[arg(long, value_name = "JSON")]
    params: Option<PathBuf>,
    /// Externally computed scores to join by clip_id.
    #[arg(long, value_name = "CSV")]
    external: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Settings from the `--config` / `SPECMETRIC_CONFIG` file.
struct Settings {
    kv: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let kv = match path {
            Some(p) => kvconfig::read(p)?,
            None => BTreeMap::new(),
        };
        Ok(Settings { kv })
    }

    /// Defaults, then the settings file, then `--spec-config`.
    fn spectrogram(&self, spec: &SpecArgs) -> CliResult<SpectrogramConfig> {
        let mut cfg = SpectrogramConfig::default();
        cfg.overlay(&self.kv)?;
        if let Some(p) = &spec.spec_config {
            cfg.overlay(&kvconfig::read(p)?)?;
        }
        Ok(cfg)
    }

    fn params(&self, flag: Option<&Path>) -> CliResult<NlpParams> {
        match flag.map(Path::to_path_buf).or_else(|| self.kv.get("params").map(PathBuf::from)) {
            Some(p) => Ok(NlpParams::load(p)?),
            None => Ok(NlpParams::image_default()),
        }
    }

    fn jobs(&self, flag: Option<usize>) -> CliResult<Option<usize>> {
        match flag {
            Some(n) => Ok(Some(n)),
            None => self
                .kv
                .get("jobs")
                .map(|v| v.parse().map_err(|_| usage(format!("config jobs: cannot parse {v:?}"))))
                .transpose(),
        }
    }
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> CliResult<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be at least 1")))
    }
}

fn compare(settings: &Settings, args: &CompareArgs) -> CliResult<()> {
    let names: Vec<&str> = args.metric.split(',').map(str::trim).collect();
    if let Some(bad) = names.iter().find(|n| !BUILTIN_METRICS.contains(n)) {
        return Err(usage(format!(
            "unknown metric {bad:?}; expected one of {}",
            BUILTIN_METRICS.join(", ")
        )));
    }
    let cfg = settings.spectrogram(&args.spec)?;
    let params = settings.params(args.params.as_deref())?;
    let reference = eval::load_spectrogram(&args.reference, &cfg)?;
    let degraded = eval::load_spectrogram(&args.degraded, &cfg)?;
    let ssim = SsimConfig::default();
    for name in names {
        let binding = MetricBinding::from_name(name, &params, &ssim)?;
        let value = binding.score("", &reference, &degraded)?;
        println!("{name}\t{value:?}");
    }
    Ok(())
}

fn degrade(args: &DegradeArgs) -> CliResult<()> {
    let kind: DegradationKind = args.kind.parse().map_err(|e: Error| usage(e.to_string()))?;
    let spec = DegradationSpec::new(kind, args.intensity, args.seed).map_err(|e| usage(e.to_string()))?;
    let w = audio_io::read_wav(&args.input)?;
    let out = degradations::apply(&w, &spec)?;
    audio_io::write_wav(&args.out, &out)?;
    log::info!("wrote {} ({kind}, intensity {})", args.out.display(), args.intensity);
    Ok(())
}

fn training_records(common: &FitCommon) -> CliResult<Vec<RatingRecord>> {
    let records = eval::load_dataset(&common.train_manifest)?;
    Ok(if common.train_split {
        eval::split_train_test(&records).0
    } else {
        records
    })
}

/// Loads each distinct path once, in sorted order.
fn load_all(paths: BTreeSet<&PathBuf>, cfg: &SpectrogramConfig) -> CliResult<BTreeMap<PathBuf, MelSpectrogram>> {
    paths
        .into_iter()
        .map(|p| Ok((p.clone(), eval::load_spectrogram(p, cfg)?)))
        .collect()
}

fn finish_fit(common: &FitCommon, trace: &fitting::FitTrace) -> CliResult<()> {
    trace.params.save(&common.out)?;
    if let Some(t) = &common.trace {
        trace.write_csv(t)?;
    }
    if let (Some(first), Some(last)) = (trace.epoch_objectives.first(), trace.epoch_objectives.last()) {
        println!("{} objective: first epoch {first:?}, last epoch {last:?}", trace.kind);
    }
    eprintln!("wrote {}", common.out.display());
    Ok(())
}

fn fit_statistical(settings: &Settings, args: &FitStatisticalArgs) -> CliResult<()> {
    positive("lr", args.lr)?;
    at_least_one("epochs", args.epochs)?;
    at_least_one("batch", args.batch)?;
    let common = &args.common;
    let cfg = settings.spectrogram(&common.spec)?;
    let base = settings.params(args.init.as_deref())?;
    println!(
        "fit-statistical: lr={} epochs={} batch={} seed={}",
        args.lr, args.epochs, args.batch, common.seed
    );
    println!("spectrogram: {}", cfg.fingerprint());
    let records = training_records(common)?;
    let specs = load_all(records.iter().map(|r| &r.reference_path).collect(), &cfg)?;
    let train: Vec<MelSpectrogram> = specs.into_values().collect();
    eprintln!("training on {} reference spectrograms", train.len());
    let opt = AdamConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: common.seed,
        ..AdamConfig::statistical()
    };
    let trace = fitting::fit_statistical(&train, &base, &opt)?;
    finish_fit(common, &trace)
}

fn fit_perceptual(settings: &Settings, args: &FitPerceptualArgs) -> CliResult<()> {
    positive("lr", args.lr)?;
    at_least_one("epochs", args.epochs)?;
    if let Some(b) = args.batch {
        at_least_one("batch", b)?;
    }
    let sign: ObjectiveSign = args
        .objective_sign
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let common = &args.common;
    let cfg = settings.spectrogram(&common.spec)?;
    let base = NlpParams::load(&args.init)?;
    println!(
        "fit-perceptual: lr={} epochs={} batch={} seed={} freeze_sigma={} objective_sign={}",
        args.lr,
        args.epochs,
        args.batch.map_or_else(|| "per-degradation".to_string(), |b| b.to_string()),
        common.seed,
        args.freeze_sigma,
        args.objective_sign
    );
    println!("spectrogram: {}", cfg.fingerprint());
    let records: Vec<RatingRecord> = training_records(common)?
        .into_iter()
        .filter(|r| !r.is_reference())
        .collect();
    let specs = load_all(
        records.iter().flat_map(|r| [&r.reference_path, &r.degraded_path]).collect(),
        &cfg,
    )?;
    let mut records = records;
    records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let pairs: Vec<RatedPair> = records
        .iter()
        .map(|r| RatedPair {
            reference: specs[&r.reference_path].clone(),
            degraded: specs[&r.degraded_path].clone(),
            rating: r.rating,
            tag: r.degradation.clone(),
        })
        .collect();
    eprintln!("training on {} rated pairs", pairs.len());
    let opt = AdamConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch.unwrap_or(usize::MAX),
        seed: common.seed,
        ..AdamConfig::perceptual()
    };
    let popts = PerceptualOptions {
        freeze_sigma: args.freeze_sigma,
        sign,
    };
    let trace = fitting::fit_perceptual(&pairs, &base, &opt, &popts)?;
    finish_fit(common, &trace)
}

fn evaluate(settings: &Settings, args: &EvaluateArgs) -> CliResult<()> {
    let split: Split = args.split.parse().map_err(|e: Error| usage(e.to_string()))?;
    let jobs = settings.jobs(args.jobs)?;
    if let Some(j) = jobs {
        at_least_one("jobs", j)?;
    }
    let cfg = settings.spectrogram(&args.spec)?;
    let params = settings.params(args.params.as_deref())?;
    let ssim = SsimConfig::default();
    let mut bindings = Vec::new();
    for token in args.metrics.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((label, path)) = token.split_once('=') {
            let p = NlpParams::load(path)?;
            bindings.push(MetricBinding::new(label, eval::MetricKind::Nlpd(Box::new(p))));
        } else if BUILTIN_METRICS.contains(&token) {
            bindings.push(MetricBinding::from_name(token, &params, &ssim)?);
        } else {
            return Err(usage(format!(
                "unknown metric {token:?}; expected one of {} or LABEL=PARAMS.json",
                BUILTIN_METRICS.join(", ")
            )));
        }
    }
    if let Some(ext) = &args.external {
        bindings.extend(eval::load_external_scores(ext)?);
    }
    if bindings.is_empty() {
        return Err(usage("no metrics selected"));
    }
    let records = eval::load_dataset(&args.manifest)?;
    let opts = EvalOptions {
        split,
        spectrogram: cfg,
        jobs,
    };
    let report = eval::evaluate(&records, &bindings, &opts)?;
    report.write_csv(&args.out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Compare(a) => compare(&settings, a),
        Command::Degrade(a) => degrade(a),
        Command::FitStatistical(a) => fit_statistical(&settings, a),
        Command::FitPerceptual(a) => fit_perceptual(&settings, a),
        Command::Evaluate(a) => evaluate(&settings, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
