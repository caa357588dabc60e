mod common;

use std::fmt::Write as _;
use std::path::Path;

use specmetric::audio_io::write_wav;
use specmetric::degradations::{apply, DegradationKind, DegradationSpec};
use specmetric::eval::{
    self, load_external_scores, parse_manifest, split_train_test, EvalOptions, MetricBinding, RatingRecord, Split,
};
use specmetric::metrics::SsimConfig;
use specmetric::{Error, NlpParams};

const HEADER: &str = "clip_id,genre,song,degradation,rating,reference_path,degraded_path\n";

/// Writes reference and degraded clips for `genres × songs` and returns the
/// manifest text (ratings fixed at 3).
fn build_dataset(dir: &Path, genres: usize, songs: usize) -> String {
    let mut manifest = String::from(HEADER);
    let mut seed = 0;
    for g in 0..genres {
        for s in 0..songs {
            seed += 1;
            let clip = common::music_clip(seed, 0.5, 16_050);
            let reference = format!("g{g}_s{s}_ref.wav");
            write_wav(dir.join(&reference), &clip).unwrap();
            writeln!(manifest, "g{g}s{s}-ref,genre{g},song{s},reference,5,{reference},{reference}").unwrap();
            for (k, kind) in DegradationKind::ALL.into_iter().enumerate() {
                let intensity = 0.2 + 0.15 * ((g + s + k) % 5) as f64;
                let d = apply(&clip, &DegradationSpec::new(kind, intensity, seed).unwrap()).unwrap();
                let degraded = format!("g{g}_s{s}_{kind}.wav");
                write_wav(dir.join(&degraded), &d).unwrap();
                writeln!(manifest, "g{g}s{s}-{kind},genre{g},song{s},{kind},3,{reference},{degraded}").unwrap();
            }
        }
    }
    manifest
}

fn options() -> EvalOptions {
    EvalOptions {
        spectrogram: common::small_config(),
        ..EvalOptions::default()
    }
}

fn bindings(names: &[&str]) -> Vec<MetricBinding> {
    let p = NlpParams::image_default();
    let s = SsimConfig::default();
    names.iter().map(|n| MetricBinding::from_name(n, &p, &s).unwrap()).collect()
}

#[test]
fn ratings_monotone_in_distance_give_perfect_spearman() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(dir.path(), 2, 2);
    let records = parse_manifest(manifest.as_bytes(), dir.path()).unwrap();
    let metrics = bindings(&["nlpd"]);
    let first = eval::evaluate(&records, &metrics, &options()).unwrap();
    let max = first.scores.iter().map(|s| s.values[0].unwrap()).fold(0.0, f64::max);
    let rated: Vec<RatingRecord> = records
        .iter()
        .cloned()
        .map(|mut r| {
            let d = first.scores.iter().find(|s| s.clip_id == r.clip_id).unwrap().values[0].unwrap();
            r.rating = 1.0 + 4.0 * d / max;
            r
        })
        .collect();
    let report = eval::evaluate(&rated, &metrics, &options()).unwrap();
    for subset in eval::REPORT_SUBSETS {
        let row = report.row("nlpd", subset).unwrap();
        assert_eq!(row.spearman, Some(1.0), "{subset}");
    }
    assert_eq!(report.row("nlpd", "all").unwrap().n, 20);
    assert_eq!(report.row("nlpd", "noise").unwrap().n, 4);
}

#[test]
fn report_shape_order_and_subset_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(dir.path(), 2, 2);
    let mut records = parse_manifest(manifest.as_bytes(), dir.path()).unwrap();
    for (i, r) in records.iter_mut().enumerate() {
        r.rating = 1.0 + ((i * 7) % 9) as f64 / 2.0;
    }
    let metrics = bindings(&["nlpd", "mse"]);
    let report = eval::evaluate(&records, &metrics, &options()).unwrap();
    assert_eq!(report.rows.len(), 2 * 5);
    let order: Vec<(String, String)> = report.rows.iter().map(|r| (r.metric.clone(), r.degradation.clone())).collect();
    assert_eq!(order[0], ("nlpd".to_string(), "waveshape".to_string()));
    assert_eq!(order[9], ("mse".to_string(), "all".to_string()));

    // Input order does not matter.
    let mut reversed = records.clone();
    reversed.reverse();
    assert_eq!(eval::evaluate(&reversed, &metrics, &options()).unwrap(), report);

    // A subset coefficient equals the coefficient computed on that subset alone.
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .scores
        .iter()
        .filter(|s| s.degradation == "lowpass")
        .map(|s| (s.values[1].unwrap(), s.rating))
        .unzip();
    let row = report.row("mse", "lowpass").unwrap();
    assert_eq!(row.spearman.unwrap(), eval::spearman(&xs, &ys).unwrap());
    assert_eq!(row.pearson.unwrap(), eval::pearson(&xs, &ys).unwrap());
    for r in &report.rows {
        for c in [r.spearman, r.pearson].into_iter().flatten() {
            assert!((-1.0..=1.0).contains(&c));
        }
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("metric,degradation,n,spearman,pearson\nnlpd,waveshape,4,"));
    let table = report.to_table();
    assert!(table.contains("WaveShape") && table.contains("All data") && table.contains("nlpd"));
}

#[test]
fn jobs_setting_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(dir.path(), 1, 2);
    let mut records = parse_manifest(manifest.as_bytes(), dir.path()).unwrap();
    for (i, r) in records.iter_mut().enumerate() {
        r.rating = 1.0 + (i % 4) as f64;
    }
    let metrics = bindings(&["nlpd", "ssim", "msssim", "nsim", "mse"]);
    let one = eval::evaluate(&records, &metrics, &EvalOptions { jobs: Some(1), ..options() }).unwrap();
    let four = eval::evaluate(&records, &metrics, &EvalOptions { jobs: Some(4), ..options() }).unwrap();
    assert_eq!(one, four);
}

#[test]
fn missing_audio_is_excluded_until_too_many_fail() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(dir.path(), 2, 2);
    let mut records = parse_manifest(manifest.as_bytes(), dir.path()).unwrap();
    for (i, r) in records.iter_mut().enumerate() {
        r.rating = 1.0 + (i % 5) as f64;
    }
    records[3].degraded_path = dir.path().join("missing.wav");
    let report = eval::evaluate(&records, &bindings(&["mse"]), &options()).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.row("mse", "all").unwrap().n, 19);

    records[5].degraded_path = dir.path().join("missing2.wav");
    records[7].degraded_path = dir.path().join("missing3.wav");
    let err = eval::evaluate(&records, &bindings(&["mse"]), &options()).unwrap_err();
    assert!(matches!(err, Error::TooManyFailures { failed: 3, total: 20 }));
}

#[test]
fn test_split_keeps_last_song_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(dir.path(), 2, 2);
    let mut records = parse_manifest(manifest.as_bytes(), dir.path()).unwrap();
    for (i, r) in records.iter_mut().enumerate() {
        r.rating = 1.0 + (i % 5) as f64;
    }
    let opts = EvalOptions {
        split: Split::Test,
        ..options()
    };
    let report = eval::evaluate(&records, &bindings(&["mse"]), &opts).unwrap();
    assert_eq!(report.n_records, 10);
    assert!(report.scores.iter().all(|s| s.clip_id.contains("s1")));
}

#[test]
fn external_scores_join_on_clip_id() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from(HEADER);
    let mut scores = String::from("clip_id,visqol,fad\n");
    for i in 0..6 {
        writeln!(manifest, "c{i},rock,s{},noise,{},a.wav,b.wav", i % 2, 1.0 + i as f64 * 0.5).unwrap();
        writeln!(scores, "c{i},{},{}", i as f64 * 0.5, if i == 2 { String::new() } else { format!("{}", -(i as f64)) }).unwrap();
    }
    std::fs::write(dir.path().join("external_scores.csv"), scores).unwrap();
    let records = parse_manifest(manifest.as_bytes(), dir.path()).unwrap();
    let metrics = load_external_scores(dir.path().join("external_scores.csv")).unwrap();
    assert_eq!(metrics.len(), 2);
    let report = eval::evaluate(&records, &metrics, &EvalOptions::default()).unwrap();
    assert_eq!(report.row("visqol", "noise").unwrap().n, 6);
    assert_eq!(report.row("visqol", "noise").unwrap().spearman, Some(1.0));
    assert_eq!(report.row("fad", "all").unwrap().n, 5);
    assert_eq!(report.row("fad", "lowpass").unwrap().spearman, None);
}

#[test]
fn full_size_manifest_splits_into_156_rated_test_pairs() {
    let mut manifest = String::from(HEADER);
    for g in 0..13 {
        for s in 0..5 {
            for c in 0..3 {
                for tag in eval::DEGRADATION_TAGS {
                    writeln!(manifest, "g{g}-s{s}-c{c}-{tag},genre{g},song{s},{tag},3,r.wav,d.wav").unwrap();
                }
            }
        }
    }
    let records = parse_manifest(manifest.as_bytes(), Path::new("")).unwrap();
    assert_eq!(records.len(), 975);
    let (train, test) = split_train_test(&records);
    assert_eq!(test.iter().filter(|r| !r.is_reference()).count(), 156);
    assert_eq!(train.len() + test.len(), 975);
    assert!(test.iter().all(|r| r.song == "song4"));
}

#[test]
fn tied_spearman_equals_average_rank_computation() {
    // Ranks by hand: xs → [1.5, 1.5, 3, 4], ys → [2, 1, 4, 3].
    let rx = [1.5, 1.5, 3.0, 4.0];
    let ry = [2.0, 1.0, 4.0, 3.0];
    let want = eval::pearson(&rx, &ry).unwrap();
    let got = eval::spearman(&[1.0, 1.0, 2.0, 3.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
    assert_eq!(got, want);
    assert_eq!(eval::average_ranks(&[1.0, 1.0, 2.0, 3.0]), rx);
}
