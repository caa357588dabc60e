//! Rating manifests and the train/test split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Degradation tag of an undegraded reference row.
pub const REFERENCE_TAG: &str = "reference";

/// Every tag accepted in the `degradation` column.
pub const DEGRADATION_TAGS: [&str; 5] = ["waveshape", "lowpass", "limiter", "noise", REFERENCE_TAG];

pub const MANIFEST_COLUMNS: [&str; 7] = [
    "clip_id",
    "genre",
    "song",
    "degradation",
    "rating",
    "reference_path",
    "degraded_path",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub clip_id: String,
    pub genre: String,
    pub song: String,
    pub degradation: String,
    /// Median listener rating on the 1–5 scale.
    pub rating: f64,
    pub reference_path: PathBuf,
    pub degraded_path: PathBuf,
}

impl RatingRecord {
    pub fn is_reference(&self) -> bool {
        self.degradation == REFERENCE_TAG
    }
}

/// Reads a manifest; relative audio paths resolve against its directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(file, base)
}

/// Parses manifest CSV from a reader. Row numbers in errors are file line
/// numbers (the header is line 1).
pub fn parse_manifest(reader: impl Read, base_dir: &Path) -> Result<Vec<RatingRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 7];
    for (slot, name) in index.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Dataset {
            row: 1,
            message: format!("missing column {name:?}"),
        })?;
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for result in rdr.records() {
        let rec = result?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<&str> {
            let v = rec.get(index[i]).unwrap_or("");
            if v.is_empty() {
                return Err(Error::Dataset {
                    row,
                    message: format!("empty {}", MANIFEST_COLUMNS[i]),
                });
            }
            Ok(v)
        };
        let clip_id = field(0)?.to_string();
        let degradation = field(3)?.to_string();
        if !DEGRADATION_TAGS.contains(&degradation.as_str()) {
            return Err(Error::Dataset {
                row,
                message: format!("unknown degradation {degradation:?}"),
            });
        }
        let raw_rating = field(4)?;
        let rating: f64 = raw_rating.parse().map_err(|_| Error::Dataset {
            row,
            message: format!("unparseable rating {raw_rating:?}"),
        })?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(Error::Dataset {
                row,
                message: format!("rating {raw_rating} outside [1, 5]"),
            });
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        if !seen.insert(clip_id.clone()) {
            return Err(Error::DuplicateClip { row, clip_id });
        }
        records.push(RatingRecord {
            clip_id,
            genre: field(1)?.to_string(),
            song: field(2)?.to_string(),
            degradation,
            rating,
            reference_path: resolve(field(5)?),
            degraded_path: resolve(field(6)?),
        });
    }
    Ok(records)
}

/// Per genre, the lexicographically last song goes to test, the rest to
/// train. Genres with a single song stay in train. Input order is kept.
pub fn split_train_test(records: &[RatingRecord]) -> (Vec<RatingRecord>, Vec<RatingRecord>) {
    let mut songs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        songs.entry(&r.genre).or_default().insert(&r.song);
    }
    let mut held_out: BTreeMap<&str, &str> = BTreeMap::new();
    for (genre, s) in &songs {
        if s.len() < 2 {
            log::warn!("genre {genre:?} has a single song; all its clips stay in train");
            continue;
        }
        held_out.insert(genre, s.iter().next_back().expect("non-empty"));
    }
    records
        .iter()
        .cloned()
        .partition(|r| held_out.get(r.genre.as_str()) != Some(&r.song.as_str()))
}
