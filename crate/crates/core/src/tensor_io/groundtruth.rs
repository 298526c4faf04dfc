//! Ground-truth ingestion.
//!
//! The generic JSON document is the canonical form:
//!
//! ```json
//! {
//!   "database": ["a", "b", "c"],
//!   "queries": [
//!     {"name": "q1", "bbox": [10, 20, 200, 180], "positive": ["a"], "junk": ["c"]},
//!     {"name": "q2", "easy": ["a"], "hard": ["b"], "junk": ["c"]}
//!   ]
//! }
//! ```
//!
//! A query carries either `positive` (classic and positives-only protocols) or
//! `easy`/`hard` (revisited protocol), never both. The Oxford/Paris directory
//! layout is converted into the same structure.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GroundTruthError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("query {query:?} is missing companion file {file}")]
    MissingCompanion { query: String, file: PathBuf },
    #[error("malformed query line in {file}: {reason}")]
    MalformedQueryLine { file: PathBuf, reason: String },
    #[error("malformed bounding box for {query:?}: {reason}")]
    MalformedBbox { query: String, reason: String },
    #[error("invalid ground-truth JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("query {query:?} references {name:?}, which is not in the database")]
    UnknownName { query: String, name: String },
    #[error("no queries found in {0}")]
    NoQueries(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BoundingBox {
    fn validate(&self, query: &str) -> Result<(), GroundTruthError> {
        let b = self;
        if ![b.x1, b.y1, b.x2, b.y2].iter().all(|v| v.is_finite()) {
            return Err(GroundTruthError::MalformedBbox {
                query: query.to_owned(),
                reason: "non-finite coordinate".into(),
            });
        }
        if b.x1 >= b.x2 || b.y1 >= b.y2 {
            return Err(GroundTruthError::MalformedBbox {
                query: query.to_owned(),
                reason: format!("need x1<x2 and y1<y2, got ({}, {}, {}, {})", b.x1, b.y1, b.x2, b.y2),
            });
        }
        Ok(())
    }
}

/// Relevance judgements for one query.
///
/// For revisited entries `easy` and `hard` are set and `positive` holds their
/// union, so the classic protocol on a revisited file scores the medium setting.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroundTruth {
    pub name: String,
    pub bbox: Option<BoundingBox>,
    pub positive: BTreeSet<String>,
    pub junk: BTreeSet<String>,
    pub easy: Option<BTreeSet<String>>,
    pub hard: Option<BTreeSet<String>>,
}

impl QueryGroundTruth {
    pub fn is_revisited(&self) -> bool {
        self.easy.is_some() || self.hard.is_some()
    }

    fn validate(&self) -> Result<(), GroundTruthError> {
        if let Some(b) = &self.bbox {
            b.validate(&self.name)?;
        }
        if let Some(x) = self.positive.intersection(&self.junk).next() {
            return Err(GroundTruthError::Schema(format!(
                "query {:?}: {x:?} is both positive and junk",
                self.name
            )));
        }
        if let (Some(easy), Some(hard)) = (&self.easy, &self.hard) {
            if let Some(x) = easy.intersection(hard).next() {
                return Err(GroundTruthError::Schema(format!(
                    "query {:?}: {x:?} is both easy and hard",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub queries: Vec<QueryGroundTruth>,
    pub database: Vec<String>,
}

impl GroundTruth {
    pub fn query(&self, name: &str) -> Option<&QueryGroundTruth> {
        self.queries.iter().find(|q| q.name == name)
    }

    pub fn is_revisited(&self) -> bool {
        !self.queries.is_empty() && self.queries.iter().all(QueryGroundTruth::is_revisited)
    }

    /// Checks every structural invariant; parsers call this before returning.
    pub fn validate(&self) -> Result<(), GroundTruthError> {
        let mut seen = BTreeSet::new();
        for q in &self.queries {
            if !seen.insert(q.name.as_str()) {
                return Err(GroundTruthError::Schema(format!("duplicate query {:?}", q.name)));
            }
            q.validate()?;
        }
        Ok(())
    }

    /// Serialises to the canonical JSON document.
    pub fn to_json(&self) -> String {
        let doc = RawGroundTruth {
            database: self.database.clone(),
            queries: self
                .queries
                .iter()
                .map(|q| RawQuery {
                    name: q.name.clone(),
                    bbox: q.bbox,
                    positive: (!q.is_revisited()).then(|| q.positive.iter().cloned().collect()),
                    easy: q.easy.as_ref().map(|s| s.iter().cloned().collect()),
                    hard: q.hard.as_ref().map(|s| s.iter().cloned().collect()),
                    junk: Some(q.junk.iter().cloned().collect()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("ground truth serialises")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroundTruth {
    database: Vec<String>,
    queries: Vec<RawQuery>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuery {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positive: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    easy: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hard: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    junk: Option<Vec<String>>,
}

/// Parses the canonical JSON ground truth. With `strict`, every referenced
/// image must appear in `database`.
pub fn parse_generic_groundtruth(json: &str, strict: bool) -> Result<GroundTruth, GroundTruthError> {
    let raw: RawGroundTruth = serde_json::from_str(json)?;
    let database_set: BTreeSet<&str> = raw.database.iter().map(String::as_str).collect();
    if database_set.len() != raw.database.len() {
        return Err(GroundTruthError::Schema("duplicate names in database".into()));
    }

    let mut queries = Vec::with_capacity(raw.queries.len());
    for q in raw.queries {
        if q.positive.is_some() && (q.easy.is_some() || q.hard.is_some()) {
            return Err(GroundTruthError::Schema(format!(
                "query {:?} has both positive and easy/hard labels",
                q.name
            )));
        }
        let to_set = |v: Option<Vec<String>>| v.map(|v| v.into_iter().collect::<BTreeSet<_>>());
        let junk = to_set(q.junk).unwrap_or_default();
        let revisited = q.easy.is_some() || q.hard.is_some();
        let (positive, easy, hard) = if revisited {
            let easy = to_set(q.easy).unwrap_or_default();
            let hard = to_set(q.hard).unwrap_or_default();
            let positive = easy.union(&hard).cloned().collect();
            (positive, Some(easy), Some(hard))
        } else {
            (to_set(q.positive).unwrap_or_default(), None, None)
        };

        if strict {
            let referenced = positive.iter().chain(junk.iter());
            for name in referenced {
                if !database_set.contains(name.as_str()) {
                    return Err(GroundTruthError::UnknownName {
                        query: q.name.clone(),
                        name: name.clone(),
                    });
                }
            }
        }

        queries.push(QueryGroundTruth {
            name: q.name,
            bbox: q.bbox,
            positive,
            junk,
            easy,
            hard,
        });
    }

    let gt = GroundTruth {
        queries,
        database: raw.database,
    };
    gt.validate()?;
    Ok(gt)
}

fn read_to_string(path: &Path) -> Result<String, GroundTruthError> {
    fs::read_to_string(path).map_err(|source| GroundTruthError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_name_list(path: &Path, query: &str) -> Result<BTreeSet<String>, GroundTruthError> {
    if !path.is_file() {
        return Err(GroundTruthError::MissingCompanion {
            query: query.to_owned(),
            file: path.to_owned(),
        });
    }
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Drops everything up to and including the first underscore (`oxc1_x_y` → `x_y`).
fn strip_query_prefix(name: &str) -> &str {
    name.split_once('_').map_or(name, |(_, rest)| rest)
}

fn parse_query_line(
    file: &Path,
    query: &str,
    text: &str,
    strip_prefix: bool,
) -> Result<(String, BoundingBox), GroundTruthError> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| GroundTruthError::MalformedQueryLine {
            file: file.to_owned(),
            reason: "empty file".into(),
        })?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 5 {
        return Err(GroundTruthError::MalformedQueryLine {
            file: file.to_owned(),
            reason: format!("expected `name x1 y1 x2 y2`, got {} fields", tokens.len()),
        });
    }
    let mut coords = [0.0f64; 4];
    for (slot, tok) in coords.iter_mut().zip(&tokens[1..]) {
        *slot = tok.parse().map_err(|_| GroundTruthError::MalformedBbox {
            query: query.to_owned(),
            reason: format!("{tok:?} is not a number"),
        })?;
    }
    let name = if strip_prefix {
        strip_query_prefix(tokens[0])
    } else {
        tokens[0]
    };
    let bbox = BoundingBox::from(coords);
    bbox.validate(query)?;
    Ok((name.to_owned(), bbox))
}

/// Converts an Oxford/Paris ground-truth directory (`q_query.txt`,
/// `q_good.txt`, `q_ok.txt`, `q_junk.txt` per query) into a [`GroundTruth`].
///
/// Positives are `good ∪ ok`. The database is the sorted union of every image
/// named in the files; evaluation ranks against the descriptor set instead.
pub fn parse_oxford_groundtruth(dir: impl AsRef<Path>, strip_prefix: bool) -> Result<GroundTruth, GroundTruthError> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|source| GroundTruthError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut query_ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| GroundTruthError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let file_name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = file_name.strip_suffix("_query.txt") {
            query_ids.push(id.to_owned());
        }
    }
    if query_ids.is_empty() {
        return Err(GroundTruthError::NoQueries(dir.to_owned()));
    }
    query_ids.sort();

    let mut database = BTreeSet::new();
    let mut queries = Vec::with_capacity(query_ids.len());
    for id in &query_ids {
        let query_file = dir.join(format!("{id}_query.txt"));
        let (name, bbox) = parse_query_line(&query_file, id, &read_to_string(&query_file)?, strip_prefix)?;
        let good = read_name_list(&dir.join(format!("{id}_good.txt")), id)?;
        let ok = read_name_list(&dir.join(format!("{id}_ok.txt")), id)?;
        let junk = read_name_list(&dir.join(format!("{id}_junk.txt")), id)?;
        let positive: BTreeSet<String> = good.union(&ok).cloned().collect();

        database.extend(positive.iter().cloned());
        database.extend(junk.iter().cloned());
        database.insert(name.clone());
        queries.push(QueryGroundTruth {
            name,
            bbox: Some(bbox),
            positive,
            junk,
            easy: None,
            hard: None,
        });
    }

    let gt = GroundTruth {
        queries,
        database: database.into_iter().collect(),
    };
    gt.validate()?;
    Ok(gt)
}
