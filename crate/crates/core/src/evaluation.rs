//! Retrieval metrics: trapezoidal average precision, precision@k, and the
//! classic and revisited (easy / medium / hard) benchmark protocols.
//!
//! Junk images are removed from a ranking before any metric is computed, so
//! they never count as negatives.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ranking::RankedList;
use crate::tensor_io::{GroundTruth, QueryGroundTruth};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty positive set")]
    EmptyPositive,
    #[error("precision cut-off must be at least 1")]
    ZeroK,
    #[error("ranking for {0:?} has no ground-truth entry")]
    QueryMissing(String),
    #[error("protocol {0} needs easy/hard labels, but query {1:?} has only classic labels")]
    ClassicOnly(Protocol, String),
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Classic,
    Easy,
    Medium,
    Hard,
}

impl Protocol {
    pub const REVISITED: [Protocol; 3] = [Protocol::Easy, Protocol::Medium, Protocol::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Classic => "classic",
            Protocol::Easy => "easy",
            Protocol::Medium => "medium",
            Protocol::Hard => "hard",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "classic" => Ok(Protocol::Classic),
            "easy" => Ok(Protocol::Easy),
            "medium" => Ok(Protocol::Medium),
            "hard" => Ok(Protocol::Hard),
            _ => Err(EvalError::Unknown {
                what: "protocol",
                value: s.to_owned(),
            }),
        }
    }
}

/// How average precision integrates the precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMethod {
    /// Trapezoid between the precision at the previous positive hit (1.0
    /// before the first) and the precision at the current hit.
    #[default]
    Trapezoid,
    /// Trapezoid between the precision one rank above each hit and at the
    /// hit, as in the reference Oxford `compute_ap` tool.
    Benchmark,
    /// Non-interpolated AP: mean precision at the positive hits.
    Plain,
}

impl FromStr for ApMethod {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trapezoid" => Ok(ApMethod::Trapezoid),
            "benchmark" => Ok(ApMethod::Benchmark),
            "plain" => Ok(ApMethod::Plain),
            _ => Err(EvalError::Unknown {
                what: "AP method",
                value: s.to_owned(),
            }),
        }
    }
}

/// Whether precision@k counts the first k items after or before junk removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrecisionMode {
    #[default]
    JunkRemoved,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub ap: ApMethod,
    pub precision: PrecisionMode,
}

/// Average precision of an ordered name list.
///
/// The recall step is `1 / |positive ∩ ranked|`; positives missing from the
/// ranking contribute nothing.
pub fn average_precision_of<'a, I>(
    ranked: I,
    positive: &BTreeSet<String>,
    junk: &BTreeSet<String>,
    method: ApMethod,
) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = &'a str>,
{
    if positive.is_empty() {
        return Err(EvalError::EmptyPositive);
    }
    let kept: Vec<bool> = ranked
        .into_iter()
        .filter(|n| !junk.contains(*n))
        .map(|n| positive.contains(n))
        .collect();
    let present = kept.iter().filter(|&&p| p).count();
    if present == 0 {
        return Ok(0.0);
    }
    let step = 1.0 / present as f64;

    let mut ap = 0.0;
    let mut hits = 0usize;
    let mut prev_hit_precision = 1.0;
    for (rank, _) in kept.iter().enumerate().filter(|(_, &p)| p) {
        hits += 1;
        let precision = hits as f64 / (rank + 1) as f64;
        ap += match method {
            ApMethod::Trapezoid => (prev_hit_precision + precision) / 2.0 * step,
            ApMethod::Benchmark => {
                let above = if rank == 0 {
                    1.0
                } else {
                    (hits - 1) as f64 / rank as f64
                };
                (above + precision) / 2.0 * step
            }
            ApMethod::Plain => precision * step,
        };
        prev_hit_precision = precision;
    }
    Ok(ap)
}

/// Trapezoidal AP of a ranking after junk removal.
pub fn average_precision(
    ranked: &RankedList,
    positive: &BTreeSet<String>,
    junk: &BTreeSet<String>,
) -> Result<f64, EvalError> {
    average_precision_of(ranked.iter().map(|(n, _)| n), positive, junk, ApMethod::Trapezoid)
}

/// Fraction of the first `k` items that are positive; the denominator is
/// always `k`.
pub fn precision_at_k_of<'a, I>(
    ranked: I,
    positive: &BTreeSet<String>,
    junk: &BTreeSet<String>,
    k: usize,
    mode: PrecisionMode,
) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = &'a str>,
{
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let hits = match mode {
        PrecisionMode::JunkRemoved => ranked
            .into_iter()
            .filter(|n| !junk.contains(*n))
            .take(k)
            .filter(|n| positive.contains(*n))
            .count(),
        PrecisionMode::Raw => ranked.into_iter().take(k).filter(|n| positive.contains(*n)).count(),
    };
    Ok(hits as f64 / k as f64)
}

pub fn precision_at_k(
    ranked: &RankedList,
    positive: &BTreeSet<String>,
    junk: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    precision_at_k_of(ranked.iter().map(|(n, _)| n), positive, junk, k, PrecisionMode::JunkRemoved)
}

/// Positive and junk sets for one query under a protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySetup {
    pub name: String,
    pub positive: BTreeSet<String>,
    pub junk: BTreeSet<String>,
}

fn setup_for(q: &QueryGroundTruth, protocol: Protocol) -> Result<QuerySetup, EvalError> {
    let (positive, junk) = match protocol {
        Protocol::Classic => (q.positive.clone(), q.junk.clone()),
        _ => {
            let (Some(easy), Some(hard)) = (&q.easy, &q.hard) else {
                return Err(EvalError::ClassicOnly(protocol, q.name.clone()));
            };
            match protocol {
                Protocol::Easy => (easy.clone(), q.junk.union(hard).cloned().collect()),
                Protocol::Medium => (easy.union(hard).cloned().collect(), q.junk.clone()),
                Protocol::Hard => (hard.clone(), q.junk.union(easy).cloned().collect()),
                Protocol::Classic => unreachable!(),
            }
        }
    };
    Ok(QuerySetup {
        name: q.name.clone(),
        positive,
        junk,
    })
}

/// Relabels revisited ground truth for one difficulty setting. Queries left
/// without positives are returned separately.
pub fn revisited_setup(gt: &GroundTruth, label: Protocol) -> Result<(Vec<QuerySetup>, Vec<String>), EvalError> {
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for q in &gt.queries {
        let setup = setup_for(q, label)?;
        if setup.positive.is_empty() {
            excluded.push(setup.name);
        } else {
            included.push(setup);
        }
    }
    Ok((included, excluded))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Mean average precision, in percent.
    pub map: f64,
    pub mp5: f64,
    pub mp10: f64,
    pub n_queries: usize,
    pub excluded: Vec<String>,
    /// Per-query AP, in percent.
    pub per_query: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

struct QueryScores {
    name: String,
    ap: f64,
    p5: f64,
    p10: f64,
}

/// Scores one ranking per query against `gt` under `protocol`.
///
/// Queries without positives under the protocol are listed in `excluded` and
/// left out of every mean.
pub fn evaluate(
    rankings: &[RankedList],
    gt: &GroundTruth,
    protocol: Protocol,
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let by_name: HashMap<&str, &QueryGroundTruth> = gt.queries.iter().map(|q| (q.name.as_str(), q)).collect();

    let setups = rankings
        .iter()
        .map(|r| {
            let q = by_name
                .get(r.query())
                .ok_or_else(|| EvalError::QueryMissing(r.query().to_owned()))?;
            setup_for(q, protocol)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scored: Vec<Option<QueryScores>> = rankings
        .par_iter()
        .zip(setups.par_iter())
        .map(|(r, s)| {
            if s.positive.is_empty() {
                return Ok(None);
            }
            let names = || r.iter().map(|(n, _)| n);
            let present: HashSet<&str> = names().collect();
            let missing = s.positive.iter().filter(|p| !present.contains(p.as_str())).count();
            if missing > 0 {
                warn!(
                    "query {}: {missing} of {} positives are not in the database",
                    s.name,
                    s.positive.len()
                );
            }
            Ok(Some(QueryScores {
                name: s.name.clone(),
                ap: average_precision_of(names(), &s.positive, &s.junk, options.ap)?,
                p5: precision_at_k_of(names(), &s.positive, &s.junk, 5, options.precision)?,
                p10: precision_at_k_of(names(), &s.positive, &s.junk, 10, options.precision)?,
            }))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut excluded = Vec::new();
    let mut per_query = BTreeMap::new();
    let (mut sum_ap, mut sum_p5, mut sum_p10) = (0.0, 0.0, 0.0);
    let mut count = 0usize;
    for (setup, scores) in setups.iter().zip(scored) {
        match scores {
            None => excluded.push(setup.name.clone()),
            Some(s) => {
                sum_ap += s.ap;
                sum_p5 += s.p5;
                sum_p10 += s.p10;
                count += 1;
                per_query.insert(s.name, 100.0 * s.ap);
            }
        }
    }
    let mean = |sum: f64| if count == 0 { 0.0 } else { 100.0 * sum / count as f64 };
    Ok(EvalReport {
        protocol,
        map: mean(sum_ap),
        mp5: mean(sum_p5),
        mp10: mean(sum_p10),
        n_queries: count,
        excluded,
        per_query,
    })
}
