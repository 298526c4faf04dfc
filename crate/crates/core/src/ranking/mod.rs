//! Retrieval: global search, query expansion, database augmentation and
//! diffusion, composed by [`pipeline::run_pipeline`].
//!
//! Every ranking orders by descending score and breaks ties by ascending
//! database name, so results are fully deterministic.

mod diffusion;
mod expansion;
mod pipeline;

pub use diffusion::{
    build_diffusion_graph, diffuse, solve_diffusion, CgOutcome, CsrMatrix, DiffusionGraph, DiffusionOutcome,
    DiffusionParams, Symmetrization,
};
pub use expansion::{aqe, dba, DbaWeighting};
pub use pipeline::{run_pipeline, write_rankings_tsv, PipelineOutput, PipelineParams, PipelineSpec, Stage};

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;

use crate::descriptor::Descriptor;
use crate::postprocess::WhiteningError;
use crate::tensor_io::{DescriptorSet, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum RankingError {
    #[error("dimension mismatch: queries have {queries}, database has {database}")]
    DimMismatch { queries: usize, database: usize },
    #[error("{what} = {value} is out of range for a database of {size}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        size: usize,
    },
    #[error("alpha must lie in [0, 1), got {0}")]
    BadAlpha(f64),
    #[error("invalid pipeline {spec:?}: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Whitening(#[from] WhiteningError),
    #[error("writing rankings: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub index: usize,
    pub score: f64,
}

/// Full ranking of the database for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    query: String,
    names: Arc<Vec<String>>,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Ranks every database item by `scores` (descending), then by
    /// `secondary` (descending) when given, then by name.
    pub fn from_scores(
        query: impl Into<String>,
        names: Arc<Vec<String>>,
        scores: &[f64],
        secondary: Option<&[f64]>,
    ) -> Self {
        debug_assert_eq!(names.len(), scores.len());
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| match secondary {
                    Some(s) => s[b].total_cmp(&s[a]),
                    None => Ordering::Equal,
                })
                .then_with(|| names[a].cmp(&names[b]))
        });
        let entries = order
            .into_iter()
            .map(|index| RankedEntry {
                index,
                score: scores[index],
            })
            .collect();
        RankedList {
            query: query.into(),
            names,
            entries,
        }
    }

    /// Builds a list from names in ranked order; for evaluation fixtures.
    pub fn from_ordered_names<S: AsRef<str>>(query: impl Into<String>, ordered: &[S]) -> Self {
        let names: Vec<String> = ordered.iter().map(|s| s.as_ref().to_owned()).collect();
        let n = names.len();
        let entries = (0..n)
            .map(|index| RankedEntry {
                index,
                score: (n - index) as f64,
            })
            .collect();
        RankedList {
            query: query.into(),
            names: Arc::new(names),
            entries,
        }
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn name_at(&self, rank: usize) -> &str {
        &self.names[self.entries[rank].index]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, f64)> + '_ {
        self.entries.iter().map(|e| (self.names[e.index].as_str(), e.score))
    }

    pub fn ordered_names(&self) -> Vec<&str> {
        self.iter().map(|(n, _)| n).collect()
    }

    pub fn top_indices(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().take(n).map(|e| e.index)
    }
}

/// Dot product of every database row with `query`.
pub fn similarities(query: &[f64], db: &DescriptorSet) -> Vec<f64> {
    db.rows()
        .map(|row| query.iter().zip(row).map(|(&q, &x)| q * f64::from(x)).sum())
        .collect()
}

pub(crate) fn shared_names(db: &DescriptorSet) -> Arc<Vec<String>> {
    Arc::new(db.names().to_vec())
}

pub(crate) fn search_one(query_name: &str, query: &[f64], db: &DescriptorSet, names: &Arc<Vec<String>>) -> RankedList {
    RankedList::from_scores(query_name, Arc::clone(names), &similarities(query, db), None)
}

fn check_dims(queries: usize, db: &DescriptorSet) -> Result<(), RankingError> {
    if !db.is_empty() && queries != db.dim() {
        return Err(RankingError::DimMismatch {
            queries,
            database: db.dim(),
        });
    }
    Ok(())
}

/// Scores every query against every database row by dot product (cosine for
/// unit-norm inputs) and returns one full ranking per query.
pub fn global_search(queries: &DescriptorSet, db: &DescriptorSet) -> Result<Vec<RankedList>, RankingError> {
    if !queries.is_empty() {
        check_dims(queries.dim(), db)?;
    }
    let names = shared_names(db);
    Ok((0..queries.len())
        .into_par_iter()
        .map(|i| search_one(queries.name(i), &queries.descriptor(i), db, &names))
        .collect())
}

/// Global search for in-memory `f64` query vectors.
pub fn search_descriptors(
    queries: &[(String, Descriptor)],
    db: &DescriptorSet,
) -> Result<Vec<RankedList>, RankingError> {
    for (_, q) in queries {
        check_dims(q.dim(), db)?;
    }
    let names = shared_names(db);
    Ok(queries
        .par_iter()
        .map(|(name, q)| search_one(name, q, db, &names))
        .collect())
}
