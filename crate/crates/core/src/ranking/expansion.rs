use rayon::prelude::*;

use super::{RankedList, RankingError};
use crate::descriptor::{dot_f32, Descriptor};
use crate::postprocess::l2_normalize;
use crate::tensor_io::DescriptorSet;

/// Average query expansion: the normalised mean of the query and its top-`n`
/// database results.
pub fn aqe(query: &[f64], db: &DescriptorSet, ranked: &RankedList, n: usize) -> Result<Descriptor, RankingError> {
    if n > db.len() {
        return Err(RankingError::OutOfRange {
            what: "AQE neighbours",
            value: n,
            size: db.len(),
        });
    }
    if db.dim() != query.len() && !db.is_empty() {
        return Err(RankingError::DimMismatch {
            queries: query.len(),
            database: db.dim(),
        });
    }
    let mut acc = query.to_vec();
    for idx in ranked.top_indices(n) {
        for (a, &x) in acc.iter_mut().zip(db.row(idx)) {
            *a += f64::from(x);
        }
    }
    Ok(l2_normalize(&acc))
}

/// `k` nearest database neighbours of row `i` by dot product, excluding `i`
/// itself; descending similarity, ties by ascending name.
pub(crate) fn nearest_neighbors(db: &DescriptorSet, i: usize, k: usize) -> Vec<(usize, f64)> {
    let own = db.row(i);
    let mut cand: Vec<(usize, f64)> = (0..db.len())
        .filter(|&j| j != i)
        .map(|j| (j, dot_f32(own, db.row(j))))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| db.name(a.0).cmp(db.name(b.0)));
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DbaWeighting {
    /// Plain mean of the item and its neighbours.
    #[default]
    Uniform,
    /// Weight `(n + 1 - r) / (n + 1)` for the neighbour at rank `r` (the item itself has rank 0).
    Linear,
}

/// Database-side augmentation: every row becomes the normalised (weighted)
/// mean of itself and its `n` nearest neighbours, computed from the original
/// rows without cascading.
pub fn dba(db: &DescriptorSet, n: usize, weighting: DbaWeighting) -> Result<DescriptorSet, RankingError> {
    if n > 0 && n >= db.len() {
        return Err(RankingError::OutOfRange {
            what: "DBA neighbours",
            value: n,
            size: db.len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..db.len())
        .into_par_iter()
        .map(|i| {
            let mut acc: Vec<f64> = db.row(i).iter().map(|&v| f64::from(v)).collect();
            for (rank, (j, _)) in nearest_neighbors(db, i, n).into_iter().enumerate() {
                let w = match weighting {
                    DbaWeighting::Uniform => 1.0,
                    DbaWeighting::Linear => (n - rank) as f64 / (n + 1) as f64,
                };
                for (a, &x) in acc.iter_mut().zip(db.row(j)) {
                    *a += w * f64::from(x);
                }
            }
            l2_normalize(&acc).into_inner()
        })
        .collect();

    let mut provenance = db.provenance().to_vec();
    provenance.push(match weighting {
        DbaWeighting::Uniform => format!("dba-{n}"),
        DbaWeighting::Linear => format!("dba-{n}-linear"),
    });
    if rows.is_empty() {
        return Ok(DescriptorSet::new(vec![], db.dim(), vec![], provenance)?);
    }
    Ok(DescriptorSet::from_rows(db.names().to_vec(), &rows, provenance)?)
}
