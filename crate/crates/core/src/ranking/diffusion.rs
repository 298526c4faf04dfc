//! Diffusion re-ranking on a kNN affinity graph.
//!
//! The database is turned into a sparse symmetric operator
//! `S = D^{-1/2} A D^{-1/2}` whose affinities are `max(0, sim)^γ` between
//! (mutual) nearest neighbours. A query seeds `y` on its `kq` nearest items and
//! the ranking score is the solution `f` of `(I − αS) f = y`, found by
//! conjugate gradient. `I − αS` is symmetric positive definite for `α < 1`
//! because the spectrum of `S` lies in `[-1, 1]`.

use std::sync::Arc;

use rayon::prelude::*;

use super::expansion::nearest_neighbors;
use super::{shared_names, similarities, RankedList, RankingError};
use crate::descriptor::{dot, norm};
use crate::tensor_io::DescriptorSet;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed
    /// and entries within a row are sorted by column.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let triplets = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, &v)| (i, j, v)))
            .collect();
        Self::from_triplets(n, triplets)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Symmetrization {
    /// Keep an edge only when each endpoint is among the other's k nearest.
    #[default]
    Mutual,
    /// Keep an edge when either endpoint lists the other.
    Union,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionGraph {
    names: Arc<Vec<String>>,
    k: usize,
    gamma: f64,
    operator: CsrMatrix,
}

impl DiffusionGraph {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The normalised operator `S`.
    pub fn operator(&self) -> &CsrMatrix {
        &self.operator
    }

    /// Wraps an explicit operator, e.g. a hand-built test graph.
    pub fn from_operator(names: Vec<String>, operator: CsrMatrix, gamma: f64) -> Self {
        assert_eq!(names.len(), operator.size());
        DiffusionGraph {
            names: Arc::new(names),
            k: 0,
            gamma,
            operator,
        }
    }
}

fn affinity(sim: f64, gamma: f64) -> f64 {
    if sim > 0.0 {
        sim.powf(gamma)
    } else {
        0.0
    }
}

pub fn build_diffusion_graph(
    db: &DescriptorSet,
    k: usize,
    gamma: f64,
    symmetrization: Symmetrization,
) -> Result<DiffusionGraph, RankingError> {
    let n = db.len();
    if k == 0 || k >= n {
        return Err(RankingError::OutOfRange {
            what: "diffusion k",
            value: k,
            size: n,
        });
    }
    let knn: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(|i| nearest_neighbors(db, i, k)).collect();
    let lists: Vec<Vec<usize>> = knn
        .iter()
        .map(|l| {
            let mut v: Vec<usize> = l.iter().map(|p| p.0).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let listed = |i: usize, j: usize| lists[i].binary_search(&j).is_ok();

    let mut triplets = Vec::new();
    for (i, neighbours) in knn.iter().enumerate() {
        for &(j, sim) in neighbours {
            let keep = match symmetrization {
                Symmetrization::Mutual => listed(j, i),
                Symmetrization::Union => true,
            };
            let a = affinity(sim, gamma);
            if !keep || a == 0.0 {
                continue;
            }
            triplets.push((i, j, a));
            // Union edges seen only from i's side need their mirror entry;
            // mutual edges are emitted from both sides already.
            if symmetrization == Symmetrization::Union && !listed(j, i) {
                triplets.push((j, i, a));
            }
        }
    }
    let adjacency = CsrMatrix::from_triplets(n, triplets);

    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).map(|(_, v)| v).sum()).collect();
    let normalised = (0..n)
        .flat_map(|i| {
            let degree = &degree;
            adjacency
                .row(i)
                .map(move |(j, a)| (i, j, a / (degree[i] * degree[j]).sqrt()))
        })
        .collect();

    Ok(DiffusionGraph {
        names: shared_names(db),
        k,
        gamma,
        operator: CsrMatrix::from_triplets(n, normalised),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Achieved `‖(I − αS) f − y‖₂ / ‖y‖₂`.
    pub relative_residual: f64,
    pub converged: bool,
}

fn apply_system(s: &CsrMatrix, alpha: f64, x: &[f64], out: &mut [f64]) {
    s.mul_vec(x, out);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = xi - alpha * *o;
    }
}

/// Solves `(I − αS) f = y` by conjugate gradient, stopping when the true
/// residual satisfies `‖(I − αS) f − y‖ ≤ tol · ‖y‖` or after `max_iter`
/// iterations.
pub fn solve_diffusion(
    graph: &DiffusionGraph,
    y: &[f64],
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome, RankingError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(RankingError::BadAlpha(alpha));
    }
    let s = &graph.operator;
    let n = s.size();
    assert_eq!(y.len(), n);

    let y_norm = norm(y);
    let mut x = vec![0.0; n];
    if y_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let target = tol * y_norm;
    let mut ax = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    // Restart from the explicit residual whenever the recurrence claims
    // convergence, so the reported flag always refers to the true residual.
    loop {
        apply_system(s, alpha, &x, &mut ax);
        let mut r: Vec<f64> = y.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut rs = dot(&r, &r);
        if rs.sqrt() <= target || iterations >= max_iter {
            return Ok(CgOutcome {
                solution: x,
                iterations,
                relative_residual: rs.sqrt() / y_norm,
                converged: rs.sqrt() <= target,
            });
        }
        let mut p = r.clone();
        let mut stalled = false;
        while iterations < max_iter {
            apply_system(s, alpha, &p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                stalled = true;
                break;
            }
            let step = rs / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            iterations += 1;
            let rs_new = dot(&r, &r);
            if rs_new.sqrt() <= target {
                break;
            }
            let beta = rs_new / rs;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_new;
        }
        if stalled {
            apply_system(s, alpha, &x, &mut ax);
            let res = norm(&y.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
            return Ok(CgOutcome {
                solution: x,
                iterations,
                relative_residual: res / y_norm,
                converged: res <= target,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionParams {
    pub k: usize,
    pub kq: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub symmetrization: Symmetrization,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            k: 50,
            kq: 10,
            alpha: 0.99,
            gamma: 3.0,
            tol: 1e-6,
            max_iter: 100,
            symmetrization: Symmetrization::Mutual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOutcome {
    pub ranked: RankedList,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Diffuses one query over `graph` (built on `db`) and ranks by the solution.
///
/// Items with equal diffusion score are ordered by their direct similarity to
/// the query, then by name; a query with no positive affinity to its `kq`
/// nearest items falls back to plain similarity ranking.
#[allow(clippy::too_many_arguments)]
pub fn diffuse(
    graph: &DiffusionGraph,
    query_name: &str,
    query: &[f64],
    db: &DescriptorSet,
    kq: usize,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DiffusionOutcome, RankingError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(RankingError::BadAlpha(alpha));
    }
    if db.len() != graph.names.len() {
        return Err(RankingError::OutOfRange {
            what: "graph size",
            value: graph.names.len(),
            size: db.len(),
        });
    }
    if !db.is_empty() && query.len() != db.dim() {
        return Err(RankingError::DimMismatch {
            queries: query.len(),
            database: db.dim(),
        });
    }
    let sims = similarities(query, db);
    let seeds = RankedList::from_scores(query_name, Arc::clone(&graph.names), &sims, None);
    let mut y = vec![0.0; db.len()];
    for idx in seeds.top_indices(kq) {
        y[idx] = affinity(sims[idx], graph.gamma);
    }

    if y.iter().all(|&v| v == 0.0) {
        return Ok(DiffusionOutcome {
            ranked: seeds,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }

    let cg = solve_diffusion(graph, &y, alpha, tol, max_iter)?;
    let ranked = RankedList::from_scores(query_name, Arc::clone(&graph.names), &cg.solution, Some(&sims));
    Ok(DiffusionOutcome {
        ranked,
        iterations: cg.iterations,
        relative_residual: cg.relative_residual,
        converged: cg.converged,
    })
}
