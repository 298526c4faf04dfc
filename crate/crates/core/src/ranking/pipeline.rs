use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use super::diffusion::{build_diffusion_graph, diffuse, DiffusionParams};
use super::expansion::{aqe, dba, DbaWeighting};
use super::{global_search, search_descriptors, RankedList, RankingError};
use crate::descriptor::Descriptor;
use crate::tensor_io::DescriptorSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Global,
    Aqe,
    Dba,
    Dfs,
}

impl Stage {
    fn label(self) -> &'static str {
        match self {
            Stage::Global => "G",
            Stage::Aqe => "AQE",
            Stage::Dba => "DBA",
            Stage::Dfs => "DFS",
        }
    }
}

/// The eight accepted spellings, in canonical stage order.
const CANONICAL: [&[Stage]; 8] = [
    &[Stage::Global],
    &[Stage::Global, Stage::Aqe],
    &[Stage::Global, Stage::Dfs],
    &[Stage::Global, Stage::Dba],
    &[Stage::Global, Stage::Aqe, Stage::Dfs],
    &[Stage::Global, Stage::Dba, Stage::Aqe],
    &[Stage::Global, Stage::Dba, Stage::Dfs],
    &[Stage::Global, Stage::Dba, Stage::Aqe, Stage::Dfs],
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    /// AQE neighbours; `None` selects 10, or 1 when combined with DBA.
    pub aqe_n: Option<usize>,
    pub dba_n: usize,
    pub dba_weighting: DbaWeighting,
    pub diffusion: DiffusionParams,
    /// Build the diffusion graph on the original rather than the augmented database.
    pub dfs_on_original: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            aqe_n: None,
            dba_n: 20,
            dba_weighting: DbaWeighting::Uniform,
            diffusion: DiffusionParams::default(),
            dfs_on_original: false,
        }
    }
}

/// A retrieval pipeline: global search plus any of AQE, DBA and DFS.
///
/// Execution order is always DBA → G → AQE → DFS regardless of spelling.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    stages: Vec<Stage>,
    pub params: PipelineParams,
}

impl PipelineSpec {
    pub fn global() -> Self {
        PipelineSpec {
            stages: vec![Stage::Global],
            params: PipelineParams::default(),
        }
    }

    pub fn with_params(mut self, params: PipelineParams) -> Self {
        self.params = params;
        self
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn all() -> Vec<PipelineSpec> {
        CANONICAL
            .iter()
            .map(|s| PipelineSpec {
                stages: s.to_vec(),
                params: PipelineParams::default(),
            })
            .collect()
    }

    /// Effective AQE neighbour count.
    pub fn aqe_n(&self) -> usize {
        self.params
            .aqe_n
            .unwrap_or(if self.has(Stage::Dba) { 1 } else { 10 })
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.stages.iter().map(|s| s.label()).collect();
        f.write_str(&labels.join("+"))
    }
}

impl FromStr for PipelineSpec {
    type Err = RankingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| RankingError::BadSpec {
            spec: s.to_owned(),
            reason: reason.to_owned(),
        };
        let mut stages = Vec::new();
        for token in s.split('+') {
            let stage = match token.trim().to_ascii_uppercase().as_str() {
                "G" => Stage::Global,
                "AQE" => Stage::Aqe,
                "DBA" => Stage::Dba,
                "DFS" => Stage::Dfs,
                other => return Err(bad(&format!("unknown stage {other:?}"))),
            };
            stages.push(stage);
        }
        if !CANONICAL.contains(&stages.as_slice()) {
            return Err(bad(
                "expected one of G, G+AQE, G+DFS, G+DBA, G+AQE+DFS, G+DBA+AQE, G+DBA+DFS, G+DBA+AQE+DFS",
            ));
        }
        Ok(PipelineSpec {
            stages,
            params: PipelineParams::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub rankings: Vec<RankedList>,
    /// Queries whose diffusion solve stopped before reaching the tolerance.
    pub unconverged: Vec<String>,
}

/// Runs `spec` for every query against `db`. Both sets are expected to be
/// post-processed (unit-norm) already.
pub fn run_pipeline(
    spec: &PipelineSpec,
    queries: &DescriptorSet,
    db: &DescriptorSet,
) -> Result<PipelineOutput, RankingError> {
    let params = &spec.params;

    let augmented;
    let search_db = if spec.has(Stage::Dba) {
        augmented = dba(db, params.dba_n, params.dba_weighting)?;
        &augmented
    } else {
        db
    };

    let mut rankings = global_search(queries, search_db)?;
    let mut query_vecs: Vec<(String, Descriptor)> = (0..queries.len())
        .map(|i| (queries.name(i).to_owned(), queries.descriptor(i)))
        .collect();

    if spec.has(Stage::Aqe) {
        let n = spec.aqe_n();
        query_vecs = query_vecs
            .par_iter()
            .zip(rankings.par_iter())
            .map(|((name, q), ranked)| Ok((name.clone(), aqe(q, search_db, ranked, n)?)))
            .collect::<Result<_, RankingError>>()?;
        rankings = search_descriptors(&query_vecs, search_db)?;
    }

    let mut unconverged = Vec::new();
    if spec.has(Stage::Dfs) {
        let d = &params.diffusion;
        let graph_db = if params.dfs_on_original { db } else { search_db };
        let graph = build_diffusion_graph(graph_db, d.k, d.gamma, d.symmetrization)?;
        let kq = d.kq.min(graph_db.len());
        let outcomes = query_vecs
            .par_iter()
            .map(|(name, q)| diffuse(&graph, name, q, graph_db, kq, d.alpha, d.tol, d.max_iter))
            .collect::<Result<Vec<_>, _>>()?;
        rankings = Vec::with_capacity(outcomes.len());
        for out in outcomes {
            if !out.converged {
                warn!(
                    "diffusion for {} stopped after {} iterations at relative residual {:.3e}",
                    out.ranked.query(),
                    out.iterations,
                    out.relative_residual
                );
                unconverged.push(out.ranked.query().to_owned());
            }
            rankings.push(out.ranked);
        }
    }

    Ok(PipelineOutput { rankings, unconverged })
}

/// Writes `query\trank\tname\tscore` rows (1-based rank, 6-decimal score).
pub fn write_rankings_tsv<W: Write>(rankings: &[RankedList], mut out: W) -> Result<(), RankingError> {
    writeln!(out, "query\trank\tname\tscore")?;
    for r in rankings {
        for (rank, (name, score)) in r.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:.6}", r.query(), rank + 1, name, score)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_table_headers() {
        for s in [
            "G",
            "G+AQE",
            "G+DFS",
            "G+DBA",
            "G+AQE+DFS",
            "G+DBA+AQE",
            "G+DBA+DFS",
            "G+DBA+AQE+DFS",
        ] {
            let spec: PipelineSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        let spec: PipelineSpec = "g+dba+aqe".parse().unwrap();
        assert_eq!(spec.to_string(), "G+DBA+AQE");
    }

    #[test]
    fn rejects_malformed_specs() {
        for s in ["", "AQE", "G+G", "G+AQE+DBA", "G+XYZ", "G+", "DBA+G"] {
            assert!(s.parse::<PipelineSpec>().is_err(), "{s:?} accepted");
        }
    }

    #[test]
    fn aqe_defaults_depend_on_dba() {
        assert_eq!("G+AQE".parse::<PipelineSpec>().unwrap().aqe_n(), 10);
        let spec: PipelineSpec = "G+DBA+AQE".parse().unwrap();
        assert_eq!(spec.aqe_n(), 1);
        assert_eq!(spec.params.dba_n, 20);
    }

    #[test]
    fn tsv_format() {
        let r = RankedList::from_scores(
            "q",
            std::sync::Arc::new(vec!["a".into(), "b".into()]),
            &[0.25, 0.5],
            None,
        );
        let mut buf = Vec::new();
        write_rankings_tsv(&[r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "query\trank\tname\tscore\nq\t1\tb\t0.500000\nq\t2\ta\t0.250000\n"
        );
    }
}
