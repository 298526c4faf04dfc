//! Fixtures and independent reference implementations shared by the CLI
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use instret::tensor_io::write_dset_file;
use instret::DescriptorSet;
use instret_cli::args::{Cli, Command};
use instret_cli::config::RunConfig;
use instret_cli::{cmd_eval, EvalSummary};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Named rows plus ground truth for one query set.
pub struct Fixture {
    pub db_names: Vec<String>,
    pub db: Vec<Vec<f64>>,
    pub query_names: Vec<String>,
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<BTreeSet<String>>,
}

impl Fixture {
    pub fn write(&self, dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let db = dir.join("db.dset");
        let q = dir.join("queries.dset");
        let gt = dir.join("gt.json");
        write_dset_file(&DescriptorSet::from_rows(self.db_names.clone(), &self.db, vec![]).unwrap(), &db).unwrap();
        write_dset_file(
            &DescriptorSet::from_rows(self.query_names.clone(), &self.queries, vec![]).unwrap(),
            &q,
        )
        .unwrap();
        let queries: Vec<serde_json::Value> = self
            .query_names
            .iter()
            .zip(&self.positives)
            .map(|(n, p)| serde_json::json!({"name": n, "positive": p}))
            .collect();
        let doc = serde_json::json!({"database": self.db_names, "queries": queries});
        fs::write(&gt, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        (db, q, gt)
    }

    /// Rows as they look after the single-L2 pass-through and f32 storage.
    pub fn stored_unit(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let r32: Vec<f64> = r.iter().map(|&v| f64::from(v as f32)).collect();
                unit(&r32).iter().map(|&v| f64::from(v as f32)).collect()
            })
            .collect()
    }
}

pub const CLUSTERS: usize = 5;
pub const PER_CLUSTER: usize = 10;
pub const CLUSTER_DIM: usize = 32;
pub const CLUSTER_SIGMA: f64 = 0.03;

/// Five clusters of ten points around orthogonal centres, one query per
/// cluster. Construction asserts that every query is closer to each member of
/// its own cluster than to any other point by at least 3σ.
pub fn planted_clusters(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |c: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..CLUSTER_DIM)
            .map(|d| if d == c { 1.0 } else { 0.0 } + CLUSTER_SIGMA * rng.gen_range(-1.0..1.0))
            .collect();
        unit(&v)
    };
    let mut db_names = Vec::new();
    let mut db = Vec::new();
    let mut positives = Vec::new();
    for c in 0..CLUSTERS {
        let mut members = BTreeSet::new();
        for i in 0..PER_CLUSTER {
            let name = format!("c{c}_{i:02}");
            members.insert(name.clone());
            db_names.push(name);
            db.push(noisy(c));
        }
        positives.push(members);
    }
    let query_names: Vec<String> = (0..CLUSTERS).map(|c| format!("q{c}")).collect();
    let queries: Vec<Vec<f64>> = (0..CLUSTERS).map(&mut noisy).collect();

    let cluster_of = |i: usize| i / PER_CLUSTER;
    for (c, q) in queries.iter().enumerate() {
        let intra = (0..db.len())
            .filter(|&i| cluster_of(i) == c)
            .map(|i| dot(q, &db[i]))
            .fold(f64::INFINITY, f64::min);
        let inter = (0..db.len())
            .filter(|&i| cluster_of(i) != c)
            .map(|i| dot(q, &db[i]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(intra - inter >= 3.0 * CLUSTER_SIGMA, "fixture margin {intra} vs {inter}");
    }
    for i in 0..db.len() {
        for j in 0..db.len() {
            for k in 0..db.len() {
                if i != j && i != k && cluster_of(i) == cluster_of(j) && cluster_of(i) != cluster_of(k) {
                    assert!(dot(&db[i], &db[j]) - dot(&db[i], &db[k]) >= 3.0 * CLUSTER_SIGMA);
                }
            }
        }
    }
    Fixture {
        db_names,
        db,
        query_names,
        queries,
        positives,
    }
}

pub const CHAIN_LEN: usize = 25;
pub const CHAIN_STEP_DEG: f64 = 6.0;
pub const DISTRACTORS: usize = 10;

/// Points along a circular arc in the (e0, e1) plane plus a tight distractor
/// clump off the plane. The query sits just before the start of the arc; the
/// distractors are closer to it than the far half of the arc, so only
/// transitive similarity along the arc ranks every arc point first.
pub fn chain_manifold(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |base: Vec<f64>, sigma: f64| -> Vec<f64> {
        let v: Vec<f64> = base.iter().map(|b| b + sigma * rng.gen_range(-1.0..1.0)).collect();
        unit(&v)
    };
    let dir = |angles: &[(usize, f64)]| {
        let mut v = vec![0.0; CLUSTER_DIM];
        for &(axis, value) in angles {
            v[axis] = value;
        }
        v
    };
    let mut db_names = Vec::new();
    let mut db = Vec::new();
    let mut arc = BTreeSet::new();
    for j in 0..CHAIN_LEN {
        let t = (j as f64 * CHAIN_STEP_DEG).to_radians();
        let name = format!("arc{j:02}");
        arc.insert(name.clone());
        db_names.push(name);
        db.push(jitter(dir(&[(0, t.cos()), (1, t.sin())]), 0.002));
    }
    let off = 50f64.to_radians();
    for i in 0..DISTRACTORS {
        db_names.push(format!("far{i:02}"));
        db.push(jitter(dir(&[(0, off.cos()), (2, off.sin())]), 0.02));
    }
    let t = (-3f64).to_radians();
    let query = jitter(dir(&[(0, t.cos()), (1, t.sin())]), 0.002);
    Fixture {
        db_names,
        db,
        query_names: vec!["start".into()],
        queries: vec![query],
        positives: vec![arc],
    }
}

/// Area under the interpolated precision-recall staircase from (0, 1),
/// skipping junk.
pub fn staircase_ap(ranked: &[&str], positive: &BTreeSet<String>, junk: &BTreeSet<String>) -> f64 {
    let total = ranked.iter().filter(|n| positive.contains(**n)).count() as f64;
    let mut points = vec![(0.0, 1.0)];
    let (mut seen, mut hits) = (0.0, 0.0);
    for n in ranked.iter().filter(|n| !junk.contains(**n)) {
        seen += 1.0;
        if positive.contains(*n) {
            hits += 1.0;
            points.push((hits / total, hits / seen));
        }
    }
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Ranking by `(score desc, tie desc, name asc)`.
pub fn order(names: &[String], score: &[f64], tie: &[f64]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|&a, &b| {
        score[b]
            .partial_cmp(&score[a])
            .unwrap()
            .then(tie[b].partial_cmp(&tie[a]).unwrap())
            .then(names[a].cmp(&names[b]))
    });
    idx.into_iter().map(|i| names[i].clone()).collect()
}

/// Dense diffusion reference: mutual kNN graph with `max(0,s)^γ` affinities,
/// symmetric normalisation and a direct solve of `(I − αS) f = y`.
pub fn dense_diffusion(db: &[Vec<f64>], query: &[f64], k: usize, kq: usize, alpha: f64, gamma: f64) -> Vec<f64> {
    let n = db.len();
    let sim = |a: &[f64], b: &[f64]| dot(a, b);
    let knn: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| sim(&db[i], &db[b]).partial_cmp(&sim(&db[i], &db[a])).unwrap());
            others.into_iter().take(k).collect()
        })
        .collect();
    let aff = |s: f64| if s > 0.0 { s.powf(gamma) } else { 0.0 };
    let a = DMatrix::from_fn(n, n, |i, j| {
        if knn[i].contains(&j) && knn[j].contains(&i) {
            aff(sim(&db[i], &db[j]))
        } else {
            0.0
        }
    });
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        if a[(i, j)] == 0.0 {
            0.0
        } else {
            a[(i, j)] / (deg[i] * deg[j]).sqrt()
        }
    });
    let qs: Vec<f64> = db.iter().map(|r| sim(query, r)).collect();
    let mut by_sim: Vec<usize> = (0..n).collect();
    by_sim.sort_by(|&a, &b| qs[b].partial_cmp(&qs[a]).unwrap());
    let mut y = DVector::zeros(n);
    for &i in by_sim.iter().take(kq) {
        y[i] = aff(qs[i]);
    }
    let system = DMatrix::identity(n, n) - s * alpha;
    system.lu().solve(&y).unwrap().iter().copied().collect()
}

/// Parses `instret eval ...` and runs it in-process.
pub fn eval(argv: &[&str]) -> EvalSummary {
    try_eval(argv).unwrap()
}

pub fn try_eval(argv: &[&str]) -> anyhow::Result<EvalSummary> {
    let mut full = vec!["instret", "eval"];
    full.extend_from_slice(argv);
    let cli = <Cli as clap::Parser>::try_parse_from(full)?;
    let Command::Eval(args) = cli.command else { unreachable!() };
    cmd_eval(&args, &RunConfig::default())
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
