//! Run configuration shared by every subcommand. A JSON config file supplies
//! defaults; command-line flags override it field by field.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Deserializer};

use instret::aggregation::Pooling;
use instret::ranking::{DbaWeighting, Symmetrization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtFormat {
    Oxford,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Max,
    Avg,
}

impl From<PoolingMode> for Pooling {
    fn from(p: PoolingMode) -> Self {
        match p {
            PoolingMode::Max => Pooling::Max,
            PoolingMode::Avg => Pooling::Average,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Linear,
}

impl From<Weighting> for DbaWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Uniform => DbaWeighting::Uniform,
            Weighting::Linear => DbaWeighting::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Knn {
    Mutual,
    Union,
}

impl From<Knn> for Symmetrization {
    fn from(k: Knn) -> Self {
        match k {
            Knn::Mutual => Symmetrization::Mutual,
            Knn::Union => Symmetrization::Union,
        }
    }
}

/// One entry of a `--pca` sweep: a target dimension, or no whitening at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaDim {
    Dims(usize),
    True,
}

impl fmt::Display for PcaDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PcaDim::Dims(d) => write!(f, "{d}"),
            PcaDim::True => f.write_str("true"),
        }
    }
}

/// Parses `512`, `true` or a comma list such as `32,64,true`.
pub fn parse_pca_list(s: &str) -> Result<Vec<PcaDim>> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim) {
        let dim = if tok.eq_ignore_ascii_case("true") {
            PcaDim::True
        } else {
            match tok.parse::<usize>() {
                Ok(0) | Err(_) => bail!("invalid --pca entry {tok:?}: expected a positive integer or \"true\""),
                Ok(d) => PcaDim::Dims(d),
            }
        };
        if out.contains(&dim) {
            bail!("--pca lists {dim} twice");
        }
        out.push(dim);
    }
    Ok(out)
}

fn pca_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u64),
        Str(String),
        List(Vec<Raw>),
    }
    fn flatten(r: Raw) -> String {
        match r {
            Raw::Num(n) => n.to_string(),
            Raw::Str(s) => s,
            Raw::List(l) => l.into_iter().map(flatten).collect::<Vec<_>>().join(","),
        }
    }
    Ok(Option::<Raw>::deserialize(d)?.map(flatten))
}

/// Every setting a run can take. Keys are the long flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub features: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub gt_format: Option<GtFormat>,
    pub strip_prefix: Option<bool>,
    #[serde(rename = "rmac-L")]
    pub rmac_l: Option<usize>,
    pub rmac_region_norm: Option<Switch>,
    pub downsample: Option<usize>,
    pub downsample_mode: Option<PoolingMode>,
    #[serde(deserialize_with = "pca_from_json")]
    pub pca: Option<String>,
    pub eps: Option<f64>,
    pub whiten_train: Option<PathBuf>,
    pub whiten_model: Option<PathBuf>,
    pub pipeline: Option<String>,
    pub aqe_n: Option<usize>,
    pub dba_n: Option<usize>,
    pub dba_weighting: Option<Weighting>,
    pub dfs_k: Option<usize>,
    pub dfs_kq: Option<usize>,
    pub dfs_alpha: Option<f64>,
    pub dfs_gamma: Option<f64>,
    pub dfs_tol: Option<f64>,
    pub dfs_max_iter: Option<usize>,
    pub dfs_knn: Option<Knn>,
    pub dfs_on_original: Option<bool>,
    pub protocol: Option<String>,
    pub ap: Option<String>,
    pub precision: Option<String>,
    pub out: Option<PathBuf>,
    pub rankings: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.features,
            &mut cfg.queries,
            &mut cfg.gt,
            &mut cfg.whiten_train,
            &mut cfg.whiten_model,
            &mut cfg.out,
            &mut cfg.rankings,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
