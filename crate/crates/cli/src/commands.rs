use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use instret::aggregation::{downsample, rmac, Pooling, RmacConfig};
use instret::evaluation::{evaluate, ApMethod, EvalOptions, EvalReport, PrecisionMode, Protocol};
use instret::postprocess::{
    ensemble_concat, fit_whitening, post_process, WhiteningModel, DEFAULT_EPS, DEFAULT_PCA_DIM,
};
use instret::ranking::{run_pipeline, write_rankings_tsv, DiffusionParams, PipelineParams, PipelineSpec};
use instret::tensor_io::{
    parse_generic_groundtruth, parse_oxford_groundtruth, read_dset_file, read_fmap_file, write_dset_file,
};
use instret::{DescriptorSet, GroundTruth};

use crate::args::{AggregateArgs, AggregationArgs, EnsembleArgs, EvalArgs, FitWhitenArgs};
use crate::config::{parse_pca_list, GtFormat, PcaDim, RunConfig};

fn pick<T: Clone>(flag: &Option<T>, config: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| config.clone())
}

fn required<T: Clone>(flag: &Option<T>, config: &Option<T>, name: &str) -> Result<T> {
    pick(flag, config).ok_or_else(|| anyhow!("missing {name} (flag or config key)"))
}

/// How FMAP inputs are turned into descriptors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregation {
    pub rmac: RmacConfig,
    pub downsample: Option<(usize, Pooling)>,
}

impl Aggregation {
    pub fn resolve(args: &AggregationArgs, cfg: &RunConfig) -> Result<Self> {
        let levels = pick(&args.rmac_l, &cfg.rmac_l).unwrap_or(instret::aggregation::DEFAULT_LEVELS);
        if levels == 0 {
            bail!("--rmac-L must be at least 1");
        }
        let region_norm = pick(&args.rmac_region_norm, &cfg.rmac_region_norm).is_none_or(|s| s.is_on());
        let pooling = pick(&args.downsample_mode, &cfg.downsample_mode).map_or(Pooling::Max, Pooling::from);
        let downsample = match pick(&args.downsample, &cfg.downsample) {
            Some(0) => bail!("--downsample must be positive"),
            Some(n) => Some((n, pooling)),
            None => None,
        };
        Ok(Aggregation {
            rmac: RmacConfig { levels, region_norm },
            downsample,
        })
    }

    fn provenance(&self) -> Vec<String> {
        let mut tags = Vec::new();
        if let Some((n, pooling)) = self.downsample {
            tags.push(match pooling {
                Pooling::Max => format!("downsample-{n}"),
                Pooling::Average => format!("downsample-{n}-avg"),
            });
        }
        tags.push(self.rmac.tag());
        tags
    }
}

fn fmap_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "fmap") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// R-MAC descriptors for every `.fmap` file in `dir`, named by file stem and
/// ordered by file name.
pub fn aggregate_dir(dir: &Path, agg: &Aggregation) -> Result<DescriptorSet> {
    let files = fmap_files(dir)?;
    if files.is_empty() {
        bail!("no feature maps found in {}", dir.display());
    }
    info!("aggregating {} feature maps from {}", files.len(), dir.display());
    let rows = files
        .par_iter()
        .map(|path| -> Result<(String, Vec<f64>)> {
            let mut map = read_fmap_file(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some((n, pooling)) = agg.downsample {
                map = downsample(&map, n, n, pooling).with_context(|| format!("downsampling {}", path.display()))?;
            }
            let v = rmac(&map, &agg.rmac).with_context(|| format!("aggregating {}", path.display()))?;
            Ok((map.name().to_owned(), v.into_inner()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (names, rows): (Vec<String>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    info!("aggregated {} descriptors", names.len());
    Ok(DescriptorSet::from_rows(names, &rows, agg.provenance())?)
}

/// A DSET file, or a directory of FMAP files aggregated on the fly.
pub fn load_descriptors(path: &Path, agg: &Aggregation) -> Result<DescriptorSet> {
    if path.is_dir() {
        aggregate_dir(path, agg)
    } else {
        read_dset_file(path).with_context(|| format!("reading {}", path.display()))
    }
}

pub fn load_groundtruth(path: &Path, format: Option<GtFormat>, strip_prefix: bool) -> Result<GroundTruth> {
    let format = format.unwrap_or(if path.is_dir() { GtFormat::Oxford } else { GtFormat::Json });
    let gt = match format {
        GtFormat::Oxford => parse_oxford_groundtruth(path, strip_prefix)?,
        GtFormat::Json => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_generic_groundtruth(&text, false)?
        }
    };
    Ok(gt)
}

fn fit_on(train: &DescriptorSet, dim: usize, eps: f64) -> Result<WhiteningModel> {
    let unit = post_process(train, None)?;
    Ok(fit_whitening(&unit, dim, eps)?)
}

pub fn cmd_aggregate(args: &AggregateArgs, cfg: &RunConfig) -> Result<()> {
    let dir = required(&args.features, &cfg.features, "--features")?;
    let out = required(&args.out, &cfg.out, "--out")?;
    let agg = Aggregation::resolve(&args.aggregation, cfg)?;
    let set = aggregate_dir(&dir, &agg).context("aggregate")?;
    write_dset_file(&set, &out).with_context(|| format!("writing {}", out.display()))?;
    info!("wrote {} descriptors of dim {} to {}", set.len(), set.dim(), out.display());
    Ok(())
}

fn single_dim(pca: Option<String>, default: PcaDim) -> Result<PcaDim> {
    let Some(s) = pca else { return Ok(default) };
    match parse_pca_list(&s)?.as_slice() {
        [d] => Ok(*d),
        _ => bail!("--pca takes a single value here, got {s:?}"),
    }
}

pub fn cmd_fit_whiten(args: &FitWhitenArgs, cfg: &RunConfig) -> Result<()> {
    let features = required(&args.features, &cfg.features, "--features")?;
    let out = required(&args.out, &cfg.out, "--out")?;
    let agg = Aggregation::resolve(&args.aggregation, cfg)?;
    let PcaDim::Dims(dim) = single_dim(pick(&args.pca, &cfg.pca), PcaDim::Dims(DEFAULT_PCA_DIM))? else {
        bail!("fit-whiten needs a numeric --pca");
    };
    let eps = pick(&args.eps, &cfg.eps).unwrap_or(DEFAULT_EPS);
    let train = load_descriptors(&features, &agg).context("loading training descriptors")?;
    let model = fit_on(&train, dim, eps).context("fitting whitening")?;
    model.write_file(&out).with_context(|| format!("writing {}", out.display()))?;
    info!("fitted {}→{} whitening on {} descriptors", model.input_dim(), dim, train.len());
    Ok(())
}

fn concat_normalised(a: &DescriptorSet, b: &DescriptorSet) -> Result<DescriptorSet> {
    Ok(ensemble_concat(&post_process(a, None)?, &post_process(b, None)?)?)
}

pub fn cmd_ensemble(args: &EnsembleArgs, cfg: &RunConfig) -> Result<()> {
    let out = required(&args.out, &cfg.out, "--out")?;
    let dim = single_dim(pick(&args.pca, &cfg.pca), PcaDim::Dims(DEFAULT_PCA_DIM))?;
    let eps = pick(&args.eps, &cfg.eps).unwrap_or(DEFAULT_EPS);
    let agg = Aggregation::default();

    let a = load_descriptors(&args.a, &agg).context("loading first model")?;
    let b = load_descriptors(&args.b, &agg).context("loading second model")?;
    let joined = concat_normalised(&a, &b).context("ensemble")?;
    info!("concatenated {}+{} → {} dims over {} items", a.dim(), b.dim(), joined.dim(), joined.len());

    let model = match dim {
        PcaDim::Dims(d) => Some(fit_on(&joined, d, eps).context("fitting whitening")?),
        PcaDim::True => None,
    };
    let db = post_process(&joined, model.as_ref()).context("whitening")?;
    write_dset_file(&db, &out).with_context(|| format!("writing {}", out.display()))?;

    if let (Some(qa), Some(qb), Some(qout)) = (&args.queries_a, &args.queries_b, &args.queries_out) {
        let qa = load_descriptors(qa, &agg).context("loading first model's queries")?;
        let qb = load_descriptors(qb, &agg).context("loading second model's queries")?;
        let q = post_process(&concat_normalised(&qa, &qb).context("query ensemble")?, model.as_ref())?;
        write_dset_file(&q, qout).with_context(|| format!("writing {}", qout.display()))?;
    }
    if let (Some(path), Some(model)) = (&args.whiten_out, &model) {
        model.write_file(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn parse_protocols(s: Option<&str>, gt: &GroundTruth) -> Result<Vec<Protocol>> {
    let Some(s) = s else {
        return Ok(if gt.is_revisited() {
            Protocol::REVISITED.to_vec()
        } else {
            vec![Protocol::Classic]
        });
    };
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim) {
        let add: Vec<Protocol> = if tok.eq_ignore_ascii_case("revisited") {
            Protocol::REVISITED.to_vec()
        } else {
            vec![tok.parse()?]
        };
        for p in add {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn parse_precision(s: &str) -> Result<PrecisionMode> {
    match s.to_ascii_lowercase().as_str() {
        "junk-removed" => Ok(PrecisionMode::JunkRemoved),
        "raw" => Ok(PrecisionMode::Raw),
        _ => bail!("unknown precision mode {s:?}: expected junk-removed or raw"),
    }
}

fn pipeline_params(args: &EvalArgs, cfg: &RunConfig) -> PipelineParams {
    let base = PipelineParams::default();
    let d = DiffusionParams::default();
    PipelineParams {
        aqe_n: pick(&args.aqe_n, &cfg.aqe_n),
        dba_n: pick(&args.dba_n, &cfg.dba_n).unwrap_or(base.dba_n),
        dba_weighting: pick(&args.dba_weighting, &cfg.dba_weighting).map_or(base.dba_weighting, Into::into),
        diffusion: DiffusionParams {
            k: pick(&args.dfs_k, &cfg.dfs_k).unwrap_or(d.k),
            kq: pick(&args.dfs_kq, &cfg.dfs_kq).unwrap_or(d.kq),
            alpha: pick(&args.dfs_alpha, &cfg.dfs_alpha).unwrap_or(d.alpha),
            gamma: pick(&args.dfs_gamma, &cfg.dfs_gamma).unwrap_or(d.gamma),
            tol: pick(&args.dfs_tol, &cfg.dfs_tol).unwrap_or(d.tol),
            max_iter: pick(&args.dfs_max_iter, &cfg.dfs_max_iter).unwrap_or(d.max_iter),
            symmetrization: pick(&args.dfs_knn, &cfg.dfs_knn).map_or(d.symmetrization, Into::into),
        },
        dfs_on_original: args.dfs_on_original || cfg.dfs_on_original.unwrap_or(false),
    }
}

/// `base` with `parts` spliced in before the extension: `out.json` becomes
/// `out.pca-64.easy.json`.
pub fn derived_path(base: &Path, parts: &[String]) -> PathBuf {
    if parts.is_empty() {
        return base.to_owned();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut name = format!("{stem}.{}", parts.join("."));
    if let Some(ext) = base.extension() {
        name.push('.');
        name.push_str(&ext.to_string_lossy());
    }
    base.with_file_name(name)
}

fn pipeline_slug(spec: &PipelineSpec) -> String {
    spec.to_string().to_ascii_lowercase().replace('+', "-")
}

enum Whitening {
    Fit(usize),
    None,
    Model(PathBuf),
}

impl Whitening {
    fn label(&self) -> String {
        match self {
            Whitening::Fit(d) => d.to_string(),
            Whitening::None => "true".into(),
            Whitening::Model(_) => "model".into(),
        }
    }
}

/// One scored cell of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalCell {
    pub pca: String,
    pub pipeline: String,
    pub report: EvalReport,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub dataset: String,
    pub cells: Vec<EvalCell>,
}

pub fn cmd_eval(args: &EvalArgs, cfg: &RunConfig) -> Result<EvalSummary> {
    let features = required(&args.features, &cfg.features, "--features")?;
    let query_path = required(&args.queries, &cfg.queries, "--queries")?;
    let gt_path = required(&args.gt, &cfg.gt, "--gt")?;
    let out = required(&args.out, &cfg.out, "--out")?;
    let rankings_out = pick(&args.rankings, &cfg.rankings);
    let dataset = pick(&args.dataset, &cfg.dataset).unwrap_or_else(|| {
        features
            .file_stem()
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    let agg = Aggregation::resolve(&args.aggregation, cfg)?;
    let strip_prefix = args.strip_prefix || cfg.strip_prefix.unwrap_or(false);
    let eps = pick(&args.eps, &cfg.eps).unwrap_or(DEFAULT_EPS);
    let options = EvalOptions {
        ap: pick(&args.ap, &cfg.ap)
            .map(|s| s.parse::<ApMethod>())
            .transpose()?
            .unwrap_or_default(),
        precision: pick(&args.precision, &cfg.precision)
            .map(|s| parse_precision(&s))
            .transpose()?
            .unwrap_or_default(),
    };
    let params = pipeline_params(args, cfg);
    let specs = pick(&args.pipeline, &cfg.pipeline)
        .unwrap_or_else(|| "G".into())
        .split(',')
        .map(|s| Ok(s.trim().parse::<PipelineSpec>()?.with_params(params.clone())))
        .collect::<Result<Vec<_>>>()?;

    let whitening: Vec<Whitening> = match (pick(&args.whiten_model, &cfg.whiten_model), pick(&args.pca, &cfg.pca)) {
        (Some(_), Some(_)) => bail!("--pca and --whiten-model cannot be combined"),
        (Some(path), None) => vec![Whitening::Model(path)],
        (None, pca) => parse_pca_list(pca.as_deref().unwrap_or("512"))?
            .into_iter()
            .map(|d| match d {
                PcaDim::Dims(d) => Whitening::Fit(d),
                PcaDim::True => Whitening::None,
            })
            .collect(),
    };

    let gt = load_groundtruth(&gt_path, pick(&args.gt_format, &cfg.gt_format), strip_prefix)
        .context("loading ground truth")?;
    let protocols = parse_protocols(pick(&args.protocol, &cfg.protocol).as_deref(), &gt)?;
    let db = load_descriptors(&features, &agg).context("loading database descriptors")?;
    let queries = load_descriptors(&query_path, &agg).context("loading query descriptors")?;
    if db.is_empty() {
        bail!("database {} is empty", features.display());
    }
    if queries.dim() != db.dim() {
        bail!("query dimension {} does not match database dimension {}", queries.dim(), db.dim());
    }
    let have: BTreeSet<&str> = queries.names().iter().map(String::as_str).collect();
    let absent: Vec<&str> = gt
        .queries
        .iter()
        .map(|q| q.name.as_str())
        .filter(|n| !have.contains(n))
        .collect();
    if !absent.is_empty() {
        warn!("{} ground-truth queries have no descriptor: {}", absent.len(), absent.join(", "));
    }

    let train = pick(&args.whiten_train, &cfg.whiten_train)
        .map(|p| load_descriptors(&p, &agg).context("loading whitening training set"))
        .transpose()?;

    let mut cells = Vec::new();
    for w in &whitening {
        let model = match w {
            Whitening::Fit(d) => Some(
                fit_on(train.as_ref().unwrap_or(&db), *d, eps).with_context(|| format!("fitting whitening to {d}"))?,
            ),
            Whitening::None => None,
            Whitening::Model(path) => {
                Some(WhiteningModel::read_file(path).with_context(|| format!("reading {}", path.display()))?)
            }
        };
        let db_p = post_process(&db, model.as_ref()).context("post-processing database")?;
        let q_p = post_process(&queries, model.as_ref()).context("post-processing queries")?;

        for spec in &specs {
            let output = run_pipeline(spec, &q_p, &db_p).with_context(|| format!("ranking with {spec}"))?;
            if !output.unconverged.is_empty() {
                warn!(
                    "{spec}: diffusion did not converge for {} of {} queries",
                    output.unconverged.len(),
                    output.rankings.len()
                );
            }
            let mut parts = Vec::new();
            if whitening.len() > 1 {
                parts.push(format!("pca-{}", w.label()));
            }
            if specs.len() > 1 {
                parts.push(pipeline_slug(spec));
            }
            if let Some(path) = &rankings_out {
                let path = derived_path(path, &parts);
                let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_rankings_tsv(&output.rankings, BufWriter::new(file))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            for &protocol in &protocols {
                let report = evaluate(&output.rankings, &gt, protocol, options)
                    .with_context(|| format!("evaluating {spec} under {protocol}"))?;
                let mut parts = parts.clone();
                if protocols.len() > 1 {
                    parts.push(protocol.to_string());
                }
                let path = derived_path(&out, &parts);
                fs::write(&path, report.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
                cells.push(EvalCell {
                    pca: w.label(),
                    pipeline: spec.to_string(),
                    report,
                    path,
                });
            }
        }
    }
    Ok(EvalSummary { dataset, cells })
}

/// Fixed-width table with one row per (pca, pipeline) and an
/// mAP / mP@5 / mP@10 block per protocol.
pub fn format_table(summary: &EvalSummary) -> String {
    let mut protocols: Vec<Protocol> = Vec::new();
    let mut rows: Vec<(String, String)> = Vec::new();
    for c in &summary.cells {
        if !protocols.contains(&c.report.protocol) {
            protocols.push(c.report.protocol);
        }
        let key = (c.pca.clone(), c.pipeline.clone());
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    let mut s = format!("{:<6} {:<14}", "", summary.dataset);
    for p in &protocols {
        s += &format!(" | {:^22}", p.to_string());
    }
    s += &format!("\n{:<6} {:<14}", "pca", "pipeline");
    for _ in &protocols {
        s += &format!(" | {:>6} {:>7} {:>7}", "mAP", "mP@5", "mP@10");
    }
    s.push('\n');
    for (pca, pipeline) in &rows {
        s += &format!("{pca:<6} {pipeline:<14}");
        for p in &protocols {
            let cell = summary
                .cells
                .iter()
                .find(|c| &c.pca == pca && &c.pipeline == pipeline && c.report.protocol == *p);
            match cell {
                Some(c) => s += &format!(" | {:>6.2} {:>7.2} {:>7.2}", c.report.map, c.report.mp5, c.report.mp10),
                None => s += &format!(" | {:>22}", "-"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_paths() {
        let base = Path::new("/tmp/out.json");
        assert_eq!(derived_path(base, &[]), base);
        assert_eq!(
            derived_path(base, &["pca-64".into(), "easy".into()]),
            Path::new("/tmp/out.pca-64.easy.json")
        );
        assert_eq!(derived_path(Path::new("r"), &["g-dfs".into()]), Path::new("r.g-dfs"));
    }

    #[test]
    fn protocol_lists() {
        let gt = GroundTruth {
            queries: vec![],
            database: vec![],
        };
        assert_eq!(parse_protocols(None, &gt).unwrap(), vec![Protocol::Classic]);
        assert_eq!(
            parse_protocols(Some("classic,revisited,easy"), &gt).unwrap(),
            vec![Protocol::Classic, Protocol::Easy, Protocol::Medium, Protocol::Hard]
        );
        assert!(parse_protocols(Some("medium-ish"), &gt).is_err());
    }

    #[test]
    fn slug() {
        assert_eq!(pipeline_slug(&"g+dba+aqe".parse().unwrap()), "g-dba-aqe");
    }
}
