//! Descriptor post-processing: L2 normalisation, PCA-whitening and
//! concatenation ensembles.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::descriptor::{norm, Descriptor};
use crate::tensor_io::{ByteCursor, DescriptorSet, FormatError, FORMAT_VERSION};

pub const DEFAULT_PCA_DIM: usize = 512;
pub const DEFAULT_EPS: f64 = 1e-10;

const WHTN_MAGIC: &[u8; 4] = b"WHTN";

#[derive(Debug, thiserror::Error)]
pub enum WhiteningError {
    #[error("requested {requested} output dimensions from {available}-dimensional input")]
    TooManyDims { requested: usize, available: usize },
    #[error("output dimension must be at least 1")]
    ZeroDims,
    #[error("need at least 2 training descriptors, got {0}")]
    TooFewSamples(usize),
    #[error("eps must be finite and non-negative, got {0}")]
    BadEps(f64),
    #[error("non-finite training data")]
    NonFinite,
    #[error("dimension mismatch: model expects {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("corrupt whitening model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("{count} names differ between the two sets, first: {examples:?}")]
    NameMismatch { count: usize, examples: Vec<String> },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// `v / ‖v‖₂`, or `v` unchanged when it is the zero vector.
pub fn l2_normalize(v: &[f64]) -> Descriptor {
    let n = norm(v);
    if n > 0.0 {
        Descriptor::new(v.iter().map(|x| x / n).collect())
    } else {
        Descriptor::new(v.to_vec())
    }
}

/// PCA-whitening to `output_dim` components.
///
/// `apply(x) = diag(1/√(λᵢ + eps)) · P · (x − mean)` with the rows of `P` the
/// leading eigenvectors of the training covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f64>,
    /// `output_dim × input_dim`, row-major.
    projection: Vec<f64>,
    eigenvalues: Vec<f64>,
    eps: f64,
}

impl WhiteningModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.projection[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Per-component scale `1/√(λ+eps)`; components with zero variance and
    /// `eps = 0` map to zero.
    fn scale(&self, i: usize) -> f64 {
        let v = self.eigenvalues[i] + self.eps;
        if v > 0.0 {
            1.0 / v.sqrt()
        } else {
            0.0
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Descriptor, WhiteningError> {
        if v.len() != self.input_dim {
            return Err(WhiteningError::DimMismatch {
                expected: self.input_dim,
                actual: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let out = (0..self.output_dim)
            .map(|i| {
                let p = self.component(i);
                let proj: f64 = p.iter().zip(&centered).map(|(a, b)| a * b).sum();
                proj * self.scale(i)
            })
            .collect();
        Ok(Descriptor::new(out))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), WhiteningError> {
        let as_u32 = |v: usize| u32::try_from(v).map_err(|_| FormatError::SizeOverflow);
        let mut buf = Vec::with_capacity(24 + 8 * (self.mean.len() + self.eigenvalues.len() + self.projection.len()));
        buf.extend_from_slice(WHTN_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&as_u32(self.input_dim)?.to_le_bytes());
        buf.extend_from_slice(&as_u32(self.output_dim)?.to_le_bytes());
        buf.extend_from_slice(&self.eps.to_le_bytes());
        for v in self.mean.iter().chain(&self.eigenvalues).chain(&self.projection) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(FormatError::from)?;
        out.flush().map_err(FormatError::from)?;
        Ok(())
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self, WhiteningError> {
        let mut buf = Vec::new();
        source.read_to_end(&mut buf).map_err(FormatError::from)?;
        let mut cur = ByteCursor::new(&buf);
        cur.magic(WHTN_MAGIC)?;
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let input_dim = cur.u32()? as usize;
        let output_dim = cur.u32()? as usize;
        let eps = cur.f64()?;
        if output_dim > input_dim {
            return Err(WhiteningError::Corrupt(format!(
                "output dim {output_dim} exceeds input dim {input_dim}"
            )));
        }
        let mean = cur.f64_vec(input_dim)?;
        let eigenvalues = cur.f64_vec(output_dim)?;
        let projection = cur.f64_vec(
            output_dim
                .checked_mul(input_dim)
                .ok_or(FormatError::SizeOverflow)?,
        )?;
        cur.finish()?;
        Ok(WhiteningModel {
            input_dim,
            output_dim,
            mean,
            projection,
            eigenvalues,
            eps,
        })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), WhiteningError> {
        let file = File::create(path).map_err(FormatError::from)?;
        self.write(BufWriter::new(file))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, WhiteningError> {
        Self::read(File::open(path).map_err(FormatError::from)?)
    }
}

/// Fits PCA-whitening on `train` by eigendecomposition of the `1/n`
/// covariance, keeping the `output_dim` largest eigenpairs. Each eigenvector
/// is signed so that its largest-magnitude entry is positive.
pub fn fit_whitening(train: &DescriptorSet, output_dim: usize, eps: f64) -> Result<WhiteningModel, WhiteningError> {
    let n = train.len();
    let dim = train.dim();
    if output_dim == 0 {
        return Err(WhiteningError::ZeroDims);
    }
    if n < 2 {
        return Err(WhiteningError::TooFewSamples(n));
    }
    if output_dim > dim {
        return Err(WhiteningError::TooManyDims {
            requested: output_dim,
            available: dim,
        });
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(WhiteningError::BadEps(eps));
    }
    if train.data().iter().any(|v| !v.is_finite()) {
        return Err(WhiteningError::NonFinite);
    }

    let mut mean = vec![0.0f64; dim];
    for row in train.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += f64::from(x);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centered = DMatrix::from_fn(n, dim, |i, j| f64::from(train.row(i)[j]) - mean[j]);
    let mut cov = centered.tr_mul(&centered);
    cov /= n as f64;
    // Symmetrise away round-off so the solver sees an exactly symmetric matrix.
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut projection = Vec::with_capacity(output_dim * dim);
    let mut eigenvalues = Vec::with_capacity(output_dim);
    for &k in order.iter().take(output_dim) {
        let col = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for j in 1..dim {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        projection.extend(col.iter().map(|v| v * sign));
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }

    Ok(WhiteningModel {
        input_dim: dim,
        output_dim,
        mean,
        projection,
        eigenvalues,
        eps,
    })
}

/// L2 → whiten → L2 on every row. Without a model this is the single-L2
/// pass-through that keeps the original dimension.
pub fn post_process(set: &DescriptorSet, model: Option<&WhiteningModel>) -> Result<DescriptorSet, WhiteningError> {
    let mut provenance = set.provenance().to_vec();
    provenance.push("l2".into());
    let Some(model) = model else {
        return Ok(set.map_rows(provenance, |_, row| l2_normalize(&Descriptor::from_f32(row)).into_inner())?);
    };
    if set.dim() != model.input_dim() {
        return Err(WhiteningError::DimMismatch {
            expected: model.input_dim(),
            actual: set.dim(),
        });
    }
    provenance.push(format!("whiten-{}", model.output_dim()));
    provenance.push("l2".into());

    let mut rows = Vec::with_capacity(set.len());
    for row in set.rows() {
        let unit = l2_normalize(&Descriptor::from_f32(row));
        let white = model.apply(&unit)?;
        rows.push(l2_normalize(&white).into_inner());
    }
    if rows.is_empty() {
        return Ok(DescriptorSet::new(vec![], model.output_dim(), vec![], provenance)?);
    }
    Ok(DescriptorSet::from_rows(set.names().to_vec(), &rows, provenance)?)
}

/// Per-name concatenation `[a | b]`, rows in `a`'s order.
pub fn ensemble_concat(a: &DescriptorSet, b: &DescriptorSet) -> Result<DescriptorSet, EnsembleError> {
    let mut mismatched: Vec<String> = a
        .names()
        .iter()
        .filter(|n| b.index_of(n).is_none())
        .chain(b.names().iter().filter(|n| a.index_of(n).is_none()))
        .cloned()
        .collect();
    if !mismatched.is_empty() {
        mismatched.sort();
        let count = mismatched.len();
        mismatched.truncate(5);
        return Err(EnsembleError::NameMismatch {
            count,
            examples: mismatched,
        });
    }

    let dim = a.dim() + b.dim();
    let mut data = Vec::with_capacity(a.len() * dim);
    for (i, name) in a.names().iter().enumerate() {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(b.index_of(name).expect("checked above")));
    }
    let provenance = vec![format!(
        "concat({}|{})",
        a.provenance().join(","),
        b.provenance().join(",")
    )];
    Ok(DescriptorSet::new(a.names().to_vec(), dim, data, provenance)?)
}
